//! Small dense tensor algebra for symmetric 2nd- and 4th-order tensors.
//!
//! Fourth-order tensors with minor symmetries are stored as 6x6 matrices of
//! plain tensor components in Voigt order (11, 22, 33, 23, 13, 12) — no
//! engineering factors baked into the storage. Contractions that need the
//! doubled off-diagonal weights go through the Mandel representation, where
//! the 4th-order algebra (products, inverses, eigenvalues) reduces to plain
//! matrix algebra.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Index pairs of the Voigt slots, order (11, 22, 33, 23, 13, 12).
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Multiplicity of each Voigt slot in full contractions.
pub const VOIGT_WEIGHT: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Voigt slot of the (i, j) component.
pub fn voigt_index(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        (0, 1) | (1, 0) => 5,
        _ => unreachable!("indices out of range"),
    }
}

/// Symmetric 3x3 tensor as a Voigt 6-vector of tensor components.
pub fn sym_to_voigt(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(1, 2)], m[(0, 2)], m[(0, 1)])
}

pub fn voigt_to_sym(v: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(v[0], v[5], v[4], v[5], v[1], v[3], v[4], v[3], v[2])
}

/// Mandel 6-vector of a symmetric tensor (off-diagonal scaled by sqrt 2).
pub fn sym_to_mandel(m: &Matrix3<f64>) -> Vector6<f64> {
    let mut v = sym_to_voigt(m);
    for k in 3..6 {
        v[k] *= SQRT2;
    }
    v
}

pub fn mandel_to_sym(v: &Vector6<f64>) -> Matrix3<f64> {
    let mut w = *v;
    for k in 3..6 {
        w[k] /= SQRT2;
    }
    voigt_to_sym(&w)
}

/// Fourth-order tensor with minor symmetries, Voigt-stored tensor components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voigt6(pub Matrix6<f64>);

impl Voigt6 {
    pub fn zeros() -> Self {
        Voigt6(Matrix6::zeros())
    }

    /// Symmetric 4th-order identity: I e = sym(e).
    pub fn identity() -> Self {
        let mut m = Matrix6::zeros();
        for k in 0..3 {
            m[(k, k)] = 1.0;
            m[(k + 3, k + 3)] = 0.5;
        }
        Voigt6(m)
    }

    /// Isotropic elasticity tensor from Young's modulus and Poisson ratio.
    pub fn isotropic(young: f64, poisson: f64) -> Self {
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = lambda;
            }
            m[(i, i)] += 2.0 * mu;
            m[(i + 3, i + 3)] = mu;
        }
        Voigt6(m)
    }

    pub fn from_full(a: &[[[[f64; 3]; 3]; 3]; 3]) -> Self {
        let mut m = Matrix6::zeros();
        for (vi, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (vj, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                m[(vi, vj)] = a[i][j][k][l];
            }
        }
        Voigt6(m)
    }

    pub fn to_full(&self) -> [[[[f64; 3]; 3]; 3]; 3] {
        let mut a = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        a[i][j][k][l] = self.0[(voigt_index(i, j), voigt_index(k, l))];
                    }
                }
            }
        }
        a
    }

    /// A e, contraction with a symmetric 2nd-order tensor.
    pub fn apply(&self, e: &Matrix3<f64>) -> Matrix3<f64> {
        let ev = sym_to_voigt(e);
        let mut sv = Vector6::zeros();
        for i in 0..6 {
            let mut s = 0.0;
            for j in 0..6 {
                s += self.0[(i, j)] * VOIGT_WEIGHT[j] * ev[j];
            }
            sv[i] = s;
        }
        voigt_to_sym(&sv)
    }

    /// e1 : A e2.
    pub fn bilinear(&self, e1: &Matrix3<f64>, e2: &Matrix3<f64>) -> f64 {
        let s = self.apply(e2);
        (e1.transpose() * s).trace()
    }

    /// e : A e.
    pub fn quad_form(&self, e: &Matrix3<f64>) -> f64 {
        self.bilinear(e, e)
    }

    /// A :: T for a 4th-order T given in the same Voigt storage.
    pub fn full_contract(&self, t: &Matrix6<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                s += VOIGT_WEIGHT[i] * VOIGT_WEIGHT[j] * self.0[(i, j)] * t[(i, j)];
            }
        }
        s
    }

    pub fn to_mandel(&self) -> Matrix6<f64> {
        let mut m = self.0;
        for i in 0..6 {
            for j in 0..6 {
                let s = if i >= 3 { SQRT2 } else { 1.0 } * if j >= 3 { SQRT2 } else { 1.0 };
                m[(i, j)] *= s;
            }
        }
        m
    }

    pub fn from_mandel(m: &Matrix6<f64>) -> Self {
        let mut a = *m;
        for i in 0..6 {
            for j in 0..6 {
                let s = if i >= 3 { SQRT2 } else { 1.0 } * if j >= 3 { SQRT2 } else { 1.0 };
                a[(i, j)] /= s;
            }
        }
        Voigt6(a)
    }

    /// Fourth-order inverse: A^-1 A = I_sym.
    pub fn inverse(&self) -> Result<Voigt6> {
        let m = self.to_mandel();
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular 4th-order tensor".into()))?;
        Ok(Voigt6::from_mandel(&inv))
    }

    /// Smallest eigenvalue on symmetric 2nd-order tensors.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_mandel();
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Relative asymmetry of the Voigt matrix (major symmetry check).
    pub fn asymmetry(&self) -> f64 {
        let d = self.0 - self.0.transpose();
        let n = self.0.norm();
        if n == 0.0 {
            0.0
        } else {
            d.norm() / n
        }
    }

    pub fn symmetrize(&self) -> Voigt6 {
        Voigt6((self.0 + self.0.transpose()) * 0.5)
    }

    /// Rotation as a 4th-order tensor: A'_ijkl = R_ia R_jb R_kc R_ld A_abcd.
    pub fn rotate(&self, r: &Matrix3<f64>) -> Voigt6 {
        let a = self.to_full();
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        // contract one index at a time to keep this O(3^5)
        let mut t1 = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut s = 0.0;
                        for a_ in 0..3 {
                            s += r[(i, a_)] * a[a_][b][c][d];
                        }
                        t1[i][b][c][d] = s;
                    }
                }
            }
        }
        let mut t2 = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut s = 0.0;
                        for b in 0..3 {
                            s += r[(j, b)] * t1[i][b][c][d];
                        }
                        t2[i][j][c][d] = s;
                    }
                }
            }
        }
        let mut t3 = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for d in 0..3 {
                        let mut s = 0.0;
                        for c in 0..3 {
                            s += r[(k, c)] * t2[i][j][c][d];
                        }
                        t3[i][j][k][d] = s;
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut s = 0.0;
                        for d in 0..3 {
                            s += r[(l, d)] * t3[i][j][k][d];
                        }
                        out[i][j][k][l] = s;
                    }
                }
            }
        }
        Voigt6::from_full(&out)
    }
}

impl std::ops::Add for Voigt6 {
    type Output = Voigt6;
    fn add(self, rhs: Voigt6) -> Voigt6 {
        Voigt6(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Voigt6 {
    type Output = Voigt6;
    fn sub(self, rhs: Voigt6) -> Voigt6 {
        Voigt6(self.0 - rhs.0)
    }
}

impl std::ops::Mul<f64> for Voigt6 {
    type Output = Voigt6;
    fn mul(self, s: f64) -> Voigt6 {
        Voigt6(self.0 * s)
    }
}

/// Outer product b (x) b of symmetric tensors as a 4th-order tensor.
pub fn outer_sym(b1: &Matrix3<f64>, b2: &Matrix3<f64>) -> Voigt6 {
    let v1 = sym_to_voigt(b1);
    let v2 = sym_to_voigt(b2);
    Voigt6(v1 * v2.transpose())
}

/// Rotation about coordinate axis `axis` by angle `t`.
pub fn axis_rotation(axis: usize, t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    match axis {
        0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        2 => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        _ => unreachable!(),
    }
}

fn axis_rotation_derivative(axis: usize, t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    match axis {
        0 => Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s),
        1 => Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s),
        2 => Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0),
        _ => unreachable!(),
    }
}

/// Composed rotation R = R3(t3) R2(t2) R1(t1).
pub fn rotation(theta: &Vector3<f64>) -> Matrix3<f64> {
    axis_rotation(2, theta[2]) * axis_rotation(1, theta[1]) * axis_rotation(0, theta[0])
}

/// Partial derivatives of the composed rotation with respect to each angle.
pub fn rotation_derivatives(theta: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let r1 = axis_rotation(0, theta[0]);
    let r2 = axis_rotation(1, theta[1]);
    let r3 = axis_rotation(2, theta[2]);
    let d1 = axis_rotation_derivative(0, theta[0]);
    let d2 = axis_rotation_derivative(1, theta[1]);
    let d3 = axis_rotation_derivative(2, theta[2]);
    [&r3 * &r2 * d1, &r3 * d2 * &r1, d3 * &r2 * &r1]
}

/// R m R^T for a 2nd-order tensor.
pub fn rotate_sym(r: &Matrix3<f64>, m: &Matrix3<f64>) -> Matrix3<f64> {
    r * m * r.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(42)
    }

    fn random_sym(rng: &mut impl Rng) -> Matrix3<f64> {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        (m + m.transpose()) * 0.5
    }

    #[test]
    fn isotropic_apply_matches_lame_form() {
        let d = Voigt6::isotropic(1.0, 0.3);
        let lambda = 0.3 / (1.3 * 0.4);
        let mu = 1.0 / 2.6;
        let mut r = rng();
        let e = random_sym(&mut r);
        let s = d.apply(&e);
        let expect = Matrix3::identity() * (lambda * e.trace()) + e * (2.0 * mu);
        assert_relative_eq!(s, expect, epsilon = 1e-14);
    }

    #[test]
    fn voigt_matches_full_tensor_contraction() {
        // spec invariant: Voigt bilinear equals the full 3^4 contraction
        let d = Voigt6::isotropic(2.0, 0.25);
        let full = d.to_full();
        let mut r = rng();
        for _ in 0..5 {
            let e1 = random_sym(&mut r);
            let e2 = random_sym(&mut r);
            let mut direct = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            direct += e1[(i, j)] * full[i][j][k][l] * e2[(k, l)];
                        }
                    }
                }
            }
            assert_relative_eq!(d.bilinear(&e1, &e2), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn fourth_order_inverse_round_trip() {
        let d = Voigt6::isotropic(3.0, 0.2);
        let inv = d.inverse().unwrap();
        let mut r = rng();
        let e = random_sym(&mut r);
        let back = inv.apply(&d.apply(&e));
        assert_relative_eq!(back, e, epsilon = 1e-12);
    }

    #[test]
    fn identity_acts_as_symmetrizer() {
        let id = Voigt6::identity();
        let mut r = rng();
        let e = random_sym(&mut r);
        assert_relative_eq!(id.apply(&e), e, epsilon = 1e-14);
    }

    #[test]
    fn rotation_is_orthogonal_and_derivative_consistent() {
        let theta = Vector3::new(0.3, 0.7, 1.1);
        let r = rotation(&theta);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-14);
        let d = rotation_derivatives(&theta);
        let h = 1e-6;
        for k in 0..3 {
            let mut tp = theta;
            tp[k] += h;
            let mut tm = theta;
            tm[k] -= h;
            let fd = (rotation(&tp) - rotation(&tm)) / (2.0 * h);
            assert_relative_eq!(d[k], fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn quarter_turn_permutes_diagonal() {
        let theta = Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = rotation(&theta);
        let k = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        let kr = rotate_sym(&r, &k);
        let expect = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 3.0));
        assert_relative_eq!(kr, expect, epsilon = 1e-12);
    }

    #[test]
    fn rotate_voigt_quarter_turn_swaps_axes() {
        let mut a = Voigt6::isotropic(1.0, 0.3);
        a.0[(0, 0)] = 5.0; // make axis 1 special
        let r = axis_rotation(2, std::f64::consts::FRAC_PI_2);
        let ar = a.rotate(&r);
        assert_relative_eq!(ar.0[(1, 1)], 5.0, epsilon = 1e-12);
        assert_relative_eq!(ar.0[(0, 0)], a.0[(1, 1)], epsilon = 1e-12);
    }
}
