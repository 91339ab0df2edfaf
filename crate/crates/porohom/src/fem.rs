//! Hexahedral finite element kernels and the sparse direct solve wrapper.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tensor-product Gauss rule on the unit cube [0,1]^3, n points per direction.
pub struct Quadrature {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

fn gauss_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    // points on [0,1]
    match n {
        1 => (vec![0.5], vec![1.0]),
        2 => {
            let a = 0.5 - 0.5 / 3.0f64.sqrt();
            let b = 0.5 + 0.5 / 3.0f64.sqrt();
            (vec![a, b], vec![0.5, 0.5])
        }
        3 => {
            let s = 0.5 * (3.0f64 / 5.0).sqrt();
            (
                vec![0.5 - s, 0.5, 0.5 + s],
                vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            )
        }
        _ => panic!("unsupported gauss order"),
    }
}

pub fn gauss_hex(n: usize) -> Quadrature {
    let (p, w) = gauss_1d(n);
    let mut points = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                points.push(Vector3::new(p[i], p[j], p[k]));
                weights.push(w[i] * w[j] * w[k]);
            }
        }
    }
    Quadrature { points, weights }
}

/// 2x2 Gauss rule on the unit square, for face integrals.
pub fn gauss_quad_face() -> (Vec<(f64, f64)>, Vec<f64>) {
    let (p, w) = gauss_1d(2);
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            pts.push((p[i], p[j]));
            ws.push(w[i] * w[j]);
        }
    }
    (pts, ws)
}

/// Trilinear shape functions on [0,1]^3 in the VTK corner ordering.
pub fn q1_shape(x: &Vector3<f64>) -> [f64; 8] {
    let (a, b, c) = (x[0], x[1], x[2]);
    let (a1, b1, c1) = (1.0 - a, 1.0 - b, 1.0 - c);
    [
        a1 * b1 * c1,
        a * b1 * c1,
        a * b * c1,
        a1 * b * c1,
        a1 * b1 * c,
        a * b1 * c,
        a * b * c,
        a1 * b * c,
    ]
}

/// Reference gradients of the trilinear shape functions.
pub fn q1_grad(x: &Vector3<f64>) -> [[f64; 3]; 8] {
    let (a, b, c) = (x[0], x[1], x[2]);
    let (a1, b1, c1) = (1.0 - a, 1.0 - b, 1.0 - c);
    [
        [-b1 * c1, -a1 * c1, -a1 * b1],
        [b1 * c1, -a * c1, -a * b1],
        [b * c1, a * c1, -a * b],
        [-b * c1, a1 * c1, -a1 * b],
        [-b1 * c, -a1 * c, a1 * b1],
        [b1 * c, -a * c, a * b1],
        [b * c, a * c, a * b],
        [-b * c, a1 * c, a1 * b],
    ]
}

fn quadratic_1d(t: f64) -> [f64; 3] {
    // Lagrange nodes at t = 0, 1/2, 1
    [
        2.0 * (t - 0.5) * (t - 1.0),
        -4.0 * t * (t - 1.0),
        2.0 * t * (t - 0.5),
    ]
}

fn quadratic_1d_grad(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0]
}

/// Local lattice coordinates (0, 1/2, 1) of the 27 triquadratic nodes,
/// tensor ordering: index = a + 3b + 9c.
pub fn q2_node_coords() -> [[f64; 3]; 27] {
    let mut out = [[0.0; 3]; 27];
    for c in 0..3 {
        for b in 0..3 {
            for a in 0..3 {
                out[a + 3 * b + 9 * c] = [a as f64 * 0.5, b as f64 * 0.5, c as f64 * 0.5];
            }
        }
    }
    out
}

/// Triquadratic shape functions, tensor ordering.
pub fn q2_shape(x: &Vector3<f64>) -> [f64; 27] {
    let fa = quadratic_1d(x[0]);
    let fb = quadratic_1d(x[1]);
    let fc = quadratic_1d(x[2]);
    let mut out = [0.0; 27];
    for c in 0..3 {
        for b in 0..3 {
            for a in 0..3 {
                out[a + 3 * b + 9 * c] = fa[a] * fb[b] * fc[c];
            }
        }
    }
    out
}

pub fn q2_grad(x: &Vector3<f64>) -> [[f64; 3]; 27] {
    let fa = quadratic_1d(x[0]);
    let fb = quadratic_1d(x[1]);
    let fc = quadratic_1d(x[2]);
    let ga = quadratic_1d_grad(x[0]);
    let gb = quadratic_1d_grad(x[1]);
    let gc = quadratic_1d_grad(x[2]);
    let mut out = [[0.0; 3]; 27];
    for c in 0..3 {
        for b in 0..3 {
            for a in 0..3 {
                out[a + 3 * b + 9 * c] = [
                    ga[a] * fb[b] * fc[c],
                    fa[a] * gb[b] * fc[c],
                    fa[a] * fb[b] * gc[c],
                ];
            }
        }
    }
    out
}

/// Element geometry at one quadrature point.
pub struct ElemGeom {
    pub jac: Matrix3<f64>,
    pub inv_jac: Matrix3<f64>,
    pub det: f64,
}

impl ElemGeom {
    /// J_ij = d y_i / d xi_j from nodal positions and reference gradients.
    pub fn new(nodes: &[Vector3<f64>], ref_grads: &[[f64; 3]]) -> Self {
        let mut jac = Matrix3::zeros();
        for (x, g) in nodes.iter().zip(ref_grads) {
            for i in 0..3 {
                for j in 0..3 {
                    jac[(i, j)] += x[i] * g[j];
                }
            }
        }
        let det = jac.determinant();
        let inv_jac = jac.try_inverse().unwrap_or_else(Matrix3::zeros);
        ElemGeom { jac, inv_jac, det }
    }

    pub fn jacobian_det(nodes: &[Vector3<f64>], ref_grads: &[[f64; 3]]) -> f64 {
        let mut jac = Matrix3::zeros();
        for (x, g) in nodes.iter().zip(ref_grads) {
            for i in 0..3 {
                for j in 0..3 {
                    jac[(i, j)] += x[i] * g[j];
                }
            }
        }
        jac.determinant()
    }

    /// Physical gradient of shape function `a`: grad_y N = J^-T grad_xi N.
    pub fn phys_grad(&self, ref_grad: &[f64; 3]) -> Vector3<f64> {
        let g = Vector3::new(ref_grad[0], ref_grad[1], ref_grad[2]);
        self.inv_jac.transpose() * g
    }
}

/// Triplet-based sparse system with a direct LU solve.
pub struct SparseSystem {
    pub n: usize,
    triplets: Vec<Triplet<usize, usize, f64>>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            n,
            triplets: Vec::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.triplets.push(Triplet::new(row, col, value));
        }
    }

    /// Factorizes once and solves for every right-hand side.
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.triplets)
            .map_err(|e| Error::Solver(format!("assembly failed: {e:?}")))?;
        // exactly singular matrices make the factorization panic
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mat.sp_lu()))
            .map_err(|_| Error::Solver("LU factorization failed: singular matrix".into()))?
            .map_err(|e| Error::Solver(format!("LU factorization failed: {e:?}")))?;
        let mut b = faer::Mat::<f64>::zeros(self.n, rhs.len());
        for (j, col) in rhs.iter().enumerate() {
            assert_eq!(col.len(), self.n);
            for (i, v) in col.iter().enumerate() {
                b[(i, j)] = *v;
            }
        }
        let mut x = lu.solve(&b);
        // two steps of iterative refinement recover accuracy lost to the
        // indefinite blocks of the constrained systems
        for _ in 0..2 {
            let r = &b - &mat * &x;
            let dx = lu.solve(&r);
            x += &dx;
        }
        // residual guards against numerically singular systems; the absolute
        // floor covers self-equilibrated solves where x and b are both noise
        let r = &mat * &x - &b;
        let amax = self
            .triplets
            .iter()
            .fold(0.0f64, |m, t| m.max(t.val.abs()));
        let err = r.norm_max();
        let bound = 1e-6 * (amax * x.norm_max() + b.norm_max()) + 1e-10 * amax;
        if !err.is_finite() || err > bound.max(1e-300) {
            return Err(Error::Solver(format!(
                "solution residual {err:.3e} exceeds {bound:.3e}; system is singular or ill-conditioned"
            )));
        }
        let mut out = Vec::with_capacity(rhs.len());
        for j in 0..rhs.len() {
            out.push((0..self.n).map(|i| x[(i, j)]).collect());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q1_partition_of_unity_and_gradients() {
        let x = Vector3::new(0.3, 0.7, 0.2);
        let n = q1_shape(&x);
        assert_relative_eq!(n.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        let g = q1_grad(&x);
        for d in 0..3 {
            let s: f64 = g.iter().map(|gi| gi[d]).sum();
            assert_relative_eq!(s, 0.0, epsilon = 1e-14);
        }
        // linear reproduction
        let h = 1e-6;
        for d in 0..3 {
            let mut xp = x;
            xp[d] += h;
            let np = q1_shape(&xp);
            for a in 0..8 {
                assert_relative_eq!((np[a] - n[a]) / h, g[a][d], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn q2_interpolates_quadratics() {
        let coords = q2_node_coords();
        let x = Vector3::new(0.37, 0.11, 0.83);
        let n = q2_shape(&x);
        assert_relative_eq!(n.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        let f = |p: &[f64; 3]| p[0] * p[0] + 2.0 * p[1] * p[2] + 3.0 * p[2] - 1.0;
        let interp: f64 = coords.iter().zip(&n).map(|(p, w)| f(p) * w).sum();
        assert_relative_eq!(interp, f(&[x[0], x[1], x[2]]), epsilon = 1e-12);
    }

    #[test]
    fn unit_cube_geometry() {
        let nodes: Vec<Vector3<f64>> = crate::mesh::HEX_CORNERS
            .iter()
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let g = q1_grad(&Vector3::new(0.5, 0.5, 0.5));
        let geo = ElemGeom::new(&nodes, &g);
        assert_relative_eq!(geo.det, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        // 2-point rule integrates cubics exactly
        let q = gauss_hex(2);
        let val: f64 = q
            .points
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * p[0].powi(3) * p[1] * p[2].powi(2))
            .sum();
        assert_relative_eq!(val, 0.25 * 0.5 * (1.0 / 3.0), epsilon = 1e-14);
        let q3 = gauss_hex(3);
        let val3: f64 = q3
            .points
            .iter()
            .zip(&q3.weights)
            .map(|(p, w)| w * p[0].powi(5) * p[2].powi(4))
            .sum();
        assert_relative_eq!(val3, (1.0 / 6.0) * (1.0 / 5.0), epsilon = 1e-14);
    }

    #[test]
    fn sparse_solve_recovers_solution() {
        let mut sys = SparseSystem::new(3);
        sys.add(0, 0, 4.0);
        sys.add(1, 1, 3.0);
        sys.add(2, 2, 2.0);
        sys.add(0, 1, 1.0);
        sys.add(1, 0, 1.0);
        let sol = sys.solve(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let x = &sol[0];
        assert_relative_eq!(4.0 * x[0] + x[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[0] + 3.0 * x[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(2.0 * x[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut sys = SparseSystem::new(2);
        sys.add(0, 0, 1.0);
        sys.add(0, 1, 1.0);
        sys.add(1, 0, 1.0);
        sys.add(1, 1, 1.0);
        assert!(sys.solve(&[vec![1.0, 0.0]]).is_err());
    }
}
