//! Effective Biot coefficients of the cell and the derived undrained
//! constants.
//!
//! The drained stiffness A, stress coupling C, compressibility N and
//! permeability K are assembled from the cell responses; B = C + phi I and
//! M = N + phi gamma complete the coefficient set of the macroscopic model.
//! The undrained compliance, Skempton tensor and bulk modulus follow from
//! inverting the constitutive pair, eliminating the pore pressure.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cell::{self, CellSolution};
use crate::error::{Error, Result};
use crate::fem::{self, ElemGeom};
use crate::mesh::{CellMesh, Region, HEX_FACES};
use crate::tensor::{
    mandel_to_sym, rotate_sym, rotation, rotation_derivatives, sym_to_mandel, Voigt6,
};

/// Homogenized coefficient set of the Biot model.
#[derive(Debug, Clone, PartialEq)]
pub struct HomCoefficients {
    /// Drained stiffness A (Voigt storage).
    pub stiffness: Voigt6,
    /// Stress coupling C.
    pub coupling: Matrix3<f64>,
    /// Biot stress coefficient B = C + phi I.
    pub biot_stress: Matrix3<f64>,
    /// Hydraulic permeability K (geometry part; viscosity applied at the
    /// macroscopic Darcy law).
    pub permeability: Matrix3<f64>,
    /// Compressibility coefficient N of the skeleton.
    pub n_coeff: f64,
    /// Storage coefficient M = N + phi gamma.
    pub m_coeff: f64,
    /// Fluid volume fraction.
    pub porosity: f64,
    /// Fluid compressibility gamma (given datum).
    pub fluid_compressibility: f64,
    /// Fluid viscosity (given datum).
    pub viscosity: f64,
}

/// Undrained material constants.
#[derive(Debug, Clone, PartialEq)]
pub struct UndrainedConstants {
    /// Undrained compliance.
    pub compliance: Voigt6,
    /// Skempton tensor S.
    pub skempton: Matrix3<f64>,
    /// Bulk modulus of the pressure response.
    pub bulk_modulus: f64,
}

/// Linear perturbation of the coefficient set; also the value type of the
/// shape and rotation derivatives.
#[derive(Debug, Clone)]
pub struct CoefficientDelta {
    pub stiffness: Voigt6,
    pub coupling: Matrix3<f64>,
    pub biot_stress: Matrix3<f64>,
    pub permeability: Matrix3<f64>,
    pub n_coeff: f64,
    pub m_coeff: f64,
    pub porosity: f64,
}

impl CoefficientDelta {
    pub fn zeros() -> Self {
        CoefficientDelta {
            stiffness: Voigt6::zeros(),
            coupling: Matrix3::zeros(),
            biot_stress: Matrix3::zeros(),
            permeability: Matrix3::zeros(),
            n_coeff: 0.0,
            m_coeff: 0.0,
            porosity: 0.0,
        }
    }
}

/// Assembles every homogenized coefficient from the cell responses.
pub fn compute_coefficients(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
    gamma: f64,
    viscosity: f64,
) -> HomCoefficients {
    let vol = mesh.volume();
    let quad = fem::gauss_hex(2);

    let mut a = Voigt6::zeros();
    let mut c6 = [0.0f64; 6];
    let mut n = 0.0;

    for (e, _) in mesh.hexes.iter().enumerate() {
        if mesh.labels[e] != Region::Solid {
            continue;
        }
        let xs = mesh.element_nodes(e);
        for (q, &w) in quad.points.iter().zip(&quad.weights) {
            let ref_grads = fem::q1_grad(q);
            let geo = ElemGeom::new(&xs, &ref_grads);
            let dv = w * geo.det;
            let mut strains = [Matrix3::zeros(); 6];
            for slot in 0..6 {
                strains[slot] =
                    cell::field_strain(mesh, &sol.strain_correctors[slot], e, &geo, &ref_grads)
                        + cell::unit_strain(slot);
            }
            let ep = cell::field_strain(mesh, &sol.pressure_corrector, e, &geo, &ref_grads);
            let sp = d_tensor.apply(&ep);
            for i in 0..6 {
                let si = d_tensor.apply(&strains[i]);
                for j in i..6 {
                    let v = (si.transpose() * strains[j]).trace() * dv;
                    a.0[(i, j)] += v;
                    if i != j {
                        a.0[(j, i)] += v;
                    }
                }
                // C_I = -avg div omega^I; div of the corrector alone
                let div_corr = (strains[i] - cell::unit_strain(i)).trace();
                c6[i] -= div_corr * dv;
            }
            n += (sp.transpose() * ep).trace() * dv;
        }
    }
    a = a * (1.0 / vol);
    n /= vol;
    let coupling = Matrix3::new(
        c6[0] / vol,
        c6[5] / vol,
        c6[4] / vol,
        c6[5] / vol,
        c6[1] / vol,
        c6[3] / vol,
        c6[4] / vol,
        c6[3] / vol,
        c6[2] / vol,
    );

    let mut k = Matrix3::zeros();
    if let Some(stokes) = &sol.stokes {
        let quad3 = fem::gauss_hex(3);
        for (le, &e) in stokes.space.fluid_elems.iter().enumerate() {
            let corner_xs = mesh.element_nodes(e);
            let ids = stokes.space.elem_nodes[le];
            for (q, &w) in quad3.points.iter().zip(&quad3.weights) {
                let geo = ElemGeom::new(&corner_xs, &fem::q1_grad(q));
                let dv = w * geo.det;
                let shapes = fem::q2_shape(q);
                for j in 0..3 {
                    let mut psi = Vector3::zeros();
                    for a27 in 0..27 {
                        psi += stokes.velocity[j][ids[a27]] * shapes[a27];
                    }
                    for i in 0..3 {
                        k[(i, j)] += psi[i] * dv;
                    }
                }
            }
        }
        k /= vol;
    }

    let porosity = mesh.region_volume(Region::Fluid) / vol;
    let biot_stress = coupling + Matrix3::identity() * porosity;
    let m_coeff = n + porosity * gamma;

    HomCoefficients {
        stiffness: a,
        coupling,
        biot_stress,
        permeability: k,
        n_coeff: n,
        m_coeff,
        porosity,
        fluid_compressibility: gamma,
        viscosity,
    }
}

/// Both routes to C, N and K, for the dual-formula consistency checks.
#[derive(Debug)]
pub struct DualChecks {
    pub coupling_primal: Matrix3<f64>,
    pub coupling_dual: Matrix3<f64>,
    pub n_primal: f64,
    pub n_dual: f64,
    pub permeability_primal: Matrix3<f64>,
    pub permeability_dual: Matrix3<f64>,
}

pub fn dual_formula_checks(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
) -> DualChecks {
    let vol = mesh.volume();
    let quad = fem::gauss_hex(2);

    let mut c_primal6 = [0.0f64; 6];
    let mut c_dual6 = [0.0f64; 6];
    let mut n_primal = 0.0;
    for e in 0..mesh.num_elements() {
        if mesh.labels[e] != Region::Solid {
            continue;
        }
        let xs = mesh.element_nodes(e);
        for (q, &w) in quad.points.iter().zip(&quad.weights) {
            let ref_grads = fem::q1_grad(q);
            let geo = ElemGeom::new(&xs, &ref_grads);
            let dv = w * geo.det;
            let ep = cell::field_strain(mesh, &sol.pressure_corrector, e, &geo, &ref_grads);
            let sp = d_tensor.apply(&ep);
            n_primal += (sp.transpose() * ep).trace() * dv;
            for slot in 0..6 {
                let ei =
                    cell::field_strain(mesh, &sol.strain_correctors[slot], e, &geo, &ref_grads);
                c_primal6[slot] -= ei.trace() * dv;
                // a(omega^P, Pi^I) = D e(omega^P) : E^I
                c_dual6[slot] += (sp.transpose() * cell::unit_strain(slot)).trace() * dv;
            }
        }
    }

    // N dual: surface integral of omega^P over the interface
    let mut n_dual = 0.0;
    let (face_pts, face_ws) = fem::gauss_quad_face();
    for &(e, f) in &mesh.interface {
        let hex = mesh.hexes[e];
        let face = HEX_FACES[f as usize];
        let corners: Vec<Vector3<f64>> = face.iter().map(|&l| mesh.nodes[hex[l]]).collect();
        let vals: Vec<Vector3<f64>> = face
            .iter()
            .map(|&l| sol.pressure_corrector[hex[l]])
            .collect();
        for (&(u, v), &w) in face_pts.iter().zip(&face_ws) {
            let n4 = [
                (1.0 - u) * (1.0 - v),
                u * (1.0 - v),
                u * v,
                (1.0 - u) * v,
            ];
            let normal = cell::face_normal(&corners, u, v);
            let mut val = Vector3::zeros();
            for k in 0..4 {
                val += vals[k] * n4[k];
            }
            n_dual += val.dot(&normal) * w;
        }
    }

    let mut k_primal = Matrix3::zeros();
    let mut k_dual = Matrix3::zeros();
    if let Some(stokes) = &sol.stokes {
        let quad3 = fem::gauss_hex(3);
        for (le, &e) in stokes.space.fluid_elems.iter().enumerate() {
            let corner_xs = mesh.element_nodes(e);
            let ids = stokes.space.elem_nodes[le];
            for (q, &w) in quad3.points.iter().zip(&quad3.weights) {
                let geo = ElemGeom::new(&corner_xs, &fem::q1_grad(q));
                let dv = w * geo.det;
                let shapes = fem::q2_shape(q);
                let grads: Vec<Vector3<f64>> =
                    fem::q2_grad(q).iter().map(|g| geo.phys_grad(g)).collect();
                let mut psi = [Vector3::<f64>::zeros(); 3];
                let mut grad_psi = [Matrix3::<f64>::zeros(); 3];
                for k in 0..3 {
                    for a27 in 0..27 {
                        let val = stokes.velocity[k][ids[a27]];
                        psi[k] += val * shapes[a27];
                        for r in 0..3 {
                            for cc in 0..3 {
                                grad_psi[k][(r, cc)] += val[r] * grads[a27][cc];
                            }
                        }
                    }
                }
                for i in 0..3 {
                    for j in 0..3 {
                        k_primal[(i, j)] += psi[j][i] * dv;
                        k_dual[(i, j)] +=
                            (grad_psi[i].transpose() * grad_psi[j]).trace() * dv;
                    }
                }
            }
        }
    }

    let to_sym = |c: &[f64; 6]| {
        Matrix3::new(
            c[0], c[5], c[4], c[5], c[1], c[3], c[4], c[3], c[2],
        )
    };
    DualChecks {
        coupling_primal: to_sym(&c_primal6) / vol,
        coupling_dual: to_sym(&c_dual6) / vol,
        n_primal: n_primal / vol,
        n_dual: n_dual / vol,
        permeability_primal: k_primal / vol,
        permeability_dual: k_dual / vol,
    }
}

/// Undrained constants from the drained set by eliminating the pressure.
///
/// With W = A^-1 B and k = 1/(M + B : W): compliance = A^-1 - k W (x) W,
/// Skempton S = k W, bulk modulus k. These make the two constitutive maps
/// exact inverses of each other.
pub fn undrained_constants(h: &HomCoefficients) -> Result<UndrainedConstants> {
    let a_inv = h.stiffness.inverse()?;
    let b_m = sym_to_mandel(&h.biot_stress);
    let a_inv_m = a_inv.to_mandel();
    let w_m = a_inv_m * b_m;
    let denom = h.m_coeff + b_m.dot(&w_m);
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "undrained denominator M + B:A^-1 B = {denom} must be positive"
        )));
    }
    let bulk = 1.0 / denom;
    let skempton = mandel_to_sym(&w_m) * bulk;
    let cc_m = a_inv_m - w_m * w_m.transpose() * bulk;
    Ok(UndrainedConstants {
        compliance: Voigt6::from_mandel(&cc_m),
        skempton,
        bulk_modulus: bulk,
    })
}

/// Forward constitutive map: (strain, pressure) -> (stress, fluid increase).
pub fn constitutive_forward(
    h: &HomCoefficients,
    strain: &Matrix3<f64>,
    pressure: f64,
) -> (Matrix3<f64>, f64) {
    let stress = h.stiffness.apply(strain) - h.biot_stress * pressure;
    let zeta = (h.biot_stress.transpose() * strain).trace() + h.m_coeff * pressure;
    (stress, zeta)
}

/// Inverse constitutive map: (stress, fluid increase) -> (strain, pressure).
pub fn constitutive_inverse(
    u: &UndrainedConstants,
    stress: &Matrix3<f64>,
    zeta: f64,
) -> (Matrix3<f64>, f64) {
    let strain = u.compliance.apply(stress) + u.skempton * zeta;
    let pressure = -(u.skempton.transpose() * stress).trace() + u.bulk_modulus * zeta;
    (strain, pressure)
}

/// Rotated coefficient set and its analytic angle derivatives.
#[derive(Debug, Clone)]
pub struct RotatedCoefficients {
    pub value: HomCoefficients,
    pub dtheta: [CoefficientDelta; 3],
}

/// Rotates the tensors of the coefficient set; scalars are unchanged.
pub fn rotate_coefficients(h: &HomCoefficients, theta: &Vector3<f64>) -> RotatedCoefficients {
    let r = rotation(theta);
    let dr = rotation_derivatives(theta);
    let value = HomCoefficients {
        stiffness: h.stiffness.rotate(&r),
        coupling: rotate_sym(&r, &h.coupling),
        biot_stress: rotate_sym(&r, &h.biot_stress),
        permeability: rotate_sym(&r, &h.permeability),
        ..h.clone()
    };
    let d_sym = |m: &Matrix3<f64>, k: usize| -> Matrix3<f64> {
        dr[k] * m * r.transpose() + r * m * dr[k].transpose()
    };
    let full = h.stiffness.to_full();
    let d_stiff = |k: usize| -> Voigt6 {
        let mats = [&dr[k], &r];
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        // product rule over the four rotation slots
        for slot in 0..4 {
            let pick = |s: usize| -> &Matrix3<f64> {
                if s == slot {
                    mats[0]
                } else {
                    mats[1]
                }
            };
            for i in 0..3 {
                for j in 0..3 {
                    for kk in 0..3 {
                        for l in 0..3 {
                            let mut s = 0.0;
                            for a in 0..3 {
                                for b in 0..3 {
                                    for c in 0..3 {
                                        for d in 0..3 {
                                            s += pick(0)[(i, a)]
                                                * pick(1)[(j, b)]
                                                * pick(2)[(kk, c)]
                                                * pick(3)[(l, d)]
                                                * full[a][b][c][d];
                                        }
                                    }
                                }
                            }
                            out[i][j][kk][l] += s;
                        }
                    }
                }
            }
        }
        Voigt6::from_full(&out)
    };
    let dtheta = [0, 1, 2].map(|k| CoefficientDelta {
        stiffness: d_stiff(k),
        coupling: d_sym(&h.coupling, k),
        biot_stress: d_sym(&h.biot_stress, k),
        permeability: d_sym(&h.permeability, k),
        n_coeff: 0.0,
        m_coeff: 0.0,
        porosity: 0.0,
    });
    RotatedCoefficients { value, dtheta }
}

/// JSON interchange record of a coefficient set.
#[derive(Debug, Serialize, Deserialize)]
pub struct CoefficientsRecord {
    pub stiffness_voigt: [[f64; 6]; 6],
    pub coupling: [[f64; 3]; 3],
    pub biot_stress: [[f64; 3]; 3],
    pub permeability: [[f64; 3]; 3],
    pub n_coeff: f64,
    pub m_coeff: f64,
    pub porosity: f64,
    pub fluid_compressibility: f64,
    pub viscosity: f64,
    pub undrained: Option<UndrainedRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UndrainedRecord {
    pub compliance_voigt: [[f64; 6]; 6],
    pub skempton: [[f64; 3]; 3],
    pub bulk_modulus: f64,
}

fn mat6_to_rows(v: &Voigt6) -> [[f64; 6]; 6] {
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            out[i][j] = v.0[(i, j)];
        }
    }
    out
}

fn mat3_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

fn rows_to_mat6(r: &[[f64; 6]; 6]) -> Voigt6 {
    let mut m = Voigt6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            m.0[(i, j)] = r[i][j];
        }
    }
    m
}

fn rows_to_mat3(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

impl HomCoefficients {
    pub fn to_record(&self) -> CoefficientsRecord {
        let undrained = undrained_constants(self).ok().map(|u| UndrainedRecord {
            compliance_voigt: mat6_to_rows(&u.compliance),
            skempton: mat3_to_rows(&u.skempton),
            bulk_modulus: u.bulk_modulus,
        });
        CoefficientsRecord {
            stiffness_voigt: mat6_to_rows(&self.stiffness),
            coupling: mat3_to_rows(&self.coupling),
            biot_stress: mat3_to_rows(&self.biot_stress),
            permeability: mat3_to_rows(&self.permeability),
            n_coeff: self.n_coeff,
            m_coeff: self.m_coeff,
            porosity: self.porosity,
            fluid_compressibility: self.fluid_compressibility,
            viscosity: self.viscosity,
            undrained,
        }
    }

    pub fn from_record(r: &CoefficientsRecord) -> Self {
        HomCoefficients {
            stiffness: rows_to_mat6(&r.stiffness_voigt),
            coupling: rows_to_mat3(&r.coupling),
            biot_stress: rows_to_mat3(&r.biot_stress),
            permeability: rows_to_mat3(&r.permeability),
            n_coeff: r.n_coeff,
            m_coeff: r.m_coeff,
            porosity: r.porosity,
            fluid_compressibility: r.fluid_compressibility,
            viscosity: r.viscosity,
        }
    }
}

/// Synthetic isotropic coefficient set, for tests and macro-level defaults.
pub fn synthetic_isotropic(
    young: f64,
    poisson: f64,
    b_scale: f64,
    m_coeff: f64,
    k_scale: f64,
) -> HomCoefficients {
    HomCoefficients {
        stiffness: Voigt6::isotropic(young, poisson),
        coupling: Matrix3::identity() * b_scale,
        biot_stress: Matrix3::identity() * b_scale,
        permeability: Matrix3::identity() * k_scale,
        n_coeff: m_coeff,
        m_coeff,
        porosity: 0.0,
        fluid_compressibility: 0.0,
        viscosity: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell_problems;
    use crate::mesh::{generate_cross_sphere_mesh, ImplicitCellGeometry};
    use approx::assert_relative_eq;
    use rand::prelude::*;

    fn random_spd_coefficients(rng: &mut StdRng) -> HomCoefficients {
        use nalgebra::Matrix6;
        // random SPD Mandel matrix has all tensor symmetries
        let l = Matrix6::<f64>::from_fn(|i, j| if i >= j { rng.gen_range(-0.5..0.5) } else { 0.0 });
        let spd = l * l.transpose() + Matrix6::identity() * 1.5;
        let b = Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
        let b = (b + b.transpose()) * 0.5 + Matrix3::identity() * rng.gen_range(0.1..0.4);
        let m = rng.gen_range(0.5..2.0);
        let k = Matrix3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
        let k = k * k.transpose() + Matrix3::identity() * 0.3;
        HomCoefficients {
            stiffness: Voigt6::from_mandel(&spd),
            coupling: b,
            biot_stress: b,
            permeability: k,
            n_coeff: m,
            m_coeff: m,
            porosity: 0.0,
            fluid_compressibility: 0.0,
            viscosity: 1.0,
        }
    }

    #[test]
    fn undrained_round_trip_is_identity() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..20 {
            let h = random_spd_coefficients(&mut rng);
            let u = undrained_constants(&h).unwrap();
            let e = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let e = (e + e.transpose()) * 0.5;
            let p = rng.gen_range(-1.0..1.0);
            let (stress, zeta) = constitutive_forward(&h, &e, p);
            let (e2, p2) = constitutive_inverse(&u, &stress, zeta);
            assert_relative_eq!(e2, e, epsilon = 1e-12);
            assert_relative_eq!(p2, p, epsilon = 1e-12);
        }
    }

    #[test]
    fn decoupled_limit_has_no_skempton_effect() {
        let mut h = synthetic_isotropic(1.0, 0.3, 0.0, 2.0, 1.0);
        h.coupling = Matrix3::zeros();
        h.biot_stress = Matrix3::zeros();
        let u = undrained_constants(&h).unwrap();
        assert!(u.skempton.norm() < 1e-14);
        assert_relative_eq!(u.bulk_modulus, 0.5, epsilon = 1e-14);
        // no coupling: undrained compliance equals the drained inverse
        let ainv = h.stiffness.inverse().unwrap();
        assert!((u.compliance.0 - ainv.0).norm() < 1e-13);
    }

    #[test]
    fn undrained_rejects_degenerate_denominator() {
        let mut h = synthetic_isotropic(1.0, 0.3, 0.0, 0.0, 1.0);
        h.m_coeff = 0.0;
        assert!(undrained_constants(&h).is_err());
    }

    #[test]
    fn all_solid_cell_reproduces_the_base_material() {
        let geom = ImplicitCellGeometry::new([0.0, 0.0, 0.0], 0.0).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let d = Voigt6::isotropic(1.0, 0.3);
        let sol = solve_cell_problems(&mesh, &d).unwrap();
        let h = compute_coefficients(&mesh, &d, &sol, 0.0, 1.0);
        assert!((h.stiffness.0 - d.0).norm() / d.0.norm() < 1e-9);
        assert!(h.coupling.norm() < 1e-10);
        assert!(h.n_coeff.abs() < 1e-12);
        assert_eq!(h.permeability, Matrix3::zeros());
        assert_eq!(h.porosity, 0.0);
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut h = random_spd_coefficients(&mut rng);
        h.permeability = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        let r0 = rotate_coefficients(&h, &Vector3::zeros());
        assert!((r0.value.stiffness.0 - h.stiffness.0).norm() < 1e-13);
        assert!((r0.value.permeability - h.permeability).norm() < 1e-13);
        let rq = rotate_coefficients(&h, &Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let kd = rq.value.permeability;
        assert_relative_eq!(kd[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(kd[(1, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(kd[(2, 2)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(rq.value.n_coeff, h.n_coeff);
    }

    #[test]
    fn rotation_derivative_matches_finite_difference() {
        let mut rng = StdRng::seed_from_u64(17);
        let h = random_spd_coefficients(&mut rng);
        let theta = Vector3::new(0.2, 0.1, 0.4);
        let rot = rotate_coefficients(&h, &theta);
        let step = 1e-6;
        for k in 0..3 {
            let mut tp = theta;
            tp[k] += step;
            let mut tm = theta;
            tm[k] -= step;
            let hp = rotate_coefficients(&h, &tp).value;
            let hm = rotate_coefficients(&h, &tm).value;
            let fd_k = (hp.permeability - hm.permeability) / (2.0 * step);
            let rel =
                (rot.dtheta[k].permeability - fd_k).norm() / fd_k.norm().max(1e-30);
            assert!(rel < 1e-8, "dK/dtheta{k} rel err {rel}");
            let fd_a = (hp.stiffness.0 - hm.stiffness.0) / (2.0 * step);
            let rel_a = (rot.dtheta[k].stiffness.0 - fd_a).norm() / fd_a.norm().max(1e-30);
            assert!(rel_a < 1e-8, "dA/dtheta{k} rel err {rel_a}");
        }
    }

    #[test]
    fn record_round_trip() {
        let h = synthetic_isotropic(2.0, 0.25, 0.3, 1.2, 1e-4);
        let rec = h.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let rec2: CoefficientsRecord = serde_json::from_str(&json).unwrap();
        let h2 = HomCoefficients::from_record(&rec2);
        assert_eq!(h, h2);
    }
}
