//! Shape derivatives of the homogenized coefficients.
//!
//! The derivatives follow the velocity (material derivative) method: a design
//! velocity field moves the mesh nodes, and every coefficient derivative is
//! expressed through transport kernels of the already-computed cell responses
//! — no adjoint cell solves are needed. The kernels are evaluated with the
//! same quadrature as the assembly, so the discrete sensitivities are exactly
//! the derivatives of the discrete coefficients; central finite differences
//! through morph-and-resolve act as the independent oracle.
//!
//! The unit-load transport uses the symmetrized pair (V_j e_i + V_i e_j)/2
//! for a mixed Voigt slot (i, j), which keeps the minor symmetry of the
//! stiffness derivative exact for shearing velocity fields.

use nalgebra::{Matrix3, Matrix6, Vector3};
use rayon::prelude::*;

use crate::cell::{self, CellSolution};
use crate::error::Result;
use crate::fem::{self, ElemGeom};
use crate::homog::{self, CoefficientDelta, HomCoefficients};
use crate::mesh::{CellMesh, Region};
use crate::spline::{DesignSpace, FreeCoord, SplineBox};
use crate::tensor::{mandel_to_sym, sym_to_mandel, Voigt6};

/// Nodal design velocity on the cell mesh.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub nodal: Vec<Vector3<f64>>,
}

/// Velocity field of one free design coordinate: the accumulated spline basis
/// factor at each node's parameter preimage times the coordinate direction.
pub fn design_velocity(
    b: &SplineBox,
    space: &DesignSpace,
    coord: usize,
    mesh: &CellMesh,
) -> VelocityField {
    let fc = space.coord(coord);
    let dim = match fc {
        FreeCoord::Alpha { dim, .. } | FreeCoord::Beta { dim, .. } => dim,
        FreeCoord::Theta { .. } => {
            return VelocityField {
                nodal: vec![Vector3::zeros(); mesh.num_nodes()],
            }
        }
    };
    let nodal = mesh
        .preimages
        .iter()
        .map(|t| {
            let mut v = Vector3::zeros();
            v[dim] = b.coordinate_factor(&fc, t);
            v
        })
        .collect();
    VelocityField { nodal }
}

// ---------------------------------------------------------------------------
// quadrature-point caches
// ---------------------------------------------------------------------------

struct SolidGp {
    elem: usize,
    w: f64,
    /// Physical gradients of the corner shape functions.
    grads8: [Vector3<f64>; 8],
    /// Corrector displacement gradients (not symmetrized).
    grad_corr: [Matrix3<f64>; 6],
    grad_p: Matrix3<f64>,
    /// Total stresses D(e(omega^I) + E^I) and the pressure-corrector stress.
    s_tot: [Matrix3<f64>; 6],
    s_p: Matrix3<f64>,
}

struct FluidGp {
    elem: usize,
    w: f64,
    grads8: [Vector3<f64>; 8],
    psi: [Vector3<f64>; 3],
    grad_psi: [Matrix3<f64>; 3],
    pi: [f64; 3],
}

/// Precomputed response data at every quadrature point, plus the unnormalized
/// value integrals entering the volume-normalization corrections.
pub struct SensitivityWorkspace<'m> {
    mesh: &'m CellMesh,
    solid: Vec<SolidGp>,
    fluid: Vec<FluidGp>,
    volume: f64,
    fluid_volume: f64,
    /// Unit-strain stresses D E^I.
    d_cols: [Matrix3<f64>; 6],
    /// Unnormalized coefficient integrals (same quadrature as the caches).
    a_val: Matrix6<f64>,
    c_val: [f64; 6],
    n_val: f64,
    k_val: Matrix3<f64>,
    gamma: f64,
}

impl<'m> SensitivityWorkspace<'m> {
    pub fn new(
        mesh: &'m CellMesh,
        d_tensor: &Voigt6,
        sol: &CellSolution,
        gamma: f64,
    ) -> SensitivityWorkspace<'m> {
        let quad = fem::gauss_hex(2);
        let mut solid = Vec::new();
        let mut a_val = Matrix6::zeros();
        let mut c_val = [0.0f64; 6];
        let mut n_val = 0.0;
        let mut volume = 0.0;
        let mut fluid_volume = 0.0;

        let d_cols = [0, 1, 2, 3, 4, 5].map(|i| d_tensor.apply(&cell::unit_strain(i)));

        for e in 0..mesh.num_elements() {
            let xs = mesh.element_nodes(e);
            for (q, &w) in quad.points.iter().zip(&quad.weights) {
                let ref_grads = fem::q1_grad(q);
                let geo = ElemGeom::new(&xs, &ref_grads);
                let dv = w * geo.det;
                volume += dv;
                if mesh.labels[e] == Region::Fluid {
                    fluid_volume += dv;
                    continue;
                }
                let mut grads8 = [Vector3::zeros(); 8];
                for a in 0..8 {
                    grads8[a] = geo.phys_grad(&ref_grads[a]);
                }
                let mut grad_corr = [Matrix3::zeros(); 6];
                let mut s_tot = [Matrix3::zeros(); 6];
                let mut e_tot = [Matrix3::zeros(); 6];
                for slot in 0..6 {
                    grad_corr[slot] = cell::field_gradient(
                        mesh,
                        &sol.strain_correctors[slot],
                        e,
                        &geo,
                        &ref_grads,
                    );
                    e_tot[slot] = (grad_corr[slot] + grad_corr[slot].transpose()) * 0.5
                        + cell::unit_strain(slot);
                    s_tot[slot] = d_tensor.apply(&e_tot[slot]);
                }
                let grad_p =
                    cell::field_gradient(mesh, &sol.pressure_corrector, e, &geo, &ref_grads);
                let e_p = (grad_p + grad_p.transpose()) * 0.5;
                let s_p = d_tensor.apply(&e_p);

                for i in 0..6 {
                    for j in 0..6 {
                        a_val[(i, j)] += (s_tot[i].transpose() * e_tot[j]).trace() * dv;
                    }
                    c_val[i] -= grad_corr[i].trace() * dv;
                }
                n_val += (s_p.transpose() * e_p).trace() * dv;

                solid.push(SolidGp {
                    elem: e,
                    w: dv,
                    grads8,
                    grad_corr,
                    grad_p,
                    s_tot,
                    s_p,
                });
            }
        }

        let mut fluid = Vec::new();
        let mut k_val = Matrix3::zeros();
        if let Some(stokes) = &sol.stokes {
            let quad3 = fem::gauss_hex(3);
            for (le, &e) in stokes.space.fluid_elems.iter().enumerate() {
                let corner_xs = mesh.element_nodes(e);
                let ids = stokes.space.elem_nodes[le];
                for (q, &w) in quad3.points.iter().zip(&quad3.weights) {
                    let q1g = fem::q1_grad(q);
                    let geo = ElemGeom::new(&corner_xs, &q1g);
                    let dv = w * geo.det;
                    let mut grads8 = [Vector3::zeros(); 8];
                    for a in 0..8 {
                        grads8[a] = geo.phys_grad(&q1g[a]);
                    }
                    let shapes = fem::q2_shape(q);
                    let grads27: Vec<Vector3<f64>> =
                        fem::q2_grad(q).iter().map(|g| geo.phys_grad(g)).collect();
                    let q1s = fem::q1_shape(q);
                    let mut psi = [Vector3::zeros(); 3];
                    let mut grad_psi = [Matrix3::zeros(); 3];
                    let mut pi = [0.0f64; 3];
                    for k in 0..3 {
                        for a in 0..27 {
                            let val = stokes.velocity[k][ids[a]];
                            psi[k] += val * shapes[a];
                            for r in 0..3 {
                                for c in 0..3 {
                                    grad_psi[k][(r, c)] += val[r] * grads27[a][c];
                                }
                            }
                        }
                        for (lq, &aq) in mesh.hexes[e].iter().enumerate() {
                            pi[k] += stokes.pressure[k][aq] * q1s[lq];
                        }
                        for i in 0..3 {
                            k_val[(i, k)] += psi[k][i] * dv;
                        }
                    }
                    fluid.push(FluidGp {
                        elem: e,
                        w: dv,
                        grads8,
                        psi,
                        grad_psi,
                        pi,
                    });
                }
            }
        }

        SensitivityWorkspace {
            mesh,
            solid,
            fluid,
            volume,
            fluid_volume,
            d_cols,
            a_val,
            c_val,
            n_val,
            k_val,
            gamma,
        }
    }

    /// Full coefficient derivative along one velocity field. The field is
    /// given by its value at each mesh node; inside elements it follows the
    /// trilinear interpolation, matching how the morph moves the mesh.
    pub fn delta(&self, v: &dyn Fn(usize) -> Vector3<f64>) -> CoefficientDelta {
        let vol = self.volume;
        let mut d_vol = 0.0; // int_Y div V
        let mut d_fluid_vol = 0.0;
        let mut da = Matrix6::<f64>::zeros();
        let mut dc = [0.0f64; 6];
        let mut dn = 0.0f64;
        let mut dk = Matrix3::<f64>::zeros();

        let mut vals = [Vector3::zeros(); 8];
        for gp in &self.solid {
            let hex = self.mesh.hexes[gp.elem];
            let mut any = false;
            for a in 0..8 {
                vals[a] = v(hex[a]);
                any |= vals[a] != Vector3::zeros();
            }
            if !any {
                continue;
            }
            // G[(i,j)] = dV_i/dy_j from the corner interpolation
            let mut g = Matrix3::zeros();
            for a in 0..8 {
                for i in 0..3 {
                    for j in 0..3 {
                        g[(i, j)] += vals[a][i] * gp.grads8[a][j];
                    }
                }
            }
            let div_v = g.trace();
            d_vol += div_v * gp.w;

            // discrete transport at fixed nodal values: d(grad u) = -grad u . G,
            // while the constant unit strains E^I do not transport at all
            let e_p = (gp.grad_p + gp.grad_p.transpose()) * 0.5;
            let grad_p_g = gp.grad_p * g;

            let mut e_tot = [Matrix3::zeros(); 6];
            let mut grad_g = [Matrix3::zeros(); 6];
            for slot in 0..6 {
                e_tot[slot] = (gp.grad_corr[slot] + gp.grad_corr[slot].transpose()) * 0.5
                    + cell::unit_strain(slot);
                grad_g[slot] = gp.grad_corr[slot] * g;
            }

            for i in 0..6 {
                for j in i..6 {
                    let mut kern = (gp.s_tot[i].transpose() * e_tot[j]).trace() * div_v;
                    kern -= (gp.s_tot[j].transpose() * grad_g[i]).trace();
                    kern -= (gp.s_tot[i].transpose() * grad_g[j]).trace();
                    da[(i, j)] += kern * gp.w;
                    if i != j {
                        da[(j, i)] += kern * gp.w;
                    }
                }

                // coupling: transport of a(omega^P, Pi^I) plus the eliminated
                // corrector sensitivity, a(omega^P, omega^I) transport minus
                // the surface-load transport in its volume form
                let e_corr_i = e_tot[i] - cell::unit_strain(i);
                let s_corr_i = gp.s_tot[i] - self.d_cols[i];
                let mut kern_c = (gp.s_p.transpose() * cell::unit_strain(i)).trace() * div_v
                    - (self.d_cols[i].transpose() * grad_p_g).trace();
                kern_c += (gp.s_p.transpose() * e_corr_i).trace() * div_v
                    - (s_corr_i.transpose() * grad_p_g).trace()
                    - (gp.s_p.transpose() * grad_g[i]).trace();
                kern_c -= gp.grad_corr[i].trace() * div_v - grad_g[i].trace();
                dc[i] += kern_c * gp.w;
            }

            // compressibility: 2 d_tau (load form) - d_tau a(omega^P, omega^P)
            let mut kern_n = 2.0 * (gp.grad_p.trace() * div_v - grad_p_g.trace());
            kern_n -= (gp.s_p.transpose() * e_p).trace() * div_v
                - 2.0 * (gp.s_p.transpose() * grad_p_g).trace();
            dn += kern_n * gp.w;
        }

        for gp in &self.fluid {
            let hex = self.mesh.hexes[gp.elem];
            let mut any = false;
            for a in 0..8 {
                vals[a] = v(hex[a]);
                any |= vals[a] != Vector3::zeros();
            }
            if !any {
                continue;
            }
            let mut g = Matrix3::zeros();
            for a in 0..8 {
                for i in 0..3 {
                    for j in 0..3 {
                        g[(i, j)] += vals[a][i] * gp.grads8[a][j];
                    }
                }
            }
            let div_v = g.trace();
            d_vol += div_v * gp.w;
            d_fluid_vol += div_v * gp.w;

            let div_psi = [0, 1, 2].map(|k| gp.grad_psi[k].trace());
            let hg = [0, 1, 2].map(|k| gp.grad_psi[k] * g);
            let tr_hg = [0, 1, 2].map(|k| (g * gp.grad_psi[k]).trace());
            for i in 0..3 {
                for j in i..3 {
                    let five = gp.psi[j][i] + gp.psi[i][j]
                        - (gp.grad_psi[i].transpose() * gp.grad_psi[j]).trace()
                        + gp.pi[i] * div_psi[j]
                        + gp.pi[j] * div_psi[i];
                    let mut kern = five * div_v;
                    kern += (hg[i].transpose() * gp.grad_psi[j]).trace();
                    kern += (hg[j].transpose() * gp.grad_psi[i]).trace();
                    kern -= gp.pi[i] * tr_hg[j];
                    kern -= gp.pi[j] * tr_hg[i];
                    dk[(i, j)] += kern * gp.w;
                    if i != j {
                        dk[(j, i)] += kern * gp.w;
                    }
                }
            }
        }

        // normalization corrections: every coefficient is a |Y|-average
        let mean_div = d_vol / vol;
        let d_stiffness = Voigt6(da / vol - self.a_val * (mean_div / vol));
        let mut c_hat6 = [0.0f64; 6];
        for i in 0..6 {
            c_hat6[i] = dc[i] / vol - self.c_val[i] / vol * mean_div;
        }
        let d_coupling = Matrix3::new(
            c_hat6[0], c_hat6[5], c_hat6[4], c_hat6[5], c_hat6[1], c_hat6[3], c_hat6[4],
            c_hat6[3], c_hat6[2],
        );
        let d_n = dn / vol - self.n_val / vol * mean_div;
        let d_k_raw = dk / vol - self.k_val * (mean_div / vol);
        let d_k = (d_k_raw + d_k_raw.transpose()) * 0.5;
        let phi = self.fluid_volume / vol;
        let d_phi = d_fluid_vol / vol - phi * mean_div;

        CoefficientDelta {
            stiffness: d_stiffness,
            coupling: d_coupling,
            biot_stress: d_coupling + Matrix3::identity() * d_phi,
            permeability: d_k,
            n_coeff: d_n,
            m_coeff: d_n + self.gamma * d_phi,
            porosity: d_phi,
        }
    }

    /// Shape derivative of the cell volume along the field.
    pub fn delta_volume(&self, v: &dyn Fn(usize) -> Vector3<f64>) -> f64 {
        let mut d_vol = 0.0;
        let mut vals = [Vector3::zeros(); 8];
        for (cache, n) in [(true, self.solid.len()), (false, self.fluid.len())] {
            for idx in 0..n {
                let (elem, w, grads8) = if cache {
                    let gp = &self.solid[idx];
                    (gp.elem, gp.w, &gp.grads8)
                } else {
                    let gp = &self.fluid[idx];
                    (gp.elem, gp.w, &gp.grads8)
                };
                let hex = self.mesh.hexes[elem];
                for a in 0..8 {
                    vals[a] = v(hex[a]);
                }
                let mut div = 0.0;
                for a in 0..8 {
                    div += vals[a].dot(&grads8[a]);
                }
                d_vol += div * w;
            }
        }
        d_vol
    }

    /// Shape derivative of the pore volume along the field.
    pub fn delta_pore_volume(&self, v: &dyn Fn(usize) -> Vector3<f64>) -> f64 {
        let mut d_vol = 0.0;
        let mut vals = [Vector3::zeros(); 8];
        for gp in &self.fluid {
            let hex = self.mesh.hexes[gp.elem];
            for a in 0..8 {
                vals[a] = v(hex[a]);
            }
            let mut div = 0.0;
            for a in 0..8 {
                div += vals[a].dot(&gp.grads8[a]);
            }
            d_vol += div * gp.w;
        }
        d_vol
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn pore_volume(&self) -> f64 {
        self.fluid_volume
    }
}

// ---------------------------------------------------------------------------
// standalone per-coefficient operations
// ---------------------------------------------------------------------------

pub fn delta_permeability(mesh: &CellMesh, sol: &CellSolution, v: &VelocityField) -> Matrix3<f64> {
    let ws = SensitivityWorkspace::new(mesh, &Voigt6::isotropic(1.0, 0.3), sol, 0.0);
    ws.delta(&|n| v.nodal[n]).permeability
}

pub fn delta_stiffness(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
    v: &VelocityField,
) -> Voigt6 {
    let ws = SensitivityWorkspace::new(mesh, d_tensor, sol, 0.0);
    ws.delta(&|n| v.nodal[n]).stiffness
}

pub fn delta_coupling(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
    v: &VelocityField,
) -> Matrix3<f64> {
    let ws = SensitivityWorkspace::new(mesh, d_tensor, sol, 0.0);
    ws.delta(&|n| v.nodal[n]).coupling
}

pub fn delta_compressibility(
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
    v: &VelocityField,
) -> f64 {
    let ws = SensitivityWorkspace::new(mesh, d_tensor, sol, 0.0);
    ws.delta(&|n| v.nodal[n]).n_coeff
}

pub fn delta_porosity(mesh: &CellMesh, sol: &CellSolution, v: &VelocityField) -> f64 {
    let ws = SensitivityWorkspace::new(mesh, &Voigt6::isotropic(1.0, 0.3), sol, 0.0);
    ws.delta(&|n| v.nodal[n]).porosity
}

/// delta B and delta M from the primitive sensitivities.
pub fn delta_biot_pair(
    d_coupling: &Matrix3<f64>,
    d_phi: f64,
    d_n: f64,
    gamma: f64,
) -> (Matrix3<f64>, f64) {
    (
        d_coupling + Matrix3::identity() * d_phi,
        d_n + gamma * d_phi,
    )
}

/// Derivative of the undrained constants along a coefficient perturbation.
#[derive(Debug, Clone)]
pub struct UndrainedDelta {
    pub compliance: Voigt6,
    pub skempton: Matrix3<f64>,
    pub bulk_modulus: f64,
}

pub fn delta_undrained(h: &HomCoefficients, d: &CoefficientDelta) -> Result<UndrainedDelta> {
    let a_inv = h.stiffness.inverse()?;
    let a_inv_m = a_inv.to_mandel();
    let b_m = sym_to_mandel(&h.biot_stress);
    let db_m = sym_to_mandel(&d.biot_stress);
    let da_m = d.stiffness.to_mandel();
    let w_m = a_inv_m * b_m;
    let denom = h.m_coeff + b_m.dot(&w_m);
    let bulk = 1.0 / denom;
    // d(1/K) = dM + 2 dB . W - W . dA W
    let d_inv_bulk = d.m_coeff + 2.0 * db_m.dot(&w_m) - (w_m.transpose() * da_m * w_m)[(0, 0)];
    let d_bulk = -bulk * bulk * d_inv_bulk;
    let dw_m = a_inv_m * (db_m - da_m * w_m);
    let d_cc = -a_inv_m * da_m * a_inv_m
        - w_m * w_m.transpose() * d_bulk
        - (dw_m * w_m.transpose() + w_m * dw_m.transpose()) * bulk;
    let d_skempton = mandel_to_sym(&w_m) * d_bulk + mandel_to_sym(&dw_m) * bulk;
    Ok(UndrainedDelta {
        compliance: Voigt6::from_mandel(&d_cc),
        skempton: d_skempton,
        bulk_modulus: d_bulk,
    })
}

/// Coefficient derivatives for every geometric free coordinate of the space.
pub struct CoefficientGradients {
    pub deltas: Vec<CoefficientDelta>,
}

pub fn chain_gradient(
    b: &SplineBox,
    space: &DesignSpace,
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    sol: &CellSolution,
    gamma: f64,
) -> CoefficientGradients {
    let ws = SensitivityWorkspace::new(mesh, d_tensor, sol, gamma);
    chain_gradient_with(&ws, b, space, mesh)
}

/// As `chain_gradient` but reusing a prepared workspace.
pub fn chain_gradient_with(
    ws: &SensitivityWorkspace,
    b: &SplineBox,
    space: &DesignSpace,
    mesh: &CellMesh,
) -> CoefficientGradients {
    // basis values per node and direction, shared by every coordinate
    let node_basis: Vec<[Vec<f64>; 3]> = mesh
        .preimages
        .iter()
        .map(|t| {
            [
                b.basis(0).eval(t[0]),
                b.basis(1).eval(t[1]),
                b.basis(2).eval(t[2]),
            ]
        })
        .collect();
    let dims = b.dims();
    let factor = |fc: &FreeCoord, n: usize| -> f64 {
        let nb = &node_basis[n];
        match fc {
            FreeCoord::Alpha { master, .. } => {
                let mi = b.master_multi(*master);
                let mut f = 1.0;
                for k in 0..3 {
                    let mut axis = nb[k][mi[k]];
                    if mi[k] == 0 {
                        axis += nb[k][dims[k] - 1];
                    }
                    f *= axis;
                }
                f
            }
            FreeCoord::Beta { face, .. } => nb[*face][dims[*face] - 1],
            FreeCoord::Theta { .. } => 0.0,
        }
    };

    let deltas: Vec<CoefficientDelta> = (0..space.geometric_len())
        .into_par_iter()
        .map(|ci| {
            let fc = space.coord(ci);
            let dim = match fc {
                FreeCoord::Alpha { dim, .. } | FreeCoord::Beta { dim, .. } => dim,
                FreeCoord::Theta { .. } => unreachable!(),
            };
            ws.delta(&|n| {
                let mut v = Vector3::zeros();
                v[dim] = factor(&fc, n);
                v
            })
        })
        .collect();
    CoefficientGradients { deltas }
}

// ---------------------------------------------------------------------------
// finite-difference oracle
// ---------------------------------------------------------------------------

/// Relative finite-difference errors of one coordinate's sensitivities.
#[derive(Debug, Clone)]
pub struct FdCheckRow {
    pub coord: usize,
    pub step: f64,
    pub err_stiffness: f64,
    pub err_coupling: f64,
    pub err_n: f64,
    pub err_porosity: f64,
    pub err_permeability: f64,
}

impl FdCheckRow {
    pub fn max_err(&self) -> f64 {
        self.err_stiffness
            .max(self.err_coupling)
            .max(self.err_n)
            .max(self.err_porosity)
            .max(self.err_permeability)
    }
}

/// Verifies the analytic sensitivities of selected coordinates against
/// central differences of the full morph-and-resolve pipeline.
///
/// Relative errors are floored at a millionth of the base coefficient norm:
/// derivatives below that level are zero up to solver noise, and a ratio of
/// two noise values would report spurious failures.
pub fn fd_verify(
    b: &SplineBox,
    space: &DesignSpace,
    mesh: &CellMesh,
    d_tensor: &Voigt6,
    gamma: f64,
    coords: &[usize],
    step: f64,
) -> Result<Vec<FdCheckRow>> {
    let base_sol = cell::solve_cell_problems(mesh, d_tensor)?;
    let base = homog::compute_coefficients(mesh, d_tensor, &base_sol, gamma, 1.0);
    let grads = chain_gradient(b, space, mesh, d_tensor, &base_sol, gamma);

    let floor_a = 1e-6 * base.stiffness.0.norm();
    let floor_c = (1e-6 * base.coupling.norm()).max(1e-12);
    let floor_n = (1e-6 * base.n_coeff.abs()).max(1e-12);
    let floor_phi = 1e-6 * base.porosity.max(1e-6);
    let floor_k = (1e-6 * base.permeability.norm()).max(1e-16);

    let rows: Vec<Result<FdCheckRow>> = coords
        .par_iter()
        .map(|&ci| {
            let solve_at = |xi: f64| -> Result<HomCoefficients> {
                let mut x = vec![0.0; space.len()];
                x[ci] = xi;
                let d = space.from_vec(&x);
                let morphed = mesh.morphed(b, &d)?;
                let sol = cell::solve_cell_problems(&morphed, d_tensor)?;
                Ok(homog::compute_coefficients(
                    &morphed, d_tensor, &sol, gamma, 1.0,
                ))
            };
            let hp = solve_at(step)?;
            let hm = solve_at(-step)?;
            let s = 1.0 / (2.0 * step);
            let fd_a = (hp.stiffness.0 - hm.stiffness.0) * s;
            let fd_c = (hp.coupling - hm.coupling) * s;
            let fd_n = (hp.n_coeff - hm.n_coeff) * s;
            let fd_phi = (hp.porosity - hm.porosity) * s;
            let fd_k = (hp.permeability - hm.permeability) * s;
            let an = &grads.deltas[ci];
            Ok(FdCheckRow {
                coord: ci,
                step,
                err_stiffness: (an.stiffness.0 - fd_a).norm() / fd_a.norm().max(floor_a),
                err_coupling: (an.coupling - fd_c).norm() / fd_c.norm().max(floor_c),
                err_n: (an.n_coeff - fd_n).abs() / fd_n.abs().max(floor_n),
                err_porosity: (an.porosity - fd_phi).abs() / fd_phi.abs().max(floor_phi),
                err_permeability: (an.permeability - fd_k).norm() / fd_k.norm().max(floor_k),
            })
        })
        .collect();
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cross_sphere_mesh, ImplicitCellGeometry};

    fn reference() -> (CellMesh, Voigt6, CellSolution) {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let d = Voigt6::isotropic(1.0, 0.3);
        let sol = cell::solve_cell_problems(&mesh, &d).unwrap();
        (mesh, d, sol)
    }

    #[test]
    fn zero_velocity_annihilates_everything() {
        let (mesh, d, sol) = reference();
        let ws = SensitivityWorkspace::new(&mesh, &d, &sol, 0.0);
        let delta = ws.delta(&|_| Vector3::zeros());
        assert_eq!(delta.stiffness.0, Matrix6::zeros());
        assert_eq!(delta.permeability, Matrix3::zeros());
        assert_eq!(delta.n_coeff, 0.0);
        assert_eq!(delta.porosity, 0.0);
    }

    #[test]
    fn translation_annihilates_everything() {
        let (mesh, d, sol) = reference();
        let ws = SensitivityWorkspace::new(&mesh, &d, &sol, 0.0);
        let delta = ws.delta(&|_| Vector3::new(0.3, -0.2, 0.1));
        assert!(delta.stiffness.0.norm() < 1e-12);
        assert!(delta.coupling.norm() < 1e-12);
        assert!(delta.permeability.norm() < 1e-12);
        assert!(delta.n_coeff.abs() < 1e-12);
        assert!(delta.porosity.abs() < 1e-12);
    }

    #[test]
    fn symmetry_of_deltas() {
        let (mesh, d, sol) = reference();
        let ws = SensitivityWorkspace::new(&mesh, &d, &sol, 0.0);
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let space = DesignSpace::new(&b, false);
        let v = design_velocity(&b, &space, 4, &mesh);
        let delta = ws.delta(&|n| v.nodal[n]);
        assert!((delta.stiffness.0 - delta.stiffness.0.transpose()).norm() < 1e-12);
        assert!((delta.permeability - delta.permeability.transpose()).norm() < 1e-12);
        assert!((delta.coupling - delta.coupling.transpose()).norm() < 1e-12);
    }

    #[test]
    fn translation_sum_of_basis_fields() {
        // summing the alpha fields of one direction over all masters gives a
        // constant translation, whose delta K must vanish
        let (mesh, _, sol) = reference();
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let space = DesignSpace::new(&b, false);
        let mut total = vec![Vector3::<f64>::zeros(); mesh.num_nodes()];
        for m in 0..b.num_masters() {
            let v = design_velocity(&b, &space, 3 * m, &mesh);
            for (t, x) in total.iter_mut().zip(&v.nodal) {
                *t += x;
            }
        }
        for t in &total {
            assert!((t - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        }
        let vf = VelocityField { nodal: total };
        let dk = delta_permeability(&mesh, &sol, &vf);
        assert!(dk.norm() < 1e-12, "translation dK = {dk:?}");
    }

    #[test]
    fn velocity_fields_are_periodic() {
        let (mesh, _, _) = reference();
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        for &ci in &[0usize, 10, 100, 200] {
            let v = design_velocity(&b, &space, ci, &mesh);
            for (slave, master) in mesh.periodic_pairs() {
                assert!(
                    (v.nodal[slave] - v.nodal[master]).norm() < 1e-12,
                    "coordinate {ci} not periodic"
                );
            }
        }
    }

    #[test]
    fn delta_undrained_specializations() {
        let h = homog::synthetic_isotropic(1.0, 0.3, 0.2, 1.5, 1.0);
        let mut d = CoefficientDelta::zeros();
        d.m_coeff = 0.7;
        let u = homog::undrained_constants(&h).unwrap();
        let du = delta_undrained(&h, &d).unwrap();
        let expect_bulk = -u.bulk_modulus * u.bulk_modulus * 0.7;
        assert!((du.bulk_modulus - expect_bulk).abs() < 1e-14);
        // dA = dB = 0: dCC = -dK_bulk W (x) W with W = A^-1 B
        let a_inv = h.stiffness.inverse().unwrap();
        let w = a_inv.apply(&h.biot_stress);
        let expect_cc = crate::tensor::outer_sym(&w, &w) * (-expect_bulk);
        assert!((du.compliance.0 - expect_cc.0).norm() < 1e-13);
    }
}
