//! Per-element local design problems of the two-scale linearization.
//!
//! For a selected macroscopic element, the state/adjoint pairings are frozen
//! into four tensors and the local objective becomes linear in the effective
//! coefficients. The microstructure is then optimized over the spline-box
//! coordinates plus a cell rotation, under the usual injectivity rows and
//! the unit cell volume equality.

use nalgebra::{Matrix3, Vector3};

use super::ElementTensors;
use crate::cell::{self, CellSolution};
use crate::error::Result;
use crate::homog::{self, HomCoefficients};
use crate::matopt::{
    cell_volume_from_beta, solve_slp, EvalGradients, EvalValues, OptimizationRecord, SlpOptions,
    SlpProblem,
};
use crate::mesh::CellMesh;
use crate::sens::{self, SensitivityWorkspace};
use crate::spline::{
    injectivity_constraints, verify_injectivity_by_sampling, ConstraintRow, DesignSpace,
    FreeCoord, LinearConstraintSet, SplineBox,
};
use crate::tensor::{rotate_sym, rotation, Voigt6};

/// Term-wise decomposition of the local objective.
#[derive(Debug, Clone, Copy)]
pub struct FeTerms {
    pub stiffness: f64,
    pub pressure_coupling: f64,
    pub permeability_constraint: f64,
    pub permeability_adjoint: f64,
}

impl FeTerms {
    pub fn total(&self) -> f64 {
        self.stiffness + self.pressure_coupling + self.permeability_constraint
            + self.permeability_adjoint
    }

    /// Relative share of the permeability terms in the total magnitude.
    pub fn permeability_share(&self) -> f64 {
        let perm = self.permeability_constraint.abs() + self.permeability_adjoint.abs();
        let all = self.stiffness.abs() + self.pressure_coupling.abs() + perm;
        if all == 0.0 {
            0.0
        } else {
            perm / all
        }
    }
}

/// Local two-scale problem on one element (or element group).
pub struct LocalProblem {
    pub tensors: ElementTensors,
    pub lambda: f64,
    pub spline: SplineBox,
    pub space: DesignSpace,
    pub mesh: CellMesh,
    pub elasticity: Voigt6,
    pub fluid_compressibility: f64,
    pub viscosity: f64,
    linear: LinearConstraintSet,
}

pub struct LocalState {
    pub mesh: CellMesh,
    pub solution: CellSolution,
    pub coefficients: HomCoefficients,
    pub rotated: HomCoefficients,
    pub terms: FeTerms,
}

impl LocalProblem {
    /// Rotation is restricted to the third axis by default; the other two
    /// angles are pinned to zero through linear rows.
    pub fn new(
        tensors: ElementTensors,
        lambda: f64,
        spline: SplineBox,
        mesh: CellMesh,
        elasticity: Voigt6,
        fluid_compressibility: f64,
        viscosity: f64,
        rotation_axes: [bool; 3],
    ) -> Result<LocalProblem> {
        let space = DesignSpace::new(&spline, true);
        let mut linear = injectivity_constraints(&spline, &space);
        let theta0 = space.geometric_len();
        for axis in 0..3 {
            let coord = theta0 + axis;
            if rotation_axes[axis] {
                // 0 <= theta <= pi/2
                linear.rows.push(ConstraintRow {
                    coeffs: vec![(coord, 1.0)],
                    rhs: std::f64::consts::FRAC_PI_2,
                    plane: 0,
                    axis,
                    cell: [0, 0, 0],
                });
                linear.rows.push(ConstraintRow {
                    coeffs: vec![(coord, -1.0)],
                    rhs: 0.0,
                    plane: 1,
                    axis,
                    cell: [0, 0, 0],
                });
            } else {
                // pinned at zero
                linear.rows.push(ConstraintRow {
                    coeffs: vec![(coord, 1.0)],
                    rhs: 0.0,
                    plane: 0,
                    axis,
                    cell: [0, 0, 0],
                });
                linear.rows.push(ConstraintRow {
                    coeffs: vec![(coord, -1.0)],
                    rhs: 0.0,
                    plane: 1,
                    axis,
                    cell: [0, 0, 0],
                });
            }
        }
        Ok(LocalProblem {
            tensors,
            lambda,
            spline,
            space,
            mesh,
            elasticity,
            fluid_compressibility,
            viscosity,
            linear,
        })
    }

    pub fn terms(
        &self,
        stiffness: &Voigt6,
        biot: &Matrix3<f64>,
        permeability: &Matrix3<f64>,
    ) -> FeTerms {
        let conductivity = permeability / self.viscosity;
        FeTerms {
            stiffness: stiffness.full_contract(&self.tensors.strain_pair),
            pressure_coupling: -(biot.transpose() * self.tensors.pressure_strain).trace(),
            permeability_constraint: -self.lambda
                * (conductivity.transpose() * self.tensors.flow_lift).trace(),
            permeability_adjoint: (conductivity.transpose() * self.tensors.flow_adjoint)
                .trace(),
        }
    }

    /// Terms at a given design (solves the cell problems).
    pub fn terms_at(&self, x: &[f64]) -> Result<FeTerms> {
        let (_, state) = self.evaluate(x)?;
        Ok(state.terms)
    }
}

impl SlpProblem for LocalProblem {
    type State = LocalState;

    fn dim(&self) -> usize {
        self.space.len()
    }

    fn linear(&self) -> &LinearConstraintSet {
        &self.linear
    }

    fn evaluate(&self, x: &[f64]) -> Result<(EvalValues, LocalState)> {
        let design = self.space.from_vec(x);
        let morphed = self.mesh.morphed(&self.spline, &design)?;
        let solution = cell::solve_cell_problems(&morphed, &self.elasticity)?;
        let coefficients = homog::compute_coefficients(
            &morphed,
            &self.elasticity,
            &solution,
            self.fluid_compressibility,
            self.viscosity,
        );
        let rotated = homog::rotate_coefficients(&coefficients, &design.theta).value;
        let terms = self.terms(
            &rotated.stiffness,
            &rotated.biot_stress,
            &rotated.permeability,
        );
        let objective = terms.total();
        let constraints = vec![cell_volume_from_beta(&design.beta) - 1.0];
        Ok((
            EvalValues {
                objective,
                report_objective: objective,
                constraints,
                is_equality: vec![true],
            },
            LocalState {
                mesh: morphed,
                solution,
                coefficients,
                rotated,
                terms,
            },
        ))
    }

    fn gradients(&self, x: &[f64], state: &LocalState) -> Result<EvalGradients> {
        let design = self.space.from_vec(x);
        let ws = SensitivityWorkspace::new(
            &state.mesh,
            &self.elasticity,
            &state.solution,
            self.fluid_compressibility,
        );
        let grads = sens::chain_gradient_with(&ws, &self.spline, &self.space, &state.mesh);
        let rot = rotation(&design.theta);
        let rotated = homog::rotate_coefficients(&state.coefficients, &design.theta);

        let n = self.space.len();
        let mut objective = vec![0.0; n];
        let mut volume_row = vec![0.0; n];
        let beta_grad = {
            let e1 = Vector3::x() + design.beta[0];
            let e2 = Vector3::y() + design.beta[1];
            let e3 = Vector3::z() + design.beta[2];
            [e2.cross(&e3), e3.cross(&e1), e1.cross(&e2)]
        };

        for ci in 0..n {
            match self.space.coord(ci) {
                FreeCoord::Alpha { .. } | FreeCoord::Beta { .. } => {
                    let d = &grads.deltas[ci];
                    // rotate the coefficient derivatives into the cell frame
                    let da = d.stiffness.rotate(&rot);
                    let db = rotate_sym(&rot, &d.biot_stress);
                    let dk = rotate_sym(&rot, &d.permeability);
                    objective[ci] = self.terms(&da, &db, &dk).total();
                    if let FreeCoord::Beta { face, dim } = self.space.coord(ci) {
                        volume_row[ci] = beta_grad[face][dim];
                    }
                }
                FreeCoord::Theta { axis } => {
                    let d = &rotated.dtheta[axis];
                    objective[ci] = self
                        .terms(&d.stiffness, &d.biot_stress, &d.permeability)
                        .total();
                }
            }
        }

        Ok(EvalGradients {
            objective,
            constraints: vec![volume_row],
        })
    }

    fn injectivity_min_det(&self, x: &[f64], samples: usize) -> Option<f64> {
        if samples == 0 {
            return None;
        }
        let design = self.space.from_vec(x);
        Some(verify_injectivity_by_sampling(
            &self.spline,
            &design,
            samples,
        ))
    }
}

/// Runs the local optimization for one element's tensors.
pub fn two_scale_local_optimize(
    problem: &LocalProblem,
    x0: Vec<f64>,
    opts: &SlpOptions,
) -> Result<OptimizationRecord<LocalState>> {
    solve_slp(problem, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cross_sphere_mesh, ImplicitCellGeometry};

    fn small_problem(lambda: f64, tensors: ElementTensors) -> LocalProblem {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let spline = SplineBox::build([2, 2, 2], [2, 2, 2], 0.03).unwrap();
        LocalProblem::new(
            tensors,
            lambda,
            spline,
            mesh,
            Voigt6::isotropic(1.0, 0.3),
            0.0,
            1.0,
            [false, false, true],
        )
        .unwrap()
    }

    #[test]
    fn zero_tensors_converge_immediately() {
        let p = small_problem(-1.0, ElementTensors::zeros());
        let x0 = vec![0.0; p.dim()];
        let opts = SlpOptions {
            max_iters: 3,
            injectivity_samples: 0,
            ..Default::default()
        };
        let rec = two_scale_local_optimize(&p, x0, &opts).unwrap();
        assert!(rec.converged, "{}", rec.message);
        assert_eq!(rec.iterates.len(), 1);
    }

    #[test]
    fn theta_gradient_matches_fd() {
        use nalgebra::Matrix6;
        let mut tensors = ElementTensors::zeros();
        // synthetic anisotropic pairing data
        tensors.strain_pair = Matrix6::from_fn(|i, j| ((i + 2 * j) % 5) as f64 * 0.1);
        tensors.pressure_strain = Matrix3::from_fn(|i, j| 0.05 * (i as f64 - j as f64));
        tensors.flow_adjoint = Matrix3::from_fn(|i, j| 0.2 * ((i * j) as f64 + 1.0));
        tensors.flow_lift = Matrix3::identity() * 0.1;
        let p = small_problem(-1.0, tensors);
        let theta_idx = p.space.geometric_len() + 2;
        let mut x = vec![0.0; p.dim()];
        x[theta_idx] = 0.3;
        let (_, state) = p.evaluate(&x).unwrap();
        let g = p.gradients(&x, &state).unwrap();
        let h = 1e-6;
        x[theta_idx] = 0.3 + h;
        let (vp, _) = p.evaluate(&x).unwrap();
        x[theta_idx] = 0.3 - h;
        let (vm, _) = p.evaluate(&x).unwrap();
        let fd = (vp.objective - vm.objective) / (2.0 * h);
        let rel = (g.objective[theta_idx] - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-6, "theta gradient rel err {rel}");
    }
}
