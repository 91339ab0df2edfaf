//! Material design problems over the spline-box coordinates.
//!
//! Eight problem flavors pair a stiffness / permeability / undrained
//! compliance objective with directional or weighted-sum bounds, a cell
//! volume equality, and optionally pore volume preservation. All of them run
//! on the same SLP driver with the injectivity rows kept exactly feasible.

mod lp;
mod slp;

pub use slp::{
    solve_slp, EvalGradients, EvalValues, IterateRecord, OptimizationRecord, SlpOptions,
    SlpProblem,
};

use nalgebra::{Matrix3, Vector3};

use crate::cell::{self, CellSolution};
use crate::error::{Error, Result};
use crate::homog::{self, HomCoefficients};
use crate::mesh::CellMesh;
use crate::sens::{self, SensitivityWorkspace};
use crate::spline::{
    injectivity_constraints, verify_injectivity_by_sampling, DesignSpace, FreeCoord,
    LinearConstraintSet, SplineBox,
};
use crate::tensor::Voigt6;

/// Strain modes, directions, weights and bounds of the design criteria.
#[derive(Debug, Clone)]
pub struct DesignCriteria {
    pub strain_modes: [Matrix3<f64>; 3],
    pub directions: [Vector3<f64>; 3],
    pub stiffness_weights: [f64; 3],
    pub permeability_weights: [f64; 3],
    pub kappa0: Option<f64>,
    pub kappa1: Option<f64>,
    pub s0: Option<f64>,
    pub s1: Option<f64>,
    /// Pore volume reference for the volume-preserving flavors.
    pub pore_volume_ref: f64,
    pub stress_mode: Matrix3<f64>,
}

impl DesignCriteria {
    /// Axis-aligned modes: unit axial strains and coordinate directions, so
    /// the directional stiffness of the initial design reads A_kkkk.
    pub fn axis_aligned() -> Self {
        let mut modes = [Matrix3::zeros(); 3];
        for k in 0..3 {
            modes[k][(k, k)] = 1.0;
        }
        DesignCriteria {
            strain_modes: modes,
            directions: [Vector3::x(), Vector3::y(), Vector3::z()],
            stiffness_weights: [1.0 / 3.0; 3],
            permeability_weights: [1.0 / 3.0; 3],
            kappa0: None,
            kappa1: None,
            s0: None,
            s1: None,
            pore_volume_ref: 0.0,
            stress_mode: Matrix3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let combo = self
            .strain_modes
            .iter()
            .zip(&self.stiffness_weights)
            .fold(Matrix3::zeros(), |acc: Matrix3<f64>, (m, &w)| acc + m * w);
        let wsum: f64 = self.stiffness_weights.iter().map(|w| w.abs()).sum();
        if wsum > 0.0 && combo.norm() < 1e-14 {
            return Err(Error::Config(
                "strain modes are linearly dependent under the given weights".into(),
            ));
        }
        let g = &self.directions;
        if g[0].dot(&g[1].cross(&g[2])).abs() < 1e-14 {
            return Err(Error::Config("directions are coplanar".into()));
        }
        Ok(())
    }
}

/// Scalar criteria of one coefficient set.
#[derive(Debug, Clone)]
pub struct Objectives {
    pub stiffness_k: [f64; 3],
    pub stiffness_sum: f64,
    pub permeability_k: [f64; 3],
    pub permeability_sum: f64,
    pub undrained_compliance: Option<f64>,
}

pub fn eval_objectives(h: &HomCoefficients, crit: &DesignCriteria) -> Objectives {
    let mut stiffness_k = [0.0; 3];
    let mut permeability_k = [0.0; 3];
    for k in 0..3 {
        stiffness_k[k] = h.stiffness.quad_form(&crit.strain_modes[k]);
        permeability_k[k] = (crit.directions[k].transpose()
            * h.permeability
            * crit.directions[k])[(0, 0)];
    }
    let stiffness_sum = (0..3).map(|k| crit.stiffness_weights[k] * stiffness_k[k]).sum();
    let permeability_sum = (0..3)
        .map(|k| crit.permeability_weights[k] * permeability_k[k])
        .sum();
    let undrained_compliance = homog::undrained_constants(h)
        .ok()
        .map(|u| u.compliance.quad_form(&crit.stress_mode));
    Objectives {
        stiffness_k,
        stiffness_sum,
        permeability_k,
        permeability_sum,
        undrained_compliance,
    }
}

/// The problem flavors; names follow the stiffness/permeability pairing with
/// the constrained quantity second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Maximize stiffness, directional permeability bounds ("S/P").
    StiffnessPerm,
    /// As above plus pore volume preservation ("S/P-bis").
    StiffnessPermVol,
    /// Maximize stiffness, weighted permeability sum bound ("S/PX").
    StiffnessPermSum,
    /// Maximize permeability, directional stiffness bounds ("P/S").
    PermStiffness,
    /// As above plus pore volume preservation ("P/S-bis").
    PermStiffnessVol,
    /// Maximize permeability, weighted stiffness sum bound ("P/SX").
    PermStiffnessSum,
    /// Maximize permeability, directional and sum stiffness bounds ("P/SX'").
    PermStiffnessBoth,
    /// Minimize undrained compliance, stiffness capped ("C/S").
    UndrainedCompliance,
}

impl ProblemKind {
    pub fn paper_name(&self) -> &'static str {
        match self {
            ProblemKind::StiffnessPerm => "S/P",
            ProblemKind::StiffnessPermVol => "S/P-bis",
            ProblemKind::StiffnessPermSum => "S/PX",
            ProblemKind::PermStiffness => "P/S",
            ProblemKind::PermStiffnessVol => "P/S-bis",
            ProblemKind::PermStiffnessSum => "P/SX",
            ProblemKind::PermStiffnessBoth => "P/SX'",
            ProblemKind::UndrainedCompliance => "C/S",
        }
    }

    pub fn from_paper_name(s: &str) -> Result<Self> {
        Ok(match s {
            "S/P" | "SP" => ProblemKind::StiffnessPerm,
            "S/P-bis" | "SP-bis" => ProblemKind::StiffnessPermVol,
            "S/PX" | "SPX" => ProblemKind::StiffnessPermSum,
            "P/S" | "PS" => ProblemKind::PermStiffness,
            "P/S-bis" | "PS-bis" => ProblemKind::PermStiffnessVol,
            "P/SX" | "PSX" => ProblemKind::PermStiffnessSum,
            "P/SX'" | "PSX'" | "PSXp" => ProblemKind::PermStiffnessBoth,
            "C/S" | "CS" => ProblemKind::UndrainedCompliance,
            other => return Err(Error::Config(format!("unknown problem kind {other}"))),
        })
    }

    fn preserves_pore_volume(&self) -> bool {
        matches!(
            self,
            ProblemKind::StiffnessPermVol | ProblemKind::PermStiffnessVol
        )
    }

    /// Checks that exactly the bounds of this formulation are present.
    fn validate_bounds(&self, c: &DesignCriteria) -> Result<()> {
        let expect = |cond: bool, msg: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "bound pattern of {} violated: {msg}",
                    self.paper_name()
                )))
            }
        };
        match self {
            ProblemKind::StiffnessPerm | ProblemKind::StiffnessPermVol => {
                expect(c.kappa0.is_some_and(|v| v > 0.0), "kappa0 > 0 required")?;
                expect(c.kappa1.is_none(), "kappa1 must be disabled")
            }
            ProblemKind::StiffnessPermSum => {
                expect(c.kappa1.is_some_and(|v| v > 0.0), "kappa1 > 0 required")?;
                expect(c.kappa0.is_none(), "kappa0 must be disabled")
            }
            ProblemKind::PermStiffness | ProblemKind::PermStiffnessVol => {
                expect(c.s0.is_some_and(|v| v > 0.0), "s0 > 0 required")?;
                expect(c.s1.is_none(), "s1 must be disabled")
            }
            ProblemKind::PermStiffnessSum => {
                expect(c.s1.is_some_and(|v| v > 0.0), "s1 > 0 required")?;
                expect(c.s0.is_none(), "s0 must be disabled")
            }
            ProblemKind::PermStiffnessBoth => {
                expect(c.s0.is_some_and(|v| v > 0.0), "s0 > 0 required")?;
                expect(c.s1.is_some_and(|v| v > 0.0), "s1 > 0 required")
            }
            ProblemKind::UndrainedCompliance => {
                expect(c.s0.is_some_and(|v| v > 0.0), "s0 > 0 required")?;
                expect(c.s1.is_none(), "s1 must be disabled")
            }
        }
    }
}

/// Lattice edge vectors of the sheared cell and their triple product.
pub fn cell_volume_from_beta(beta: &[Vector3<f64>; 3]) -> f64 {
    let e1 = Vector3::x() + beta[0];
    let e2 = Vector3::y() + beta[1];
    let e3 = Vector3::z() + beta[2];
    e1.dot(&e2.cross(&e3))
}

fn cell_volume_gradient(beta: &[Vector3<f64>; 3]) -> [Vector3<f64>; 3] {
    let e1 = Vector3::x() + beta[0];
    let e2 = Vector3::y() + beta[1];
    let e3 = Vector3::z() + beta[2];
    [e2.cross(&e3), e3.cross(&e1), e1.cross(&e2)]
}

/// One assembled material design problem.
pub struct MaterialProblem {
    pub kind: ProblemKind,
    pub criteria: DesignCriteria,
    pub spline: SplineBox,
    pub space: DesignSpace,
    pub mesh: CellMesh,
    pub elasticity: Voigt6,
    pub fluid_compressibility: f64,
    linear: LinearConstraintSet,
}

/// Cache of one evaluation, reused by the gradient pass.
pub struct MaterialState {
    pub mesh: CellMesh,
    pub solution: CellSolution,
    pub coefficients: HomCoefficients,
    pub objectives: Objectives,
}

impl MaterialProblem {
    pub fn new(
        kind: ProblemKind,
        criteria: DesignCriteria,
        spline: SplineBox,
        mesh: CellMesh,
        elasticity: Voigt6,
        fluid_compressibility: f64,
    ) -> Result<Self> {
        criteria.validate()?;
        kind.validate_bounds(&criteria)?;
        if kind.preserves_pore_volume() && criteria.pore_volume_ref <= 0.0 {
            return Err(Error::Config(
                "pore volume preservation needs a positive reference volume".into(),
            ));
        }
        let space = DesignSpace::new(&spline, false);
        let linear = injectivity_constraints(&spline, &space);
        Ok(MaterialProblem {
            kind,
            criteria,
            spline,
            space,
            mesh,
            elasticity,
            fluid_compressibility,
            linear,
        })
    }

    /// Constraint layout: directional rows, then the sum row, then the cell
    /// volume equality, then (optionally) the pore volume equality. All rows
    /// are normalized by their bound so the LP sees O(1) numbers.
    fn constraint_values(&self, obj: &Objectives, beta: &[Vector3<f64>; 3], pore: f64) -> (Vec<f64>, Vec<bool>) {
        let c = &self.criteria;
        let mut vals = Vec::new();
        let mut eq = Vec::new();
        match self.kind {
            ProblemKind::StiffnessPerm | ProblemKind::StiffnessPermVol => {
                let k0 = c.kappa0.unwrap();
                for k in 0..3 {
                    vals.push((k0 - obj.permeability_k[k]) / k0);
                    eq.push(false);
                }
            }
            ProblemKind::StiffnessPermSum => {
                let k1 = c.kappa1.unwrap();
                vals.push((k1 - obj.permeability_sum) / k1);
                eq.push(false);
            }
            ProblemKind::PermStiffness | ProblemKind::PermStiffnessVol => {
                let s0 = c.s0.unwrap();
                for k in 0..3 {
                    vals.push((s0 - obj.stiffness_k[k]) / s0);
                    eq.push(false);
                }
            }
            ProblemKind::PermStiffnessSum => {
                let s1 = c.s1.unwrap();
                vals.push((s1 - obj.stiffness_sum) / s1);
                eq.push(false);
            }
            ProblemKind::PermStiffnessBoth => {
                let s0 = c.s0.unwrap();
                let s1 = c.s1.unwrap();
                for k in 0..3 {
                    vals.push((s0 - obj.stiffness_k[k]) / s0);
                    eq.push(false);
                }
                vals.push((s1 - obj.stiffness_sum) / s1);
                eq.push(false);
            }
            ProblemKind::UndrainedCompliance => {
                let s0 = c.s0.unwrap();
                for k in 0..3 {
                    vals.push((obj.stiffness_k[k] - s0) / s0);
                    eq.push(false);
                }
            }
        }
        vals.push(cell_volume_from_beta(beta) - 1.0);
        eq.push(true);
        if self.kind.preserves_pore_volume() {
            vals.push((pore - c.pore_volume_ref) / c.pore_volume_ref);
            eq.push(true);
        }
        (vals, eq)
    }

    fn objective_value(&self, obj: &Objectives) -> Result<(f64, f64)> {
        Ok(match self.kind {
            ProblemKind::StiffnessPerm
            | ProblemKind::StiffnessPermVol
            | ProblemKind::StiffnessPermSum => (-obj.stiffness_sum, obj.stiffness_sum),
            ProblemKind::PermStiffness
            | ProblemKind::PermStiffnessVol
            | ProblemKind::PermStiffnessSum
            | ProblemKind::PermStiffnessBoth => (-obj.permeability_sum, obj.permeability_sum),
            ProblemKind::UndrainedCompliance => {
                let v = obj.undrained_compliance.ok_or_else(|| {
                    Error::Domain("undrained compliance undefined for this state".into())
                })?;
                (v, v)
            }
        })
    }
}

impl SlpProblem for MaterialProblem {
    type State = MaterialState;

    fn dim(&self) -> usize {
        self.space.len()
    }

    fn linear(&self) -> &LinearConstraintSet {
        &self.linear
    }

    fn evaluate(&self, x: &[f64]) -> Result<(EvalValues, MaterialState)> {
        let design = self.space.from_vec(x);
        let morphed = self.mesh.morphed(&self.spline, &design)?;
        let solution = cell::solve_cell_problems(&morphed, &self.elasticity)?;
        let coefficients = homog::compute_coefficients(
            &morphed,
            &self.elasticity,
            &solution,
            self.fluid_compressibility,
            1.0,
        );
        let objectives = eval_objectives(&coefficients, &self.criteria);
        let (objective, report) = self.objective_value(&objectives)?;
        let pore = coefficients.porosity * cell_volume_from_beta(&design.beta);
        let (constraints, is_equality) =
            self.constraint_values(&objectives, &design.beta, pore);
        Ok((
            EvalValues {
                objective,
                report_objective: report,
                constraints,
                is_equality,
            },
            MaterialState {
                mesh: morphed,
                solution,
                coefficients,
                objectives,
            },
        ))
    }

    fn gradients(&self, x: &[f64], state: &MaterialState) -> Result<EvalGradients> {
        let design = self.space.from_vec(x);
        let ws = SensitivityWorkspace::new(
            &state.mesh,
            &self.elasticity,
            &state.solution,
            self.fluid_compressibility,
        );
        let grads = sens::chain_gradient_with(&ws, &self.spline, &self.space, &state.mesh);
        let n = self.space.len();
        let c = &self.criteria;
        let h = &state.coefficients;

        // per-coordinate criterion derivatives
        let mut d_stiff_k = vec![[0.0; 3]; n];
        let mut d_perm_k = vec![[0.0; 3]; n];
        let mut d_stiff_sum = vec![0.0; n];
        let mut d_perm_sum = vec![0.0; n];
        let mut d_compliance = vec![0.0; n];
        let mut d_pore = vec![0.0; n];
        let beta_grad = cell_volume_gradient(&design.beta);
        let mut d_cellvol = vec![0.0; n];
        let vol = cell_volume_from_beta(&design.beta);

        for ci in 0..self.space.geometric_len() {
            let delta = &grads.deltas[ci];
            for k in 0..3 {
                d_stiff_k[ci][k] = delta.stiffness.quad_form(&c.strain_modes[k]);
                d_perm_k[ci][k] = (c.directions[k].transpose()
                    * delta.permeability
                    * c.directions[k])[(0, 0)];
            }
            d_stiff_sum[ci] = (0..3).map(|k| c.stiffness_weights[k] * d_stiff_k[ci][k]).sum();
            d_perm_sum[ci] = (0..3)
                .map(|k| c.permeability_weights[k] * d_perm_k[ci][k])
                .sum();
            if self.kind == ProblemKind::UndrainedCompliance {
                let du = sens::delta_undrained(h, delta)?;
                d_compliance[ci] = du.compliance.quad_form(&c.stress_mode);
            }
            if let FreeCoord::Beta { face, dim } = self.space.coord(ci) {
                d_cellvol[ci] = beta_grad[face][dim];
            }
            // pore volume = porosity * cell volume
            d_pore[ci] = delta.porosity * vol + h.porosity * d_cellvol[ci];
        }

        let objective: Vec<f64> = (0..n)
            .map(|ci| match self.kind {
                ProblemKind::StiffnessPerm
                | ProblemKind::StiffnessPermVol
                | ProblemKind::StiffnessPermSum => -d_stiff_sum[ci],
                ProblemKind::PermStiffness
                | ProblemKind::PermStiffnessVol
                | ProblemKind::PermStiffnessSum
                | ProblemKind::PermStiffnessBoth => -d_perm_sum[ci],
                ProblemKind::UndrainedCompliance => d_compliance[ci],
            })
            .collect();

        let mut constraints: Vec<Vec<f64>> = Vec::new();
        match self.kind {
            ProblemKind::StiffnessPerm | ProblemKind::StiffnessPermVol => {
                let k0 = c.kappa0.unwrap();
                for k in 0..3 {
                    constraints.push((0..n).map(|ci| -d_perm_k[ci][k] / k0).collect());
                }
            }
            ProblemKind::StiffnessPermSum => {
                let k1 = c.kappa1.unwrap();
                constraints.push((0..n).map(|ci| -d_perm_sum[ci] / k1).collect());
            }
            ProblemKind::PermStiffness | ProblemKind::PermStiffnessVol => {
                let s0 = c.s0.unwrap();
                for k in 0..3 {
                    constraints.push((0..n).map(|ci| -d_stiff_k[ci][k] / s0).collect());
                }
            }
            ProblemKind::PermStiffnessSum => {
                let s1 = c.s1.unwrap();
                constraints.push((0..n).map(|ci| -d_stiff_sum[ci] / s1).collect());
            }
            ProblemKind::PermStiffnessBoth => {
                let s0 = c.s0.unwrap();
                let s1 = c.s1.unwrap();
                for k in 0..3 {
                    constraints.push((0..n).map(|ci| -d_stiff_k[ci][k] / s0).collect());
                }
                constraints.push((0..n).map(|ci| -d_stiff_sum[ci] / s1).collect());
            }
            ProblemKind::UndrainedCompliance => {
                let s0 = c.s0.unwrap();
                for k in 0..3 {
                    constraints.push((0..n).map(|ci| d_stiff_k[ci][k] / s0).collect());
                }
            }
        }
        constraints.push(d_cellvol.clone());
        if self.kind.preserves_pore_volume() {
            let vref = c.pore_volume_ref;
            constraints.push((0..n).map(|ci| d_pore[ci] / vref).collect());
        }

        Ok(EvalGradients {
            objective,
            constraints,
        })
    }

    fn injectivity_min_det(&self, x: &[f64], samples: usize) -> Option<f64> {
        if samples == 0 {
            return None;
        }
        let design = self.space.from_vec(x);
        Some(verify_injectivity_by_sampling(&self.spline, &design, samples))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cross_sphere_mesh, ImplicitCellGeometry};
    use approx::assert_relative_eq;

    fn reference_problem(kind: ProblemKind, mut crit: DesignCriteria) -> MaterialProblem {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let spline = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        if kind.preserves_pore_volume() {
            crit.pore_volume_ref = mesh.region_volume(crate::mesh::Region::Fluid);
        }
        MaterialProblem::new(kind, crit, spline, mesh, Voigt6::isotropic(1.0, 0.3), 0.0).unwrap()
    }

    #[test]
    fn axis_modes_read_diagonal_stiffness() {
        let h = homog::synthetic_isotropic(1.0, 0.3, 0.2, 1.0, 1e-4);
        let crit = DesignCriteria::axis_aligned();
        let obj = eval_objectives(&h, &crit);
        for k in 0..3 {
            assert_relative_eq!(obj.stiffness_k[k], h.stiffness.0[(k, k)], epsilon = 1e-14);
            assert_relative_eq!(obj.permeability_k[k], 1e-4, epsilon = 1e-18);
        }
    }

    #[test]
    fn bound_patterns_are_validated() {
        let geom = ImplicitCellGeometry::new([0.15, 0.15, 0.15], 0.25).unwrap();
        let mesh = generate_cross_sphere_mesh(&geom, 8).unwrap();
        let spline = SplineBox::build([2, 2, 2], [2, 2, 2], 0.05).unwrap();
        let d = Voigt6::isotropic(1.0, 0.3);
        // S/P without kappa0 must fail
        let crit = DesignCriteria::axis_aligned();
        assert!(MaterialProblem::new(
            ProblemKind::StiffnessPerm,
            crit.clone(),
            spline.clone(),
            mesh.clone(),
            d,
            0.0
        )
        .is_err());
        // P/SX' needs both bounds
        let mut both = DesignCriteria::axis_aligned();
        both.s0 = Some(0.9);
        assert!(MaterialProblem::new(
            ProblemKind::PermStiffnessBoth,
            both.clone(),
            spline.clone(),
            mesh.clone(),
            d,
            0.0
        )
        .is_err());
        both.s1 = Some(0.95);
        assert!(MaterialProblem::new(
            ProblemKind::PermStiffnessBoth,
            both,
            spline,
            mesh,
            d,
            0.0
        )
        .is_ok());
    }

    #[test]
    fn sp_constraint_rows_follow_the_kind() {
        let mut crit = DesignCriteria::axis_aligned();
        crit.kappa0 = Some(2e-5);
        let p = reference_problem(ProblemKind::StiffnessPerm, crit);
        let x = vec![0.0; p.dim()];
        let (values, _) = p.evaluate(&x).unwrap();
        // three directional permeability rows + the volume equality
        assert_eq!(values.constraints.len(), 4);
        assert_eq!(values.is_equality, vec![false, false, false, true]);
        // initial design satisfies the permeability bounds with margin
        for k in 0..3 {
            assert!(values.constraints[k] < 0.0, "row {k} infeasible at start");
        }
        assert!(values.constraints[3].abs() < 1e-12);
    }

    #[test]
    fn volume_equality_row_added_for_bis() {
        let mut crit = DesignCriteria::axis_aligned();
        crit.kappa0 = Some(2e-5);
        let p = reference_problem(ProblemKind::StiffnessPermVol, crit);
        let x = vec![0.0; p.dim()];
        let (values, _) = p.evaluate(&x).unwrap();
        assert_eq!(values.constraints.len(), 5);
        assert!(values.constraints[4].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_fd_on_objective_and_volume() {
        let mut crit = DesignCriteria::axis_aligned();
        crit.kappa0 = Some(2e-5);
        let p = reference_problem(ProblemKind::StiffnessPerm, crit);
        let mut x = vec![0.0; p.dim()];
        let (_, state) = p.evaluate(&x).unwrap();
        let g = p.gradients(&x, &state).unwrap();
        // objective along one interior coordinate
        let ci = 1usize;
        let h = 1e-5;
        x[ci] = h;
        let (vp, _) = p.evaluate(&x).unwrap();
        x[ci] = -h;
        let (vm, _) = p.evaluate(&x).unwrap();
        x[ci] = 0.0;
        let fd = (vp.objective - vm.objective) / (2.0 * h);
        assert_relative_eq!(g.objective[ci], fd, max_relative = 1e-4, epsilon = 1e-10);
        // volume row along a beta coordinate (shear leaves volume, axial changes it)
        let cb = 3 * p.spline.num_masters(); // beta face 0, dim 0
        x[cb] = h;
        let (vp, _) = p.evaluate(&x).unwrap();
        x[cb] = -h;
        let (vm, _) = p.evaluate(&x).unwrap();
        let vol_row = vp.constraints.len() - 1;
        let fd_vol = (vp.constraints[vol_row] - vm.constraints[vol_row]) / (2.0 * h);
        assert_relative_eq!(
            g.constraints[vol_row][cb],
            fd_vol,
            max_relative = 1e-6,
            epsilon = 1e-12
        );
    }
}
