//! Sequential linear programming with trust-region move limits.
//!
//! Each iteration linearizes the objective and the nonlinear constraints at
//! the current design and solves an LP subject to the exact linear
//! injectivity rows plus per-coordinate move limits. Nonlinear rows carry
//! elastic slack variables with an L1 penalty, so the subproblem is always
//! feasible; acceptance is decided by an exact-penalty merit function. The
//! linear rows are clipped to hold strictly at every iterate, which is what
//! keeps the morphed mesh valid throughout the run.

use serde::Serialize;
use std::io::Write;

use super::lp::LpBuilder;
use crate::error::{Error, Result};
use crate::spline::LinearConstraintSet;

/// Values of one evaluation (minimization sense).
#[derive(Debug, Clone)]
pub struct EvalValues {
    pub objective: f64,
    /// Objective in the reporting sign convention (max problems positive).
    pub report_objective: f64,
    pub constraints: Vec<f64>,
    pub is_equality: Vec<bool>,
}

impl EvalValues {
    pub fn violation(&self) -> f64 {
        self.constraints
            .iter()
            .zip(&self.is_equality)
            .map(|(&c, &eq)| if eq { c.abs() } else { c.max(0.0) })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct EvalGradients {
    pub objective: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
}

/// A problem the SLP solver can drive.
pub trait SlpProblem {
    /// Problem-specific cache produced by an evaluation and consumed by the
    /// gradient pass, so accepted iterates are not solved twice.
    type State;

    fn dim(&self) -> usize;
    fn linear(&self) -> &LinearConstraintSet;
    fn evaluate(&self, x: &[f64]) -> Result<(EvalValues, Self::State)>;
    fn gradients(&self, x: &[f64], state: &Self::State) -> Result<EvalGradients>;
    /// Sampled minimum Jacobian determinant of the design map, if the
    /// problem carries a geometry (used by the per-iterate safety check).
    fn injectivity_min_det(&self, x: &[f64], samples: usize) -> Option<f64>;
}

#[derive(Debug, Clone)]
pub struct SlpOptions {
    /// Trust-region cap per coordinate and step, cell units.
    pub move_limit: f64,
    pub max_iters: usize,
    pub tol_step: f64,
    pub tol_pred: f64,
    pub tol_feas: f64,
    /// Exact-penalty weight on constraint violation.
    pub penalty: f64,
    /// Sample count of the per-iterate injectivity safety check (0 disables).
    pub injectivity_samples: usize,
}

impl Default for SlpOptions {
    fn default() -> Self {
        SlpOptions {
            move_limit: 0.02,
            max_iters: 100,
            tol_step: 1e-6,
            tol_pred: 1e-9,
            tol_feas: 1e-8,
            penalty: 1e3,
            injectivity_samples: 1331,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub objective: f64,
    pub merit: f64,
    pub max_violation: f64,
    pub trust_radius: f64,
    pub step_norm: f64,
    pub accepted: bool,
    /// Design coordinates after this iteration.
    #[serde(skip)]
    pub x: Vec<f64>,
}

#[derive(Debug)]
pub struct OptimizationRecord<S> {
    pub iterates: Vec<IterateRecord>,
    pub final_x: Vec<f64>,
    pub final_values: EvalValues,
    pub final_state: S,
    pub initial_values: EvalValues,
    pub converged: bool,
    pub message: String,
}

impl<S> OptimizationRecord<S> {
    /// Convergence log: iteration, objective, max violation, trust radius.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "iter,objective,merit,max_violation,trust_radius,step_norm,accepted"
        )?;
        for r in &self.iterates {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                r.iter, r.objective, r.merit, r.max_violation, r.trust_radius, r.step_norm,
                r.accepted as u8
            )?;
        }
        Ok(())
    }
}

fn max_violation(values: &EvalValues) -> f64 {
    values
        .constraints
        .iter()
        .zip(&values.is_equality)
        .map(|(&c, &eq)| if eq { c.abs() } else { c.max(0.0) })
        .fold(0.0, f64::max)
}

/// Largest fraction of the step that keeps the linear rows satisfied, then
/// backs off by a hair so they hold strictly.
fn clip_to_linear(set: &LinearConstraintSet, x: &[f64], d: &[f64]) -> f64 {
    let mut t: f64 = 1.0;
    for row in &set.rows {
        let r0 = row.residual(x);
        let slope: f64 = row.coeffs.iter().map(|&(i, c)| c * d[i]).sum();
        if slope > 0.0 {
            let tmax = -r0 / slope;
            if tmax < t {
                t = tmax.max(0.0);
            }
        }
    }
    if t < 1.0 {
        t * (1.0 - 1e-9)
    } else {
        t
    }
}

pub fn solve_slp<P: SlpProblem>(
    problem: &P,
    x0: Vec<f64>,
    opts: &SlpOptions,
) -> Result<OptimizationRecord<P::State>> {
    let n = problem.dim();
    assert_eq!(x0.len(), n);
    let linear = problem.linear();
    if !linear.is_feasible(&x0, 1e-9) {
        return Err(Error::InfeasibleStart(format!(
            "initial design violates the linear constraints by {:.3e}",
            linear.max_residual(&x0)
        )));
    }

    let mut x = x0;
    let (mut values, mut state) = problem.evaluate(&x)?;
    let initial_values = values.clone();
    let mut grads = problem.gradients(&x, &state)?;
    // objective scale: value or attainable change per step, whichever is
    // larger, so the LP cost stays O(1)
    let g0 = grads.objective.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let f_scale = values
        .objective
        .abs()
        .max(g0 * opts.move_limit)
        .max(1e-12);
    let rho = opts.penalty;
    let merit =
        |v: &EvalValues| -> f64 { v.objective / f_scale + rho * v.violation() };
    let mut radius = opts.move_limit;
    let mut iterates: Vec<IterateRecord> = Vec::new();
    let mut converged = false;
    let mut message = String::from("max iterations reached");

    for iter in 0..opts.max_iters {
        let m_nl = values.constraints.len();
        // variables: step d (n), slacks s (m_nl)
        let mut lp = LpBuilder::new(n + m_nl);
        for i in 0..n {
            lp.set_cost(i, grads.objective[i] / f_scale);
        }
        for j in 0..m_nl {
            lp.set_cost(n + j, rho);
        }
        // exact linear rows at x + d
        for row in &linear.rows {
            let coeffs: Vec<(usize, f64)> = row
                .coeffs
                .iter()
                .map(|&(i, c)| (i, c))
                .collect();
            lp.add_le(coeffs, -row.residual(&x));
        }
        // move limits
        for i in 0..n {
            lp.add_le(vec![(i, 1.0)], radius);
            lp.add_le(vec![(i, -1.0)], radius);
        }
        // linearized nonlinear rows with elastic slacks
        for j in 0..m_nl {
            let mut coeffs: Vec<(usize, f64)> = grads.constraints[j]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect();
            coeffs.push((n + j, -1.0));
            lp.add_le(coeffs, -values.constraints[j]);
            if values.is_equality[j] {
                let mut neg: Vec<(usize, f64)> = grads.constraints[j]
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (i, -v))
                    .collect();
                neg.push((n + j, -1.0));
                lp.add_le(neg, values.constraints[j]);
            }
            lp.add_le(vec![(n + j, -1.0)], 0.0);
        }

        let z = lp.solve()?;
        let mut d = z[..n].to_vec();
        if std::env::var("POROHOM_SLP_DEBUG").is_ok() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let smax = z[n..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gmax = grads.objective.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let amax = (0..n).max_by(|&a, &b| d[a].abs().partial_cmp(&d[b].abs()).unwrap()).unwrap();
            let moved = d.iter().filter(|v| v.abs() > 1e-6).count();
            eprintln!("slp debug: iter {iter} |d|_inf {dmax:.3e} (coord {amax}, g there {:.3e}) moved {moved} |s|_inf {smax:.3e} |g|_inf {gmax:.3e} f_scale {f_scale:.3e}", grads.objective[amax]);
        }
        let scale = clip_to_linear(linear, &x, &d);
        if scale < 1.0 {
            for v in d.iter_mut() {
                *v *= scale;
            }
        }
        let step_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        // predicted merit decrease of the linearized model
        let lin_obj: f64 = grads
            .objective
            .iter()
            .zip(&d)
            .map(|(g, di)| g * di)
            .sum::<f64>()
            / f_scale;
        let mut lin_viol = 0.0;
        for j in 0..m_nl {
            let c_lin = values.constraints[j]
                + grads.constraints[j]
                    .iter()
                    .zip(&d)
                    .map(|(g, di)| g * di)
                    .sum::<f64>();
            lin_viol += if values.is_equality[j] {
                c_lin.abs()
            } else {
                c_lin.max(0.0)
            };
        }
        let pred = -(lin_obj) + rho * (values.violation() - lin_viol);

        if std::env::var("POROHOM_SLP_DEBUG").is_ok() {
            eprintln!("slp debug: iter {iter} lin_obj {lin_obj:.3e} lin_viol {lin_viol:.3e} pred {pred:.3e}");
        }
        if pred < opts.tol_pred && values.violation() <= opts.tol_feas {
            iterates.push(IterateRecord {
                iter,
                objective: values.report_objective,
                merit: merit(&values),
                max_violation: max_violation(&values),
                trust_radius: radius,
                step_norm: 0.0,
                accepted: false,
                x: x.clone(),
            });
            converged = true;
            message = "stationary: predicted decrease below tolerance".into();
            break;
        }

        let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let trial = problem.evaluate(&xt);
        let mut accepted = false;
        if let Ok((tv, ts)) = trial {
            let ared = merit(&values) - merit(&tv);
            if ared > 0.0 && (pred <= 0.0 || ared >= 0.01 * pred) {
                accepted = true;
                x = xt;
                values = tv;
                state = ts;
                grads = problem.gradients(&x, &state)?;
                if let Some(det) = problem.injectivity_min_det(&x, opts.injectivity_samples) {
                    if det <= 0.0 {
                        return Err(Error::Optimization(format!(
                            "accepted iterate lost injectivity (min det {det:.3e})"
                        )));
                    }
                }
                if ared >= 0.7 * pred {
                    radius = (radius * 2.0).min(opts.move_limit);
                }
            }
        }
        if !accepted {
            radius *= 0.5;
        }

        iterates.push(IterateRecord {
            iter,
            objective: values.report_objective,
            merit: merit(&values),
            max_violation: max_violation(&values),
            trust_radius: radius,
            step_norm: if accepted { step_norm } else { 0.0 },
            accepted,
            x: x.clone(),
        });

        if radius < opts.tol_step {
            converged = values.violation() <= opts.tol_feas;
            message = "trust region collapsed".into();
            break;
        }
        if accepted && step_norm < opts.tol_step && values.violation() <= opts.tol_feas {
            converged = true;
            message = "step below tolerance".into();
            break;
        }
    }

    Ok(OptimizationRecord {
        iterates,
        final_x: x,
        final_values: values,
        final_state: state,
        initial_values,
        converged,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::LinearConstraintSet;

    /// min (x0 - 1)^2-ish linearized problem: f = -x0, constraint x0 <= 0.5
    struct Toy {
        linear: LinearConstraintSet,
    }

    impl SlpProblem for Toy {
        type State = ();
        fn dim(&self) -> usize {
            2
        }
        fn linear(&self) -> &LinearConstraintSet {
            &self.linear
        }
        fn evaluate(&self, x: &[f64]) -> Result<(EvalValues, ())> {
            Ok((
                EvalValues {
                    objective: -x[0] - 0.5 * x[1],
                    report_objective: x[0] + 0.5 * x[1],
                    constraints: vec![x[0] - 0.5],
                    is_equality: vec![false],
                },
                (),
            ))
        }
        fn gradients(&self, _x: &[f64], _s: &()) -> Result<EvalGradients> {
            Ok(EvalGradients {
                objective: vec![-1.0, -0.5],
                constraints: vec![vec![1.0, 0.0]],
            })
        }
        fn injectivity_min_det(&self, _x: &[f64], _n: usize) -> Option<f64> {
            None
        }
    }

    #[test]
    fn toy_problem_hits_constraint_and_linear_bound() {
        // linear row: x1 <= 0.3
        let linear = LinearConstraintSet {
            rows: vec![crate::spline::ConstraintRow {
                coeffs: vec![(1, 1.0)],
                rhs: 0.3,
                plane: 0,
                axis: 0,
                cell: [0, 0, 0],
            }],
            n_coords: 2,
        };
        let p = Toy { linear };
        let rec = solve_slp(
            &p,
            vec![0.0, 0.0],
            &SlpOptions {
                move_limit: 0.2,
                max_iters: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rec.converged, "{}", rec.message);
        assert!((rec.final_x[0] - 0.5).abs() < 1e-6, "{:?}", rec.final_x);
        assert!(rec.final_x[1] <= 0.3 + 1e-9);
        // merit nonincreasing across accepted iterates
        let merits: Vec<f64> = rec
            .iterates
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.merit)
            .collect();
        for w in merits.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn zero_gradient_converges_immediately() {
        struct Flat {
            linear: LinearConstraintSet,
        }
        impl SlpProblem for Flat {
            type State = ();
            fn dim(&self) -> usize {
                2
            }
            fn linear(&self) -> &LinearConstraintSet {
                &self.linear
            }
            fn evaluate(&self, _x: &[f64]) -> Result<(EvalValues, ())> {
                Ok((
                    EvalValues {
                        objective: 1.0,
                        report_objective: 1.0,
                        constraints: vec![],
                        is_equality: vec![],
                    },
                    (),
                ))
            }
            fn gradients(&self, _x: &[f64], _s: &()) -> Result<EvalGradients> {
                Ok(EvalGradients {
                    objective: vec![0.0, 0.0],
                    constraints: vec![],
                })
            }
            fn injectivity_min_det(&self, _x: &[f64], _n: usize) -> Option<f64> {
                None
            }
        }
        let p = Flat {
            linear: LinearConstraintSet {
                rows: vec![],
                n_coords: 2,
            },
        };
        let rec = solve_slp(&p, vec![0.1, -0.2], &SlpOptions::default()).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.iterates.len(), 1);
        assert_eq!(rec.final_x, vec![0.1, -0.2]);
    }
}
