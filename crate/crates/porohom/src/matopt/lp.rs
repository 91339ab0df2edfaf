//! Linear programming subproblem of the SLP iteration.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

/// Inequality rows a . z <= b collected as triplets.
pub struct LpBuilder {
    n_vars: usize,
    cost: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl LpBuilder {
    pub fn new(n_vars: usize) -> Self {
        LpBuilder {
            n_vars,
            cost: vec![0.0; n_vars],
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn set_cost(&mut self, var: usize, c: f64) {
        self.cost[var] = c;
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    /// Solves min c.z subject to the collected rows, z unconstrained unless
    /// bounded by explicit rows.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let m = self.rows.len();
        let n = self.n_vars;
        // column-compressed A
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                if v != 0.0 {
                    cols[c].push((r, v));
                }
            }
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in cols.iter_mut() {
            col.sort_by_key(|&(r, _)| r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::<f64>::zeros((n, n));
        let cones = [SupportedConeT::NonnegativeConeT(m)];
        // first pass with tight tolerances; EARLY-TERMINATION statuses get a
        // second chance at the solver defaults
        for tol in [1e-10, 1e-8] {
            let settings = DefaultSettingsBuilder::default()
                .verbose(false)
                .tol_feas(tol)
                .tol_gap_abs(tol)
                .tol_gap_rel(tol)
                .max_iter(200)
                .build()
                .map_err(|e| Error::Optimization(format!("LP settings: {e:?}")))?;
            let mut solver = DefaultSolver::new(&p, &self.cost, &a, &self.rhs, &cones, settings)
                .map_err(|e| Error::Optimization(format!("LP setup: {e:?}")))?;
            solver.solve();
            match solver.solution.status {
                SolverStatus::Solved | SolverStatus::AlmostSolved => {
                    return Ok(solver.solution.x.clone())
                }
                SolverStatus::InsufficientProgress | SolverStatus::MaxIterations => continue,
                status => {
                    return Err(Error::Optimization(format!(
                        "LP subproblem not solved: {status:?}"
                    )))
                }
            }
        }
        Err(Error::Optimization(
            "LP subproblem stalled at both tolerance levels".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_box_lp() {
        // min -x - 2y st x <= 1, y <= 1, -x <= 0, -y <= 0
        let mut lp = LpBuilder::new(2);
        lp.set_cost(0, -1.0);
        lp.set_cost(1, -2.0);
        lp.add_le(vec![(0, 1.0)], 1.0);
        lp.add_le(vec![(1, 1.0)], 1.0);
        lp.add_le(vec![(0, -1.0)], 0.0);
        lp.add_le(vec![(1, -1.0)], 0.0);
        let z = lp.solve().unwrap();
        assert!((z[0] - 1.0).abs() < 1e-7);
        assert!((z[1] - 1.0).abs() < 1e-7);
    }
}
