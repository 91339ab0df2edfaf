//! Linear injectivity constraints for the spline-box map.
//!
//! Forward differences of adjacent control points along direction k are
//! confined to a closed cone C_k^delta. The three cones are separated by the
//! four planes H_1..H_4, which turns the cone conditions into linear
//! inequalities over the design variables. Any design satisfying all rows
//! yields a one-to-one spline map, so the embedded mesh cannot fold over.

use nalgebra::Vector3;

use super::{DesignSpace, DesignVector, SplineBox};

/// Separating plane normals: H_s(x) = h_s . x.
const PLANES: [[f64; 3]; 4] = [
    [1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
];

/// Sign pattern mu_{s,k} assigning each direction's cone to the planes.
const SIGNS: [[f64; 4]; 3] = [
    [1.0, 1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0, 1.0],
    [-1.0, 1.0, -1.0, 1.0],
];

/// One inequality row: coeffs . x <= rhs over the free design coordinates.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    /// Provenance: (plane s, direction k, lattice index of the lower point).
    pub plane: usize,
    pub axis: usize,
    pub cell: [usize; 3],
}

impl ConstraintRow {
    pub fn residual(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().map(|&(i, c)| c * x[i]).sum();
        lhs - self.rhs
    }
}

#[derive(Debug, Clone)]
pub struct LinearConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub n_coords: usize,
}

impl LinearConstraintSet {
    /// Signed residuals; feasible when all are <= 0.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual(x)).collect()
    }

    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.residual(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.max_residual(x) <= tol
    }
}

/// Assembles the full row set over the free coordinates of `space`.
///
/// Each row is generated by exactly one triple (plane s, direction k, lattice
/// index i with i_k below the top); the pair difference is expanded through
/// the periodic master/slave reduction, so slave-face translations enter the
/// rows of the last lattice layer.
pub fn injectivity_constraints(b: &SplineBox, space: &DesignSpace) -> LinearConstraintSet {
    let dims = b.dims();
    let n = space.len();
    let beta_offset = 3 * b.num_masters();
    let mut rows = Vec::new();
    let mut dense = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    let add = |dense: &mut Vec<f64>, touched: &mut Vec<usize>, idx: usize, v: f64| {
        if dense[idx] == 0.0 {
            touched.push(idx);
        }
        dense[idx] += v;
    };

    for k in 0..3 {
        for i1 in 0..dims[0] {
            for i2 in 0..dims[1] {
                for i3 in 0..dims[2] {
                    let idx = [i1, i2, i3];
                    if idx[k] + 1 >= dims[k] {
                        continue;
                    }
                    let mut upper = idx;
                    upper[k] += 1;
                    let dref = b.reference_point(upper) - b.reference_point(idx);
                    for s in 0..4 {
                        let mu = SIGNS[k][s];
                        let h = Vector3::new(PLANES[s][0], PLANES[s][1], PLANES[s][2]);
                        // -mu * H_s(alpha_upper - alpha_lower) <= mu * H_s(dref) - delta
                        for d in 0..3 {
                            let c = -mu * h[d];
                            if c == 0.0 {
                                continue;
                            }
                            // expand alpha difference over masters and betas
                            let mu_up = b.master_lin(b.reduce(upper));
                            let mu_lo = b.master_lin(b.reduce(idx));
                            add(&mut dense, &mut touched, 3 * mu_up + d, c);
                            add(&mut dense, &mut touched, 3 * mu_lo + d, -c);
                            for f in 0..3 {
                                let in_up = (upper[f] == dims[f] - 1) as i32 as f64;
                                let in_lo = (idx[f] == dims[f] - 1) as i32 as f64;
                                let w = in_up - in_lo;
                                if w != 0.0 {
                                    add(&mut dense, &mut touched, beta_offset + 3 * f + d, c * w);
                                }
                            }
                        }
                        let mut coeffs: Vec<(usize, f64)> = touched
                            .iter()
                            .filter(|&&i| dense[i] != 0.0)
                            .map(|&i| (i, dense[i]))
                            .collect();
                        coeffs.sort_by_key(|&(i, _)| i);
                        for &i in &touched {
                            dense[i] = 0.0;
                        }
                        touched.clear();
                        rows.push(ConstraintRow {
                            coeffs,
                            rhs: mu * h.dot(&dref) - b.delta(),
                            plane: s,
                            axis: k,
                            cell: idx,
                        });
                    }
                }
            }
        }
    }
    LinearConstraintSet { rows, n_coords: n }
}

/// Samples det(dx/dt) of the spline map on a lattice covering [0,1]^3 with at
/// least `n_samples` points and returns the minimum. Serves as an independent
/// oracle for the linear constraint rows.
pub fn verify_injectivity_by_sampling(
    b: &SplineBox,
    d: &DesignVector,
    n_samples: usize,
) -> f64 {
    let q = ((n_samples as f64).cbrt().ceil() as usize).max(2);
    let mut min_det = f64::INFINITY;
    for a in 0..q {
        for bb in 0..q {
            for c in 0..q {
                let t = Vector3::new(
                    a as f64 / (q - 1) as f64,
                    bb as f64 / (q - 1) as f64,
                    c as f64 / (q - 1) as f64,
                );
                let det = b.jacobian(d, &t).determinant();
                min_det = min_det.min(det);
            }
        }
    }
    min_det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{DesignSpace, DesignVector, SplineBox};
    use rand::prelude::*;

    #[test]
    fn row_count_matches_lattice_combinatorics() {
        // 6x6x6 lattice: |I(k)| = 6*6*5 = 180 per direction, 4 planes each
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let set = injectivity_constraints(&b, &space);
        assert_eq!(set.rows.len(), 3 * 180 * 4);
    }

    #[test]
    fn reference_design_has_uniform_slack() {
        // axis-aligned reference differences give H_s = spacing on all planes
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let set = injectivity_constraints(&b, &space);
        let x = vec![0.0; space.len()];
        let min_spacing = b.min_greville_spacing();
        let max_res = set.max_residual(&x);
        assert!(max_res <= -(min_spacing - b.delta()) + 1e-12);
        assert!(set.is_feasible(&x, 0.0));
    }

    #[test]
    fn collapsing_adjacent_points_violates_a_row() {
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let set = injectivity_constraints(&b, &space);
        let mut d = DesignVector::zeros(&b);
        // pull master (1,2,2) onto its neighbor (2,2,2) in direction 1
        let spacing = b.greville(0)[2] - b.greville(0)[1];
        d.alpha[b.master_lin([1, 2, 2])] = Vector3::new(spacing, 0.0, 0.0);
        let x = space.to_vec(&d);
        assert!(!set.is_feasible(&x, 1e-12));
    }

    #[test]
    fn constraint_rows_are_affine_in_the_design() {
        let b = SplineBox::build([2, 2, 2], [2, 2, 2], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let set = injectivity_constraints(&b, &space);
        let mut rng = StdRng::seed_from_u64(11);
        let x1: Vec<f64> = (0..space.len()).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let x2: Vec<f64> = (0..space.len()).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let s = 0.37;
        for row in &set.rows {
            let lhs1: f64 = row.coeffs.iter().map(|&(i, c)| c * x1[i]).sum();
            let lhs2: f64 = row.coeffs.iter().map(|&(i, c)| c * x2[i]).sum();
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + s * b).collect();
            let lhs_mix: f64 = row.coeffs.iter().map(|&(i, c)| c * mix[i]).sum();
            assert!((lhs_mix - (lhs1 + s * lhs2)).abs() < 1e-14);
        }
    }

    #[test]
    fn feasible_random_designs_keep_positive_jacobian() {
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let set = injectivity_constraints(&b, &space);
        let slack = (b.min_greville_spacing() - b.delta()) / 6.0 * 0.99;
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..space.len())
                .map(|_| rng.gen_range(-slack..slack))
                .collect();
            assert!(set.is_feasible(&x, 1e-12));
            let d = space.from_vec(&x);
            let min_det = verify_injectivity_by_sampling(&b, &d, 1000);
            assert!(min_det > 0.0, "min det {min_det} not positive");
        }
    }

    #[test]
    fn folded_design_is_detected_by_sampling() {
        let b = SplineBox::build([3, 3, 3], [3, 3, 3], 0.02).unwrap();
        let space = DesignSpace::new(&b, false);
        let mut d = DesignVector::zeros(&b);
        // swap two interior masters along direction 1 far enough that the
        // smoothed map itself folds, not just the control polygon
        let spacing = b.greville(0)[3] - b.greville(0)[2];
        d.alpha[b.master_lin([2, 2, 2])] = Vector3::new(4.0 * spacing, 0.0, 0.0);
        d.alpha[b.master_lin([3, 2, 2])] = Vector3::new(-4.0 * spacing, 0.0, 0.0);
        let set = injectivity_constraints(&b, &space);
        assert!(!set.is_feasible(&space.to_vec(&d), 1e-12));
        let min_det = verify_injectivity_by_sampling(&b, &d, 10_000);
        assert!(min_det <= 0.0, "expected fold, min det {min_det}");
    }
}
