//! Clamped B-spline basis on [0, 1].

/// One-dimensional B-spline basis over a clamped knot vector.
#[derive(Debug, Clone)]
pub struct BsplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl BsplineBasis {
    /// Clamped knot vector with uniform interior knots, `segments` spans.
    pub fn clamped_uniform(degree: usize, segments: usize) -> Self {
        assert!(degree >= 1 && segments >= 1);
        let mut knots = vec![0.0; degree + 1];
        for i in 1..segments {
            knots.push(i as f64 / segments as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        BsplineBasis { degree, knots }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Greville abscissae: per-function averages of `degree` consecutive knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.count())
            .map(|i| self.knots[i + 1..i + 1 + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    fn span(&self, t: f64) -> usize {
        let n = self.count();
        if t >= 1.0 {
            return n - 1;
        }
        let mut lo = self.degree;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis values of the given degree at `t`, for the span of `t`.
    fn local_values(&self, t: f64, degree: usize) -> Vec<f64> {
        let span = self.span(t);
        let mut vals = vec![0.0; degree + 1];
        vals[0] = 1.0;
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        for j in 1..=degree {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// All basis values at `t` (dense vector of length `count`).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let span = self.span(t);
        let local = self.local_values(t, self.degree);
        let mut out = vec![0.0; self.count()];
        for (r, v) in local.iter().enumerate() {
            out[span - self.degree + r] = *v;
        }
        out
    }

    /// All basis values and first derivatives at `t`.
    pub fn eval_with_derivative(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let n = self.count();
        let values = self.eval(t);
        // values of degree p-1 functions (one extra function exists)
        let span = self.span(t);
        let mut lower = vec![0.0; n + 1];
        if p >= 1 {
            let local = self.local_values(t, p - 1);
            for (r, v) in local.iter().enumerate() {
                lower[span - (p - 1) + r] = *v;
            }
        }
        let mut deriv = vec![0.0; n];
        for i in 0..n {
            let d1 = self.knots[i + p] - self.knots[i];
            let d2 = self.knots[i + p + 1] - self.knots[i + 1];
            let mut v = 0.0;
            if d1 > 0.0 {
                v += lower[i] / d1;
            }
            if d2 > 0.0 {
                v -= lower[i + 1] / d2;
            }
            deriv[i] = p as f64 * v;
        }
        (values, deriv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cubic_three_segment_greville() {
        let b = BsplineBasis::clamped_uniform(3, 3);
        assert_eq!(b.count(), 6);
        let g = b.greville();
        let expect = [0.0, 1.0 / 9.0, 3.0 / 9.0, 6.0 / 9.0, 8.0 / 9.0, 1.0];
        for (a, e) in g.iter().zip(expect.iter()) {
            assert_relative_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn partition_of_unity_and_linear_precision() {
        let b = BsplineBasis::clamped_uniform(3, 3);
        let g = b.greville();
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let vals = b.eval(t);
            let sum: f64 = vals.iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            let x: f64 = vals.iter().zip(g.iter()).map(|(v, g)| v * g).sum();
            assert_relative_eq!(x, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = BsplineBasis::clamped_uniform(3, 3);
        let h = 1e-7;
        for &t in &[0.05, 0.21, 0.5, 0.77, 0.95] {
            let (_, d) = b.eval_with_derivative(t);
            let vp = b.eval(t + h);
            let vm = b.eval(t - h);
            for i in 0..b.count() {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert_relative_eq!(d[i], fd, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn linear_box_has_corner_functions() {
        let b = BsplineBasis::clamped_uniform(1, 1);
        assert_eq!(b.count(), 2);
        let v = b.eval(0.25);
        assert_relative_eq!(v[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.25, epsilon = 1e-15);
    }
}
