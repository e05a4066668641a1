//! Finite-difference stencils on arbitrary ordered nodes.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Fornberg weights: `w[k][i]` approximates the k-th derivative at `x0`
/// from samples at `xs[i]`, for k = 0..=m.
pub fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let npts = xs.len();
    let mut c = vec![vec![0.0; npts]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..npts {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Precomputed derivative operator of a fixed order on a node set.
#[derive(Debug, Clone)]
pub struct DiffOp {
    /// Per node: first stencil index and weights.
    rows: Vec<(usize, Vec<f64>)>,
}

impl DiffOp {
    /// `deriv`-th derivative using `width`-point stencils, centered where
    /// possible and shifted inward at the ends.
    pub fn new(xs: &[f64], deriv: usize, width: usize) -> Self {
        let n = xs.len();
        assert!(width <= n && width > deriv, "stencil wider than grid");
        let half = width / 2;
        let rows = (0..n)
            .map(|j| {
                let start = j.saturating_sub(half).min(n - width);
                let w = fornberg(xs[j], &xs[start..start + width], deriv);
                (start, w[deriv].clone())
            })
            .collect();
        DiffOp { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, v: ArrayView1<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(s, w)| w.iter().enumerate().map(|(i, wi)| wi * v[s + i]).sum())
            .collect()
    }

    pub fn at(&self, v: ArrayView1<f64>, j: usize) -> f64 {
        let (s, w) = &self.rows[j];
        w.iter().enumerate().map(|(i, wi)| wi * v[s + i]).sum()
    }

    /// Applies along `axis` of a 2-D array (0 = time rows, 1 = radial columns).
    pub fn apply_axis(&self, a: ArrayView2<f64>, axis: usize) -> Array2<f64> {
        let mut out = Array2::zeros(a.dim());
        for (lane_in, mut lane_out) in a
            .lanes(Axis(axis))
            .into_iter()
            .zip(out.lanes_mut(Axis(axis)))
        {
            for (j, (s, w)) in self.rows.iter().enumerate() {
                lane_out[j] = w.iter().enumerate().map(|(i, wi)| wi * lane_in[s + i]).sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_exact_on_quadratics() {
        let xs = [0.0, 0.1, 0.35];
        let w = fornberg(0.1, &xs, 2);
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 1.0;
        let d1: f64 = w[1].iter().zip(&xs).map(|(a, x)| a * f(*x)).sum();
        let d2: f64 = w[2].iter().zip(&xs).map(|(a, x)| a * f(*x)).sum();
        assert!((d1 - (6.0 * 0.1 - 2.0)).abs() < 1e-12);
        assert!((d2 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_rows_at_ends() {
        let xs: Vec<f64> = (0..10).map(|i| (i as f64 * 0.1).powi(2)).collect();
        let op = DiffOp::new(&xs, 1, 3);
        let v = ndarray::Array1::from_iter(xs.iter().map(|x| x * x));
        let d = op.apply(v.view());
        for (j, x) in xs.iter().enumerate() {
            assert!((d[j] - 2.0 * x).abs() < 1e-10);
        }
    }
}
