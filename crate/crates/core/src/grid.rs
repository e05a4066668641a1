//! Discretization of the cylinder (-T, T) x B1 in polar/mode form.
//!
//! Radial nodes are graded towards the singular sphere r = 1 through the
//! map y = s^p on a uniform s-grid, so every quadrature below is a plain
//! trapezoid rule in s with the exact Jacobian p s^(p-1).

use ndarray::{ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{End, Error, Result};

/// Open-interval guard on kappa.
pub const KAPPA_EDGE_TOL: f64 = 1e-12;

/// Smallest node count accepted by [`RadialGrid::build`].
pub const MIN_RADIAL_NODES: usize = 16;

/// Physical and weight configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    /// Spatial dimension, never 2.
    pub n: usize,
    /// Strength of the inverse-square boundary potential, in (-1/2, 0).
    pub kappa: f64,
    /// Curvature of the weight in time.
    pub c: f64,
    /// Carleman parameter.
    pub lambda: f64,
    /// Half-timespan T.
    pub t_max: f64,
}

pub(crate) fn check_dimension(n: usize) -> Result<()> {
    match n {
        0 => Err(Error::param("n must be a positive integer")),
        2 => Err(Error::param("n = 2 excluded by Theorem hypotheses")),
        _ => Ok(()),
    }
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if !kappa.is_finite() || kappa <= -0.5 + KAPPA_EDGE_TOL || kappa >= -KAPPA_EDGE_TOL {
        return Err(Error::param("κ must lie in (−1/2, 0)"));
    }
    Ok(())
}

impl Params {
    /// Validated parameters with c = 0 and lambda = 0.
    pub fn new(n: usize, kappa: f64, t_max: f64) -> Result<Self> {
        check_dimension(n)?;
        check_kappa(kappa)?;
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::param(format!("T must be positive, got {t_max}")));
        }
        Ok(Params { n, kappa, c: 0.0, lambda: 0.0, t_max })
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// The Dirichlet-branch exponent 1 - kappa.
    pub fn a(&self) -> f64 {
        1.0 - self.kappa
    }

    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.n)
    }

    /// Checks 0 < c < 1/5 and the dimension-dependent cap on c.
    pub fn check_carleman_c(&self) -> Result<()> {
        let cap = crate::weights::c_cap(self.n, self.kappa, self.t_max)?;
        if !(self.c > 0.0 && self.c < 0.2) {
            return Err(Error::param(format!("c = {} must lie in (0, 1/5)", self.c)));
        }
        if self.c > cap * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "c = {} exceeds the cap {cap} for n = {}, T = {}",
                self.c, self.n, self.t_max
            )));
        }
        Ok(())
    }
}

/// Area of the unit sphere S^(n-1); S^0 = {-1, 1} has counting measure 2.
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 2.0) * sphere_area(n - 2),
    }
}

pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

/// Boundary-graded radial nodes with trapezoid weights.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    /// Dimension used for the r^(n-1) Jacobian.
    pub dim: usize,
    /// Radii r_j, strictly increasing in (0, 1).
    pub nodes: Vec<f64>,
    /// y_j = 1 - r_j.
    pub y_values: Vec<f64>,
    /// Grading coordinate s_j with y_j = s_j^p; decreasing in j.
    pub s_values: Vec<f64>,
    /// Trapezoid weights over [r_0, r_last] including r^(n-1) and the sphere area.
    pub quad_weights: Vec<f64>,
    /// Grading power p.
    pub grading_exponent: f64,
    /// Uniform spacing in s.
    pub ds: f64,
}

impl RadialGrid {
    pub fn build(n_r: usize, p: f64, dim: usize) -> Result<Self> {
        if n_r < MIN_RADIAL_NODES {
            return Err(Error::param(format!("n_r = {n_r} below minimum {MIN_RADIAL_NODES}")));
        }
        if !(p >= 1.0) {
            return Err(Error::param(format!("grading exponent p = {p} must be >= 1")));
        }
        check_dimension(dim)?;
        let m = (n_r + 1) as f64;
        let ds = 1.0 / m;
        let sigma = sphere_area(dim);
        let mut nodes = Vec::with_capacity(n_r);
        let mut y_values = Vec::with_capacity(n_r);
        let mut s_values = Vec::with_capacity(n_r);
        for j in 0..n_r {
            let s = (n_r - j) as f64 / m;
            let y = s.powf(p);
            s_values.push(s);
            y_values.push(y);
            nodes.push(1.0 - y);
        }
        let mut grid = RadialGrid {
            dim,
            nodes,
            y_values,
            s_values,
            quad_weights: vec![0.0; n_r],
            grading_exponent: p,
            ds,
        };
        for j in 0..n_r {
            let half = if j == 0 || j == n_r - 1 { 0.5 } else { 1.0 };
            grid.quad_weights[j] = half * sigma * grid.jacobian(j) * ds;
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// r^(n-1) |dr/ds| at node j, without the sphere area.
    pub fn jacobian(&self, j: usize) -> f64 {
        let p = self.grading_exponent;
        let s = self.s_values[j];
        self.nodes[j].powi(self.dim as i32 - 1) * p * s.powf(p - 1.0)
    }

    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim)
    }

    /// Smallest spacing between consecutive nodes.
    pub fn min_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Index of the node closest to radius r.
    pub fn nearest(&self, r: f64) -> usize {
        let mut best = 0;
        for (j, &rj) in self.nodes.iter().enumerate() {
            if (rj - r).abs() < (self.nodes[best] - r).abs() {
                best = j;
            }
        }
        best
    }

    /// Trapezoid weights restricted to the node range lo..=hi.
    pub fn range_weights(&self, lo: usize, hi: usize) -> Vec<f64> {
        let sigma = self.sphere_area();
        (lo..=hi)
            .map(|j| {
                let half = if j == lo || j == hi { 0.5 } else { 1.0 };
                half * sigma * self.jacobian(j) * self.ds
            })
            .collect()
    }

    /// Linear trapezoid quadrature over [r_lo, r_hi]; no end corrections.
    pub fn integrate_range(&self, density: ArrayView1<f64>, lo: usize, hi: usize) -> f64 {
        self.range_weights(lo, hi)
            .iter()
            .zip(lo..=hi)
            .map(|(w, j)| w * density[j])
            .sum()
    }
}

/// Uniform symmetric time grid on [-T, T], endpoints included.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    pub dt: f64,
}

impl TimeGrid {
    pub fn build(t_max: f64, n_t: usize) -> Result<Self> {
        if n_t < 3 {
            return Err(Error::param(format!("n_t = {n_t} must be at least 3")));
        }
        if !(t_max > 0.0) {
            return Err(Error::param(format!("T must be positive, got {t_max}")));
        }
        let dt = 2.0 * t_max / (n_t - 1) as f64;
        let nodes = (0..n_t)
            .map(|i| {
                // mirror the second half so the grid is exactly symmetric
                if 2 * i + 1 < n_t {
                    -t_max + i as f64 * dt
                } else if 2 * i + 1 == n_t {
                    0.0
                } else {
                    t_max - (n_t - 1 - i) as f64 * dt
                }
            })
            .collect();
        Ok(TimeGrid { nodes, dt })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| if i == 0 || i == n - 1 { 0.5 * self.dt } else { self.dt })
            .collect()
    }

    pub fn integrate(&self, series: &[f64]) -> Result<f64> {
        if series.len() != self.len() {
            return Err(Error::shape(format!(
                "time series has {} samples, grid has {}",
                series.len(),
                self.len()
            )));
        }
        Ok(self.weights().iter().zip(series).map(|(w, v)| w * v).sum())
    }
}

/// One angular mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub ell: u32,
    /// ell (ell + n - 2); zero in both n = 1 sectors.
    pub eigenvalue: f64,
    /// True when u must vanish at r = 0 (ell >= 1, or the odd n = 1 sector).
    pub vanishes_at_origin: bool,
}

impl Mode {
    pub fn new(n: usize, ell: u32) -> Result<Self> {
        check_dimension(n)?;
        if n == 1 {
            if ell > 1 {
                return Err(Error::param("n = 1 has only the even (0) and odd (1) sectors"));
            }
            return Ok(Mode { ell, eigenvalue: 0.0, vanishes_at_origin: ell == 1 });
        }
        let l = ell as f64;
        Ok(Mode { ell, eigenvalue: l * (l + n as f64 - 2.0), vanishes_at_origin: ell >= 1 })
    }
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
}

impl ModeSet {
    /// The lowest `count` modes (capped at the two parity sectors for n = 1).
    pub fn lowest(n: usize, count: usize) -> Result<Self> {
        let count = if n == 1 { count.min(2) } else { count };
        let modes = (0..count as u32).map(|l| Mode::new(n, l)).collect::<Result<_>>()?;
        Ok(ModeSet { modes })
    }
}

/// Local power-law exponent m of F ~ A x^m from samples at x1 < x2.
fn local_exponent(f1: f64, f2: f64, x1: f64, x2: f64) -> Option<f64> {
    if f1 == 0.0 || f2 == 0.0 || f1.signum() != f2.signum() {
        return None;
    }
    Some((f1 / f2).ln() / (x1 / x2).ln())
}

/// Local exponent over the two end samples, trusted only when the local
/// exponents of the next two sample pairs agree to within
/// [`POWER_LAW_AGREEMENT`]; otherwise the end is treated as regular.
fn end_exponent(f: [f64; 4], x: [f64; 4]) -> Option<f64> {
    let m01 = local_exponent(f[0], f[1], x[0], x[1])?;
    for k in 1..3 {
        let m = local_exponent(f[k], f[k + 1], x[k], x[k + 1])?;
        if (m01 - m).abs() > POWER_LAW_AGREEMENT * (1.0 + m01.abs()) {
            return None;
        }
    }
    Some(m01)
}

const DIVERGENCE_TOL: f64 = 1e-6;
const POWER_LAW_AGREEMENT: f64 = 0.25;
/// End samples below this fraction of the bulk are treated as regular.
const NEGLIGIBLE_END: f64 = 1e-10;
/// Simpson sub-intervals per cell when a radial weight is present.
const CELL_SUBDIVISIONS: usize = 8;
/// Simpson intervals for the weighted integral over the outermost cell.
const END_CELL_STEPS: usize = 4000;

/// Integral over B1 of a mode-summed radial density sampled on the nodes.
///
/// Interior: trapezoid in s. Near r = 1 a power law A s^m is fitted to the
/// two outermost samples and integrated exactly; m <= -1 is reported as a
/// divergence. Near r = 0 the same test runs in (1 - s), and regular
/// integrands are closed with a quadratic extrapolation to s = 1.
pub fn integrate_space(density: ArrayView1<f64>, grid: &RadialGrid) -> Result<f64> {
    integrate_core(density, grid, None, false)
}

/// [`integrate_space`] for densities regular at r = 0 by construction, such
/// as energy densities of a discrete solution: the inner end is always closed
/// by extrapolation, so grid-scale noise there is not read as a power law.
pub fn integrate_space_regular_origin(density: ArrayView1<f64>, grid: &RadialGrid) -> Result<f64> {
    integrate_core(density, grid, None, true)
}

/// ∫ w(y) g over B1 for an analytic radial weight w and sampled g.
///
/// The weight is evaluated exactly inside every cell (g is interpolated
/// linearly in s), and over the outermost cell the product of the fitted
/// power law and w is integrated in log s, so boundary layers much thinner
/// than the first cell are still captured. The divergence test sees g alone.
pub fn integrate_space_weighted(
    density: ArrayView1<f64>,
    grid: &RadialGrid,
    weight: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    integrate_core(density, grid, Some(weight), false)
}

fn simpson(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn integrate_core(
    density: ArrayView1<f64>,
    grid: &RadialGrid,
    weight: Option<&dyn Fn(f64) -> f64>,
    regular_origin: bool,
) -> Result<f64> {
    let nr = grid.len();
    if density.len() != nr {
        return Err(Error::shape(format!(
            "density has {} samples, grid has {nr}",
            density.len()
        )));
    }
    if density.iter().any(|v| !v.is_finite()) {
        return Err(Error::shape("density contains non-finite samples"));
    }
    let sigma = grid.sphere_area();
    let ds = grid.ds;
    let p = grid.grading_exponent;
    let big_f = |j: usize| sigma * grid.jacobian(j) * density[j];
    let w_at = |y: f64| weight.map_or(1.0, |w| w(y));
    let bulk: f64 = (0..nr).map(|j| grid.quad_weights[j] * density[j].abs()).sum();
    let negligible = |a: f64, b: f64| (a.abs() + b.abs()) * ds <= NEGLIGIBLE_END * bulk;

    let mut total = match weight {
        None => (0..nr).map(|j| grid.quad_weights[j] * density[j]).sum(),
        Some(w) => {
            let mut acc = 0.0;
            for j in 0..nr - 1 {
                let (sa, sb) = (grid.s_values[j + 1], grid.s_values[j]);
                let (fa, fb) = (big_f(j + 1), big_f(j));
                if fa == 0.0 && fb == 0.0 {
                    continue;
                }
                acc += simpson(CELL_SUBDIVISIONS, sa, sb, |s| {
                    let g = fa + (fb - fa) * (s - sa) / (sb - sa);
                    g * w(s.powf(p))
                });
            }
            acc
        }
    };

    // outer end: s in (0, s_last]
    let (jo, jo2) = (nr - 1, nr - 2);
    let (s1, s2) = (grid.s_values[jo], grid.s_values[jo2]);
    let (f1, f2) = (big_f(jo), big_f(jo2));
    let exponent = if negligible(f1, f2) {
        None
    } else {
        end_exponent(
            [f1, f2, big_f(nr - 3), big_f(nr - 4)],
            [s1, s2, grid.s_values[nr - 3], grid.s_values[nr - 4]],
        )
    };
    match exponent {
        Some(m) if m <= -1.0 + DIVERGENCE_TOL => {
            return Err(Error::Divergent { end: End::Outer, exponent: m });
        }
        Some(m) => match weight {
            None => total += f1 * s1 / (m + 1.0),
            Some(w) => {
                // s = s1 e^(-z): ∫ A s^m w ds = f1 s1 ∫ e^(-(m+1) z) w(s^p) dz
                let z_max = (45.0 / (m + 1.0)).min(690.0 / p);
                total += f1 * s1
                    * simpson(END_CELL_STEPS, 0.0, z_max, |z| {
                        let s = s1 * (-z).exp();
                        (-(m + 1.0) * z).exp() * w(s.powf(p))
                    });
            }
        },
        None => {
            let f0 = f1 - (f2 - f1) * s1 / (s2 - s1);
            total += match weight {
                None => 0.5 * (f0 + f1) * s1,
                Some(w) => simpson(CELL_SUBDIVISIONS, 0.0, s1, |s| {
                    (f0 + (f1 - f0) * s / s1) * w(s.powf(p))
                }),
            };
        }
    }

    // inner end: s in [s_0, 1), where any weight is smooth
    let (g0, g1, g2) = (
        big_f(0) * w_at(grid.y_values[0]),
        big_f(1) * w_at(grid.y_values[1]),
        big_f(2) * w_at(grid.y_values[2]),
    );
    let (x0, x1) = (1.0 - grid.s_values[0], 1.0 - grid.s_values[1]);
    let exponent = if regular_origin || negligible(big_f(0), big_f(1)) {
        None
    } else {
        end_exponent(
            [g0, g1, g2, big_f(3) * w_at(grid.y_values[3])],
            [x0, x1, 1.0 - grid.s_values[2], 1.0 - grid.s_values[3]],
        )
    };
    match exponent {
        Some(m) if m <= -1.0 + DIVERGENCE_TOL => {
            return Err(Error::Divergent { end: End::Inner, exponent: m });
        }
        Some(m) if m < -0.5 => total += g0 * x0 / (m + 1.0),
        _ => {
            // nodes sit at 1 - s = x0, x0 + ds, x0 + 2 ds; extrapolate to 0
            let t = -x0 / ds;
            let g_end = g0 * (t - 1.0) * (t - 2.0) / 2.0 - g1 * t * (t - 2.0)
                + g2 * t * (t - 1.0) / 2.0;
            total += 0.5 * (g_end + g0) * x0;
        }
    }
    Ok(total)
}

/// Time-trapezoid composed with [`integrate_space`]; rows are time slices.
pub fn integrate_spacetime(
    density: ArrayView2<f64>,
    grid: &RadialGrid,
    time: &TimeGrid,
) -> Result<f64> {
    integrate_spacetime_weighted(density, grid, time, &|_| 1.0, None)
}

/// ∫ w_t(t) w_r(y) g over the cylinder, with [`integrate_space_weighted`] per slice.
/// `radial` = None skips the radial weight entirely.
pub fn integrate_spacetime_weighted(
    density: ArrayView2<f64>,
    grid: &RadialGrid,
    time: &TimeGrid,
    time_weight: &dyn Fn(f64) -> f64,
    radial: Option<&dyn Fn(f64) -> f64>,
) -> Result<f64> {
    let (nt, nr) = density.dim();
    if nt != time.len() || nr != grid.len() {
        return Err(Error::shape(format!(
            "density is {nt}x{nr}, grids are {}x{}",
            time.len(),
            grid.len()
        )));
    }
    let wt = time.weights();
    let mut total = 0.0;
    for (i, row) in density.outer_iter().enumerate() {
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        total += wt[i] * time_weight(time.nodes[i]) * integrate_core(row, grid, radial, false)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use std::f64::consts::PI;

    #[test]
    fn uniform_grading_excludes_endpoints() {
        let g = RadialGrid::build(16, 1.0, 1).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.nodes[0] > 0.0 && g.nodes[15] < 1.0);
        for w in g.nodes.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 17.0).abs() < 1e-14);
        }
        assert!((g.y_values[15] - 1.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(RadialGrid::build(15, 2.0, 1).is_err());
        assert!(RadialGrid::build(64, 0.5, 1).is_err());
        assert!(RadialGrid::build(64, 2.0, 2).is_err());
    }

    #[test]
    fn ball_volume_n3() {
        let g = RadialGrid::build(200, 2.0, 3).unwrap();
        let one = Array1::ones(200);
        let v = integrate_space(one.view(), &g).unwrap();
        assert!((v - 4.0 * PI / 3.0).abs() / (4.0 * PI / 3.0) < 1e-2);
    }

    #[test]
    fn singular_weight_n1() {
        let g = RadialGrid::build(400, 2.0, 1).unwrap();
        let d = Array1::from_iter(g.y_values.iter().map(|y| y.powf(-0.5)));
        let v = integrate_space(d.view(), &g).unwrap();
        assert!((v - 4.0).abs() / 4.0 < 5e-3, "{v}");
    }

    #[test]
    fn r_squared_n3() {
        let g = RadialGrid::build(200, 2.0, 3).unwrap();
        let d = Array1::from_iter(g.nodes.iter().map(|r| r * r));
        let v = integrate_space(d.view(), &g).unwrap();
        assert!((v - 4.0 * PI / 5.0).abs() / (4.0 * PI / 5.0) < 1e-2);
    }

    #[test]
    fn divergent_outer_power_flagged() {
        let g = RadialGrid::build(400, 2.0, 1).unwrap();
        let d = Array1::from_iter(g.y_values.iter().map(|y| y.powf(-2.5)));
        match integrate_space(d.view(), &g) {
            Err(Error::Divergent { end: End::Outer, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn time_grid_symmetric() {
        let t = TimeGrid::build(1.0, 101).unwrap();
        for i in 0..101 {
            assert_eq!(t.nodes[i], -t.nodes[100 - i]);
        }
        assert_eq!(t.nodes[0], -1.0);
        assert_eq!(t.nodes[50], 0.0);
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((ball_volume(5) - 8.0 * PI * PI / 15.0).abs() < 1e-13);
    }

    #[test]
    fn modes() {
        let m = Mode::new(3, 2).unwrap();
        assert_eq!(m.eigenvalue, 6.0);
        let odd = Mode::new(1, 1).unwrap();
        assert_eq!(odd.eigenvalue, 0.0);
        assert!(odd.vanishes_at_origin);
        assert!(Mode::new(1, 2).is_err());
        assert_eq!(ModeSet::lowest(1, 4).unwrap().modes.len(), 2);
    }
}
