//! Explicit solver for □_κ u = X^t ∂_t u + X^r D_r u + V u + F, one angular
//! mode at a time, in the detwisted variable h = y^(κ-1) u.
//!
//! In h the equation is self-adjoint with density ρ = r^(n-1) y^(2(1-κ)):
//!
//!   h_tt = ρ^(-1) (ρ h_r)_r - q h - X^t h_t - X^r (h_r - (1-2κ) h / y) - V h - g,
//!
//! q = (1-κ)(n-1)/(r y) + L/r^2 and g = y^(κ-1) F. The spatial part is a
//! finite-volume scheme on cells between s-midpoints, with exact cell masses
//! and harmonic face conductances. ρ vanishes at r = 1, so the outer face
//! carries no flux; that is the whole Dirichlet closure, and 𝒟_κ u = 0 holds
//! identically for every discrete state.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::STENCIL_WIDTH;
use crate::grid::{check_dimension, integrate_space_regular_origin, Mode, Params, RadialGrid};
use crate::stencil::{fornberg, DiffOp};
use crate::verification::boundary_value;

/// Coefficient of the lower-order part.
#[derive(Clone, Default)]
pub enum Coef {
    #[default]
    Zero,
    /// Function of r only; sampled once.
    Radial(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Function of (t, r); sampled every step.
    General(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Coef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coef::Zero => write!(f, "Zero"),
            Coef::Radial(_) => write!(f, "Radial(..)"),
            Coef::General(_) => write!(f, "General(..)"),
        }
    }
}

impl Coef {
    pub fn radial(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Radial(Arc::new(g))
    }

    pub fn general(g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coef::General(Arc::new(g))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coef::Zero)
    }

    pub fn eval(&self, t: f64, r: f64) -> f64 {
        match self {
            Coef::Zero => 0.0,
            Coef::Radial(g) => g(r),
            Coef::General(g) => g(t, r),
        }
    }

    fn fill(&self, t: f64, nodes: &[f64], out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(nodes) {
            *o = self.eval(t, r);
        }
    }
}

/// Lower-order terms and source of the equation.
#[derive(Debug, Clone, Default)]
pub struct EquationSpec {
    pub label: String,
    pub x_t: Coef,
    pub x_r: Coef,
    pub v: Coef,
    /// g = y^(κ-1) F, the source in h-form.
    pub forcing: Coef,
}

/// Sup bounds measured on the grid by [`EquationSpec::validate`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpecBounds {
    /// sup |X|.
    pub x_sup: f64,
    /// sup |V| / (1/y + (n-1)/r).
    pub v_weighted_sup: f64,
}

impl EquationSpec {
    /// X = V = F = 0.
    pub fn free() -> Self {
        EquationSpec { label: "free".into(), ..Default::default() }
    }

    /// X = (0.1, 0.05 sin r), V = 0.2 min(1/y, 10).
    pub fn demo() -> Self {
        EquationSpec {
            label: "demo".into(),
            x_t: Coef::radial(|_| 0.1),
            x_r: Coef::radial(|r| 0.05 * r.sin()),
            v: Coef::radial(|r| 0.2 * (1.0 / (1.0 - r)).min(10.0)),
            forcing: Coef::Zero,
        }
    }

    /// V = -(n-1)κ/(r y), which turns □_κ u = V u into □_y u = 0.
    pub fn twisted_free(n: usize, kappa: f64) -> Self {
        let c = -(n as f64 - 1.0) * kappa;
        EquationSpec {
            label: "twisted-free".into(),
            v: if n == 1 { Coef::Zero } else { Coef::radial(move |r| c / (r * (1.0 - r))) },
            ..Default::default()
        }
    }

    pub fn is_free(&self) -> bool {
        self.x_t.is_zero() && self.x_r.is_zero() && self.v.is_zero() && self.forcing.is_zero()
    }

    /// True when no coefficient depends on t.
    pub fn is_autonomous(&self) -> bool {
        ![&self.x_t, &self.x_r, &self.v].iter().any(|c| matches!(c, Coef::General(_)))
    }

    /// Checks |X| bounded and |V| <= C (1/y + (n-1)/r) on the grid over [-T, T].
    pub fn validate(&self, params: &Params, grid: &RadialGrid) -> Result<SpecBounds> {
        check_dimension(params.n)?;
        let nm1 = params.n as f64 - 1.0;
        let mut x_sup: f64 = 0.0;
        let mut v_sup: f64 = 0.0;
        for i in 0..=20 {
            let t = -params.t_max + params.t_max * i as f64 / 10.0;
            for (&r, &y) in grid.nodes.iter().zip(&grid.y_values) {
                let xt = self.x_t.eval(t, r);
                let xr = self.x_r.eval(t, r);
                let v = self.v.eval(t, r);
                let g = self.forcing.eval(t, r);
                if !(xt.is_finite() && xr.is_finite() && v.is_finite() && g.is_finite()) {
                    return Err(Error::param(format!(
                        "equation '{}' is not finite at t = {t}, r = {r}",
                        self.label
                    )));
                }
                x_sup = x_sup.max(xt.hypot(xr));
                v_sup = v_sup.max(v.abs() / (1.0 / y + nm1 / r));
            }
        }
        // the grid never samples r = 1; a bound that grows with refinement
        // shows up as a large weighted sup on the outermost nodes
        const COEF_CAP: f64 = 1e6;
        if x_sup > COEF_CAP || v_sup > COEF_CAP {
            return Err(Error::param(format!(
                "equation '{}' violates the coefficient bounds: sup|X| = {x_sup:.3e}, \
                 sup|V|/(1/y + (n-1)/r) = {v_sup:.3e}",
                self.label
            )));
        }
        Ok(SpecBounds { x_sup, v_weighted_sup: v_sup })
    }
}

const GAUSS_X: [f64; 4] =
    [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GAUSS_W: [f64; 4] =
    [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// 8-point Gauss-Legendre on [a, b].
fn gauss(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GAUSS_X.iter().zip(GAUSS_W) {
        acc += w * (f(m - h * x) + f(m + h * x));
    }
    acc * h
}

/// Discrete spatial operator of one mode.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub mode: Mode,
    pub params: Params,
    pub grid: RadialGrid,
    /// ∫ ρ dr over each cell.
    pub mass: Vec<f64>,
    /// Face conductances 1/∫ ρ^(-1) dr; entry j sits between nodes j-1 and j,
    /// entry 0 is the r = 0 face and the last entry the r = 1 face.
    pub conductance: Vec<f64>,
    /// ∫ q ρ dr over each cell.
    pub potential: Vec<f64>,
    /// ∫ ρ / y dr over each cell divided by the mass.
    pub inv_y_avg: Vec<f64>,
    /// Gershgorin bound on the spectral radius of the symmetric part.
    pub spectral_bound: f64,
    /// 3-point h_r stencils: first index and weights.
    grad: Vec<(usize, [f64; 3])>,
}

impl ModeOperator {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// -(ρ^(-1)(ρ h_r)_r - q h) in cell-averaged form, i.e. the positive
    /// stiffness part divided by the mass.
    pub fn stiffness(&self, h: &[f64], out: &mut [f64]) {
        let n = h.len();
        let k = &self.conductance;
        for j in 0..n {
            let left = if j == 0 { k[0] * h[0] } else { k[j] * (h[j] - h[j - 1]) };
            let right = if j + 1 == n { 0.0 } else { k[j + 1] * (h[j + 1] - h[j]) };
            out[j] = (left - right + self.potential[j] * h[j]) / self.mass[j];
        }
    }

    /// Centered h_r at node j.
    pub fn grad_at(&self, h: &[f64], j: usize) -> f64 {
        let (s, w) = self.grad[j];
        w[0] * h[s] + w[1] * h[s + 1] + w[2] * h[s + 2]
    }

    /// Energy-conserving quadratic form h·K h + Σ Q h² (times the sphere area).
    pub fn discrete_energy(&self, h: &[f64], h_t: &[f64]) -> f64 {
        let n = h.len();
        let mut e = 0.0;
        for j in 0..n {
            e += self.mass[j] * h_t[j] * h_t[j] + self.potential[j] * h[j] * h[j];
            let d = if j == 0 { h[0] } else { h[j] - h[j - 1] };
            e += self.conductance[j] * d * d;
        }
        e * self.params.sphere_area()
    }
}

/// Builds the finite-volume operator of `mode`. The Dirichlet face at r = 0
/// is active only when the mode must vanish there.
pub fn assemble_mode_operator(
    mode: Mode,
    spec: &EquationSpec,
    params: &Params,
    grid: &RadialGrid,
) -> Result<ModeOperator> {
    check_dimension(params.n)?;
    if grid.dim != params.n {
        return Err(Error::param(format!(
            "grid built for n = {}, params have n = {}",
            grid.dim, params.n
        )));
    }
    spec.validate(params, grid)?;
    let n_r = grid.len();
    let a = params.a();
    let nm1 = params.n as f64 - 1.0;
    let p = grid.grading_exponent;
    // h = r^ℓ g turns mode ℓ into the radial problem in dimension n + 2ℓ;
    // the g-operator is assembled and mapped back by the congruence
    // D = diag(r_j^ℓ), which keeps h_0 consistent with h ~ r^ℓ
    let ell = if params.n > 1 { mode.ell as i32 } else { 0 };
    let lam_rest = mode.eigenvalue - (ell * (ell + params.n as i32 - 2)) as f64;
    let r_of = |s: f64| 1.0 - s.powf(p);
    let jac = |s: f64| p * s.powf(p - 1.0);
    let rho = |s: f64| r_of(s).powi(params.n as i32 - 1 + 2 * ell) * s.powf(2.0 * a * p);
    // face j (between nodes j-1 and j) sits at s = (n_r - j + 1/2) ds
    let face_s = |j: usize| -> f64 {
        if j == 0 {
            1.0
        } else if j == n_r {
            0.0
        } else {
            (n_r as f64 - j as f64 + 0.5) * grid.ds
        }
    };
    let mut mass = vec![0.0; n_r];
    let mut potential = vec![0.0; n_r];
    let mut inv_y_avg = vec![0.0; n_r];
    for j in 0..n_r {
        let (hi, lo) = (face_s(j), face_s(j + 1));
        mass[j] = gauss(lo, hi, |s| rho(s) * jac(s));
        potential[j] = gauss(lo, hi, |s| {
            let r = r_of(s);
            let y = s.powf(p);
            let q = a * (nm1 + 2.0 * ell as f64) / (r * y) + lam_rest / (r * r);
            q * rho(s) * jac(s)
        });
        inv_y_avg[j] = gauss(lo, hi, |s| rho(s) * jac(s) / s.powf(p)) / mass[j];
    }
    let mut conductance = vec![0.0; n_r + 1];
    for (j, cond) in conductance.iter_mut().enumerate().take(n_r).skip(1) {
        let (hi, lo) = (grid.s_values[j - 1], grid.s_values[j]);
        *cond = 1.0 / gauss(lo, hi, |s| jac(s) / rho(s));
    }
    if ell > 0 {
        let d: Vec<f64> = grid.nodes.iter().map(|r| r.powi(ell)).collect();
        let k = conductance.clone();
        for j in 0..n_r {
            let dj2 = d[j] * d[j];
            mass[j] /= dj2;
            potential[j] /= dj2;
            if j > 0 {
                potential[j] += k[j] * (1.0 / dj2 - 1.0 / (d[j] * d[j - 1]));
                conductance[j] = k[j] / (d[j] * d[j - 1]);
            }
            if j + 1 < n_r {
                potential[j] += k[j + 1] * (1.0 / dj2 - 1.0 / (d[j] * d[j + 1]));
            }
        }
    }
    if params.n == 1 {
        if mode.vanishes_at_origin {
            // odd sector: h(0) = 0, flux through [0, r_0]
            conductance[0] = 1.0 / gauss(grid.s_values[0], 1.0, |s| jac(s) / rho(s));
        } else {
            // even sector: u_r(0) = 0 reads h_r(0) = (1-κ) h(0), since
            // 1 - |x| has a kink at the origin; h(0) = h_0 / (1 + a r_0)
            potential[0] += a / (1.0 + a * grid.nodes[0]);
        }
    }
    let grad = (0..n_r)
        .map(|j| {
            let start = j.saturating_sub(1).min(n_r - 3);
            let w = fornberg(grid.nodes[j], &grid.nodes[start..start + 3], 1);
            (start, [w[1][0], w[1][1], w[1][2]])
        })
        .collect();
    let mut spectral_bound: f64 = 0.0;
    for j in 0..n_r {
        let off = conductance[j] + conductance[j + 1];
        let row = (off + potential[j]).abs() + off;
        spectral_bound = spectral_bound.max(row / mass[j]);
    }
    Ok(ModeOperator {
        mode,
        params: *params,
        grid: grid.clone(),
        mass,
        conductance,
        potential,
        inv_y_avg,
        spectral_bound,
        grad,
    })
}

/// Time integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum Scheme {
    #[default]
    Leapfrog,
    Rk4,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub scheme: Scheme,
    /// dt <= cfl · min Δr.
    pub cfl: f64,
    /// Spacing of stored snapshots; every step when `None`.
    pub snapshot_dt: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { scheme: Scheme::Leapfrog, cfl: 0.5, snapshot_dt: None }
    }
}

/// Stored history of one mode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mode: Mode,
    pub params: Params,
    pub grid: RadialGrid,
    pub times: Vec<f64>,
    /// h at each snapshot (rows) and node (columns).
    pub h: Array2<f64>,
    pub h_t: Array2<f64>,
    pub h_tt: Array2<f64>,
    /// V at t = 0 per node, used by the conserved energy.
    pub v_profile: Vec<f64>,
    pub scheme: Scheme,
    /// Signed step.
    pub dt: f64,
    /// |dt| / min Δr.
    pub cfl: f64,
    pub steps: usize,
    /// ∫ h(t, 1)^2 |dt| over the run at full step resolution.
    pub boundary_sq_integral: f64,
}

/// Per-step evaluation of the right-hand side.
struct Rhs<'a> {
    op: &'a ModeOperator,
    spec: &'a EquationSpec,
    xt: Vec<f64>,
    xr: Vec<f64>,
    v: Vec<f64>,
    g: Vec<f64>,
    stiff: Vec<f64>,
    sing: f64,
    /// h-linear part as 3-wide rows (first index, weights) when X^r and V
    /// do not depend on t.
    band: Option<Vec<(usize, [f64; 3])>>,
}

impl<'a> Rhs<'a> {
    fn new(op: &'a ModeOperator, spec: &'a EquationSpec) -> Self {
        let n = op.len();
        let mut rhs = Rhs {
            op,
            spec,
            xt: vec![0.0; n],
            xr: vec![0.0; n],
            v: vec![0.0; n],
            g: vec![0.0; n],
            stiff: vec![0.0; n],
            sing: 1.0 - 2.0 * op.params.kappa,
            band: None,
        };
        rhs.refresh(0.0, true);
        if !matches!(spec.x_r, Coef::General(_)) && !matches!(spec.v, Coef::General(_)) {
            rhs.band = Some(rhs.assemble_band());
        }
        rhs
    }

    fn assemble_band(&self) -> Vec<(usize, [f64; 3])> {
        let op = self.op;
        let n = op.len();
        (0..n)
            .map(|j| {
                let (start, gw) = op.grad[j];
                let mut w = [0.0; 3];
                let mut put = |node: usize, val: f64| w[node - start] += val;
                let m = op.mass[j];
                if j > 0 {
                    put(j - 1, op.conductance[j] / m);
                }
                if j + 1 < n {
                    put(j + 1, op.conductance[j + 1] / m);
                }
                let diag = -(op.conductance[j] + op.conductance[j + 1] + op.potential[j]) / m
                    - self.v[j]
                    + self.xr[j] * self.sing * op.inv_y_avg[j];
                put(j, diag);
                for (i, g) in gw.iter().enumerate() {
                    w[i] -= self.xr[j] * g;
                }
                (start, w)
            })
            .collect()
    }

    fn refresh(&mut self, t: f64, force: bool) {
        let nodes = &self.op.grid.nodes;
        for (c, out) in [
            (&self.spec.x_t, &mut self.xt),
            (&self.spec.x_r, &mut self.xr),
            (&self.spec.v, &mut self.v),
            (&self.spec.forcing, &mut self.g),
        ] {
            if force || matches!(c, Coef::General(_)) {
                c.fill(t, nodes, out);
            }
        }
    }

    /// Everything except the damping -X^t h_t.
    fn eval(&mut self, t: f64, h: &[f64], out: &mut [f64]) {
        self.refresh(t, false);
        if let Some(band) = &self.band {
            for (j, (o, (s, w))) in out.iter_mut().zip(band).enumerate() {
                *o = w[0] * h[*s] + w[1] * h[s + 1] + w[2] * h[s + 2] - self.g[j];
            }
            return;
        }
        self.op.stiffness(h, &mut self.stiff);
        for j in 0..h.len() {
            let mut acc = -self.stiff[j] - self.v[j] * h[j] - self.g[j];
            if self.xr[j] != 0.0 {
                acc -= self.xr[j] * (self.op.grad_at(h, j) - self.sing * self.op.inv_y_avg[j] * h[j]);
            }
            out[j] = acc;
        }
    }
}

/// Weights of the quadratic extrapolation to y = 0 through the three
/// outermost nodes, ordered inward to outward.
fn boundary_weights(grid: &RadialGrid) -> [f64; 3] {
    let n = grid.len();
    let (y0, y1, y2) = (grid.y_values[n - 1], grid.y_values[n - 2], grid.y_values[n - 3]);
    [
        (y0 * y1) / ((y2 - y0) * (y2 - y1)),
        (y0 * y2) / ((y1 - y0) * (y1 - y2)),
        (y1 * y2) / ((y0 - y1) * (y0 - y2)),
    ]
}

fn check_finite(h: &[f64], t: f64) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver(format!("non-finite state at t = {t:.6}")))
    }
}

/// Largest stable |dt| for the scheme, from the Gershgorin bound.
pub fn stable_step(op: &ModeOperator, spec: &EquationSpec, scheme: Scheme) -> Result<f64> {
    let b = spec.validate(&op.params, &op.grid)?;
    let n = op.len();
    let mut lower: f64 = 0.0;
    for j in 0..n {
        let y = op.grid.y_values[j];
        let r = op.grid.nodes[j];
        let v_bound = b.v_weighted_sup * (1.0 / y + (op.params.n as f64 - 1.0) / r);
        let x_bound = b.x_sup * (1.0 - 2.0 * op.params.kappa) * op.inv_y_avg[j];
        lower = lower.max(v_bound + x_bound);
    }
    let omega = (op.spectral_bound + lower).sqrt();
    Ok(match scheme {
        Scheme::Leapfrog => 2.0 / omega,
        Scheme::Rk4 => 2.0 * std::f64::consts::SQRT_2 / omega,
    })
}

/// Integrates from `t_start` to `t_end` (either direction) from h = `h0`,
/// h_t = `v0`. The step is the largest one allowed by the CFL number that
/// divides the interval into whole snapshot strides.
pub fn solve_ivp(
    op: &ModeOperator,
    spec: &EquationSpec,
    h0: &[f64],
    v0: &[f64],
    t_start: f64,
    t_end: f64,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    let n = op.len();
    if h0.len() != n || v0.len() != n {
        return Err(Error::shape(format!(
            "initial data has {} / {} values, grid has {n}",
            h0.len(),
            v0.len()
        )));
    }
    if !(opts.cfl > 0.0) {
        return Err(Error::param(format!("CFL number {} must be positive", opts.cfl)));
    }
    let span = t_end - t_start;
    if !span.is_finite() || span == 0.0 {
        return Err(Error::param("empty time interval"));
    }
    let min_dr = op.grid.min_spacing();
    let dt_max = opts.cfl * min_dr;
    let stable = stable_step(op, spec, opts.scheme)?;
    if dt_max > stable {
        return Err(Error::Solver(format!(
            "CFL violation: dt = {dt_max:.3e} exceeds the stability bound {stable:.3e} \
             (lower the CFL number below {:.3})",
            stable / min_dr
        )));
    }
    let snap = opts.snapshot_dt.unwrap_or(dt_max).max(dt_max);
    // tolerate rounding in span / snap so a grid spacing maps to whole slices
    let n_snap = (span.abs() / snap * (1.0 - 1e-9)).ceil().max(1.0) as usize;
    let stride = (span.abs() / (n_snap as f64 * dt_max)).ceil().max(1.0) as usize;
    let steps = stride * n_snap;
    let dt = span / steps as f64;

    let mut rhs = Rhs::new(op, spec);
    let v_profile = rhs.v.clone();
    let mut times = Vec::with_capacity(n_snap + 1);
    let mut hs = Array2::zeros((n_snap + 1, n));
    let mut hts = Array2::zeros((n_snap + 1, n));
    let mut htts = Array2::zeros((n_snap + 1, n));
    let mut acc = vec![0.0; n];

    let mut record = |k: usize, t: f64, h: &[f64], v: &[f64], rhs: &mut Rhs| {
        rhs.eval(t, h, &mut acc);
        times.push(t);
        for j in 0..n {
            hs[[k, j]] = h[j];
            hts[[k, j]] = v[j];
            htts[[k, j]] = acc[j] - rhs.xt[j] * v[j];
        }
    };

    let bw = boundary_weights(&op.grid);
    let bval = |h: &[f64]| bw[0] * h[n - 3] + bw[1] * h[n - 2] + bw[2] * h[n - 1];
    let mut trace_sq = 0.0;
    match opts.scheme {
        Scheme::Leapfrog => {
            let mut prev = h0.to_vec();
            let mut cur = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut f = vec![0.0; n];
            rhs.eval(t_start, h0, &mut f);
            for j in 0..n {
                let a0 = f[j] - rhs.xt[j] * v0[j];
                cur[j] = h0[j] + dt * v0[j] + 0.5 * dt * dt * a0;
            }
            record(0, t_start, h0, v0, &mut rhs);
            trace_sq += 0.5 * bval(h0).powi(2);
            let mut vel = vec![0.0; n];
            // step k advances cur = h^k to next = h^(k+1); h^(k-1) is prev
            for k in 1..=steps {
                let t = t_start + k as f64 * dt;
                rhs.eval(t, &cur, &mut f);
                for j in 0..n {
                    let damp = 0.5 * dt * rhs.xt[j];
                    next[j] = (2.0 * cur[j] - (1.0 - damp) * prev[j] + dt * dt * f[j]) / (1.0 + damp);
                }
                let b = bval(&cur);
                trace_sq += if k == steps { 0.5 } else { 1.0 } * b * b;
                if k % stride == 0 {
                    check_finite(&next, t + dt)?;
                    for j in 0..n {
                        vel[j] = (next[j] - prev[j]) / (2.0 * dt);
                    }
                    record(k / stride, t, &cur, &vel, &mut rhs);
                }
                std::mem::swap(&mut prev, &mut cur);
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Scheme::Rk4 => {
            let mut h = h0.to_vec();
            let mut v = v0.to_vec();
            record(0, t_start, &h, &v, &mut rhs);
            trace_sq += 0.5 * bval(&h).powi(2);
            let stage = |t: f64, h: &[f64], v: &[f64], dh: &mut Vec<f64>, dv: &mut Vec<f64>, rhs: &mut Rhs| {
                rhs.eval(t, h, dv);
                for j in 0..n {
                    dv[j] -= rhs.xt[j] * v[j];
                    dh[j] = v[j];
                }
            };
            let (mut k1h, mut k1v) = (vec![0.0; n], vec![0.0; n]);
            let (mut k2h, mut k2v) = (vec![0.0; n], vec![0.0; n]);
            let (mut k3h, mut k3v) = (vec![0.0; n], vec![0.0; n]);
            let (mut k4h, mut k4v) = (vec![0.0; n], vec![0.0; n]);
            let (mut th, mut tv) = (vec![0.0; n], vec![0.0; n]);
            for k in 1..=steps {
                let t = t_start + (k - 1) as f64 * dt;
                stage(t, &h, &v, &mut k1h, &mut k1v, &mut rhs);
                for j in 0..n {
                    th[j] = h[j] + 0.5 * dt * k1h[j];
                    tv[j] = v[j] + 0.5 * dt * k1v[j];
                }
                stage(t + 0.5 * dt, &th, &tv, &mut k2h, &mut k2v, &mut rhs);
                for j in 0..n {
                    th[j] = h[j] + 0.5 * dt * k2h[j];
                    tv[j] = v[j] + 0.5 * dt * k2v[j];
                }
                stage(t + 0.5 * dt, &th, &tv, &mut k3h, &mut k3v, &mut rhs);
                for j in 0..n {
                    th[j] = h[j] + dt * k3h[j];
                    tv[j] = v[j] + dt * k3v[j];
                }
                stage(t + dt, &th, &tv, &mut k4h, &mut k4v, &mut rhs);
                for j in 0..n {
                    h[j] += dt / 6.0 * (k1h[j] + 2.0 * k2h[j] + 2.0 * k3h[j] + k4h[j]);
                    v[j] += dt / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
                }
                let b = bval(&h);
                trace_sq += if k == steps { 0.5 } else { 1.0 } * b * b;
                if k % stride == 0 {
                    check_finite(&h, t + dt)?;
                    record(k / stride, t + dt, &h, &v, &mut rhs);
                }
            }
        }
    }
    Ok(Trajectory {
        mode: op.mode,
        params: op.params,
        grid: op.grid.clone(),
        times,
        h: hs,
        h_t: hts,
        h_tt: htts,
        v_profile,
        scheme: opts.scheme,
        dt,
        cfl: dt.abs() / min_dr,
        steps,
        boundary_sq_integral: trace_sq * dt.abs(),
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> (Vec<f64>, Vec<f64>) {
        let last = self.len() - 1;
        (self.h.row(last).to_vec(), self.h_t.row(last).to_vec())
    }

    /// u = y^(1-κ) h at snapshot k.
    pub fn u_row(&self, k: usize) -> Vec<f64> {
        let a = self.params.a();
        self.h.row(k).iter().zip(&self.grid.y_values).map(|(h, y)| h * y.powf(a)).collect()
    }

    /// Joins a backward run from t0 and a forward run from t0 into one
    /// increasing history. Both must start from the same state.
    pub fn join(backward: &Trajectory, forward: &Trajectory) -> Result<Trajectory> {
        if backward.times.first() != forward.times.first() || backward.mode != forward.mode {
            return Err(Error::param("trajectories do not share an initial state"));
        }
        let nb = backward.len();
        let nf = forward.len();
        let n = forward.grid.len();
        let mut out = forward.clone();
        out.times = backward.times.iter().rev().chain(forward.times.iter().skip(1)).copied().collect();
        for (dst, (a, b)) in [
            (&mut out.h, (&backward.h, &forward.h)),
            (&mut out.h_t, (&backward.h_t, &forward.h_t)),
            (&mut out.h_tt, (&backward.h_tt, &forward.h_tt)),
        ] {
            let mut m = Array2::zeros((nb + nf - 1, n));
            for k in 0..nb {
                m.row_mut(k).assign(&a.row(nb - 1 - k));
            }
            for k in 1..nf {
                m.row_mut(nb - 1 + k).assign(&b.row(k));
            }
            *dst = m;
        }
        out.steps += backward.steps;
        out.boundary_sq_integral += backward.boundary_sq_integral;
        Ok(out)
    }
}

/// Energies of one mode (or a sum of modes) per snapshot.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EnergyRecord {
    pub times: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// E1 without u^2, plus ∫ W u^2 with W = V + (n-1)κ/(r y), plus
    /// σ_1 κ u(t, 0)^2 when n = 1. Exactly conserved when X = 0 and V is
    /// static; for n = 1 the point term accounts for the kink of 1 - |x|.
    pub e_conserved: Vec<f64>,
}

impl EnergyRecord {
    /// Pointwise sum of records on the same time nodes.
    pub fn sum(records: &[EnergyRecord]) -> Result<EnergyRecord> {
        let Some(first) = records.first() else {
            return Ok(EnergyRecord::default());
        };
        let mut out = first.clone();
        for r in &records[1..] {
            if r.times.len() != out.times.len() {
                return Err(Error::shape("energy records on different time nodes"));
            }
            for k in 0..out.times.len() {
                out.e1[k] += r.e1[k];
                out.e2[k] += r.e2[k];
                out.e_conserved[k] += r.e_conserved[k];
            }
        }
        Ok(out)
    }

    /// max_k |E(t_k) - E(t_0)| / E(t_0) of the conserved energy.
    pub fn conserved_drift(&self) -> f64 {
        let e0 = self.e_conserved[0];
        self.e_conserved.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(1e-300)
    }
}

/// Radial part of E1 for a mode given h, h_t (and the angular eigenvalue);
/// returns (E1, ∫u^2, ∫(D_r u)^2) with all densities in u-form.
fn e1_parts(
    h: ArrayView1<f64>,
    h_t: ArrayView1<f64>,
    lam: f64,
    params: &Params,
    grid: &RadialGrid,
    dr: &DiffOp,
) -> Result<(f64, f64, f64)> {
    let a = params.a();
    let k = params.kappa;
    let h_r = dr.apply(h);
    let n = grid.len();
    let mut dens = vec![0.0; n];
    let mut usq = vec![0.0; n];
    let mut drsq = vec![0.0; n];
    for j in 0..n {
        let y = grid.y_values[j];
        let r = grid.nodes[j];
        let ya = y.powf(a);
        let u = ya * h[j];
        let ut = ya * h_t[j];
        let du = ya * h_r[j] - (1.0 - 2.0 * k) * y.powf(-k) * h[j];
        usq[j] = u * u;
        drsq[j] = du * du;
        dens[j] = ut * ut + du * du + lam * u * u / (r * r) + u * u;
    }
    Ok((
        integrate_space_regular_origin(ndarray::aview1(&dens), grid)?,
        integrate_space_regular_origin(ndarray::aview1(&usq), grid)?,
        integrate_space_regular_origin(ndarray::aview1(&drsq), grid)?,
    ))
}

/// E1 of a single state of one mode.
pub fn mode_e1(h: &[f64], h_t: &[f64], mode: &Mode, params: &Params, grid: &RadialGrid) -> Result<f64> {
    if h.len() != grid.len() || h_t.len() != grid.len() {
        return Err(Error::shape("state length differs from the grid"));
    }
    let dr = DiffOp::new(&grid.nodes, 1, STENCIL_WIDTH);
    Ok(e1_parts(ndarray::aview1(h), ndarray::aview1(h_t), mode.eigenvalue, params, grid, &dr)?.0)
}

/// E1, E2 and the conserved energy at every snapshot.
///
/// E2 is assembled per mode as Ē1[D_r u] + E1[∂_t u] + E1[√L u / r] + E1[u];
/// the angular components of ∇̸u are represented by the single scalar √L u/r.
pub fn energies(traj: &Trajectory) -> Result<EnergyRecord> {
    let p = &traj.params;
    let grid = &traj.grid;
    let a = p.a();
    let k = p.kappa;
    let nm1 = p.n as f64 - 1.0;
    let lam = traj.mode.eigenvalue;
    let dr = DiffOp::new(&grid.nodes, 1, STENCIL_WIDTH);
    let drr = DiffOp::new(&grid.nodes, 2, STENCIL_WIDTH);
    let n = grid.len();
    let w: Vec<f64> = (0..n)
        .map(|j| traj.v_profile[j] + nm1 * k / (grid.nodes[j] * grid.y_values[j]))
        .collect();
    let mut rec = EnergyRecord { times: traj.times.clone(), ..Default::default() };
    let mut buf = vec![0.0; n];
    for step in 0..traj.len() {
        let h = traj.h.row(step);
        let ht = traj.h_t.row(step);
        let htt = traj.h_tt.row(step);
        let (e1, usq, _) = e1_parts(h, ht, lam, p, grid, &dr)?;
        for j in 0..n {
            let u = grid.y_values[j].powf(a) * h[j];
            buf[j] = w[j] * u * u;
        }
        let mut pot = integrate_space_regular_origin(ndarray::aview1(&buf), grid)?;
        if p.n == 1 {
            let h0 = origin_value(h, grid);
            pot += p.sphere_area() * k * h0 * h0;
        }
        rec.e1.push(e1);
        rec.e_conserved.push(e1 - usq + pot);

        // Ē1[D_r u]: w = D_r u = y^(-κ) g with g = y h_r - (1-2κ) h,
        // D̄_r w = y^(-κ)(y h_rr - 2(1-κ) h_r)
        let h_r = dr.apply(h);
        let h_rr = drr.apply(h);
        let ht_r = dr.apply(ht);
        for j in 0..n {
            let y = grid.y_values[j];
            let r = grid.nodes[j];
            let ymk = y.powf(-k);
            let wv = ymk * (y * h_r[j] - (1.0 - 2.0 * k) * h[j]);
            let wt = ymk * (y * ht_r[j] - (1.0 - 2.0 * k) * ht[j]);
            let dbar = ymk * (y * h_rr[j] - 2.0 * a * h_r[j]);
            buf[j] = wt * wt + dbar * dbar + lam * wv * wv / (r * r) + wv * wv;
        }
        let mut e2 = integrate_space_regular_origin(ndarray::aview1(&buf), grid)?;
        e2 += e1_parts(ht, htt, lam, p, grid, &dr)?.0;
        if lam > 0.0 {
            let s = lam.sqrt();
            let hs: Vec<f64> = (0..n).map(|j| s * h[j] / grid.nodes[j]).collect();
            let hts: Vec<f64> = (0..n).map(|j| s * ht[j] / grid.nodes[j]).collect();
            e2 += e1_parts(ndarray::aview1(&hs), ndarray::aview1(&hts), lam, p, grid, &dr)?.0;
        }
        e2 += e1;
        rec.e2.push(e2);
    }
    Ok(rec)
}

/// h(0) by quadratic extrapolation through the three innermost nodes.
fn origin_value(h: ArrayView1<f64>, grid: &RadialGrid) -> f64 {
    let (r0, r1, r2) = (grid.nodes[0], grid.nodes[1], grid.nodes[2]);
    h[0] * (r1 * r2) / ((r0 - r1) * (r0 - r2))
        + h[1] * (r0 * r2) / ((r1 - r0) * (r1 - r2))
        + h[2] * (r0 * r1) / ((r2 - r0) * (r2 - r1))
}

/// Boundary traces of one mode per snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct TraceData {
    pub times: Vec<f64>,
    /// 𝒩_κ u(t) = -(1-2κ) h(t, 1).
    pub neumann: Vec<f64>,
    /// 𝒟_κ u(t); zero by construction of the closure.
    pub dirichlet: Vec<f64>,
}

pub fn extract_traces(traj: &Trajectory) -> TraceData {
    let k = traj.params.kappa;
    let neumann: Vec<f64> =
        traj.h.outer_iter().map(|row| -(1.0 - 2.0 * k) * boundary_value(row, &traj.grid)).collect();
    TraceData { times: traj.times.clone(), dirichlet: vec![0.0; neumann.len()], neumann }
}

/// M̂ = max over snapshot pairs of |ln(E(t_1)/E(t_0))| / |t_1 - t_0|.
pub fn gronwall_fit(times: &[f64], energy: &[f64]) -> Result<f64> {
    if times.len() != energy.len() || times.len() < 2 {
        return Err(Error::shape("gronwall fit needs at least two matching samples"));
    }
    if energy.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Degenerate("zero energy window".into()));
    }
    let logs: Vec<f64> = energy.iter().map(|e| e.ln()).collect();
    let mut best: f64 = 0.0;
    for i in 0..times.len() {
        for k in i + 1..times.len() {
            let dt = (times[k] - times[i]).abs();
            if dt > 0.0 {
                best = best.max((logs[k] - logs[i]).abs() / dt);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, kappa: f64, n_r: usize) -> (Params, RadialGrid) {
        (Params::new(n, kappa, 1.0).unwrap(), RadialGrid::build(n_r, 2.0, n).unwrap())
    }

    #[test]
    fn masses_sum_to_weighted_volume() {
        // n = 1, κ = -0.5 + 1/2 ... use ρ = y^(2a) on [0, 1]: total 1/(2a+1)
        let (p, g) = setup(1, -0.25, 64);
        let op = assemble_mode_operator(Mode::new(1, 0).unwrap(), &EquationSpec::free(), &p, &g).unwrap();
        let total: f64 = op.mass.iter().sum();
        assert!((total - 1.0 / (2.0 * p.a() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_is_static_away_from_origin_for_n1() {
        let (p, g) = setup(1, -0.3, 50);
        let op = assemble_mode_operator(Mode::new(1, 0).unwrap(), &EquationSpec::free(), &p, &g).unwrap();
        let h = vec![1.0; g.len()];
        let mut out = vec![0.0; g.len()];
        op.stiffness(&h, &mut out);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-12));
        // y^(1-κ) has a kink at x = 0, so the origin cell feels the Robin term
        assert!((out[0] - p.a() / (1.0 + p.a() * g.nodes[0]) / op.mass[0]).abs() < 1e-12);
    }

    #[test]
    fn higher_modes_match_the_h_equation_on_r_power() {
        // for h = r^ℓ: -(ρ^(-1)(ρ h_r)_r - q h) = a(n-1+2ℓ) r^(ℓ-1) / y
        let worst = |n: usize, ell: u32, n_r: usize| -> f64 {
            let (p, g) = setup(n, -0.25, n_r);
            let op = assemble_mode_operator(Mode::new(n, ell).unwrap(), &EquationSpec::free(), &p, &g).unwrap();
            let h: Vec<f64> = g.nodes.iter().map(|r| r.powi(ell as i32)).collect();
            let mut out = vec![0.0; g.len()];
            op.stiffness(&h, &mut out);
            let mut worst: f64 = 0.0;
            for (j, (&r, &y)) in g.nodes.iter().zip(&g.y_values).enumerate() {
                if (0.1..0.9).contains(&r) {
                    let exact = p.a() * (n as f64 - 1.0 + 2.0 * ell as f64) * r.powi(ell as i32 - 1) / y;
                    worst = worst.max((out[j] - exact).abs() / exact);
                }
            }
            worst
        };
        for (n, ell) in [(3, 1), (3, 2), (4, 1), (5, 3)] {
            let (e1, e2) = (worst(n, ell, 200), worst(n, ell, 400));
            assert!(e1 < 5e-3 && e2 < e1 / 3.0, "n={n} ℓ={ell}: {e1:e} -> {e2:e}");
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let (p, g) = setup(3, -0.25, 40);
        let op = assemble_mode_operator(Mode::new(3, 1).unwrap(), &EquationSpec::free(), &p, &g).unwrap();
        let z = vec![0.0; g.len()];
        let tr = solve_ivp(&op, &EquationSpec::free(), &z, &z, 0.0, 0.1, &SolveOptions::default()).unwrap();
        assert!(tr.h.iter().all(|v| *v == 0.0));
        assert!(matches!(gronwall_fit(&tr.times, &energies(&tr).unwrap().e1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let (p, g) = setup(1, -0.25, 40);
        let op = assemble_mode_operator(Mode::new(1, 0).unwrap(), &EquationSpec::free(), &p, &g).unwrap();
        let z = vec![0.0; g.len()];
        let opts = SolveOptions { cfl: 50.0, ..Default::default() };
        let err = solve_ivp(&op, &EquationSpec::free(), &z, &z, 0.0, 0.1, &opts).unwrap_err();
        assert!(err.to_string().contains("CFL"));
    }

    #[test]
    fn unbounded_potential_rejected() {
        let (p, g) = setup(1, -0.25, 40);
        let spec = EquationSpec {
            label: "bad".into(),
            v: Coef::radial(|r| 1.0 / (1.0 - r).powi(4)),
            ..Default::default()
        };
        assert!(spec.validate(&p, &g).is_err());
    }
}
