//! End-to-end studies: identity and Hardy suites, Carleman λ-sweeps,
//! observability ratios and boundary-exponent fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{dirichlet_profile, standard_corpus, Profile, TestField};
use crate::error::{Error, Result};
use crate::fields::{Mesh, ModeField};
use crate::grid::{check_dimension, check_kappa, Mode, ModeSet, Params, RadialGrid};
use crate::solver::{
    assemble_mode_operator, mode_e1, solve_ivp, EquationSpec, SolveOptions, Trajectory,
};
use crate::tolerance::{LAMBDA_STABILITY, MIN_ORDER};
use crate::verification::{
    check_boundary_limits, check_carleman, check_closed_forms, check_hardy_pointwise, check_integrated_hardy,
    check_multiplier_identity, check_multiplier_inequality, mesh_size, refinement_order,
    CarlemanTerms, Fault, IdentityReport, TruncationSpec,
};
use crate::weights::select_c;

/// Residuals below this are treated as exact and exempt from the order test.
const EXACT_RESIDUAL: f64 = 1e-11;

/// Time cutoff ξ: 1 on |t| <= T - δ, 0 on |t| >= T - δ/4, quintic
/// smoothstep in between (C^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffSpec {
    pub t_max: f64,
    pub delta: f64,
    /// T - δ.
    pub plateau_end: f64,
    /// T - δ/4.
    pub zero_start: f64,
}

pub fn build_cutoff(t_max: f64, delta: f64) -> Result<CutoffSpec> {
    if !(t_max > 0.0) {
        return Err(Error::param(format!("T must be positive, got {t_max}")));
    }
    if !(delta > 0.0 && delta < 0.5 * t_max) {
        return Err(Error::param(format!("δ = {delta} must lie in (0, T/2)")));
    }
    Ok(CutoffSpec {
        t_max,
        delta,
        plateau_end: t_max - delta,
        zero_start: t_max - 0.25 * delta,
    })
}

impl CutoffSpec {
    /// Default δ = T/8.
    pub fn standard(t_max: f64) -> Result<Self> {
        build_cutoff(t_max, t_max / 8.0)
    }

    fn width(&self) -> f64 {
        self.zero_start - self.plateau_end
    }

    /// (ξ, ξ', ξ'') at t.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        let a = t.abs();
        if a <= self.plateau_end {
            return (1.0, 0.0, 0.0);
        }
        if a >= self.zero_start {
            return (0.0, 0.0, 0.0);
        }
        let w = self.width();
        let x = (a - self.plateau_end) / w;
        let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x);
        let dds = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        let sign = t.signum();
        (1.0 - s, -sign * ds / w, -dds / (w * w))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }

    pub fn sample(&self, nodes: &[f64]) -> Vec<f64> {
        nodes.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Observation time threshold for full-boundary observability.
pub fn observability_threshold(n: usize, kappa: f64) -> Result<f64> {
    check_dimension(n)?;
    check_kappa(kappa)?;
    let e = 1.0 + 2.0 * kappa;
    Ok(match n {
        1 => 4.0 * 15f64.sqrt() / e,
        3 => (4.0 * 15f64.sqrt() / e).max(2.0 * 30f64.sqrt() / (kappa.abs() * e).sqrt()),
        _ => 4.0 * 3f64.sqrt() / e,
    })
}

// ---------------------------------------------------------------- suites

#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub dims: Vec<usize>,
    pub kappas: Vec<f64>,
    /// Refinement ladder; the last entry is the reference mesh.
    pub n_r_list: Vec<usize>,
    pub grading: f64,
    pub t_max: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Mesh for the closed-form comparison.
    pub closed_form_n_r: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            dims: vec![1, 3, 4],
            kappas: vec![-0.1, -0.25, -0.4],
            n_r_list: vec![100, 200, 400],
            grading: 2.0,
            t_max: 1.0,
            epsilon: 0.1,
            seed: 0,
            closed_form_n_r: 800,
        }
    }
}

impl SuiteConfig {
    fn validate(&self) -> Result<()> {
        for &n in &self.dims {
            check_dimension(n)?;
        }
        for &k in &self.kappas {
            check_kappa(k)?;
        }
        if self.n_r_list.is_empty() {
            return Err(Error::Config("empty n_r ladder".into()));
        }
        Ok(())
    }

    fn params(&self, n: usize, kappa: f64) -> Result<Params> {
        Ok(Params::new(n, kappa, self.t_max)?.with_c(select_c(n, kappa, self.t_max)?))
    }
}

/// One check inside a suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub n: usize,
    pub kappa: f64,
    pub n_r: usize,
    pub field: String,
    pub report: IdentityReport,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub passed: bool,
}

impl SuiteReport {
    fn finish(mut self) -> Self {
        self.passed = self.entries.iter().all(|e| e.report.passed);
        self
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.report.passed)
    }
}

fn for_each_point<T: Send>(
    cfg: &SuiteConfig,
    f: impl Fn(usize, f64) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let points: Vec<(usize, f64)> =
        cfg.dims.iter().flat_map(|&n| cfg.kappas.iter().map(move |&k| (n, k))).collect();
    let chunks: Vec<Result<Vec<T>>> = points.par_iter().map(|&(n, k)| f(n, k)).collect();
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Multiplier identity with refinement orders, the multiplier inequality at
/// the reference mesh, and the closed forms of w and 𝒜.
pub fn run_identity_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let entries = for_each_point(cfg, |n, kappa| {
        let p = cfg.params(n, kappa)?;
        let corpus = standard_corpus(n, cfg.t_max, cfg.seed)?;
        let mut out = Vec::new();
        let mut ladder: Vec<Vec<IdentityReport>> = vec![Vec::new(); corpus.len()];
        let mut sizes = Vec::new();
        let reference = *cfg.n_r_list.last().expect("validated");
        for &n_r in &cfg.n_r_list {
            let mesh = Mesh::build(n, n_r, cfg.grading, cfg.t_max, n_r + 1)?;
            let tr = TruncationSpec::new(cfg.epsilon, &mesh.radial)?;
            sizes.push(mesh_size(&mesh));
            for (i, f) in corpus.iter().enumerate() {
                let field = f.sample(&p, &mesh)?;
                ladder[i].push(check_multiplier_identity(&field, &mesh, &tr)?);
                if n_r == reference {
                    let rep = check_multiplier_inequality(&field, &mesh, &tr, Fault::None)?;
                    out.push(SuiteEntry { n, kappa, n_r, field: f.name.clone(), report: rep });
                }
            }
        }
        for (f, reps) in corpus.iter().zip(ladder) {
            let errs: Vec<f64> = reps.iter().map(|r| r.relative_residual).collect();
            let mut rep = reps.last().expect("non-empty ladder").clone();
            if errs.len() >= 2 {
                let order = refinement_order(&sizes, &errs);
                rep.refinement_order = Some(order);
                let exact = rep.relative_residual < EXACT_RESIDUAL;
                rep.passed = rep.passed && (exact || order >= MIN_ORDER);
            }
            out.push(SuiteEntry { n, kappa, n_r: reference, field: f.name.clone(), report: rep });
        }
        let mesh = Mesh::build(n, cfg.closed_form_n_r, cfg.grading, cfg.t_max, 41)?;
        let qs = [1.0, 2.0 * kappa, 2.0 * kappa + 1.0];
        for rep in check_closed_forms(&p, &mesh, &qs)? {
            out.push(SuiteEntry {
                n,
                kappa,
                n_r: cfg.closed_form_n_r,
                field: "closed-form".into(),
                report: rep,
            });
        }
        Ok(out)
    })?;
    Ok(SuiteReport { entries, passed: false }.finish())
}

/// Pointwise Hardy identity (integrated) at q ∈ {1, 2κ, 4κ+1} and the
/// integrated Hardy ratio, at the reference mesh.
pub fn run_hardy_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let n_r = *cfg.n_r_list.last().ok_or_else(|| Error::Config("empty n_r ladder".into()))?;
    let entries = for_each_point(cfg, |n, kappa| {
        let p = cfg.params(n, kappa)?;
        let mesh = Mesh::build(n, n_r, cfg.grading, cfg.t_max, 101)?;
        let tr = TruncationSpec::new(cfg.epsilon, &mesh.radial)?;
        let mut out = Vec::new();
        for f in standard_corpus(n, cfg.t_max, cfg.seed)? {
            let field = f.sample(&p, &mesh)?;
            for q in [1.0, 2.0 * kappa, 4.0 * kappa + 1.0] {
                let rep = check_hardy_pointwise(&field, q, &mesh, &tr)?;
                out.push(SuiteEntry { n, kappa, n_r, field: f.name.clone(), report: rep });
            }
            let rep = check_integrated_hardy(&field, &mesh, -cfg.t_max, cfg.t_max)?;
            out.push(SuiteEntry { n, kappa, n_r, field: f.name.clone(), report: rep });
        }
        Ok(out)
    })?;
    Ok(SuiteReport { entries, passed: false }.finish())
}

/// Weighted Dirichlet limits and the super-Dirichlet condition at r = 1,
/// extrapolated along `eps_seq`, for every corpus field reaching the boundary.
pub fn run_limits_suite(cfg: &SuiteConfig, lambdas: &[f64], eps_seq: &[f64]) -> Result<SuiteReport> {
    cfg.validate()?;
    let n_r = *cfg.n_r_list.last().ok_or_else(|| Error::Config("empty n_r ladder".into()))?;
    let entries = for_each_point(cfg, |n, kappa| {
        let p = cfg.params(n, kappa)?;
        let mesh = Mesh::build(n, n_r, cfg.grading, cfg.t_max, 101)?;
        let mut fields: Vec<TestField> = standard_corpus(n, cfg.t_max, cfg.seed)?
            .into_iter()
            .filter(|f| !f.is_interior())
            .collect();
        fields.push(dirichlet_profile(n, cfg.t_max)?);
        let mut out = Vec::new();
        for f in &fields {
            let field = f.sample(&p, &mesh)?;
            for &lambda in lambdas {
                for mut rep in check_boundary_limits(&field, lambda, &mesh, eps_seq)? {
                    rep.label = format!("{}-λ={lambda}", rep.label);
                    out.push(SuiteEntry { n, kappa, n_r, field: f.name.clone(), report: rep });
                }
            }
        }
        Ok(out)
    })?;
    Ok(SuiteReport { entries, passed: false }.finish())
}

// ---------------------------------------------------------------- Carleman

/// One (field, λ) evaluation of the Carleman inequality.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    pub kappa: f64,
    pub c: f64,
    pub t_max: f64,
    pub n_r: usize,
    pub field: String,
    pub lambda: f64,
    pub terms: Option<CarlemanTerms>,
    pub c0_hat: f64,
    /// Divergence or vacuity message; the record fails when set.
    pub flag: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub records: Vec<SweepRecord>,
    /// Per field: empirical λ0, if any.
    pub lambda0: Vec<(String, Option<f64>)>,
    /// Largest per-field λ0; None when some field has none.
    pub lambda0_overall: Option<f64>,
    pub vacuous: bool,
    pub passed: bool,
}

/// Smallest λ_k with Ĉ0 > 0 such that every later ratio stays positive and
/// Ĉ0(λ_(j+1)) >= (1 - 10%) Ĉ0(λ_j); at least one successor is required.
pub fn empirical_lambda0(lambdas: &[f64], c0: &[f64]) -> Option<f64> {
    let m = lambdas.len().min(c0.len());
    if m < 2 {
        return None;
    }
    (0..m - 1).find_map(|k| {
        let ok = c0[k..m].iter().all(|v| v.is_finite() && *v > 0.0)
            && (k..m - 1).all(|j| c0[j + 1] >= (1.0 - LAMBDA_STABILITY) * c0[j]);
        ok.then_some(lambdas[k])
    })
}

/// Evaluates every field at every λ. Divergent or vacuous evaluations are
/// recorded with a flag rather than aborting the sweep.
pub fn run_carleman_sweep(
    fields: &[(String, ModeField)],
    mesh: &Mesh,
    lambda_grid: &[f64],
) -> Result<SweepSummary> {
    if lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::param("λ grid must be positive"));
    }
    let mut lams = lambda_grid.to_vec();
    lams.sort_by(f64::total_cmp);
    for (_, f) in fields {
        f.params.check_carleman_c()?;
    }
    let jobs: Vec<(usize, f64)> =
        (0..fields.len()).flat_map(|i| lams.iter().map(move |&l| (i, l))).collect();
    let records: Vec<SweepRecord> = jobs
        .par_iter()
        .map(|&(i, lambda)| {
            let (name, field) = &fields[i];
            let p = field.params;
            let base = SweepRecord {
                n: p.n,
                kappa: p.kappa,
                c: p.c,
                t_max: p.t_max,
                n_r: mesh.radial.len(),
                field: name.clone(),
                lambda,
                terms: None,
                c0_hat: f64::NAN,
                flag: None,
                passed: false,
            };
            match check_carleman(field, lambda, mesh) {
                Ok(t) => SweepRecord {
                    c0_hat: t.c0_hat,
                    passed: t.c0_hat.is_finite() && t.c0_hat > 0.0,
                    terms: Some(t),
                    ..base
                },
                Err(e) => SweepRecord { flag: Some(e.to_string()), ..base },
            }
        })
        .collect();
    let vacuous = fields.is_empty()
        || records.iter().all(|r| r.flag.as_deref().is_some_and(|f| f.contains("vacuous")));
    let mut lambda0 = Vec::new();
    for (name, _) in fields {
        let c0: Vec<f64> = records.iter().filter(|r| &r.field == name).map(|r| r.c0_hat).collect();
        lambda0.push((name.clone(), empirical_lambda0(&lams, &c0)));
    }
    let lambda0_overall = if vacuous || lambda0.iter().any(|(_, l)| l.is_none()) {
        None
    } else {
        lambda0.iter().filter_map(|(_, l)| *l).reduce(f64::max)
    };
    let passed = !vacuous
        && records.iter().all(|r| r.flag.is_none())
        && lambda0_overall.is_some_and(|l0| {
            records.iter().filter(|r| r.lambda >= l0).all(|r| r.passed)
        });
    Ok(SweepSummary { records, lambda0, lambda0_overall, vacuous, passed })
}

/// The analytic corpus plus one solver output, all sampled on `mesh`.
pub fn carleman_corpus(p: &Params, mesh: &Mesh, seed: u64) -> Result<Vec<(String, ModeField)>> {
    let mut out: Vec<(String, ModeField)> = standard_corpus(p.n, p.t_max, seed)?
        .iter()
        .map(|f: &TestField| Ok((f.name.clone(), f.sample(p, mesh)?)))
        .collect::<Result<_>>()?;
    out.push(("solver-demo".into(), solver_field(p, mesh, &EquationSpec::demo(), seed)?));
    Ok(out)
}

/// Solution of the equation on (-T, T) from seeded ℓ = 0 bump data at
/// t = 0, resampled on the mesh and multiplied by the standard cutoff ξ(t)
/// and an origin cutoff in r. Data vanishing near r = 1 satisfy every
/// compatibility condition there, so h stays smooth up to the boundary.
pub fn solver_field(p: &Params, mesh: &Mesh, spec: &EquationSpec, seed: u64) -> Result<ModeField> {
    let mode = Mode::new(p.n, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amp = || 0.5 + rng.random::<f64>();
    let (a0, a1) = (amp(), -amp());
    let bump = |amp: f64| {
        let prof = Profile::Bump { center: 0.5, width: 0.3, amp };
        mesh.radial
            .nodes
            .iter()
            .zip(&mesh.radial.y_values)
            .map(|(&r, &y)| prof.h(r, y, p.kappa, &mode))
            .collect::<Vec<f64>>()
    };
    let (h0, v0) = (&bump(a0), &bump(a1));
    let op = assemble_mode_operator(mode, spec, p, &mesh.radial)?;
    let nt = mesh.time.len();
    if nt % 2 == 0 {
        return Err(Error::param("solver fields need an odd number of time nodes"));
    }
    let opts = SolveOptions { snapshot_dt: Some(mesh.time.dt), ..Default::default() };
    let fwd = solve_ivp(&op, spec, h0, v0, 0.0, p.t_max, &opts)?;
    let back = solve_ivp(&op, spec, h0, v0, 0.0, -p.t_max, &opts)?;
    let traj = Trajectory::join(&back, &fwd)?;
    if traj.len() != nt {
        return Err(Error::shape(format!(
            "solver produced {} time slices, mesh has {nt}",
            traj.len()
        )));
    }
    let xi = CutoffSpec::standard(p.t_max)?.sample(&mesh.time.nodes);
    let chi: Vec<f64> = mesh.radial.nodes.iter().map(|&r| origin_cutoff(r)).collect();
    let mut h = traj.h;
    // the last cell is cut off at y = 0, so its value sits at the weighted
    // centroid rather than at the node; rebuild it from the three nodes inside
    let nr = mesh.radial.len();
    let ys = &mesh.radial.y_values;
    let (y1, y2, y3) = (ys[nr - 2], ys[nr - 3], ys[nr - 4]);
    let y0 = ys[nr - 1];
    let l1 = (y0 - y2) * (y0 - y3) / ((y1 - y2) * (y1 - y3));
    let l2 = (y0 - y1) * (y0 - y3) / ((y2 - y1) * (y2 - y3));
    let l3 = (y0 - y1) * (y0 - y2) / ((y3 - y1) * (y3 - y2));
    for mut row in h.rows_mut() {
        row[nr - 1] = l1 * row[nr - 2] + l2 * row[nr - 3] + l3 * row[nr - 4];
    }
    for (mut row, x) in h.rows_mut().into_iter().zip(xi) {
        row.iter_mut().zip(&chi).for_each(|(v, c)| *v *= x * c);
    }
    ModeField::new(mode, h, *p, mesh)
}

/// Smooth radial cutoff, 0 on r <= 0.1 and 1 on r >= 0.2. The finite-volume
/// node values in the first cell are off by O(Δr^2) at grid scale, which the
/// (n-1)/r terms of a post-processed □_κ turn into O(1) errors.
fn origin_cutoff(r: f64) -> f64 {
    let psi = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let x = (r - 0.1) / 0.1;
    psi(x) / (psi(x) + psi(1.0 - x))
}

// ---------------------------------------------------------------- observability

/// Modes carrying observability data: both sectors for n = 1, ℓ = 0..3 otherwise.
pub fn observability_modes(n: usize) -> Result<Vec<Mode>> {
    Ok(ModeSet::lowest(n, 4)?.modes)
}

/// Seeded band-limited data per mode: h and h_t are r^ℓ (1+r)^(1-κ)
/// e^(μ(r^2-1)/2) times Σ_(k<4) c_k cos(kπr^2), so u is a smooth function of
/// x vanishing like y^(1-κ). μ enforces h_r(1) = -(n-1)/2 h(1), without which
/// h_tt ~ 1/y at t = 0 and a boundary layer forms. Scaled to total E1 = 1.
pub fn seeded_data(
    p: &Params,
    grid: &RadialGrid,
    modes: &[Mode],
    seed: u64,
) -> Result<Vec<(Mode, Vec<f64>, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = p.a();
    let mut out = Vec::new();
    let mut total = 0.0;
    for &mode in modes {
        let ch: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let cv: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mu = -0.5 * (p.n as f64 - 1.0) - mode.ell as f64 - 0.5 * a;
        let profile = |c: &[f64; 4], r: f64| -> f64 {
            let series: f64 = c
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * (k as f64 * std::f64::consts::PI * r * r).cos())
                .sum();
            r.powi(mode.ell as i32) * (1.0 + r).powf(a) * (0.5 * mu * (r * r - 1.0)).exp() * series
        };
        let h: Vec<f64> = grid.nodes.iter().map(|&r| profile(&ch, r)).collect();
        let v: Vec<f64> = grid.nodes.iter().map(|&r| profile(&cv, r)).collect();
        total += mode_e1(&h, &v, &mode, p, grid)?;
        out.push((mode, h, v));
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("seeded data has zero energy".into()));
    }
    let s = total.sqrt().recip();
    for (_, h, v) in &mut out {
        h.iter_mut().chain(v.iter_mut()).for_each(|x| *x *= s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityConfig {
    pub n: usize,
    pub kappa: f64,
    pub t_list: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_r: usize,
    pub grading: f64,
    pub cfl: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityRecord {
    pub t_max: f64,
    pub seed: u64,
    pub n_r: usize,
    /// ∫_Γ (𝒩_κ u)^2.
    pub boundary_observation: f64,
    pub e1_0: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub clears_threshold: bool,
    pub vacuous: bool,
}

/// Solves on (-T, T) for every (T, seed) and records ∫_Γ(𝒩_κ u)^2 / E1(0).
pub fn run_observability(
    spec: &EquationSpec,
    cfg: &ObservabilityConfig,
) -> Result<Vec<ObservabilityRecord>> {
    check_dimension(cfg.n)?;
    check_kappa(cfg.kappa)?;
    if cfg.t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::param("observation times must be positive"));
    }
    let threshold = observability_threshold(cfg.n, cfg.kappa)?;
    let modes = observability_modes(cfg.n)?;
    let grid = RadialGrid::build(cfg.n_r, cfg.grading, cfg.n)?;
    let opts = SolveOptions { cfl: cfg.cfl, snapshot_dt: Some(f64::INFINITY), ..Default::default() };
    let mut records = Vec::new();
    for &t_max in &cfg.t_list {
        let p = Params::new(cfg.n, cfg.kappa, t_max)?;
        let ops = modes
            .iter()
            .map(|&m| assemble_mode_operator(m, spec, &p, &grid))
            .collect::<Result<Vec<_>>>()?;
        let data: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&s| seeded_data(&p, &grid, &modes, s))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize, f64)> = (0..cfg.seeds.len())
            .flat_map(|s| (0..modes.len()).flat_map(move |m| [(s, m, t_max), (s, m, -t_max)]))
            .collect();
        let pieces: Vec<Result<f64>> = jobs
            .par_iter()
            .map(|&(s, m, end)| {
                let (_, h0, v0) = &data[s][m];
                Ok(solve_ivp(&ops[m], spec, h0, v0, 0.0, end, &opts)?.boundary_sq_integral)
            })
            .collect();
        let scale = p.sphere_area() * (1.0 - 2.0 * cfg.kappa).powi(2);
        let per_mode = 2 * modes.len();
        for (s, &seed) in cfg.seeds.iter().enumerate() {
            let mut obs = 0.0;
            for piece in &pieces[s * per_mode..(s + 1) * per_mode] {
                obs += piece.as_ref().map_err(|e| Error::Solver(e.to_string()))?;
            }
            obs *= scale;
            let e1_0: f64 = data[s]
                .iter()
                .map(|(m, h, v)| mode_e1(h, v, m, &p, &grid))
                .sum::<Result<f64>>()?;
            let vacuous = e1_0 == 0.0;
            records.push(ObservabilityRecord {
                t_max,
                seed,
                n_r: cfg.n_r,
                boundary_observation: obs,
                e1_0,
                ratio: if vacuous { f64::NAN } else { obs / e1_0 },
                threshold,
                clears_threshold: t_max > threshold,
                vacuous,
            });
        }
    }
    Ok(records)
}

/// Smallest ratio among non-vacuous records with the given T.
pub fn min_ratio(records: &[ObservabilityRecord], t_max: f64) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.t_max == t_max && !r.vacuous)
        .map(|r| r.ratio)
        .reduce(f64::min)
}

// ---------------------------------------------------------------- exponents

/// Least-squares slope of ln|u| against ln y over the outermost 10% of the
/// nodes; None when u changes sign or vanishes there.
pub fn fit_exponent_profile(u: &[f64], grid: &RadialGrid) -> Option<f64> {
    let n = grid.len();
    let m = (n / 10).max(3);
    let idx = n - m..n;
    let first = u[n - 1].signum();
    if idx.clone().any(|j| u[j] == 0.0 || u[j].signum() != first || !u[j].is_finite()) {
        return None;
    }
    let pts: Vec<(f64, f64)> = idx.map(|j| (grid.y_values[j].ln(), u[j].abs().ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Time-averaged boundary exponent of a trajectory. Snapshots whose boundary
/// value is below 1e-3 of the peak, or where u changes sign near r = 1,
/// are skipped.
pub fn fit_boundary_exponent(traj: &Trajectory) -> Result<f64> {
    let n = traj.grid.len();
    let peak = traj.h.column(n - 1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in 0..traj.len() {
        if !(traj.h[[k, n - 1]].abs() > 1e-3 * peak) {
            continue;
        }
        if let Some(e) = fit_exponent_profile(&traj.u_row(k), &traj.grid) {
            acc += e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("signal below noise floor near r = 1".into()));
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let t3 = observability_threshold(3, -0.25).unwrap();
        let t1 = observability_threshold(1, -0.25).unwrap();
        assert!((t3 - 30.98).abs() < 0.005);
        assert!((t1 - 30.98).abs() < 0.005);
        assert!((observability_threshold(4, -0.25).unwrap() - 8.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!(observability_threshold(2, -0.25).is_err());
    }

    #[test]
    fn cutoff_shape() {
        let c = build_cutoff(8.0, 1.0).unwrap();
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(8.0), 0.0);
        assert_eq!(c.eval(-8.0), 0.0);
        assert_eq!(c.eval_all(7.0).1, 0.0);
        assert!(build_cutoff(8.0, 4.0).is_err());
    }

    #[test]
    fn lambda0_rule() {
        let l = [10.0, 20.0, 40.0, 80.0, 160.0];
        assert_eq!(empirical_lambda0(&l, &[-1.0, 0.5, 0.6, 0.58, 0.7]), Some(20.0));
        assert_eq!(empirical_lambda0(&l, &[1.0, 0.5, 0.6, 0.58, 0.7]), Some(20.0));
        assert_eq!(empirical_lambda0(&l, &[1.0, 1.0, 1.0, 1.0, -0.1]), None);
    }
}
