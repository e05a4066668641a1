use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swlab::config::{CorpusChoice, EquationChoice, RunConfig};
use swlab::corpus::{Profile, TestField, TimeFactor};
use swlab::error::{Error, Result};
use swlab::experiments::{
    carleman_corpus, min_ratio, observability_modes, observability_threshold, run_carleman_sweep,
    run_hardy_suite, run_identity_suite, run_limits_suite, run_observability, seeded_data,
    ObservabilityConfig, SuiteConfig, SuiteReport, SweepRecord,
};
use swlab::fields::{Mesh, ModeField};
use swlab::grid::{Mode, Params, RadialGrid};
use swlab::report::{self, ReportWriter, RunManifest};
use swlab::solver::{
    assemble_mode_operator, energies, extract_traces, solve_ivp, EnergyRecord, EquationSpec,
    SolveOptions,
};
use swlab::tolerance::DRIFT;
use swlab::weights::select_c;

#[derive(Parser)]
#[command(name = "swlab", version, about = "Singular-wave laboratory on the unit ball")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiplier identity and inequality, refinement orders, closed forms.
    VerifyIdentities(Common),
    /// Pointwise and integrated Hardy inequalities, boundary limits.
    VerifyHardy(Common),
    /// Carleman λ-sweep at one (n, κ).
    VerifyCarleman(Common),
    /// Evolve seeded data and write energies and traces.
    Solve(Common),
    /// Boundary observability ratios across seeds.
    Observability(Common),
    /// Carleman λ-sweep over the dims × kappas grid.
    Sweep(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<String>,
    #[arg(long = "T")]
    t: Option<String>,
    #[arg(long)]
    nr: Option<String>,
    #[arg(long)]
    nt: Option<String>,
    #[arg(long)]
    grading: Option<String>,
    /// Comma-separated λ values.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Number of seeded data sets.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated observation times.
    #[arg(long)]
    t_list: Option<String>,
    /// Comma-separated, strictly decreasing ε values.
    #[arg(long)]
    eps_seq: Option<String>,
    /// `standard` or `power:<exponent>`.
    #[arg(long)]
    corpus: Option<String>,
    /// `demo` or `free`.
    #[arg(long)]
    equation: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags: [(&str, &Option<String>); 13] = [
            ("n", &self.n),
            ("kappa", &self.kappa),
            ("T", &self.t),
            ("n_r", &self.nr),
            ("n_t", &self.nt),
            ("grading", &self.grading),
            ("lambda_grid", &self.lambda_grid),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("t_list", &self.t_list),
            ("eps_seq", &self.eps_seq),
            ("corpus", &self.corpus),
            ("equation", &self.equation),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        // a single point given on the command line also narrows the suite grid
        if let Some(n) = &self.n {
            cfg.set("dims", n)?;
        }
        if let Some(k) = &self.kappa {
            cfg.set("kappas", k)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::VerifyIdentities(c) => ("verify-identities", c),
            Command::VerifyHardy(c) => ("verify-hardy", c),
            Command::VerifyCarleman(c) => ("verify-carleman", c),
            Command::Solve(c) => ("solve", c),
            Command::Observability(c) => ("observability", c),
            Command::Sweep(c) => ("sweep", c),
        }
    }
}

fn suite_config(cfg: &RunConfig) -> SuiteConfig {
    SuiteConfig {
        dims: cfg.dims.clone(),
        kappas: cfg.kappas.clone(),
        n_r_list: cfg.refine.clone(),
        grading: cfg.grading,
        t_max: cfg.t_max,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        ..SuiteConfig::default()
    }
}

fn equation(cfg: &RunConfig) -> EquationSpec {
    match cfg.equation {
        EquationChoice::Demo => EquationSpec::demo(),
        EquationChoice::Free => EquationSpec::free(),
    }
}

fn record_suite(
    name: &str,
    suite: &SuiteReport,
    writer: &mut ReportWriter,
    manifest: &mut RunManifest,
) -> Result<()> {
    writer.csv(&report::suite_table(name, &suite.entries))?;
    writer.jsonl(name, &suite.entries)?;
    let failed = suite.failures().count();
    manifest.check(
        name,
        suite.passed,
        format!("{} checks, {failed} failed", suite.entries.len()),
    );
    for f in suite.failures() {
        manifest.check(
            format!("{name}: n={} κ={} {} {}", f.n, f.kappa, f.field, f.report.label),
            false,
            format!("relative residual {:e}, slack {:e} {}", f.report.relative_residual, f.report.slack, f.report.note),
        );
    }
    Ok(())
}

fn sweep_fields(cfg: &RunConfig, p: &Params, mesh: &Mesh) -> Result<Vec<(String, ModeField)>> {
    match cfg.corpus {
        CorpusChoice::Standard => carleman_corpus(p, mesh, cfg.seed),
        CorpusChoice::Power(e) => {
            let f = TestField {
                name: format!("power-{e}"),
                mode: Mode::new(p.n, 0)?,
                profile: Profile::Power { exponent: e },
                time: TimeFactor::for_horizon(p.t_max),
            };
            Ok(vec![(f.name.clone(), f.sample(p, mesh)?)])
        }
    }
}

fn sweep_point(cfg: &RunConfig, n: usize, kappa: f64, manifest: &mut RunManifest) -> Result<Vec<SweepRecord>> {
    let c = match cfg.c {
        Some(c) => c,
        None => select_c(n, kappa, cfg.t_max)?,
    };
    let p = Params::new(n, kappa, cfg.t_max)?.with_c(c);
    let mesh = Mesh::build(n, cfg.n_r, cfg.grading, cfg.t_max, cfg.time_nodes())?;
    let fields = sweep_fields(cfg, &p, &mesh)?;
    let s = run_carleman_sweep(&fields, &mesh, &cfg.lambda_grid)?;
    let flags: Vec<String> = s.records.iter().filter_map(|r| r.flag.clone()).collect();
    let detail = match (s.lambda0_overall, flags.first()) {
        (_, Some(flag)) => format!("{} flagged records, first: {flag}", flags.len()),
        (Some(l0), None) => format!("λ0 = {l0}, min Ĉ0 = {:e}", min_c0(&s.records, l0)),
        (None, None) if s.vacuous => "vacuous sweep".to_string(),
        (None, None) => "no λ0 within the grid".to_string(),
    };
    manifest.check(format!("carleman n={n} κ={kappa}"), s.passed, detail);
    Ok(s.records)
}

fn min_c0(records: &[SweepRecord], l0: f64) -> f64 {
    records.iter().filter(|r| r.lambda >= l0).map(|r| r.c0_hat).fold(f64::INFINITY, f64::min)
}

fn solve(cfg: &RunConfig, writer: &mut ReportWriter, manifest: &mut RunManifest) -> Result<()> {
    let spec = equation(cfg);
    let p = Params::new(cfg.n, cfg.kappa, cfg.t_max)?;
    let grid = RadialGrid::build(cfg.n_r, cfg.grading, cfg.n)?;
    let modes = observability_modes(cfg.n)?;
    let data = seeded_data(&p, &grid, &modes, cfg.seed)?;
    let opts = SolveOptions { snapshot_dt: Some(cfg.t_max / 200.0), ..Default::default() };
    let mut per_mode = Vec::new();
    for (mode, h0, v0) in &data {
        let op = assemble_mode_operator(*mode, &spec, &p, &grid)?;
        let traj = solve_ivp(&op, &spec, h0, v0, 0.0, cfg.t_max, &opts)?;
        writer.csv(&report::trace_table(mode.ell, &extract_traces(&traj)))?;
        per_mode.push(energies(&traj)?);
    }
    let total = EnergyRecord::sum(&per_mode)?;
    writer.csv(&report::energy_table(&total))?;
    let finite = total.e_conserved.iter().chain(&total.e1).all(|v| v.is_finite());
    manifest.check("finite", finite, format!("{} snapshots", total.times.len()));
    if spec.x_t.is_zero() && spec.x_r.is_zero() {
        let drift = total.conserved_drift();
        let allowed = DRIFT * cfg.t_max.max(1.0);
        manifest.check("energy-drift", drift <= allowed, format!("drift {drift:e}, allowed {allowed:e}"));
    }
    Ok(())
}

fn observability(cfg: &RunConfig, writer: &mut ReportWriter, manifest: &mut RunManifest) -> Result<()> {
    let threshold = observability_threshold(cfg.n, cfg.kappa)?;
    let t_list = if cfg.t_list.is_empty() {
        vec![0.2 * threshold, 1.2 * threshold]
    } else {
        cfg.t_list.clone()
    };
    let ocfg = ObservabilityConfig {
        n: cfg.n,
        kappa: cfg.kappa,
        t_list: t_list.clone(),
        seeds: (cfg.seed..cfg.seed + cfg.seeds as u64).collect(),
        n_r: cfg.n_r,
        grading: cfg.grading,
        cfl: cfg.cfl,
    };
    let recs = run_observability(&equation(cfg), &ocfg)?;
    writer.csv(&report::observability_table(cfg.n, cfg.kappa, &recs))?;
    writer.jsonl("observability", &recs)?;
    manifest.check("threshold", true, format!("{threshold:.4}"));
    for &t in &t_list {
        let m = min_ratio(&recs, t);
        let detail = format!("T = {t}: min ratio {:e}", m.unwrap_or(f64::NAN));
        // below the threshold the ratio is recorded only
        let passed = t <= threshold || m.is_some_and(|m| m.is_finite() && m > 0.0);
        manifest.check(format!("observability T={t}"), passed, detail);
    }
    Ok(())
}

fn run(name: &str, cfg: &RunConfig, writer: &mut ReportWriter, manifest: &mut RunManifest) -> Result<()> {
    match name {
        "verify-identities" => {
            let s = run_identity_suite(&suite_config(cfg))?;
            record_suite("identities", &s, writer, manifest)
        }
        "verify-hardy" => {
            let sc = suite_config(cfg);
            record_suite("hardy", &run_hardy_suite(&sc)?, writer, manifest)?;
            let lambda = cfg.lambda_grid.iter().copied().fold(f64::INFINITY, f64::min);
            record_suite("limits", &run_limits_suite(&sc, &[lambda], &cfg.eps_seq)?, writer, manifest)
        }
        "verify-carleman" => {
            let recs = sweep_point(cfg, cfg.n, cfg.kappa, manifest)?;
            writer.csv(&report::sweep_table(&recs))?;
            writer.jsonl("sweep", &recs)
        }
        "sweep" => {
            let mut recs = Vec::new();
            for &n in &cfg.dims {
                for &k in &cfg.kappas {
                    recs.extend(sweep_point(cfg, n, k, manifest)?);
                }
            }
            writer.csv(&report::sweep_table(&recs))?;
            writer.jsonl("sweep", &recs)
        }
        "solve" => solve(cfg, writer, manifest),
        "observability" => observability(cfg, writer, manifest),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SWL_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SWL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (name, common) = cli.command.parts();
    let cfg = match init_threads().and_then(|_| common.resolve()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("swlab: {e}");
            return ExitCode::from(1);
        }
    };
    let mut manifest = RunManifest::new(name, &cfg.to_text());
    let mut writer = match ReportWriter::new(&cfg.out) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("swlab: {e}");
            return ExitCode::from(1);
        }
    };
    match run(name, &cfg, &mut writer, &mut manifest) {
        Ok(()) => {
            // a closed stdout (e.g. piped into head) is not an error
            let mut out = std::io::stdout().lock();
            for c in &manifest.checks {
                let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let passed = manifest.all_passed();
            match writer.finish(manifest) {
                Ok(files) => {
                    for f in files {
                        let _ = writeln!(out, "wrote {}", f.display());
                    }
                    if passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("swlab: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("swlab: {e}");
            let code = match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::Io { .. } => 1,
                _ => 2,
            };
            if let Err(e2) = writer.abort(manifest, &e) {
                eprintln!("swlab: {e2}");
            }
            ExitCode::from(code)
        }
    }
}
