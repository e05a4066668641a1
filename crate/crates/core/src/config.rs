//! Plain-text run configuration: one `key = value` per line, `#` comments,
//! lists comma-separated. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_dimension, check_kappa};

/// Which fields a Carleman sweep evaluates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CorpusChoice {
    /// Analytic corpus plus one solver output.
    Standard,
    /// A single field χ(t) y^e.
    Power(f64),
}

/// Coefficients X, V of the solved equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquationChoice {
    Demo,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: usize,
    pub kappa: f64,
    pub t_max: f64,
    pub n_r: usize,
    /// Time nodes for sampled fields; odd. Defaults to n_r + 1 (+1 if even).
    pub n_t: Option<usize>,
    pub grading: f64,
    pub lambda_grid: Vec<f64>,
    /// Observation times; empty means 0.2x and 1.2x the threshold.
    pub t_list: Vec<f64>,
    pub seed: u64,
    /// Number of seeded data sets (seed, seed + 1, ...).
    pub seeds: usize,
    pub epsilon: f64,
    pub eps_seq: Vec<f64>,
    /// Grid of the identity and Hardy suites.
    pub dims: Vec<usize>,
    pub kappas: Vec<f64>,
    pub refine: Vec<usize>,
    pub corpus: CorpusChoice,
    pub equation: EquationChoice,
    /// Carleman c; None selects the cap.
    pub c: Option<f64>,
    pub cfl: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 1,
            kappa: -0.25,
            t_max: 1.0,
            n_r: 400,
            n_t: None,
            grading: 2.0,
            lambda_grid: vec![10.0, 20.0, 40.0, 80.0, 160.0],
            t_list: Vec::new(),
            seed: 0,
            seeds: 10,
            epsilon: 0.1,
            eps_seq: (0..12).map(|m| 0.04 * 0.5f64.powi(m)).collect(),
            dims: vec![1, 3, 4, 5],
            kappas: vec![-0.1, -0.25, -0.4],
            refine: vec![100, 200, 400],
            corpus: CorpusChoice::Standard,
            equation: EquationChoice::Demo,
            c: None,
            cfl: 0.5,
            out: PathBuf::from("swlab-out"),
        }
    }
}

const KEYS: &[&str] = &[
    "n", "kappa", "T", "n_r", "n_t", "grading", "lambda_grid", "t_list", "seed", "seeds",
    "epsilon", "eps_seq", "dims", "kappas", "refine", "corpus", "equation", "c", "cfl", "out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x)).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Sets one key from its textual value, without validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n" => self.n = num(key, v)?,
            "kappa" => self.kappa = num(key, v)?,
            "T" => self.t_max = num(key, v)?,
            "n_r" => self.n_r = num(key, v)?,
            "n_t" => self.n_t = if v == "auto" { None } else { Some(num(key, v)?) },
            "grading" => self.grading = num(key, v)?,
            "lambda_grid" => self.lambda_grid = list(key, v)?,
            "t_list" => self.t_list = list(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "seeds" => self.seeds = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "eps_seq" => self.eps_seq = list(key, v)?,
            "dims" => self.dims = list(key, v)?,
            "kappas" => self.kappas = list(key, v)?,
            "refine" => self.refine = list(key, v)?,
            "corpus" => {
                self.corpus = match v.split_once(':') {
                    None if v == "standard" => CorpusChoice::Standard,
                    Some(("power", e)) => CorpusChoice::Power(num(key, e)?),
                    _ => return Err(Error::Config(format!("unknown corpus {v:?}"))),
                }
            }
            "equation" => {
                self.equation = match v {
                    "demo" => EquationChoice::Demo,
                    "free" => EquationChoice::Free,
                    _ => return Err(Error::Config(format!("unknown equation {v:?}"))),
                }
            }
            "c" => self.c = if v == "auto" { None } else { Some(num(key, v)?) },
            "cfl" => self.cfl = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(self)
    }

    /// Parses and validates a config text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = RunConfig::default().apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        RunConfig::default().apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for &n in std::iter::once(&self.n).chain(&self.dims) {
            check_dimension(n).map_err(|e| Error::Config(strip(e)))?;
        }
        for &k in std::iter::once(&self.kappa).chain(&self.kappas) {
            check_kappa(k).map_err(|e| Error::Config(strip(e)))?;
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_max));
        }
        if self.n_r < 16 || self.refine.iter().any(|&r| r < 16) {
            return bad("radial node counts must be at least 16".into());
        }
        if self.refine.windows(2).any(|w| w[1] <= w[0]) || self.refine.is_empty() {
            return bad("refine must be a non-empty increasing list".into());
        }
        if let Some(nt) = self.n_t {
            if nt < 9 || nt % 2 == 0 {
                return bad(format!("n_t must be odd and at least 9, got {nt}"));
            }
        }
        if !(self.grading >= 1.0 && self.grading <= 4.0) {
            return bad(format!("grading must lie in [1, 4], got {}", self.grading));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return bad("lambda_grid must hold positive values".into());
        }
        if self.t_list.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("t_list must hold positive values".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad(format!("epsilon must lie in (0, 1/2), got {}", self.epsilon));
        }
        if self.eps_seq.len() < 2
            || self.eps_seq.windows(2).any(|w| w[1] >= w[0])
            || self.eps_seq.iter().any(|e| !(*e > 0.0 && *e < 0.5))
        {
            return bad("eps_seq must decrease strictly inside (0, 1/2)".into());
        }
        if self.dims.is_empty() || self.kappas.is_empty() {
            return bad("dims and kappas must be non-empty".into());
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c < 0.2) {
                return bad(format!("c must lie in (0, 1/5), got {c}"));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        Ok(())
    }

    /// Time nodes for sampled fields.
    pub fn time_nodes(&self) -> usize {
        self.n_t.unwrap_or(self.n_r + 1 + self.n_r % 2)
    }

    /// Serializes every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let corpus = match self.corpus {
            CorpusChoice::Standard => "standard".to_string(),
            CorpusChoice::Power(e) => format!("power:{e}"),
        };
        let equation = match self.equation {
            EquationChoice::Demo => "demo",
            EquationChoice::Free => "free",
        };
        let opt = |o: Option<String>| o.unwrap_or_else(|| "auto".into());
        let pairs: [(&str, String); 20] = [
            ("n", self.n.to_string()),
            ("kappa", self.kappa.to_string()),
            ("T", self.t_max.to_string()),
            ("n_r", self.n_r.to_string()),
            ("n_t", opt(self.n_t.map(|v| v.to_string()))),
            ("grading", self.grading.to_string()),
            ("lambda_grid", join(&self.lambda_grid)),
            ("t_list", join(&self.t_list)),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("eps_seq", join(&self.eps_seq)),
            ("dims", join(&self.dims)),
            ("kappas", join(&self.kappas)),
            ("refine", join(&self.refine)),
            ("corpus", corpus),
            ("equation", equation.into()),
            ("c", opt(self.c.map(|v| v.to_string()))),
            ("cfl", self.cfl.to_string()),
            ("out", self.out.display().to_string()),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidParameter(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse("n = 1\nkappa = -0.25\nT = 5\n").unwrap();
        assert_eq!((c.n_r, c.grading, c.seed), (400, 2.0, 0));
        assert_eq!(c.t_max, 5.0);
    }

    #[test]
    fn guards() {
        let e = RunConfig::parse("n = 2").unwrap_err().to_string();
        assert!(e.contains("n = 2 excluded by Theorem hypotheses"), "{e}");
        let e = RunConfig::parse("kappa = 0.25").unwrap_err().to_string();
        assert!(e.contains("κ must lie in (−1/2, 0)"), "{e}");
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("n 3").is_err());
    }

    #[test]
    fn keys_cover_every_line() {
        let text = RunConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, KEYS);
    }
}
