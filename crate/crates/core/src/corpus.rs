//! Analytic test fields χ(t) ρ(r) used by the verification suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fields::{Mesh, ModeField};
use crate::grid::{Mode, Params};

/// Smooth compactly supported time factor (1 - (t/τ)^2)^4 on |t| < τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TimeFactor {
    Constant,
    Compact { tau: f64 },
}

impl TimeFactor {
    /// Support inside |t| < T - T/8.
    pub fn for_horizon(t_max: f64) -> Self {
        TimeFactor::Compact { tau: t_max - t_max / 8.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::Constant => 1.0,
            TimeFactor::Compact { tau } => {
                let x = t / tau;
                if x.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - x * x).powi(4)
                }
            }
        }
    }
}

/// Radial profile of u.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Profile {
    /// C-infinity bump exp(1 - 1/(1 - ξ^2)), ξ = (r - center)/width.
    Bump { center: f64, width: f64, amp: f64 },
    /// r^ell (1 - r^2)^(1-κ) Σ c_k r^(2k); smooth on the ball, Dirichlet branch at r = 1.
    Edge { coeffs: Vec<f64> },
    /// y^e.
    Power { exponent: f64 },
    /// y^(1-κ), i.e. h ≡ 1.
    DirichletPower,
    Sum(Vec<Profile>),
}

impl Profile {
    /// Value of h = y^(κ-1) u at (r, y) for the given mode.
    pub fn h(&self, r: f64, y: f64, kappa: f64, mode: &Mode) -> f64 {
        let a = 1.0 - kappa;
        match self {
            Profile::Bump { center, width, amp } => {
                let xi = (r - center) / width;
                if xi.abs() >= 1.0 {
                    0.0
                } else {
                    amp * (1.0 - 1.0 / (1.0 - xi * xi)).exp() / y.powf(a)
                }
            }
            Profile::Edge { coeffs } => {
                let poly: f64 = coeffs.iter().rev().fold(0.0, |acc, c| acc * r * r + c);
                r.powi(mode.ell as i32) * (1.0 + r).powf(a) * poly
            }
            Profile::Power { exponent } => y.powf(exponent - a),
            Profile::DirichletPower => 1.0,
            Profile::Sum(parts) => parts.iter().map(|p| p.h(r, y, kappa, mode)).sum(),
        }
    }
}

/// A named test field: mode, radial profile and time factor.
#[derive(Debug, Clone, Serialize)]
pub struct TestField {
    pub name: String,
    pub mode: Mode,
    pub profile: Profile,
    pub time: TimeFactor,
}

impl TestField {
    pub fn sample(&self, params: &Params, mesh: &Mesh) -> Result<ModeField> {
        let mut h = ndarray::Array2::zeros(mesh.shape());
        for (i, &t) in mesh.time.nodes.iter().enumerate() {
            let chi = self.time.eval(t);
            if chi == 0.0 {
                continue;
            }
            for j in 0..mesh.radial.len() {
                let (r, y) = (mesh.radial.nodes[j], mesh.radial.y_values[j]);
                h[[i, j]] = chi * self.profile.h(r, y, params.kappa, &self.mode);
            }
        }
        ModeField::new(self.mode, h, *params, mesh)
    }

    /// True when the field stays away from r = 1.
    pub fn is_interior(&self) -> bool {
        matches!(self.profile, Profile::Bump { .. })
    }
}

/// The six-field corpus used by the identity and inequality suites.
pub fn standard_corpus(n: usize, t_max: f64, seed: u64) -> Result<Vec<TestField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(0.5..1.5)).collect() };
    let time = TimeFactor::for_horizon(t_max);
    let l1 = Mode::new(n, 1)?;
    let l0 = Mode::new(n, 0)?;
    let l_hi = if n == 1 { l0 } else { Mode::new(n, 2)? };
    let c3 = coef(3);
    let c2 = coef(2);
    let c_mixed = coef(2);
    Ok(vec![
        TestField {
            name: "bump-l0".into(),
            mode: l0,
            profile: Profile::Bump { center: 0.45, width: 0.15, amp: 1.0 },
            time,
        },
        TestField {
            name: "bump-l1".into(),
            mode: l1,
            profile: Profile::Bump { center: 0.55, width: 0.2, amp: 1.0 },
            time,
        },
        TestField {
            name: "edge-l0".into(),
            mode: l0,
            profile: Profile::Edge { coeffs: vec![1.0] },
            time,
        },
        TestField {
            name: "edge-poly-l0".into(),
            mode: l0,
            profile: Profile::Edge { coeffs: c3 },
            time,
        },
        TestField {
            name: "edge-poly-l1".into(),
            mode: l1,
            profile: Profile::Edge { coeffs: c2 },
            time,
        },
        TestField {
            name: "mixed-high".into(),
            mode: l_hi,
            profile: Profile::Sum(vec![
                Profile::Edge { coeffs: c_mixed },
                Profile::Bump { center: 0.6, width: 0.25, amp: 0.7 },
            ]),
            time,
        },
    ])
}

/// χ(t) y^(1-κ): h ≡ χ(t).
pub fn dirichlet_profile(n: usize, t_max: f64) -> Result<TestField> {
    Ok(TestField {
        name: "dirichlet-power".into(),
        mode: Mode::new(n, 0)?,
        profile: Profile::DirichletPower,
        time: TimeFactor::for_horizon(t_max),
    })
}
