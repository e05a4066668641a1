//! Pass/fail thresholds shared by the checks, the CLI and the acceptance suite.

/// Relative residual of the multiplier identity at the reference mesh.
pub const IDENTITY_REL: f64 = 1e-2;
/// Minimum empirical convergence order for O(h^2) quantities.
pub const MIN_ORDER: f64 = 1.8;
/// Inequality slack floor as a fraction of the term scale.
pub const SLACK_TOL: f64 = 5e-3;
/// Closed-form versus definition, sup-norm relative.
pub const CLOSED_FORM_REL: f64 = 1e-4;
/// Allowed excess of the integrated Hardy ratio over 8/(1-2κ)^2.
pub const HARDY_MARGIN: f64 = 0.10;
/// Boundary-limit extrapolation error.
pub const LIMIT_REL: f64 = 0.02;
/// Fitted boundary exponent versus 1 - κ.
pub const EXPONENT_REL: f64 = 0.01;
/// Relative drift of the conserved energy over unit time.
pub const DRIFT: f64 = 1e-3;
/// Observability minimum across two meshes.
pub const MESH_AGREEMENT: f64 = 0.20;
/// Successive Carleman ratios may drop by at most this fraction past λ0.
pub const LAMBDA_STABILITY: f64 = 0.10;
/// Denominator floor for relative residuals.
pub const RELATIVE_FLOOR: f64 = 1e-30;
/// Gronwall rate allowed for a conserved evolution.
pub const GRONWALL_CONSERVED: f64 = 1e-2;
