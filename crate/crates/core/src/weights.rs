//! Carleman weight f = -y^(1+2κ)/(1+2κ) - c t^2, z = -4c, and the fields
//! derived from it, in closed form.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{GradientBundle, Mesh};
use crate::grid::{check_dimension, check_kappa, Params};

/// Dimension-dependent upper bound on c.
pub fn c_cap(n: usize, kappa: f64, t_max: f64) -> Result<f64> {
    check_dimension(n)?;
    check_kappa(kappa)?;
    if !(t_max > 0.0) {
        return Err(Error::param(format!("T must be positive, got {t_max}")));
    }
    let s3 = 1.0 / (4.0 * 3f64.sqrt() * t_max);
    let s15 = 1.0 / (4.0 * 15f64.sqrt() * t_max);
    Ok(match n {
        1 => s15,
        3 => s15.min(kappa.abs() / 120.0),
        _ => s3,
    })
}

/// The weight curvature used throughout: the cap itself.
pub fn select_c(n: usize, kappa: f64, t_max: f64) -> Result<f64> {
    let c = c_cap(n, kappa, t_max)?;
    if !(c > 0.0 && c < 0.2) {
        return Err(Error::param(format!(
            "selected c = {c} violates 0 < c < 1/5; T = {t_max} is too short"
        )));
    }
    debug_assert!(48.0 * c * c * t_max * t_max <= 1.0 + 1e-12);
    Ok(c)
}

pub fn f_value(p: &Params, t: f64, y: f64) -> f64 {
    let e = 1.0 + 2.0 * p.kappa;
    -y.powf(e) / e - p.c * t * t
}

/// w_{f,z} = -2κ y^(2κ-1) + (n-1)/2 y^(2κ)/r - 3c.
pub fn w_fz(p: &Params, r: f64, y: f64) -> f64 {
    let k = p.kappa;
    let nm1 = p.n as f64 - 1.0;
    -2.0 * k * y.powf(2.0 * k - 1.0) + 0.5 * nm1 * y.powf(2.0 * k) / r - 3.0 * p.c
}

/// ∂_r w_{f,z}.
pub fn dr_w_fz(p: &Params, r: f64, y: f64) -> f64 {
    let k = p.kappa;
    let nm1 = p.n as f64 - 1.0;
    2.0 * k * (2.0 * k - 1.0) * y.powf(2.0 * k - 2.0) - k * nm1 * y.powf(2.0 * k - 1.0) / r
        - 0.5 * nm1 * y.powf(2.0 * k) / (r * r)
}

pub fn a_fz(p: &Params, r: f64, y: f64) -> f64 {
    let k = p.kappa;
    let n = p.n as f64;
    let nm1 = n - 1.0;
    2.0 * k * (2.0 * k - 1.0).powi(2) * y.powf(2.0 * k - 3.0)
        - 0.5 * nm1 * k * (8.0 * k - 3.0) * y.powf(2.0 * k - 2.0) / r
        + 0.5 * nm1 * (n - 4.0) * k * y.powf(2.0 * k - 1.0) / (r * r)
        + 0.25 * nm1 * (n - 3.0) * y.powf(2.0 * k) / (r * r * r)
}

pub fn f_q(q: f64, y: f64) -> f64 {
    -y.powf(1.0 + q) / (1.0 + q)
}

/// w_{f_q,0} = -(κ + q/2) y^(q-1) + (n-1)/2 y^q / r.
pub fn w_q(q: f64, kappa: f64, n: usize, r: f64, y: f64) -> f64 {
    -(kappa + 0.5 * q) * y.powf(q - 1.0) + 0.5 * (n as f64 - 1.0) * y.powf(q) / r
}

pub fn a_q(q: f64, kappa: f64, n: usize, r: f64, y: f64) -> f64 {
    let k = kappa;
    let n = n as f64;
    let nm1 = n - 1.0;
    0.25 * (q + 2.0 * k) * (q + 2.0 * k - 2.0) * (q - 1.0) * y.powf(q - 3.0)
        - 0.5 * nm1 * (q * q - q + 2.0 * k * q - k) * y.powf(q - 2.0) / r
        + 0.25 * nm1 * (q * (n - 3.0) - 2.0 * k) * y.powf(q - 1.0) / (r * r)
        + 0.25 * nm1 * (n - 3.0) * y.powf(q) / (r * r * r)
}

/// e^(2λf) evaluated in log space and clamped at the smallest normal number.
pub fn exp2lf(lambda: f64, f: f64) -> f64 {
    (2.0 * lambda * f).max(f64::MIN_POSITIVE.ln()).exp()
}

/// Weight fields on a mesh. Radial-only quantities are stored once.
#[derive(Debug, Clone, Serialize)]
pub struct WeightFields {
    #[serde(skip)]
    pub f: Array2<f64>,
    #[serde(skip)]
    pub exp2lf: Array2<f64>,
    /// -2ct per time node.
    pub dt_f: Vec<f64>,
    /// y^(2κ) per radial node.
    pub dr_f: Vec<f64>,
    pub w_fz: Vec<f64>,
    pub dr_w_fz: Vec<f64>,
    pub a_fz: Vec<f64>,
    /// λ^2 (y^(4κ) - 4c^2 t^2) - 8cλ.
    #[serde(skip)]
    pub a0: Array2<f64>,
    pub z: f64,
    pub lambda: f64,
}

pub fn eval_weight_bundle(p: &Params, mesh: &Mesh) -> Result<WeightFields> {
    check_kappa(p.kappa)?;
    check_dimension(p.n)?;
    if !(p.c >= 0.0) || !(p.lambda >= 0.0) {
        return Err(Error::param("c and λ must be nonnegative"));
    }
    let k = p.kappa;
    let (nt, nr) = mesh.shape();
    let ys = &mesh.radial.y_values;
    let rs = &mesh.radial.nodes;
    let ts = &mesh.time.nodes;
    let f = Array2::from_shape_fn((nt, nr), |(i, j)| f_value(p, ts[i], ys[j]));
    let exp2 = f.mapv(|v| exp2lf(p.lambda, v));
    let l = p.lambda;
    let a0 = Array2::from_shape_fn((nt, nr), |(i, j)| {
        l * l * (ys[j].powf(4.0 * k) - 4.0 * p.c * p.c * ts[i] * ts[i]) - 8.0 * p.c * l
    });
    Ok(WeightFields {
        f,
        exp2lf: exp2,
        dt_f: ts.iter().map(|t| -2.0 * p.c * t).collect(),
        dr_f: ys.iter().map(|y| y.powf(2.0 * k)).collect(),
        w_fz: rs.iter().zip(ys).map(|(r, y)| w_fz(p, *r, *y)).collect(),
        dr_w_fz: rs.iter().zip(ys).map(|(r, y)| dr_w_fz(p, *r, *y)).collect(),
        a_fz: rs.iter().zip(ys).map(|(r, y)| a_fz(p, *r, *y)).collect(),
        a0,
        z: -4.0 * p.c,
        lambda: l,
    })
}

impl WeightFields {
    /// Recomputes the λ-dependent pieces for a new λ.
    pub fn with_lambda(&self, p: &Params, mesh: &Mesh, lambda: f64) -> WeightFields {
        let k = p.kappa;
        let ys = &mesh.radial.y_values;
        let ts = &mesh.time.nodes;
        let mut out = self.clone();
        out.lambda = lambda;
        out.exp2lf = self.f.mapv(|v| exp2lf(lambda, v));
        out.a0 = Array2::from_shape_fn(self.f.dim(), |(i, j)| {
            lambda * lambda * (ys[j].powf(4.0 * k) - 4.0 * p.c * p.c * ts[i] * ts[i])
                - 8.0 * p.c * lambda
        });
        out
    }
}

/// The f_q family with z = 0.
#[derive(Debug, Clone, Serialize)]
pub struct FqBundle {
    pub q: f64,
    pub f_q: Vec<f64>,
    pub w_q: Vec<f64>,
    pub a_q: Vec<f64>,
}

pub fn eval_fq_bundle(q: f64, p: &Params, mesh: &Mesh) -> Result<FqBundle> {
    if (q + 1.0).abs() < 1e-12 {
        return Err(Error::param("q = -1 is excluded"));
    }
    let rs = &mesh.radial.nodes;
    let ys = &mesh.radial.y_values;
    Ok(FqBundle {
        q,
        f_q: ys.iter().map(|y| f_q(q, *y)).collect(),
        w_q: rs.iter().zip(ys).map(|(r, y)| w_q(q, p.kappa, p.n, *r, *y)).collect(),
        a_q: rs.iter().zip(ys).map(|(r, y)| a_q(q, p.kappa, p.n, *r, *y)).collect(),
    })
}

/// S_{f,z} u = y^(2κ) D_r u + 2ct ∂_t u + w_{f,z} u.
pub fn eval_s_multiplier(
    u: ArrayView2<f64>,
    grad: &GradientBundle,
    wf: &WeightFields,
) -> Result<Array2<f64>> {
    let (nt, nr) = u.dim();
    if grad.dr_u.dim() != (nt, nr) || wf.dt_f.len() != nt || wf.dr_f.len() != nr {
        return Err(Error::shape("S multiplier inputs disagree in shape"));
    }
    Ok(Array2::from_shape_fn((nt, nr), |(i, j)| {
        // ∇^t f = -∂_t f in the (-,+,...,+) signature
        wf.dr_f[j] * grad.dr_u[[i, j]] - wf.dt_f[i] * grad.dt_u[[i, j]] + wf.w_fz[j] * u[[i, j]]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_at_origin() {
        let p = Params::new(3, -0.25, 1.0).unwrap();
        assert!((f_value(&p, 0.0, 1.0) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn w_substitution_n1() {
        let p = Params::new(1, -0.25, 1.0).unwrap().with_c(0.1);
        assert!((w_fz(&p, 0.75, 0.25) - 3.7).abs() < 1e-13);
    }

    #[test]
    fn a_n1_single_term() {
        let p = Params::new(1, -0.3, 1.0).unwrap();
        let (r, y) = (0.4, 0.6f64);
        let want = 2.0 * -0.3 * (2.0f64 * -0.3 - 1.0).powi(2) * y.powf(2.0 * -0.3 - 3.0);
        assert!((a_fz(&p, r, y) - want).abs() < 1e-13);
    }

    #[test]
    fn c_choices() {
        let c4 = select_c(4, -0.25, 10.0).unwrap();
        assert!((c4 - 1.0 / (40.0 * 3f64.sqrt())).abs() < 1e-15);
        assert!((c4 - 0.014434).abs() < 1e-6);
        let c3 = select_c(3, -0.25, 40.0).unwrap();
        assert!((c3 - 1.0 / (160.0 * 15f64.sqrt())).abs() < 1e-15);
        let c1 = select_c(1, -0.25, 5.0).unwrap();
        assert!((c1 - 0.012910).abs() < 1e-6);
        assert!(select_c(2, -0.25, 5.0).is_err());
    }

    #[test]
    fn fq_at_two_kappa_matches_w_fz() {
        let p = Params::new(4, -0.2, 1.0).unwrap().with_c(0.03);
        for &(r, y) in &[(0.3, 0.7), (0.8, 0.2)] {
            let lhs = w_q(2.0 * p.kappa, p.kappa, p.n, r, y);
            assert!((lhs - (w_fz(&p, r, y) + 3.0 * p.c)).abs() < 1e-13);
            assert!((a_q(2.0 * p.kappa, p.kappa, p.n, r, y) - a_fz(&p, r, y)).abs() < 1e-11);
        }
    }

    #[test]
    fn fq_free_limit() {
        // q = 0 at κ = 0 is outside the parameter range, so evaluate the formula directly
        assert!((w_q(0.0, 0.0, 3, 0.5, 0.5) - 2.0).abs() < 1e-15);
    }
}
