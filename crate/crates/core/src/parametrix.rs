//! Short-time parametrix coefficients of the weighted heat kernel.
//!
//! Conjugating `Δ_f` by `e^{f/2}` gives `Δ − V` with
//! `V = ¼|∇f|² − ½Δf`, so the weighted kernel has the diagonal expansion
//! `(4πt)^{n/2} e^{-f(x)} p(x, x, t) = 1 + t u_1(x, x) + O(t²)`. The coefficients
//! follow the transport recursion
//! `u_j(x, y) = D^{-1/2}(y) ∫_0^1 τ^{j-1} D^{1/2}(γ(τ)) (Δ + W) u_{j-1}(x, γ(τ)) dτ`
//! along the minimal geodesic `γ` from `x` to `y`, where the sign of the weight
//! block `W` is selected by [`SignVariant`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::heat::{HeatAssembly, SphereHeat};
use crate::jet::{Jet, Scalar};
use crate::models::{ModelGeometry, WeightSpec};
use crate::quadrature::gauss_legendre_on;
use crate::spectrum::SpectralBasis;
use crate::{fit, Error, Result};

/// Which sign of the weight terms in `u_1` is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVariant {
    /// `u_1(x, x) = Scal/6 − Δf/2 + |∇f|²/4`.
    Statement,
    /// `u_1(x, x) = Scal/6 + Δf/2 − |∇f|²/4`.
    Proof,
}

impl SignVariant {
    pub fn other(self) -> SignVariant {
        match self {
            SignVariant::Statement => SignVariant::Proof,
            SignVariant::Proof => SignVariant::Statement,
        }
    }

    fn weight_sign(self) -> f64 {
        match self {
            SignVariant::Statement => -1.0,
            SignVariant::Proof => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ParametrixConfig {
    pub sign_variant: SignVariant,
    pub geodesic_nodes: usize,
}

impl ParametrixConfig {
    pub fn new(sign_variant: SignVariant) -> ParametrixConfig {
        ParametrixConfig {
            sign_variant,
            geodesic_nodes: 48,
        }
    }

    /// Configuration carrying the variant chosen by [`resolved_sign_variant`].
    pub fn resolved() -> Result<ParametrixConfig> {
        Ok(ParametrixConfig::new(resolved_sign_variant()?))
    }
}

/// Normal-coordinate volume density `D(x, y)`.
pub fn density_d(model: &ModelGeometry, x: &[f64], y: &[f64]) -> Result<f64> {
    model.density_d(x, y)
}

/// `u_0(x, y) = D^{-1/2}(y)`.
pub fn u0(model: &ModelGeometry, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(density_d(model, x, y)?.powf(-0.5))
}

#[derive(Clone, Debug, Serialize)]
pub struct U0ExpansionReport {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub ricci_vv: f64,
    pub s_grid: Vec<f64>,
    /// `u_0 − 1 − Ric(v, v) s²/12` along `exp_x(s v)`.
    pub residuals: Vec<f64>,
    /// Log-log slope of the residuals; absent when they vanish identically.
    pub slope: Option<f64>,
    pub passed: bool,
}

/// Checks `u_0(x, exp_x(sv)) = 1 + Ric(v, v) s²/12 + O(s³)`.
pub fn u0_expansion_check(model: &ModelGeometry, x: &[f64], v: &[f64], s_grid: &[f64]) -> Result<U0ExpansionReport> {
    let ric = model.ricci(x);
    let n = model.dim();
    let ricci_vv: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| ric[(a, b)] * v[a] * v[b]).sum();
    let residuals = s_grid
        .iter()
        .map(|&s| {
            let y = model.geodesic(x, v, s)?;
            Ok(u0(model, x, &y)? - 1.0 - ricci_vv * s * s / 12.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (slope, passed) = if residuals.iter().all(|r| r.abs() < 1e-14) {
        (None, true)
    } else {
        let p = fit::loglog_slope(s_grid, &residuals)?;
        (Some(p), p >= 2.7)
    };
    Ok(U0ExpansionReport {
        point: x.to_vec(),
        direction: v.to_vec(),
        ricci_vv,
        s_grid: s_grid.to_vec(),
        residuals,
        slope,
        passed,
    })
}

/// Weight block `W = ±(½Δf − ¼|∇f|²)` at a point.
fn weight_block(model: &ModelGeometry, z: &[f64], variant: SignVariant) -> f64 {
    variant.weight_sign() * (0.5 * model.lap_f(z) - 0.25 * model.grad_f_norm2(z))
}

/// Closed form of `u_1(x, x)`.
pub fn u1_diag(model: &ModelGeometry, x: &[f64], variant: SignVariant) -> f64 {
    model.scal(x) / 6.0 + weight_block(model, x, variant)
}

/// Separations below this use the closed-form diagonal.
const DIAGONAL_CUTOFF: f64 = 1e-9;

fn check_pair(model: &ModelGeometry, x: &[f64], y: &[f64]) -> Result<f64> {
    model.check_point(x)?;
    model.check_point(y)?;
    let d = model.distance(x, y)?;
    if d >= model.injectivity_bound(x) {
        return Err(Error::OutOfRange(format!(
            "distance {d} reaches the injectivity bound {}",
            model.injectivity_bound(x)
        )));
    }
    Ok(d)
}

/// `u_1(x, y)` by quadrature of the transport integral along the geodesic.
pub fn u1(model: &ModelGeometry, x: &[f64], y: &[f64], config: &ParametrixConfig) -> Result<f64> {
    let d = check_pair(model, x, y)?;
    if d < DIAGONAL_CUTOFF {
        return Ok(u1_diag(model, x, config.sign_variant));
    }
    let (taus, weights) = gauss_legendre_on(config.geodesic_nodes, 0.0, 1.0);
    let mut acc = 0.0;
    for (tau, w) in taus.iter().zip(&weights) {
        let z = model.geodesic_between(x, y, *tau)?;
        let dz = model.density_d_generic(x, &Jet::coordinates(&z, 2));
        let u = dz.powf(-0.5);
        let lap = model.laplacian_of_jet(&u, &z);
        acc += w * dz.val().sqrt() * (lap + weight_block(model, &z, config.sign_variant) * u.val());
    }
    Ok(model.density_d_generic(x, y).powf(-0.5) * acc)
}

/// Laplacian in `y` of `y ↦ u(y)` by central differences in the chart.
fn fd_laplacian(model: &ModelGeometry, z: &[f64], u: &dyn Fn(&[f64]) -> Result<f64>) -> Result<(f64, f64)> {
    let n = model.dim();
    let h = 1e-3;
    let g = model.metric_diag(z);
    let gam = model.christoffel(z);
    let center = u(z)?;
    let mut grad = vec![0.0; n];
    let mut second = vec![0.0; n];
    for a in 0..n {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[a] += h;
        zm[a] -= h;
        let (up, um) = (u(&zp)?, u(&zm)?);
        grad[a] = (up - um) / (2.0 * h);
        second[a] = (up - 2.0 * center + um) / (h * h);
    }
    let mut lap = 0.0;
    for a in 0..n {
        let mut s = second[a];
        for k in 0..n {
            s -= gam[k * n * n + a * n + a] * grad[k];
        }
        lap += s / g[a];
    }
    Ok((lap, center))
}

/// `u_j(x, y)` for `j ≤ 3`. Levels above one differentiate the previous level
/// numerically, so they are far slower and less accurate than [`u1`].
pub fn uj(model: &ModelGeometry, j: usize, x: &[f64], y: &[f64], config: &ParametrixConfig) -> Result<f64> {
    match j {
        0 => {
            check_pair(model, x, y)?;
            u0(model, x, y)
        }
        1 => u1(model, x, y, config),
        2 | 3 => {
            let d = check_pair(model, x, y)?;
            let (taus, weights) = gauss_legendre_on(config.geodesic_nodes, 0.0, 1.0);
            let prev = |z: &[f64]| uj(model, j - 1, x, z, config);
            let mut acc = 0.0;
            for (tau, w) in taus.iter().zip(&weights) {
                let z = if d < DIAGONAL_CUTOFF {
                    x.to_vec()
                } else {
                    model.geodesic_between(x, y, *tau)?
                };
                let (lap, val) = fd_laplacian(model, &z, &prev)?;
                let dz = model.density_d_generic(x, &z);
                acc += w * tau.powi(j as i32 - 1) * dz.sqrt() * (lap + weight_block(model, &z, config.sign_variant) * val);
            }
            Ok(model.density_d_generic(x, y).powf(-0.5) * acc)
        }
        _ => Err(Error::InvalidParameter(format!("parametrix level {j} is not supported (j <= 3)"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagHeatFit {
    pub model: String,
    pub x: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `(4πt)^{n/2} e^{-f(x)} p(x, x, t)` on the grid.
    pub samples: Vec<f64>,
    pub a0: f64,
    pub a1: f64,
    /// One-sigma uncertainty of `a1`: the larger of the statistical error and
    /// the change under one more polynomial degree.
    pub residual: f64,
    pub statement_value: f64,
    pub proof_value: f64,
    /// `None` when both variants agree at this point.
    pub resolved_variant: Option<SignVariant>,
}

/// Fits the linear coefficient of the normalized heat diagonal and decides
/// which variant of `u_1(x, x)` it matches.
pub fn diag_heat_fit(
    model: &ModelGeometry,
    basis: Option<&SpectralBasis>,
    x: &[f64],
    t_grid: &[f64],
    truncation_tol: f64,
) -> Result<DiagHeatFit> {
    model.check_point(x)?;
    if t_grid.len() < 5 {
        return Err(Error::InvalidParameter("the diagonal fit needs at least 5 times".into()));
    }
    let n = model.dim() as f64;
    let sphere = SphereHeat::new(model, truncation_tol).ok();
    let ef = (-model.f(x)).exp();
    let samples = t_grid
        .iter()
        .map(|&t| {
            let p = match (&sphere, basis) {
                (Some(s), _) => s.kernel_diag(t)?,
                (None, Some(b)) => HeatAssembly::new(b, 0.5 * t, truncation_tol)?.diag(x),
                (None, None) => return Err(Error::InvalidParameter("a spectral basis is required".into())),
            };
            Ok((4.0 * std::f64::consts::PI * t).powf(0.5 * n) * ef * p)
        })
        .collect::<Result<Vec<f64>>>()?;
    let quad = fit::polyfit(t_grid, &samples, 2)?;
    let cubic = fit::polyfit(t_grid, &samples, 3)?;
    let a1 = quad.coeffs[1];
    let residual = quad.std_errors[1].max((a1 - cubic.coeffs[1]).abs());
    let statement_value = u1_diag(model, x, SignVariant::Statement);
    let proof_value = u1_diag(model, x, SignVariant::Proof);
    let gap = (statement_value - proof_value).abs();
    let resolved_variant = if gap < 1e-12 {
        None
    } else {
        let near = |v: f64| (a1 - v).abs() <= 2.0 * residual.max(1e-12);
        match (near(statement_value), near(proof_value)) {
            (true, false) => Some(SignVariant::Statement),
            (false, true) => Some(SignVariant::Proof),
            _ => {
                return Err(Error::Inconclusive(format!(
                    "a1 = {a1:.6} ± {residual:.2e} cannot separate {statement_value:.6} from {proof_value:.6}; use smaller times or a larger basis"
                )))
            }
        }
    };
    Ok(DiagHeatFit {
        model: model.key(),
        x: x.to_vec(),
        t_grid: t_grid.to_vec(),
        samples,
        a0: quad.coeffs[0],
        a1,
        residual,
        statement_value,
        proof_value,
        resolved_variant,
    })
}

/// Weighted circle, basis and grid used to settle the sign once.
pub fn sign_resolution_fit() -> Result<DiagHeatFit> {
    let model = ModelGeometry::flat_circle(1.0, WeightSpec::cosine(0.5))?;
    let basis = SpectralBasis::circle(&model, 601, 640)?;
    let grid = fit::geometric_grid(0.02, 0.5, 6);
    diag_heat_fit(&model, Some(&basis), &[0.0], &grid, 1e-12)
}

/// Sign variant selected by the heat-diagonal fit on the weighted circle,
/// computed once per process.
pub fn resolved_sign_variant() -> Result<SignVariant> {
    static CACHE: OnceLock<std::result::Result<SignVariant, String>> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let fit = sign_resolution_fit().map_err(|e| e.to_string())?;
            fit.resolved_variant
                .ok_or_else(|| "the weighted circle did not separate the variants".to_string())
        })
        .clone()
        .map_err(Error::Inconclusive)
}
