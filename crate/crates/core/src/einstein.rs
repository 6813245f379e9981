//! Einstein tensors, the approximate Einstein tensor `T_t` and the asymptotic
//! experiments built on the pullback metric.
//!
//! Tensor samples in reports are given in the orthonormal frame of the
//! (diagonal) chart metric, `M_ab / √(g_aa g_bb)`, flattened row-major.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{hessian, pair_1forms, pair_tensors, weighted_adjoint_div, OneForm, ScalarField, Tensor2};
use crate::heat::{HeatAssembly, SphereHeat};
use crate::jet::{Jet, Scalar};
use crate::models::{unit_ball_volume, ModelGeometry, ModelSpec};
use crate::parametrix::{u1_diag, SignVariant};
use crate::quadrature::{gauss_legendre_on, QuadratureGrid};
use crate::spectrum::{PointSamples, SpectralBasis};
use crate::{fit, Error, Result};

/// `c(n) = 4(8π)^{n/2}`.
pub fn c_of_n(n: usize) -> f64 {
    4.0 * (8.0 * std::f64::consts::PI).powf(0.5 * n as f64)
}

/// `G = Ric − ½ Scal g`.
pub fn einstein_tensor(model: &ModelGeometry, x: &[f64]) -> DMatrix<f64> {
    model.ricci(x) - model.metric(x) * (0.5 * model.scal(x))
}

/// `G_f = e^f G − (3e^f/2)(df⊗df + Δf g − ½|∇f|² g)`.
pub fn weighted_einstein(model: &ModelGeometry, x: &[f64]) -> DMatrix<f64> {
    let ef = model.f(x).exp();
    let df = nalgebra::DVector::from_vec(model.df(x));
    let g = model.metric(x);
    let bracket = &df * df.transpose() + &g * (model.lap_f(x) - 0.5 * model.grad_f_norm2(x));
    einstein_tensor(model, x) * ef - bracket * (1.5 * ef)
}

/// [`weighted_einstein`] as a differentiable field.
pub fn weighted_einstein_field(model: &ModelGeometry) -> Tensor2 {
    let n = model.dim();
    let hess_f = hessian(model, &ScalarField::weight(model));
    let model = model.clone();
    Tensor2::new(n, move |x, k| {
        let coords = Jet::coordinates(x, k);
        let g = model.metric_diag(&coords);
        let ric = model.ricci_generic(&coords);
        let scal = model.scal_generic(&coords);
        let fj = model.weight_jet(x, k + 1);
        let df: Vec<Jet> = (0..n).map(|a| fj.partial(a)).collect();
        let h = hess_f.jet(x, k);
        let zero = scal.lift(0.0);
        let (mut lap, mut grad2) = (zero.clone(), zero);
        for a in 0..n {
            lap = lap + &h[a * n + a] / &g[a];
            grad2 = grad2 + &(&df[a] * &df[a]) / &g[a];
        }
        let ef = fj.truncated(k).exp();
        let iso = lap - grad2 * 0.5;
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let mut c = ric[a * n + b].clone() - &(&df[a] * &df[b]) * 1.5;
                if a == b {
                    c = c - &(&scal * &g[a]) * 0.5 - &(&iso * &g[a]) * 1.5;
                }
                out.push(&ef * &c);
            }
        }
        out
    })
}

/// Linear coefficient of `c(n) t^{(n+2)/2} g_t` implied by a choice of `u_1`:
/// `e^f (2u_1 g + df⊗df − (2/3) Ric)`. For the proof variant this is
/// `−(2/3) G_f`.
pub fn predicted_order1(model: &ModelGeometry, x: &[f64], variant: SignVariant) -> DMatrix<f64> {
    let ef = model.f(x).exp();
    let df = nalgebra::DVector::from_vec(model.df(x));
    (model.metric(x) * (2.0 * u1_diag(model, x, variant)) + &df * df.transpose() - model.ricci(x) * (2.0 / 3.0)) * ef
}

fn frame(model: &ModelGeometry, x: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let g = model.metric_diag(x);
    let n = g.len();
    (0..n * n).map(|i| m[(i / n, i % n)] / (g[i / n] * g[i % n]).sqrt()).collect()
}

/// Mode samples at a fixed set of points, reused across times.
struct Sampled<'a> {
    model: &'a ModelGeometry,
    basis: Option<&'a SpectralBasis>,
    sphere: Option<SphereHeat>,
    points: Vec<Vec<f64>>,
    samples: Vec<PointSamples>,
    tol: f64,
}

impl<'a> Sampled<'a> {
    /// Samples enough modes for every `t ≥ t_min` plus the first `extra` modes.
    fn new(
        model: &'a ModelGeometry,
        basis: Option<&'a SpectralBasis>,
        points: Vec<Vec<f64>>,
        t_min: f64,
        tol: f64,
        extra: usize,
        hessians: bool,
    ) -> Result<Sampled<'a>> {
        for x in &points {
            model.check_point(x)?;
        }
        let sphere = SphereHeat::new(model, tol).ok();
        let samples = match basis {
            Some(b) => {
                if b.model().key() != model.key() {
                    return Err(Error::InvalidParameter("basis belongs to a different model".into()));
                }
                let m = if sphere.is_some() {
                    extra
                } else {
                    HeatAssembly::new(b, t_min, tol)?.m_used().max(extra)
                };
                let m = m.min(b.len());
                points.par_iter().map(|x| b.sample_modes(x, m, hessians)).collect()
            }
            None if sphere.is_some() => Vec::new(),
            None => return Err(Error::InvalidParameter("a spectral basis is required for this model".into())),
        };
        Ok(Sampled {
            model,
            basis,
            sphere,
            points,
            samples,
            tol,
        })
    }

    fn assembly(&self, t: f64) -> Result<Option<HeatAssembly<'a>>> {
        match (&self.sphere, self.basis) {
            (None, Some(b)) => Ok(Some(HeatAssembly::new(b, t, self.tol)?)),
            _ => Ok(None),
        }
    }

    /// `g_t` at every point.
    fn metrics(&self, t: f64) -> Result<Vec<DMatrix<f64>>> {
        if let Some(s) = &self.sphere {
            let gamma = s.pullback_scalar(t)?;
            return Ok(self.points.iter().map(|x| self.model.metric(x) * gamma).collect());
        }
        let h = self.assembly(t)?.expect("basis present");
        Ok(self.samples.iter().map(|s| h.pullback_metric_from(s)).collect())
    }
}

/// Probe points used by default for tensor fits.
pub fn default_points(model: &ModelGeometry, count: usize) -> Vec<Vec<f64>> {
    let n = model.dim();
    (0..count)
        .map(|j| {
            let s = (j as f64 + 0.5) / count as f64;
            match model.spec() {
                ModelSpec::FlatCircle { .. } => vec![2.0 * std::f64::consts::PI * j as f64 / count as f64],
                ModelSpec::FlatTorus2 { .. } => vec![2.0 * std::f64::consts::PI * s, 2.0 * std::f64::consts::PI * (0.37 + 0.61 * s).fract()],
                _ => {
                    // interior of the polar chart
                    let mut x = vec![0.3 + 2.5 * s; n];
                    if n == 3 {
                        x[1] = 0.4 + 2.3 * (0.7 * s + 0.2).fract();
                    }
                    x[n - 1] = 2.0 * std::f64::consts::PI * (0.61 * j as f64 / count as f64 + 0.1).fract();
                    x
                }
            }
        })
        .collect()
}

/// Samples of `T_t = (c(n) t^{(n+2)/2} g_t − e^f g)/t` at the given points.
pub fn approx_einstein(
    model: &ModelGeometry,
    basis: Option<&SpectralBasis>,
    t: f64,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let s = Sampled::new(model, basis, points.to_vec(), t, tol, 0, false)?;
    let c = c_of_n(model.dim()) * t.powf(0.5 * (model.dim() as f64 + 2.0));
    Ok(s
        .metrics(t)?
        .into_iter()
        .zip(points)
        .map(|(g, x)| (g * c - model.metric(x) * model.hausdorff_ratio(x)) / t)
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub model: String,
    pub variant: SignVariant,
    pub t_grid: Vec<f64>,
    pub truncation: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// `c(n) t^{(n+2)/2} g_t` indexed by time, point, component.
    pub curves: Vec<Vec<Vec<f64>>>,
    /// Fitted `t⁰` and `t¹` coefficients of `c(n) t^{(n+2)/2} g_t`, per point.
    pub order0: Vec<Vec<f64>>,
    pub order1: Vec<Vec<f64>>,
    /// One-sigma uncertainty of each `order1` entry.
    pub order1_sigma: Vec<Vec<f64>>,
    /// Largest fit residual at each time.
    pub residuals: Vec<f64>,
    pub predicted_order0: Vec<Vec<f64>>,
    pub predicted_order1: Vec<Vec<f64>>,
    pub predicted_order1_other: Vec<Vec<f64>>,
    pub order0_max_rel_error: f64,
    /// Largest `|order1 − predicted|`, relative to `order1_scale`.
    pub order1_rel_error: f64,
    pub order1_other_rel_error: f64,
    pub order1_scale: f64,
    pub order1_sigma_max: f64,
    /// How far the other variant misses the tolerance, in units of sigma.
    pub other_variant_margin_sigma: f64,
    pub order0_tolerance: f64,
    pub order1_tolerance: f64,
    pub passed: bool,
}

/// Quadratic-in-`t` fit of `c(n) t^{(n+2)/2} g_t` at each point.
#[allow(clippy::too_many_arguments)]
pub fn bbg_fit(
    model: &ModelGeometry,
    basis: Option<&SpectralBasis>,
    points: &[Vec<f64>],
    t_grid: &[f64],
    tol: f64,
    variant: SignVariant,
    order0_tolerance: f64,
    order1_tolerance: f64,
) -> Result<ExpansionReport> {
    if t_grid.len() < 4 {
        return Err(Error::InvalidParameter("the expansion fit needs at least 4 times".into()));
    }
    let t_min = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let sampled = Sampled::new(model, basis, points.to_vec(), t_min, tol, 0, false)?;
    let n = model.dim();
    let cn = c_of_n(n);
    let mut truncation = Vec::with_capacity(t_grid.len());
    // curves[t][point] in the orthonormal frame
    let mut curves = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        truncation.push(sampled.assembly(t)?.map_or(0, |h| h.m_used()));
        let scale = cn * t.powf(0.5 * (n as f64 + 2.0));
        let gs = sampled.metrics(t)?;
        curves.push(
            gs.iter()
                .zip(points)
                .map(|(g, x)| frame(model, x, &(g * scale)))
                .collect::<Vec<_>>(),
        );
    }
    let mut order0 = Vec::new();
    let mut order1 = Vec::new();
    let mut order1_sigma = Vec::new();
    let mut residuals = vec![0.0f64; t_grid.len()];
    for (p, _) in points.iter().enumerate() {
        let (mut o0, mut o1, mut s1) = (vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]);
        for c in 0..n * n {
            let y: Vec<f64> = curves.iter().map(|row| row[p][c]).collect();
            let quad = fit::polyfit(t_grid, &y, 2)?;
            o0[c] = quad.coeffs[0];
            o1[c] = quad.coeffs[1];
            let mut sigma = quad.std_errors[1];
            if t_grid.len() >= 5 {
                sigma = sigma.max((fit::polyfit(t_grid, &y, 3)?.coeffs[1] - o1[c]).abs());
            }
            s1[c] = sigma;
            for (r, q) in residuals.iter_mut().zip(&quad.residuals) {
                *r = r.max(q.abs());
            }
        }
        order0.push(o0);
        order1.push(o1);
        order1_sigma.push(s1);
    }
    let predicted_order0: Vec<Vec<f64>> = points
        .iter()
        .map(|x| frame(model, x, &(model.metric(x) * model.hausdorff_ratio(x))))
        .collect();
    let pred1: Vec<Vec<f64>> = points
        .iter()
        .map(|x| frame(model, x, &predicted_order1(model, x, variant)))
        .collect();
    let pred1_other: Vec<Vec<f64>> = points
        .iter()
        .map(|x| frame(model, x, &predicted_order1(model, x, variant.other())))
        .collect();
    let max_abs = |a: &[Vec<f64>]| a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_diff = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
    };
    let order0_max_rel_error = order0
        .iter()
        .zip(&predicted_order0)
        .flat_map(|(a, b)| a.iter().zip(b))
        .filter(|(_, b)| b.abs() > 0.0)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0f64, f64::max);
    let order1_scale = max_abs(&pred1).max(max_abs(&pred1_other));
    let denom = if order1_scale > 1e-12 { order1_scale } else { 1.0 };
    let order1_rel_error = max_diff(&order1, &pred1) / denom;
    let order1_other_rel_error = max_diff(&order1, &pred1_other) / denom;
    let order1_sigma_max = max_abs(&order1_sigma);
    let other_variant_margin_sigma = (order1_other_rel_error - order1_tolerance) * denom / order1_sigma_max.max(f64::MIN_POSITIVE);
    let passed = order0_max_rel_error <= order0_tolerance && order1_rel_error <= order1_tolerance;
    Ok(ExpansionReport {
        model: model.key(),
        variant,
        t_grid: t_grid.to_vec(),
        truncation,
        points: points.to_vec(),
        curves,
        order0,
        order1,
        order1_sigma,
        residuals,
        predicted_order0,
        predicted_order1: pred1,
        predicted_order1_other: pred1_other,
        order0_max_rel_error,
        order1_rel_error,
        order1_other_rel_error,
        order1_scale,
        order1_sigma_max,
        other_variant_margin_sigma,
        order0_tolerance,
        order1_tolerance,
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeNormalizationReport {
    pub model: String,
    pub point: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `(c(n) t / ω_n) vol_f(B_{√t}(x)) g_t` in the orthonormal frame.
    pub samples: Vec<Vec<f64>>,
    pub order0: Vec<f64>,
    pub order1: Vec<f64>,
    /// `−(2/3) e^{-f} G_f − C g` with `C = (Scal + 3Δf − 3|∇f|²)/(6(n+2))`.
    pub predicted_order1: Vec<f64>,
    /// `−(2/3)(G_f + C g)`.
    pub displayed_order1: Vec<f64>,
    pub order0_error: f64,
    pub order1_error: f64,
    pub order1_error_displayed: f64,
    pub passed: bool,
}

/// Fit of the ball-normalized pullback metric at one point.
pub fn weighted_volume_normalization_fit(
    model: &ModelGeometry,
    basis: Option<&SpectralBasis>,
    x: &[f64],
    t_grid: &[f64],
    tol: f64,
) -> Result<VolumeNormalizationReport> {
    if t_grid.len() < 4 {
        return Err(Error::InvalidParameter("the expansion fit needs at least 4 times".into()));
    }
    let n = model.dim();
    let t_min = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let sampled = Sampled::new(model, basis, vec![x.to_vec()], t_min, tol, 0, false)?;
    let cn = c_of_n(n);
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let ball = model.ball_volume(x, t.sqrt(), 64)?;
        let g = &sampled.metrics(t)?[0];
        samples.push(frame(model, x, &(g * (cn * t * ball / unit_ball_volume(n)))));
    }
    let (mut order0, mut order1) = (vec![0.0; n * n], vec![0.0; n * n]);
    for c in 0..n * n {
        let y: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let f = fit::polyfit(t_grid, &y, 2)?;
        order0[c] = f.coeffs[0];
        order1[c] = f.coeffs[1];
    }
    let gf = weighted_einstein(model, x);
    let cvol = model.volume_expansion_coefficient(x);
    let g = model.metric(x);
    let predicted = frame(model, x, &(&gf * (-(2.0 / 3.0) * (-model.f(x)).exp()) - &g * cvol));
    let displayed = frame(model, x, &((&gf + &g * cvol) * (-2.0 / 3.0)));
    let identity = frame(model, x, &g);
    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let order0_error = err(&order0, &identity);
    let order1_error = err(&order1, &predicted);
    let order1_error_displayed = err(&order1, &displayed);
    let scale = predicted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let passed = order0_error <= 1e-3 && order1_error <= (0.02 * scale).max(1e-4);
    Ok(VolumeNormalizationReport {
        model: model.key(),
        point: x.to_vec(),
        t_grid: t_grid.to_vec(),
        samples,
        order0,
        order1,
        predicted_order1: predicted,
        displayed_order1: displayed,
        order0_error,
        order1_error,
        order1_error_displayed,
        passed,
    })
}

/// `∫ ⟨T, ∇ω⟩ dm`.
pub fn divergence_pairing<T>(model: &ModelGeometry, grid: &QuadratureGrid, tensor: T, w: &OneForm) -> Result<f64>
where
    T: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    grid.check_model(model)?;
    let nabla = crate::calculus::covariant_derivative(model, w);
    Ok(grid.integrate(|x| pair_tensors(model, x, &tensor(x), &nabla.value(x))))
}

#[derive(Clone, Debug, Serialize)]
pub struct KeyIdentityRow {
    pub t: f64,
    pub m_used: usize,
    /// `∫ ⟨g_t, ∇dφ_k⟩ dm`.
    pub lhs: f64,
    /// `(λ_k²/4) ∫ φ_k P dm` with `P(x) = p(x, x, 2t)`.
    pub rhs_technical: f64,
    /// `−¼ ∫ ⟨dφ_k, d(Δ_f P)⟩ dm`.
    pub rhs_divfree: f64,
    pub gap_technical: f64,
    pub gap_divfree: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KeyIdentityReport {
    pub model: String,
    pub k: usize,
    pub lambda: f64,
    /// `∫ δ(Δ_H dφ_k) dm = λ_k² ∫ φ_k dm`, zero for `k ≥ 1`.
    pub codifferential_integral: f64,
    pub rows: Vec<KeyIdentityRow>,
    pub max_relative_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Both integral identities for `ω = dφ_k` over a time grid.
pub fn key_identity_check(
    model: &ModelGeometry,
    basis: &SpectralBasis,
    k: usize,
    t_grid: &[f64],
    grid: &QuadratureGrid,
    tol: f64,
) -> Result<KeyIdentityReport> {
    Ok(key_identity_batch(model, basis, &[k], t_grid, grid, tol)?.remove(0))
}

/// [`key_identity_check`] for several modes sharing one set of samples.
pub fn key_identity_batch(
    model: &ModelGeometry,
    basis: &SpectralBasis,
    ks: &[usize],
    t_grid: &[f64],
    grid: &QuadratureGrid,
    tol: f64,
) -> Result<Vec<KeyIdentityReport>> {
    grid.check_model(model)?;
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if kmax >= basis.len() {
        return Err(Error::BasisTooSmall(format!("mode {kmax} is outside a basis of {}", basis.len())));
    }
    let t_min = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let points: Vec<Vec<f64>> = grid.points().map(|p| p.to_vec()).collect();
    let sampled = Sampled::new(model, Some(basis), points, t_min, tol, kmax + 1, true)?;
    let lambdas = basis.lambdas();
    let weights = grid.weights();
    let mut reports: Vec<KeyIdentityReport> = ks
        .iter()
        .map(|&k| KeyIdentityReport {
            model: model.key(),
            k,
            lambda: lambdas[k],
            codifferential_integral: lambdas[k].powi(2)
                * sampled.samples.iter().zip(weights).map(|(s, w)| w * s.values[k]).sum::<f64>(),
            rows: Vec::new(),
            max_relative_gap: 0.0,
            tolerance: 1e-8,
            passed: true,
        })
        .collect();
    for &t in t_grid {
        let h = HeatAssembly::new(basis, t, tol)?;
        let per_point: Vec<(DMatrix<f64>, f64, Vec<f64>)> = sampled
            .samples
            .par_iter()
            .zip(&sampled.points)
            .map(|(s, x)| (h.pullback_metric_from(s), h.diag_from(s), h.diag_lap_from(x, s).differential))
            .collect();
        for rep in reports.iter_mut() {
            let k = rep.k;
            let lam = lambdas[k];
            let (mut lhs, mut rhs1, mut rhs2) = (Vec::new(), Vec::new(), Vec::new());
            for (((g, p, dlp), s), x) in per_point.iter().zip(&sampled.samples).zip(&sampled.points) {
                let hess = &s.hessians.as_ref().expect("Hessians sampled")[k];
                lhs.push(pair_tensors(model, x, g, hess));
                rhs1.push(0.25 * lam * lam * s.values[k] * p);
                rhs2.push(-0.25 * pair_1forms(model, x, &s.grads[k], dlp));
            }
            let lhs = grid.integrate_samples(&lhs);
            let rhs_technical = grid.integrate_samples(&rhs1);
            let rhs_divfree = grid.integrate_samples(&rhs2);
            let scale = lhs.abs().max(rhs_technical.abs()).max(rhs_divfree.abs()).max(1.0);
            let row = KeyIdentityRow {
                t,
                m_used: h.m_used(),
                lhs,
                rhs_technical,
                rhs_divfree,
                gap_technical: (lhs - rhs_technical).abs(),
                gap_divfree: (lhs - rhs_divfree).abs(),
                scale,
            };
            rep.max_relative_gap = rep.max_relative_gap.max(row.gap_technical.max(row.gap_divfree) / scale);
            rep.rows.push(row);
        }
    }
    for rep in reports.iter_mut() {
        rep.passed = rep.max_relative_gap <= rep.tolerance;
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vanishes,
    Nonzero,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct WadfForm {
    pub k: usize,
    pub lambda: f64,
    /// `D(t, dφ_k) = ∫ ⟨T_t, ∇dφ_k⟩ dm` on the time grid.
    pub d_values: Vec<f64>,
    pub limit: f64,
    /// `λ_k² ∫ φ_k dvol`.
    pub predicted_limit: f64,
    /// `λ_k² ∫ |φ_k| dvol`.
    pub scale: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct WadfReport {
    pub model: String,
    pub t_grid: Vec<f64>,
    pub forms: Vec<WadfForm>,
    /// `Vanishes` when every limit vanishes, `Nonzero` when some limit does
    /// not.
    pub verdict: Verdict,
}

/// Limits of `D(t, dφ_k)` as `t → 0` for the requested modes.
pub fn wadf_experiment(
    model: &ModelGeometry,
    basis: &SpectralBasis,
    ks: &[usize],
    t_grid: &[f64],
    grid: &QuadratureGrid,
    tol: f64,
    vanish_rel: f64,
) -> Result<WadfReport> {
    grid.check_model(model)?;
    if t_grid.len() < 3 {
        return Err(Error::InvalidParameter("extrapolation needs at least 3 times".into()));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if kmax >= basis.len() {
        return Err(Error::BasisTooSmall(format!("mode {kmax} is outside a basis of {}", basis.len())));
    }
    let n = model.dim();
    let cn = c_of_n(n);
    let t_min = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let points: Vec<Vec<f64>> = grid.points().map(|p| p.to_vec()).collect();
    let sampled = Sampled::new(model, Some(basis), points, t_min, tol, kmax + 1, true)?;
    let weights = grid.weights();
    let ratio: Vec<f64> = sampled.points.iter().map(|x| model.hausdorff_ratio(x)).collect();
    let mut d = vec![Vec::with_capacity(t_grid.len()); ks.len()];
    for &t in t_grid {
        let gs = sampled.metrics(t)?;
        let c = cn * t.powf(0.5 * (n as f64 + 2.0));
        for (slot, &k) in ks.iter().enumerate() {
            let vals: Vec<f64> = gs
                .iter()
                .zip(&sampled.samples)
                .zip(&sampled.points)
                .zip(&ratio)
                .map(|(((g, s), x), r)| {
                    let hess = &s.hessians.as_ref().expect("Hessians sampled")[k];
                    let tt = (g * c - model.metric(x) * *r) / t;
                    pair_tensors(model, x, &tt, hess)
                })
                .collect();
            d[slot].push(grid.integrate_samples(&vals));
        }
    }
    let forms = ks
        .iter()
        .zip(d)
        .map(|(&k, d_values)| {
            let lam = basis.lambdas()[k];
            // dvol = e^f dm
            let (mut signed, mut abs) = (0.0, 0.0);
            for ((s, w), r) in sampled.samples.iter().zip(weights).zip(&ratio) {
                signed += w * r * s.values[k];
                abs += w * r * s.values[k].abs();
            }
            let predicted_limit = lam * lam * signed;
            let scale = lam * lam * abs;
            let tolerance = vanish_rel * scale.max(f64::MIN_POSITIVE);
            let limit = fit::richardson_limit(t_grid, &d_values, 3)?;
            let verdict = classify(t_grid, &d_values, limit, tolerance);
            Ok(WadfForm {
                k,
                lambda: lam,
                d_values,
                limit,
                predicted_limit,
                scale,
                tolerance,
                verdict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdict = if forms.iter().any(|f| f.verdict == Verdict::Nonzero) {
        Verdict::Nonzero
    } else if forms.iter().all(|f| f.verdict == Verdict::Vanishes) {
        Verdict::Vanishes
    } else {
        Verdict::Inconclusive
    };
    Ok(WadfReport {
        model: model.key(),
        t_grid: t_grid.to_vec(),
        forms,
        verdict,
    })
}

/// A vanishing limit also needs `|D|` to stay small or keep shrinking over the
/// last half-decade of times.
fn classify(t_grid: &[f64], d: &[f64], limit: f64, tolerance: f64) -> Verdict {
    let t_last = t_grid[t_grid.len() - 1];
    let tail: Vec<f64> = t_grid
        .iter()
        .zip(d)
        .filter(|(t, _)| **t <= t_last * 10f64.sqrt() * (1.0 + 1e-12))
        .map(|(_, v)| v.abs())
        .collect();
    let shrinking = tail.windows(2).all(|w| w[1] <= w[0]);
    let small = tail.iter().all(|v| *v <= tolerance);
    if limit.abs() <= tolerance && (small || shrinking) {
        Verdict::Vanishes
    } else if limit.abs() > 10.0 * tolerance {
        Verdict::Nonzero
    } else {
        Verdict::Inconclusive
    }
}

/// `Δ^t u = ⟨g_t, Hess_u⟩ + ¼⟨du, d(Δ_f P)⟩`, the weighted Laplacian of
/// `(X, g_t, m)`.
pub struct PullbackLaplacian<'a> {
    heat: HeatAssembly<'a>,
}

impl<'a> PullbackLaplacian<'a> {
    pub fn new(basis: &'a SpectralBasis, t: f64, tol: f64) -> Result<PullbackLaplacian<'a>> {
        Ok(PullbackLaplacian {
            heat: HeatAssembly::new(basis, t, tol)?,
        })
    }

    pub fn apply(&self, u: &ScalarField, x: &[f64]) -> Result<f64> {
        let model = self.heat.basis().model();
        let gt = self.heat.pullback_metric(x)?;
        let h = hessian(model, u).value(x);
        let dlp = self.heat.diag_lap(x).differential;
        Ok(pair_tensors(model, x, &gt, &h) + 0.25 * pair_1forms(model, x, &u.jet(x, 1).gradient(), &dlp))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PullbackLaplacianCheck {
    pub t: f64,
    /// `∫ g_t(∇u, ∇v) dm`.
    pub energy: f64,
    /// `−∫ v Δ^t u dm`.
    pub by_parts: f64,
    pub gap: f64,
    pub passed: bool,
}

/// `Δ^t u` from [`PullbackLaplacian`].
pub fn pullback_laplacian(basis: &SpectralBasis, u: &ScalarField, t: f64, x: &[f64], tol: f64) -> Result<f64> {
    PullbackLaplacian::new(basis, t, tol)?.apply(u, x)
}

/// Integration-by-parts contract of the pullback Laplacian.
pub fn pullback_laplacian_check(
    basis: &SpectralBasis,
    u: &ScalarField,
    v: &ScalarField,
    t: f64,
    grid: &QuadratureGrid,
    tol: f64,
) -> Result<PullbackLaplacianCheck> {
    let model = basis.model();
    grid.check_model(model)?;
    let lap = PullbackLaplacian::new(basis, t, tol)?;
    let energy = grid.integrate(|x| {
        let gt = lap.heat.pullback_metric(x).expect("grid points are admissible");
        let g = model.metric_diag(x);
        let du = u.jet(x, 1).gradient();
        let dv = v.jet(x, 1).gradient();
        let n = g.len();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += gt[(a, b)] * du[a] / g[a] * dv[b] / g[b];
            }
        }
        s
    });
    let by_parts = -grid.integrate(|x| v.value(x) * lap.apply(u, x).expect("grid points are admissible"));
    let gap = (energy - by_parts).abs();
    Ok(PullbackLaplacianCheck {
        t,
        energy,
        by_parts,
        gap,
        passed: gap <= 1e-8 * energy.abs().max(by_parts.abs()).max(1.0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SuspensionReport {
    pub link_radius: f64,
    pub epsilons: Vec<f64>,
    /// `I(ε) = ∫_{K_ε} Scal² dvol`.
    pub scal_l2: Vec<f64>,
    /// `‖G‖²_{L²(K_ε)}`.
    pub einstein_l2: Vec<f64>,
    /// `I(ε)/12`.
    pub einstein_lower_bound: Vec<f64>,
    pub lower_bound_holds: bool,
    /// Fit `I(ε) ≈ a + b ε^p`.
    pub growth: fit::PowerLawFit,
    /// Plain log-log slope of `I(ε)`, for comparison.
    pub loglog_slope: f64,
    pub growth_tolerance: f64,
    pub growth_ok: bool,
    /// `‖G‖²_{L²(K_ε)} ≤ (9/4) liminf ‖T_t‖²_{L²}`, so unbounded growth of
    /// the left side forces `liminf ‖T_t‖_{L²} = ∞`. Inferred, not measured.
    pub approx_einstein_l2_unbounded: bool,
    pub passed: bool,
}

/// Integrates `h(t)` over `(ε, π − ε)` with panels refined towards both ends.
fn integrate_away_from_poles(eps: f64, h: impl Fn(f64) -> f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let mut cuts = vec![eps];
    while cuts[cuts.len() - 1] * 2.0 < half {
        let next = cuts[cuts.len() - 1] * 2.0;
        cuts.push(next);
    }
    cuts.push(half);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (nodes, weights) = gauss_legendre_on(24, w[0], w[1]);
        for (t, q) in nodes.iter().zip(&weights) {
            acc += q * (h(*t) + h(std::f64::consts::PI - t));
        }
    }
    acc
}

/// Curvature integrals over `K_ε = {ε < t < π − ε}` of the suspension.
pub fn suspension_blowup(model: &ModelGeometry, eps_grid: &[f64], growth_tolerance: f64) -> Result<SuspensionReport> {
    let ModelSpec::SphericalSuspension { link_radius, pole_cutoff } = model.spec() else {
        return Err(Error::InvalidParameter("the blow-up experiment needs the spherical suspension".into()));
    };
    if eps_grid.len() < 3 {
        return Err(Error::InvalidParameter("at least 3 cutoffs are needed".into()));
    }
    for &e in eps_grid {
        if !(e >= *pole_cutoff && e < std::f64::consts::FRAC_PI_2) {
            return Err(Error::OutOfRange(format!(
                "cutoff {e} must lie in [{pole_cutoff}, π/2)"
            )));
        }
    }
    let r = *link_radius;
    // fields are rotationally symmetric; the S² factor contributes its area
    let fiber = 4.0 * std::f64::consts::PI * r * r;
    let at = |t: f64| [t, std::f64::consts::FRAC_PI_2, 0.3];
    let scal_sq = |t: f64| model.scal(&at(t)).powi(2) * fiber * t.sin().powi(2);
    let g_sq = |t: f64| {
        let x = at(t);
        let g = einstein_tensor(model, &x);
        pair_tensors(model, &x, &g, &g) * fiber * t.sin().powi(2)
    };
    let scal_l2: Vec<f64> = eps_grid.iter().map(|&e| integrate_away_from_poles(e, scal_sq)).collect();
    let einstein_l2: Vec<f64> = eps_grid.iter().map(|&e| integrate_away_from_poles(e, g_sq)).collect();
    let einstein_lower_bound: Vec<f64> = scal_l2.iter().map(|i| i / 12.0).collect();
    let lower_bound_holds = einstein_lower_bound
        .iter()
        .zip(&einstein_l2)
        .all(|(lo, g)| *lo <= g * (1.0 + 1e-12));
    let growth = fit::power_law_with_offset(eps_grid, &scal_l2, -3.0, -0.05)?;
    let loglog_slope = fit::loglog_slope(eps_grid, &scal_l2)?;
    let growth_ok = (growth.exponent + 1.0).abs() <= growth_tolerance;
    let approx_einstein_l2_unbounded = growth_ok && growth.amplitude > 0.0 && lower_bound_holds;
    Ok(SuspensionReport {
        link_radius: r,
        epsilons: eps_grid.to_vec(),
        scal_l2,
        einstein_l2,
        einstein_lower_bound,
        lower_bound_holds,
        growth,
        loglog_slope,
        growth_tolerance,
        growth_ok,
        approx_einstein_l2_unbounded,
        passed: growth_ok && lower_bound_holds,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinDivergenceReport {
    pub model: String,
    pub points: Vec<Vec<f64>>,
    /// `|∇*_f G_f|` at each point.
    pub norms: Vec<f64>,
    pub max_norm: f64,
}

/// Pointwise norm of `∇*_f G_f`.
pub fn einstein_divergence(model: &ModelGeometry, points: &[Vec<f64>]) -> Result<EinsteinDivergenceReport> {
    let div = weighted_adjoint_div(model, &weighted_einstein_field(model));
    let norms = points
        .iter()
        .map(|x| {
            model.check_point(x)?;
            let v = div.value(x);
            Ok(pair_1forms(model, x, &v, &v).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EinsteinDivergenceReport {
        model: model.key(),
        points: points.to_vec(),
        max_norm: norms.iter().cloned().fold(0.0, f64::max),
        norms,
    })
}
