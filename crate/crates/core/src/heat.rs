//! Heat kernels and the pullback metric `g_t` from truncated eigenbases.
//!
//! Conventions: `p(x, y, t) = Σ e^{-λ_i t} φ_i(x) φ_i(y)` is the kernel of the
//! weighted heat semigroup with respect to `m`, and
//! `g_t = Σ e^{-2λ_i t} dφ_i ⊗ dφ_i`. Quantities "at time t" on the diagonal
//! are the ones entering `g_t`, so [`HeatAssembly::diag`] returns
//! `p(x, x, 2t)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::models::{unit_ball_volume, ModelGeometry, ModelSpec};
use crate::spectrum::{sphere_levels, sphere_volume, PointSamples, SpectralBasis};
use crate::{fit, Error, Result};

/// Growth weight bounding `|dφ|²` by a power of the eigenvalue.
fn tail_weight(lambda: f64, dim: usize, t: f64) -> f64 {
    (1.0 + lambda).powf(0.5 * (dim as f64 + 1.0)) * (-2.0 * lambda * t).exp()
}

/// Smallest mode count whose tail estimate for `g_t` is below `tol`, rounded
/// up to complete the last eigenspace.
pub fn truncation_order(basis: &SpectralBasis, t: f64, tol: f64) -> Result<usize> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be positive, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let n = basis.model().dim();
    let lam = basis.lambdas();
    let size = lam.len();
    let last = tail_weight(lam[size - 1], n, t);
    if last > 1e-3 * tol {
        return Err(Error::BasisTooSmall(format!(
            "the last of {size} modes still weighs {last:.3e} at t = {t}; build a larger basis for tol = {tol:.1e}"
        )));
    }
    // tail beyond the basis from the Weyl lower bound λ_i ≥ c i^{2/n}
    let c = basis.weyl_constant();
    let mut beyond = 0.0;
    let mut i = size;
    loop {
        let l = (c * (i as f64).powf(2.0 / n as f64)).max(lam[size - 1]);
        let w = tail_weight(l, n, t);
        beyond += w;
        i += 1;
        if w < 1e-30 || i > 100 * size {
            break;
        }
    }
    let mut tail = beyond;
    let mut m = size;
    while m > 1 {
        let next = tail + tail_weight(lam[m - 1], n, t);
        if next >= tol {
            break;
        }
        tail = next;
        m -= 1;
    }
    while m < size && (lam[m] - lam[m - 1]).abs() <= 1e-9 * lam[m].max(1.0) {
        m += 1;
    }
    Ok(m)
}

/// Heat quantities of a basis at a fixed time.
#[derive(Clone, Debug)]
pub struct HeatAssembly<'a> {
    basis: &'a SpectralBasis,
    t: f64,
    truncation_tol: f64,
    m_used: usize,
    m_kernel: Option<usize>,
}

/// Data of the diagonal function `P(x) = p(x, x, 2t)`.
#[derive(Clone, Debug, Serialize)]
pub struct DiagLaplacian {
    /// Weighted Laplacian of `P` at the point.
    pub value: f64,
    /// Chart components of `d(Δ_f P)`.
    pub differential: Vec<f64>,
}

impl<'a> HeatAssembly<'a> {
    pub fn new(basis: &'a SpectralBasis, t: f64, truncation_tol: f64) -> Result<HeatAssembly<'a>> {
        let m_used = truncation_order(basis, t, truncation_tol)?;
        let m_kernel = truncation_order(basis, 0.5 * t, truncation_tol).ok();
        Ok(HeatAssembly {
            basis,
            t,
            truncation_tol,
            m_used,
            m_kernel,
        })
    }

    pub fn basis(&self) -> &'a SpectralBasis {
        self.basis
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn truncation_tol(&self) -> f64 {
        self.truncation_tol
    }

    /// Modes entering `g_t` and `p(·, ·, 2t)`.
    pub fn m_used(&self) -> usize {
        self.m_used
    }

    /// Weights `e^{-2λ_i t}` of the retained modes.
    pub fn weights(&self) -> Vec<f64> {
        self.basis.lambdas()[..self.m_used]
            .iter()
            .map(|l| (-2.0 * l * self.t).exp())
            .collect()
    }

    /// `p(x, y, t)`.
    pub fn heat_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let m = self.m_kernel.ok_or_else(|| {
            Error::BasisTooSmall(format!(
                "the basis does not resolve p(·,·,t) at t = {}; build a larger basis",
                self.t
            ))
        })?;
        let sx = self.basis.sample_modes(x, m, false);
        let sy = self.basis.sample_modes(y, m, false);
        Ok((0..m)
            .map(|i| (-self.basis.lambdas()[i] * self.t).exp() * sx.values[i] * sy.values[i])
            .sum())
    }

    /// `p(x, x, 2t)`.
    pub fn diag(&self, x: &[f64]) -> f64 {
        self.diag_from(&self.basis.sample_modes(x, self.m_used, false))
    }

    /// [`Self::diag`] from samples of at least [`Self::m_used`] modes.
    pub fn diag_from(&self, s: &PointSamples) -> f64 {
        self.weights().iter().zip(&s.values).map(|(w, v)| w * v * v).sum()
    }

    /// Chart components of `g_t` at `x`.
    pub fn pullback_metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.basis.model().check_point(x)?;
        Ok(self.pullback_metric_from(&self.basis.sample_modes(x, self.m_used, false)))
    }

    /// [`Self::pullback_metric`] from samples of at least [`Self::m_used`] modes.
    pub fn pullback_metric_from(&self, s: &PointSamples) -> DMatrix<f64> {
        let n = self.basis.model().dim();
        let mut g = DMatrix::zeros(n, n);
        for (w, d) in self.weights().iter().zip(&s.grads) {
            for a in 0..n {
                for b in 0..n {
                    g[(a, b)] += w * d[a] * d[b];
                }
            }
        }
        g
    }

    /// Weighted Laplacian of `P(x) = p(x, x, 2t)` and its differential:
    /// `Δ_f P = Σ e^{-2λt}(2|∇φ|² − 2λφ²)` and
    /// `dΔ_f P = Σ e^{-2λt}(4 Hess_φ(∇φ, ·) − 4λφ dφ)`.
    pub fn diag_lap(&self, x: &[f64]) -> DiagLaplacian {
        self.diag_lap_from(x, &self.basis.sample_modes(x, self.m_used, true))
    }

    /// [`Self::diag_lap`] from samples that include Hessians.
    pub fn diag_lap_from(&self, x: &[f64], s: &PointSamples) -> DiagLaplacian {
        let model = self.basis.model();
        let n = model.dim();
        let g = model.metric_diag(x);
        let hess = s.hessians.as_ref().expect("Hessians requested");
        let lam = self.basis.lambdas();
        let mut value = 0.0;
        let mut differential = vec![0.0; n];
        for (i, w) in self.weights().iter().enumerate() {
            let d = &s.grads[i];
            let grad2: f64 = (0..n).map(|a| d[a] * d[a] / g[a]).sum();
            value += w * (2.0 * grad2 - 2.0 * lam[i] * s.values[i] * s.values[i]);
            for (b, out) in differential.iter_mut().enumerate() {
                let h_grad: f64 = (0..n).map(|a| hess[i][(b, a)] * d[a] / g[a]).sum();
                *out += w * (4.0 * h_grad - 4.0 * lam[i] * s.values[i] * d[b]);
            }
        }
        DiagLaplacian { value, differential }
    }

    /// `Δ_x p(x, y, 2t)` at `y = x`, i.e. `−Σ λ e^{-2λt} φ²`, and its
    /// differential along the diagonal.
    pub fn one_sided_diag_laplacian(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let s = self.basis.sample_modes(x, self.m_used, false);
        let lam = self.basis.lambdas();
        let n = self.basis.model().dim();
        let mut value = 0.0;
        let mut diff = vec![0.0; n];
        for (i, w) in self.weights().iter().enumerate() {
            value -= w * lam[i] * s.values[i] * s.values[i];
            for (b, out) in diff.iter_mut().enumerate() {
                *out -= 2.0 * w * lam[i] * s.values[i] * s.grads[i][b];
            }
        }
        (value, diff)
    }
}

/// Closed-form heat quantities on a round sphere via the addition theorem.
#[derive(Clone, Copy, Debug)]
pub struct SphereHeat {
    pub dim: usize,
    pub radius: f64,
    pub tol: f64,
}

impl SphereHeat {
    pub fn new(model: &ModelGeometry, tol: f64) -> Result<SphereHeat> {
        match model.spec() {
            ModelSpec::RoundSphere { dim, radius } => Ok(SphereHeat {
                dim: *dim,
                radius: *radius,
                tol,
            }),
            _ => Err(Error::InvalidParameter("isotropic heat sums need a round sphere".into())),
        }
    }

    fn level_sum(&self, s: f64, power: i32) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("time must be positive, got {s}")));
        }
        let vol = sphere_volume(self.dim, self.radius);
        let cap = 200_000;
        let mut acc = 0.0;
        for lev in sphere_levels(self.dim, self.radius, cap) {
            let term = (-lev.lambda * s).exp() * lev.lambda.powi(power) * lev.multiplicity as f64 / vol;
            acc += term;
            if lev.degree > 2 && term < 1e-3 * self.tol * acc.max(1.0) && lev.lambda * s > 1.0 {
                return Ok(acc);
            }
        }
        Err(Error::BasisTooSmall(format!("sphere level sum did not converge at s = {s}")))
    }

    /// `p(x, x, s)`, independent of `x`.
    pub fn kernel_diag(&self, s: f64) -> Result<f64> {
        self.level_sum(s, 0)
    }

    /// Scalar `γ(t)` with `g_t = γ(t) g`.
    pub fn pullback_scalar(&self, t: f64) -> Result<f64> {
        Ok(self.level_sum(2.0 * t, 1)? / self.dim as f64)
    }
}

/// Short-time diagonal sequences and their limits at one point.
#[derive(Clone, Debug, Serialize)]
pub struct ShortTimeReport {
    pub point: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `t^{n/2} p(x, x, 2t)`.
    pub scaled_diag: Vec<f64>,
    pub scaled_diag_limit: f64,
    /// `(8π)^{-n/2} · dH^n/dm(x)`.
    pub scaled_diag_predicted: f64,
    /// `m(B_{√t}(x)) p(x, x, t)`.
    pub ball_product: Vec<f64>,
    pub ball_product_limit: f64,
    /// `ω_n / (4π)^{n/2}`.
    pub ball_product_predicted: f64,
}

/// Evaluates both short-time diagonal statistics over a decreasing `t_grid`.
pub fn shorttime_diag(
    model: &ModelGeometry,
    basis: Option<&SpectralBasis>,
    x: &[f64],
    t_grid: &[f64],
    tol: f64,
) -> Result<ShortTimeReport> {
    model.check_point(x)?;
    let n = model.dim();
    let nf = n as f64;
    let sphere = SphereHeat::new(model, tol).ok();
    let diag_at = |s: f64| -> Result<f64> {
        if let Some(sh) = &sphere {
            return sh.kernel_diag(s);
        }
        let basis = basis.ok_or_else(|| Error::InvalidParameter("a spectral basis is required".into()))?;
        Ok(HeatAssembly::new(basis, 0.5 * s, tol)?.diag(x))
    };
    let mut scaled_diag = Vec::with_capacity(t_grid.len());
    let mut ball_product = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        scaled_diag.push(t.powf(0.5 * nf) * diag_at(2.0 * t)?);
        ball_product.push(model.ball_volume(x, t.sqrt(), 64)? * diag_at(t)?);
    }
    let points = t_grid.len().min(3);
    Ok(ShortTimeReport {
        point: x.to_vec(),
        t_grid: t_grid.to_vec(),
        scaled_diag_limit: fit::richardson_limit(t_grid, &scaled_diag, points)?,
        scaled_diag_predicted: (8.0 * std::f64::consts::PI).powf(-0.5 * nf) * model.hausdorff_ratio(x),
        ball_product_limit: fit::richardson_limit(t_grid, &ball_product, points)?,
        ball_product_predicted: unit_ball_volume(n) / (4.0 * std::f64::consts::PI).powf(0.5 * nf),
        scaled_diag,
        ball_product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::WeightSpec;
    use crate::quadrature::QuadratureGrid;
    use std::f64::consts::PI;

    fn flat() -> ModelGeometry {
        ModelGeometry::flat_circle(1.0, WeightSpec::zero()).unwrap()
    }

    #[test]
    fn flat_circle_pullback_metric_calibration() {
        let m = flat();
        let b = SpectralBasis::circle(&m, 400, 0).unwrap();
        let h = HeatAssembly::new(&b, 0.01, 1e-12).unwrap();
        let g = h.pullback_metric(&[0.7]).unwrap()[(0, 0)];
        // independent theta-series oracle
        let series: f64 = (1..2000).map(|k| (k * k) as f64 * (-0.02 * (k * k) as f64).exp()).sum::<f64>() / PI;
        assert!((g - series).abs() < 1e-9 * series);
        assert!((g - 49.87).abs() < 0.01);
        let c1 = 4.0 * (8.0 * PI).sqrt();
        assert!((c1 * 0.01f64.powf(1.5) * g - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_circle_kernel_is_a_theta_function() {
        let m = flat();
        let b = SpectralBasis::circle(&m, 301, 0).unwrap();
        let h = HeatAssembly::new(&b, 0.05, 1e-12).unwrap();
        let theta: f64 = (1.0 + 2.0 * (1..500).map(|k| (-0.05 * (k * k) as f64).exp()).sum::<f64>()) / (2.0 * PI);
        for x in [0.0, 1.3, 5.0] {
            assert!((h.heat_kernel(&[x], &[x]).unwrap() - theta).abs() < 1e-12);
        }
        let (a, c) = (h.heat_kernel(&[0.4], &[2.0]).unwrap(), h.heat_kernel(&[2.0], &[0.4]).unwrap());
        assert!((a - c).abs() < 1e-12 * a.abs().max(1e-300) + 1e-18);
    }

    #[test]
    fn truncation_order_examples() {
        let m = flat();
        let b = SpectralBasis::circle(&m, 401, 0).unwrap();
        let big = truncation_order(&b, 0.01, 1e-10).unwrap();
        let kmax = (big - 1) / 2;
        assert!((34..=46).contains(&kmax), "cutoff frequency {kmax}");
        assert_eq!(truncation_order(&b, 10.0, 1e-12).unwrap(), 3);
        let looser = truncation_order(&b, 0.01, 2e-10).unwrap();
        assert!(looser <= big);
        let small = SpectralBasis::circle(&m, 11, 0).unwrap();
        assert!(matches!(truncation_order(&small, 1e-3, 1e-12), Err(Error::BasisTooSmall(_))));
    }

    #[test]
    fn stochastic_completeness_and_semigroup() {
        let m = ModelGeometry::flat_circle(1.0, WeightSpec::cosine(0.5)).unwrap();
        let b = SpectralBasis::circle(&m, 120, 160).unwrap();
        let grid = QuadratureGrid::for_model(&m, 512).unwrap();
        let h1 = HeatAssembly::new(&b, 0.05, 1e-12).unwrap();
        let h2 = HeatAssembly::new(&b, 0.1, 1e-12).unwrap();
        let h3 = HeatAssembly::new(&b, 0.15, 1e-12).unwrap();
        let x = [0.3];
        let y = [2.1];
        let mass = grid.integrate(|z| h1.heat_kernel(&x, z).unwrap());
        assert!((mass - 1.0).abs() < 1e-10);
        let conv = grid.integrate(|z| h1.heat_kernel(&x, z).unwrap() * h2.heat_kernel(z, &y).unwrap());
        assert!((conv - h3.heat_kernel(&x, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn diag_lap_on_homogeneous_spaces_has_no_differential() {
        let m = flat();
        let b = SpectralBasis::circle(&m, 201, 0).unwrap();
        let h = HeatAssembly::new(&b, 0.05, 1e-12).unwrap();
        assert!(h.diag_lap(&[1.0]).differential[0].abs() < 1e-12);
        assert!(h.one_sided_diag_laplacian(&[1.0]).1[0].abs() < 1e-12);
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let bs = SpectralBasis::sphere(&s2, 30).unwrap();
        let hs = HeatAssembly::new(&bs, 0.05, 1e-10).unwrap();
        let d = hs.diag_lap(&[1.1, 0.4]);
        assert!(d.differential.iter().all(|v| v.abs() < 1e-9));
        assert!(d.value.abs() < 1e-9);
    }

    #[test]
    fn one_sided_value_matches_time_derivative() {
        // Σ(−λ)e^{−2λt}φ² = ½ d/dt p(x,x,2t)
        let m = ModelGeometry::flat_circle(1.0, WeightSpec::cosine(0.5)).unwrap();
        let b = SpectralBasis::circle(&m, 150, 200).unwrap();
        let t = 0.05;
        let h = 1e-4;
        let p = |s: f64| HeatAssembly::new(&b, s, 1e-13).unwrap().diag(&[0.8]);
        let fd = (-p(t + 2.0 * h) + 8.0 * p(t + h) - 8.0 * p(t - h) + p(t - 2.0 * h)) / (12.0 * h);
        let v = HeatAssembly::new(&b, t, 1e-13).unwrap().one_sided_diag_laplacian(&[0.8]).0;
        assert!((v - 0.5 * fd).abs() < 1e-6 * v.abs().max(1.0));
    }

    #[test]
    fn diag_lap_differential_matches_finite_difference() {
        let m = ModelGeometry::flat_circle(1.0, WeightSpec::cosine(0.5)).unwrap();
        let b = SpectralBasis::circle(&m, 150, 200).unwrap();
        let h = HeatAssembly::new(&b, 0.05, 1e-13).unwrap();
        let th = 0.9;
        let e = 1e-4;
        let v = |s: f64| h.diag_lap(&[s]).value;
        let fd = (-v(th + 2.0 * e) + 8.0 * v(th + e) - 8.0 * v(th - e) + v(th - 2.0 * e)) / (12.0 * e);
        let d = h.diag_lap(&[th]).differential[0];
        assert!(d.abs() > 1e-3);
        assert!((d - fd).abs() < 1e-6 * d.abs().max(1.0));
    }

    #[test]
    fn sphere_fast_path_matches_mode_loop() {
        for n in [2usize, 3] {
            let m = ModelGeometry::round_sphere(n, 1.0).unwrap();
            let deg = if n == 2 { 40 } else { 18 };
            let b = SpectralBasis::sphere(&m, deg).unwrap();
            let t = 0.1;
            let h = HeatAssembly::new(&b, t, 1e-12).unwrap();
            let sh = SphereHeat::new(&m, 1e-14).unwrap();
            let x: Vec<f64> = [1.0, 0.6, 2.0][..n].to_vec();
            let g = h.pullback_metric(&x).unwrap();
            let gam = sh.pullback_scalar(t).unwrap();
            let rel = (g - m.metric(&x) * gam).abs().max() / gam;
            assert!(rel < 1e-10, "S{n}: {rel}");
            assert!((h.diag(&x) - sh.kernel_diag(2.0 * t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn first_principal_term_improves_as_t_decreases() {
        let m = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let sh = SphereHeat::new(&m, 1e-14).unwrap();
        let c2 = 32.0 * PI;
        let errs: Vec<f64> = [1e-2, 3e-3, 1e-3]
            .iter()
            .map(|t| (c2 * t * t * sh.pullback_scalar(*t).unwrap() - 1.0).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
    }

    #[test]
    fn short_time_limits() {
        let c = flat();
        let b = SpectralBasis::circle(&c, 2001, 0).unwrap();
        let grid = fit::geometric_grid(0.01, 0.5, 8);
        let r = shorttime_diag(&c, Some(&b), &[0.0], &grid, 1e-12).unwrap();
        let last = *r.scaled_diag.last().unwrap();
        assert!((last - 0.199471).abs() < 1e-6);
        assert!((r.ball_product_predicted - 0.564190).abs() < 1e-6);
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let r2 = shorttime_diag(&s2, None, &[1.0, 1.0], &grid, 1e-12).unwrap();
        assert!((r2.ball_product_predicted - 0.25).abs() < 1e-15);
        assert!((r2.ball_product.last().unwrap() - 0.25).abs() < 0.01 * 0.25);
    }
}
