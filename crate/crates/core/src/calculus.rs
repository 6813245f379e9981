//! Weighted differential calculus on chart fields.
//!
//! Fields are evaluators `(point, order) -> jets`, so every operator below is
//! exact up to the jet truncation. Charts have diagonal metrics, which keeps
//! the index gymnastics short. Sign conventions: `Δ_f` is negative
//! semidefinite, `δ_f` is the `L²(m)` adjoint of `d`, and
//! `Δ_H = dδ_f + δ_f d` is nonnegative.
//!
//! Pairings are full metric contractions, `⟨S, T⟩ = g^{ia}g^{jb}S_{ij}T_{ab}`;
//! two-forms use half of that.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::jet::{Jet, Scalar};
use crate::models::ModelGeometry;
use crate::quadrature::QuadratureGrid;
use crate::spectrum::{hodge_form_jet, HodgeMode, SpectralBasis};
use crate::Result;

type ScalarEval = dyn Fn(&[f64], usize) -> Jet + Send + Sync;
type ComponentEval = dyn Fn(&[f64], usize) -> Vec<Jet> + Send + Sync;

/// Real function on a chart.
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<ScalarEval>,
}

/// Covector field, by chart components.
#[derive(Clone)]
pub struct OneForm {
    eval: Arc<ComponentEval>,
}

/// Covariant 2-tensor field, components stored row-major. Symmetric in most
/// uses; antisymmetric ones double as 2-forms.
#[derive(Clone)]
pub struct Tensor2 {
    dim: usize,
    eval: Arc<ComponentEval>,
}

impl ScalarField {
    pub fn new(eval: impl Fn(&[f64], usize) -> Jet + Send + Sync + 'static) -> ScalarField {
        ScalarField { eval: Arc::new(eval) }
    }

    /// Field given by a formula in the chart coordinates.
    pub fn from_expr(expr: impl Fn(&[Jet]) -> Jet + Send + Sync + 'static) -> ScalarField {
        ScalarField::new(move |x, k| expr(&Jet::coordinates(x, k)))
    }

    pub fn constant(dim: usize, c: f64) -> ScalarField {
        ScalarField::new(move |_, k| Jet::constant(dim, k, c))
    }

    /// Basis element `φ_i`.
    pub fn mode(basis: Arc<SpectralBasis>, i: usize) -> ScalarField {
        ScalarField::new(move |x, k| basis.mode_jet(i, x, k))
    }

    /// The weight `f` of the model.
    pub fn weight(model: &ModelGeometry) -> ScalarField {
        let model = model.clone();
        ScalarField::new(move |x, k| model.weight_jet(x, k))
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        (self.eval)(x, order)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x, 0).val()
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new(move |x, k| a.jet(x, k) * b.jet(x, k))
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new(move |x, k| a.jet(x, k) + b.jet(x, k))
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        let a = self.clone();
        ScalarField::new(move |x, k| a.jet(x, k) * c)
    }

    /// Exterior derivative `du`.
    pub fn differential(&self) -> OneForm {
        let u = self.clone();
        OneForm::new(move |x, k| {
            let j = u.jet(x, k + 1);
            (0..x.len()).map(|i| j.partial(i)).collect()
        })
    }
}

impl OneForm {
    pub fn new(eval: impl Fn(&[f64], usize) -> Vec<Jet> + Send + Sync + 'static) -> OneForm {
        OneForm { eval: Arc::new(eval) }
    }

    pub fn from_expr(expr: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static) -> OneForm {
        OneForm::new(move |x, k| expr(&Jet::coordinates(x, k)))
    }

    /// Circle Hodge eigenform `h dθ`.
    pub fn hodge_mode(basis: Arc<SpectralBasis>, mode: HodgeMode) -> OneForm {
        OneForm::new(move |x, k| vec![hodge_form_jet(&basis, &mode, x[0], k)])
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Vec<Jet> {
        (self.eval)(x, order)
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x, 0).iter().map(Jet::val).collect()
    }

    /// `u ω`.
    pub fn scaled_by(&self, u: &ScalarField) -> OneForm {
        let (w, u) = (self.clone(), u.clone());
        OneForm::new(move |x, k| {
            let s = u.jet(x, k);
            w.jet(x, k).into_iter().map(|c| c * s.clone()).collect()
        })
    }

    pub fn add(&self, other: &OneForm) -> OneForm {
        let (a, b) = (self.clone(), other.clone());
        OneForm::new(move |x, k| a.jet(x, k).into_iter().zip(b.jet(x, k)).map(|(p, q)| p + q).collect())
    }

    pub fn scale(&self, c: f64) -> OneForm {
        let a = self.clone();
        OneForm::new(move |x, k| a.jet(x, k).into_iter().map(|p| p * c).collect())
    }
}

impl Tensor2 {
    pub fn new(dim: usize, eval: impl Fn(&[f64], usize) -> Vec<Jet> + Send + Sync + 'static) -> Tensor2 {
        Tensor2 {
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn from_expr(dim: usize, expr: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static) -> Tensor2 {
        Tensor2::new(dim, move |x, k| expr(&Jet::coordinates(x, k)))
    }

    /// `α ⊗ β`.
    pub fn outer(dim: usize, a: &OneForm, b: &OneForm) -> Tensor2 {
        let (a, b) = (a.clone(), b.clone());
        Tensor2::new(dim, move |x, k| {
            let (p, q) = (a.jet(x, k), b.jet(x, k));
            let mut out = Vec::with_capacity(dim * dim);
            for pi in &p {
                for qj in &q {
                    out.push(pi * qj);
                }
            }
            out
        })
    }

    /// `u g`.
    pub fn metric_multiple(model: &ModelGeometry, u: &ScalarField) -> Tensor2 {
        let (model, u) = (model.clone(), u.clone());
        let n = model.dim();
        Tensor2::new(n, move |x, k| {
            let s = u.jet(x, k);
            let g = model.metric_diag(&Jet::coordinates(x, k));
            let mut out = vec![s.lift(0.0); n * n];
            for (a, ga) in g.into_iter().enumerate() {
                out[a * n + a] = ga * s.clone();
            }
            out
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Vec<Jet> {
        (self.eval)(x, order)
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.jet(x, 0);
        DMatrix::from_fn(self.dim, self.dim, |a, b| v[a * self.dim + b].val())
    }

    pub fn add(&self, other: &Tensor2) -> Tensor2 {
        let (a, b) = (self.clone(), other.clone());
        Tensor2::new(self.dim, move |x, k| a.jet(x, k).into_iter().zip(b.jet(x, k)).map(|(p, q)| p + q).collect())
    }

    pub fn scale(&self, c: f64) -> Tensor2 {
        let a = self.clone();
        Tensor2::new(self.dim, move |x, k| a.jet(x, k).into_iter().map(|p| p * c).collect())
    }

    pub fn scaled_by(&self, u: &ScalarField) -> Tensor2 {
        let (a, u) = (self.clone(), u.clone());
        Tensor2::new(self.dim, move |x, k| {
            let s = u.jet(x, k);
            a.jet(x, k).into_iter().map(|p| p * s.clone()).collect()
        })
    }

    pub fn transpose(&self) -> Tensor2 {
        let a = self.clone();
        let n = self.dim;
        Tensor2::new(n, move |x, k| {
            let v = a.jet(x, k);
            (0..n * n).map(|i| v[(i % n) * n + i / n].clone()).collect()
        })
    }
}

fn inverse_metric_jets(model: &ModelGeometry, x: &[f64], k: usize) -> Vec<Jet> {
    model
        .metric_diag(&Jet::coordinates(x, k))
        .iter()
        .map(Scalar::recip)
        .collect()
}

fn truncate_all(v: Vec<Jet>, k: usize) -> Vec<Jet> {
    v.into_iter().map(|j| j.truncated(k)).collect()
}

/// Covariant Hessian `∂²u − Γ·∂u`.
pub fn hessian(model: &ModelGeometry, u: &ScalarField) -> Tensor2 {
    covariant_derivative(model, &u.differential())
}

/// `(∇ω)_{ab} = ∂_a ω_b − Γ^c_{ab} ω_c`, so that `(∇_V ω)(W) = ∇ω(V, W)`.
pub fn covariant_derivative(model: &ModelGeometry, w: &OneForm) -> Tensor2 {
    let (model, w) = (model.clone(), w.clone());
    let n = model.dim();
    Tensor2::new(n, move |x, k| {
        let wj = w.jet(x, k + 1);
        let gam = model.christoffel_jets(x, k);
        let low: Vec<Jet> = wj.iter().map(|c| c.truncated(k)).collect();
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let mut s = wj[b].partial(a);
                for (c, lc) in low.iter().enumerate() {
                    s = s - &gam[c * n * n + a * n + b] * lc;
                }
                out.push(s);
            }
        }
        out
    })
}

/// Weighted codifferential `δ_f ω = −tr ∇ω + ⟨df, ω⟩`.
pub fn codifferential(model: &ModelGeometry, w: &OneForm) -> ScalarField {
    let nabla = covariant_derivative(model, w);
    let (model, w) = (model.clone(), w.clone());
    let n = model.dim();
    ScalarField::new(move |x, k| {
        let t = nabla.jet(x, k);
        let ginv = inverse_metric_jets(&model, x, k);
        let fj = model.weight_jet(x, k + 1);
        let wj = truncate_all(w.jet(x, k), k);
        let mut s = ginv[0].lift(0.0);
        for a in 0..n {
            s = s + &ginv[a] * &(&fj.partial(a) * &wj[a] - t[a * n + a].clone());
        }
        s
    })
}

fn divergence(model: &ModelGeometry, t: &Tensor2, weighted: bool) -> OneForm {
    let (model, t) = (model.clone(), t.clone());
    let n = model.dim();
    OneForm::new(move |x, k| {
        let tj = t.jet(x, k + 1);
        let low: Vec<Jet> = tj.iter().map(|c| c.truncated(k)).collect();
        let gam = model.christoffel_jets(x, k);
        let ginv = inverse_metric_jets(&model, x, k);
        let fj = weighted.then(|| model.weight_jet(x, k + 1));
        (0..n)
            .map(|b| {
                let mut s = ginv[0].lift(0.0);
                for a in 0..n {
                    // ∇_a T_{ab}
                    let mut d = tj[a * n + b].partial(a);
                    for c in 0..n {
                        d = d - &gam[c * n * n + a * n + a] * &low[c * n + b] - &gam[c * n * n + a * n + b] * &low[a * n + c];
                    }
                    if let Some(f) = &fj {
                        d = d - &f.partial(a) * &low[a * n + b];
                    }
                    s = s - &ginv[a] * &d;
                }
                s
            })
            .collect()
    })
}

/// `(∇*T)_b = −g^{ac} ∇_c T_{ab}`, the adjoint of `∇` under the Riemannian
/// volume.
pub fn adjoint_div(model: &ModelGeometry, t: &Tensor2) -> OneForm {
    divergence(model, t, false)
}

/// `∇*_f T = ∇*T + T(∇f, ·)`, the adjoint of `∇` under `m`.
pub fn weighted_adjoint_div(model: &ModelGeometry, t: &Tensor2) -> OneForm {
    divergence(model, t, true)
}

/// `(dω)_{ab} = ∂_a ω_b − ∂_b ω_a`.
pub fn exterior_derivative(model: &ModelGeometry, w: &OneForm) -> Tensor2 {
    let w = w.clone();
    let n = model.dim();
    Tensor2::new(n, move |x, k| {
        let wj = w.jet(x, k + 1);
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                out.push(wj[b].partial(a) - wj[a].partial(b));
            }
        }
        out
    })
}

/// Weighted codifferential of a 2-form, adjoint of `d` for the half pairing.
pub fn codifferential_2form(model: &ModelGeometry, eta: &Tensor2) -> OneForm {
    weighted_adjoint_div(model, eta)
}

/// `Δ_H ω = dδ_f ω + δ_f dω`.
pub fn hodge_laplacian_1form(model: &ModelGeometry, w: &OneForm) -> OneForm {
    let d_delta = codifferential(model, w).differential();
    let delta_d = codifferential_2form(model, &exterior_derivative(model, w));
    d_delta.add(&delta_d)
}

/// `⟨α, β⟩` at a point.
pub fn pair_1forms(model: &ModelGeometry, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let g = model.metric_diag(x);
    (0..g.len()).map(|i| a[i] * b[i] / g[i]).sum()
}

/// `⟨S, T⟩ = g^{ia}g^{jb}S_{ij}T_{ab}` at a point.
pub fn pair_tensors(model: &ModelGeometry, x: &[f64], s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let g = model.metric_diag(x);
    let n = g.len();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            acc += s[(a, b)] * t[(a, b)] / (g[a] * g[b]);
        }
    }
    acc
}

/// `|η|²` for a 2-form, half of the tensor norm.
pub fn two_form_norm2(model: &ModelGeometry, x: &[f64], eta: &DMatrix<f64>) -> f64 {
    0.5 * pair_tensors(model, x, eta, eta)
}

/// `∫ u dm` after checking that the grid belongs to the model.
pub fn integrate<F>(model: &ModelGeometry, grid: &QuadratureGrid, u: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    grid.check_model(model)?;
    Ok(grid.integrate(u))
}

/// Pointwise comparison of `Δ_f u` in divergence form with
/// `tr Hess_u − ⟨∇f, ∇u⟩`.
#[derive(Clone, Debug, Serialize)]
pub struct WittenReport {
    pub points: usize,
    pub max_residual: f64,
    /// `max |Δ_f u + λ u|` when an eigenvalue was supplied.
    pub max_eigen_residual: Option<f64>,
}

/// `e^f ρ^{-1} ∂_a(e^{-f} ρ g^{aa} ∂_a u)` with `ρ = √det g`.
fn divergence_form_laplacian(model: &ModelGeometry, u: &ScalarField, x: &[f64]) -> f64 {
    let n = model.dim();
    let coords = Jet::coordinates(x, 1);
    let g = model.metric_diag(&coords);
    let det = g.iter().skip(1).fold(g[0].clone(), |acc, v| acc * v.clone());
    let rho = det.sqrt() * (-model.weight_value(&coords)).exp();
    let uj = u.jet(x, 2);
    let mut s = 0.0;
    for a in 0..n {
        let coef = &rho / &g[a];
        s += coef.d1(a) * uj.d1(a) + coef.val() * uj.d2(a, a);
    }
    s / rho.val()
}

pub fn witten_identity_check(
    model: &ModelGeometry,
    u: &ScalarField,
    points: &[Vec<f64>],
    eigenvalue: Option<f64>,
) -> Result<WittenReport> {
    let hess = hessian(model, u);
    let mut max_residual = 0.0f64;
    let mut max_eigen = 0.0f64;
    for x in points {
        model.check_point(x)?;
        let lap = divergence_form_laplacian(model, u, x);
        let h = hess.value(x);
        let g = model.metric_diag(x.as_slice());
        let trace: f64 = (0..g.len()).map(|a| h[(a, a)] / g[a]).sum();
        let du = u.jet(x, 1).gradient();
        let rhs = trace - pair_1forms(model, x, &model.df(x), &du);
        max_residual = max_residual.max((lap - rhs).abs());
        if let Some(l) = eigenvalue {
            max_eigen = max_eigen.max((lap + l * u.value(x)).abs());
        }
    }
    Ok(WittenReport {
        points: points.len(),
        max_residual,
        max_eigen_residual: eigenvalue.map(|_| max_eigen),
    })
}

/// Coefficients of `w` in an orthonormal set of circle Hodge modes and the
/// relative `L²(m)` norm of what is left over.
#[derive(Clone, Debug, Serialize)]
pub struct HodgeExpansion {
    pub coefficients: Vec<f64>,
    pub relative_residual: f64,
}

pub fn hodge_expansion(basis: &Arc<SpectralBasis>, modes: &[HodgeMode], w: &OneForm, grid: &QuadratureGrid) -> Result<HodgeExpansion> {
    let model = basis.model();
    grid.check_model(model)?;
    let points: Vec<Vec<f64>> = grid.points().map(|p| p.to_vec()).collect();
    let target: Vec<f64> = points.iter().map(|x| w.value(x)[0]).collect();
    let forms: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| points.iter().map(|x| hodge_form_jet(basis, m, x[0], 0).val()).collect())
        .collect();
    let inner = |a: &[f64], b: &[f64]| {
        let vals: Vec<f64> = points
            .iter()
            .zip(a.iter().zip(b))
            .map(|(x, (p, q))| pair_1forms(model, x, &[*p], &[*q]))
            .collect();
        grid.integrate_samples(&vals)
    };
    let coefficients: Vec<f64> = forms.iter().map(|h| inner(h, &target)).collect();
    let mut rest = target.clone();
    for (c, h) in coefficients.iter().zip(&forms) {
        for (r, v) in rest.iter_mut().zip(h) {
            *r -= c * v;
        }
    }
    Ok(HodgeExpansion {
        relative_residual: (inner(&rest, &rest) / inner(&target, &target)).sqrt(),
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::WeightSpec;
    use crate::spectrum::hodge_basis_circle;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(a: f64) -> ModelGeometry {
        ModelGeometry::flat_circle(1.0, WeightSpec::cosine(a)).unwrap()
    }

    fn torus() -> ModelGeometry {
        ModelGeometry::build(crate::ModelSpec::FlatTorus2 {
            periods: [2.0 * PI, 2.0 * PI],
            weights: [WeightSpec::cosine(0.3), WeightSpec::cosine(-0.2)],
        })
        .unwrap()
    }

    fn flat_torus() -> ModelGeometry {
        ModelGeometry::build(crate::ModelSpec::FlatTorus2 {
            periods: [2.0 * PI, 2.0 * PI],
            weights: [WeightSpec::zero(), WeightSpec::zero()],
        })
        .unwrap()
    }

    fn probe_points(n: usize) -> Vec<Vec<f64>> {
        (0..7)
            .map(|i| {
                let s = i as f64;
                [0.4 + 0.3 * s, 1.1 + 0.25 * s, 0.7 + 0.5 * s][..n].to_vec()
            })
            .collect()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn hessian_examples() {
        let c = circle(0.0);
        let u = ScalarField::from_expr(|x| x[0].cos());
        let h = hessian(&c, &u);
        for x in probe_points(1) {
            assert_close(h.value(&x)[(0, 0)], -x[0].cos(), 1e-14);
        }
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let z = ScalarField::from_expr(|x| x[0].cos());
        let hz = hessian(&s2, &z);
        for x in probe_points(2) {
            let diff = hz.value(&x) + s2.metric(&x) * x[0].cos();
            assert!(diff.abs().max() < 1e-12);
        }
        let k = ScalarField::constant(2, 3.0);
        assert!(hessian(&s2, &k).value(&[1.0, 2.0]).abs().max() == 0.0);
    }

    #[test]
    fn hessian_is_symmetric_and_polarizes() {
        // Hess_u(∇v, ∇w) = ½(⟨∇⟨∇u,∇v⟩,∇w⟩ + ⟨∇⟨∇u,∇w⟩,∇v⟩ − ⟨∇u,∇⟨∇v,∇w⟩⟩)
        let s2 = ModelGeometry::round_sphere(2, 1.3).unwrap();
        let u = ScalarField::from_expr(|x| x[0].sin() * x[1].cos() + x[0].cos().powu(2));
        let v = ScalarField::from_expr(|x| x[0].cos());
        let w = ScalarField::from_expr(|x| x[0].sin() * x[1].sin());
        let model = s2.clone();
        let grad_pair = move |a: ScalarField, b: ScalarField| {
            let m = model.clone();
            ScalarField::new(move |x, k| {
                let (da, db) = (a.jet(x, k + 1), b.jet(x, k + 1));
                let g = m.metric_diag(&Jet::coordinates(x, k));
                let mut s = g[0].lift(0.0);
                for i in 0..g.len() {
                    s = s + &(&da.partial(i) * &db.partial(i)) / &g[i];
                }
                s
            })
        };
        let uv = grad_pair(u.clone(), v.clone());
        let uw = grad_pair(u.clone(), w.clone());
        let vw = grad_pair(v.clone(), w.clone());
        let lhs_pair = |a: &ScalarField, b: &ScalarField, x: &[f64]| {
            pair_1forms(&s2, x, &a.jet(x, 1).gradient(), &b.jet(x, 1).gradient())
        };
        let h = hessian(&s2, &u);
        for x in probe_points(2) {
            let hm = h.value(&x);
            assert!((&hm - hm.transpose()).abs().max() < 1e-14);
            let g = s2.metric_diag(x.as_slice());
            let gv: Vec<f64> = v.jet(&x, 1).gradient().iter().zip(&g).map(|(d, g)| d / g).collect();
            let gw: Vec<f64> = w.jet(&x, 1).gradient().iter().zip(&g).map(|(d, g)| d / g).collect();
            let lhs: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| hm[(a, b)] * gv[a] * gw[b]).sum();
            let rhs = 0.5 * (lhs_pair(&uv, &w, &x) + lhs_pair(&uw, &v, &x) - lhs_pair(&u, &vw, &x));
            assert_close(lhs, rhs, 1e-10);
        }
    }

    #[test]
    fn covariant_derivative_leibniz_and_sphere() {
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let u = ScalarField::from_expr(|x| x[0].sin() * x[1].cos());
        let v = ScalarField::from_expr(|x| x[0].cos() + x[1].sin() * x[0].sin());
        let lhs = covariant_derivative(&s2, &v.differential().scaled_by(&u));
        let rhs = Tensor2::outer(2, &u.differential(), &v.differential()).add(&hessian(&s2, &v).scaled_by(&u));
        for x in probe_points(2) {
            assert!((lhs.value(&x) - rhs.value(&x)).abs().max() < 1e-10);
        }
        let z = ScalarField::from_expr(|x| x[0].cos());
        let nz = covariant_derivative(&s2, &z.differential());
        for x in probe_points(2) {
            assert!((nz.value(&x) + s2.metric(&x) * x[0].cos()).abs().max() < 1e-12);
        }
        let c = circle(0.0);
        let w = OneForm::from_expr(|x| vec![x[0].sin() * x[0].cos()]);
        for x in probe_points(1) {
            assert_close(covariant_derivative(&c, &w).value(&x)[(0, 0)], (2.0 * x[0]).cos(), 1e-14);
        }
    }

    #[test]
    fn codifferential_examples() {
        let flat = circle(0.0);
        let w = OneForm::from_expr(|x| vec![-x[0].sin()]);
        let weighted = circle(0.5);
        let harmonic = OneForm::from_expr(|x| vec![(x[0].cos() * 0.5).exp()]);
        let h = OneForm::from_expr(|x| vec![x[0].sin() * 2.0 + (&x[0] * 3.0).cos()]);
        for x in probe_points(1) {
            let t = x[0];
            assert_close(codifferential(&flat, &w).value(&x), t.cos(), 1e-14);
            assert!(codifferential(&weighted, &harmonic).value(&x).abs() < 1e-13);
            // δ(h dθ) = −h′ + f′h
            let hv = 2.0 * t.sin() + (3.0 * t).cos();
            let hp = 2.0 * t.cos() - 3.0 * (3.0 * t).sin();
            assert_close(codifferential(&weighted, &h).value(&x), -hp - 0.5 * t.sin() * hv, 1e-13);
            // trace relation for a constant weight
            assert_close(codifferential(&flat, &h).value(&x), -covariant_derivative(&flat, &h).value(&x)[(0, 0)], 1e-14);
        }
    }

    #[test]
    fn adjoint_div_examples() {
        let flat = circle(0.0);
        let u = ScalarField::from_expr(|x| x[0].sin() + (&x[0] * 2.0).cos() * 0.3);
        let du = u.differential();
        // ∇*(du⊗du) = −Δu du − ½ d|∇u|²
        let lhs = adjoint_div(&flat, &Tensor2::outer(1, &du, &du));
        let ug = adjoint_div(&flat, &Tensor2::metric_multiple(&flat, &u));
        let t = Tensor2::outer(1, &du, &du);
        for x in probe_points(1) {
            let j = u.jet(&x, 3);
            let (d1, d2) = (j.d1(0), j.d2(0, 0));
            assert_close(lhs.value(&x)[0], -d2 * d1 - d1 * d2, 1e-13);
            assert_close(ug.value(&x)[0], -d1, 1e-14);
            assert_close(weighted_adjoint_div(&flat, &t).value(&x)[0], adjoint_div(&flat, &t).value(&x)[0], 0.0);
        }
        // higher-dimensional version of the du⊗du identity on S²
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let v = ScalarField::from_expr(|x| x[0].sin() * x[1].cos() + x[0].cos().powu(2));
        let dv = v.differential();
        let div = adjoint_div(&s2, &Tensor2::outer(2, &dv, &dv));
        let norm = {
            let m = s2.clone();
            let v = v.clone();
            ScalarField::new(move |x, k| {
                let d = v.jet(x, k + 1);
                let g = m.metric_diag(&Jet::coordinates(x, k));
                (0..2).fold(g[0].lift(0.0), |s, i| s + &(&d.partial(i) * &d.partial(i)) / &g[i])
            })
        };
        for x in probe_points(2) {
            let lap = s2.laplacian_of_jet(&v.jet(&x, 2), &x);
            let dn = norm.jet(&x, 1).gradient();
            let dvx = dv.value(&x);
            let got = div.value(&x);
            for b in 0..2 {
                assert_close(got[b], -lap * dvx[b] - 0.5 * dn[b], 1e-11);
            }
        }
    }

    #[test]
    fn hodge_laplacian_examples() {
        let flat = circle(0.0);
        let w = OneForm::from_expr(|x| vec![x[0].sin()]);
        let weighted = circle(0.5);
        let harmonic = OneForm::from_expr(|x| vec![(x[0].cos() * 0.5).exp()]);
        let ft = flat_torus();
        let tw = OneForm::from_expr(|x| vec![x[0].lift(0.0), (&x[0] * 3.0).cos()]);
        for x in probe_points(1) {
            assert_close(hodge_laplacian_1form(&flat, &w).value(&x)[0], x[0].sin(), 1e-13);
            assert!(hodge_laplacian_1form(&weighted, &harmonic).value(&x)[0].abs() < 1e-12);
        }
        for x in probe_points(2) {
            let got = hodge_laplacian_1form(&ft, &tw).value(&x);
            assert!(got[0].abs() < 1e-13);
            assert_close(got[1], 9.0 * (3.0 * x[0]).cos(), 1e-12);
        }
    }

    #[test]
    fn hodge_laplacian_commutes_with_d() {
        // Δ_H du = −d Δ_f u
        for model in [circle(0.5), torus()] {
            let n = model.dim();
            let u = ScalarField::from_expr(|x| {
                let mut s = x[0].sin() * 0.7 + (&x[0] * 2.0).cos();
                if x.len() > 1 {
                    s = s + x[0].cos() * x[1].sin();
                }
                s
            });
            let m = model.clone();
            let uu = u.clone();
            let lap = ScalarField::new(move |x, k| {
                let grad_f = ScalarField::weight(&m).differential();
                let du = uu.differential();
                let h = hessian(&m, &uu).jet(x, k);
                let g = m.metric_diag(&Jet::coordinates(x, k));
                let (df, dv) = (grad_f.jet(x, k), du.jet(x, k));
                (0..n).fold(g[0].lift(0.0), |s, a| s + &(&h[a * n + a] - &(&df[a] * &dv[a])) / &g[a])
            });
            let lhs = hodge_laplacian_1form(&model, &u.differential());
            let rhs = lap.differential().scale(-1.0);
            for x in probe_points(n) {
                let (a, b) = (lhs.value(&x), rhs.value(&x));
                for i in 0..n {
                    assert_close(a[i], b[i], 1e-10);
                }
            }
        }
    }

    #[test]
    fn circle_hodge_modes_are_eigenforms() {
        let model = circle(0.5);
        let basis = Arc::new(SpectralBasis::circle(&model, 21, 64).unwrap());
        for mode in hodge_basis_circle(&basis, 9).unwrap() {
            let w = OneForm::hodge_mode(basis.clone(), mode);
            let hw = hodge_laplacian_1form(&model, &w);
            for x in probe_points(1) {
                assert!((hw.value(&x)[0] - mode.mu * w.value(&x)[0]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exterior_derivative_matches_antisymmetrized_connection() {
        let t = torus();
        let w = OneForm::from_expr(|x| vec![x[1].sin() * x[0].cos(), (&x[0] * 2.0).sin() + x[1].cos()]);
        let d = exterior_derivative(&t, &w);
        let nw = covariant_derivative(&t, &w);
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let ds = exterior_derivative(&s2, &w);
        let ns = covariant_derivative(&s2, &w);
        for x in probe_points(2) {
            let a = nw.value(&x);
            assert!((d.value(&x) - (&a - a.transpose())).abs().max() < 1e-10);
            let b = ns.value(&x);
            assert!((ds.value(&x) - (&b - b.transpose())).abs().max() < 1e-10);
            // |dω|² ≤ 2|∇ω|²
            assert!(two_form_norm2(&t, &x, &d.value(&x)) <= 2.0 * pair_tensors(&t, &x, &a, &a) + 1e-12);
        }
    }

    #[test]
    fn bochner_inequality_on_weighted_circle() {
        let model = circle(0.5);
        let grid = QuadratureGrid::for_model(&model, 256).unwrap();
        let k_minus = (-model.bakry_emery_lower_bound()).max(0.0);
        for w in [
            OneForm::from_expr(|x| vec![x[0].sin() + 0.5]),
            OneForm::from_expr(|x| vec![(&x[0] * 3.0).cos() - x[0].sin() * 0.2]),
            OneForm::from_expr(|x| vec![(x[0].cos() * 0.5).exp()]),
        ] {
            let nw = covariant_derivative(&model, &w);
            let dw = exterior_derivative(&model, &w);
            let delta = codifferential(&model, &w);
            let grad2 = integrate(&model, &grid, |x| {
                let a = nw.value(x);
                pair_tensors(&model, x, &a, &a)
            })
            .unwrap();
            let rhs = integrate(&model, &grid, |x| {
                two_form_norm2(&model, x, &dw.value(x)) + delta.value(x).powi(2) + k_minus * w.value(x)[0].powi(2)
            })
            .unwrap();
            assert!(grad2 <= rhs + 1e-10, "{grad2} > {rhs}");
        }
    }

    #[test]
    fn integration_examples() {
        let flat = circle(0.0);
        let grid = QuadratureGrid::for_model(&flat, 64).unwrap();
        assert_close(integrate(&flat, &grid, |_| 1.0).unwrap(), 2.0 * PI, 1e-13);
        assert!(integrate(&flat, &grid, |x| x[0].cos()).unwrap().abs() < 1e-14);
        let weighted = circle(0.5);
        let wgrid = QuadratureGrid::for_model(&weighted, 64).unwrap();
        // brute-force Bessel integral (1/π)∫_0^π e^{0.5 cos s} ds by midpoint rule
        let steps = 200_000;
        let i0: f64 = (0..steps)
            .map(|i| (0.5 * (PI * (i as f64 + 0.5) / steps as f64).cos()).exp())
            .sum::<f64>()
            / steps as f64;
        let got = integrate(&weighted, &wgrid, |_| 1.0).unwrap();
        assert_close(got, 2.0 * PI * i0, 1e-10);
        assert_close(got / (2.0 * PI), 1.063483, 1e-6);
        assert!(integrate(&weighted, &grid, |_| 1.0).is_err());
    }

    #[test]
    fn witten_identity_examples() {
        let flat = circle(0.0);
        let u = ScalarField::from_expr(|x| (&x[0] * 2.0).cos());
        let r = witten_identity_check(&flat, &u, &probe_points(1), Some(4.0)).unwrap();
        assert!(r.max_residual < 1e-12 && r.max_eigen_residual.unwrap() < 1e-12);
        let weighted = circle(0.5);
        let basis = Arc::new(SpectralBasis::circle(&weighted, 5, 64).unwrap());
        let phi = ScalarField::mode(basis.clone(), 1);
        let r = witten_identity_check(&weighted, &phi, &probe_points(1), Some(basis.lambdas()[1])).unwrap();
        assert!(r.max_residual < 1e-10 && r.max_eigen_residual.unwrap() < 1e-8, "{r:?}");
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let z = ScalarField::from_expr(|x| x[0].cos());
        let r = witten_identity_check(&s2, &z, &probe_points(2), Some(2.0)).unwrap();
        assert!(r.max_residual < 1e-12 && r.max_eigen_residual.unwrap() < 1e-12);
    }

    #[test]
    fn hodge_expansion_reconstructs_trig_forms() {
        let model = circle(0.5);
        let basis = Arc::new(SpectralBasis::circle(&model, 41, 128).unwrap());
        let modes = hodge_basis_circle(&basis, 41).unwrap();
        let grid = QuadratureGrid::for_model(&model, 512).unwrap();
        let w = OneForm::from_expr(|x| vec![x[0].sin() * 0.4 + (&x[0] * 3.0).cos() - 0.2]);
        let e = hodge_expansion(&basis, &modes, &w, &grid).unwrap();
        assert!(e.relative_residual < 1e-6, "{e:?}");
        let few = hodge_expansion(&basis, &modes[..3], &w, &grid).unwrap();
        assert!(few.relative_residual > 0.1);
    }

    fn trig(c: [f64; 4]) -> ScalarField {
        ScalarField::from_expr(move |x| {
            let s = x[0].sin() * c[0] + (&x[0] * 2.0).cos() * c[1] + c[3];
            if x.len() > 1 {
                s + (&x[1] + &x[0]).sin() * c[2]
            } else {
                s + (&x[0] * 3.0).sin() * c[2]
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn adjointness_triple(
            a in proptest::array::uniform4(-1.0f64..1.0),
            b in proptest::array::uniform4(-1.0f64..1.0),
            c in proptest::array::uniform4(-1.0f64..1.0),
            on_torus in any::<bool>(),
        ) {
            let model = if on_torus { torus() } else { circle(0.5) };
            let grid = QuadratureGrid::for_model(&model, if on_torus { 48 } else { 128 }).unwrap();
            let n = model.dim();
            let u = trig(a);
            let w = trig(b).differential().scaled_by(&trig(c));
            // δ against d
            let delta = codifferential(&model, &w);
            let du = u.differential();
            let lhs = grid.integrate(|x| pair_1forms(&model, x, &w.value(x), &du.value(x)));
            let rhs = grid.integrate(|x| delta.value(x) * u.value(x));
            prop_assert!((lhs - rhs).abs() < 1e-8);
            // ∇*_f against ∇ under m
            let t = Tensor2::outer(n, &trig(c).differential(), &du).add(&Tensor2::metric_multiple(&model, &trig(b)));
            let nw = covariant_derivative(&model, &w);
            let div = weighted_adjoint_div(&model, &t);
            let lhs = grid.integrate(|x| pair_tensors(&model, x, &t.value(x), &nw.value(x)));
            let rhs = grid.integrate(|x| pair_1forms(&model, x, &div.value(x), &w.value(x)));
            prop_assert!((lhs - rhs).abs() < 1e-8);
            // ∇* against ∇ under the Riemannian volume: weight the grid by e^{f}
            let plain = adjoint_div(&model, &t);
            let ef = |x: &[f64]| model.f(x).exp();
            let lhs = grid.integrate(|x| ef(x) * pair_tensors(&model, x, &t.value(x), &nw.value(x)));
            let rhs = grid.integrate(|x| ef(x) * pair_1forms(&model, x, &plain.value(x), &w.value(x)));
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }
}
