//! Model weighted manifolds described in a single chart.
//!
//! Charts:
//!
//! * flat circle of radius `R`: angle `θ ∈ [0, 2π)`, metric `R² dθ²`;
//! * flat torus with periods `L_1, L_2`: angles `(θ_1, θ_2)`, metric
//!   `R_1² dθ_1² + R_2² dθ_2²` with `R_i = L_i / 2π`;
//! * round sphere `S^n(r)`, `n ∈ {2, 3}`: nested polar angles with the zonal
//!   axis along the first embedding coordinate;
//! * spherical suspension over `S²(r)`: `(t, θ, φ)` with metric
//!   `dt² + sin²t · r²(dθ² + sin²θ dφ²)`, `t ∈ (δ, π − δ)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::jet::{Jet, Scalar};
use crate::quadrature::{gauss_legendre_on, pairwise_sum, periodic_trapezoid};
use crate::{fit, Error, Result};

/// One term `a cos(kθ) + b sin(kθ)` of a trigonometric weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub frequency: i64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Weight `f` as a trigonometric polynomial in a periodic angle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightSpec {
    pub terms: Vec<FourierTerm>,
}

impl WeightSpec {
    pub fn zero() -> WeightSpec {
        WeightSpec::default()
    }

    pub fn constant(c: f64) -> WeightSpec {
        WeightSpec {
            terms: vec![FourierTerm { frequency: 0, cos: c, sin: 0.0 }],
        }
    }

    /// `f(θ) = a cos θ`.
    pub fn cosine(a: f64) -> WeightSpec {
        WeightSpec {
            terms: vec![FourierTerm { frequency: 1, cos: a, sin: 0.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if t.frequency < 0 {
                return Err(Error::InvalidParameter(format!(
                    "weight frequency {} is negative; use nonnegative frequencies with sine/cosine amplitudes",
                    t.frequency
                )));
            }
            if !t.cos.is_finite() || !t.sin.is_finite() {
                return Err(Error::InvalidParameter("weight amplitudes must be finite".into()));
            }
        }
        Ok(())
    }

    /// True when every nonzero-frequency amplitude vanishes.
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.frequency == 0 || (t.cos == 0.0 && t.sin == 0.0))
    }

    /// True when `f(-θ) = f(θ)`.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| t.frequency == 0 || t.sin == 0.0)
    }

    pub fn max_frequency(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| t.cos != 0.0 || t.sin != 0.0)
            .map(|t| t.frequency as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.terms.iter().filter(|t| t.frequency == 0).map(|t| t.cos).sum()
    }

    pub fn eval<S: Scalar>(&self, theta: &S) -> S {
        let mut acc = theta.lift(0.0);
        for t in &self.terms {
            if t.frequency == 0 {
                acc = acc + t.cos;
                continue;
            }
            let arg = theta.clone() * t.frequency as f64;
            if t.cos != 0.0 {
                acc = acc + arg.cos() * t.cos;
            }
            if t.sin != 0.0 {
                acc = acc + arg.sin() * t.sin;
            }
        }
        acc
    }

    /// Exact `m`-th derivative at `θ`.
    pub fn derivative(&self, theta: f64, m: u32) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k = t.frequency as f64;
                if t.frequency == 0 {
                    return if m == 0 { t.cos } else { 0.0 };
                }
                let phase = m as f64 * 0.5 * PI;
                k.powi(m as i32)
                    * (t.cos * (k * theta + phase).cos() + t.sin * (k * theta + phase).sin())
            })
            .sum()
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.derivative(theta, 0)
    }

    /// Rigorous lower bound for `f''` from the amplitudes.
    pub fn second_derivative_lower_bound(&self) -> f64 {
        -self
            .terms
            .iter()
            .map(|t| (t.frequency as f64).powi(2) * t.cos.hypot(t.sin))
            .sum::<f64>()
    }
}

fn default_pole_cutoff() -> f64 {
    1e-3
}

/// Serializable description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    FlatCircle {
        radius: f64,
        #[serde(default)]
        weight: WeightSpec,
    },
    FlatTorus2 {
        periods: [f64; 2],
        #[serde(default)]
        weights: [WeightSpec; 2],
    },
    RoundSphere {
        dim: usize,
        radius: f64,
    },
    SphericalSuspension {
        link_radius: f64,
        #[serde(default = "default_pole_cutoff")]
        pole_cutoff: f64,
    },
}

/// Coordinate box of the chart.
#[derive(Clone, Debug, Serialize)]
pub struct ChartDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
}

/// Validated model with all geometric evaluators.
#[derive(Clone, Debug)]
pub struct ModelGeometry {
    spec: ModelSpec,
    dim: usize,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Volume of the Euclidean unit ball in dimension `n ≤ 3`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unit ball volume only tabulated for n <= 3"),
    }
}

/// Area of the unit sphere `S^{n-1}` bounding the unit ball in dimension `n`.
fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Spherical-cap series: `σ²/w` as an analytic function of `w = 1 − cos σ`.
fn angle_sq_over_w<S: Scalar>(w: &S) -> S {
    // asin(x)^2 = Σ (2x)^{2k} / (2 k² C(2k,k)) with x² = w/2
    const TERMS: usize = 80;
    let mut coeffs = [0.0f64; TERMS];
    let mut binom = 1.0f64;
    for (k, c) in coeffs.iter_mut().enumerate() {
        let k1 = (k + 1) as f64;
        binom *= (2.0 * k1 - 1.0) * (2.0 * k1) / (k1 * k1);
        *c = 2f64.powi(k as i32 + 2) / (k1 * k1 * binom);
    }
    let mut acc = w.lift(coeffs[TERMS - 1]);
    for c in coeffs[..TERMS - 1].iter().rev() {
        acc = acc * w.clone() + *c;
    }
    acc
}

impl ModelGeometry {
    pub fn build(spec: ModelSpec) -> Result<ModelGeometry> {
        let dim = match &spec {
            ModelSpec::FlatCircle { radius, weight } => {
                positive("circle radius", *radius)?;
                weight.validate()?;
                1
            }
            ModelSpec::FlatTorus2 { periods, weights } => {
                positive("torus period", periods[0])?;
                positive("torus period", periods[1])?;
                weights[0].validate()?;
                weights[1].validate()?;
                2
            }
            ModelSpec::RoundSphere { dim, radius } => {
                positive("sphere radius", *radius)?;
                if !(2..=3).contains(dim) {
                    return Err(Error::InvalidParameter(format!(
                        "round sphere dimension must be 2 or 3, got {dim}"
                    )));
                }
                *dim
            }
            ModelSpec::SphericalSuspension { link_radius, pole_cutoff } => {
                positive("suspension link radius", *link_radius)?;
                if *link_radius >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "suspension link radius must lie in (0, 1), got {link_radius}"
                    )));
                }
                if !(*pole_cutoff > 0.0 && *pole_cutoff < 0.5 * PI) {
                    return Err(Error::InvalidParameter(format!(
                        "pole cutoff must lie in (0, π/2), got {pole_cutoff}"
                    )));
                }
                3
            }
        };
        Ok(ModelGeometry { spec, dim })
    }

    pub fn flat_circle(radius: f64, weight: WeightSpec) -> Result<ModelGeometry> {
        Self::build(ModelSpec::FlatCircle { radius, weight })
    }

    pub fn round_sphere(dim: usize, radius: f64) -> Result<ModelGeometry> {
        Self::build(ModelSpec::RoundSphere { dim, radius })
    }

    pub fn suspension(link_radius: f64) -> Result<ModelGeometry> {
        Self::build(ModelSpec::SphericalSuspension {
            link_radius,
            pole_cutoff: default_pole_cutoff(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &'static str {
        match self.spec {
            ModelSpec::FlatCircle { .. } => "flat_circle",
            ModelSpec::FlatTorus2 { .. } => "flat_torus2",
            ModelSpec::RoundSphere { .. } => "round_sphere",
            ModelSpec::SphericalSuspension { .. } => "spherical_suspension",
        }
    }

    /// Stable identity string used to tie grids and bases to a model.
    pub fn key(&self) -> String {
        format!("{:?}", self.spec)
    }

    pub fn chart_domain(&self) -> ChartDomain {
        match &self.spec {
            ModelSpec::FlatCircle { .. } => ChartDomain {
                lower: vec![0.0],
                upper: vec![2.0 * PI],
                periodic: vec![true],
            },
            ModelSpec::FlatTorus2 { .. } => ChartDomain {
                lower: vec![0.0; 2],
                upper: vec![2.0 * PI; 2],
                periodic: vec![true; 2],
            },
            ModelSpec::RoundSphere { dim, .. } => {
                let mut upper = vec![PI; *dim];
                upper[dim - 1] = 2.0 * PI;
                let mut periodic = vec![false; *dim];
                periodic[dim - 1] = true;
                ChartDomain { lower: vec![0.0; *dim], upper, periodic }
            }
            ModelSpec::SphericalSuspension { pole_cutoff, .. } => ChartDomain {
                lower: vec![*pole_cutoff, 0.0, 0.0],
                upper: vec![PI - pole_cutoff, PI, 2.0 * PI],
                periodic: vec![false, false, true],
            },
        }
    }

    /// True for models whose reference measure is a constant multiple of the
    /// Riemannian volume.
    pub fn has_constant_weight(&self) -> bool {
        match &self.spec {
            ModelSpec::FlatCircle { weight, .. } => weight.is_constant(),
            ModelSpec::FlatTorus2 { weights, .. } => weights.iter().all(|w| w.is_constant()),
            _ => true,
        }
    }

    /// Diagonal metric coefficients `g_ii(x)`.
    pub fn metric_diag<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match &self.spec {
            ModelSpec::FlatCircle { radius, .. } => vec![x[0].lift(radius * radius)],
            ModelSpec::FlatTorus2 { periods, .. } => periods
                .iter()
                .map(|l| x[0].lift((l / (2.0 * PI)).powi(2)))
                .collect(),
            ModelSpec::RoundSphere { dim, radius } => {
                let mut out = Vec::with_capacity(*dim);
                let mut acc = x[0].lift(radius * radius);
                for i in 0..*dim {
                    out.push(acc.clone());
                    if i + 1 < *dim {
                        let s = x[i].sin();
                        acc = acc * s.clone() * s;
                    }
                }
                out
            }
            ModelSpec::SphericalSuspension { link_radius, .. } => {
                let st = x[0].sin();
                let a = st.clone() * st * (link_radius * link_radius);
                let sth = x[1].sin();
                vec![x[0].lift(1.0), a.clone(), a * sth.clone() * sth]
            }
        }
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.metric_diag(x)))
    }

    pub fn inverse_metric(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            self.metric_diag(x).iter().map(|g| 1.0 / g).collect(),
        ))
    }

    /// Christoffel symbols as jets of the requested order, flattened as
    /// `Γ[k·n² + i·n + j] = Γ^k_{ij}`.
    pub fn christoffel_jets(&self, x: &[f64], order: usize) -> Vec<Jet> {
        let n = self.dim;
        let coords = Jet::coordinates(x, order + 1);
        let g = self.metric_diag(&coords);
        let dg: Vec<Vec<Jet>> = g.iter().map(|gkk| (0..n).map(|i| gkk.partial(i)).collect()).collect();
        let ginv: Vec<Jet> = g.iter().map(|gkk| gkk.truncated(order).recip()).collect();
        let zero = ginv[0].lift(0.0);
        let mut out = vec![zero.clone(); n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    // ½ g^{kk}(δ_jk ∂_i g_kk + δ_ik ∂_j g_kk − δ_ij ∂_k g_ii)
                    let mut s = zero.clone();
                    if j == k {
                        s = s + dg[k][i].clone();
                    }
                    if i == k {
                        s = s + dg[k][j].clone();
                    }
                    if i == j {
                        s = s - dg[i][k].clone();
                    }
                    out[k * n * n + i * n + j] = s * ginv[k].clone() * 0.5;
                }
            }
        }
        out
    }

    /// `Γ^k_{ij}` at a point, flattened as in [`Self::christoffel_jets`].
    pub fn christoffel(&self, x: &[f64]) -> Vec<f64> {
        self.christoffel_jets(x, 0).iter().map(|j| j.val()).collect()
    }

    /// Weight `f` on any scalar type.
    pub fn weight_value<S: Scalar>(&self, x: &[S]) -> S {
        match &self.spec {
            ModelSpec::FlatCircle { weight, .. } => weight.eval(&x[0]),
            ModelSpec::FlatTorus2 { weights, .. } => weights[0].eval(&x[0]) + weights[1].eval(&x[1]),
            _ => x[0].lift(0.0),
        }
    }

    pub fn weight_jet(&self, x: &[f64], order: usize) -> Jet {
        self.weight_value(&Jet::coordinates(x, order))
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        self.weight_value(x)
    }

    /// Chart components of `df`.
    pub fn df(&self, x: &[f64]) -> Vec<f64> {
        self.weight_jet(x, 1).gradient()
    }

    /// `|∇f|²`.
    pub fn grad_f_norm2(&self, x: &[f64]) -> f64 {
        let g = self.metric_diag(x);
        self.df(x).iter().zip(&g).map(|(d, g)| d * d / g).sum()
    }

    /// Riemannian Laplacian of a scalar jet (order ≥ 2), one degree lower...
    /// evaluated at the base point only.
    pub fn laplacian_of_jet(&self, u: &Jet, x: &[f64]) -> f64 {
        let n = self.dim;
        let g = self.metric_diag(x);
        let gam = self.christoffel(x);
        let mut s = 0.0;
        for i in 0..n {
            let mut hess_ii = u.d2(i, i);
            for k in 0..n {
                hess_ii -= gam[k * n * n + i * n + i] * u.d1(k);
            }
            s += hess_ii / g[i];
        }
        s
    }

    /// Riemannian `Δf`.
    pub fn lap_f(&self, x: &[f64]) -> f64 {
        self.laplacian_of_jet(&self.weight_jet(x, 2), x)
    }

    /// Closed-form Ricci tensor, row-major `n × n`.
    pub fn ricci_generic<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let n = self.dim;
        let g = self.metric_diag(x);
        let zero = x[0].lift(0.0);
        let mut out = vec![zero.clone(); n * n];
        match &self.spec {
            ModelSpec::FlatCircle { .. } | ModelSpec::FlatTorus2 { .. } => {}
            ModelSpec::RoundSphere { dim, radius } => {
                let k = (*dim as f64 - 1.0) / (radius * radius);
                for i in 0..n {
                    out[i * n + i] = g[i].clone() * k;
                }
            }
            ModelSpec::SphericalSuspension { link_radius, .. } => {
                let c = link_radius.powi(-2) - 1.0;
                let st = x[0].sin();
                let tangential = (st.clone() * st).recip() * c + 2.0;
                out[0] = zero.lift(2.0);
                for i in 1..3 {
                    out[i * n + i] = g[i].clone() * tangential.clone();
                }
            }
        }
        out
    }

    pub fn scal_generic<S: Scalar>(&self, x: &[S]) -> S {
        match &self.spec {
            ModelSpec::FlatCircle { .. } | ModelSpec::FlatTorus2 { .. } => x[0].lift(0.0),
            ModelSpec::RoundSphere { dim, radius } => {
                x[0].lift((dim * (dim - 1)) as f64 / (radius * radius))
            }
            ModelSpec::SphericalSuspension { link_radius, .. } => {
                let c = link_radius.powi(-2) - 1.0;
                let st = x[0].sin();
                (st.clone() * st).recip() * (2.0 * c) + 6.0
            }
        }
    }

    pub fn ricci(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.ricci_generic(x))
    }

    pub fn scal(&self, x: &[f64]) -> f64 {
        self.scal_generic(x)
    }

    /// Ricci tensor recomputed from the metric alone (Christoffel jets and
    /// the Riemann tensor), independent of the closed forms.
    pub fn ricci_from_metric(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let gam_j = self.christoffel_jets(x, 1);
        let gam: Vec<f64> = gam_j.iter().map(|j| j.val()).collect();
        let idx = |k: usize, i: usize, j: usize| k * n * n + i * n + j;
        // Ric_{ik} = ∂_l Γ^l_{ik} − ∂_k Γ^l_{il} + Γ^l_{lm}Γ^m_{ik} − Γ^l_{km}Γ^m_{il}
        DMatrix::from_fn(n, n, |i, k| {
            let mut s = 0.0;
            for l in 0..n {
                s += gam_j[idx(l, i, k)].d1(l) - gam_j[idx(l, i, l)].d1(k);
                for m in 0..n {
                    s += gam[idx(l, l, m)] * gam[idx(m, i, k)] - gam[idx(l, k, m)] * gam[idx(m, i, l)];
                }
            }
            s
        })
    }

    pub fn scal_from_metric(&self, x: &[f64]) -> f64 {
        let ric = self.ricci_from_metric(x);
        let g = self.metric_diag(x);
        (0..self.dim).map(|i| ric[(i, i)] / g[i]).sum()
    }

    /// `√det g`.
    pub fn riemannian_density(&self, x: &[f64]) -> f64 {
        self.metric_diag(x).iter().product::<f64>().sqrt()
    }

    /// Chart density of `m = e^{-f} dvol_g`.
    pub fn measure_density(&self, x: &[f64]) -> f64 {
        (-self.f(x)).exp() * self.riemannian_density(x)
    }

    /// `dH^n / dm = e^f`.
    pub fn hausdorff_ratio(&self, x: &[f64]) -> f64 {
        self.f(x).exp()
    }

    /// Excluded chart points: the two cone tips of the suspension.
    pub fn singular_set(&self) -> Vec<Vec<f64>> {
        match self.spec {
            ModelSpec::SphericalSuspension { .. } => vec![vec![0.0, 0.0, 0.0], vec![PI, 0.0, 0.0]],
            _ => Vec::new(),
        }
    }

    /// Checks that `x` is an interior chart point away from the singular set.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "expected {} finite chart coordinates, got {x:?}",
                self.dim
            )));
        }
        if let ModelSpec::SphericalSuspension { pole_cutoff, .. } = self.spec {
            if x[0] <= pole_cutoff || x[0] >= PI - pole_cutoff {
                return Err(Error::OutOfRange(format!(
                    "t = {} is within {pole_cutoff} of a cone tip",
                    x[0]
                )));
            }
        }
        Ok(())
    }

    /// Largest radius for which geodesic balls around `x` are embedded.
    pub fn injectivity_bound(&self, x: &[f64]) -> f64 {
        match &self.spec {
            ModelSpec::FlatCircle { radius, .. } => PI * radius,
            ModelSpec::FlatTorus2 { periods, .. } => 0.5 * periods[0].min(periods[1]),
            ModelSpec::RoundSphere { radius, .. } => PI * radius,
            ModelSpec::SphericalSuspension { .. } => x[0].min(PI - x[0]),
        }
    }

    /// Lower bound `K` with `Ric + Hess f ≥ K g`.
    pub fn bakry_emery_lower_bound(&self) -> f64 {
        match &self.spec {
            ModelSpec::FlatCircle { radius, weight } => {
                weight.second_derivative_lower_bound() / (radius * radius)
            }
            ModelSpec::FlatTorus2 { periods, weights } => (0..2)
                .map(|i| weights[i].second_derivative_lower_bound() / (periods[i] / (2.0 * PI)).powi(2))
                .fold(f64::INFINITY, f64::min),
            ModelSpec::RoundSphere { dim, radius } => (*dim as f64 - 1.0) / (radius * radius),
            ModelSpec::SphericalSuspension { .. } => 2.0,
        }
    }

    fn sphere_radius(&self) -> Option<f64> {
        match self.spec {
            ModelSpec::RoundSphere { radius, .. } => Some(radius),
            _ => None,
        }
    }

    /// Embedding of a sphere chart point into `R^{n+1}`.
    pub fn sphere_embedding<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let r = self.sphere_radius().expect("sphere embedding requested on a non-sphere model");
        let n = self.dim;
        let mut out = Vec::with_capacity(n + 1);
        let mut prefix = x[0].lift(r);
        for xi in x.iter().take(n) {
            out.push(prefix.clone() * xi.cos());
            prefix = prefix * xi.sin();
        }
        out.push(prefix);
        // last pair uses (cos φ, sin φ) of the azimuth
        out
    }

    fn sphere_chart(&self, e: &[f64]) -> Vec<f64> {
        let r = self.sphere_radius().expect("sphere chart requested on a non-sphere model");
        let n = self.dim;
        let mut x = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let tail: f64 = e[i + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            x.push(tail.atan2(e[i]));
        }
        let mut phi = e[n].atan2(e[n - 1]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        x.push(phi);
        let _ = r;
        x
    }

    /// Geodesic distance.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match &self.spec {
            ModelSpec::FlatCircle { radius, .. } => Ok(radius * wrap_angle(y[0] - x[0]).abs()),
            ModelSpec::FlatTorus2 { periods, .. } => Ok((0..2)
                .map(|i| (periods[i] / (2.0 * PI) * wrap_angle(y[i] - x[i])).powi(2))
                .sum::<f64>()
                .sqrt()),
            ModelSpec::RoundSphere { radius, .. } => {
                let ex = self.sphere_embedding(x);
                let ey = self.sphere_embedding(y);
                let chord = ex.iter().zip(&ey).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                Ok(2.0 * radius * (chord / (2.0 * radius)).min(1.0).asin())
            }
            ModelSpec::SphericalSuspension { .. } => Err(Error::Unsupported {
                what: "geodesic distance",
                model: "spherical_suspension",
            }),
        }
    }

    /// `exp_x(s v)` for a chart vector `v` of unit length.
    pub fn geodesic(&self, x: &[f64], v: &[f64], s: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let g = self.metric_diag(x);
        let norm: f64 = v.iter().zip(&g).map(|(v, g)| v * v * g).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "geodesic direction must have unit length, got |v| = {norm}"
            )));
        }
        match &self.spec {
            ModelSpec::FlatCircle { .. } | ModelSpec::FlatTorus2 { .. } => {
                Ok(x.iter().zip(v).map(|(x, v)| x + s * v).collect())
            }
            ModelSpec::RoundSphere { radius, .. } => {
                let jets = Jet::coordinates(x, 1);
                let emb = self.sphere_embedding(&jets);
                let p: Vec<f64> = emb.iter().map(|e| e.val()).collect();
                let u: Vec<f64> = emb
                    .iter()
                    .map(|e| (0..self.dim).map(|i| e.d1(i) * v[i]).sum())
                    .collect();
                let a = s / radius;
                let q: Vec<f64> = p
                    .iter()
                    .zip(&u)
                    .map(|(p, u)| p * a.cos() + radius * u * a.sin())
                    .collect();
                Ok(self.sphere_chart(&q))
            }
            ModelSpec::SphericalSuspension { .. } => Err(Error::Unsupported {
                what: "explicit geodesics",
                model: "spherical_suspension",
            }),
        }
    }

    /// Point at fraction `tau ∈ [0, 1]` along the minimal geodesic from `x` to `y`.
    pub fn geodesic_between(&self, x: &[f64], y: &[f64], tau: f64) -> Result<Vec<f64>> {
        match &self.spec {
            ModelSpec::FlatCircle { .. } | ModelSpec::FlatTorus2 { .. } => Ok(x
                .iter()
                .zip(y)
                .map(|(a, b)| a + tau * wrap_angle(b - a))
                .collect()),
            ModelSpec::RoundSphere { .. } => {
                let ex = self.sphere_embedding(x);
                let ey = self.sphere_embedding(y);
                let r = self.sphere_radius().unwrap_or(1.0);
                let cosang = (ex.iter().zip(&ey).map(|(a, b)| a * b).sum::<f64>() / (r * r)).clamp(-1.0, 1.0);
                let ang = cosang.acos();
                if ang < 1e-15 {
                    return Ok(x.to_vec());
                }
                let (a, b) = (((1.0 - tau) * ang).sin() / ang.sin(), (tau * ang).sin() / ang.sin());
                let q: Vec<f64> = ex.iter().zip(&ey).map(|(p, q)| a * p + b * q).collect();
                Ok(self.sphere_chart(&q))
            }
            ModelSpec::SphericalSuspension { .. } => Err(Error::Unsupported {
                what: "explicit geodesics",
                model: "spherical_suspension",
            }),
        }
    }

    /// Normal-coordinate volume density `D = √det g / r^{n-1}` at `y`, as a
    /// function of the chart point `y` for a fixed base point `x`.
    pub fn density_d_generic<S: Scalar>(&self, x: &[f64], y: &[S]) -> S {
        match &self.spec {
            ModelSpec::RoundSphere { dim, radius } => {
                let ex = self.sphere_embedding(x);
                let ey = self.sphere_embedding(y);
                let mut dot = y[0].lift(0.0);
                for (a, b) in ex.iter().zip(&ey) {
                    dot = dot + b.clone() * *a;
                }
                let w = -(dot / (radius * radius)) + 1.0;
                let exponent = 0.5 * (*dim as f64 - 1.0);
                if w.value() < 1.0 {
                    // sin²σ/σ² = w(2 − w)/σ² = (2 − w)/(σ²/w)
                    ((-w.clone() + 2.0) / angle_sq_over_w(&w)).powf(exponent)
                } else {
                    let sigma = (-w.clone() + 1.0).acos();
                    (sigma.sin() / sigma).powf(2.0 * exponent)
                }
            }
            _ => y[0].lift(1.0),
        }
    }

    pub fn density_d(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if let ModelSpec::SphericalSuspension { .. } = self.spec {
            return Err(Error::Unsupported {
                what: "normal-coordinate density",
                model: "spherical_suspension",
            });
        }
        let d = self.distance(x, y)?;
        if d >= self.injectivity_bound(x) {
            return Err(Error::OutOfRange(format!(
                "distance {d} reaches the injectivity bound {}",
                self.injectivity_bound(x)
            )));
        }
        Ok(self.density_d_generic(x, y))
    }

    /// `vol_f(B_r(x)) = ∫_{B_r(x)} e^{-f} dvol_g` in geodesic polar coordinates.
    pub fn ball_volume(&self, x: &[f64], r: f64, radial_nodes: usize) -> Result<f64> {
        self.check_point(x)?;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive, got {r}")));
        }
        let bound = self.injectivity_bound(x);
        if r >= bound {
            return Err(Error::OutOfRange(format!(
                "radius {r} is not below the injectivity bound {bound}"
            )));
        }
        let (rho, w) = gauss_legendre_on(radial_nodes, 0.0, r);
        match &self.spec {
            ModelSpec::FlatCircle { radius, weight } => {
                let terms: Vec<f64> = rho
                    .iter()
                    .zip(&w)
                    .map(|(p, w)| {
                        w * ((-weight.value(x[0] + p / radius)).exp()
                            + (-weight.value(x[0] - p / radius)).exp())
                    })
                    .collect();
                Ok(pairwise_sum(&terms))
            }
            ModelSpec::FlatTorus2 { periods, .. } => {
                let radii = [periods[0] / (2.0 * PI), periods[1] / (2.0 * PI)];
                let (alpha, wa) = periodic_trapezoid(4 * radial_nodes);
                let mut terms = Vec::with_capacity(rho.len() * alpha.len());
                for (p, wp) in rho.iter().zip(&w) {
                    for (a, wa) in alpha.iter().zip(&wa) {
                        let y = [x[0] + p * a.cos() / radii[0], x[1] + p * a.sin() / radii[1]];
                        terms.push(wp * wa * p * (-self.f(&y)).exp());
                    }
                }
                Ok(pairwise_sum(&terms))
            }
            ModelSpec::RoundSphere { dim, radius } => {
                let terms: Vec<f64> = rho
                    .iter()
                    .zip(&w)
                    .map(|(p, w)| w * (radius * (p / radius).sin()).powi(*dim as i32 - 1))
                    .collect();
                Ok(unit_sphere_area(*dim) * pairwise_sum(&terms))
            }
            ModelSpec::SphericalSuspension { .. } => Err(Error::Unsupported {
                what: "geodesic ball volume",
                model: "spherical_suspension",
            }),
        }
    }

    /// `(Scal + 3Δf − 3|∇f|²) / (6(n+2))`, the `r²` coefficient of the
    /// normalized weighted ball volume.
    pub fn volume_expansion_coefficient(&self, x: &[f64]) -> f64 {
        let n = self.dim as f64;
        (self.scal(x) + 3.0 * self.lap_f(x) - 3.0 * self.grad_f_norm2(x)) / (6.0 * (n + 2.0))
    }

    pub fn volume_expansion_check(&self, x: &[f64], radii: &[f64]) -> Result<VolumeExpansionReport> {
        let n = self.dim;
        let coefficient = self.volume_expansion_coefficient(x);
        let base = unit_ball_volume(n) * (-self.f(x)).exp();
        let mut ratios = Vec::with_capacity(radii.len());
        let mut residuals = Vec::with_capacity(radii.len());
        for &r in radii {
            let ratio = self.ball_volume(x, r, 64)? / (base * r.powi(n as i32));
            ratios.push(ratio);
            residuals.push(ratio - (1.0 - coefficient * r * r));
        }
        let defect: Vec<f64> = ratios.iter().map(|q| q - 1.0).collect();
        let poly = fit::power_fit(radii, &defect, &[2, 3, 4])?;
        let fitted_coefficient = -poly.coeffs[0];
        let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let exact = max_residual < 1e-13;
        let residual_slope = if exact { None } else { Some(fit::loglog_slope(radii, &residuals)?) };
        let coefficient_ok = if coefficient.abs() > 1e-12 {
            ((fitted_coefficient - coefficient) / coefficient).abs() <= 0.01
        } else {
            fitted_coefficient.abs() <= 1e-8
        };
        let passed = coefficient_ok && residual_slope.is_none_or(|s| s >= 2.7);
        Ok(VolumeExpansionReport {
            point: x.to_vec(),
            radii: radii.to_vec(),
            ratios,
            residuals,
            coefficient,
            fitted_coefficient,
            residual_slope,
            passed,
        })
    }
}

/// Maps an angle difference into `(-π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let mut a = d.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Report of the weighted small-ball volume expansion.
#[derive(Clone, Debug, Serialize)]
pub struct VolumeExpansionReport {
    pub point: Vec<f64>,
    pub radii: Vec<f64>,
    /// `vol_f(B_r) / (ω_n r^n e^{-f(x)})`.
    pub ratios: Vec<f64>,
    /// Ratio minus `1 − C r²`.
    pub residuals: Vec<f64>,
    pub coefficient: f64,
    pub fitted_coefficient: f64,
    pub residual_slope: Option<f64>,
    pub passed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weighted_circle() -> ModelGeometry {
        ModelGeometry::flat_circle(1.0, WeightSpec::cosine(0.5)).unwrap()
    }

    #[test]
    fn flat_circle_is_flat() {
        let m = ModelGeometry::flat_circle(1.0, WeightSpec::zero()).unwrap();
        assert_eq!(m.scal(&[0.3]), 0.0);
        assert_eq!(m.christoffel(&[0.3]), vec![0.0]);
    }

    #[test]
    fn unit_three_sphere_curvature() {
        let m = ModelGeometry::round_sphere(3, 1.0).unwrap();
        let x = [1.0, 0.7, 2.0];
        assert!((m.scal(&x) - 6.0).abs() < 1e-14);
        let ric = m.ricci(&x);
        let g = m.metric(&x);
        assert!((ric - g * 2.0).abs().max() < 1e-14);
    }

    #[test]
    fn suspension_scalar_curvature() {
        let m = ModelGeometry::suspension(0.5).unwrap();
        for t in [0.1, 0.7, 1.5, 2.9] {
            let x = [t, 1.0, 0.5];
            let expected = 6.0 + 6.0 / (t.sin() * t.sin());
            assert!((m.scal(&x) - expected).abs() < 1e-10 * expected);
        }
    }

    #[test]
    fn curvature_from_metric_matches_closed_forms() {
        let cases: Vec<(ModelGeometry, Vec<f64>)> = vec![
            (ModelGeometry::round_sphere(2, 1.3).unwrap(), vec![0.9, 2.0]),
            (ModelGeometry::round_sphere(3, 0.8).unwrap(), vec![1.1, 0.6, 4.0]),
            (ModelGeometry::suspension(0.5).unwrap(), vec![0.4, 1.2, 3.0]),
            (ModelGeometry::suspension(0.9).unwrap(), vec![2.5, 0.3, 1.0]),
        ];
        for (m, x) in cases {
            let d = (m.ricci_from_metric(&x) - m.ricci(&x)).abs().max();
            assert!(d < 1e-9, "{}: Ricci mismatch {d}", m.name());
            assert!((m.scal_from_metric(&x) - m.scal(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn christoffels_match_finite_differences() {
        let m = ModelGeometry::suspension(0.5).unwrap();
        let x = [0.8, 1.1, 0.4];
        let n = 3;
        let gam = m.christoffel(&x);
        let h = 1e-4;
        let dg = |i: usize, k: usize| {
            let stencil = |s: f64| {
                let mut y = x;
                y[i] += s * h;
                m.metric_diag(&y)[k]
            };
            (-stencil(2.0) + 8.0 * stencil(1.0) - 8.0 * stencil(-1.0) + stencil(-2.0)) / (12.0 * h)
        };
        let g = m.metric_diag(&x);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    if j == k {
                        s += dg(i, k);
                    }
                    if i == k {
                        s += dg(j, k);
                    }
                    if i == j {
                        s -= dg(k, i);
                    }
                    let fd = 0.5 * s / g[k];
                    assert!((fd - gam[k * n * n + i * n + j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ModelGeometry::suspension(1.0).is_err());
        assert!(ModelGeometry::suspension(1.5).is_err());
        assert!(ModelGeometry::round_sphere(4, 1.0).is_err());
        assert!(ModelGeometry::flat_circle(-1.0, WeightSpec::zero()).is_err());
        let bad = WeightSpec {
            terms: vec![FourierTerm { frequency: -2, cos: 1.0, sin: 0.0 }],
        };
        assert!(ModelGeometry::flat_circle(1.0, bad).is_err());
    }

    #[test]
    fn suspension_singular_set_and_cutoff() {
        let m = ModelGeometry::suspension(0.5).unwrap();
        assert_eq!(m.singular_set().len(), 2);
        assert!(m.check_point(&[1e-4, 1.0, 1.0]).is_err());
        assert!(m.check_point(&[1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn weight_derivatives_are_exact() {
        let w = WeightSpec {
            terms: vec![
                FourierTerm { frequency: 0, cos: 0.2, sin: 0.0 },
                FourierTerm { frequency: 2, cos: 0.3, sin: -0.1 },
            ],
        };
        let th = 0.37;
        let j = w.eval(&Jet::coordinates(&[th], 3)[0]);
        assert!((j.val() - w.value(th)).abs() < 1e-15);
        assert!((j.d1(0) - w.derivative(th, 1)).abs() < 1e-14);
        assert!((j.d2(0, 0) - w.derivative(th, 2)).abs() < 1e-14);
        assert!(!w.is_constant());
        assert!(WeightSpec::constant(0.7).is_constant());
    }

    #[test]
    fn hausdorff_ratio_inverts_density_ratio() {
        let m = weighted_circle();
        for th in [0.0, 1.0, 2.5] {
            let x = [th];
            let r = m.hausdorff_ratio(&x) * m.measure_density(&x) / m.riemannian_density(&x);
            assert!((r - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ball_volume_examples() {
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let v = s2.ball_volume(&[1.0, 2.0], 0.3, 64).unwrap();
        assert!((v - 2.0 * PI * (1.0 - 0.3f64.cos())).abs() < 1e-14);
        let c = ModelGeometry::flat_circle(1.0, WeightSpec::zero()).unwrap();
        assert!((c.ball_volume(&[0.0], 0.5, 64).unwrap() - 1.0).abs() < 1e-14);
        assert!(c.ball_volume(&[0.0], 4.0, 64).is_err());
    }

    #[test]
    fn weighted_ball_volume_matches_brute_force() {
        let m = weighted_circle();
        let v = m.ball_volume(&[0.0], 0.1, 64).unwrap();
        // midpoint rule with many panels as an independent oracle
        let n = 200_000;
        let h = 0.2 / n as f64;
        let brute: f64 = (0..n)
            .map(|i| (-0.5 * (-0.1 + (i as f64 + 0.5) * h).cos()).exp() * h)
            .sum();
        assert!((v - brute).abs() < 1e-11);
    }

    #[test]
    fn volume_expansion_coefficients() {
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        assert!((s2.volume_expansion_coefficient(&[1.0, 1.0]) - 1.0 / 12.0).abs() < 1e-14);
        let wc = weighted_circle();
        assert!((wc.volume_expansion_coefficient(&[0.0]) + 1.0 / 12.0).abs() < 1e-14);
        let flat = ModelGeometry::flat_circle(1.0, WeightSpec::zero()).unwrap();
        let rep = flat
            .volume_expansion_check(&[0.0], &fit::log_grid(0.02, 0.2, 8))
            .unwrap();
        assert!(rep.passed && rep.residual_slope.is_none());
    }

    #[test]
    fn sphere_geodesic_has_the_right_length() {
        let m = ModelGeometry::round_sphere(2, 2.0).unwrap();
        let x = [1.0, 0.5];
        let g = m.metric_diag(&x);
        let v = [0.6 / g[0].sqrt(), 0.8 / g[1].sqrt()];
        let y = m.geodesic(&x, &v, 0.7).unwrap();
        assert!((m.distance(&x, &y).unwrap() - 0.7).abs() < 1e-12);
        let mid = m.geodesic_between(&x, &y, 0.5).unwrap();
        assert!((m.distance(&x, &mid).unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn sphere_density_examples() {
        let s2 = ModelGeometry::round_sphere(2, 1.0).unwrap();
        let s3 = ModelGeometry::round_sphere(3, 1.0).unwrap();
        let x2 = [1.2, 0.4];
        let y2 = s2.geodesic(&x2, &[1.0, 0.0], 0.8).unwrap();
        assert!((s2.density_d(&x2, &y2).unwrap() - 0.8f64.sin() / 0.8).abs() < 1e-13);
        let x3 = [1.2, 0.9, 0.4];
        let y3 = s3.geodesic(&x3, &[1.0, 0.0, 0.0], 0.5).unwrap();
        assert!((s3.density_d(&x3, &y3).unwrap() - (0.5f64.sin() / 0.5).powi(2)).abs() < 1e-13);
        // beyond the series range
        let y_far = s2.geodesic(&x2, &[1.0, 0.0], 1.9).unwrap();
        assert!((s2.density_d(&x2, &y_far).unwrap() - 1.9f64.sin() / 1.9).abs() < 1e-12);
    }
}
