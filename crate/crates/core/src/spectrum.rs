//! Truncated orthonormal eigenbases of the weighted Laplacian.
//!
//! Circles with a non-constant weight are solved by a Fourier–Galerkin
//! generalized eigenproblem `A v = λ B v` in the real basis
//! `1, cos θ, sin θ, cos 2θ, …`; everything else is analytic.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::jet::{Jet, Scalar};
use crate::models::{ModelGeometry, ModelSpec, WeightSpec};
use crate::quadrature::periodic_trapezoid;
use crate::{fit, Error, Result};

/// Coefficients of circle eigenfunctions in the real Fourier basis.
#[derive(Clone, Debug)]
pub struct CircleModes {
    pub radius: f64,
    /// Highest Fourier frequency `K` of the basis.
    pub max_frequency: usize,
    /// `(2K+1) × M` coefficient matrix, one column per mode.
    pub coeffs: DMatrix<f64>,
    pub lambdas: Vec<f64>,
}

impl CircleModes {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Value of mode `i` at an angle of any scalar type.
    pub fn eval<S: Scalar>(&self, i: usize, theta: &S) -> S {
        let col = self.coeffs.column(i);
        let mut acc = theta.lift(col[0]);
        let c1 = theta.cos();
        let s1 = theta.sin();
        let mut ck = c1.clone();
        let mut sk = s1.clone();
        for k in 1..=self.max_frequency {
            let (a, b) = (col[2 * k - 1], col[2 * k]);
            if a != 0.0 {
                acc = acc + ck.clone() * a;
            }
            if b != 0.0 {
                acc = acc + sk.clone() * b;
            }
            if k < self.max_frequency {
                let next_c = ck.clone() * c1.clone() - sk.clone() * s1.clone();
                sk = sk * c1.clone() + ck * s1.clone();
                ck = next_c;
            }
        }
        acc
    }

    /// Values and first two θ-derivatives of the first `m` modes at the given
    /// angles, as `points × m` matrices.
    pub fn table(&self, theta: &[f64], m: usize) -> CircleTable {
        let d = 2 * self.max_frequency + 1;
        let np = theta.len();
        let mut b0 = DMatrix::zeros(np, d);
        let mut b1 = DMatrix::zeros(np, d);
        let mut b2 = DMatrix::zeros(np, d);
        for (p, &th) in theta.iter().enumerate() {
            b0[(p, 0)] = 1.0;
            for k in 1..=self.max_frequency {
                let kf = k as f64;
                let (s, c) = (kf * th).sin_cos();
                b0[(p, 2 * k - 1)] = c;
                b0[(p, 2 * k)] = s;
                b1[(p, 2 * k - 1)] = -kf * s;
                b1[(p, 2 * k)] = kf * c;
                b2[(p, 2 * k - 1)] = -kf * kf * c;
                b2[(p, 2 * k)] = -kf * kf * s;
            }
        }
        let coeffs = self.coeffs.columns(0, m);
        CircleTable {
            theta: theta.to_vec(),
            lambdas: self.lambdas[..m].to_vec(),
            values: &b0 * coeffs,
            d1: &b1 * coeffs,
            d2: &b2 * coeffs,
        }
    }
}

/// Sampled circle modes: `values[(p, i)] = φ_i(θ_p)` and θ-derivatives.
#[derive(Clone, Debug)]
pub struct CircleTable {
    pub theta: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub values: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

impl CircleTable {
    pub fn modes(&self) -> usize {
        self.lambdas.len()
    }
}

/// Mode data at a single point.
#[derive(Clone, Debug)]
pub struct PointSamples {
    pub values: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    pub hessians: Option<Vec<DMatrix<f64>>>,
}

/// Eigenspace of a round sphere: eigenvalue and multiplicity.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SphereLevel {
    pub degree: usize,
    pub lambda: f64,
    pub multiplicity: usize,
}

/// Eigenvalue levels of `S^n(r)` up to the given degree.
pub fn sphere_levels(n: usize, radius: f64, max_degree: usize) -> Vec<SphereLevel> {
    (0..=max_degree)
        .map(|k| {
            let kf = k as f64;
            let (lambda, multiplicity) = match n {
                2 => (kf * (kf + 1.0), 2 * k + 1),
                3 => (kf * (kf + 2.0), (k + 1) * (k + 1)),
                _ => panic!("sphere levels only for n = 2, 3"),
            };
            SphereLevel {
                degree: k,
                lambda: lambda / (radius * radius),
                multiplicity,
            }
        })
        .collect()
}

/// Riemannian volume of `S^n(r)`.
pub fn sphere_volume(n: usize, radius: f64) -> f64 {
    match n {
        2 => 4.0 * PI * radius * radius,
        3 => 2.0 * PI * PI * radius.powi(3),
        _ => panic!("sphere volume only for n = 2, 3"),
    }
}

#[derive(Clone, Debug)]
enum Modes {
    Circle(CircleModes),
    Torus {
        factors: Box<[CircleModes; 2]>,
        pairs: Vec<(usize, usize)>,
    },
    Sphere2 {
        radius: f64,
        index: Vec<(usize, i64)>,
    },
    Sphere3 {
        radius: f64,
        index: Vec<(usize, usize, i64)>,
    },
}

/// Ordered truncated eigenbasis, `λ_0 = 0` first.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    model: ModelGeometry,
    lambdas: Vec<f64>,
    modes: Modes,
}

/// View of one basis element.
#[derive(Clone, Copy, Debug)]
pub struct EigenMode<'a> {
    basis: &'a SpectralBasis,
    pub index: usize,
    pub lambda: f64,
}

impl EigenMode<'_> {
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.basis.eval_mode(self.index, x)
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        self.basis.mode_jet(self.index, x, order)
    }

    /// Chart components of `dφ`.
    pub fn dphi(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x, 1).gradient()
    }

    /// Chart components of the covariant Hessian.
    pub fn hess_phi(&self, x: &[f64]) -> DMatrix<f64> {
        let model = &self.basis.model;
        let n = model.dim();
        let u = self.jet(x, 2);
        let gam = model.christoffel(x);
        DMatrix::from_fn(n, n, |i, j| {
            u.d2(i, j) - (0..n).map(|k| gam[k * n * n + i * n + j] * u.d1(k)).sum::<f64>()
        })
    }

    /// Pointwise `|Δ_f φ + λ φ|`.
    pub fn eigen_residual(&self, x: &[f64]) -> f64 {
        let model = &self.basis.model;
        let u = self.jet(x, 2);
        let g = model.metric_diag(x);
        let df = model.df(x);
        let drift: f64 = (0..model.dim()).map(|i| df[i] * u.d1(i) / g[i]).sum();
        (model.laplacian_of_jet(&u, x) - drift + self.lambda * u.val()).abs()
    }
}

/// Sign convention: the largest coefficient of every eigenvector is positive.
fn fix_sign(v: &mut DVector<f64>) {
    let (mut best, mut idx) = (0.0, 0);
    for (i, c) in v.iter().enumerate() {
        if c.abs() > best + 1e-12 {
            best = c.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

#[derive(Clone, Copy)]
enum Fb {
    One,
    Cos(i64),
    Sin(i64),
}

fn fb(idx: usize) -> Fb {
    if idx == 0 {
        Fb::One
    } else if idx % 2 == 1 {
        Fb::Cos(idx.div_ceil(2) as i64)
    } else {
        Fb::Sin((idx / 2) as i64)
    }
}

/// Fourier moments `∫ cos(mθ) e^{-f}` and `∫ sin(mθ) e^{-f}` for `m ≤ mmax`.
fn weight_moments(weight: &WeightSpec, mmax: usize) -> (Vec<f64>, Vec<f64>) {
    let n = 2 * mmax + 64 + 16 * weight.max_frequency();
    let (theta, w) = periodic_trapezoid(n);
    let density: Vec<f64> = theta.iter().map(|t| (-weight.value(*t)).exp() * w[0]).collect();
    let (mut wc, mut ws) = (vec![0.0; mmax + 1], vec![0.0; mmax + 1]);
    for m in 0..=mmax {
        let (mut c, mut s) = (0.0, 0.0);
        for (j, d) in density.iter().enumerate() {
            let arg = 2.0 * PI * ((m * j) % n) as f64 / n as f64;
            c += d * arg.cos();
            s += d * arg.sin();
        }
        wc[m] = c;
        ws[m] = s;
    }
    (wc, ws)
}

/// Galerkin matrices `(A, B)` restricted to the given basis indices.
fn galerkin_matrices(idx: &[usize], wc: &[f64], ws: &[f64], radius: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = |m: i64| wc[m.unsigned_abs() as usize];
    let s = |m: i64| m.signum() as f64 * ws[m.unsigned_abs() as usize];
    let prod = |a: Fb, b: Fb| -> f64 {
        match (a, b) {
            (Fb::One, Fb::One) => c(0),
            (Fb::One, Fb::Cos(k)) | (Fb::Cos(k), Fb::One) => c(k),
            (Fb::One, Fb::Sin(k)) | (Fb::Sin(k), Fb::One) => s(k),
            (Fb::Cos(j), Fb::Cos(k)) => 0.5 * (c(j - k) + c(j + k)),
            (Fb::Sin(j), Fb::Sin(k)) => 0.5 * (c(j - k) - c(j + k)),
            (Fb::Cos(j), Fb::Sin(k)) | (Fb::Sin(k), Fb::Cos(j)) => 0.5 * (s(k + j) + s(k - j)),
        }
    };
    // derivative of a basis function as (factor, basis function)
    let deriv = |a: Fb| -> Option<(f64, Fb)> {
        match a {
            Fb::One => None,
            Fb::Cos(k) => Some((-(k as f64), Fb::Sin(k))),
            Fb::Sin(k) => Some((k as f64, Fb::Cos(k))),
        }
    };
    let d = idx.len();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, d);
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate().skip(p) {
            let (fi, fj) = (fb(i), fb(j));
            let bij = prod(fi, fj) * radius;
            let aij = match (deriv(fi), deriv(fj)) {
                (Some((ci, gi)), Some((cj, gj))) => ci * cj * prod(gi, gj) / radius,
                _ => 0.0,
            };
            b[(p, q)] = bij;
            b[(q, p)] = bij;
            a[(p, q)] = aij;
            a[(q, p)] = aij;
        }
    }
    (a, b)
}

/// Generalized symmetric eigensolve by Cholesky reduction.
fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("Galerkin mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let vecs = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::LinearAlgebra("back substitution failed".into()))?;
    Ok((eig.eigenvalues.iter().copied().collect(), vecs))
}

/// Circle eigenbasis with `modes` elements from a Galerkin space of
/// frequencies up to `galerkin` (ignored for constant weights).
pub fn circle_modes(radius: f64, weight: &WeightSpec, modes: usize, galerkin: usize) -> Result<CircleModes> {
    if modes == 0 {
        return Err(Error::InvalidParameter("at least one mode is required".into()));
    }
    if weight.is_constant() {
        let kmax = modes / 2;
        let d = 2 * kmax + 1;
        let scale = (0.5 * weight.mean()).exp();
        let mut coeffs = DMatrix::zeros(d, modes);
        let mut lambdas = Vec::with_capacity(modes);
        for i in 0..modes {
            if i == 0 {
                coeffs[(0, 0)] = scale / (2.0 * PI * radius).sqrt();
                lambdas.push(0.0);
            } else {
                coeffs[(i, i)] = scale / (PI * radius).sqrt();
                let k = i.div_ceil(2) as f64;
                lambdas.push(k * k / (radius * radius));
            }
        }
        return Ok(CircleModes {
            radius,
            max_frequency: kmax,
            coeffs,
            lambdas,
        });
    }
    if galerkin < modes {
        return Err(Error::BasisTooSmall(format!(
            "{modes} modes need a Galerkin space with at least {modes} frequencies, got {galerkin}"
        )));
    }
    let d = 2 * galerkin + 1;
    let (wc, ws) = weight_moments(weight, 2 * galerkin);
    let blocks: Vec<Vec<usize>> = if weight.is_even() {
        vec![
            (0..d).filter(|&i| i == 0 || i % 2 == 1).collect(),
            (0..d).filter(|&i| i > 0 && i % 2 == 0).collect(),
        ]
    } else {
        vec![(0..d).collect()]
    };
    let mut found: Vec<(f64, DVector<f64>)> = Vec::with_capacity(d);
    for idx in &blocks {
        let (a, b) = galerkin_matrices(idx, &wc, &ws, radius);
        let (vals, vecs) = generalized_eigen(&a, &b)?;
        for (j, lam) in vals.iter().enumerate() {
            let mut full = DVector::zeros(d);
            for (p, &i) in idx.iter().enumerate() {
                full[i] = vecs[(p, j)];
            }
            fix_sign(&mut full);
            found.push((lam.max(0.0), full));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.truncate(modes);
    let mut coeffs = DMatrix::zeros(d, modes);
    let mut lambdas = Vec::with_capacity(modes);
    for (j, (lam, v)) in found.into_iter().enumerate() {
        coeffs.set_column(j, &v);
        lambdas.push(lam);
    }
    lambdas[0] = 0.0;
    Ok(CircleModes {
        radius,
        max_frequency: galerkin,
        coeffs,
        lambdas,
    })
}

/// Fully normalized associated Legendre functions `Q_l^m(cos θ)` for
/// `l ≤ lmax` at fixed `m ≥ 0`, on any scalar type.
fn normalized_legendre<S: Scalar>(theta: &S, m: usize, lmax: usize) -> Vec<S> {
    let (c, s) = (theta.cos(), theta.sin());
    let mut qmm = theta.lift((1.0 / (4.0 * PI)).sqrt());
    for k in 1..=m {
        let kf = k as f64;
        qmm = qmm * s.clone() * (-((2.0 * kf + 1.0) / (2.0 * kf)).sqrt());
    }
    let mut out = vec![theta.lift(0.0); lmax + 1];
    if m > lmax {
        return out;
    }
    out[m] = qmm.clone();
    if m < lmax {
        out[m + 1] = c.clone() * qmm * (2.0 * m as f64 + 3.0).sqrt();
    }
    let mf = m as f64;
    for l in m + 2..=lmax {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
        out[l] = (c.clone() * out[l - 1].clone() - out[l - 2].clone() * b) * a;
    }
    out
}

/// Real orthonormal spherical harmonic on the unit sphere.
fn real_harmonic<S: Scalar>(l: usize, m: i64, theta: &S, phi: &S) -> S {
    let am = m.unsigned_abs() as usize;
    let q = normalized_legendre(theta, am, l).swap_remove(l);
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => q,
        std::cmp::Ordering::Greater => q * (phi.clone() * am as f64).cos() * 2f64.sqrt(),
        std::cmp::Ordering::Less => q * (phi.clone() * am as f64).sin() * 2f64.sqrt(),
    }
}

/// Gegenbauer polynomial `C_n^α(x)`.
fn gegenbauer<S: Scalar>(n: usize, alpha: f64, x: &S) -> S {
    let mut p0 = x.lift(1.0);
    if n == 0 {
        return p0;
    }
    let mut p1 = x.clone() * (2.0 * alpha);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = (x.clone() * p1.clone() * (2.0 * (kf + alpha - 1.0)) - p0 * (kf + 2.0 * alpha - 2.0)) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Orthonormal hyperspherical harmonic on the unit 3-sphere.
fn hyperspherical_harmonic<S: Scalar>(k: usize, l: usize, m: i64, x: &[S]) -> S {
    // ∫ sin^{2l+2}χ C²dχ = π 2^{-2l-1} (k+l+1)! / ((k-l)! (k+1) (l!)²)
    let ln_norm = PI.ln() - (2.0 * l as f64 + 1.0) * 2f64.ln() + ln_factorial(k + l + 1)
        - ln_factorial(k - l)
        - ((k + 1) as f64).ln()
        - 2.0 * ln_factorial(l);
    let radial = x[0].sin().powu(l as u32) * gegenbauer(k - l, l as f64 + 1.0, &x[0].cos());
    radial * real_harmonic(l, m, &x[1], &x[2]) * (-0.5 * ln_norm).exp()
}

impl SpectralBasis {
    /// Eigenbasis of a (possibly weighted) circle with `modes` elements.
    pub fn circle(model: &ModelGeometry, modes: usize, galerkin: usize) -> Result<SpectralBasis> {
        let ModelSpec::FlatCircle { radius, weight } = model.spec() else {
            return Err(Error::InvalidParameter("circle basis requested on a non-circle model".into()));
        };
        let cm = circle_modes(*radius, weight, modes, galerkin)?;
        Ok(SpectralBasis {
            model: model.clone(),
            lambdas: cm.lambdas.clone(),
            modes: Modes::Circle(cm),
        })
    }

    /// Product basis of a flat torus with separable weight.
    pub fn torus(model: &ModelGeometry, modes: usize, galerkin: usize) -> Result<SpectralBasis> {
        let ModelSpec::FlatTorus2 { periods, weights } = model.spec() else {
            return Err(Error::InvalidParameter("torus basis requested on a non-torus model".into()));
        };
        let factors = [
            circle_modes(periods[0] / (2.0 * PI), &weights[0], modes, galerkin.max(modes))?,
            circle_modes(periods[1] / (2.0 * PI), &weights[1], modes, galerkin.max(modes))?,
        ];
        // pairs are trustworthy below the smallest factor cutoff
        let cutoff = factors[0].lambdas[modes - 1].min(factors[1].lambdas[modes - 1]);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, la) in factors[0].lambdas.iter().enumerate() {
            for (j, lb) in factors[1].lambdas.iter().enumerate() {
                if la + lb <= cutoff * (1.0 + 1e-12) {
                    pairs.push((la + lb, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.truncate(modes);
        Ok(SpectralBasis {
            model: model.clone(),
            lambdas: pairs.iter().map(|p| p.0).collect(),
            modes: Modes::Torus {
                factors: Box::new(factors),
                pairs: pairs.iter().map(|p| (p.1, p.2)).collect(),
            },
        })
    }

    /// All spherical harmonics of degree `≤ max_degree`.
    pub fn sphere(model: &ModelGeometry, max_degree: usize) -> Result<SpectralBasis> {
        let ModelSpec::RoundSphere { dim, radius } = model.spec() else {
            return Err(Error::InvalidParameter("sphere basis requested on a non-sphere model".into()));
        };
        let levels = sphere_levels(*dim, *radius, max_degree);
        let mut lambdas = Vec::new();
        let order_m = |l: usize| -> Vec<i64> {
            let mut ms = vec![0i64];
            for m in 1..=l as i64 {
                ms.push(m);
                ms.push(-m);
            }
            ms
        };
        let modes = if *dim == 2 {
            let mut index = Vec::new();
            for lev in &levels {
                for m in order_m(lev.degree) {
                    index.push((lev.degree, m));
                    lambdas.push(lev.lambda);
                }
            }
            Modes::Sphere2 { radius: *radius, index }
        } else {
            let mut index = Vec::new();
            for lev in &levels {
                for l in 0..=lev.degree {
                    for m in order_m(l) {
                        index.push((lev.degree, l, m));
                        lambdas.push(lev.lambda);
                    }
                }
            }
            Modes::Sphere3 { radius: *radius, index }
        };
        Ok(SpectralBasis {
            model: model.clone(),
            lambdas,
            modes,
        })
    }

    /// Basis for any model that has one; `size` is a mode count on circles
    /// and tori and a maximal degree on spheres.
    pub fn for_model(model: &ModelGeometry, size: usize, galerkin: usize) -> Result<SpectralBasis> {
        match model.spec() {
            ModelSpec::FlatCircle { .. } => Self::circle(model, size, galerkin),
            ModelSpec::FlatTorus2 { .. } => Self::torus(model, size, galerkin),
            ModelSpec::RoundSphere { .. } => Self::sphere(model, size),
            ModelSpec::SphericalSuspension { .. } => Err(Error::Unsupported {
                what: "eigenbasis",
                model: "spherical_suspension",
            }),
        }
    }

    pub fn model(&self) -> &ModelGeometry {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mode(&self, i: usize) -> EigenMode<'_> {
        EigenMode {
            basis: self,
            index: i,
            lambda: self.lambdas[i],
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = EigenMode<'_>> {
        (0..self.len()).map(|i| self.mode(i))
    }

    /// Circle coefficients, when the basis lives on a circle.
    pub fn circle_modes(&self) -> Option<&CircleModes> {
        match &self.modes {
            Modes::Circle(c) => Some(c),
            _ => None,
        }
    }

    /// Value of mode `i` on any scalar type.
    pub fn eval_mode_generic<S: Scalar>(&self, i: usize, x: &[S]) -> S {
        match &self.modes {
            Modes::Circle(c) => c.eval(i, &x[0]),
            Modes::Torus { factors, pairs } => {
                let (a, b) = pairs[i];
                factors[0].eval(a, &x[0]) * factors[1].eval(b, &x[1])
            }
            Modes::Sphere2 { radius, index } => {
                let (l, m) = index[i];
                real_harmonic(l, m, &x[0], &x[1]) / *radius
            }
            Modes::Sphere3 { radius, index } => {
                let (k, l, m) = index[i];
                hyperspherical_harmonic(k, l, m, x) / radius.powf(1.5)
            }
        }
    }

    pub fn eval_mode(&self, i: usize, x: &[f64]) -> f64 {
        self.eval_mode_generic(i, x)
    }

    pub fn mode_jet(&self, i: usize, x: &[f64], order: usize) -> Jet {
        self.eval_mode_generic(i, &Jet::coordinates(x, order))
    }

    /// Values, chart gradients and (optionally) covariant Hessians of the
    /// first `m` modes at one point.
    pub fn sample_modes(&self, x: &[f64], m: usize, hessians: bool) -> PointSamples {
        let n = self.model.dim();
        if let Modes::Circle(c) = &self.modes {
            let tab = c.table(&[x[0]], m);
            return PointSamples {
                values: tab.values.row(0).iter().copied().collect(),
                grads: tab.d1.row(0).iter().map(|d| vec![*d]).collect(),
                hessians: hessians.then(|| {
                    tab.d2.row(0).iter().map(|d| DMatrix::from_element(1, 1, *d)).collect()
                }),
            };
        }
        let order = if hessians { 2 } else { 1 };
        let coords = Jet::coordinates(x, order);
        let gam = if hessians { self.model.christoffel(x) } else { Vec::new() };
        let mut values = Vec::with_capacity(m);
        let mut grads = Vec::with_capacity(m);
        let mut hess = Vec::with_capacity(if hessians { m } else { 0 });
        for i in 0..m {
            let u = self.eval_mode_generic(i, &coords);
            values.push(u.val());
            let g = u.gradient();
            if hessians {
                hess.push(DMatrix::from_fn(n, n, |a, b| {
                    u.d2(a, b) - (0..n).map(|k| gam[k * n * n + a * n + b] * g[k]).sum::<f64>()
                }));
            }
            grads.push(g);
        }
        PointSamples {
            values,
            grads,
            hessians: hessians.then_some(hess),
        }
    }

    /// Smallest `c` with `λ_i ≥ c · i^{2/n}` over the basis (`i ≥ 1`).
    pub fn weyl_constant(&self) -> f64 {
        let n = self.model.dim() as f64;
        self.lambdas
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, l)| l / (i as f64).powf(2.0 / n))
            .fold(f64::INFINITY, f64::min)
    }

    /// `index,lambda` rows with a header.
    pub fn eigenvalue_csv(&self) -> String {
        let mut s = String::from("index,lambda\n");
        for (i, l) in self.lambdas.iter().enumerate() {
            s.push_str(&format!("{i},{l:.16e}\n"));
        }
        s
    }
}

/// Eigenform of the Hodge Laplacian on a circle, `ω = h(θ) dθ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum HodgeSource {
    /// `e^f dθ / ‖e^f dθ‖`.
    Harmonic { norm: f64 },
    /// `dφ_k / √λ_k`.
    Exact { mode: usize },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HodgeMode {
    pub mu: f64,
    pub source: HodgeSource,
}

/// Harmonic form followed by normalized exact forms `dφ_k/√λ_k`.
pub fn hodge_basis_circle(basis: &SpectralBasis, count: usize) -> Result<Vec<HodgeMode>> {
    let ModelSpec::FlatCircle { radius, weight } = basis.model().spec() else {
        return Err(Error::InvalidParameter("Hodge basis is only built on circles".into()));
    };
    if count > basis.len() {
        return Err(Error::BasisTooSmall(format!(
            "{count} Hodge modes need {count} function modes, basis has {}",
            basis.len()
        )));
    }
    // ‖h dθ‖² = ∫ h² R^{-2} e^{-f} R dθ with h = e^f
    let (th, w) = periodic_trapezoid(2048);
    let norm2: f64 = th.iter().map(|t| weight.value(*t).exp() * w[0] / radius).sum();
    let mut out = vec![HodgeMode {
        mu: 0.0,
        source: HodgeSource::Harmonic { norm: norm2.sqrt() },
    }];
    for k in 1..count {
        out.push(HodgeMode {
            mu: basis.lambdas()[k],
            source: HodgeSource::Exact { mode: k },
        });
    }
    Ok(out)
}

/// Coefficient `h` of a circle Hodge mode, as a jet in `θ`.
pub fn hodge_form_jet(basis: &SpectralBasis, mode: &HodgeMode, theta: f64, order: usize) -> Jet {
    let x = Jet::coordinates(&[theta], order + 1);
    match mode.source {
        HodgeSource::Harmonic { norm } => (basis.model().weight_value(&x).exp() / norm).truncated(order),
        HodgeSource::Exact { mode } => {
            basis.eval_mode_generic(mode, &x).partial(0) / basis.lambdas()[mode].sqrt()
        }
    }
}

/// Check that the eigenvalues obey a Weyl-type lower bound with positive constant.
pub fn weyl_fit(basis: &SpectralBasis) -> Result<f64> {
    let c = basis.weyl_constant();
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::Fit(format!("no positive Weyl constant (got {c})")))
    }
}

/// Least-squares exponent of `λ_i` against `i` over the upper half of the basis.
pub fn weyl_exponent(basis: &SpectralBasis) -> Result<f64> {
    let n = basis.len();
    let idx: Vec<f64> = (n / 2..n).map(|i| i as f64).collect();
    let lam: Vec<f64> = (n / 2..n).map(|i| basis.lambdas()[i]).collect();
    fit::loglog_slope(&idx, &lam)
}
