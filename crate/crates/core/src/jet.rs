//! Truncated multivariate Taylor jets.
//!
//! A [`Jet`] carries the Taylor coefficients of a smooth function around a
//! chart point, up to a fixed total degree. Arithmetic on jets is exact
//! polynomial arithmetic modulo the truncation, so every chart-level
//! derivative in this crate (Christoffel symbols, Hessians, codifferentials,
//! curvature) is computed to rounding error without finite differences.
//!
//! Model formulas are written once against the [`Scalar`] trait and evaluated
//! either on plain `f64` or on jets.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Mutex, OnceLock};

/// Largest supported number of chart variables.
pub const MAX_DIM: usize = 3;
/// Largest supported truncation degree.
pub const MAX_ORDER: usize = 8;

/// Numeric type accepted by the generic model formulas.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant living in the same space as `self`.
    fn lift(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn asin(&self) -> Self;

    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn recip(&self) -> Self {
        self.powf(-1.0)
    }
    fn powu(&self, n: u32) -> Self {
        let mut acc = self.lift(1.0);
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
    fn acos(&self) -> Self {
        -self.asin() + std::f64::consts::FRAC_PI_2
    }
}

impl Scalar for f64 {
    fn lift(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn asin(&self) -> Self {
        f64::asin(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn powu(&self, n: u32) -> Self {
        f64::powi(*self, n as i32)
    }
    fn acos(&self) -> Self {
        f64::acos(*self)
    }
}

/// Monomial bookkeeping for a (dimension, degree) pair.
struct Layout {
    dim: usize,
    max_order: usize,
    exps: Vec<[u8; MAX_DIM]>,
    /// Number of monomials of total degree <= d, indexed by d.
    count_upto: Vec<usize>,
    /// Product table (lhs, rhs, out), sorted by the degree of `out`.
    mul: Vec<(u16, u16, u16)>,
    /// mul entries whose output degree is <= d.
    mul_upto: Vec<usize>,
    /// shift[i][idx] = index of exps[idx] + e_i, when within max_order.
    shift: Vec<Vec<Option<usize>>>,
    unit: Vec<usize>,
}

impl Layout {
    fn build(dim: usize, max_order: usize) -> Layout {
        let mut exps: Vec<[u8; MAX_DIM]> = Vec::new();
        for deg in 0..=max_order {
            let mut cur = [0u8; MAX_DIM];
            collect_degree(dim, deg, 0, &mut cur, &mut exps);
        }
        let degree = |e: &[u8; MAX_DIM]| e.iter().map(|&v| v as usize).sum::<usize>();
        let mut count_upto = vec![0usize; max_order + 1];
        for e in &exps {
            for slot in count_upto.iter_mut().skip(degree(e)) {
                *slot += 1;
            }
        }
        let index: HashMap<[u8; MAX_DIM], usize> =
            exps.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                if degree(a) + degree(b) > max_order {
                    continue;
                }
                let mut s = [0u8; MAX_DIM];
                for k in 0..MAX_DIM {
                    s[k] = a[k] + b[k];
                }
                mul.push((i as u16, j as u16, index[&s] as u16));
            }
        }
        mul.sort_by_key(|&(_, _, o)| degree(&exps[o as usize]));
        let mut mul_upto = vec![0usize; max_order + 1];
        for &(_, _, o) in &mul {
            for slot in mul_upto.iter_mut().skip(degree(&exps[o as usize])) {
                *slot += 1;
            }
        }
        let mut shift = Vec::with_capacity(dim);
        let mut unit = Vec::with_capacity(dim);
        for v in 0..dim {
            let mut e = [0u8; MAX_DIM];
            e[v] = 1;
            // order-0 layouts carry no linear monomials
            unit.push(index.get(&e).copied().unwrap_or(usize::MAX));
            shift.push(
                exps.iter()
                    .map(|a| {
                        let mut s = *a;
                        s[v] += 1;
                        index.get(&s).copied()
                    })
                    .collect(),
            );
        }
        Layout {
            dim,
            max_order,
            exps,
            count_upto,
            mul,
            mul_upto,
            shift,
            unit,
        }
    }
}

fn collect_degree(
    dim: usize,
    remaining: usize,
    var: usize,
    cur: &mut [u8; MAX_DIM],
    out: &mut Vec<[u8; MAX_DIM]>,
) {
    if var + 1 == dim {
        cur[var] = remaining as u8;
        out.push(*cur);
        cur[var] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        cur[var] = v as u8;
        collect_degree(dim, remaining - v, var + 1, cur, out);
    }
    cur[var] = 0;
}

fn layout(dim: usize, max_order: usize) -> &'static Layout {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), &'static Layout>>> = OnceLock::new();
    assert!(
        (1..=MAX_DIM).contains(&dim) && max_order <= MAX_ORDER,
        "unsupported jet layout dim={dim} order={max_order}"
    );
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("jet layout cache poisoned");
    guard
        .entry((dim, max_order))
        .or_insert_with(|| Box::leak(Box::new(Layout::build(dim, max_order))))
}

/// Truncated Taylor expansion in `dim` chart variables.
#[derive(Clone)]
pub struct Jet {
    layout: &'static Layout,
    order: usize,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("dim", &self.layout.dim)
            .field("order", &self.order)
            .field("coeffs", &&self.c[..self.layout.count_upto[self.order]])
            .finish()
    }
}

impl Jet {
    /// Identity jets `x_i + dx_i` of the given truncation order at `point`.
    pub fn coordinates(point: &[f64], order: usize) -> Vec<Jet> {
        let lay = layout(point.len(), order);
        (0..point.len())
            .map(|i| {
                let mut c = vec![0.0; lay.exps.len()];
                c[0] = point[i];
                if order > 0 {
                    c[lay.unit[i]] = 1.0;
                }
                Jet { layout: lay, order, c }
            })
            .collect()
    }

    pub fn constant(dim: usize, order: usize, v: f64) -> Jet {
        let lay = layout(dim, order);
        let mut c = vec![0.0; lay.exps.len()];
        c[0] = v;
        Jet { layout: lay, order, c }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Truncation degree up to which the coefficients are valid.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn val(&self) -> f64 {
        self.c[0]
    }

    /// First partial derivative with respect to chart variable `i`, at the base point.
    pub fn d1(&self, i: usize) -> f64 {
        assert!(self.order >= 1, "jet of order 0 has no first derivatives");
        self.c[self.layout.unit[i]]
    }

    /// Second partial derivative at the base point.
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        assert!(self.order >= 2, "jet of order {} has no second derivatives", self.order);
        let lay = self.layout;
        let idx = lay.shift[j][lay.unit[i]].expect("second-order monomial present");
        if i == j {
            2.0 * self.c[idx]
        } else {
            self.c[idx]
        }
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.d1(i)).collect()
    }

    /// Copy with the truncation degree lowered to `order`.
    pub fn truncated(&self, order: usize) -> Jet {
        assert!(order <= self.order, "cannot raise the order of a jet");
        let n = self.layout.count_upto[order];
        let mut c = vec![0.0; self.c.len()];
        c[..n].copy_from_slice(&self.c[..n]);
        Jet { layout: self.layout, order, c }
    }

    /// Partial derivative jet, one degree lower.
    pub fn partial(&self, i: usize) -> Jet {
        assert!(
            self.order >= 1,
            "cannot differentiate a jet of order 0 (raise the evaluation order)"
        );
        let lay = self.layout;
        let order = self.order - 1;
        let mut c = vec![0.0; lay.exps.len()];
        for idx in 0..lay.count_upto[order] {
            if let Some(up) = lay.shift[i][idx] {
                c[idx] = (lay.exps[idx][i] as f64 + 1.0) * self.c[up];
            }
        }
        Jet { layout: lay, order, c }
    }

    /// Copy in another layout of the same dimension. Monomials are ordered by
    /// degree, so lower layouts are prefixes of higher ones.
    fn relayout(&self, lay: &'static Layout) -> Jet {
        let order = self.order.min(lay.max_order);
        let n = lay.count_upto[order];
        let mut c = vec![0.0; lay.exps.len()];
        c[..n].copy_from_slice(&self.c[..n]);
        Jet { layout: lay, order, c }
    }

    /// Both operands in a common layout (the smaller one).
    fn aligned(&self, other: &Jet) -> Option<(Jet, Jet)> {
        if std::ptr::eq(self.layout, other.layout) {
            return None;
        }
        assert_eq!(self.layout.dim, other.layout.dim, "jets of different dimension");
        let lay = if self.layout.max_order <= other.layout.max_order {
            self.layout
        } else {
            other.layout
        };
        Some((self.relayout(lay), other.relayout(lay)))
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        if let Some((a, b)) = self.aligned(other) {
            return a.zip(&b, f);
        }
        let order = self.order.min(other.order);
        let n = self.layout.count_upto[order];
        let mut c = vec![0.0; self.c.len()];
        for k in 0..n {
            c[k] = f(self.c[k], other.c[k]);
        }
        Jet { layout: self.layout, order, c }
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        if let Some((a, b)) = self.aligned(other) {
            return a.mul_jet(&b);
        }
        let order = self.order.min(other.order);
        let lay = self.layout;
        let mut c = vec![0.0; self.c.len()];
        for &(i, j, o) in &lay.mul[..lay.mul_upto[order]] {
            c[o as usize] += self.c[i as usize] * other.c[j as usize];
        }
        Jet { layout: lay, order, c }
    }

    fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Jet {
        let n = self.layout.count_upto[self.order];
        let mut c = vec![0.0; self.c.len()];
        for k in 0..n {
            c[k] = f(self.c[k]);
        }
        Jet { layout: self.layout, order: self.order, c }
    }

    /// Evaluates `sum_n a[n] (self - self(0))^n` by Horner's rule, where `a`
    /// are the Taylor coefficients of a univariate function at the base value.
    fn compose(&self, a: &[f64]) -> Jet {
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let top = self.order.min(a.len() - 1);
        let mut acc = Jet::constant(self.dim(), self.layout.max_order, a[top]);
        acc.order = self.order;
        for n in (0..top).rev() {
            acc = acc.mul_jet(&delta);
            acc.c[0] += a[n];
        }
        acc
    }
}

/// Taylor coefficients of `(a0 + h)^p` around h = 0, to degree n.
fn power_coeffs(a0: f64, p: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let base = a0.powf(p);
    let mut binom = 1.0;
    for k in 0..=n {
        out.push(base * binom / a0.powi(k as i32));
        binom *= (p - k as f64) / (k as f64 + 1.0);
    }
    out
}

/// Power of a univariate series with nonzero constant term.
fn series_pow(a: &[f64], p: f64) -> Vec<f64> {
    let n = a.len();
    let mut b = vec![0.0; n];
    b[0] = a[0].powf(p);
    for m in 1..n {
        let mut s = 0.0;
        for k in 1..=m {
            s += (p * k as f64 - (m - k) as f64) * a[k] * b[m - k];
        }
        b[m] = s / (m as f64 * a[0]);
    }
    b
}

fn asin_coeffs(u0: f64, n: usize) -> Vec<f64> {
    // d/dh asin(u0 + h) = (1 - u0^2 - 2 u0 h - h^2)^(-1/2)
    let mut q = vec![0.0; n.max(1)];
    q[0] = 1.0 - u0 * u0;
    if q.len() > 1 {
        q[1] = -2.0 * u0;
    }
    if q.len() > 2 {
        q[2] = -1.0;
    }
    let deriv = series_pow(&q, -0.5);
    let mut out = vec![u0.asin()];
    for k in 1..=n {
        out.push(deriv[k - 1] / k as f64);
    }
    out
}

impl Scalar for Jet {
    fn lift(&self, v: f64) -> Self {
        let mut j = Jet::constant(self.dim(), self.layout.max_order, v);
        j.order = self.order;
        j
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [s, c, -s, -c];
        let mut fact = 1.0;
        let a: Vec<f64> = (0..=self.order)
            .map(|n| {
                if n > 0 {
                    fact *= n as f64;
                }
                cyc[n % 4] / fact
            })
            .collect();
        self.compose(&a)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [c, -s, -c, s];
        let mut fact = 1.0;
        let a: Vec<f64> = (0..=self.order)
            .map(|n| {
                if n > 0 {
                    fact *= n as f64;
                }
                cyc[n % 4] / fact
            })
            .collect();
        self.compose(&a)
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        let mut fact = 1.0;
        let a: Vec<f64> = (0..=self.order)
            .map(|n| {
                if n > 0 {
                    fact *= n as f64;
                }
                e / fact
            })
            .collect();
        self.compose(&a)
    }
    fn ln(&self) -> Self {
        let u0 = self.c[0];
        let a: Vec<f64> = (0..=self.order)
            .map(|n| {
                if n == 0 {
                    u0.ln()
                } else {
                    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                    sign / (n as f64 * u0.powi(n as i32))
                }
            })
            .collect();
        self.compose(&a)
    }
    fn powf(&self, p: f64) -> Self {
        self.compose(&power_coeffs(self.c[0], p, self.order))
    }
    fn asin(&self) -> Self {
        self.compose(&asin_coeffs(self.c[0], self.order))
    }
    fn recip(&self) -> Self {
        let u0 = self.c[0];
        let a: Vec<f64> = (0..=self.order)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign / u0.powi(n as i32 + 1)
            })
            .collect();
        self.compose(&a)
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $body:expr) => {
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&self, &rhs)
            }
        }
        impl<'a> $trait<&'a Jet> for &'a Jet {
            type Output = Jet;
            fn $method(self, rhs: &'a Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, rhs)
            }
        }
        impl<'a> $trait<&'a Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &'a Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&self, rhs)
            }
        }
    };
}

jet_binop!(Add, add, |a, b| a.zip(b, |x, y| x + y));
jet_binop!(Sub, sub, |a, b| a.zip(b, |x, y| x - y));
jet_binop!(Mul, mul, |a, b| a.mul_jet(b));
jet_binop!(Div, div, |a, b| a.mul_jet(&b.recip()));

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map_coeffs(|x| -x)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map_coeffs(|x| -x)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.map_coeffs(|x| x * rhs)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self.map_coeffs(|x| x / rhs)
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.map_coeffs(|x| x * rhs)
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        rhs * self
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        rhs + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        -rhs + self
    }
}

/// Sum of a non-empty slice of jets (or scalars).
pub fn sum<S: Scalar>(terms: impl IntoIterator<Item = S>) -> Option<S> {
    terms.into_iter().reduce(|a, b| a + b)
}
