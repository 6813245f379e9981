//! Quadrature rules and grids integrating against the reference measure.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::models::{ModelGeometry, ModelSpec};
use crate::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&u| mid + half * u).collect(),
        w.iter().map(|&v| v * half).collect(),
    )
}

/// Equispaced periodic nodes on `[0, 2π)` with equal weights.
pub fn periodic_trapezoid(n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * PI / n as f64;
    ((0..n).map(|j| j as f64 * h).collect(), vec![h; n])
}

/// Pairwise (cascade) summation; the order is fixed by the slice layout.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Points and weights with `Σ w_i u(x_i) ≈ ∫ u dm`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    model_key: String,
}

impl QuadratureGrid {
    /// Grid adapted to the model; `nodes` is the resolution per chart direction
    /// (the azimuthal direction of spheres uses twice as many).
    pub fn for_model(model: &ModelGeometry, nodes: usize) -> Result<QuadratureGrid> {
        if nodes < 2 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs at least 2 nodes per direction, got {nodes}"
            )));
        }
        let dim = model.dim();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        match model.spec() {
            ModelSpec::FlatCircle { .. } => {
                let (th, w) = periodic_trapezoid(nodes);
                for (x, wx) in th.iter().zip(&w) {
                    coords.push(*x);
                    weights.push(*wx);
                }
            }
            ModelSpec::FlatTorus2 { .. } => {
                let (th, w) = periodic_trapezoid(nodes);
                for (x, wx) in th.iter().zip(&w) {
                    for (y, wy) in th.iter().zip(&w) {
                        coords.extend_from_slice(&[*x, *y]);
                        weights.push(wx * wy);
                    }
                }
            }
            ModelSpec::RoundSphere { dim: 2, .. } => {
                let (u, wu) = gauss_legendre(nodes);
                let (ph, wp) = periodic_trapezoid(2 * nodes);
                for (c, wc) in u.iter().zip(&wu) {
                    // the GL weight in cos(theta) already carries sin(theta)
                    let th = c.acos();
                    let jac = 1.0 / th.sin();
                    for (p, w) in ph.iter().zip(&wp) {
                        coords.extend_from_slice(&[th, *p]);
                        weights.push(wc * w * jac);
                    }
                }
            }
            ModelSpec::RoundSphere { .. } => {
                let (chi, wchi) = gauss_legendre_on(nodes, 0.0, PI);
                let (u, wu) = gauss_legendre(nodes);
                let (ph, wp) = periodic_trapezoid(2 * nodes);
                for (a, wa) in chi.iter().zip(&wchi) {
                    for (c, wc) in u.iter().zip(&wu) {
                        let th = c.acos();
                        let jac = 1.0 / th.sin();
                        for (p, w) in ph.iter().zip(&wp) {
                            coords.extend_from_slice(&[*a, th, *p]);
                            weights.push(wa * wc * w * jac);
                        }
                    }
                }
            }
            ModelSpec::SphericalSuspension { pole_cutoff, .. } => {
                let (ts, wt) = gauss_legendre_on(nodes, *pole_cutoff, PI - pole_cutoff);
                let (u, wu) = gauss_legendre(nodes);
                let (ph, wp) = periodic_trapezoid(2 * nodes);
                for (a, wa) in ts.iter().zip(&wt) {
                    for (c, wc) in u.iter().zip(&wu) {
                        let th = c.acos();
                        let jac = 1.0 / th.sin();
                        for (p, w) in ph.iter().zip(&wp) {
                            coords.extend_from_slice(&[*a, th, *p]);
                            weights.push(wa * wc * w * jac);
                        }
                    }
                }
            }
        }
        let weights = weights
            .par_iter()
            .enumerate()
            .map(|(i, w)| w * model.measure_density(&coords[i * dim..(i + 1) * dim]))
            .collect();
        Ok(QuadratureGrid {
            dim,
            coords,
            weights,
            model_key: model.key(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    pub fn check_model(&self, model: &ModelGeometry) -> Result<()> {
        let key = model.key();
        if key == self.model_key {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                grid: self.model_key.clone(),
                model: key,
            })
        }
    }

    /// `∫ u dm`, evaluated in parallel and summed in a fixed order.
    pub fn integrate<F>(&self, u: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let terms: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| self.weights[i] * u(self.point(i)))
            .collect();
        pairwise_sum(&terms)
    }

    /// `Σ w_i v_i` for values already sampled on the grid.
    pub fn integrate_samples(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len(), "sample count does not match grid");
        let terms: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        pairwise_sum(&terms)
    }
}
