//! Least-squares fits used to read off asymptotic coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::{Error, Result};

/// Result of a linear least-squares fit.
#[derive(Clone, Debug, Serialize)]
pub struct LinearFit {
    pub coeffs: Vec<f64>,
    /// One-sigma standard errors from the residual variance; zero when the
    /// system is square.
    pub std_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
}

/// Solves `min ‖W^{1/2}(A c − y)‖` with column equilibration.
pub fn lstsq(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let (m, p) = design.shape();
    if m < p || y.len() != m {
        return Err(Error::Fit(format!(
            "{m} samples cannot determine {p} coefficients"
        )));
    }
    let sw: Vec<f64> = match weights {
        Some(w) => w.iter().map(|w| w.sqrt()).collect(),
        None => vec![1.0; m],
    };
    let mut a = design.clone();
    for i in 0..m {
        for j in 0..p {
            a[(i, j)] *= sw[i];
        }
    }
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..p {
        let s = scale[j];
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let b = DVector::from_iterator(m, y.iter().zip(&sw).map(|(y, s)| y * s));
    let svd = a.clone().svd(true, true);
    let sol = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let coeffs: Vec<f64> = (0..p).map(|j| sol[j] / scale[j]).collect();
    let fitted = design * DVector::from_column_slice(&coeffs);
    let residuals: Vec<f64> = (0..m).map(|i| y[i] - fitted[i]).collect();
    let wrss: f64 = residuals.iter().zip(&sw).map(|(r, s)| (r * s).powi(2)).sum();
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / m as f64).sqrt();
    let std_errors = if m > p {
        let sigma2 = wrss / (m - p) as f64;
        let ata = a.transpose() * &a;
        match ata.try_inverse() {
            Some(inv) => (0..p)
                .map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt() / scale[j])
                .collect(),
            None => vec![f64::INFINITY; p],
        }
    } else {
        vec![0.0; p]
    };
    Ok(LinearFit {
        coeffs,
        std_errors,
        residuals,
        rms_residual,
    })
}

/// Fits `y ≈ Σ_{k ∈ powers} c_k x^k`.
pub fn power_fit(x: &[f64], y: &[f64], powers: &[i32]) -> Result<LinearFit> {
    let design = DMatrix::from_fn(x.len(), powers.len(), |i, j| x[i].powi(powers[j]));
    lstsq(&design, y, None)
}

/// Polynomial fit of the given degree.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<LinearFit> {
    let powers: Vec<i32> = (0..=degree as i32).collect();
    power_fit(x, y, &powers)
}

/// Slope of `ln|y|` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, y)| y.abs() > 0.0)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Fit("log-log slope needs two nonzero samples".into()));
    }
    let lx: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(polyfit(&lx, &ly, 1)?.coeffs[1])
}

/// Value at `x = 0` of the polynomial interpolating the last `points` samples
/// (Neville's scheme).
pub fn richardson_limit(x: &[f64], y: &[f64], points: usize) -> Result<f64> {
    if x.len() != y.len() || x.len() < points || points == 0 {
        return Err(Error::Fit(format!(
            "extrapolation needs {points} samples, got {}",
            x.len()
        )));
    }
    let xs = &x[x.len() - points..];
    let mut p: Vec<f64> = y[y.len() - points..].to_vec();
    for level in 1..points {
        for i in 0..points - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    Ok(p[0])
}

/// Fit of `y ≈ a + b x^p`.
#[derive(Clone, Debug, Serialize)]
pub struct PowerLawFit {
    pub offset: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub max_relative_residual: f64,
}

/// Variable projection: `a, b` are solved linearly for each trial exponent,
/// and the exponent minimises the relative residual on `[p_lo, p_hi]`.
pub fn power_law_with_offset(x: &[f64], y: &[f64], p_lo: f64, p_hi: f64) -> Result<PowerLawFit> {
    if x.len() < 3 {
        return Err(Error::Fit("power law with offset needs 3 samples".into()));
    }
    let weights: Vec<f64> = y.iter().map(|y| 1.0 / (y * y).max(f64::MIN_POSITIVE)).collect();
    let solve = |p: f64| -> Result<(f64, f64, f64)> {
        let design = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i].powf(p) });
        let fit = lstsq(&design, y, Some(&weights))?;
        let cost = fit
            .residuals
            .iter()
            .zip(y)
            .map(|(r, y)| (r / y).powi(2))
            .sum::<f64>();
        Ok((fit.coeffs[0], fit.coeffs[1], cost))
    };
    // coarse scan, then golden section around the best bracket
    let steps = 200;
    let mut best = (f64::INFINITY, p_lo);
    for i in 0..=steps {
        let p = p_lo + (p_hi - p_lo) * i as f64 / steps as f64;
        let c = solve(p)?.2;
        if c < best.0 {
            best = (c, p);
        }
    }
    let h = (p_hi - p_lo) / steps as f64;
    let (mut a, mut b) = ((best.1 - h).max(p_lo), (best.1 + h).min(p_hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if solve(c)?.2 < solve(d)?.2 {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    let p = 0.5 * (a + b);
    let (offset, amplitude, _) = solve(p)?;
    let max_relative_residual = x
        .iter()
        .zip(y)
        .map(|(x, y)| ((offset + amplitude * x.powf(p) - y) / y).abs())
        .fold(0.0, f64::max);
    Ok(PowerLawFit {
        offset,
        amplitude,
        exponent: p,
        max_relative_residual,
    })
}

/// Geometric sequence `t0, t0·ratio, …` with `count` terms.
pub fn geometric_grid(t0: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| t0 * ratio.powi(j as i32)).collect()
}

/// `count` points log-spaced from `a` to `b`, inclusive.
pub fn log_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    let ratio = (b / a).powf(1.0 / (count - 1) as f64);
    geometric_grid(a, ratio, count)
}
