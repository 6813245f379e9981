//! Config-driven experiment runner.
//!
//! A run reads one JSON [`RunConfig`], validates it completely, evaluates the
//! experiment and writes `report.json` plus plot-ready CSV series into the
//! output directory. Nothing is written when validation fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use heatlab_core::einstein::{
    bbg_fit, default_points, key_identity_batch, suspension_blowup, wadf_experiment, weighted_volume_normalization_fit,
    Verdict,
};
use heatlab_core::fit::{geometric_grid, log_grid};
use heatlab_core::heat::shorttime_diag;
use heatlab_core::parametrix::{diag_heat_fit, resolved_sign_variant, u0_expansion_check, u1_diag, SignVariant};
use heatlab_core::quadrature::QuadratureGrid;
use heatlab_core::spectrum::{weyl_fit, SpectralBasis};
use heatlab_core::{ModelGeometry, ModelSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("experiment could not reach a verdict: {0}")]
    Science(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_INVALID_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Science(_) => EXIT_SCIENCE,
        }
    }
}

impl From<heatlab_core::Error> for CliError {
    fn from(e: heatlab_core::Error) -> CliError {
        match e {
            heatlab_core::Error::Inconclusive(_) | heatlab_core::Error::Fit(_) => CliError::Science(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub const EXIT_PASS: u8 = 0;
pub const EXIT_SCIENCE: u8 = 2;
pub const EXIT_INVALID_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Expand,
    Divfree,
    Identity,
    Volume,
    Parametrix,
    Suspension,
    Shorttime,
    SpectrumDump,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Expand,
        Experiment::Divfree,
        Experiment::Identity,
        Experiment::Volume,
        Experiment::Parametrix,
        Experiment::Suspension,
        Experiment::Shorttime,
        Experiment::SpectrumDump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Expand => "expand",
            Experiment::Divfree => "divfree",
            Experiment::Identity => "identity",
            Experiment::Volume => "volume",
            Experiment::Parametrix => "parametrix",
            Experiment::Suspension => "suspension",
            Experiment::Shorttime => "shorttime",
            Experiment::SpectrumDump => "spectrum-dump",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Expand => "small-t fit of the rescaled pullback metric against e^f g and the weighted Einstein tensor",
            Experiment::Divfree => "limits of the pairing of T_t with the Hessians of eigenfunctions",
            Experiment::Identity => "exact integral identities for the pullback metric paired with dφ_k",
            Experiment::Volume => "small-ball weighted volume expansion and ball-normalized pullback fit",
            Experiment::Parametrix => "u_0 expansion and the sign of u_1 from the heat diagonal",
            Experiment::Suspension => "curvature L² growth on the spherical suspension",
            Experiment::Shorttime => "short-time limits of the heat diagonal",
            Experiment::SpectrumDump => "eigenvalues of the model",
        }
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Experiment, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}`")))
    }
}

/// `t0, t0·ratio, …`, decreasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub ratio: f64,
    pub count: usize,
}

/// Log-spaced cutoffs from `start` down to `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffGrid {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quadrature {
    /// Nodes per periodic direction (or per polar direction on spheres).
    pub nodes: usize,
    /// Eigenmodes kept in the spectral basis.
    pub basis_modes: usize,
    /// Galerkin dimension for weighted circles.
    pub galerkin: usize,
    /// Probe points for tensor fits.
    pub probe_points: usize,
    /// Spherical-harmonic degree for sphere eigenfunctions.
    pub sphere_degree: usize,
}

impl Default for Quadrature {
    fn default() -> Quadrature {
        Quadrature {
            nodes: 1024,
            basis_modes: 601,
            galerkin: 640,
            probe_points: 32,
            sphere_degree: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub order0: f64,
    pub order1: f64,
    pub identity: f64,
    pub vanishing: f64,
    pub limit_match: f64,
    pub growth_exponent: f64,
    pub shorttime: f64,
}

impl Default for Tolerances {
    fn default() -> Tolerances {
        Tolerances {
            order0: 1e-3,
            order1: 0.02,
            identity: 1e-8,
            vanishing: 1e-3,
            limit_match: 0.05,
            growth_exponent: 0.05,
            shorttime: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<TimeGrid>,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_grid: Option<CutoffGrid>,
    /// Eigenfunction indices for `divfree` and `identity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<usize>>,
    /// Evaluation point for single-point experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
}

fn default_truncation_tol() -> f64 {
    1e-12
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let g = self.t_grid.unwrap_or(match self.model {
            ModelSpec::RoundSphere { .. } => TimeGrid {
                t0: 1e-2,
                ratio: 10f64.powf(-1.0 / 7.0),
                count: 8,
            },
            _ => TimeGrid {
                t0: 0.02,
                ratio: 0.5,
                count: 6,
            },
        });
        geometric_grid(g.t0, g.ratio, g.count)
    }

    pub fn cutoffs(&self) -> Vec<f64> {
        let c = self.epsilon_grid.unwrap_or(CutoffGrid {
            start: 0.1,
            end: 0.003,
            count: 12,
        });
        log_grid(c.start, c.end, c.count)
    }

    pub fn mode_list(&self) -> Vec<usize> {
        self.modes.clone().unwrap_or_else(|| vec![1, 2, 3, 4, 5])
    }

    /// Checks everything that can be checked without running the experiment.
    pub fn validate(&self) -> Result<ModelGeometry, CliError> {
        let model = ModelGeometry::build(self.model.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("truncation_tol", self.truncation_tol)?;
        if let Some(g) = self.t_grid {
            positive("t_grid.t0", g.t0)?;
            positive("t_grid.ratio", g.ratio)?;
            if g.ratio >= 1.0 {
                return Err(CliError::Config("t_grid.ratio must be below 1".into()));
            }
            if g.count < 5 {
                return Err(CliError::Config("t_grid.count must be at least 5".into()));
            }
        }
        let q = self.quadrature;
        for (name, v) in [
            ("quadrature.nodes", q.nodes),
            ("quadrature.basis_modes", q.basis_modes),
            ("quadrature.galerkin", q.galerkin),
            ("quadrature.probe_points", q.probe_points),
            ("quadrature.sphere_degree", q.sphere_degree),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        let t = self.tolerances;
        for (name, v) in [
            ("tolerances.order0", t.order0),
            ("tolerances.order1", t.order1),
            ("tolerances.identity", t.identity),
            ("tolerances.vanishing", t.vanishing),
            ("tolerances.limit_match", t.limit_match),
            ("tolerances.growth_exponent", t.growth_exponent),
            ("tolerances.shorttime", t.shorttime),
        ] {
            positive(name, v)?;
        }
        if let Some(c) = self.epsilon_grid {
            positive("epsilon_grid.start", c.start)?;
            positive("epsilon_grid.end", c.end)?;
            if c.count < 3 {
                return Err(CliError::Config("epsilon_grid.count must be at least 3".into()));
            }
        }
        if let Some(x) = &self.point {
            model.check_point(x).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(ks) = &self.modes {
            if ks.is_empty() {
                return Err(CliError::Config("modes must not be empty".into()));
            }
            if let Some(k) = ks.iter().find(|k| **k >= q.basis_modes) {
                return Err(CliError::Config(format!("mode {k} is outside a basis of {}", q.basis_modes)));
            }
        }
        let suspension = matches!(self.model, ModelSpec::SphericalSuspension { .. });
        let circle = matches!(self.model, ModelSpec::FlatCircle { .. });
        let unsupported = match self.experiment {
            Experiment::Suspension => !suspension,
            Experiment::Identity => !circle,
            Experiment::Divfree | Experiment::Expand | Experiment::Shorttime | Experiment::SpectrumDump => suspension,
            Experiment::Volume | Experiment::Parametrix => suspension,
        };
        if unsupported {
            return Err(CliError::Config(format!(
                "experiment `{}` does not support model `{}`",
                self.experiment.name(),
                model.name()
            )));
        }
        if let ModelSpec::SphericalSuspension { pole_cutoff, .. } = self.model {
            for e in self.cutoffs() {
                if e < pole_cutoff || e >= std::f64::consts::FRAC_PI_2 {
                    return Err(CliError::Config(format!("cutoff {e} must lie in [{pole_cutoff}, π/2)")));
                }
            }
        }
        Ok(model)
    }
}

/// A named CSV file with its header and rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<CsvValue>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CsvValue {
    Int(usize),
    Float(f64),
}

impl Series {
    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match v {
                    CsvValue::Int(k) => write!(out, "{k}").unwrap(),
                    CsvValue::Float(x) => write!(out, "{x:.16e}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Result of a run before anything touches the filesystem.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub passed: bool,
    pub report: Value,
    pub series: Vec<Series>,
}

impl RunOutput {
    pub fn exit_code(&self) -> u8 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_SCIENCE
        }
    }
}

fn basis_for(model: &ModelGeometry, cfg: &RunConfig) -> Result<Option<SpectralBasis>, CliError> {
    let q = cfg.quadrature;
    Ok(match cfg.model {
        ModelSpec::RoundSphere { .. } => None,
        ModelSpec::SphericalSuspension { .. } => None,
        _ => Some(SpectralBasis::for_model(model, q.basis_modes, q.galerkin)?),
    })
}

fn point_for(model: &ModelGeometry, cfg: &RunConfig) -> Vec<f64> {
    cfg.point.clone().unwrap_or_else(|| default_points(model, 1).remove(0))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Evaluates the configured experiment.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let model = cfg.validate()?;
    let tol = cfg.truncation_tol;
    let t_grid = cfg.time_grid();
    let tols = cfg.tolerances;
    let (passed, report, series) = match cfg.experiment {
        Experiment::Expand => {
            let basis = basis_for(&model, cfg)?;
            let points = default_points(&model, cfg.quadrature.probe_points);
            let variant = resolved_sign_variant()?;
            let r = bbg_fit(&model, basis.as_ref(), &points, &t_grid, tol, variant, tols.order0, tols.order1)?;
            let mut rows = Vec::new();
            for (t, per_point) in t_grid.iter().zip(&r.curves) {
                for (p, comps) in per_point.iter().enumerate() {
                    for (c, v) in comps.iter().enumerate() {
                        rows.push(vec![CsvValue::Float(*t), CsvValue::Int(p), CsvValue::Int(c), CsvValue::Float(*v)]);
                    }
                }
            }
            let series = vec![Series {
                file: "expand.csv".into(),
                header: vec!["t", "grid_index", "component", "value"],
                rows,
            }];
            (r.passed, to_value(&r), series)
        }
        Experiment::Divfree => {
            let basis = match basis_for(&model, cfg)? {
                Some(b) => b,
                None => SpectralBasis::sphere(&model, cfg.quadrature.sphere_degree)?,
            };
            let ks = cfg.mode_list();
            let nodes = if model.dim() == 1 { cfg.quadrature.nodes } else { cfg.quadrature.nodes.min(48) };
            let grid = QuadratureGrid::for_model(&model, nodes)?;
            let r = wadf_experiment(&model, &basis, &ks, &t_grid, &grid, tol, tols.vanishing)?;
            let passed = if model.has_constant_weight() {
                r.verdict == Verdict::Vanishes
            } else {
                r.forms.iter().any(|f| {
                    f.verdict == Verdict::Nonzero
                        && ((f.limit - f.predicted_limit) / f.predicted_limit).abs() <= tols.limit_match
                })
            };
            let mut rows = Vec::new();
            for (i, t) in t_grid.iter().enumerate() {
                for f in &r.forms {
                    rows.push(vec![CsvValue::Float(*t), CsvValue::Int(f.k), CsvValue::Float(f.d_values[i])]);
                }
            }
            let series = vec![Series {
                file: "divfree.csv".into(),
                header: vec!["t", "k", "D_t"],
                rows,
            }];
            (passed, to_value(&r), series)
        }
        Experiment::Identity => {
            let basis = basis_for(&model, cfg)?.expect("circle models carry a basis");
            let grid = QuadratureGrid::for_model(&model, cfg.quadrature.nodes)?;
            let reps = key_identity_batch(&model, &basis, &cfg.mode_list(), &t_grid, &grid, tol)?;
            let passed = reps.iter().all(|r| r.max_relative_gap <= tols.identity);
            let mut rows = Vec::new();
            for r in &reps {
                for row in &r.rows {
                    rows.push(vec![
                        CsvValue::Float(row.t),
                        CsvValue::Int(r.k),
                        CsvValue::Float(row.lhs),
                        CsvValue::Float(row.rhs_technical),
                        CsvValue::Float(row.rhs_divfree),
                    ]);
                }
            }
            let series = vec![Series {
                file: "identity.csv".into(),
                header: vec!["t", "k", "lhs", "rhs_technical", "rhs_divfree"],
                rows,
            }];
            (passed, to_value(&reps), series)
        }
        Experiment::Volume => {
            let x = point_for(&model, cfg);
            let radii = log_grid(0.02, 0.2, 10);
            let expansion = model.volume_expansion_check(&x, &radii)?;
            let basis = basis_for(&model, cfg)?;
            let normalized = weighted_volume_normalization_fit(&model, basis.as_ref(), &x, &log_grid(1e-3, 1e-2, 8), tol)?;
            let rows = radii
                .iter()
                .zip(&expansion.ratios)
                .zip(&expansion.residuals)
                .map(|((r, q), e)| vec![CsvValue::Float(*r), CsvValue::Float(*q), CsvValue::Float(*e)])
                .collect();
            let series = vec![Series {
                file: "volume.csv".into(),
                header: vec!["r", "ratio", "residual"],
                rows,
            }];
            (
                expansion.passed && normalized.passed,
                json!({ "expansion": expansion, "normalized_pullback": normalized }),
                series,
            )
        }
        Experiment::Parametrix => {
            let x = point_for(&model, cfg);
            let n = model.dim();
            let mut v = vec![0.0; n];
            v[0] = 1.0 / model.metric_diag(&x)[0].sqrt();
            let u0 = u0_expansion_check(&model, &x, &v, &log_grid(0.02, 0.2, 8))?;
            let basis = basis_for(&model, cfg)?;
            let fit = diag_heat_fit(&model, basis.as_ref(), &x, &t_grid, tol)?;
            let variant = fit.resolved_variant.unwrap_or(SignVariant::Proof);
            let u1 = u1_diag(&model, &x, variant);
            let passed = u0.passed && (fit.a1 - u1).abs() <= 2.0 * fit.residual.max(1e-12);
            let rows = t_grid
                .iter()
                .zip(&fit.samples)
                .map(|(t, s)| vec![CsvValue::Float(*t), CsvValue::Float(*s)])
                .collect();
            let series = vec![Series {
                file: "parametrix.csv".into(),
                header: vec!["t", "normalized_diagonal"],
                rows,
            }];
            (passed, json!({ "u0_expansion": u0, "diagonal_fit": fit, "u1_diagonal": u1 }), series)
        }
        Experiment::Suspension => {
            let eps = cfg.cutoffs();
            let r = suspension_blowup(&model, &eps, tols.growth_exponent)?;
            let rows = eps
                .iter()
                .zip(&r.scal_l2)
                .zip(&r.einstein_lower_bound)
                .map(|((e, i), lb)| vec![CsvValue::Float(*e), CsvValue::Float(*i), CsvValue::Float(*lb)])
                .collect();
            let series = vec![Series {
                file: "suspension.csv".into(),
                header: vec!["epsilon", "scal_l2", "einstein_lower_bound"],
                rows,
            }];
            (r.passed, to_value(&r), series)
        }
        Experiment::Shorttime => {
            let x = point_for(&model, cfg);
            let basis = basis_for(&model, cfg)?;
            let r = shorttime_diag(&model, basis.as_ref(), &x, &t_grid, tol)?;
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            let passed = rel(r.scaled_diag_limit, r.scaled_diag_predicted) <= tols.shorttime
                && rel(r.ball_product_limit, r.ball_product_predicted) <= tols.shorttime;
            let rows = t_grid
                .iter()
                .zip(r.scaled_diag.iter().zip(&r.ball_product))
                .map(|(t, (a, b))| vec![CsvValue::Float(*t), CsvValue::Float(*a), CsvValue::Float(*b)])
                .collect();
            let series = vec![Series {
                file: "shorttime.csv".into(),
                header: vec!["t", "scaled_diag", "ball_product"],
                rows,
            }];
            (passed, to_value(&r), series)
        }
        Experiment::SpectrumDump => {
            let basis = match basis_for(&model, cfg)? {
                Some(b) => b,
                None => SpectralBasis::sphere(&model, cfg.quadrature.sphere_degree)?,
            };
            let weyl = weyl_fit(&basis)?;
            let rows = basis
                .lambdas()
                .iter()
                .enumerate()
                .map(|(i, l)| vec![CsvValue::Int(i), CsvValue::Float(*l)])
                .collect();
            let series = vec![Series {
                file: "spectrum.csv".into(),
                header: vec!["index", "lambda"],
                rows,
            }];
            (true, json!({ "modes": basis.len(), "weyl_constant": weyl, "lambdas": basis.lambdas() }), series)
        }
    };
    let report = json!({
        "experiment": cfg.experiment.name(),
        "model": model.key(),
        "passed": passed,
        "config": cfg,
        "result": report,
    });
    Ok(RunOutput { passed, report, series })
}

/// Writes `report.json` and the series into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&out.report).expect("reports serialize");
    text.push('\n');
    fs::write(&report, text)?;
    written.push(report);
    for s in &out.series {
        let path = dir.join(&s.file);
        fs::write(&path, s.render())?;
        written.push(path);
    }
    Ok(written)
}
