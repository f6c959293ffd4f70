//! Scoring, the polynomial baseline, Pearson functional networks, runtime
//! measurement and the corruption/train/score experiment driver.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    EvalCase, GeneratorSpec, MissingMode, MixedCorruption, Period, SignalSample, Target,
    apply_mixed_corruption, corrupt_frequency, corrupt_missing, corrupt_offset, generate, split,
    stream_rng,
};
use crate::diffmath::Array2;
use crate::error::{Error, Result, config, contract};
use crate::relgraphs::build_spatial_graph;
use crate::training::{Executor, ModelParams, TrainConfig, predict_targets, train};

/// Root mean squared difference.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.is_empty() || truth.is_empty() {
        return Err(contract("RMSE of an empty list"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            op: "rmse",
            left: (predicted.len(), 1),
            right: (truth.len(), 1),
        });
    }
    let sq: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

/// Least-squares polynomial in a rescaled time variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    /// Coefficients of `1, s, s², …` with `s = (t − center) / half_width`.
    pub coeffs: Vec<f64>,
    pub center: f64,
    pub half_width: f64,
    pub requested_degree: usize,
}

impl PolyFit {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// True when the fit had to fall back to a lower degree.
    pub fn degraded(&self) -> bool {
        self.degree() < self.requested_degree
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Fits `ys ≈ p(ts)` by normal equations, lowering the degree until the
/// system is well posed.
pub fn fit_polynomial(ts: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if ts.len() != ys.len() {
        return Err(Error::Dimension {
            op: "fit_polynomial",
            left: (ts.len(), 1),
            right: (ys.len(), 1),
        });
    }
    if ts.is_empty() {
        return Err(contract("polynomial fit needs at least one point"));
    }
    let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let half_width = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let scaled: Vec<f64> = ts.iter().map(|t| (t - center) / half_width).collect();
    let mut d = degree.min(ts.len() - 1);
    loop {
        if let Some(coeffs) = solve_normal_equations(&scaled, ys, d) {
            return Ok(PolyFit {
                coeffs,
                center,
                half_width,
                requested_degree: degree,
            });
        }
        if d == 0 {
            return Err(contract("polynomial fit failed at degree 0"));
        }
        d -= 1;
    }
}

fn solve_normal_equations(s: &[f64], ys: &[f64], degree: usize) -> Option<Vec<f64>> {
    let m = degree + 1;
    let mut power_sums = vec![0.0; 2 * m - 1];
    let mut rhs = vec![0.0; m];
    for (&x, &y) in s.iter().zip(ys) {
        let mut p = 1.0;
        for (k, ps) in power_sums.iter_mut().enumerate() {
            *ps += p;
            if k < m {
                rhs[k] += p * y;
            }
            p *= x;
        }
    }
    let mut a: Vec<Vec<f64>> = (0..m).map(|i| power_sums[i..i + m].to_vec()).collect();
    let scale = power_sums[0];
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let tail: f64 = (i + 1..m).map(|k| a[i][k] * x[k]).sum();
        x[i] = (rhs[i] - tail) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Polynomial-baseline predictions for a set of targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyPrediction {
    pub values: Vec<f64>,
    /// ROIs whose fit used a lower degree than requested.
    pub degraded_rois: Vec<usize>,
}

/// Per-ROI least-squares polynomial over the observed points, evaluated at
/// each target.
pub fn poly_baseline(
    sample: &SignalSample,
    degree: usize,
    targets: &[Target],
) -> Result<PolyPrediction> {
    let mut fits = Vec::with_capacity(sample.n_rois());
    let mut degraded_rois = Vec::new();
    for (r, series) in sample.rois.iter().enumerate() {
        let (ts, ys): (Vec<f64>, Vec<f64>) = series.observed().map(|p| (p.t, p.value)).unzip();
        let fit = fit_polynomial(&ts, &ys, degree)?;
        if fit.degraded() {
            degraded_rois.push(r);
        }
        fits.push(fit);
    }
    let values = targets
        .iter()
        .map(|t| {
            fits.get(t.roi)
                .map(|f| f.eval(t.t))
                .ok_or_else(|| contract(format!("target ROI {} out of range", t.roi)))
        })
        .collect::<Result<_>>()?;
    Ok(PolyPrediction {
        values,
        degraded_rois,
    })
}

/// Pearson correlation matrix between ROI signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalNetwork {
    pub correlation: Array2,
    /// Rows with zero variance; their off-diagonal correlations are 0.
    pub constant_rows: Vec<usize>,
}

pub fn pearson_network(signals: &Array2) -> Result<FunctionalNetwork> {
    let (n, t) = signals.shape();
    if t < 2 {
        return Err(contract(format!(
            "Pearson correlation needs at least 2 time points, got {t}"
        )));
    }
    let mut centered = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut constant_rows = Vec::new();
    for i in 0..n {
        let row = signals.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = row
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        if norm <= 1e-12 * scale * (t as f64).sqrt() {
            constant_rows.push(i);
        }
        centered.push(c);
        norms.push(norm);
    }
    let mut correlation = Array2::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let r = if constant_rows.contains(&i) || constant_rows.contains(&j) {
                0.0
            } else {
                let dot: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            correlation.set(i, j, r);
            correlation.set(j, i, r);
        }
    }
    Ok(FunctionalNetwork {
        correlation,
        constant_rows,
    })
}

/// Monotone wall clock supplied by the host.
pub trait Clock {
    fn now_seconds(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub mean: f64,
    pub std: f64,
    pub samples: Vec<f64>,
}

impl RuntimeStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&samples);
        Self { mean, std, samples }
    }
}

/// Times `repetitions` runs of `task` after one untimed warm-up run.
pub fn measure_runtime<C, F>(clock: &C, repetitions: usize, mut task: F) -> Result<RuntimeStats>
where
    C: Clock + ?Sized,
    F: FnMut() -> Result<()>,
{
    if repetitions == 0 {
        return Err(config("repetitions must be at least 1"));
    }
    task()?;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = clock.now_seconds();
        task()?;
        samples.push((clock.now_seconds() - start).max(0.0));
    }
    Ok(RuntimeStats::from_samples(samples))
}

/// Population mean and standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MissingInterp,
    MissingExtrap,
    Offset,
    Frequency,
    Rq1Mixed,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::MissingInterp,
        ExperimentKind::MissingExtrap,
        ExperimentKind::Offset,
        ExperimentKind::Frequency,
        ExperimentKind::Rq1Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MissingInterp => "missing-interp",
            ExperimentKind::MissingExtrap => "missing-extrap",
            ExperimentKind::Offset => "offset",
            ExperimentKind::Frequency => "frequency",
            ExperimentKind::Rq1Mixed => "rq1-mixed",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == text)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                config(format!(
                    "unknown experiment kind '{text}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }

    pub fn default_params(self) -> Vec<String> {
        let p: &[&str] = match self {
            ExperimentKind::MissingInterp | ExperimentKind::MissingExtrap => &["3", "5"],
            ExperimentKind::Offset => &["0.1", "0.2", "0.3"],
            ExperimentKind::Frequency => &["2/3", "1/2", "1/3"],
            ExperimentKind::Rq1Mixed => &["mixed"],
        };
        p.iter().map(|s| s.to_string()).collect()
    }
}

/// A sweep setting given either as a JSON number or a string such as `"2/3"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl ParamValue {
    pub fn label(&self) -> String {
        match self {
            ParamValue::Number(v) => format!("{v}"),
            ParamValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Sweep values; empty means the kind's defaults.
    pub params: Vec<ParamValue>,
    pub seeds: usize,
    pub master_seed: u64,
    pub generator: GeneratorSpec,
    pub train: TrainConfig,
    pub poly_degrees: Vec<usize>,
    /// Spatial-graph distance threshold; the atlas's 20th distance
    /// percentile when absent.
    pub spatial_threshold: Option<f64>,
    pub mixed: MixedCorruption,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::MissingInterp,
            params: Vec::new(),
            seeds: 5,
            master_seed: 0,
            generator: GeneratorSpec::default(),
            train: TrainConfig::default(),
            poly_degrees: (1..=5).collect(),
            spatial_threshold: None,
            mixed: MixedCorruption::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn param_labels(&self) -> Vec<String> {
        if self.params.is_empty() {
            self.kind.default_params()
        } else {
            self.params.iter().map(ParamValue::label).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(config("seeds must be at least 1"));
        }
        self.generator.validate()?;
        self.train.validate()?;
        for label in self.param_labels() {
            Setting::parse(self.kind, &label)?;
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum Setting {
    Missing(MissingMode, usize),
    Offset(f64),
    Frequency(Period),
    Mixed,
}

impl Setting {
    fn parse(kind: ExperimentKind, label: &str) -> Result<Self> {
        let bad = || config(format!("invalid parameter '{label}' for {}", kind.name()));
        Ok(match kind {
            ExperimentKind::MissingInterp | ExperimentKind::MissingExtrap => {
                let steps = label.trim().parse::<usize>().map_err(|_| bad())?;
                let mode = if kind == ExperimentKind::MissingInterp {
                    MissingMode::Interpolation
                } else {
                    MissingMode::Extrapolation
                };
                Setting::Missing(mode, steps)
            }
            ExperimentKind::Offset => {
                let v = label.trim().parse::<f64>().map_err(|_| bad())?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad());
                }
                Setting::Offset(v)
            }
            ExperimentKind::Frequency => Setting::Frequency(Period::parse(label)?),
            ExperimentKind::Rq1Mixed => Setting::Mixed,
        })
    }
}

pub const MODEL_NAME: &str = "model";
pub const POLY_BEST_NAME: &str = "poly-best";

pub fn poly_name(degree: usize) -> String {
    format!("poly-d{degree}")
}

/// Score of one method for one seed and setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub param: String,
    pub model: String,
    /// `None` for an empty target set or a diverged run.
    pub rmse: Option<f64>,
    pub targets: usize,
    pub diverged: bool,
    pub degraded_fits: usize,
}

/// Aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    pub param: String,
    pub model: String,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    /// Runs contributing to the aggregate.
    pub runs: usize,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<SeedRun>,
    /// Wall-clock seconds, filled by hosts that have a clock.
    pub runtime_seconds: Option<f64>,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn row(&self, param: &str, model: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.param == param && r.model == model)
    }

    /// Per-seed RMSEs for one `(param, model)`, in seed order.
    pub fn seed_rmses(&self, param: &str, model: &str) -> Vec<Option<f64>> {
        self.runs
            .iter()
            .filter(|r| r.param == param && r.model == model)
            .map(|r| r.rmse)
            .collect()
    }
}

/// Splits data for one seed and returns cases for each partition.
struct SeedData {
    samples: Vec<SignalSample>,
    spatial: Array2,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

fn seed_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let generator = GeneratorSpec {
        seed,
        ..cfg.generator.clone()
    };
    let samples = generate(&generator)?;
    let atlas = generator.atlas();
    let threshold = cfg
        .spatial_threshold
        .unwrap_or_else(|| atlas.default_threshold());
    let spatial = build_spatial_graph(&atlas, threshold)?.adjacency;
    let parts = split(samples.len(), seed)?;
    Ok(SeedData {
        samples,
        spatial,
        train_idx: parts.train,
        val_idx: parts.validation,
        test_idx: parts.test,
    })
}

fn pick(cases: &[EvalCase], idx: &[usize]) -> Vec<EvalCase> {
    idx.iter().map(|&i| cases[i].clone()).collect()
}

struct Scores {
    model: Option<f64>,
    diverged: bool,
    poly: Vec<(usize, Option<f64>, usize)>,
    targets: usize,
}

fn pooled_rmse(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    rmse(&p, &t).ok()
}

fn score_cases<E: Executor>(
    cases: &[EvalCase],
    params: Option<&ModelParams>,
    spatial: &Array2,
    cfg: &ExperimentConfig,
    exec: &E,
) -> Result<Scores> {
    let targets: usize = cases.iter().map(|c| c.targets.len()).sum();
    let mut poly = Vec::new();
    for &d in &cfg.poly_degrees {
        let mut pairs = Vec::with_capacity(targets);
        let mut degraded = 0;
        for c in cases {
            let pred = poly_baseline(&c.sample, d, &c.targets)?;
            degraded += pred.degraded_rois.len();
            pairs.extend(
                pred.values
                    .iter()
                    .zip(&c.targets)
                    .map(|(p, t)| (*p, t.value)),
            );
        }
        poly.push((d, pooled_rmse(&pairs), degraded));
    }
    let (model, diverged) = match params {
        None => (None, true),
        Some(p) => {
            let preds = exec.map(cases.len(), |i| {
                predict_targets(&cases[i].sample, &cases[i].targets, p, spatial, &cfg.train)
            });
            let mut pairs = Vec::with_capacity(targets);
            let mut diverged = false;
            for (c, pred) in cases.iter().zip(preds) {
                match pred {
                    Ok(v) => pairs.extend(v.iter().zip(&c.targets).map(|(p, t)| (*p, t.value))),
                    Err(Error::Divergence { .. }) => diverged = true,
                    Err(e) => return Err(e),
                }
            }
            let score = pooled_rmse(&pairs).filter(|v| v.is_finite());
            if diverged || (!pairs.is_empty() && score.is_none()) {
                (None, true)
            } else {
                (score, false)
            }
        }
    };
    Ok(Scores {
        model,
        diverged,
        poly,
        targets,
    })
}

fn train_or_flag<E: Executor>(
    train_cases: &[EvalCase],
    val_cases: &[EvalCase],
    spatial: &Array2,
    cfg: &ExperimentConfig,
    seed: u64,
    exec: &E,
) -> Result<Option<ModelParams>> {
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    match train(train_cases, val_cases, spatial, &tc, exec) {
        Ok(out) => Ok(Some(out.params)),
        Err(Error::TrainingDiverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn push_scores(runs: &mut Vec<SeedRun>, seed: u64, param: &str, scores: Scores) {
    runs.push(SeedRun {
        seed,
        param: param.to_string(),
        model: MODEL_NAME.to_string(),
        rmse: scores.model,
        targets: scores.targets,
        diverged: scores.diverged,
        degraded_fits: 0,
    });
    for (d, rmse, degraded) in scores.poly {
        runs.push(SeedRun {
            seed,
            param: param.to_string(),
            model: poly_name(d),
            rmse,
            targets: scores.targets,
            diverged: false,
            degraded_fits: degraded,
        });
    }
}

fn run_seed<E: Executor>(cfg: &ExperimentConfig, seed: u64, exec: &E) -> Result<Vec<SeedRun>> {
    let data = seed_data(cfg, seed)?;
    let labels = cfg.param_labels();
    let settings: Vec<Setting> = labels
        .iter()
        .map(|l| Setting::parse(cfg.kind, l))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    let clean: Vec<EvalCase> = data.samples.iter().cloned().map(EvalCase::clean).collect();

    // Offset and frequency sweeps share one model trained on clean data.
    let shared = match cfg.kind {
        ExperimentKind::Offset | ExperimentKind::Frequency => train_or_flag(
            &pick(&clean, &data.train_idx),
            &pick(&clean, &data.val_idx),
            &data.spatial,
            cfg,
            seed,
            exec,
        )?
        .map(Some)
        .unwrap_or(None),
        _ => None,
    };

    for (label, setting) in labels.iter().zip(settings) {
        let scores = match setting {
            Setting::Missing(mode, steps) => {
                let mut rng = stream_rng(seed, 0xA000 + steps as u64);
                let cases = data
                    .samples
                    .iter()
                    .map(|s| corrupt_missing(s, mode, steps, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let test = pick(&cases, &data.test_idx);
                let empty = test.iter().all(|c| c.targets.is_empty());
                let params = if empty {
                    None
                } else {
                    train_or_flag(
                        &pick(&cases, &data.train_idx),
                        &pick(&cases, &data.val_idx),
                        &data.spatial,
                        cfg,
                        seed,
                        exec,
                    )?
                };
                let mut s = score_cases(&test, params.as_ref(), &data.spatial, cfg, exec)?;
                if empty {
                    s.diverged = false;
                }
                s
            }
            Setting::Offset(offset) => {
                let test = data
                    .test_idx
                    .iter()
                    .map(|&i| corrupt_offset(&data.samples[i], offset))
                    .collect::<Result<Vec<_>>>()?;
                score_cases(&test, shared.as_ref(), &data.spatial, cfg, exec)?
            }
            Setting::Frequency(period) => {
                let test = data
                    .test_idx
                    .iter()
                    .map(|&i| corrupt_frequency(&data.samples[i], period))
                    .collect::<Result<Vec<_>>>()?;
                score_cases(&test, shared.as_ref(), &data.spatial, cfg, exec)?
            }
            Setting::Mixed => {
                let cases: Vec<EvalCase> = apply_mixed_corruption(&data.samples, &cfg.mixed, seed)?
                    .into_iter()
                    .map(|(_, c)| c)
                    .collect();
                let params = train_or_flag(
                    &pick(&cases, &data.train_idx),
                    &pick(&cases, &data.val_idx),
                    &data.spatial,
                    cfg,
                    seed,
                    exec,
                )?;
                score_cases(
                    &pick(&cases, &data.test_idx),
                    params.as_ref(),
                    &data.spatial,
                    cfg,
                    exec,
                )?
            }
        };
        push_scores(&mut runs, seed, label, scores);
    }
    Ok(runs)
}

fn aggregate(setting: &str, param: &str, model: &str, runs: &[&SeedRun]) -> ReportRow {
    let values: Vec<f64> = runs.iter().filter_map(|r| r.rmse).collect();
    let mut flags = Vec::new();
    let diverged = runs.iter().filter(|r| r.diverged).count();
    if diverged > 0 {
        flags.push(format!("diverged:{diverged}"));
    }
    if runs.iter().all(|r| r.targets == 0) {
        flags.push("empty-targets".to_string());
    }
    let degraded: usize = runs.iter().map(|r| r.degraded_fits).sum();
    if degraded > 0 {
        flags.push(format!("degraded-fits:{degraded}"));
    }
    let (mean, std) = mean_std(&values);
    ReportRow {
        setting: setting.to_string(),
        param: param.to_string(),
        model: model.to_string(),
        rmse_mean: (!values.is_empty()).then_some(mean),
        rmse_std: (!values.is_empty()).then_some(std),
        runs: values.len(),
        flags,
    }
}

/// Runs every seed `master_seed + s` of the experiment and aggregates the
/// model and polynomial scores per setting.
pub fn run_experiment<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<EvalReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64)
        .map(|s| cfg.master_seed.wrapping_add(s))
        .collect();
    let mut runs = Vec::new();
    for &seed in &seeds {
        runs.extend(run_seed(cfg, seed, exec)?);
    }
    let setting = cfg.kind.name();
    let mut rows = Vec::new();
    for param in cfg.param_labels() {
        let mut names = vec![MODEL_NAME.to_string()];
        names.extend(cfg.poly_degrees.iter().map(|&d| poly_name(d)));
        let mut poly_rows = Vec::new();
        for name in names {
            let matching: Vec<&SeedRun> = runs
                .iter()
                .filter(|r| r.param == param && r.model == name)
                .collect();
            let row = aggregate(setting, &param, &name, &matching);
            if name != MODEL_NAME {
                poly_rows.push(row.clone());
            }
            rows.push(row);
        }
        let best = poly_rows
            .iter()
            .filter(|r| r.rmse_mean.is_some())
            .min_by(|a, b| a.rmse_mean.unwrap().total_cmp(&b.rmse_mean.unwrap()));
        rows.push(match best {
            Some(b) => ReportRow {
                model: POLY_BEST_NAME.to_string(),
                flags: {
                    let mut f = b.flags.clone();
                    f.push(format!("best-of:{}", b.model));
                    f
                },
                ..b.clone()
            },
            None => aggregate(setting, &param, POLY_BEST_NAME, &[]),
        });
    }
    Ok(EvalReport {
        setting: setting.to_string(),
        seeds,
        rows,
        runs,
        runtime_seconds: None,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Sequential;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rmse(&[], &[]), Err(Error::Contract(_))));
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn polynomial_exact_recovery() {
        let ts = [0.0, 1.0, 2.0, 5.0];
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t + 1.0).collect();
        let f = fit_polynomial(&ts, &ys, 1).unwrap();
        for t in [-3.0, 0.5, 17.0] {
            assert!((f.eval(t) - (2.0 * t + 1.0)).abs() < 1e-9);
        }
        let ts = [1.0, 2.0, 4.0];
        let ys: Vec<f64> = ts.iter().map(|t| t * t - 3.0 * t).collect();
        let f = fit_polynomial(&ts, &ys, 2).unwrap();
        assert!((f.eval(3.0) - 0.0).abs() < 1e-9);
        assert!(!f.degraded());
    }

    #[test]
    fn polynomial_degrades_on_repeated_times() {
        let f = fit_polynomial(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], 2).unwrap();
        assert!(f.degraded());
        assert_eq!(f.degree(), 0);
        assert!((f.eval(9.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn polynomial_extrapolation_diverges() {
        let ts: Vec<f64> = (0..=10).map(|t| t as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| t.sin()).collect();
        let f = fit_polynomial(&ts, &ys, 5).unwrap();
        assert!((f.eval(13.0) - 13f64.sin()).abs() > 1.0);
    }

    #[test]
    fn pearson_examples() {
        let s = Array2::from_rows(&[[1.0, 2.0, 4.0], [1.0, 2.0, 4.0], [-1.0, -2.0, -4.0]]).unwrap();
        let net = pearson_network(&s).unwrap();
        assert!((net.correlation.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((net.correlation.get(0, 2) + 1.0).abs() < 1e-12);
        let c = Array2::from_rows(&[[3.0, 3.0], [5.0, 5.0]]).unwrap();
        let net = pearson_network(&c).unwrap();
        assert_eq!(net.correlation.get(0, 1), 0.0);
        assert_eq!(net.constant_rows, [0, 1]);
        assert!(pearson_network(&Array2::zeros(2, 1)).is_err());
    }

    struct Ticks(core::cell::Cell<f64>);

    impl Clock for Ticks {
        fn now_seconds(&self) -> f64 {
            let t = self.0.get();
            self.0.set(t + 0.5);
            t
        }
    }

    #[test]
    fn runtime_single_repetition_has_zero_std() {
        let clock = Ticks(core::cell::Cell::new(0.0));
        let mut calls = 0;
        let stats = measure_runtime(&clock, 1, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.mean, 0.5);
        assert!(measure_runtime(&clock, 0, || Ok(())).is_err());
    }

    #[test]
    fn unknown_kind_lists_valid_kinds() {
        let Err(Error::Config(msg)) = ExperimentKind::parse("foo") else {
            panic!("expected a configuration error");
        };
        assert!(msg.contains("missing-interp") && msg.contains("rq1-mixed"));
        assert_eq!(
            ExperimentKind::parse("offset").unwrap(),
            ExperimentKind::Offset
        );
    }

    #[test]
    fn zero_steps_gives_empty_report() {
        let cfg = ExperimentConfig {
            seeds: 1,
            params: vec![ParamValue::Number(0.0)],
            generator: GeneratorSpec {
                n_rois: 2,
                n_samples: 5,
                duration: 8,
                ..GeneratorSpec::default()
            },
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg, &Sequential).unwrap();
        let row = report.row("0", MODEL_NAME).unwrap();
        assert_eq!(row.rmse_mean, None);
        assert!(row.flags.iter().any(|f| f == "empty-targets"));
    }
}
