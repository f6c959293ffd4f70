//! End-to-end model: encoders → relation graphs → posterior → RK4 → decoder,
//! the KL-regularized reconstruction loss, Adam, and the training loop.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{EvalCase, SignalSample, Target, stream_rng};
use crate::diffmath::{Array2, Gradients, Tape, Var};
use crate::encoder::{EncoderInput, EncoderParams, EncoderVars, INPUT_CHANNELS};
use crate::error::{Error, Result, config, contract};
use crate::latentode::{
    DecoderParams, DecoderVars, OdeFunctionParams, OdeVars, PosteriorHead, PosteriorVars,
    check_grid, kl_to_standard_normal, reparameterize, rk4_solve_rate,
};
use crate::relgraphs::{BranchCounters, GcnParams, GcnVars, GraphSwitches};

/// Layer widths.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Convolution filters `F`; also the positional-encoding width.
    pub filters: usize,
    pub kernel_size: usize,
    /// Attention key width `d_k`.
    pub key_dim: usize,
    /// Graph-convolution output width `d_g`; must equal `key_dim` so a
    /// disabled branch can pass `h` through.
    pub graph_dim: usize,
    /// Fused representation width `d_u`.
    pub fused_dim: usize,
    /// Latent state width `d_z`.
    pub latent_dim: usize,
    /// Hidden width of the vector field `d_h`.
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            filters: 16,
            kernel_size: 4,
            key_dim: 16,
            graph_dim: 16,
            fused_dim: 16,
            latent_dim: 32,
            hidden_dim: 64,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.filters,
            self.kernel_size,
            self.key_dim,
            self.graph_dim,
            self.fused_dim,
            self.latent_dim,
            self.hidden_dim,
        ];
        if all.contains(&0) {
            return Err(config("all model widths must be positive"));
        }
        if !self.filters.is_multiple_of(2) {
            return Err(config(
                "filter count must be even (it is the positional-encoding width)",
            ));
        }
        if self.graph_dim != self.key_dim {
            return Err(config("graph width must equal the attention key width"));
        }
        Ok(())
    }
}

/// Component switches for ablation runs.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_positional_encoder: bool,
    pub no_temporal_graph: bool,
    pub no_spatial_graph: bool,
}

impl Ablation {
    pub fn switches(self) -> GraphSwitches {
        GraphSwitches {
            temporal: !self.no_temporal_graph,
            spatial: !self.no_spatial_graph,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub kl_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// RK4 steps per unit time; an interval of length `Δ` takes
    /// `⌈Δ·substeps⌉` steps.
    pub substeps: usize,
    pub ablation: Ablation,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            kl_weight: 0.1,
            batch_size: 16,
            seed: 0,
            substeps: 2,
            ablation: Ablation::default(),
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(config("KL weight must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be at least 1"));
        }
        if self.substeps == 0 {
            return Err(config("substeps must be at least 1"));
        }
        self.dims.validate()
    }
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub gcn: GcnParams,
    pub posterior: PosteriorHead,
    pub ode: OdeFunctionParams,
    pub decoder: DecoderParams,
}

/// Initial posterior log-variance: a narrow posterior keeps early
/// reconstructions from being dominated by sampling noise.
const INIT_LOGVAR: f64 = -4.0;

const INIT_BAND: (f64, f64) = (0.3, 1.6);

/// Weights whose linearization at the origin is a block rotation with
/// angular frequencies log-spaced over `band`, so the initial flow is a bank
/// of undamped oscillators.
fn oscillator_field<R: Rng>(
    rng: &mut R,
    latent: usize,
    hidden: usize,
    band: (f64, f64),
) -> (Array2, Array2) {
    const GAIN: f64 = 0.5;
    // Orthonormal rows for the input layer (Gram-Schmidt on random rows).
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while rows.len() < latent {
        let mut r: Vec<f64> = (0..hidden).map(|_| rng.sample(StandardNormal)).collect();
        for q in &rows {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 || rows.len() >= hidden {
            rows.push(r.iter().map(|v| v / norm.max(1e-12)).collect());
        }
    }
    let w1 = Array2::from_fn(latent, hidden, |i, j| GAIN * rows[i][j]);
    let pairs = latent / 2;
    let mut rotation = Array2::zeros(latent, latent);
    for k in 0..pairs {
        let frac = if pairs > 1 {
            k as f64 / (pairs - 1) as f64
        } else {
            0.5
        };
        let omega = band.0 * (band.1 / band.0).powf(frac);
        rotation.set(2 * k, 2 * k + 1, omega);
        rotation.set(2 * k + 1, 2 * k, -omega);
    }
    // w1 · w2 = rotation because w1 · w1ᵀ = GAIN² · I.
    let w2 = Array2::from_fn(hidden, latent, |j, c| {
        (0..latent)
            .map(|i| rows[i][j] * rotation.get(i, c))
            .sum::<f64>()
            / GAIN
    });
    (w1, w2)
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_fn(rows, cols, |_, _| limit * (2.0 * rng.random::<f64>() - 1.0))
}

impl ModelParams {
    /// Seeded Glorot-uniform weights and zero biases.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = stream_rng(seed, 0x1417);
        let d = dims;
        let conv_width = INPUT_CHANNELS * d.kernel_size;
        let (w1, w2) = oscillator_field(&mut rng, d.latent_dim, d.hidden_dim, INIT_BAND);
        let mut w = |r: usize, c: usize| glorot(&mut rng, r, c, r, c);
        let w_q = w(d.filters, d.key_dim);
        let w_k = w(d.filters, d.key_dim);
        let w_v = w(d.filters, d.key_dim);
        let temporal_w = w(d.key_dim, d.graph_dim);
        let spatial_w = w(d.key_dim, d.graph_dim);
        let fuse_w = w(2 * d.graph_dim, d.fused_dim);
        let mu_w = w(d.fused_dim, d.latent_dim);
        let logvar_w = w(d.fused_dim, d.latent_dim).map(|v| 0.1 * v);
        let dec_w = w(d.latent_dim, 1);
        let conv_kernels = glorot(&mut rng, d.filters, conv_width, conv_width, d.filters);
        Ok(Self {
            encoder: EncoderParams {
                taps: d.kernel_size,
                conv_kernels,
                conv_bias: Array2::zeros(1, d.filters),
                w_q,
                w_k,
                w_v,
            },
            gcn: GcnParams {
                temporal_w,
                spatial_w,
                fuse_w,
                fuse_b: Array2::zeros(1, d.fused_dim),
            },
            posterior: PosteriorHead {
                mu_w,
                mu_b: Array2::zeros(1, d.latent_dim),
                logvar_w,
                logvar_b: Array2::filled(1, d.latent_dim, INIT_LOGVAR),
            },
            ode: OdeFunctionParams {
                w1,
                b1: Array2::zeros(1, d.hidden_dim),
                w2,
                b2: Array2::zeros(1, d.latent_dim),
            },
            decoder: DecoderParams {
                w: dec_w,
                b: Array2::zeros(1, 1),
            },
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            filters: self.encoder.filters(),
            kernel_size: self.encoder.taps,
            key_dim: self.encoder.key_dim(),
            graph_dim: self.gcn.temporal_w.cols(),
            fused_dim: self.gcn.fuse_w.cols(),
            latent_dim: self.posterior.mu_w.cols(),
            hidden_dim: self.ode.w1.cols(),
        }
    }

    /// Named tensors in flattening order.
    pub fn tensors(&self) -> [(&'static str, &Array2); 19] {
        [
            ("encoder.conv_kernels", &self.encoder.conv_kernels),
            ("encoder.conv_bias", &self.encoder.conv_bias),
            ("encoder.w_q", &self.encoder.w_q),
            ("encoder.w_k", &self.encoder.w_k),
            ("encoder.w_v", &self.encoder.w_v),
            ("gcn.temporal_w", &self.gcn.temporal_w),
            ("gcn.spatial_w", &self.gcn.spatial_w),
            ("gcn.fuse_w", &self.gcn.fuse_w),
            ("gcn.fuse_b", &self.gcn.fuse_b),
            ("posterior.mu_w", &self.posterior.mu_w),
            ("posterior.mu_b", &self.posterior.mu_b),
            ("posterior.logvar_w", &self.posterior.logvar_w),
            ("posterior.logvar_b", &self.posterior.logvar_b),
            ("ode.w1", &self.ode.w1),
            ("ode.b1", &self.ode.b1),
            ("ode.w2", &self.ode.w2),
            ("ode.b2", &self.ode.b2),
            ("decoder.w", &self.decoder.w),
            ("decoder.b", &self.decoder.b),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2; 19] {
        [
            &mut self.encoder.conv_kernels,
            &mut self.encoder.conv_bias,
            &mut self.encoder.w_q,
            &mut self.encoder.w_k,
            &mut self.encoder.w_v,
            &mut self.gcn.temporal_w,
            &mut self.gcn.spatial_w,
            &mut self.gcn.fuse_w,
            &mut self.gcn.fuse_b,
            &mut self.posterior.mu_w,
            &mut self.posterior.mu_b,
            &mut self.posterior.logvar_w,
            &mut self.posterior.logvar_b,
            &mut self.ode.w1,
            &mut self.ode.b1,
            &mut self.ode.w2,
            &mut self.ode.b2,
            &mut self.decoder.w,
            &mut self.decoder.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Writes a flat vector produced by [`ModelParams::flatten`] back into
    /// tensors of the same shapes.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::Dimension {
                op: "assign_flat",
                left: (total, 1),
                right: (flat.len(), 1),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape),
            gcn: self.gcn.register(tape),
            posterior: self.posterior.register(tape),
            ode: self.ode.register(tape),
            decoder: self.decoder.register(tape),
        }
    }
}

/// [`ModelParams`] registered on a tape.
#[derive(Copy, Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub gcn: GcnVars,
    pub posterior: PosteriorVars,
    pub ode: OdeVars,
    pub decoder: DecoderVars,
}

impl ModelVars {
    fn in_order(&self) -> [Var; 19] {
        let (e, g, p, o, d) = (
            &self.encoder,
            &self.gcn,
            &self.posterior,
            &self.ode,
            &self.decoder,
        );
        [
            e.conv_kernels,
            e.conv_bias,
            e.w_q,
            e.w_k,
            e.w_v,
            g.temporal_w,
            g.spatial_w,
            g.fuse_w,
            g.fuse_b,
            p.mu_w,
            p.mu_b,
            p.logvar_w,
            p.logvar_b,
            o.w1,
            o.b1,
            o.w2,
            o.b2,
            d.w,
            d.b,
        ]
    }

    /// Gradient of every parameter, flattened like [`ModelParams::flatten`].
    /// Parameters the loss does not reach get zeros.
    pub fn flat_gradient(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for v in self.in_order() {
            match grads.get(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(core::iter::repeat_n(0.0, tape.value(v).len())),
            }
        }
        out
    }
}

/// Per-ROI z-score statistics from observed points.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-8 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Parameter-independent view of a sample: encoder channels, normalization,
/// and the integration grid with observed targets laid out on it.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub inputs: Vec<EncoderInput>,
    pub norms: Vec<Normalization>,
    pub anchor: f64,
    /// Integration grid; `grid[0] == anchor`.
    pub grid: Vec<f64>,
    /// `N×G` normalized observed values (zero where unobserved).
    pub targets: Array2,
    /// `N×G` observation mask.
    pub mask: Array2,
    pub observed: usize,
}

impl PreparedSample {
    pub fn n_rois(&self) -> usize {
        self.inputs.len()
    }

    pub fn new(sample: &SignalSample) -> Result<Self> {
        sample.validate()?;
        let anchor = sample.anchor();
        let span = (sample.last_time() - anchor).max(1e-9);
        let mut inputs = Vec::with_capacity(sample.n_rois());
        let mut norms = Vec::with_capacity(sample.n_rois());
        let mut grid = vec![anchor];
        for series in &sample.rois {
            let obs: Vec<f64> = series.observed().map(|p| p.value).collect();
            let norm = Normalization::from_values(&obs);
            inputs.push(EncoderInput {
                values: series
                    .points
                    .iter()
                    .map(|p| if p.observed { norm.apply(p.value) } else { 0.0 })
                    .collect(),
                mask: series
                    .points
                    .iter()
                    .map(|p| if p.observed { 1.0 } else { 0.0 })
                    .collect(),
                times: series
                    .points
                    .iter()
                    .map(|p| (p.t - anchor) / span)
                    .collect(),
            });
            norms.push(norm);
            grid.extend(series.observed().map(|p| p.t));
        }
        sort_dedup(&mut grid);
        let n = sample.n_rois();
        let mut targets = Array2::zeros(n, grid.len());
        let mut mask = Array2::zeros(n, grid.len());
        let mut observed = 0;
        for (r, series) in sample.rois.iter().enumerate() {
            for p in series.observed() {
                let g = grid_index(&grid, p.t)
                    .ok_or_else(|| contract("observation missing from grid"))?;
                targets.set(r, g, norms[r].apply(p.value));
                mask.set(r, g, 1.0);
                observed += 1;
            }
        }
        Ok(Self {
            inputs,
            norms,
            anchor,
            grid,
            targets,
            mask,
            observed,
        })
    }
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup();
}

fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    grid.binary_search_by(|g| g.total_cmp(&t)).ok()
}

/// Per-pass execution counts of optional components.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct Instrumentation {
    pub positional_encodings: usize,
    pub temporal_gcn: usize,
    pub spatial_gcn: usize,
}

/// Nodes of one recorded forward pass.
#[derive(Copy, Clone, Debug)]
pub struct ForwardPass {
    pub loss: Var,
    pub mse: Var,
    pub kl: Var,
    pub mu: Var,
    pub logvar: Var,
    pub z0: Var,
    /// `N×G` decoded (normalized) values on the sample grid.
    pub decoded: Var,
}

/// Encoders and graphs up to the posterior `(μ, logvar)`.
pub fn infer_initial_state(
    tape: &mut Tape,
    vars: &ModelVars,
    inputs: &[EncoderInput],
    spatial: &Array2,
    config: &TrainConfig,
    counters: &mut Instrumentation,
) -> Result<(Var, Var)> {
    let n = inputs.len();
    if spatial.shape() != (n, n) {
        return Err(Error::Dimension {
            op: "spatial graph",
            left: spatial.shape(),
            right: (n, n),
        });
    }
    let positional = !config.ablation.no_positional_encoder;
    let mut rows = Vec::with_capacity(n);
    for input in inputs {
        if positional {
            counters.positional_encodings += 1;
        }
        rows.push(vars.encoder.encode(tape, input, positional)?);
    }
    let h = tape.concat_rows(&rows)?;
    let mut branch = BranchCounters::default();
    let u = vars
        .gcn
        .relate(tape, h, spatial, config.ablation.switches(), &mut branch)?;
    counters.temporal_gcn += branch.temporal_gcn;
    counters.spatial_gcn += branch.spatial_gcn;
    vars.posterior.infer(tape, u)
}

/// Integrates `z0` over `grid` at `steps_per_unit` RK4 steps per unit time
/// and decodes into an `N×G` matrix.
pub fn decode_path(
    tape: &mut Tape,
    vars: &ModelVars,
    z0: Var,
    grid: &[f64],
    steps_per_unit: usize,
) -> Result<Var> {
    let ode = vars.ode;
    let states = rk4_solve_rate(
        tape,
        &mut |t: &mut Tape, z| ode.eval(t, z),
        z0,
        grid,
        steps_per_unit,
    )?;
    let mut cols = Vec::with_capacity(states.len());
    for s in states {
        cols.push(vars.decoder.decode(tape, s)?);
    }
    tape.concat_cols(&cols)
}

/// Full forward pass for one sample. `eps = None` uses the posterior mean.
pub fn forward(
    tape: &mut Tape,
    vars: &ModelVars,
    sample: &PreparedSample,
    spatial: &Array2,
    config: &TrainConfig,
    eps: Option<&Array2>,
    counters: &mut Instrumentation,
) -> Result<ForwardPass> {
    if sample.observed == 0 {
        return Err(contract("sample has no observed points"));
    }
    let (mu, logvar) = infer_initial_state(tape, vars, &sample.inputs, spatial, config, counters)?;
    let z0 = match eps {
        Some(e) => reparameterize(tape, mu, logvar, e)?,
        None => mu,
    };
    let decoded = decode_path(tape, vars, z0, &sample.grid, config.substeps)?;
    let target = tape.constant(sample.targets.clone());
    let mask = tape.constant(sample.mask.clone());
    let diff = tape.sub(decoded, target)?;
    let sq = tape.square(diff);
    let masked = tape.mul(sq, mask)?;
    let total = tape.sum(masked);
    let mse = tape.scale(total, 1.0 / sample.observed as f64);
    let kl = kl_to_standard_normal(tape, mu, logvar)?;
    let loss = if config.kl_weight == 0.0 {
        mse
    } else {
        let weighted = tape.scale(kl, config.kl_weight);
        tape.add(mse, weighted)?
    };
    Ok(ForwardPass {
        loss,
        mse,
        kl,
        mu,
        logvar,
        z0,
        decoded,
    })
}

/// Loss terms and flat gradient for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGradient {
    pub loss: f64,
    pub mse: f64,
    pub kl: f64,
    pub gradient: Vec<f64>,
}

pub fn sample_gradient(
    params: &ModelParams,
    sample: &PreparedSample,
    spatial: &Array2,
    config: &TrainConfig,
    eps: Option<&Array2>,
) -> Result<SampleGradient> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut counters = Instrumentation::default();
    let pass = forward(
        &mut tape,
        &vars,
        sample,
        spatial,
        config,
        eps,
        &mut counters,
    )?;
    let grads = tape.backward(pass.loss)?;
    Ok(SampleGradient {
        loss: tape.value(pass.loss).get(0, 0),
        mse: tape.value(pass.mse).get(0, 0),
        kl: tape.value(pass.kl).get(0, 0),
        gradient: vars.flat_gradient(&tape, &grads),
    })
}

/// Mean loss over a batch, one noise draw per sample.
pub fn loss(
    batch: &[PreparedSample],
    params: &ModelParams,
    spatial: &Array2,
    config: &TrainConfig,
    eps: &[Array2],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract("loss of an empty batch"));
    }
    if eps.len() != batch.len() {
        return Err(Error::Dimension {
            op: "loss noise draws",
            left: (batch.len(), 1),
            right: (eps.len(), 1),
        });
    }
    let mut total = 0.0;
    for (s, e) in batch.iter().zip(eps) {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let pass = forward(
            &mut tape,
            &vars,
            s,
            spatial,
            config,
            Some(e),
            &mut Instrumentation::default(),
        )?;
        total += tape.value(pass.loss).get(0, 0);
    }
    Ok(total / batch.len() as f64)
}

/// Moment estimates for [`adam_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension {
            op: "adam_step",
            left: (n, 1),
            right: (grads.len(), 1),
        });
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Runs independent jobs and returns their results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Copy, Clone, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE (the last
    /// epoch when there is no validation data).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

const TRAIN_STREAM: u64 = 0x7A1;

/// Trains from scratch on `train`, selecting parameters on `validation`.
pub fn train<E: Executor>(
    train: &[EvalCase],
    validation: &[EvalCase],
    spatial: &Array2,
    config: &TrainConfig,
    exec: &E,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(contract("empty training set"));
    }
    let params = ModelParams::init(&config.dims, config.seed)?;
    train_from(params, train, validation, spatial, config, exec)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from<E: Executor>(
    mut params: ModelParams,
    train: &[EvalCase],
    validation: &[EvalCase],
    spatial: &Array2,
    config: &TrainConfig,
    exec: &E,
) -> Result<TrainOutcome> {
    config.validate()?;
    let prepared = train
        .iter()
        .map(|c| PreparedSample::new(&c.sample))
        .collect::<Result<Vec<_>>>()?;
    let n_rois = prepared[0].n_rois();
    let latent = config.dims.latent_dim;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut rng = stream_rng(config.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let eps: Vec<Array2> = batch
                .iter()
                .map(|&i| {
                    let n = prepared[i].n_rois();
                    Array2::from_fn(n, latent, |_, _| rng.sample(StandardNormal))
                })
                .collect();
            let current = &params;
            let results = exec.map(batch.len(), |b| {
                sample_gradient(current, &prepared[batch[b]], spatial, config, Some(&eps[b]))
            });
            let mut grad = vec![0.0; flat.len()];
            for r in results {
                let r = match r {
                    Ok(r) => r,
                    Err(Error::Divergence { .. }) => return Err(Error::TrainingDiverged { epoch }),
                    Err(e) => return Err(e),
                };
                if !r.loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                loss_sum += r.loss;
                mse_sum += r.mse;
                for (g, v) in grad.iter_mut().zip(&r.gradient) {
                    *g += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut flat, &grad, &mut adam, config.learning_rate)?;
            params.assign_flat(&flat)?;
        }
        let count = prepared.len() as f64;
        let train_loss = loss_sum / count;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_rmse = if validation.is_empty() {
            None
        } else {
            Some(
                match validation_rmse(&params, validation, spatial, config, n_rois, exec) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(Error::Divergence { .. }) => {
                        return Err(Error::TrainingDiverged { epoch });
                    }
                    Err(e) => return Err(e),
                },
            )
        };
        trace.push(EpochRecord {
            epoch,
            train_loss,
            train_mse: mse_sum / count,
            val_rmse,
        });
        let score = val_rmse.unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| score < *b || val_rmse.is_none())
        {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| contract("no epochs ran"))?;
    Ok(TrainOutcome {
        params,
        best_epoch,
        trace,
    })
}

/// Pooled RMSE over validation targets, or over observed points for cases
/// without targets.
fn validation_rmse<E: Executor>(
    params: &ModelParams,
    cases: &[EvalCase],
    spatial: &Array2,
    config: &TrainConfig,
    n_rois: usize,
    exec: &E,
) -> Result<f64> {
    let per_case = exec.map(cases.len(), |i| {
        let case = &cases[i];
        let targets: Vec<Target> = if case.targets.is_empty() {
            observed_targets(&case.sample)
        } else {
            case.targets.clone()
        };
        let pred = predict_targets(&case.sample, &targets, params, spatial, config)?;
        Ok::<_, Error>(
            pred.iter()
                .zip(&targets)
                .map(|(p, t)| (p - t.value) * (p - t.value))
                .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1)),
        )
    });
    let _ = n_rois;
    let (mut sum, mut count) = (0.0, 0usize);
    for r in per_case {
        let (s, n) = r?;
        sum += s;
        count += n;
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

fn observed_targets(sample: &SignalSample) -> Vec<Target> {
    sample
        .rois
        .iter()
        .enumerate()
        .flat_map(|(r, s)| {
            s.observed().map(move |p| Target {
                roi: r,
                t: p.t,
                value: p.value,
            })
        })
        .collect()
}

/// Reconstructed signals on a requested grid, in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub times: Vec<f64>,
    /// `values[roi][k]` at `times[k]`.
    pub values: Vec<Vec<f64>>,
}

/// Deterministic reconstruction (posterior mean, no noise) at `grid`.
pub fn reconstruct(
    sample: &SignalSample,
    params: &ModelParams,
    spatial: &Array2,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<Reconstruction> {
    check_grid(grid)?;
    let prepared = PreparedSample::new(sample)?;
    if grid[0] < prepared.anchor {
        return Err(Error::Grid { index: 0 });
    }
    let mut full = Vec::with_capacity(grid.len() + 1);
    let skip = if grid[0] == prepared.anchor { 0 } else { 1 };
    if skip == 1 {
        full.push(prepared.anchor);
    }
    full.extend_from_slice(grid);

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut counters = Instrumentation::default();
    let (mu, _) = infer_initial_state(
        &mut tape,
        &vars,
        &prepared.inputs,
        spatial,
        config,
        &mut counters,
    )?;
    let decoded = decode_path(&mut tape, &vars, mu, &full, config.substeps)?;
    let out = tape.value(decoded);
    let values = (0..prepared.n_rois())
        .map(|r| {
            (skip..full.len())
                .map(|g| prepared.norms[r].invert(out.get(r, g)))
                .collect()
        })
        .collect();
    Ok(Reconstruction {
        times: grid.to_vec(),
        values,
    })
}

/// Model predictions for arbitrary `(roi, t)` targets.
pub fn predict_targets(
    sample: &SignalSample,
    targets: &[Target],
    params: &ModelParams,
    spatial: &Array2,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut grid: Vec<f64> = targets.iter().map(|t| t.t).collect();
    sort_dedup(&mut grid);
    let rec = reconstruct(sample, params, spatial, config, &grid)?;
    targets
        .iter()
        .map(|t| {
            let k = grid_index(&grid, t.t).ok_or_else(|| contract("target missing from grid"))?;
            rec.values
                .get(t.roi)
                .map(|row| row[k])
                .ok_or_else(|| contract(alloc::format!("target ROI {} out of range", t.roi)))
        })
        .collect()
}
