//! Wall-clock scaling measurements for decoding and encoding.

use std::time::Instant;

use odesig_core::datagen::stream_rng;
use odesig_core::diffmath::Array2;
use odesig_core::encoder::EncoderInput;
use odesig_core::evalnet::{Clock, RuntimeStats, measure_runtime};
use odesig_core::latentode::integrate_and_decode;
use odesig_core::training::ModelParams;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;
use crate::config::RuntimeConfig;

/// Acceptable decode-time ratio when the grid length doubles.
pub const DECODE_RATIO_BAND: (f64, f64) = (1.5, 3.0);
/// Acceptable log-log slope of encoder time against input length.
pub const ENCODER_SLOPE_BAND: (f64, f64) = (1.0, 2.3);

/// Monotonic clock measured from construction.
pub struct StdClock {
    start: Instant,
}

impl StdClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub size: usize,
    pub stats: RuntimeStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub decode: Vec<Timing>,
    /// Time ratio between consecutive decode sizes.
    pub decode_ratios: Vec<f64>,
    pub encoder: Vec<Timing>,
    pub encoder_slope: f64,
    /// Measurements outside the expected bands; informational only.
    pub flags: Vec<String>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn random_input<R: Rng>(rng: &mut R, len: usize) -> EncoderInput {
    EncoderInput {
        values: (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        mask: vec![1.0; len],
        times: (0..len).map(|k| k as f64 / (len - 1) as f64).collect(),
    }
}

pub fn measure<C: Clock>(
    cfg: &RuntimeConfig,
    seed: u64,
    clock: &C,
) -> Result<RuntimeReport, CliError> {
    let params = ModelParams::init(&cfg.dims, seed)?;
    let mut rng = stream_rng(seed, 0x71);
    let z0 = Array2::from_fn(cfg.n_rois, cfg.dims.latent_dim, |_, _| {
        rng.random::<f64>() - 0.5
    });

    let mut decode = Vec::with_capacity(cfg.decode_points.len());
    for &points in &cfg.decode_points {
        let grid: Vec<f64> = (0..points).map(|k| k as f64).collect();
        let stats = measure_runtime(clock, cfg.repetitions, || {
            integrate_and_decode(&params.ode, &params.decoder, &z0, &grid, cfg.steps_per_unit)
                .map(|_| ())
        })?;
        decode.push(Timing {
            size: points,
            stats,
        });
    }

    let mut encoder = Vec::with_capacity(cfg.encoder_lengths.len());
    for &len in &cfg.encoder_lengths {
        let input = random_input(&mut rng, len);
        let stats = measure_runtime(clock, cfg.repetitions, || {
            params.encoder.encode(&input, true).map(|_| ())
        })?;
        encoder.push(Timing { size: len, stats });
    }

    let decode_ratios: Vec<f64> = decode
        .windows(2)
        .map(|w| w[1].stats.mean / w[0].stats.mean)
        .collect();
    let xs: Vec<f64> = encoder.iter().map(|t| t.size as f64).collect();
    let ys: Vec<f64> = encoder.iter().map(|t| t.stats.mean).collect();
    let encoder_slope = log_log_slope(&xs, &ys);

    let mut flags = Vec::new();
    for (w, r) in decode.windows(2).zip(&decode_ratios) {
        if !(DECODE_RATIO_BAND.0..=DECODE_RATIO_BAND.1).contains(r) {
            flags.push(format!("decode-ratio:{}->{}={r:.3}", w[0].size, w[1].size));
        }
    }
    if !(ENCODER_SLOPE_BAND.0..=ENCODER_SLOPE_BAND.1).contains(&encoder_slope) {
        flags.push(format!("encoder-slope={encoder_slope:.3}"));
    }
    Ok(RuntimeReport {
        decode,
        decode_ratios,
        encoder,
        encoder_slope,
        flags,
    })
}
