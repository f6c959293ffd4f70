//! Per-ROI latent initial values from a short-term convolutional encoder
//! followed by a single-head self-attention encoder.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Array2, Tape, Var};
use crate::error::{Error, Result, config, contract};

/// Number of input channels seen by the convolution: value, mask, time.
pub const INPUT_CHANNELS: usize = 3;

/// One ROI's observations laid out as three aligned channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// Normalized observed value, zero where the point is missing.
    pub values: Vec<f64>,
    /// 1 where observed, 0 where missing.
    pub mask: Vec<f64>,
    /// Timestamps rescaled to `[0, 1]`.
    pub times: Vec<f64>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.values.len();
        if self.mask.len() != t || self.times.len() != t {
            return Err(Error::Dimension {
                op: "encoder input",
                left: (t, self.mask.len()),
                right: (t, self.times.len()),
            });
        }
        if self.mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(contract("observation mask must be binary"));
        }
        let mut last = f64::NEG_INFINITY;
        for (i, (&m, &tm)) in self.mask.iter().zip(&self.times).enumerate() {
            if m == 1.0 {
                if tm <= last {
                    return Err(Error::Grid { index: i });
                }
                last = tm;
            }
        }
        Ok(())
    }

    /// `3×T` channel matrix in the order value, mask, time.
    pub fn channels(&self) -> Array2 {
        let t = self.len();
        Array2::from_fn(INPUT_CHANNELS, t, |c, j| match c {
            0 => self.values[j],
            1 => self.mask[j],
            _ => self.times[j],
        })
    }
}

/// Sinusoidal positional encoding over integer positions `0..len`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Array2> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(config(alloc::format!(
            "positional encoding needs an even, nonzero width (got {d_model})"
        )));
    }
    Ok(Array2::from_fn(len, d_model, |pos, col| {
        let l = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * l / d_model as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Learnable weights of both encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub taps: usize,
    /// `F×(3·taps)` convolution filters.
    pub conv_kernels: Array2,
    /// `1×F` convolution bias.
    pub conv_bias: Array2,
    pub w_q: Array2,
    pub w_k: Array2,
    pub w_v: Array2,
}

impl EncoderParams {
    pub fn filters(&self) -> usize {
        self.conv_kernels.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.w_k.cols()
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            taps: self.taps,
            conv_kernels: tape.parameter(self.conv_kernels.clone()),
            conv_bias: tape.parameter(self.conv_bias.clone()),
            w_q: tape.parameter(self.w_q.clone()),
            w_k: tape.parameter(self.w_k.clone()),
            w_v: tape.parameter(self.w_v.clone()),
        }
    }

    /// Value-level encoding of one ROI into its latent initial value.
    pub fn encode(&self, input: &EncoderInput, positional: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let h = vars.encode(&mut tape, input, positional)?;
        Ok(tape.value(h).data().to_vec())
    }
}

/// [`EncoderParams`] registered on a tape.
#[derive(Copy, Clone, Debug)]
pub struct EncoderVars {
    pub taps: usize,
    pub conv_kernels: Var,
    pub conv_bias: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl EncoderVars {
    pub fn encode(&self, tape: &mut Tape, input: &EncoderInput, positional: bool) -> Result<Var> {
        input.validate()?;
        let x = tape.constant(input.channels());
        let f = short_term_encode(tape, x, self.conv_kernels, self.conv_bias, self.taps)?;
        let pe = if positional {
            let (t, width) = tape.value(f).shape();
            Some(positional_encoding(t, width)?)
        } else {
            None
        };
        long_term_encode(tape, f, pe, self.w_q, self.w_k, self.w_v)
    }
}

/// `ReLU(conv(x) + β)` giving a `T×F` feature map.
pub fn short_term_encode(
    tape: &mut Tape,
    channels: Var,
    kernels: Var,
    bias: Var,
    taps: usize,
) -> Result<Var> {
    let len = tape.value(channels).cols();
    if len < taps {
        return Err(Error::InputTooShort { len, min: taps });
    }
    let conv = tape.conv1d(channels, kernels, bias, taps)?;
    Ok(tape.relu(conv))
}

/// Single-head scaled dot-product attention.
///
/// Returns the `T×d_k` attention output together with the `T×T` weights.
pub fn self_attention(
    tape: &mut Tape,
    features: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
) -> Result<(Var, Var)> {
    let q = tape.matmul(features, w_q)?;
    let k = tape.matmul(features, w_k)?;
    let v = tape.matmul(features, w_v)?;
    let d_k = tape.value(k).cols();
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Adds the positional encoding (when given), applies self-attention, and
/// mean-pools the attention output over time into a `1×d_k` latent value.
pub fn long_term_encode(
    tape: &mut Tape,
    features: Var,
    positional: Option<Array2>,
    w_q: Var,
    w_k: Var,
    w_v: Var,
) -> Result<Var> {
    let shifted = match positional {
        Some(pe) => {
            let pe = tape.constant(pe);
            tape.add(features, pe)?
        }
        None => features,
    };
    let (out, _) = self_attention(tape, shifted, w_q, w_k, w_v)?;
    Ok(tape.mean_rows(out))
}
