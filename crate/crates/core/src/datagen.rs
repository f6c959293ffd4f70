//! Synthetic coupled-sinusoid signals, the corruption operators used by the
//! evaluation protocols, and seeded dataset splitting.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, config, contract};
use crate::relgraphs::{RoiAtlas, RoiEntry};

/// Independent random stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const POOL_STREAM: u64 = 0;
const ATLAS_STREAM: u64 = u64::MAX;

/// One sinusoid `a·sin(ω t + φ)`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Component {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

/// Continuous-time source of a sample: a sum of sinusoids per ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rois: Vec<Vec<Component>>,
}

impl GroundTruth {
    pub fn value_at(&self, roi: usize, t: f64) -> f64 {
        self.rois[roi].iter().map(|c| c.eval(t)).sum()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub value: f64,
    pub observed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSeries {
    pub points: Vec<Observation>,
}

impl RoiSeries {
    pub fn observed(&self) -> impl Iterator<Item = &Observation> {
        self.points.iter().filter(|p| p.observed)
    }

    pub fn observed_count(&self) -> usize {
        self.observed().count()
    }
}

/// One subject: per-ROI timestamped observations with an observation flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSample {
    pub id: u64,
    /// Nominal start of the recording; the latent trajectory is anchored at
    /// `min(origin, first timestamp)`.
    pub origin: f64,
    pub rois: Vec<RoiSeries>,
    #[serde(default)]
    pub truth: Option<GroundTruth>,
}

impl SignalSample {
    pub fn n_rois(&self) -> usize {
        self.rois.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rois.is_empty() {
            return Err(contract(alloc::format!("sample {} has no ROIs", self.id)));
        }
        for (r, series) in self.rois.iter().enumerate() {
            if let Some(i) = series.points.windows(2).position(|w| w[1].t <= w[0].t) {
                return Err(contract(alloc::format!(
                    "sample {} ROI {r}: timestamps not strictly increasing at index {}",
                    self.id,
                    i + 1
                )));
            }
            if series.observed_count() == 0 {
                return Err(contract(alloc::format!(
                    "sample {} ROI {r} has no observed points",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Where integration starts.
    pub fn anchor(&self) -> f64 {
        self.rois
            .iter()
            .filter_map(|s| s.points.first())
            .map(|p| p.t)
            .fold(self.origin, f64::min)
    }

    pub fn last_time(&self) -> f64 {
        self.rois
            .iter()
            .filter_map(|s| s.points.last())
            .map(|p| p.t)
            .fold(self.origin, f64::max)
    }

    /// Span covered at the base rate of one point per second.
    pub fn duration(&self) -> f64 {
        self.last_time() - self.origin + 1.0
    }

    fn truth(&self) -> Result<&GroundTruth> {
        self.truth
            .as_ref()
            .ok_or_else(|| contract(alloc::format!("sample {} has no ground truth", self.id)))
    }

    /// Samples `truth` for every ROI at the given timestamps.
    pub fn from_truth(id: u64, origin: f64, truth: GroundTruth, times: &[f64]) -> Self {
        let rois = (0..truth.rois.len())
            .map(|r| RoiSeries {
                points: times
                    .iter()
                    .map(|&t| Observation {
                        t,
                        value: truth.value_at(r, t),
                        observed: true,
                    })
                    .collect(),
            })
            .collect();
        Self {
            id,
            origin,
            rois,
            truth: Some(truth),
        }
    }
}

/// A held-out point used for scoring.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub roi: usize,
    pub t: f64,
    pub value: f64,
}

/// A (possibly corrupted) sample together with the points it is scored on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub sample: SignalSample,
    pub targets: Vec<Target>,
}

impl EvalCase {
    pub fn clean(sample: SignalSample) -> Self {
        Self {
            sample,
            targets: Vec::new(),
        }
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_rois: usize,
    pub n_samples: usize,
    /// Number of one-second steps per sample.
    pub duration: usize,
    pub components_min: usize,
    pub components_max: usize,
    pub amplitude_range: (f64, f64),
    /// Angular frequency range in rad/s.
    pub omega_range: (f64, f64),
    pub pool_size: usize,
    /// Probability that a component is drawn from the shared pool.
    pub shared_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_rois: 8,
            n_samples: 60,
            duration: 50,
            components_min: 2,
            components_max: 4,
            amplitude_range: (0.5, 1.5),
            omega_range: (TAU / 20.0, TAU / 4.0),
            pool_size: 3,
            shared_fraction: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rois == 0 || self.duration == 0 {
            return Err(config("generator needs at least one ROI and one time step"));
        }
        if self.components_min == 0 || self.components_min > self.components_max {
            return Err(config("component count range must satisfy 1 ≤ min ≤ max"));
        }
        let (alo, ahi) = self.amplitude_range;
        if !(alo >= 0.0 && alo <= ahi && ahi.is_finite()) {
            return Err(config("amplitude range must satisfy 0 ≤ lo ≤ hi"));
        }
        let (wlo, whi) = self.omega_range;
        if !(wlo > 0.0 && wlo <= whi && whi.is_finite()) {
            return Err(config("frequency range must satisfy 0 < lo ≤ hi"));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(config("shared fraction must lie in [0, 1]"));
        }
        if self.shared_fraction > 0.0 && self.pool_size == 0 {
            return Err(config("a shared fraction needs a nonempty pool"));
        }
        Ok(())
    }

    /// Shared components, identical for every sample of the dataset.
    pub fn pool(&self) -> Vec<Component> {
        let mut rng = stream_rng(self.seed, POOL_STREAM);
        (0..self.pool_size)
            .map(|_| Component {
                amplitude: 1.0,
                omega: draw(&mut rng, self.omega_range),
                phase: rng.random::<f64>() * TAU,
            })
            .collect()
    }

    /// Regular one-second grid `0, 1, …, duration − 1`.
    pub fn base_times(&self) -> Vec<f64> {
        (0..self.duration).map(|k| k as f64).collect()
    }

    /// Synthetic atlas with coordinates in `[-60, 60]³`.
    pub fn atlas(&self) -> RoiAtlas {
        let mut rng = stream_rng(self.seed, ATLAS_STREAM);
        RoiAtlas {
            entries: (0..self.n_rois)
                .map(|i| RoiEntry {
                    label: alloc::format!("roi{i:03}"),
                    x: draw(&mut rng, (-60.0, 60.0)),
                    y: draw(&mut rng, (-60.0, 60.0)),
                    z: draw(&mut rng, (-60.0, 60.0)),
                })
                .collect(),
        }
    }

    fn sample_truth(&self, pool: &[Component], id: u64) -> GroundTruth {
        let mut rng = stream_rng(self.seed, id + 1);
        let rois = (0..self.n_rois)
            .map(|_| {
                let k = rng.random_range(self.components_min..=self.components_max);
                (0..k)
                    .map(|_| {
                        let amplitude = draw(&mut rng, self.amplitude_range);
                        if !pool.is_empty() && rng.random::<f64>() < self.shared_fraction {
                            let shared = pool[rng.random_range(0..pool.len())];
                            Component {
                                amplitude,
                                ..shared
                            }
                        } else {
                            Component {
                                amplitude,
                                omega: draw(&mut rng, self.omega_range),
                                phase: rng.random::<f64>() * TAU,
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        GroundTruth { rois }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Generates `spec.n_samples` regularly sampled samples. Each sample uses its
/// own random stream, so sample `i` does not depend on how many others exist.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<SignalSample>> {
    spec.validate()?;
    let pool = spec.pool();
    let times = spec.base_times();
    Ok((0..spec.n_samples as u64)
        .map(|id| SignalSample::from_truth(id, 0.0, spec.sample_truth(&pool, id), &times))
        .collect())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingMode {
    Interpolation,
    Extrapolation,
}

/// Hides `steps` observed points per ROI: a contiguous block strictly inside
/// the series (interpolation) or the final points (extrapolation).
///
/// The hidden points stay in the sample with `observed = false` and are
/// returned as targets.
pub fn corrupt_missing<R: Rng>(
    sample: &SignalSample,
    mode: MissingMode,
    steps: usize,
    rng: &mut R,
) -> Result<EvalCase> {
    let mut out = sample.clone();
    let mut targets = Vec::new();
    if steps == 0 {
        return Ok(EvalCase {
            sample: out,
            targets,
        });
    }
    let min_observed = out
        .rois
        .iter()
        .map(RoiSeries::observed_count)
        .min()
        .unwrap_or(0);
    let needed = match mode {
        MissingMode::Interpolation => steps + 2,
        MissingMode::Extrapolation => steps + 1,
    };
    if min_observed < needed {
        return Err(config(alloc::format!(
            "cannot hide {steps} points from a series with {min_observed} observations"
        )));
    }
    // One block position per sample, shared by all ROIs.
    let interior_start = match mode {
        MissingMode::Interpolation => rng.random_range(1..=min_observed - steps - 1),
        MissingMode::Extrapolation => 0,
    };
    for (r, series) in out.rois.iter_mut().enumerate() {
        let observed: Vec<usize> = (0..series.points.len())
            .filter(|&i| series.points[i].observed)
            .collect();
        let start = match mode {
            MissingMode::Interpolation => interior_start,
            MissingMode::Extrapolation => observed.len() - steps,
        };
        for &i in &observed[start..start + steps] {
            let p = &mut series.points[i];
            p.observed = false;
            targets.push(Target {
                roi: r,
                t: p.t,
                value: p.value,
            });
        }
    }
    Ok(EvalCase {
        sample: out,
        targets,
    })
}

/// Shifts every timestamp by `offset` and resamples from the ground truth.
/// Targets are the original timestamps.
pub fn corrupt_offset(sample: &SignalSample, offset: f64) -> Result<EvalCase> {
    if !(offset >= 0.0) {
        return Err(config(alloc::format!(
            "offset must be nonnegative, got {offset}"
        )));
    }
    let truth = sample.truth()?;
    let targets = original_targets(sample, truth);
    let mut out = sample.clone();
    for (r, series) in out.rois.iter_mut().enumerate() {
        for p in &mut series.points {
            p.t += offset;
            p.value = truth.value_at(r, p.t);
        }
    }
    Ok(EvalCase {
        sample: out,
        targets,
    })
}

fn original_targets(sample: &SignalSample, truth: &GroundTruth) -> Vec<Target> {
    sample
        .rois
        .iter()
        .enumerate()
        .flat_map(|(r, s)| {
            s.points.iter().map(move |p| Target {
                roi: r,
                t: p.t,
                value: truth.value_at(r, p.t),
            })
        })
        .collect()
}

/// A sampling period `num / den` seconds, kept rational so grid points are
/// computed with a single rounding.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub num: u32,
    pub den: u32,
}

impl Period {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(config("sampling period must be positive"));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Parses `"2/3"`, `"0.5"` or `"1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = || config(alloc::format!("cannot parse sampling period {text:?}"));
        if let Some((n, d)) = text.split_once('/') {
            return Self::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            );
        }
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let scale = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int * scale + frac_v;
        let g = gcd64(num, scale).max(1);
        let (num, den) = (num / g, scale / g);
        Self::new(
            u32::try_from(num).map_err(|_| bad())?,
            u32::try_from(den).map_err(|_| bad())?,
        )
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `k·period`, rounded once.
    pub fn at(self, k: u64) -> f64 {
        (k * self.num as u64) as f64 / self.den as f64
    }

    pub fn label(self) -> String {
        if self.den == 1 {
            alloc::format!("{}", self.num)
        } else {
            alloc::format!("{}/{}", self.num, self.den)
        }
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn gcd64(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd64(b, a % b) }
}

/// Resamples every ROI at `origin + k·period` over the sample's duration
/// (half-open). Targets are the original timestamps.
pub fn corrupt_frequency(sample: &SignalSample, period: Period) -> Result<EvalCase> {
    let truth = sample.truth()?;
    let targets = original_targets(sample, truth);
    let duration = sample.duration();
    let times: Vec<f64> = (0u64..)
        .map(|k| period.at(k))
        .take_while(|&dt| dt < duration)
        .map(|dt| sample.origin + dt)
        .collect();
    let resampled = SignalSample::from_truth(sample.id, sample.origin, truth.clone(), &times);
    Ok(EvalCase {
        sample: resampled,
        targets,
    })
}

/// Re-reads every timestamp with uniform jitter in `[-amount, amount]`.
pub fn jitter<R: Rng>(sample: &SignalSample, amount: f64, rng: &mut R) -> Result<SignalSample> {
    let truth = sample.truth()?;
    let mut out = sample.clone();
    if amount == 0.0 {
        return Ok(out);
    }
    for (r, series) in out.rois.iter_mut().enumerate() {
        for p in &mut series.points {
            p.t += amount * (2.0 * rng.random::<f64>() - 1.0);
            p.value = truth.value_at(r, p.t);
        }
    }
    out.validate()?;
    Ok(out)
}

/// Corruption settings for the mixed protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedCorruption {
    pub missing_fraction: f64,
    pub misaligned_fraction: f64,
    /// Points hidden per ROI in a missing-class sample.
    pub missing_steps: usize,
    pub misaligned_period: Period,
    /// Uniform timestamp noise applied to the remaining samples.
    pub jitter: f64,
}

impl Default for MixedCorruption {
    fn default() -> Self {
        Self {
            missing_fraction: 0.2,
            misaligned_fraction: 0.2,
            missing_steps: 5,
            misaligned_period: Period { num: 1, den: 2 },
            jitter: 0.05,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionClass {
    Missing,
    Misaligned,
    Jittered,
}

/// Assigns disjoint sample fractions to hidden-value and misaligned-rate
/// corruption; the rest only receive timestamp jitter.
pub fn apply_mixed_corruption(
    samples: &[SignalSample],
    settings: &MixedCorruption,
    seed: u64,
) -> Result<Vec<(CorruptionClass, EvalCase)>> {
    let (fm, fa) = (settings.missing_fraction, settings.misaligned_fraction);
    if !(0.0..=1.0).contains(&fm) || !(0.0..=1.0).contains(&fa) || fm + fa > 1.0 + 1e-12 {
        return Err(config(
            "corruption fractions must lie in [0, 1] and sum to at most 1",
        ));
    }
    let n = samples.len();
    let n_missing = (fm * n as f64).round() as usize;
    let n_misaligned = ((fa * n as f64).round() as usize).min(n - n_missing);
    let mut rng = stream_rng(seed, 0xC0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut class = alloc::vec![CorruptionClass::Jittered; n];
    for &i in &order[..n_missing] {
        class[i] = CorruptionClass::Missing;
    }
    for &i in &order[n_missing..n_missing + n_misaligned] {
        class[i] = CorruptionClass::Misaligned;
    }
    samples
        .iter()
        .zip(class)
        .map(|(s, c)| {
            let case = match c {
                CorruptionClass::Missing => corrupt_missing(
                    s,
                    MissingMode::Interpolation,
                    settings.missing_steps,
                    &mut rng,
                )?,
                CorruptionClass::Misaligned => corrupt_frequency(s, settings.misaligned_period)?,
                CorruptionClass::Jittered => {
                    let truth = s.truth()?;
                    let targets = original_targets(s, truth);
                    EvalCase {
                        sample: jitter(s, settings.jitter, &mut rng)?,
                        targets,
                    }
                }
            };
            Ok((c, case))
        })
        .collect()
}

/// Disjoint train/validation/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 6:2:2 partition of `0..n`.
pub fn split(n: usize, seed: u64) -> Result<Split> {
    split_with_ratios(n, (6, 2, 2), seed)
}

pub fn split_with_ratios(n: usize, ratios: (u32, u32, u32), seed: u64) -> Result<Split> {
    if n < 5 {
        return Err(config(alloc::format!(
            "need at least 5 samples to split, got {n}"
        )));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as f64;
    if total == 0.0 {
        return Err(config("split ratios are all zero"));
    }
    let n_train = ((n as f64 * ratios.0 as f64 / total).round() as usize).min(n);
    let n_val = ((n as f64 * ratios.1 as f64 / total).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x5B));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn quarter_wave() -> SignalSample {
        let truth = GroundTruth {
            rois: vec![vec![Component {
                amplitude: 1.0,
                omega: PI / 2.0,
                phase: 0.0,
            }]],
        };
        SignalSample::from_truth(0, 0.0, truth, &[0.0, 1.0, 2.0, 3.0])
    }

    fn ramp(n: usize) -> SignalSample {
        let truth = GroundTruth {
            rois: vec![
                vec![Component {
                    amplitude: 1.0,
                    omega: 0.3,
                    phase: 0.1,
                }];
                2
            ],
        };
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        SignalSample::from_truth(3, 0.0, truth, &times)
    }

    #[test]
    fn quarter_period_values() {
        let v: Vec<f64> = quarter_wave().rois[0]
            .points
            .iter()
            .map(|p| p.value)
            .collect();
        let expected = [0.0, 1.0, 0.0, -1.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_signal() {
        let spec = GeneratorSpec {
            amplitude_range: (0.0, 0.0),
            n_samples: 2,
            ..GeneratorSpec::default()
        };
        for s in generate(&spec).unwrap() {
            assert!(
                s.rois
                    .iter()
                    .flat_map(|r| &r.points)
                    .all(|p| p.value == 0.0)
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_per_sample() {
        let spec = GeneratorSpec {
            n_samples: 5,
            seed: 11,
            ..GeneratorSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        let more = generate(&GeneratorSpec {
            n_samples: 7,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(a[..], more[..5]);
    }

    #[test]
    fn spec_validation() {
        let bad = GeneratorSpec {
            components_min: 0,
            ..GeneratorSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = GeneratorSpec {
            omega_range: (0.0, 1.0),
            ..GeneratorSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_zero_steps_is_identity() {
        let s = ramp(10);
        let case =
            corrupt_missing(&s, MissingMode::Interpolation, 0, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(case.sample, s);
        assert!(case.targets.is_empty());
    }

    #[test]
    fn extrapolation_removes_suffix() {
        let s = ramp(10);
        let case =
            corrupt_missing(&s, MissingMode::Extrapolation, 3, &mut stream_rng(0, 0)).unwrap();
        for series in &case.sample.rois {
            let obs: Vec<f64> = series.observed().map(|p| p.t).collect();
            assert_eq!(obs, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }
        let roi0: Vec<f64> = case
            .targets
            .iter()
            .filter(|t| t.roi == 0)
            .map(|t| t.t)
            .collect();
        assert_eq!(roi0, [7.0, 8.0, 9.0]);
    }

    #[test]
    fn too_many_missing_steps() {
        let s = ramp(5);
        assert!(corrupt_missing(&s, MissingMode::Interpolation, 4, &mut stream_rng(0, 0)).is_err());
        assert!(corrupt_missing(&s, MissingMode::Extrapolation, 5, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn offset_examples() {
        let s = ramp(4);
        let case = corrupt_offset(&s, 0.0).unwrap();
        assert_eq!(case.sample, s);
        let case = corrupt_offset(&s, 0.1).unwrap();
        let ts: Vec<f64> = case.sample.rois[0].points.iter().map(|p| p.t).collect();
        assert_eq!(ts, [0.1, 1.1, 2.1, 3.1]);
        assert_eq!(case.targets.iter().filter(|t| t.roi == 0).count(), 4);
        assert!(corrupt_offset(&s, -0.1).is_err());

        let truth = GroundTruth {
            rois: vec![vec![Component {
                amplitude: 1.0,
                omega: TAU,
                phase: 0.0,
            }]],
        };
        let s = SignalSample::from_truth(0, 0.0, truth, &[0.0, 1.0, 2.0]);
        let case = corrupt_offset(&s, 0.25).unwrap();
        for p in &case.sample.rois[0].points {
            assert!((p.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frequency_examples() {
        let s = ramp(4);
        let same = corrupt_frequency(&s, Period::new(1, 1).unwrap()).unwrap();
        assert_eq!(same.sample, s);
        let half = corrupt_frequency(&s, Period::new(1, 2).unwrap()).unwrap();
        let ts: Vec<f64> = half.sample.rois[0].points.iter().map(|p| p.t).collect();
        assert_eq!(ts, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]);
        let third = corrupt_frequency(&ramp(3), Period::new(2, 3).unwrap()).unwrap();
        let ts: Vec<f64> = third.sample.rois[0].points.iter().map(|p| p.t).collect();
        assert_eq!(ts, [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0, 8.0 / 3.0]);
    }

    #[test]
    fn period_parsing() {
        assert_eq!(Period::parse("2/3").unwrap(), Period { num: 2, den: 3 });
        assert_eq!(Period::parse("0.5").unwrap(), Period { num: 1, den: 2 });
        assert_eq!(Period::parse("1").unwrap(), Period { num: 1, den: 1 });
        assert_eq!(Period::parse("4/6").unwrap().label(), "2/3");
        assert!(Period::parse("0").is_err());
        assert!(Period::parse("abc").is_err());
    }

    #[test]
    fn mixed_corruption_counts() {
        let spec = GeneratorSpec {
            n_samples: 100,
            n_rois: 2,
            duration: 12,
            ..GeneratorSpec::default()
        };
        let data = generate(&spec).unwrap();
        let out = apply_mixed_corruption(&data, &MixedCorruption::default(), 5).unwrap();
        let count = |c| out.iter().filter(|(k, _)| *k == c).count();
        assert_eq!(count(CorruptionClass::Missing), 20);
        assert_eq!(count(CorruptionClass::Misaligned), 20);
        assert_eq!(count(CorruptionClass::Jittered), 60);

        let none = MixedCorruption {
            missing_fraction: 0.0,
            misaligned_fraction: 0.0,
            jitter: 0.0,
            ..MixedCorruption::default()
        };
        let out = apply_mixed_corruption(&data, &none, 5).unwrap();
        assert!(out.iter().zip(&data).all(|((_, c), s)| &c.sample == s));

        let all_missing = MixedCorruption {
            missing_fraction: 1.0,
            misaligned_fraction: 0.0,
            ..MixedCorruption::default()
        };
        let out = apply_mixed_corruption(&data, &all_missing, 5).unwrap();
        assert!(out.iter().all(|(_, c)| {
            !c.targets.is_empty()
                && c.sample
                    .rois
                    .iter()
                    .all(|r| r.observed_count() < r.points.len())
        }));

        let bad = MixedCorruption {
            missing_fraction: 0.7,
            misaligned_fraction: 0.4,
            ..MixedCorruption::default()
        };
        assert!(apply_mixed_corruption(&data, &bad, 5).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        assert!(split(4, 3).is_err());
        assert_eq!(split(10, 3).unwrap(), s);
    }
}
