//! Variational latent initial states, fixed-step RK4 integration of the
//! learned vector field, and the linear observation decoder.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Array2, Tape, Var};
use crate::error::{Error, Result, config};

/// Affine heads mapping fused ROI representations to `(μ, log σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorHead {
    pub mu_w: Array2,
    pub mu_b: Array2,
    pub logvar_w: Array2,
    pub logvar_b: Array2,
}

#[derive(Copy, Clone, Debug)]
pub struct PosteriorVars {
    pub mu_w: Var,
    pub mu_b: Var,
    pub logvar_w: Var,
    pub logvar_b: Var,
}

/// Per-ROI Gaussian posterior over the latent initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams {
    pub mu: Array2,
    pub logvar: Array2,
}

impl PosteriorParams {
    pub fn sigma(&self) -> Array2 {
        self.logvar.map(|lv| (0.5 * lv).exp())
    }
}

impl PosteriorHead {
    pub fn register(&self, tape: &mut Tape) -> PosteriorVars {
        PosteriorVars {
            mu_w: tape.parameter(self.mu_w.clone()),
            mu_b: tape.parameter(self.mu_b.clone()),
            logvar_w: tape.parameter(self.logvar_w.clone()),
            logvar_b: tape.parameter(self.logvar_b.clone()),
        }
    }

    /// Value-level posterior for `N×d_u` representations.
    pub fn infer(&self, u: &Array2) -> Result<PosteriorParams> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let uv = tape.constant(u.clone());
        let (mu, logvar) = vars.infer(&mut tape, uv)?;
        Ok(PosteriorParams {
            mu: tape.value(mu).clone(),
            logvar: tape.value(logvar).clone(),
        })
    }
}

impl PosteriorVars {
    pub fn infer(&self, tape: &mut Tape, u: Var) -> Result<(Var, Var)> {
        let m = tape.matmul(u, self.mu_w)?;
        let mu = tape.add_row(m, self.mu_b)?;
        let l = tape.matmul(u, self.logvar_w)?;
        let logvar = tape.add_row(l, self.logvar_b)?;
        Ok((mu, logvar))
    }
}

/// `z⁰ = μ + exp(½·logvar) ⊙ ε` with `ε` held constant.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: &Array2) -> Result<Var> {
    let shape = tape.value(mu).shape();
    if eps.shape() != shape {
        return Err(Error::Dimension {
            op: "reparameterize",
            left: shape,
            right: eps.shape(),
        });
    }
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.constant(eps.clone());
    let spread = tape.mul(sigma, noise)?;
    tape.add(mu, spread)
}

/// Mean over ROIs of `KL(N(μ, σ²) ‖ N(0, I))`, i.e. of
/// `½·Σ_d (σ² + μ² − 1 − ln σ²)`.
pub fn kl_to_standard_normal(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let (rois, dims) = tape.value(mu).shape();
    let var = tape.exp(logvar);
    let mu_sq = tape.square(mu);
    let a = tape.add(var, mu_sq)?;
    let b = tape.sub(a, logvar)?;
    let total = tape.sum(b);
    let shifted = tape.add_scalar(total, -((rois * dims) as f64));
    Ok(tape.scale(shifted, 0.5 / rois.max(1) as f64))
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, 1))` for one dimension.
pub fn kl_scalar(mu: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    0.5 * (var + mu * mu - 1.0 - var.ln())
}

/// Two-layer perceptron `d_z → d_h → d_z` with a tanh hidden layer, applied
/// to every ROI state independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeFunctionParams {
    pub w1: Array2,
    pub b1: Array2,
    pub w2: Array2,
    pub b2: Array2,
}

#[derive(Copy, Clone, Debug)]
pub struct OdeVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl OdeFunctionParams {
    pub fn register(&self, tape: &mut Tape) -> OdeVars {
        OdeVars {
            w1: tape.parameter(self.w1.clone()),
            b1: tape.parameter(self.b1.clone()),
            w2: tape.parameter(self.w2.clone()),
            b2: tape.parameter(self.b2.clone()),
        }
    }
}

impl OdeVars {
    pub fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let a = tape.matmul(z, self.w1)?;
        let a = tape.add_row(a, self.b1)?;
        let hidden = tape.tanh(a);
        let o = tape.matmul(hidden, self.w2)?;
        tape.add_row(o, self.b2)
    }
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Grid { index: 0 });
    }
    if let Some(i) = grid.iter().position(|t| !t.is_finite()) {
        return Err(Error::Grid { index: i });
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Grid { index: i + 1 });
    }
    Ok(())
}

/// Classic fourth-order Runge–Kutta with `substeps` uniform steps between
/// consecutive grid points.
///
/// Returns one state per grid point; the first is `z0` itself.
pub fn rk4_solve<F>(
    tape: &mut Tape,
    field: &mut F,
    z0: Var,
    grid: &[f64],
    substeps: usize,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if substeps == 0 {
        return Err(config("RK4 needs at least one substep"));
    }
    rk4_solve_by(tape, field, z0, grid, |_| substeps)
}

/// Number of uniform steps covering `span` at `rate` steps per unit time.
pub fn steps_for_span(span: f64, rate: usize) -> usize {
    let exact = span * rate as f64;
    let rounded = exact.round();
    let n = if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (n as usize).max(1)
}

/// RK4 at a fixed rate of `steps_per_unit` steps per unit time: an interval
/// of length `Δ` takes `⌈Δ·steps_per_unit⌉` uniform steps, so the internal
/// step size does not depend on how densely the grid is sampled.
pub fn rk4_solve_rate<F>(
    tape: &mut Tape,
    field: &mut F,
    z0: Var,
    grid: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if steps_per_unit == 0 {
        return Err(config("RK4 needs a positive step rate"));
    }
    rk4_solve_by(tape, field, z0, grid, |span| {
        steps_for_span(span, steps_per_unit)
    })
}

fn rk4_solve_by<F, S>(
    tape: &mut Tape,
    field: &mut F,
    z0: Var,
    grid: &[f64],
    steps: S,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    S: Fn(f64) -> usize,
{
    check_grid(grid)?;
    let mut states = Vec::with_capacity(grid.len());
    states.push(z0);
    let mut z = z0;
    for w in grid.windows(2) {
        let n = steps(w[1] - w[0]);
        let h = (w[1] - w[0]) / n as f64;
        for s in 0..n {
            z = rk4_step(tape, field, z, h)?;
            if !tape.value(z).is_finite() {
                return Err(Error::Divergence {
                    time: w[0] + h * (s + 1) as f64,
                });
            }
        }
        states.push(z);
    }
    Ok(states)
}

fn rk4_step<F>(tape: &mut Tape, field: &mut F, z: Var, h: f64) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let k1 = field(tape, z)?;
    let d = tape.scale(k1, 0.5 * h);
    let z2 = tape.add(z, d)?;
    let k2 = field(tape, z2)?;
    let d = tape.scale(k2, 0.5 * h);
    let z3 = tape.add(z, d)?;
    let k3 = field(tape, z3)?;
    let d = tape.scale(k3, h);
    let z4 = tape.add(z, d)?;
    let k4 = field(tape, z4)?;
    let mid = tape.add(k2, k3)?;
    let mid = tape.scale(mid, 2.0);
    let ends = tape.add(k1, k4)?;
    let total = tape.add(ends, mid)?;
    let incr = tape.scale(total, h / 6.0);
    tape.add(z, incr)
}

/// Affine `d_z → 1` observation mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// `d_z×1`.
    pub w: Array2,
    /// `1×1`.
    pub b: Array2,
}

#[derive(Copy, Clone, Debug)]
pub struct DecoderVars {
    pub w: Var,
    pub b: Var,
}

impl DecoderParams {
    pub fn register(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            w: tape.parameter(self.w.clone()),
            b: tape.parameter(self.b.clone()),
        }
    }

    /// Value-level decode of a single latent state.
    pub fn decode(&self, z: &[f64]) -> Result<f64> {
        let out = Array2::row_vector(z).matmul(&self.w)?;
        Ok(out.get(0, 0) + self.b.get(0, 0))
    }
}

impl DecoderVars {
    /// `N×d_z` states to `N×1` observation means.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let o = tape.matmul(z, self.w)?;
        tape.add_row(o, self.b)
    }
}

/// Latent path and decoded observations on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One `N×d_z` state per grid point.
    pub latents: Vec<Array2>,
    /// `decoded[g][i]` is ROI `i` at grid point `g`.
    pub decoded: Vec<Vec<f64>>,
}

/// Integrates `z0` over `grid` and decodes every state, without recording
/// gradients for later use.
pub fn integrate_and_decode(
    ode: &OdeFunctionParams,
    decoder: &DecoderParams,
    z0: &Array2,
    grid: &[f64],
    substeps: usize,
) -> Result<Trajectory> {
    let mut tape = Tape::new();
    let ov = ode.register(&mut tape);
    let dv = decoder.register(&mut tape);
    let z = tape.constant(z0.clone());
    let states = rk4_solve(
        &mut tape,
        &mut |t: &mut Tape, s| ov.eval(t, s),
        z,
        grid,
        substeps,
    )?;
    let mut latents = Vec::with_capacity(states.len());
    let mut decoded = Vec::with_capacity(states.len());
    for s in states {
        let o = dv.decode(&mut tape, s)?;
        latents.push(tape.value(s).clone());
        decoded.push(tape.value(o).data().to_vec());
    }
    Ok(Trajectory {
        times: grid.to_vec(),
        latents,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_linear(rate: f64, z0: f64, grid: &[f64], substeps: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::scalar(z0));
        let states = rk4_solve(
            &mut tape,
            &mut |t: &mut Tape, s| Ok(t.scale(s, rate)),
            z,
            grid,
            substeps,
        )
        .unwrap();
        states.iter().map(|&s| tape.value(s).get(0, 0)).collect()
    }

    #[test]
    fn zero_field_keeps_state() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::row_vector(&[1.5, -2.0]));
        let zero = tape.constant(Array2::zeros(1, 2));
        let states = rk4_solve(
            &mut tape,
            &mut |_: &mut Tape, _| Ok(zero),
            z,
            &[0.0, 1.0, 2.5],
            3,
        )
        .unwrap();
        for s in states {
            assert_eq!(tape.value(s).data(), &[1.5, -2.0]);
        }
    }

    #[test]
    fn constant_field_is_exact() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::scalar(0.0));
        let one = tape.constant(Array2::scalar(1.0));
        let states =
            rk4_solve(&mut tape, &mut |_: &mut Tape, _| Ok(one), z, &[0.0, 2.0], 4).unwrap();
        assert!((tape.value(states[1]).get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_growth_accuracy() {
        let z = solve_linear(1.0, 1.0, &[0.0, 1.0], 10);
        assert!((z[1] - core::f64::consts::E).abs() < 1e-5);
        let coarse = (solve_linear(1.0, 1.0, &[0.0, 1.0], 10)[1] - core::f64::consts::E).abs();
        let fine = (solve_linear(1.0, 1.0, &[0.0, 1.0], 20)[1] - core::f64::consts::E).abs();
        let ratio = coarse / fine;
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn grid_and_substep_errors() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::scalar(0.0));
        let mut f = |t: &mut Tape, s: Var| Ok(t.scale(s, 1.0));
        assert_eq!(
            rk4_solve(&mut tape, &mut f, z, &[0.0, 1.0, 1.0], 2),
            Err(Error::Grid { index: 2 })
        );
        assert_eq!(
            rk4_solve(&mut tape, &mut f, z, &[], 2),
            Err(Error::Grid { index: 0 })
        );
        assert!(matches!(
            rk4_solve(&mut tape, &mut f, z, &[0.0, 1.0], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn blow_up_reports_time() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::scalar(1.0));
        let r = rk4_solve(
            &mut tape,
            &mut |t: &mut Tape, s| Ok(t.powf(s, 8.0)),
            z,
            &[0.0, 10.0],
            10,
        );
        match r {
            Err(Error::Divergence { time }) => assert!(time > 0.0 && time <= 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn posterior_zero_init_and_selector() {
        let head = PosteriorHead {
            mu_w: Array2::zeros(3, 2),
            mu_b: Array2::zeros(1, 2),
            logvar_w: Array2::zeros(3, 2),
            logvar_b: Array2::zeros(1, 2),
        };
        let p = head.infer(&Array2::zeros(4, 3)).unwrap();
        assert!(p.mu.data().iter().all(|&v| v == 0.0));
        assert!(p.sigma().data().iter().all(|&v| v == 1.0));

        let select = PosteriorHead {
            mu_w: Array2::from_fn(3, 1, |i, _| if i == 0 { 1.0 } else { 0.0 }),
            mu_b: Array2::zeros(1, 1),
            logvar_w: Array2::zeros(3, 1),
            logvar_b: Array2::zeros(1, 1),
        };
        let u = Array2::from_rows(&[[0.4, 9.0, -1.0], [-2.5, 1.0, 3.0]]).unwrap();
        assert_eq!(select.infer(&u).unwrap().mu.data(), &[0.4, -2.5]);
    }

    #[test]
    fn reparameterize_substitution() {
        let mut tape = Tape::new();
        let mu = tape.parameter(Array2::row_vector(&[0.7]));
        let lv = tape.parameter(Array2::row_vector(&[0.0]));
        let z = reparameterize(&mut tape, mu, lv, &Array2::zeros(1, 1)).unwrap();
        assert_eq!(tape.value(z).data(), &[0.7]);

        let mu = tape.parameter(Array2::row_vector(&[0.0]));
        let lv = tape.parameter(Array2::row_vector(&[2.0 * 2f64.ln()]));
        let z = reparameterize(&mut tape, mu, lv, &Array2::filled(1, 1, 1.0)).unwrap();
        assert!((tape.value(z).get(0, 0) - 2.0).abs() < 1e-15);
        let loss = tape.sum(z);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(mu).unwrap().item(), Some(1.0));
        assert!((g.get(lv).unwrap().get(0, 0) - 1.0).abs() < 1e-15);
        assert!(matches!(
            reparameterize(&mut tape, mu, lv, &Array2::zeros(2, 1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_scalar(1.0, 1.0), 0.5);
        assert!((kl_scalar(0.0, 2f64.sqrt()) - 0.153_426_409_720_027_3).abs() < 1e-12);
        let mut tape = Tape::new();
        let mu = tape.constant(Array2::from_rows(&[[1.0], [0.0]]).unwrap());
        let lv = tape.constant(Array2::from_rows(&[[0.0], [2f64.ln()]]).unwrap());
        let kl = kl_to_standard_normal(&mut tape, mu, lv).unwrap();
        let expected = 0.5 * (kl_scalar(1.0, 1.0) + kl_scalar(0.0, 2f64.sqrt()));
        assert!((tape.value(kl).get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn decoder_examples() {
        let d = DecoderParams {
            w: Array2::zeros(3, 1),
            b: Array2::scalar(0.25),
        };
        assert_eq!(d.decode(&[5.0, -1.0, 2.0]).unwrap(), 0.25);
        let d = DecoderParams {
            w: Array2::col_vector(&[1.0, 0.0, 0.0]),
            b: Array2::scalar(0.0),
        };
        assert_eq!(d.decode(&[5.0, -1.0, 2.0]).unwrap(), 5.0);
    }

    #[test]
    fn trajectory_shapes() {
        let ode = OdeFunctionParams {
            w1: Array2::filled(2, 3, 0.1),
            b1: Array2::zeros(1, 3),
            w2: Array2::filled(3, 2, -0.2),
            b2: Array2::zeros(1, 2),
        };
        let dec = DecoderParams {
            w: Array2::col_vector(&[1.0, 1.0]),
            b: Array2::scalar(0.0),
        };
        let z0 = Array2::from_rows(&[[0.1, 0.2], [0.3, -0.4], [1.0, 0.0]]).unwrap();
        let tr = integrate_and_decode(&ode, &dec, &z0, &[0.0, 0.5, 1.0, 3.0], 4).unwrap();
        assert_eq!(tr.latents.len(), 4);
        assert_eq!(tr.decoded[0].len(), 3);
        assert_eq!(tr.latents[0], z0);
        assert!((tr.decoded[0][0] - 0.3).abs() < 1e-15);
    }
}
