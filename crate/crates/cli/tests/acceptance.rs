//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails at the end if any fatal criterion failed. The runtime criterion is
//! informational: out-of-band measurements print FLAGGED.

use std::time::Instant;

use odesig::config::RuntimeConfig;
use odesig::exec::Parallel;
use odesig::runtime::{StdClock, measure};
use odesig_core::datagen::{
    GeneratorSpec, MissingMode, corrupt_missing, generate, split, stream_rng,
};
use odesig_core::diffmath::{Array2, Tape, Var, grad_check, softmax_rows};
use odesig_core::encoder::self_attention;
use odesig_core::evalnet::{
    EvalReport, ExperimentConfig, ExperimentKind, MODEL_NAME, POLY_BEST_NAME, pearson_network,
    rmse, run_experiment,
};
use odesig_core::latentode::{kl_scalar, kl_to_standard_normal, rk4_solve};
use odesig_core::relgraphs::{build_temporal_graph, gcn_forward};
use odesig_core::training::{
    Ablation, ModelDims, ModelParams, PreparedSample, Sequential, TrainConfig, reconstruct,
    sample_gradient, train,
};
use rand::Rng;
use rand::seq::SliceRandom;

struct Outcome {
    id: usize,
    pass: bool,
    fatal: bool,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, id: usize, pass: bool, detail: String) {
    let label = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id}: {label} - {detail}");
    outcomes.push(Outcome {
        id,
        pass,
        fatal: true,
        detail,
    });
}

fn tiny_dims(latent: usize) -> ModelDims {
    ModelDims {
        filters: 4,
        kernel_size: 4,
        key_dim: 3,
        graph_dim: 3,
        fused_dim: 3,
        latent_dim: latent,
        hidden_dim: 5,
    }
}

fn gradient_check() -> (bool, String) {
    let start = Instant::now();
    let config = TrainConfig {
        dims: tiny_dims(3),
        ..TrainConfig::default()
    };
    let spec = GeneratorSpec {
        n_rois: 2,
        n_samples: 1,
        duration: 6,
        seed: 1,
        ..GeneratorSpec::default()
    };
    let sample = &generate(&spec).unwrap()[0];
    let case =
        corrupt_missing(sample, MissingMode::Interpolation, 1, &mut stream_rng(1, 1)).unwrap();
    let prepared = PreparedSample::new(&case.sample).unwrap();
    let spatial = Array2::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let params = ModelParams::init(&config.dims, 1).unwrap();
    let eps = Array2::from_fn(2, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
    let check = grad_check(
        |theta| {
            let p = params.with_flat(theta)?;
            let g = sample_gradient(&p, &prepared, &spatial, &config, Some(&eps))?;
            Ok((g.loss, g.gradient))
        },
        &params.flatten(),
        1e-5,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        check.max_rel_error < 1e-4 && secs < 10.0,
        format!(
            "max relative error {:.2e} over {} parameters in {secs:.2} s",
            check.max_rel_error,
            check.analytic.len()
        ),
    )
}

fn rk4_order() -> (bool, String) {
    let at_one = |n: usize| {
        let mut tape = Tape::new();
        let z0 = tape.constant(Array2::scalar(1.0));
        let mut field = |_: &mut Tape, z: Var| Ok(z);
        let states = rk4_solve(&mut tape, &mut field, z0, &[0.0, 1.0], n).unwrap();
        tape.value(states[1]).get(0, 0)
    };
    let steps = [5usize, 10, 20, 40];
    let errors: Vec<f64> = steps
        .iter()
        .map(|&n| (at_one(n) - std::f64::consts::E).abs())
        .collect();
    let hs: Vec<f64> = steps.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = odesig::runtime::log_log_slope(&hs, &errors);
    (
        (3.7..=4.3).contains(&slope) && errors[1] < 1e-5,
        format!("slope {slope:.3}, error at 10 steps {:.2e}", errors[1]),
    )
}

fn analytic_values() -> (bool, String) {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        checked += 1;
        if (got - want).abs() > tol {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    expect("kl(1,1)", kl_scalar(1.0, 1.0), 0.5, 0.0);
    expect("kl(0,sqrt2)", kl_scalar(0.0, 2f64.sqrt()), 0.153426, 1e-6);
    let mut tape = Tape::new();
    let mu = tape.constant(Array2::scalar(0.0));
    let lv = tape.constant(Array2::scalar(2f64.ln()));
    let kl = kl_to_standard_normal(&mut tape, mu, lv).unwrap();
    expect("tape kl(0,sqrt2)", tape.value(kl).get(0, 0), 0.153426, 1e-6);

    for (row, want) in [
        ([0.0, 0.0], [0.5, 0.5]),
        ([1000.0, 1000.0], [0.5, 0.5]),
        ([0.0, 3f64.ln()], [0.25, 0.75]),
    ] {
        let s = softmax_rows(&Array2::from_rows(&[row]).unwrap());
        expect("softmax", s.get(0, 0), want[0], 1e-9);
        expect("softmax", s.get(0, 1), want[1], 1e-9);
    }

    let cos = |a: [f64; 2], b: [f64; 2]| {
        build_temporal_graph(&Array2::from_rows(&[a, b]).unwrap())
            .unwrap()
            .adjacency
            .get(0, 1)
    };
    expect("cosine identical", cos([0.3, -1.2], [0.3, -1.2]), 1.0, 1e-9);
    expect("cosine orthogonal", cos([1.0, 0.0], [0.0, 2.0]), 0.0, 1e-9);
    expect("cosine antipodal", cos([1.0, 0.0], [-1.0, 0.0]), 0.0, 1e-9);

    let x = [0.3, 1.9, -0.4, 2.2, 0.8];
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let p = pearson_network(&Array2::from_rows(&[x, x]).unwrap()).unwrap();
    expect("pearson self", p.correlation.get(0, 1), 1.0, 1e-9);
    let rows = Array2::from_vec(2, 5, x.iter().copied().chain(neg).collect()).unwrap();
    expect(
        "pearson negation",
        pearson_network(&rows).unwrap().correlation.get(0, 1),
        -1.0,
        1e-9,
    );
    let flat = pearson_network(&Array2::from_rows(&[[2.0; 4], [5.0; 4]]).unwrap()).unwrap();
    expect("pearson constant", flat.correlation.get(0, 1), 0.0, 1e-9);

    expect("rmse identical", rmse(&x, &x).unwrap(), 0.0, 1e-9);
    expect("rmse unit", rmse(&[0.0], &[1.0]).unwrap(), 1.0, 1e-9);
    expect(
        "rmse pair",
        rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(),
        12.5f64.sqrt(),
        1e-9,
    );
    if flat.constant_rows != [0, 1] {
        failures.push("constant rows not flagged".into());
    }
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} closed-form values hold")
        } else {
            failures.join("; ")
        },
    )
}

fn experiment(kind: ExperimentKind, ablation: Ablation, exec: &Parallel) -> EvalReport {
    let mut cfg = ExperimentConfig {
        kind,
        ..ExperimentConfig::default()
    };
    cfg.train.ablation = ablation;
    let start = Instant::now();
    let report = run_experiment(&cfg, exec).unwrap();
    eprintln!(
        "  {} {:?} took {:.0} s",
        kind.name(),
        ablation,
        start.elapsed().as_secs_f64()
    );
    report
}

fn mean_of(report: &EvalReport, param: &str, model: &str) -> f64 {
    report
        .row(param, model)
        .and_then(|r| r.rmse_mean)
        .unwrap_or(f64::NAN)
}

/// Model beats the best polynomial at every setting of the sweep.
fn beats_poly(report: &EvalReport, cells: &mut Vec<String>) -> bool {
    let mut all = true;
    for param in report.config.param_labels() {
        let m = mean_of(report, &param, MODEL_NAME);
        let p = mean_of(report, &param, POLY_BEST_NAME);
        let win = m < p;
        all &= win;
        cells.push(format!(
            "{} {param}: {m:.4} vs {p:.4}{}",
            report.setting,
            if win { "" } else { " (lost)" }
        ));
    }
    all
}

/// Mean over every (setting, seed) model run that produced a score.
fn pooled_model_mean(reports: &[&EvalReport]) -> f64 {
    let values: Vec<f64> = reports
        .iter()
        .flat_map(|r| {
            r.config
                .param_labels()
                .into_iter()
                .flat_map(|p| r.seed_rmses(&p, MODEL_NAME))
        })
        .flatten()
        .collect();
    values.iter().sum::<f64>() / values.len() as f64
}

fn random<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2 {
    Array2::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn invariant_suites() -> (bool, String) {
    let mut broken = Vec::new();
    let mut rng = stream_rng(2024, 0);
    let max_diff = |a: &Array2, b: &Array2| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };

    for trial in 0..50 {
        let n = 1 + trial % 5;
        let h = random(&mut rng, n, 4);
        let w = random(&mut rng, 4, 3);
        let a = Array2::from_fn(n, n, |i, j| {
            if i != j {
                ((i * 7 + j * 7) % 5) as f64 / 4.0
            } else {
                0.0
            }
        });
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let ph = Array2::from_fn(n, 4, |i, j| h.get(perm[i], j));
        let pa = Array2::from_fn(n, n, |i, j| a.get(perm[i], perm[j]));
        let base = gcn_forward(&h, &a, &w).unwrap();
        let moved = gcn_forward(&ph, &pa, &w).unwrap();
        let expect = Array2::from_fn(n, 3, |i, j| base.get(perm[i], j));
        if max_diff(&moved, &expect) > 1e-12 {
            broken.push(format!("gcn permutation trial {trial}"));
        }
    }
    for trial in 0..50 {
        let t = 1 + trial % 12;
        let mut tape = Tape::new();
        let f = tape.constant(random(&mut rng, t, 5).map(|v| v * 20.0));
        let wq = tape.constant(random(&mut rng, 5, 3));
        let wk = tape.constant(random(&mut rng, 5, 3));
        let wv = tape.constant(random(&mut rng, 5, 3));
        let (_, weights) = self_attention(&mut tape, f, wq, wk, wv).unwrap();
        let w = tape.value(weights);
        let ok = (0..t).all(|i| {
            w.row(i).iter().all(|&p| p >= 0.0) && (w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12
        });
        if !ok {
            broken.push(format!("attention rows trial {trial}"));
        }
    }
    for trial in 0..50 {
        let n = 2 + trial % 4;
        let h = random(&mut rng, n, 4);
        let scales: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(rng.random::<f64>() * 4.0 - 2.0))
            .collect();
        let scaled = Array2::from_fn(n, 4, |i, j| h.get(i, j) * scales[i]);
        let a = build_temporal_graph(&h).unwrap().adjacency;
        let b = build_temporal_graph(&scaled).unwrap().adjacency;
        if max_diff(&a, &b) > 1e-12 {
            broken.push(format!("temporal scale trial {trial}"));
        }
        let r = pearson_network(&random(&mut rng, n, 20))
            .unwrap()
            .correlation;
        if (0..n).any(|i| r.get(i, i) != 1.0 || (0..n).any(|j| r.get(i, j) != r.get(j, i))) {
            broken.push(format!("pearson trial {trial}"));
        }
    }
    for n in 5..120 {
        let s = split(n, n as u64).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() || s != split(n, n as u64).unwrap() {
            broken.push(format!("split n={n}"));
        }
    }
    if (0..5).any(|n| split(n, 0).is_ok()) {
        broken.push("split accepted fewer than 5 samples".into());
    }

    let spec = GeneratorSpec {
        n_rois: 3,
        n_samples: 8,
        duration: 10,
        seed: 9,
        ..GeneratorSpec::default()
    };
    let data = generate(&spec).unwrap();
    if data != generate(&spec).unwrap() {
        broken.push("generation not deterministic".into());
    }
    let cases: Vec<_> = data
        .into_iter()
        .map(odesig_core::datagen::EvalCase::clean)
        .collect();
    let config = TrainConfig {
        dims: tiny_dims(3),
        epochs: 3,
        batch_size: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let spatial = Array2::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
    let a = train(&cases[..5], &cases[5..], &spatial, &config, &Sequential).unwrap();
    let b = train(
        &cases[..5],
        &cases[5..],
        &spatial,
        &config,
        &Parallel::new(2).unwrap(),
    )
    .unwrap();
    let bits = |o: &odesig_core::training::TrainOutcome| {
        o.trace
            .iter()
            .map(|r| r.train_loss.to_bits())
            .collect::<Vec<_>>()
    };
    if bits(&a) != bits(&b) || a.params != b.params {
        broken.push("training not deterministic".into());
    }
    (
        broken.is_empty(),
        if broken.is_empty() {
            "gcn permutation (50), attention rows (50), temporal scale (50), pearson (50), split (115), determinism".into()
        } else {
            broken.join("; ")
        },
    )
}

fn grid_consistency() -> (bool, String) {
    let spec = GeneratorSpec {
        n_rois: 3,
        n_samples: 8,
        duration: 16,
        seed: 21,
        ..GeneratorSpec::default()
    };
    let cases: Vec<_> = generate(&spec)
        .unwrap()
        .into_iter()
        .map(odesig_core::datagen::EvalCase::clean)
        .collect();
    let config = TrainConfig {
        dims: tiny_dims(4),
        epochs: 5,
        batch_size: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let spatial = Array2::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
    let trained = train(&cases[..6], &cases[6..], &spatial, &config, &Sequential).unwrap();
    let sample = &cases[7].sample;
    // Coarse spacing of two internal steps; the dense grid halves it.
    let step = 2.0 / config.substeps as f64;
    let coarse: Vec<f64> = (0..20).map(|k| sample.anchor() + k as f64 * step).collect();
    let fine: Vec<f64> = (0..39)
        .map(|k| sample.anchor() + k as f64 * step / 2.0)
        .collect();
    let a = reconstruct(sample, &trained.params, &spatial, &config, &coarse).unwrap();
    let b = reconstruct(sample, &trained.params, &spatial, &config, &fine).unwrap();
    let worst = a
        .values
        .iter()
        .zip(&b.values)
        .flat_map(|(ra, rb)| {
            ra.iter()
                .enumerate()
                .map(move |(k, v)| (v - rb[2 * k]).abs())
        })
        .fold(0.0, f64::max);
    (
        worst < 1e-6,
        format!("max shared-point difference {worst:.2e}"),
    )
}

#[test]
fn acceptance() {
    let exec = Parallel::from_env().unwrap();
    let mut outcomes = Vec::new();

    let (ok, detail) = gradient_check();
    report(&mut outcomes, 1, ok, detail);
    let (ok, detail) = rk4_order();
    report(&mut outcomes, 2, ok, detail);
    let (ok, detail) = analytic_values();
    report(&mut outcomes, 3, ok, detail);

    let interp = experiment(ExperimentKind::MissingInterp, Ablation::default(), &exec);
    let extrap = experiment(ExperimentKind::MissingExtrap, Ablation::default(), &exec);
    let mut cells = Vec::new();
    let ok = beats_poly(&interp, &mut cells) & beats_poly(&extrap, &mut cells);
    report(&mut outcomes, 4, ok, cells.join(", "));

    let offset = experiment(ExperimentKind::Offset, Ablation::default(), &exec);
    let frequency = experiment(ExperimentKind::Frequency, Ablation::default(), &exec);
    let mut cells = Vec::new();
    let wins = beats_poly(&offset, &mut cells) & beats_poly(&frequency, &mut cells);
    let low = offset.seed_rmses("0.1", MODEL_NAME);
    let high = offset.seed_rmses("0.3", MODEL_NAME);
    let degrading = low
        .iter()
        .zip(&high)
        .filter(|(l, h)| matches!((l, h), (Some(l), Some(h)) if h >= l))
        .count();
    cells.push(format!(
        "offset 0.3 >= 0.1 in {degrading}/{} seeds",
        low.len()
    ));
    report(&mut outcomes, 5, wins && degrading >= 4, cells.join(", "));

    let full = pooled_model_mean(&[&interp]);
    let ablated =
        |a: Ablation| pooled_model_mean(&[&experiment(ExperimentKind::MissingInterp, a, &exec)]);
    let no_pe = ablated(Ablation {
        no_positional_encoder: true,
        ..Ablation::default()
    });
    let no_tg = ablated(Ablation {
        no_temporal_graph: true,
        ..Ablation::default()
    });
    let no_sg = ablated(Ablation {
        no_spatial_graph: true,
        ..Ablation::default()
    });
    report(
        &mut outcomes,
        6,
        no_pe >= full && no_tg >= full,
        format!(
            "full {full:.4}, no positional encoder {no_pe:.4}, no temporal graph {no_tg:.4}, no spatial graph {no_sg:.4} (reported only)"
        ),
    );

    let (ok, detail) = invariant_suites();
    report(&mut outcomes, 7, ok, detail);
    let (ok, detail) = grid_consistency();
    report(&mut outcomes, 8, ok, detail);

    let runtime = measure(&RuntimeConfig::default(), 0, &StdClock::new()).unwrap();
    let flagged = !runtime.flags.is_empty();
    let detail = format!(
        "decode ratios {:?}, encoder log-log slope {:.3}{}",
        runtime
            .decode_ratios
            .iter()
            .map(|r| format!("{r:.2}"))
            .collect::<Vec<_>>(),
        runtime.encoder_slope,
        if flagged {
            format!(" ({})", runtime.flags.join("; "))
        } else {
            String::new()
        }
    );
    println!(
        "criterion 9: {} - {detail}",
        if flagged { "FLAGGED" } else { "PASS" }
    );
    outcomes.push(Outcome {
        id: 9,
        pass: !flagged,
        fatal: false,
        detail,
    });

    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| o.fatal && !o.pass)
        .map(|o| format!("{} ({})", o.id, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join("; "));
}
