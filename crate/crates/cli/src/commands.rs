//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use odesig_core::datagen::{
    EvalCase, Period, SignalSample, Split, apply_mixed_corruption, corrupt_frequency,
    corrupt_missing, corrupt_offset, generate as generate_samples, split, stream_rng,
};
use odesig_core::evalnet::{EvalReport, run_experiment};
use odesig_core::relgraphs::{RoiAtlas, build_spatial_graph};
use odesig_core::training::{EpochRecord, reconstruct as reconstruct_sample, train as train_model};
use serde::Serialize;
use serde_json::Value;

use crate::CliError;
use crate::checkpoint::{self, Checkpoint};
use crate::config::{
    self, Corruption, EvaluateConfig, GenerateConfig, ReconstructConfig, RuntimeConfig,
    TrainRunConfig,
};
use crate::exec::Parallel;
use crate::io::{self, Provenance};
use crate::runtime::{self, RuntimeReport, StdClock};
use crate::{CommonArgs, EvaluateArgs, ReconstructArgs, TrainArgs};

pub const SIGNALS_FILE: &str = "signals.csv";
pub const TARGETS_FILE: &str = "targets.csv";
pub const ATLAS_FILE: &str = "atlas.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plot.csv";

const CORRUPTION_STREAM: u64 = 0xC1;

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Loads the config file and applies `--set` and `--seed`; `out_key` names
/// the key that `--out` fills.
fn document(args: &CommonArgs, out_key: &str) -> Result<Value, CliError> {
    let mut doc = config::load_document(args.config.as_deref())?;
    for assignment in &args.overrides {
        config::apply_assignment(&mut doc, assignment)?;
    }
    if let Some(seed) = args.seed {
        config::set_key(&mut doc, "seed", seed.into())?;
    }
    if let Some(out) = &args.out {
        config::set_key(&mut doc, out_key, path_value(out))?;
    }
    Ok(doc)
}

fn write_out(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    config: Value,
    samples: usize,
    split: Option<Split>,
    files: Vec<&'static str>,
}

/// Applies the configured corruption to freshly generated samples.
pub fn corrupt(
    samples: &[SignalSample],
    corruption: &Corruption,
    seed: u64,
) -> Result<Vec<EvalCase>, CliError> {
    let mut rng = stream_rng(seed, CORRUPTION_STREAM);
    let cases = match corruption {
        Corruption::None => samples.iter().cloned().map(EvalCase::clean).collect(),
        Corruption::Missing { mode, steps } => samples
            .iter()
            .map(|s| corrupt_missing(s, *mode, *steps, &mut rng))
            .collect::<Result<_, _>>()?,
        Corruption::Offset { offset } => samples
            .iter()
            .map(|s| corrupt_offset(s, *offset))
            .collect::<Result<_, _>>()?,
        Corruption::Frequency { period } => {
            let period = Period::parse(period).map_err(|e| CliError::Usage(e.to_string()))?;
            samples
                .iter()
                .map(|s| corrupt_frequency(s, period))
                .collect::<Result<_, _>>()?
        }
        Corruption::Mixed(settings) => apply_mixed_corruption(samples, settings, seed)?
            .into_iter()
            .map(|(_, case)| case)
            .collect(),
    };
    Ok(cases)
}

pub fn generate(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let doc = document(args, "output_dir")?;
    let (cfg, seed, out) = config::parse::<GenerateConfig>(doc)?.resolve()?;
    let provenance = Provenance {
        config_hash: config::config_hash(&cfg),
        seed,
    };
    let samples = generate_samples(&cfg.generator)?;
    let cases = corrupt(&samples, &cfg.corruption, seed)?;
    io::ensure_dir(&out)?;

    let corrupted: Vec<SignalSample> = cases.iter().map(|c| c.sample.clone()).collect();
    io::write_signals_file(&out.join(SIGNALS_FILE), &corrupted, &provenance)?;
    let mut files = vec![SIGNALS_FILE, ATLAS_FILE, MANIFEST_FILE];
    if cases.iter().any(|c| !c.targets.is_empty()) {
        io::write_targets_file(&out.join(TARGETS_FILE), &cases, &provenance)?;
        files.push(TARGETS_FILE);
    }
    io::write_json(&out.join(ATLAS_FILE), &cfg.generator.atlas())?;
    let manifest = Manifest {
        provenance: &provenance,
        config: config::normalized(&cfg),
        samples: samples.len(),
        split: split(samples.len(), seed).ok(),
        files,
    };
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    let rows: usize = corrupted
        .iter()
        .flat_map(|s| &s.rois)
        .map(|r| r.points.len())
        .sum();
    write_out(
        stdout,
        &format!(
            "generated {} samples ({rows} rows) in {}\n",
            samples.len(),
            out.display()
        ),
    )
}

fn write_trace(
    path: &Path,
    trace: &[EpochRecord],
    provenance: &Provenance,
) -> Result<(), CliError> {
    let mut text = provenance.comment_line();
    text.push_str("epoch,train_loss,train_mse,val_rmse\n");
    for r in trace {
        let val = r.val_rmse.map(|v| format!("{v:?}")).unwrap_or_default();
        text.push_str(&format!(
            "{},{:?},{:?},{val}\n",
            r.epoch, r.train_loss, r.train_mse
        ));
    }
    Ok(io::write_file(path, text.as_bytes())?)
}

fn check_rois(samples: &[SignalSample], atlas: &RoiAtlas) -> Result<(), CliError> {
    if let Some(s) = samples.iter().find(|s| s.n_rois() != atlas.len()) {
        return Err(CliError::Compatibility(format!(
            "sample {} has {} ROIs but the atlas has {}",
            s.id,
            s.n_rois(),
            atlas.len()
        )));
    }
    Ok(())
}

fn executor() -> Result<Parallel, CliError> {
    Parallel::from_env().map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

pub fn train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = document(&args.common, "output_dir")?;
    if let Some(p) = &args.signals {
        config::set_key(&mut doc, "signals", path_value(p))?;
    }
    if let Some(p) = &args.atlas {
        config::set_key(&mut doc, "atlas", path_value(p))?;
    }
    if let Some(e) = args.epochs {
        config::set_key(&mut doc, "train.epochs", e.into())?;
    }
    for (on, key) in [
        (
            args.no_positional_encoder,
            "train.ablation.no_positional_encoder",
        ),
        (args.no_temporal_graph, "train.ablation.no_temporal_graph"),
        (args.no_spatial_graph, "train.ablation.no_spatial_graph"),
    ] {
        if on {
            config::set_key(&mut doc, key, true.into())?;
        }
    }
    let (cfg, seed, paths) = config::parse::<TrainRunConfig>(doc)?.resolve()?;
    let provenance = Provenance {
        config_hash: config::config_hash(&cfg),
        seed,
    };

    let atlas: RoiAtlas = io::read_json(&paths.atlas)?;
    atlas
        .validate()
        .map_err(|e| CliError::Usage(format!("{}: {e}", paths.atlas.display())))?;
    let threshold = cfg
        .spatial_threshold
        .unwrap_or_else(|| atlas.default_threshold());
    let spatial = build_spatial_graph(&atlas, threshold)?.adjacency;
    let data = io::read_signals_file(&paths.signals)?;
    check_rois(&data.samples, &atlas)?;
    let validation = match &cfg.validation_signals {
        Some(p) => {
            let v = io::read_signals_file(p)?;
            check_rois(&v.samples, &atlas)?;
            v.cases()
        }
        None => Vec::new(),
    };

    let outcome = train_model(
        &data.cases(),
        &validation,
        &spatial,
        &cfg.train,
        &executor()?,
    )?;
    io::ensure_dir(&paths.output_dir)?;
    let ckpt = Checkpoint {
        format: checkpoint::FORMAT.to_string(),
        provenance: provenance.clone(),
        train: cfg.train.clone(),
        best_epoch: outcome.best_epoch,
        atlas,
        spatial_threshold: threshold,
        params: outcome.params,
    };
    ckpt.save(&paths.output_dir.join(CHECKPOINT_FILE))?;
    write_trace(
        &paths.output_dir.join(TRACE_FILE),
        &outcome.trace,
        &provenance,
    )?;
    let kept = outcome.trace.iter().find(|r| r.epoch == outcome.best_epoch);
    let val = kept
        .and_then(|r| r.val_rmse)
        .map_or("n/a".to_string(), |v| format!("{v:.6}"));
    write_out(
        stdout,
        &format!(
            "trained {} epochs on {} samples; kept epoch {} (val rmse {val})\n",
            outcome.trace.len(),
            data.samples.len(),
            outcome.best_epoch,
        ),
    )
}

pub fn reconstruct(args: &ReconstructArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = document(&args.common, "output")?;
    if let Some(p) = &args.checkpoint {
        config::set_key(&mut doc, "checkpoint", path_value(p))?;
    }
    if let Some(p) = &args.signals {
        config::set_key(&mut doc, "signals", path_value(p))?;
    }
    if let Some(n) = args.points {
        config::set_key(&mut doc, "grid.points", n.into())?;
    }
    let (cfg, paths) = config::parse::<ReconstructConfig>(doc)?.resolve()?;
    let ckpt = Checkpoint::load(&paths.checkpoint)?;
    let provenance = Provenance {
        config_hash: config::config_hash(&cfg),
        seed: ckpt.provenance.seed,
    };
    let data = io::read_signals_file(&paths.signals)?;
    for s in &data.samples {
        ckpt.check_compatible(s.n_rois(), cfg.dims.as_ref())?;
    }
    let spatial = ckpt.spatial()?;
    let mut rows = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let grid = cfg.grid.times(s.anchor(), s.last_time());
        let rec = reconstruct_sample(s, &ckpt.params, &spatial, &ckpt.train, &grid)?;
        rows.push((s.id, rec));
    }
    let mut buf = Vec::new();
    io::write_reconstructions(&mut buf, &rows, &provenance)?;
    io::write_file(&paths.output, &buf)?;
    let n: usize = rows
        .iter()
        .map(|(_, r)| r.values.len() * r.times.len())
        .sum();
    write_out(
        stdout,
        &format!("wrote {n} rows to {}\n", paths.output.display()),
    )
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Fixed-width table of the report rows.
pub fn summary_table(report: &EvalReport) -> String {
    let mut out = format!(
        "{:<16} {:<8} {:<10} {:>10} {:>10} {:>5}  flags\n",
        "setting", "param", "model", "rmse_mean", "rmse_std", "runs"
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{:<16} {:<8} {:<10} {:>10} {:>10} {:>5}  {}\n",
            r.setting,
            r.param,
            r.model,
            fmt_opt(r.rmse_mean),
            fmt_opt(r.rmse_std),
            r.runs,
            r.flags.join(";")
        ));
    }
    out
}

fn plot_csv(report: &EvalReport, provenance: &Provenance) -> Result<Vec<u8>, CliError> {
    let mut buf = provenance.comment_line().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["setting", "param", "model", "rmse_mean", "rmse_std"])
            .map_err(io::IoError::from)?;
        for r in &report.rows {
            let f = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
            w.write_record([
                r.setting.clone(),
                r.param.clone(),
                r.model.clone(),
                f(r.rmse_mean),
                f(r.rmse_std),
            ])
            .map_err(io::IoError::from)?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(buf)
}

pub fn evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = document(&args.common, "output_dir")?;
    if let Some(kind) = &args.kind {
        config::set_key(&mut doc, "experiment.kind", Value::String(kind.clone()))?;
    }
    if !args.params.is_empty() {
        let params = args
            .params
            .iter()
            .map(|p| match p.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Value::from(v),
                _ => Value::String(p.clone()),
            })
            .collect();
        config::set_key(&mut doc, "experiment.params", Value::Array(params))?;
    }
    if let Some(n) = args.seeds {
        config::set_key(&mut doc, "experiment.seeds", n.into())?;
    }
    EvaluateConfig::check_kind(&doc)?;
    let (cfg, seed, out) = config::parse::<EvaluateConfig>(doc)?.resolve()?;
    let provenance = Provenance {
        config_hash: config::config_hash(&cfg),
        seed,
    };
    let started = std::time::Instant::now();
    let report = run_experiment(&cfg.experiment, &executor()?)?;
    io::ensure_dir(&out)?;
    io::write_json(
        &out.join(REPORT_FILE),
        &ReportFile {
            provenance: &provenance,
            report: &report,
        },
    )?;
    io::write_file(&out.join(PLOT_FILE), &plot_csv(&report, &provenance)?)?;
    eprintln!(
        "evaluation finished in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    write_out(stdout, &summary_table(&report))
}

#[derive(Serialize)]
struct RuntimeFile<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    config: &'a RuntimeConfig,
    #[serde(flatten)]
    report: &'a RuntimeReport,
}

pub fn runtime(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let doc = document(args, "output")?;
    let (cfg, seed) = config::parse::<RuntimeConfig>(doc)?.resolve()?;
    let provenance = Provenance {
        config_hash: config::config_hash(&cfg),
        seed,
    };
    let report = runtime::measure(&cfg, seed, &StdClock::new())?;
    let mut text = String::new();
    for t in &report.decode {
        text.push_str(&format!(
            "decode  T'={:<5} {:.6} s ± {:.6}\n",
            t.size, t.stats.mean, t.stats.std
        ));
    }
    for r in &report.decode_ratios {
        text.push_str(&format!(
            "decode ratio {r:.3} (band {:?})\n",
            runtime::DECODE_RATIO_BAND
        ));
    }
    for t in &report.encoder {
        text.push_str(&format!(
            "encoder T={:<5} {:.6} s ± {:.6}\n",
            t.size, t.stats.mean, t.stats.std
        ));
    }
    text.push_str(&format!(
        "encoder log-log slope {:.3} (band {:?})\n",
        report.encoder_slope,
        runtime::ENCODER_SLOPE_BAND
    ));
    for f in &report.flags {
        text.push_str(&format!("flagged: {f}\n"));
    }
    if let Some(path) = &cfg.output {
        io::write_json(
            path,
            &RuntimeFile {
                provenance: &provenance,
                config: &cfg,
                report: &report,
            },
        )?;
    }
    write_out(stdout, &text)
}
