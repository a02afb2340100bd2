//! The `srr` subcommands. Each returns its result so callers (and tests)
//! can inspect it; printing is left to `main`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use srr_core::data::Dataset;
use srr_core::genharness::{
    evaluate, run_augmented_eval, run_shift_trials, slope_stats, Classifier, SlopeReport, ShiftTrialTable,
};
use srr_core::hvp::Fault;
use srr_core::net::{batch_loss, Network};
use srr_core::seeds::{self, Stream};
use srr_core::train::{sgd_train_observed, EpochRecord, Observe};
use srr_core::validation::{run_suite, CheckResult, SuiteOptions};

use crate::checkpoint::Checkpoint;
use crate::config::{prepare, RunConfig};
use crate::metrics::MetricsWriter;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const SHIFT_TRIALS_FILE: &str = "shift_trials.csv";
pub const SLOPE_REPORT_FILE: &str = "slope_report.csv";
pub const AUGMENT_SUMMARY_FILE: &str = "augment_summary.csv";

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Either accuracy (class labels) or mean loss (real targets).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Accuracy(f64),
    Loss(f64),
}

impl Score {
    fn better_than(self, other: Score) -> bool {
        match (self, other) {
            (Score::Accuracy(a), Score::Accuracy(b)) => a > b,
            (Score::Loss(a), Score::Loss(b)) => a < b,
            _ => false,
        }
    }
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Score::Accuracy(a) => write!(f, "accuracy: {a:.4}"),
            Score::Loss(l) => write!(f, "loss: {l:.6}"),
        }
    }
}

pub fn score(ck: &Checkpoint, ds: &Dataset) -> Result<Score> {
    check_architecture(&ck.network, ds)?;
    if ds.n_classes().is_some() {
        Ok(Score::Accuracy(evaluate(&ck.network, ds)?))
    } else {
        let out = ck.network.predict(&ds.features)?;
        Ok(Score::Loss(batch_loss(ck.loss, &out, &ds.targets())?))
    }
}

fn check_architecture(net: &Network, ds: &Dataset) -> Result<()> {
    ensure!(
        net.input_dim() == ds.n_features() && net.output_dim() == ds.output_dim(),
        "architecture mismatch: checkpoint maps {} inputs to {} outputs, data has {} features and needs {} outputs",
        net.input_dim(),
        net.output_dim(),
        ds.n_features(),
        ds.output_dim()
    );
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub last: EpochRecord,
    pub best_epoch: usize,
    pub best_validation: Score,
    pub test: Score,
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let data = prepare(cfg)?;
    let loss = cfg.loss_for(&data.train);
    let specs = cfg.layer_specs(data.train.output_dim());
    let net = Network::init(
        data.train.n_features(),
        &specs,
        &mut seeds::rng(cfg.seed, Stream::Init, 0),
    )?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    let mut metrics = MetricsWriter::create(&out.join(METRICS_FILE), cfg.record_wall_time)?;

    let mut best: Option<(usize, Score)> = None;
    let best_path = out.join(BEST_CHECKPOINT);
    let report = sgd_train_observed(
        &data.train.features,
        &data.train.targets(),
        &net,
        loss,
        &cfg.train_config(),
        |rec, current| {
            metrics.append(rec).map_err(to_core)?;
            let ck = Checkpoint::new(current.clone(), loss);
            let s = score(&ck, &data.validation).map_err(to_core)?;
            if best.is_none_or(|(_, b)| s.better_than(b)) {
                best = Some((rec.epoch, s));
                ck.save(&best_path).map_err(to_core)?;
            }
            Ok(Observe::Continue)
        },
    )?;
    let final_net = net.with_params(&report.final_weights)?;
    let final_ck = Checkpoint::new(final_net, loss);
    final_ck.save(out.join(FINAL_CHECKPOINT))?;
    let last = report.records.last().cloned().context("training ran no epochs")?;
    let (best_epoch, best_validation) = best.expect("at least one epoch");
    Ok(TrainSummary {
        out_dir: out.clone(),
        epochs: report.records.len(),
        last,
        best_epoch,
        best_validation,
        test: score(&final_ck, &data.test)?,
    })
}

fn to_core(e: anyhow::Error) -> srr_core::Error {
    srr_core::Error::Validation(format!("{e:#}"))
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: &str) -> Result<Score> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = prepare(cfg)?;
    score(&ck, &data.part(split)?)
}

/// Names checkpoints by file stem, suffixing repeats.
pub fn model_names(paths: &[PathBuf]) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        let mut name = stem.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{stem}#{k}");
            k += 1;
        }
        names.push(name);
    }
    names
}

#[derive(Clone, Debug)]
pub struct ShiftOutcome {
    pub table: ShiftTrialTable,
    pub report: SlopeReport,
}

pub fn shift_test(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<ShiftOutcome> {
    ensure!(!checkpoints.is_empty(), "shift-test needs at least one --checkpoint");
    let data = prepare(cfg)?;
    ensure!(data.test.n_classes().is_some(), "shift-test needs class labels");
    let nets = checkpoints
        .iter()
        .map(|p| {
            let ck = Checkpoint::load(p)?;
            check_architecture(&ck.network, &data.test).with_context(|| p.display().to_string())?;
            Ok(ck.network)
        })
        .collect::<Result<Vec<_>>>()?;
    let names = model_names(checkpoints);
    let models: Vec<(&str, &dyn Classifier)> = names
        .iter()
        .zip(&nets)
        .map(|(n, m)| (n.as_str(), m as &dyn Classifier))
        .collect();
    let table = run_shift_trials(&models, &data.test, &cfg.shift_spec())?;
    let report = slope_stats(&table)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    table.write_csv(BufWriter::new(File::create(cfg.out_dir.join(SHIFT_TRIALS_FILE))?))?;
    report.write_csv(BufWriter::new(File::create(cfg.out_dir.join(SLOPE_REPORT_FILE))?))?;
    Ok(ShiftOutcome { table, report })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSummary {
    pub plain: f64,
    pub at1: f64,
    pub at2: f64,
}

pub fn augment_test(cfg: &RunConfig, checkpoint: &Path) -> Result<AugmentSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = prepare(cfg)?;
    let test = &data.test;
    if test.geometry.is_none() {
        bail!("augment-test needs image data (digits or synth_digits)");
    }
    check_architecture(&ck.network, test)?;
    let net = &ck.network;
    let summary = AugmentSummary {
        plain: evaluate(net, test)?,
        at1: run_augmented_eval(net, test, &cfg.augment_config(cfg.augment.at1, 1))?,
        at2: run_augmented_eval(net, test, &cfg.augment_config(cfg.augment.at2, 2))?,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join(AUGMENT_SUMMARY_FILE))?;
    w.write_record(["test", "max_crop_px", "max_rot_deg", "accuracy"])?;
    w.write_record(["plain", "0", "0", &summary.plain.to_string()])?;
    for (name, tier, acc) in [
        ("at1", cfg.augment.at1, summary.at1),
        ("at2", cfg.augment.at2, summary.at2),
    ] {
        w.write_record([
            name.to_string(),
            tier.max_crop_px.to_string(),
            tier.max_rot_deg.to_string(),
            acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}

pub fn validate(inject_fault: bool) -> Result<Vec<CheckResult>> {
    let fault = if inject_fault { Fault::FlipRrBackwardSign } else { Fault::None };
    Ok(run_suite(&SuiteOptions { fault })?)
}
