//! Seeded training runs with early stopping, grid sweeps over depth, width,
//! family and activation placement, and the verification campaign that
//! pairs every construction with its oracle.
//!
//! A run generates its dataset once from the task seed. Each training seed
//! then drives two substreams: key 0 for parameter initialization (key
//! `2 + k` after the `k`-th restart) and key 1 for minibatch shuffling.

mod campaign;
mod sweep;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{adam_step, backward, clip_global_norm, mse, AdamConfig, AdamState, BackwardOptions};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams};
use crate::numkit::Rng;
use crate::tasks::{generate, Splits, TaskSpec};
use crate::theory::copier_model;

pub use campaign::{verify_campaign, CampaignOptions, CampaignReport};
pub use sweep::{
    sweep, write_plot_data, write_sweep_csv, Grid, SweepCell, SweepConfig, SweepResult, PLOT_AXES,
};

/// Test MSE below which a cell counts as solved.
pub const SUCCESS_MSE: f64 = 1e-3;
/// Fraction of the target variance above which a cell counts as failed.
pub const FAILURE_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Uniform `U[-1/√n, 1/√n]` on every trainable block.
    #[default]
    Random,
    /// The shift-register copier for the task lag, with its readout.
    Copier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative validation improvement that resets the patience counter.
    #[serde(default)]
    pub min_rel_improvement: f64,
    /// Global gradient-norm clip.
    #[serde(default)]
    pub clip: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub freeze_initial: bool,
    #[serde(default)]
    pub masked_loss: bool,
    /// Stop a seed once its validation loss falls below this value.
    #[serde(default)]
    pub target_loss: Option<f64>,
    /// Re-initializations allowed after a non-finite loss.
    #[serde(default)]
    pub max_restarts: usize,
    #[serde(default)]
    pub init: InitKind,
    /// Half-width of the uniform random initialization; `1/√n` when unset.
    #[serde(default)]
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 2000,
            patience: 100,
            min_rel_improvement: 0.0,
            clip: None,
            seeds: vec![0, 1, 2],
            freeze_initial: false,
            masked_loss: false,
            target_loss: None,
            max_restarts: 0,
            init: InitKind::Random,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.init_scale.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("init scale must be positive");
        }
        if self.clip.is_some_and(|c| c <= 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Desk-scale run: 2000 training sequences, the task's own val/test sizes.
    pub fn new(task: TaskSpec, model: ModelConfig) -> Self {
        let task = TaskSpec { train: task.train.min(2000), ..task };
        Self { task, model, train: TrainConfig::default() }
    }

    /// The full protocol: 10000/2000/2000 sequences, patience 400, 5 seeds.
    pub fn paper_scale(mut self) -> Self {
        self.task = self.task.with_sizes(10_000, 2_000, 2_000);
        self.train.patience = 400;
        self.train.max_epochs = self.train.max_epochs.max(400);
        self.train.seeds = (0..5).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.input_dim != self.task.d {
            return Err(Error::InvalidArgument(format!(
                "model input dim {} does not match task d = {}",
                self.model.input_dim, self.task.d
            )));
        }
        if self.model.output_dim() != self.task.d {
            return Err(Error::InvalidArgument(format!(
                "model output dim {} does not match task targets (d = {})",
                self.model.output_dim(),
                self.task.d
            )));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::hash_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum SeedStatus {
    Completed,
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: SeedStatus,
    pub best_val_loss: f64,
    /// Test MSE of the parameters restored from `best_epoch`.
    pub test_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub restarts: usize,
    pub param_count: usize,
    /// Mean minibatch loss per epoch (entry 0 is the full-set loss at init).
    pub train_curve: Vec<f64>,
    /// Validation MSE per epoch, entry 0 at initialization.
    pub val_curve: Vec<f64>,
}

impl SeedResult {
    pub fn completed(&self) -> bool {
        self.status == SeedStatus::Completed
    }
}

/// Mean and population standard deviation over completed seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub test_mean: f64,
    pub test_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub completed: usize,
    pub failed: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_seeds(seeds: &[SeedResult]) -> Self {
        let ok: Vec<&SeedResult> = seeds.iter().filter(|s| s.completed()).collect();
        let (test_mean, test_std) = mean_std(&ok.iter().map(|s| s.test_loss).collect::<Vec<_>>());
        let (val_mean, val_std) = mean_std(&ok.iter().map(|s| s.best_val_loss).collect::<Vec<_>>());
        Self {
            test_mean,
            test_std,
            val_mean,
            val_std,
            completed: ok.len(),
            failed: seeds.len() - ok.len(),
        }
    }
}

/// Deterministic outcome of a run. Wall-clock times live in [`RunTiming`]
/// so that repeating a run reproduces this record bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: RunConfig,
    /// Variance of the test targets, the reference for failure thresholds.
    pub target_variance: f64,
    pub success_mse: f64,
    pub failure_mse: f64,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every completed seed reached the success threshold.
    pub fn solved(&self) -> bool {
        self.aggregate.completed > 0 && self.seeds.iter().filter(|s| s.completed()).all(|s| s.test_loss < self.success_mse)
    }

    /// Best test MSE across completed seeds.
    pub fn best_test(&self) -> f64 {
        self.seeds.iter().filter(|s| s.completed()).map(|s| s.test_loss).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub config_hash: String,
    pub seconds_per_seed: Vec<f64>,
}

pub struct RunOutput {
    pub record: RunRecord,
    pub timing: RunTiming,
    /// Restored best parameters per seed (`None` for diverged seeds).
    pub models: Vec<Option<ModelParams>>,
}

fn initial_model(config: &RunConfig, rng: &mut Rng) -> Result<ModelParams> {
    match config.train.init {
        InitKind::Random => match config.train.init_scale {
            Some(scale) => ModelParams::random_with_scale(config.model.clone(), rng, scale),
            None => ModelParams::random(config.model.clone(), rng),
        },
        InitKind::Copier => {
            let p = copier_model(config.model.hidden, config.task.lag)?;
            if p.config() != &config.model {
                return Err(Error::InvalidArgument(format!(
                    "copier init for n={}, p={} needs model config {:?}",
                    config.model.hidden,
                    config.task.lag,
                    p.config()
                )));
            }
            Ok(p)
        }
    }
}

struct Attempt {
    best: ModelParams,
    best_val: f64,
    best_epoch: usize,
    epochs_run: usize,
    train_curve: Vec<f64>,
    val_curve: Vec<f64>,
}

fn train_attempt(config: &RunConfig, data: &Splits, mut model: ModelParams, shuffle: &mut Rng) -> Result<Attempt> {
    let tc = &config.train;
    let opts = BackwardOptions { masked: tc.masked_loss, freeze_initial: tc.freeze_initial };
    let adam = AdamConfig { lr: tc.lr, ..AdamConfig::default() };
    let mut state = AdamState::for_model(&model);
    let val0 = mse(&model, &data.val, tc.masked_loss)?;
    let mut att = Attempt {
        best: model.clone(),
        best_val: val0,
        best_epoch: 0,
        epochs_run: 0,
        train_curve: vec![mse(&model, &data.train, tc.masked_loss)?],
        val_curve: vec![val0],
    };
    if !val0.is_finite() {
        return Err(Error::NonFinite { context: "validation loss at initialization".into() });
    }
    let reached = |v: f64| tc.target_loss.is_some_and(|t| v < t);
    if reached(val0) {
        return Ok(att);
    }
    let mut reference = val0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..data.train.batch()).collect();
    for epoch in 1..=tc.max_epochs {
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            let mb = data.train.gather(chunk);
            let (loss, mut g) = backward(&model, &mb, opts)?;
            if let Some(c) = tc.clip {
                clip_global_norm(&mut g, c);
            }
            adam_step(&mut model, &g, &mut state, &adam)?;
            loss_sum += loss;
            batches += 1;
        }
        let val = mse(&model, &data.val, tc.masked_loss)?;
        if !val.is_finite() || model.validate().is_err() {
            return Err(Error::NonFinite { context: format!("validation loss at epoch {epoch}") });
        }
        att.train_curve.push(loss_sum / batches.max(1) as f64);
        att.val_curve.push(val);
        att.epochs_run = epoch;
        if val < att.best_val {
            att.best_val = val;
            att.best_epoch = epoch;
            att.best = model.clone();
        }
        if val < reference * (1.0 - tc.min_rel_improvement) {
            reference = val;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= tc.patience || reached(att.best_val) {
            break;
        }
    }
    Ok(att)
}

fn train_seed(config: &RunConfig, data: &Splits, seed: u64) -> Result<(SeedResult, Option<ModelParams>)> {
    let root = Rng::new(seed);
    let mut shuffle = root.substream(1);
    let param_count = ModelParams::zeros(config.model.clone())?.count_parameters(!config.train.freeze_initial);
    let mut restarts = 0;
    loop {
        let key = if restarts == 0 { 0 } else { 1 + restarts as u64 };
        let model = initial_model(config, &mut root.substream(key))?;
        match train_attempt(config, data, model, &mut shuffle) {
            Ok(att) => {
                let test_loss = mse(&att.best, &data.test, config.train.masked_loss)?;
                let result = SeedResult {
                    seed,
                    status: SeedStatus::Completed,
                    best_val_loss: att.best_val,
                    test_loss,
                    best_epoch: att.best_epoch,
                    epochs_run: att.epochs_run,
                    restarts,
                    param_count,
                    train_curve: att.train_curve,
                    val_curve: att.val_curve,
                };
                return Ok((result, Some(att.best)));
            }
            Err(e @ (Error::NonFinite { .. } | Error::NonFiniteActivation { .. } | Error::NonFiniteGradient { .. })) => {
                if restarts < config.train.max_restarts {
                    restarts += 1;
                    continue;
                }
                let result = SeedResult {
                    seed,
                    status: SeedStatus::Diverged(e.to_string()),
                    best_val_loss: f64::NAN,
                    test_loss: f64::NAN,
                    best_epoch: 0,
                    epochs_run: 0,
                    restarts,
                    param_count,
                    train_curve: Vec::new(),
                    val_curve: Vec::new(),
                };
                return Ok((result, None));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Trains every seed of the config and returns record, timings and the
/// restored best models.
pub fn run_detailed(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let data = generate(&config.task)?;
    let mut seeds = Vec::with_capacity(config.train.seeds.len());
    let mut models = Vec::with_capacity(config.train.seeds.len());
    let mut seconds = Vec::with_capacity(config.train.seeds.len());
    for &seed in &config.train.seeds {
        let start = Instant::now();
        let (result, model) = train_seed(config, &data, seed)?;
        seconds.push(start.elapsed().as_secs_f64());
        seeds.push(result);
        models.push(model);
    }
    let target_variance = data.test.target_variance();
    let hash = config.hash();
    let record = RunRecord {
        config_hash: hash.clone(),
        config: config.clone(),
        target_variance,
        success_mse: SUCCESS_MSE,
        failure_mse: FAILURE_FRACTION * target_variance,
        aggregate: Aggregate::from_seeds(&seeds),
        seeds,
    };
    Ok(RunOutput { record, timing: RunTiming { config_hash: hash, seconds_per_seed: seconds }, models })
}

/// Trains every seed of the config with early stopping on validation loss
/// and evaluates the restored best parameters on the test split.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    Ok(run_detailed(config)?.record)
}
