//! Multi-task training: loss assembly, optimizer, mixing schedule, warm
//! start and the coverage phase.

mod objective;
mod optim;
mod schedule;
mod trainer;

pub use objective::TaskObjective;
pub use optim::{clip_gradients, Adam};
pub use schedule::MixingScheduler;
pub use trainer::{
    read_metrics, warm_start, warm_start_step, MetricRecord, RunDir, RunStatus, StepLoss, TaskData, TaskSetup, TrainOutcome,
    Trainer, WarmStart,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When the coverage term and coverage attention input are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    Off,
    /// From the first step.
    #[default]
    On,
    /// Train without coverage until convergence, then switch it on and drop
    /// the learning rate to `coverage_lr`.
    TwoPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Coverage loss weight.
    pub lambda: f64,
    /// Mini-batches per task per cycle, primary first.
    pub ratios: Vec<u32>,
    pub lr: f64,
    pub coverage_lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validate every this many steps.
    pub val_every: usize,
    /// Cap on validation examples per task; 0 means all.
    pub val_examples: usize,
    /// Evaluations without improvement before the primary task counts as converged.
    pub patience: usize,
    pub checkpoint_every: usize,
    pub warm_start_fraction: f64,
    pub seed: u64,
    pub coverage: CoverageMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            ratios: vec![1],
            lr: 1e-3,
            coverage_lr: 1e-4,
            clip_norm: 2.0,
            batch_size: 16,
            max_steps: 2000,
            val_every: 100,
            val_examples: 0,
            patience: 5,
            checkpoint_every: 100,
            warm_start_fraction: 0.9,
            seed: 0,
            coverage: CoverageMode::On,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("train.{field}"), msg));
        if self.ratios.iter().all(|&r| r == 0) {
            return bad("ratios", "at least one ratio must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", format!("must be > 0, got {}", self.clip_norm));
        }
        if !(0.0..=1.0).contains(&self.warm_start_fraction) {
            return bad(
                "warm_start_fraction",
                format!("must lie in [0, 1], got {}", self.warm_start_fraction),
            );
        }
        if !(self.lr >= 0.0 && self.coverage_lr >= 0.0) {
            return bad("lr", "learning rates must be >= 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.val_every == 0 || self.checkpoint_every == 0 {
            return bad("val_every", "cadences must be positive".into());
        }
        Ok(())
    }
}
