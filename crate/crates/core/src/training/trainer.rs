use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_gradients, Adam};
use super::schedule::MixingScheduler;
use super::{CoverageMode, TrainConfig};
use crate::checkpoint::{Checkpoint, TaskState, CHECKPOINT_VERSION};
use crate::data::{make_batches, Batch, BatchStream, Example, Vocab};
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, loss_value, ModelConfig, ModelParams};
use crate::params::stable_hash;
use crate::sharing::{ParamRegistry, SharingPlan};

/// How convergence is decided; recorded in run metadata.
pub const CONVERGENCE_RULE: &str =
    "primary-task validation NLL has not improved on its best value for `patience` consecutive evaluations";

#[derive(Clone, Debug)]
pub struct TaskData {
    pub name: String,
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
}

#[derive(Clone, Debug)]
pub struct TaskSetup {
    pub data: TaskData,
    pub model: ModelConfig,
    /// Starting parameters; fresh initialization when absent.
    pub init: Option<ModelParams>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub task: usize,
    pub nll: f64,
    pub l_cov: f64,
    pub penalty: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub task: String,
    /// `train`, `val` or `phase`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_cov: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    /// Reached `max_steps`.
    Completed,
    /// Primary-task patience ran out.
    Converged,
    /// A loss or gradient became non-finite; the last checkpoint is kept.
    Diverged { step: usize, detail: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps: usize,
    pub best_val: Option<f64>,
    pub best_step: Option<usize>,
    pub coverage_from: Option<usize>,
    pub checkpoint_steps: Vec<usize>,
    pub convergence: String,
}

/// Exclusive handle on a run directory: config echo, metric log,
/// checkpoints and metadata. Holds a lock file until dropped.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
    metrics: BufWriter<File>,
}

impl RunDir {
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const META: &'static str = "meta.json";
    pub const LOCK: &'static str = "run.lock";

    /// Create (or reuse) `root` and take its lock. `echo` is written
    /// verbatim to `echo_name`.
    pub fn create(root: &Path, echo_name: &str, echo: &str) -> Result<Self> {
        std::fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        let lock = root.join(Self::LOCK);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::config(
                    "output_dir",
                    format!("{} is locked by another run ({})", root.display(), lock.display()),
                ))
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let echo_path = root.join(echo_name);
        std::fs::write(&echo_path, echo).map_err(|e| Error::io(&echo_path, e))?;
        let mpath = root.join(Self::METRICS);
        let metrics = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            lock,
            metrics: BufWriter::new(metrics),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(root: &Path, step: usize) -> PathBuf {
        root.join("checkpoints").join(format!("step-{step:08}.json"))
    }

    fn log(&mut self, rec: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|source| Error::Json {
            context: "metric record".into(),
            source,
        })?;
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&self.root, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.root, e))
    }

    fn write_meta(&self, outcome: &TrainOutcome) -> Result<()> {
        let p = self.root.join(Self::META);
        let json = serde_json::to_string_pretty(outcome).map_err(|source| Error::Json {
            context: p.display().to_string(),
            source,
        })?;
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = self.metrics.flush();
        let _ = std::fs::remove_file(&self.lock);
    }
}

/// Read back a metric log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|source| Error::Json {
                context: path.display().to_string(),
                source,
            })
        })
        .collect()
}

pub struct Trainer {
    config: TrainConfig,
    echo: serde_json::Value,
    registry: ParamRegistry,
    tasks: Vec<TaskData>,
    names: Vec<Vec<&'static str>>,
    optim: Vec<Adam>,
    streams: Vec<BatchStream>,
    val_batches: Vec<Vec<Batch>>,
    scheduler: MixingScheduler,
    step: usize,
    coverage_active: bool,
    coverage_from: Option<usize>,
    lr: f64,
    best: Option<(f64, usize)>,
    stale: usize,
    last_val: Option<f64>,
    history: Vec<MetricRecord>,
    retain: bool,
    retained: Vec<Checkpoint>,
    checkpoint_steps: Vec<usize>,
    run_dir: Option<RunDir>,
}

impl Trainer {
    /// Tasks are registered in order; the first is the primary task and
    /// hard-shared arrays take its initial values.
    pub fn new(config: TrainConfig, plan: SharingPlan, setups: Vec<TaskSetup>) -> Result<Self> {
        config.validate()?;
        if setups.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        if config.ratios.len() != setups.len() {
            return Err(Error::config(
                "train.ratios",
                format!("{} ratios for {} tasks", config.ratios.len(), setups.len()),
            ));
        }
        let mut registry = ParamRegistry::new(plan)?;
        let mut tasks = Vec::with_capacity(setups.len());
        let mut names = Vec::new();
        let mut optim = Vec::new();
        let mut streams = Vec::new();
        let mut val_batches = Vec::new();
        for s in setups {
            let d = s.data;
            s.model.validate()?;
            if s.model.vocab_size != d.vocab.len() {
                return Err(Error::config(
                    format!("tasks.{}.vocab_size", d.name),
                    format!("model expects {} but vocabulary has {}", s.model.vocab_size, d.vocab.len()),
                ));
            }
            if d.train.is_empty() {
                return Err(Error::config(format!("tasks.{}", d.name), "training set is empty"));
            }
            let init = match s.init {
                Some(p) => p,
                None => ModelParams::init(&s.model, config.seed, &d.name),
            };
            if init.config != s.model {
                return Err(Error::config(
                    format!("tasks.{}.model", d.name),
                    "initial parameters were built for a different model config",
                ));
            }
            let t = registry.register_task(&d.name, init)?;
            let specs = registry.specs(t);
            names.push(specs.iter().map(|s| s.name).collect());
            optim.push(Adam::new(specs.iter().map(|s| s.shape.iter().product())));
            let rng = ChaCha8Rng::seed_from_u64(config.seed ^ stable_hash(&["batches", &d.name]));
            streams.push(BatchStream::new(d.train.len(), config.batch_size, rng));
            let n = if config.val_examples == 0 {
                d.valid.len()
            } else {
                config.val_examples.min(d.valid.len())
            };
            val_batches.push(make_batches(&d.valid[..n], config.batch_size, d.vocab.len())?);
            tasks.push(d);
        }
        let scheduler = MixingScheduler::new(&config.ratios)?;
        let echo = serde_json::to_value(&config).unwrap_or(serde_json::Value::Null);
        Ok(Trainer {
            coverage_active: config.coverage == CoverageMode::On,
            coverage_from: (config.coverage == CoverageMode::On).then_some(0),
            lr: config.lr,
            config,
            echo,
            registry,
            tasks,
            names,
            optim,
            streams,
            val_batches,
            scheduler,
            step: 0,
            best: None,
            stale: 0,
            last_val: None,
            history: Vec::new(),
            retain: false,
            retained: Vec::new(),
            checkpoint_steps: Vec::new(),
            run_dir: None,
        })
    }

    pub fn with_run_dir(mut self, dir: RunDir) -> Self {
        self.run_dir = Some(dir);
        self
    }

    /// Configuration echo stored in checkpoints.
    pub fn with_echo(mut self, echo: serde_json::Value) -> Self {
        self.echo = echo;
        self
    }

    /// Keep every checkpoint in memory as well (for warm starts without a
    /// run directory).
    pub fn retain_checkpoints(mut self, yes: bool) -> Self {
        self.retain = yes;
        self
    }

    /// Load optimizer state alongside parameters, e.g. from a checkpoint.
    pub fn set_optimizer(&mut self, task: usize, adam: Adam) -> Result<()> {
        let sizes: Vec<usize> = self.registry.arrays(task).iter().map(|a| a.len()).collect();
        if !adam.matches(&sizes) {
            return Err(Error::Checkpoint(format!(
                "optimizer state does not match task {}",
                self.tasks[task].name
            )));
        }
        self.optim[task] = adam;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ParamRegistry {
        &mut self.registry
    }

    pub fn task(&self, i: usize) -> &TaskData {
        &self.tasks[i]
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn coverage_active(&self) -> bool {
        self.coverage_active
    }

    pub fn history(&self) -> &[MetricRecord] {
        &self.history
    }

    pub fn retained(&self) -> &[Checkpoint] {
        &self.retained
    }

    fn record(&mut self, rec: MetricRecord) -> Result<()> {
        if let Some(d) = self.run_dir.as_mut() {
            d.log(&rec)?;
        }
        self.history.push(rec);
        Ok(())
    }

    /// One optimizer step on the task the scheduler picks next.
    pub fn train_step(&mut self) -> Result<StepLoss> {
        let task = self.scheduler.next().expect("scheduler is endless");
        self.step_task(task)
    }

    fn step_task(&mut self, task: usize) -> Result<StepLoss> {
        let data = &self.tasks[task];
        let batch = self.streams[task].next_batch(&data.train, data.vocab.len())?;
        let coverage = task == 0 && self.coverage_active;
        let cfg = self.registry.config(task).clone();
        let (loss, mut grads) = {
            let arrays = self.registry.arrays(task);
            loss_and_grad(&cfg, &arrays, &batch, self.config.lambda, coverage)?
        };
        if !loss.total.is_finite() {
            return Err(Error::Numeric {
                param: format!("{} loss", data.name),
                detail: format!("total loss is {} at step {}", loss.total, self.step + 1),
            });
        }
        let pen = self.registry.soft_penalty(task);
        for (g, pg) in grads.iter_mut().zip(&pen.grads) {
            if let Some(pg) = pg {
                g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
            }
        }
        let grad_norm = clip_gradients(&mut grads, &self.names[task], self.config.clip_norm)?;
        let slots = self.registry.slot_ids(task).to_vec();
        let adam = &mut self.optim[task];
        adam.tick();
        for (i, &s) in slots.iter().enumerate() {
            adam.apply(i, &mut self.registry.slot_mut(s).data, &grads[i], self.lr);
        }
        self.step += 1;
        let out = StepLoss {
            task,
            nll: loss.nll,
            l_cov: loss.coverage,
            penalty: pen.value,
            total: loss.total + pen.value,
            grad_norm,
        };
        let rec = MetricRecord {
            step: self.step,
            task: self.tasks[task].name.clone(),
            kind: "train".into(),
            nll: Some(out.nll),
            l_cov: Some(out.l_cov),
            penalty: Some(out.penalty),
            total: Some(out.total),
            grad_norm: Some(grad_norm),
            val_loss: None,
            lr: self.lr,
        };
        self.record(rec)?;
        Ok(out)
    }

    /// Mean validation NLL per task, weighting batches by size.
    pub fn validate(&self) -> Result<Vec<f64>> {
        (0..self.tasks.len())
            .map(|t| {
                let cfg = self.registry.config(t);
                let arrays = self.registry.arrays(t);
                let coverage = t == 0 && self.coverage_active;
                let (mut sum, mut n) = (0.0, 0usize);
                for b in &self.val_batches[t] {
                    let l = loss_value(cfg, &arrays, b, self.config.lambda, coverage)?;
                    sum += l.nll * b.size as f64;
                    n += b.size;
                }
                Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
            })
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.echo.clone(),
            plan: self.registry.plan().clone(),
            coverage_active: self.coverage_active,
            lr: self.lr,
            val_loss: self.last_val,
            tasks: (0..self.tasks.len())
                .map(|t| TaskState {
                    name: self.tasks[t].name.clone(),
                    vocab: self.tasks[t].vocab.tokens().to_vec(),
                    params: self.registry.snapshot(t),
                    optimizer: self.optim[t].clone(),
                })
                .collect(),
        }
    }

    fn save_checkpoint(&mut self) -> Result<()> {
        if self.checkpoint_steps.last() == Some(&self.step) {
            return Ok(());
        }
        let ck = self.checkpoint();
        if let Some(d) = &self.run_dir {
            ck.save(&RunDir::checkpoint_path(d.root(), self.step))?;
        }
        if self.retain {
            self.retained.push(ck);
        }
        self.checkpoint_steps.push(self.step);
        Ok(())
    }

    fn evaluate(&mut self) -> Result<bool> {
        let vals = self.validate()?;
        for (t, &v) in vals.iter().enumerate() {
            let rec = MetricRecord {
                step: self.step,
                task: self.tasks[t].name.clone(),
                kind: "val".into(),
                nll: None,
                l_cov: None,
                penalty: None,
                total: None,
                grad_norm: None,
                val_loss: Some(v),
                lr: self.lr,
            };
            self.record(rec)?;
        }
        let primary = vals[0];
        if !primary.is_finite() {
            return Err(Error::Numeric {
                param: format!("{} validation", self.tasks[0].name),
                detail: format!("validation NLL is {primary} at step {}", self.step),
            });
        }
        self.last_val = Some(primary);
        match self.best {
            Some((b, _)) if primary >= b => self.stale += 1,
            _ => {
                self.best = Some((primary, self.step));
                self.stale = 0;
            }
        }
        if self.stale < self.config.patience {
            return Ok(false);
        }
        if self.config.coverage == CoverageMode::TwoPhase && !self.coverage_active {
            self.coverage_active = true;
            self.coverage_from = Some(self.step);
            self.lr = self.config.coverage_lr;
            self.best = None;
            self.stale = 0;
            let rec = MetricRecord {
                step: self.step,
                task: self.tasks[0].name.clone(),
                kind: "phase".into(),
                nll: None,
                l_cov: None,
                penalty: None,
                total: None,
                grad_norm: None,
                val_loss: None,
                lr: self.lr,
            };
            self.record(rec)?;
            return Ok(false);
        }
        Ok(true)
    }

    /// Train until `max_steps`, primary-task convergence, or divergence.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let mut status = RunStatus::Completed;
        while self.step < self.config.max_steps {
            let stepped = self.train_step();
            let converged = match stepped.and_then(|_| {
                let mut done = false;
                if self.step.is_multiple_of(self.config.val_every) {
                    done = self.evaluate()?;
                }
                Ok(done)
            }) {
                Ok(c) => c,
                Err(Error::Numeric { param, detail }) => {
                    status = RunStatus::Diverged {
                        step: self.step,
                        detail: format!("{param}: {detail}"),
                    };
                    break;
                }
                Err(e) => return Err(e),
            };
            if self.step.is_multiple_of(self.config.checkpoint_every) {
                self.save_checkpoint()?;
            }
            if converged {
                status = RunStatus::Converged;
                break;
            }
        }
        if !matches!(status, RunStatus::Diverged { .. }) {
            self.save_checkpoint()?;
        }
        let outcome = TrainOutcome {
            status,
            steps: self.step,
            best_val: self.best.map(|b| b.0),
            best_step: self.best.map(|b| b.1),
            coverage_from: self.coverage_from,
            checkpoint_steps: self.checkpoint_steps.clone(),
            convergence: format!("{CONVERGENCE_RULE} (patience {})", self.config.patience),
        };
        if let Some(d) = self.run_dir.as_mut() {
            d.flush()?;
            d.write_meta(&outcome)?;
        }
        Ok(outcome)
    }
}

/// Checkpoint step nearest to `ceil(fraction * best_step)`; ties go to the
/// earlier step. Fails when no checkpoint is at or before the target.
pub fn warm_start_step(checkpoint_steps: &[usize], best_step: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!("warm-start fraction {fraction} outside (0, 1]")));
    }
    let target = (fraction * best_step as f64).ceil() as usize;
    if !checkpoint_steps.iter().any(|&s| s <= target) {
        return Err(Error::contract(format!(
            "no checkpoint at or before step {target} (best step {best_step})"
        )));
    }
    let chosen = checkpoint_steps
        .iter()
        .copied()
        .min_by_key(|&s| (s.abs_diff(target), s))
        .expect("nonempty");
    Ok(chosen)
}

#[derive(Clone, Debug)]
pub struct WarmStart {
    pub checkpoint: Checkpoint,
    pub best_step: usize,
    pub target: usize,
}

impl WarmStart {
    /// Pick from checkpoints held in memory.
    pub fn from_retained(retained: &[Checkpoint], outcome: &TrainOutcome, fraction: f64) -> Result<Self> {
        let best = outcome
            .best_step
            .ok_or_else(|| Error::contract("baseline run recorded no validation loss"))?;
        let steps: Vec<usize> = retained.iter().map(|c| c.step).collect();
        let chosen = warm_start_step(&steps, best, fraction)?;
        let checkpoint = retained
            .iter()
            .find(|c| c.step == chosen)
            .cloned()
            .expect("chosen from this list");
        Ok(WarmStart {
            checkpoint,
            best_step: best,
            target: (fraction * best as f64).ceil() as usize,
        })
    }
}

/// Pick a warm-start checkpoint from a finished baseline run directory.
pub fn warm_start(run_dir: &Path, fraction: f64) -> Result<WarmStart> {
    let meta_path = run_dir.join(RunDir::META);
    let meta: TrainOutcome = serde_json::from_slice(
        &std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )
    .map_err(|source| Error::Json {
        context: meta_path.display().to_string(),
        source,
    })?;
    let best = meta
        .best_step
        .ok_or_else(|| Error::contract("baseline run recorded no validation loss"))?;
    let chosen = warm_start_step(&meta.checkpoint_steps, best, fraction)?;
    let checkpoint = Checkpoint::load(&RunDir::checkpoint_path(run_dir, chosen))?;
    Ok(WarmStart {
        checkpoint,
        best_step: best,
        target: (fraction * best as f64).ceil() as usize,
    })
}
