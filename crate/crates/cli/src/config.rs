//! The TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mtlsum::data::Limits;
use mtlsum::decoding::DecodeConfig;
use mtlsum::model::{ModelConfig, Tag};
use mtlsum::sharing::{default_gamma, PenaltyForm, ShareMode, SharingPlan};
use mtlsum::training::TrainConfig;
use mtlsum::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Overrides `train.seed`.
    #[serde(default)]
    pub seed: u64,
    /// The first task is the primary task.
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sharing: SharingConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Token-per-line vocabulary; built from the training split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Finished single-task run directory to warm-start from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub emb_dim: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub pointer: bool,
    pub init_range: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        ModelDims {
            emb_dim: d.emb_dim,
            hidden: d.hidden,
            attn_dim: d.attn_dim,
            pointer: d.pointer,
            init_range: d.init_range,
        }
    }
}

impl ModelDims {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            attn_dim: self.attn_dim,
            pointer: self.pointer,
            init_range: self.init_range,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub vocab_cap: usize,
    pub max_enc_steps: usize,
    pub max_dec_steps: usize,
    /// One vocabulary built over every task's training split.
    pub shared_vocab: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let l = Limits::default();
        DataConfig {
            vocab_cap: 50_000,
            max_enc_steps: l.max_enc_steps,
            max_dec_steps: l.max_dec_steps,
            shared_vocab: false,
        }
    }
}

impl DataConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_enc_steps: self.max_enc_steps,
            max_dec_steps: self.max_dec_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharingConfig {
    pub preset: String,
    /// Defaults by task count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub form: PenaltyForm,
    /// Per-tag overrides of the preset, e.g. `E1 = "soft"`.
    pub modes: BTreeMap<String, String>,
}

impl Default for SharingConfig {
    fn default() -> Self {
        SharingConfig {
            preset: "final".into(),
            gamma: None,
            form: PenaltyForm::Squared,
            modes: BTreeMap::new(),
        }
    }
}

impl SharingConfig {
    pub fn plan(&self, tasks: usize) -> Result<SharingPlan> {
        let gamma = self.gamma.unwrap_or_else(|| default_gamma(tasks));
        let mut plan = SharingPlan::preset(&self.preset, gamma)?.with_form(self.form);
        for (tag, mode) in &self.modes {
            let field = format!("sharing.modes.{tag}");
            let t = Tag::parse(tag).ok_or_else(|| config_error(&field, "unknown layer tag"))?;
            let m = ShareMode::parse(mode)
                .ok_or_else(|| config_error(&field, format!("unknown mode {mode:?}; use hard, soft or private")))?;
            plan = plan.with_mode(t, m);
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Decode and score the primary task's test split after training.
    pub after_train: bool,
    /// Cap on test examples; 0 means all.
    pub max_examples: usize,
}

pub fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| format!("config bytes {}..{}", s.start, s.end));
            config_error(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file; relative paths in it are taken against the
    /// file's own directory and made absolute.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(&base.canonicalize().map_err(io)?);
        Ok((cfg, text))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| *p = base.join(&*p);
        fix(&mut self.output_dir);
        for t in &mut self.tasks {
            fix(&mut t.train);
            fix(&mut t.valid);
            for p in [&mut t.test, &mut t.vocab, &mut t.warm_start].into_iter().flatten() {
                fix(p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The training config with the top-level seed applied.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(config_error("tasks", "at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.name.is_empty() {
                return Err(config_error(&format!("tasks[{i}].name"), "must not be empty"));
            }
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(config_error(&format!("tasks[{i}].name"), format!("duplicate task {:?}", t.name)));
            }
        }
        if self.train.ratios.len() != self.tasks.len() {
            return Err(config_error(
                "train.ratios",
                format!("{} ratios for {} tasks", self.train.ratios.len(), self.tasks.len()),
            ));
        }
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(config_error("train.seed", "set the seed at the top level"));
        }
        if self.data.vocab_cap <= mtlsum::data::RESERVED.len() {
            return Err(config_error("data.vocab_cap", "must exceed the 4 reserved tokens"));
        }
        if self.data.max_enc_steps == 0 || self.data.max_dec_steps == 0 {
            return Err(config_error("data.max_enc_steps", "truncation limits must be positive"));
        }
        self.effective_train().validate()?;
        self.sharing.plan(self.tasks.len())?;
        self.decode.validate()?;
        for t in &self.tasks {
            t.model.with_vocab(self.data.vocab_cap.max(5)).validate()?;
        }
        Ok(())
    }
}
