//! Versioned JSON checkpoints.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sharing::SharingPlan;
use crate::training::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub name: String,
    /// Vocabulary tokens in id order, reserved tokens included.
    pub vocab: Vec<String>,
    pub params: ModelParams,
    pub optimizer: Adam,
}

impl TaskState {
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_token_list(&self.vocab)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    /// Echo of the configuration that produced the run.
    pub config: serde_json::Value,
    pub plan: SharingPlan,
    pub coverage_active: bool,
    pub lr: f64,
    pub val_loss: Option<f64>,
    pub tasks: Vec<TaskState>,
}

impl Checkpoint {
    pub fn task(&self, name: &str) -> Option<&TaskState> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn primary(&self) -> Result<&TaskState> {
        self.tasks
            .first()
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no tasks".into()))
    }

    /// Write to a temporary sibling, then rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_vec(self).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{} is not valid JSON: {e}", path.display())))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "{} has version {v}, expected {CHECKPOINT_VERSION}",
                    path.display()
                )))
            }
            None => {
                return Err(Error::Checkpoint(format!("{} has no version field", path.display())))
            }
        }
        let ck: Checkpoint = serde_json::from_value(raw)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        for t in &ck.tasks {
            t.params
                .validate()
                .map_err(|e| Error::Checkpoint(format!("task {}: {e}", t.name)))?;
        }
        Ok(ck)
    }
}
