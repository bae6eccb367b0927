use std::path::{Path, PathBuf};

use mtlsum::checkpoint::Checkpoint;
use mtlsum::data::{encode_records, read_jsonl, write_jsonl, Example, Limits, Vocab, PAD, START};
use mtlsum::decoding::{beam_search, ids_to_tokens, DecodeConfig, DecodeRecord, PointerGenerator};
use mtlsum::model::ModelParams;
use mtlsum::{Error, Result};

use crate::config::{config_error, RunConfig};

#[derive(Clone, Debug, Default)]
pub struct DecodeArgs {
    /// A checkpoint file, or a run directory (its latest checkpoint).
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
    /// Defaults to the primary task.
    pub task: Option<String>,
    pub beam: Option<usize>,
    pub max_len: Option<usize>,
    pub min_len: Option<usize>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_dir() {
        return Checkpoint::load(path);
    }
    let dir = path.join("checkpoints");
    let latest = std::fs::read_dir(&dir)
        .map_err(|e| Error::Checkpoint(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .max()
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoints in {}", dir.display())))?;
    log::info!("using {}", latest.display());
    Checkpoint::load(&latest)
}

/// Beam-decode examples; the best hypothesis of each becomes one record.
pub fn decode_examples(
    params: &ModelParams,
    vocab: &Vocab,
    coverage: bool,
    examples: &[Example],
    cfg: &DecodeConfig,
) -> Result<Vec<DecodeRecord>> {
    let mut cfg = cfg.clone();
    // never valid outputs
    for id in [PAD, START] {
        if !cfg.banned.contains(&id) {
            cfg.banned.push(id);
        }
    }
    examples
        .iter()
        .map(|ex| {
            let model = PointerGenerator::new(params, coverage, ex)?;
            let best = beam_search(&model, &cfg)?.swap_remove(0);
            Ok(DecodeRecord {
                source: ex.source.join(" "),
                reference: (!ex.target.is_empty()).then(|| ex.target.join(" ")),
                hypothesis: ids_to_tokens(best.output(), vocab, &ex.oovs).join(" "),
                score: best.score(),
            })
        })
        .collect()
}

pub fn decode(args: &DecodeArgs) -> Result<usize> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let run: Option<RunConfig> = serde_json::from_value(ck.config.clone()).ok();
    let (index, state) = match &args.task {
        Some(name) => ck
            .tasks
            .iter()
            .enumerate()
            .find(|(_, t)| &t.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> = ck.tasks.iter().map(|t| t.name.as_str()).collect();
                config_error("--task", format!("no task {name:?} in checkpoint; known: {known:?}"))
            })?,
        None => (0, ck.primary()?),
    };
    let vocab = state.vocab().map_err(|e| Error::Checkpoint(format!("task {}: {e}", state.name)))?;
    if vocab.len() != state.params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "task {}: vocabulary has {} tokens but the model expects {}",
            state.name,
            vocab.len(),
            state.params.config.vocab_size
        )));
    }
    let mut cfg = run.as_ref().map(|r| r.decode.clone()).unwrap_or_default();
    if let Some(b) = args.beam {
        cfg.beam = b;
    }
    if let Some(m) = args.max_len {
        cfg.max_len = m;
    }
    if let Some(m) = args.min_len {
        cfg.min_len = m;
    }
    cfg.validate()?;
    let limits = run.as_ref().map_or_else(Limits::default, |r| r.data.limits());
    let records = read_jsonl(&args.input)?;
    let examples = encode_records(&records, &vocab, limits);
    if let Some(i) = examples.iter().position(|e| e.source_ids.is_empty()) {
        return Err(config_error("input", format!("{} line {} has an empty source", args.input.display(), i + 1)));
    }
    // coverage is trained for the primary task only
    let coverage = index == 0 && ck.coverage_active;
    log::info!(
        "decoding {} examples for task {} (beam {}, coverage {coverage})",
        examples.len(),
        state.name,
        cfg.beam
    );
    let out = decode_examples(&state.params, &vocab, coverage, &examples, &cfg)?;
    write_jsonl(&args.output, &out)?;
    Ok(out.len())
}
