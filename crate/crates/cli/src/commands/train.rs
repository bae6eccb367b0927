use std::collections::BTreeMap;
use std::path::PathBuf;

use mtlsum::data::{encode_records, read_jsonl, write_jsonl, Record, Vocab};
use mtlsum::training::{warm_start, RunDir, RunStatus, TaskData, TaskSetup, TrainOutcome, Trainer};
use mtlsum::{Error, Result};

use super::eval::write_report;
use super::{decode_examples, write_file};
use crate::config::{config_error, RunConfig, TaskConfig};
use mtlsum::eval::{evaluate, EvalItem};

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub max_steps: Option<usize>,
    pub seed: Option<u64>,
}

struct Loaded {
    setup: TaskSetup,
    optimizer: Option<mtlsum::training::Adam>,
    test: Option<Vec<Record>>,
}

fn token_sequences(records: &[Record]) -> Vec<Vec<String>> {
    records
        .iter()
        .flat_map(|r| [r.source_tokens(), r.target_tokens()])
        .collect()
}

fn build_vocab(records: &[&[Record]], cap: usize) -> Result<Vocab> {
    let seqs: Vec<Vec<String>> = records.iter().flat_map(|r| token_sequences(r)).collect();
    Vocab::build(seqs.iter().map(Vec::as_slice), cap)
}

fn load_task(cfg: &RunConfig, t: &TaskConfig, train: Vec<Record>, shared: Option<&Vocab>) -> Result<Loaded> {
    let valid = read_jsonl(&t.valid)?;
    let test = t.test.as_ref().map(|p| read_jsonl(p)).transpose()?;
    let field = format!("tasks.{}", t.name);
    let mut optimizer = None;
    let mut init = None;
    let vocab = if let Some(dir) = &t.warm_start {
        let ws = warm_start(dir, cfg.train.warm_start_fraction)?;
        let state = match ws.checkpoint.task(&t.name) {
            Some(s) => s,
            None if ws.checkpoint.tasks.len() == 1 => &ws.checkpoint.tasks[0],
            None => {
                return Err(config_error(
                    &format!("{field}.warm_start"),
                    format!("{} has no task named {:?}", dir.display(), t.name),
                ))
            }
        };
        log::info!(
            "{}: warm start from step {} (best {}, target {})",
            t.name,
            ws.checkpoint.step,
            ws.best_step,
            ws.target
        );
        init = Some(state.params.clone());
        optimizer = Some(state.optimizer.clone());
        state.vocab()?
    } else if let Some(p) = &t.vocab {
        Vocab::load(p)?
    } else if let Some(v) = shared {
        v.clone()
    } else {
        build_vocab(&[&train], cfg.data.vocab_cap)?
    };
    let model = t.model.with_vocab(vocab.len());
    if let Some(p) = &init {
        if p.config != model {
            return Err(config_error(
                &format!("{field}.model"),
                "warm-start checkpoint was trained with different model dimensions",
            ));
        }
    }
    let limits = cfg.data.limits();
    let data = TaskData {
        name: t.name.clone(),
        train: encode_records(&train, &vocab, limits),
        valid: encode_records(&valid, &vocab, limits),
        vocab,
    };
    if data.valid.is_empty() {
        return Err(config_error(&field, format!("{} is empty", t.valid.display())));
    }
    Ok(Loaded {
        setup: TaskSetup { data, model, init },
        optimizer,
        test,
    })
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let (mut cfg, text) = RunConfig::load(&args.config)?;
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = args.max_steps {
        cfg.train.max_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.train.seed = 0;
    }
    cfg.validate()?;

    let trains = cfg
        .tasks
        .iter()
        .map(|t| read_jsonl(&t.train))
        .collect::<Result<Vec<_>>>()?;
    let shared = if cfg.data.shared_vocab {
        let all: Vec<&[Record]> = trains.iter().map(Vec::as_slice).collect();
        Some(build_vocab(&all, cfg.data.vocab_cap)?)
    } else {
        None
    };
    let mut loaded = Vec::new();
    for (t, train) in cfg.tasks.iter().zip(trains) {
        loaded.push(load_task(&cfg, t, train, shared.as_ref())?);
    }
    let plan = cfg.sharing.plan(cfg.tasks.len())?;
    log::info!(
        "{} task(s), preset {}, gamma {:e}",
        cfg.tasks.len(),
        cfg.sharing.preset,
        plan.gamma
    );
    let optimizers: Vec<_> = loaded.iter().map(|l| l.optimizer.clone()).collect();
    let test = loaded[0].test.take();
    let setups = loaded.into_iter().map(|l| l.setup).collect();
    let mut trainer = Trainer::new(cfg.effective_train(), plan, setups)?;
    for (i, o) in optimizers.into_iter().enumerate() {
        if let Some(adam) = o {
            trainer.set_optimizer(i, adam)?;
        }
    }
    let dir = RunDir::create(&cfg.output_dir, "config.toml", &text)?;
    let root = dir.root().to_path_buf();
    write_file(&root.join("effective.toml"), &cfg.to_toml())?;
    for i in 0..cfg.tasks.len() {
        let t = trainer.task(i);
        t.vocab.save(&root.join(format!("vocab-{}.txt", t.name)))?;
    }
    let echo = serde_json::to_value(&cfg).map_err(|source| Error::Json {
        context: "config echo".into(),
        source,
    })?;
    let mut trainer = trainer.with_run_dir(dir).with_echo(echo);
    let outcome = trainer.run()?;
    let mut last: BTreeMap<&str, f64> = BTreeMap::new();
    for r in trainer.history() {
        if let Some(v) = r.val_loss {
            last.insert(&r.task, v);
        }
    }
    log::info!("finished after {} steps: {:?}; last validation {last:?}", outcome.steps, outcome.status);

    if cfg.eval.after_train && !matches!(outcome.status, RunStatus::Diverged { .. }) {
        match test {
            Some(records) => {
                let n = if cfg.eval.max_examples == 0 {
                    records.len()
                } else {
                    cfg.eval.max_examples.min(records.len())
                };
                let data = trainer.task(0);
                let examples = encode_records(&records[..n], &data.vocab, cfg.data.limits());
                let params = trainer.registry().snapshot(0);
                let decoded = decode_examples(&params, &data.vocab, trainer.coverage_active(), &examples, &cfg.decode)?;
                write_jsonl(&root.join("decoded.jsonl"), &decoded)?;
                let items: Vec<EvalItem> = decoded
                    .iter()
                    .zip(&records)
                    .map(|(d, r)| EvalItem {
                        hypothesis: &d.hypothesis,
                        reference: &r.target,
                        source: Some(&r.source),
                        keywords: r.keywords.as_deref(),
                    })
                    .collect();
                let report = evaluate(&items);
                write_report(&root.join("eval"), &report)?;
                log::info!("test ROUGE-1 F1 {:.4}, ROUGE-L F1 {:.4}", report.rouge1.f1, report.rouge_l.f1);
            }
            None => log::warn!("eval.after_train is set but the primary task has no test split"),
        }
    }
    Ok(outcome)
}
