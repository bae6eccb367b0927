use std::path::PathBuf;

use mtlsum::data::{synth_task, write_jsonl, SynthKind, SynthSpec, Vocab};
use mtlsum::Result;

use super::{create_dir, write_file};
use crate::config::config_error;

#[derive(Clone, Debug)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub kinds: Vec<String>,
    pub vocab: usize,
    pub oov_pool: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SynthArgs {
    fn default() -> Self {
        let d = SynthSpec::default();
        SynthArgs {
            out: PathBuf::from("data"),
            seed: 0,
            kinds: ["copy-oov", "keyword-extract", "subset-rewrite"].map(String::from).to_vec(),
            vocab: d.vocab.len(),
            oov_pool: d.oov_pool.len(),
            min_len: d.min_len,
            max_len: d.max_len,
            train: d.train,
            valid: d.valid,
            test: d.test,
        }
    }
}

/// Paths are relative to the config's own directory.
fn starter_config(kinds: &[SynthKind]) -> String {
    let mut s = "output_dir = \"run\"\nseed = 0\n".to_string();
    for k in kinds {
        let p = |f: &str| format!("\"{}/{f}\"", k.name());
        s += &format!(
            "\n[[tasks]]\nname = {:?}\ntrain = {}\nvalid = {}\ntest = {}\nvocab = {}\n",
            k.name(),
            p("train.jsonl"),
            p("valid.jsonl"),
            p("test.jsonl"),
            p("vocab.txt"),
        );
    }
    let ratios = vec!["1"; kinds.len()].join(", ");
    s += &format!("\n[sharing]\npreset = \"final\"\n\n[train]\nratios = [{ratios}]\nmax_steps = 2000\nval_every = 250\n");
    s += "\n[eval]\nafter_train = true\n";
    s
}

/// Write `<out>/<kind>/{train,valid,test}.jsonl` and `vocab.txt` per kind,
/// plus a starter `run.toml`.
pub fn synth(args: &SynthArgs) -> Result<Vec<SynthKind>> {
    let kinds = args
        .kinds
        .iter()
        .map(|k| {
            SynthKind::parse(k).ok_or_else(|| {
                let known: Vec<&str> = SynthKind::ALL.iter().map(|k| k.name()).collect();
                config_error("--kinds", format!("unknown kind {k:?}; known: {known:?}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = SynthSpec::desk(args.vocab, args.oov_pool).sizes(args.train, args.valid, args.test);
    spec.min_len = args.min_len;
    spec.max_len = args.max_len;
    spec.validate().map_err(|e| config_error("synth", e.to_string()))?;
    for &k in &kinds {
        let c = synth_task(k, args.seed, &spec)?;
        let dir = args.out.join(k.name());
        create_dir(&dir)?;
        write_jsonl(&dir.join("train.jsonl"), &c.train)?;
        write_jsonl(&dir.join("valid.jsonl"), &c.valid)?;
        write_jsonl(&dir.join("test.jsonl"), &c.test)?;
        Vocab::from_words(&c.words).save(&dir.join("vocab.txt"))?;
    }
    write_file(&args.out.join("run.toml"), &starter_config(&kinds))?;
    Ok(kinds)
}
