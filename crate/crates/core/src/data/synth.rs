//! Synthetic corpora that exercise the pointer, coverage and sharing paths.
//!
//! * `copy-oov`: target equals source; sources are salted with symbols from
//!   an OOV pool that never enters the vocabulary, so they can only be
//!   produced by copying.
//! * `keyword-extract`: a marker token precedes each salient source token;
//!   the target lists the salient tokens in order (saliency stand-in).
//! * `subset-rewrite`: `seg1 | seg2`; the target is `seg1` passed through a
//!   fixed word rewrite table (entailment stand-in: every target token is in
//!   the source or in the table's image).
//! * `repeat-copy`: copy over a small skewed alphabet with no repeated
//!   bigram in the target, which tempts a decoder into loops.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Record;
use crate::error::{Error, Result};
use crate::params::stable_hash;

pub const KEYWORD_MARKER: &str = "*";
pub const SEGMENT_DELIMITER: &str = "|";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    CopyOov,
    KeywordExtract,
    SubsetRewrite,
    RepeatCopy,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::CopyOov,
        SynthKind::KeywordExtract,
        SynthKind::SubsetRewrite,
        SynthKind::RepeatCopy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::CopyOov => "copy-oov",
            SynthKind::KeywordExtract => "keyword-extract",
            SynthKind::SubsetRewrite => "subset-rewrite",
            SynthKind::RepeatCopy => "repeat-copy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab: Vec<String>,
    pub oov_pool: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-token probability of drawing from the OOV pool.
    pub oov_rate: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Alphabet size for `repeat-copy`.
    pub alphabet: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::desk(50, 20)
    }
}

impl SynthSpec {
    pub fn desk(vocab: usize, oov_pool: usize) -> Self {
        SynthSpec {
            vocab: (0..vocab).map(|i| format!("w{i:02}")).collect(),
            oov_pool: (0..oov_pool).map(|i| format!("q{i:02}")).collect(),
            min_len: 5,
            max_len: 15,
            oov_rate: 0.1,
            train: 5000,
            valid: 500,
            test: 500,
            alphabet: 6,
        }
    }

    pub fn sizes(mut self, train: usize, valid: usize, test: usize) -> Self {
        self.train = train;
        self.valid = valid;
        self.test = test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            return Err(Error::contract("synthetic vocabulary is empty"));
        }
        let words: HashSet<&str> = self.vocab.iter().map(String::as_str).collect();
        if let Some(clash) = self.oov_pool.iter().find(|o| words.contains(o.as_str())) {
            return Err(Error::contract(format!("OOV pool symbol `{clash}` is also in the vocabulary")));
        }
        for marker in [KEYWORD_MARKER, SEGMENT_DELIMITER] {
            if words.contains(marker) || self.oov_pool.iter().any(|o| o == marker) {
                return Err(Error::contract(format!("`{marker}` is reserved as a marker")));
            }
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::contract(format!(
                "length range [{}, {}] invalid",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.oov_rate) {
            return Err(Error::contract("oov_rate must lie in [0, 1]"));
        }
        if self.alphabet < 3 || self.alphabet > self.vocab.len() {
            return Err(Error::contract("repeat-copy alphabet must be in [3, vocab size]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub kind: SynthKind,
    pub train: Vec<Record>,
    pub valid: Vec<Record>,
    pub test: Vec<Record>,
    /// Closed in-vocabulary word list (markers included, OOV pool excluded).
    pub words: Vec<String>,
}

/// Fixed word-to-word rewrite table used by `subset-rewrite`.
pub fn rewrite_table(spec: &SynthSpec, seed: u64) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&["rewrite-table"]));
    let mut shuffled = spec.vocab.clone();
    shuffled.shuffle(&mut rng);
    let n = (spec.vocab.len() / 5).max(1);
    let mut table = BTreeMap::new();
    for i in 0..n {
        let from = shuffled[i].clone();
        let to = shuffled[(i + n) % shuffled.len()].clone();
        if from != to {
            table.insert(from, to);
        }
    }
    table
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    table: BTreeMap<String, String>,
}

impl Generator<'_> {
    fn token(&mut self) -> String {
        if !self.spec.oov_pool.is_empty() && self.rng.gen_bool(self.spec.oov_rate) {
            self.spec.oov_pool.choose(&mut self.rng).unwrap().clone()
        } else {
            self.spec.vocab.choose(&mut self.rng).unwrap().clone()
        }
    }

    fn length(&mut self) -> usize {
        self.rng.gen_range(self.spec.min_len..=self.spec.max_len)
    }

    fn sequence(&mut self, len: usize) -> Vec<String> {
        (0..len).map(|_| self.token()).collect()
    }

    fn example(&mut self, kind: SynthKind) -> Record {
        match kind {
            SynthKind::CopyOov => {
                let len = self.length();
                let src = self.sequence(len);
                Record::new(&src, &src)
            }
            SynthKind::KeywordExtract => {
                let len = self.length();
                let body = self.sequence(len);
                let k = self.rng.gen_range(1..=3.min(len));
                let mut picks: Vec<usize> = rand::seq::index::sample(&mut self.rng, len, k).into_vec();
                picks.sort_unstable();
                let mut src = Vec::with_capacity(len + k);
                let mut keywords = Vec::with_capacity(k);
                for (i, tok) in body.into_iter().enumerate() {
                    if picks.binary_search(&i).is_ok() {
                        src.push(KEYWORD_MARKER.to_string());
                        keywords.push(tok.clone());
                    }
                    src.push(tok);
                }
                let mut rec = Record::new(&src, &keywords);
                rec.keywords = Some(keywords);
                rec
            }
            SynthKind::SubsetRewrite => {
                let len = self.length().max(3);
                let head = self.rng.gen_range(2..=((len - 1) / 2).max(2));
                let seg1 = self.sequence(head);
                let seg2 = self.sequence(len - 1 - head);
                let mut src = seg1.clone();
                src.push(SEGMENT_DELIMITER.to_string());
                src.extend(seg2);
                let tgt: Vec<String> = seg1
                    .iter()
                    .map(|t| self.table.get(t).cloned().unwrap_or_else(|| t.clone()))
                    .collect();
                Record::new(&src, &tgt)
            }
            SynthKind::RepeatCopy => {
                let src = self.bigram_free_sequence();
                Record::new(&src, &src)
            }
        }
    }

    // Skewed draw from a small alphabet; never repeats a bigram or a token
    // twice in a row.
    fn bigram_free_sequence(&mut self) -> Vec<String> {
        let a = self.spec.alphabet;
        let weights: Vec<f64> = (0..a).map(|r| 1.0 / (r as f64 + 1.0)).collect();
        let len = self.length();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut out: Vec<usize> = vec![self.weighted(&weights, |_| true).unwrap()];
        while out.len() < len {
            let prev = *out.last().unwrap();
            let next = self.weighted(&weights, |c| c != prev && !seen.contains(&(prev, c)));
            match next {
                Some(c) => {
                    seen.insert((prev, c));
                    out.push(c);
                }
                None => break,
            }
        }
        out.into_iter().map(|i| self.spec.vocab[i].clone()).collect()
    }

    fn weighted(&mut self, weights: &[f64], allow: impl Fn(usize) -> bool) -> Option<usize> {
        let total: f64 = (0..weights.len()).filter(|&i| allow(i)).map(|i| weights[i]).sum();
        if total <= 0.0 {
            return None;
        }
        let mut x = self.rng.gen_range(0.0..total);
        for (i, &w) in weights.iter().enumerate() {
            if !allow(i) {
                continue;
            }
            if x < w {
                return Some(i);
            }
            x -= w;
        }
        (0..weights.len()).rev().find(|&i| allow(i))
    }
}

/// Generate train/valid/test splits for one task, deterministic in `seed`.
pub fn synth_task(kind: SynthKind, seed: u64, spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut gen = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&["synth", kind.name()])),
        table: rewrite_table(spec, seed),
    };
    let mut split = |n: usize| (0..n).map(|_| gen.example(kind)).collect::<Vec<_>>();
    let train = split(spec.train);
    let valid = split(spec.valid);
    let test = split(spec.test);
    let mut words = spec.vocab.clone();
    match kind {
        SynthKind::KeywordExtract => words.push(KEYWORD_MARKER.to_string()),
        SynthKind::SubsetRewrite => words.push(SEGMENT_DELIMITER.to_string()),
        SynthKind::CopyOov | SynthKind::RepeatCopy => {}
    }
    Ok(SynthCorpus {
        kind,
        train,
        valid,
        test,
        words,
    })
}

/// The three multi-task corpora: copy-oov (primary), keyword-extract and
/// subset-rewrite.
pub fn synth_tasks(seed: u64, spec: &SynthSpec) -> Result<Vec<SynthCorpus>> {
    [SynthKind::CopyOov, SynthKind::KeywordExtract, SynthKind::SubsetRewrite]
        .into_iter()
        .map(|k| synth_task(k, seed, spec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec::desk(50, 20).sizes(200, 20, 20)
    }

    #[test]
    fn zero_oov_pool_is_plain_copy() {
        let spec = SynthSpec::desk(50, 0).sizes(100, 5, 5);
        let c = synth_task(SynthKind::CopyOov, 1, &spec).unwrap();
        for r in &c.train {
            assert_eq!(r.source, r.target);
            assert!(r.source_tokens().iter().all(|t| spec.vocab.contains(t)));
        }
    }

    #[test]
    fn copy_oov_contains_pool_symbols() {
        let spec = small();
        let c = synth_task(SynthKind::CopyOov, 3, &spec).unwrap();
        let n_oov = c
            .train
            .iter()
            .flat_map(|r| r.source_tokens())
            .filter(|t| spec.oov_pool.contains(t))
            .count();
        assert!(n_oov > 0);
        assert!(c.words.iter().all(|w| !spec.oov_pool.contains(w)));
    }

    #[test]
    fn keyword_targets_match_marks() {
        let c = synth_task(SynthKind::KeywordExtract, 5, &small()).unwrap();
        for r in &c.train {
            let src = r.source_tokens();
            let marked: Vec<String> = src
                .windows(2)
                .filter(|w| w[0] == KEYWORD_MARKER)
                .map(|w| w[1].clone())
                .collect();
            assert_eq!(marked, r.target_tokens());
            assert_eq!(r.keywords.as_ref().unwrap(), &marked);
        }
    }

    #[test]
    fn rewrite_targets_are_entailed() {
        let spec = small();
        let table = rewrite_table(&spec, 9);
        let c = synth_task(SynthKind::SubsetRewrite, 9, &spec).unwrap();
        for r in &c.train {
            let src = r.source_tokens();
            let cut = src.iter().position(|t| t == SEGMENT_DELIMITER).unwrap();
            let expect: Vec<String> = src[..cut]
                .iter()
                .map(|t| table.get(t).cloned().unwrap_or_else(|| t.clone()))
                .collect();
            assert_eq!(expect, r.target_tokens());
        }
    }

    #[test]
    fn repeat_copy_has_no_repeated_bigrams() {
        let c = synth_task(SynthKind::RepeatCopy, 2, &small()).unwrap();
        for r in &c.train {
            let t = r.target_tokens();
            let mut seen = HashSet::new();
            for w in t.windows(2) {
                assert!(seen.insert((w[0].clone(), w[1].clone())), "{t:?}");
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_tasks(11, &small()).unwrap();
        let b = synth_tasks(11, &small()).unwrap();
        assert_eq!(a, b);
        let c = synth_tasks(12, &small()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn overlapping_pool_rejected() {
        let mut spec = small();
        spec.oov_pool.push("w03".into());
        assert!(matches!(
            synth_task(SynthKind::CopyOov, 0, &spec),
            Err(Error::Contract(_))
        ));
    }
}
