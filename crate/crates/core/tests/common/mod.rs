#![allow(dead_code)]

use mtlsum::data::{encode_records, make_batches, synth_task, Example, Limits, SynthCorpus, SynthKind, SynthSpec, Vocab};
use mtlsum::decoding::{greedy_decode_batch, DecodeConfig};
use mtlsum::eval::{repetition_rate, token_matches};
use mtlsum::model::ModelParams;
use mtlsum::training::TaskData;

/// One synthetic task encoded against `vocab`, with its test split.
pub struct Encoded {
    pub data: TaskData,
    pub test: Vec<Example>,
}

pub fn encode_corpus(name: &str, c: &SynthCorpus, vocab: &Vocab) -> Encoded {
    let lim = Limits::default();
    Encoded {
        data: TaskData {
            name: name.to_string(),
            vocab: vocab.clone(),
            train: encode_records(&c.train, vocab, lim),
            valid: encode_records(&c.valid, vocab, lim),
        },
        test: encode_records(&c.test, vocab, lim),
    }
}

/// Corpora for `kinds` over one vocabulary covering all of them.
pub fn shared_vocab_tasks(kinds: &[SynthKind], seed: u64, spec: &SynthSpec) -> (Vocab, Vec<Encoded>) {
    let corpora: Vec<SynthCorpus> = kinds.iter().map(|&k| synth_task(k, seed, spec).unwrap()).collect();
    let vocab = Vocab::from_words(corpora.iter().flat_map(|c| c.words.iter()));
    let enc = corpora.iter().map(|c| encode_corpus(c.kind.name(), c, &vocab)).collect();
    (vocab, enc)
}

/// Greedy decoding summary over a test split.
pub struct GreedyStats {
    pub accuracy: f64,
    pub repetition: f64,
    /// Fraction of gold target tokens that are in the fixed vocabulary.
    pub in_vocab: f64,
    /// Largest id emitted.
    pub max_id: usize,
}

pub fn greedy_stats(params: &ModelParams, coverage: bool, test: &[Example], max_len: usize) -> GreedyStats {
    let v = params.config.vocab_size;
    let cfg = DecodeConfig { beam: 1, max_len, ..Default::default() };
    let (mut hit, mut tot, mut rep, mut inv, mut gold_n, mut max_id) = (0, 0, 0.0, 0, 0, 0);
    let mut i = 0;
    for b in make_batches(test, 50, v).unwrap() {
        for out in greedy_decode_batch(params, coverage, &b, &cfg).unwrap() {
            let gold = &test[i].target_ext_ids;
            i += 1;
            let (h, d) = token_matches(&out, gold);
            hit += h;
            tot += d;
            inv += gold.iter().filter(|&&t| t < v).count();
            gold_n += gold.len();
            max_id = out.iter().copied().fold(max_id, usize::max);
            let toks: Vec<String> = out.iter().map(usize::to_string).collect();
            rep += repetition_rate(&toks, 2);
        }
    }
    GreedyStats {
        accuracy: hit as f64 / tot.max(1) as f64,
        repetition: rep / test.len() as f64,
        in_vocab: inv as f64 / gold_n.max(1) as f64,
        max_id,
    }
}
