//! Corpus ingestion, vocabularies, pointer-aware encoding and batching.

mod corpus;
mod example;
mod synth;
mod vocab;

pub use corpus::{read_jsonl, tokenize, write_jsonl, Record};
pub use example::{make_batches, Batch, Example, Limits};
pub use synth::{
    rewrite_table, synth_task, synth_tasks, SynthCorpus, SynthKind, SynthSpec, KEYWORD_MARKER,
    SEGMENT_DELIMITER,
};
pub use vocab::{Vocab, END, PAD, RESERVED, START, UNK};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Encode corpus records against a vocabulary.
pub fn encode_records(records: &[Record], vocab: &Vocab, limits: Limits) -> Vec<Example> {
    records
        .iter()
        .map(|r| {
            Example::encode(&r.source_tokens(), &r.target_tokens(), vocab, limits)
                .with_keywords(r.keywords.clone())
        })
        .collect()
}

/// Endless batches over a training set, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, rng: ChaCha8Rng) -> Self {
        let mut s = BatchStream {
            order: (0..len).collect(),
            cursor: 0,
            batch_size: batch_size.max(1),
            epoch: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_batch(&mut self, examples: &[Example], vocab_size: usize) -> Result<Batch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picked: Vec<&Example> = self.order[self.cursor..end]
            .iter()
            .map(|&i| &examples[i])
            .collect();
        self.cursor = end;
        Batch::from_examples(&picked, vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stream_is_deterministic_and_reshuffles() {
        let v = Vocab::from_words(["a", "b", "c"]);
        let ex: Vec<Example> = (0..5)
            .map(|i| {
                let s = vec!["a".to_string(); i + 1];
                Example::encode(&s, &s, &v, Limits::default())
            })
            .collect();
        let run = || {
            let mut s = BatchStream::new(ex.len(), 2, ChaCha8Rng::seed_from_u64(4));
            (0..6)
                .map(|_| s.next_batch(&ex, v.len()).unwrap().src_lens)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut s = BatchStream::new(ex.len(), 2, ChaCha8Rng::seed_from_u64(4));
        for _ in 0..3 {
            s.next_batch(&ex, v.len()).unwrap();
        }
        assert_eq!(s.epoch(), 1);
    }
}
