use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, END, PAD, START, UNK};
use crate::error::{Error, Result};

/// Truncation limits applied while encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_enc_steps: usize,
    pub max_dec_steps: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_enc_steps: 400,
            max_dec_steps: 100,
        }
    }
}

/// A source/target pair encoded against a vocabulary, with the per-example
/// extended vocabulary used by the pointer.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub source_ids: Vec<usize>,
    pub source_ext_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub target_ext_ids: Vec<usize>,
    /// Source OOVs in first-occurrence order; OOV `k` has extended id `V + k`.
    pub oovs: Vec<String>,
    pub keywords: Option<Vec<String>>,
}

impl Example {
    pub fn encode(source: &[String], target: &[String], vocab: &Vocab, limits: Limits) -> Self {
        let source: Vec<String> = source.iter().take(limits.max_enc_steps).cloned().collect();
        let target: Vec<String> = target.iter().take(limits.max_dec_steps).cloned().collect();
        let v = vocab.len();
        let mut oovs: Vec<String> = Vec::new();
        let mut source_ids = Vec::with_capacity(source.len());
        let mut source_ext_ids = Vec::with_capacity(source.len());
        for tok in &source {
            match vocab.id(tok) {
                Some(id) => {
                    source_ids.push(id);
                    source_ext_ids.push(id);
                }
                None => {
                    let k = match oovs.iter().position(|o| o == tok) {
                        Some(k) => k,
                        None => {
                            oovs.push(tok.clone());
                            oovs.len() - 1
                        }
                    };
                    source_ids.push(UNK);
                    source_ext_ids.push(v + k);
                }
            }
        }
        let mut target_ids = Vec::with_capacity(target.len());
        let mut target_ext_ids = Vec::with_capacity(target.len());
        for tok in &target {
            match vocab.id(tok) {
                Some(id) => {
                    target_ids.push(id);
                    target_ext_ids.push(id);
                }
                None => {
                    target_ids.push(UNK);
                    target_ext_ids.push(match oovs.iter().position(|o| o == tok) {
                        Some(k) => v + k,
                        None => UNK,
                    });
                }
            }
        }
        Example {
            source,
            target,
            source_ids,
            source_ext_ids,
            target_ids,
            target_ext_ids,
            oovs,
            keywords: None,
        }
    }

    pub fn with_keywords(mut self, keywords: Option<Vec<String>>) -> Self {
        self.keywords = keywords;
        self
    }

    /// Decoder steps including the end token.
    pub fn decoder_steps(&self) -> usize {
        self.target_ids.len() + 1
    }
}

/// Padded id arrays for a group of examples, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    /// Decoder steps: target length plus the end token.
    pub tgt_len: usize,
    pub vocab_size: usize,
    pub src_ids: Vec<usize>,
    pub src_ext_ids: Vec<usize>,
    pub src_mask: Vec<f64>,
    /// `<s>` followed by gold target ids (OOVs as UNK): teacher forcing inputs.
    pub dec_inputs: Vec<usize>,
    /// Gold target extended ids followed by `</s>`.
    pub targets: Vec<usize>,
    pub tgt_mask: Vec<f64>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
    pub max_oov: usize,
    pub oovs: Vec<Vec<String>>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example], vocab_size: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(i) = examples.iter().position(|e| e.source_ids.is_empty()) {
            return Err(Error::contract(format!("example {i} has an empty source")));
        }
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.source_ids.len()).max().unwrap();
        let tgt_len = examples.iter().map(|e| e.decoder_steps()).max().unwrap();
        let max_oov = examples.iter().map(|e| e.oovs.len()).max().unwrap();
        let mut b = Batch {
            size,
            src_len,
            tgt_len,
            vocab_size,
            src_ids: vec![PAD; size * src_len],
            src_ext_ids: vec![PAD; size * src_len],
            src_mask: vec![0.0; size * src_len],
            dec_inputs: vec![PAD; size * tgt_len],
            targets: vec![PAD; size * tgt_len],
            tgt_mask: vec![0.0; size * tgt_len],
            src_lens: Vec::with_capacity(size),
            tgt_lens: Vec::with_capacity(size),
            max_oov,
            oovs: Vec::with_capacity(size),
        };
        for (r, e) in examples.iter().enumerate() {
            for (t, (&id, &ext)) in e.source_ids.iter().zip(&e.source_ext_ids).enumerate() {
                b.src_ids[r * src_len + t] = id;
                b.src_ext_ids[r * src_len + t] = ext;
                b.src_mask[r * src_len + t] = 1.0;
            }
            let steps = e.decoder_steps();
            for t in 0..steps {
                let at = r * tgt_len + t;
                b.dec_inputs[at] = if t == 0 { START } else { e.target_ids[t - 1] };
                b.targets[at] = if t < e.target_ext_ids.len() {
                    e.target_ext_ids[t]
                } else {
                    END
                };
                b.tgt_mask[at] = 1.0;
            }
            b.src_lens.push(e.source_ids.len());
            b.tgt_lens.push(steps);
            b.oovs.push(e.oovs.clone());
        }
        Ok(b)
    }

    pub fn ext_size(&self) -> usize {
        self.vocab_size + self.max_oov
    }
}

/// Consecutive batches in input order; the last one may be short.
pub fn make_batches(examples: &[Example], batch_size: usize, vocab_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    examples
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&Example> = chunk.iter().collect();
            Batch::from_examples(&refs, vocab_size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn vocab() -> Vocab {
        Vocab::from_words(["met", "the", "cat"])
    }

    #[test]
    fn oovs_get_first_occurrence_ids() {
        let v = vocab();
        let e = Example::encode(&toks("alice met bob"), &toks("bob met alice"), &v, Limits::default());
        let n = v.len();
        assert_eq!(e.oovs, toks("alice bob"));
        assert_eq!(e.source_ext_ids, vec![n, v.id("met").unwrap(), n + 1]);
        assert_eq!(e.source_ids, vec![UNK, v.id("met").unwrap(), UNK]);
        assert_eq!(e.target_ext_ids, vec![n + 1, v.id("met").unwrap(), n]);
        assert_eq!(e.target_ids, vec![UNK, v.id("met").unwrap(), UNK]);
    }

    #[test]
    fn in_vocab_source_keeps_ids() {
        let v = vocab();
        let e = Example::encode(&toks("the cat"), &toks("cat"), &v, Limits::default());
        assert_eq!(e.source_ids, e.source_ext_ids);
        assert!(e.oovs.is_empty());
    }

    #[test]
    fn target_oov_missing_from_source_is_unk() {
        let v = vocab();
        let e = Example::encode(&toks("the cat"), &toks("dog"), &v, Limits::default());
        assert_eq!(e.target_ext_ids, vec![UNK]);
    }

    #[test]
    fn truncation() {
        let v = vocab();
        let limits = Limits {
            max_enc_steps: 2,
            max_dec_steps: 1,
        };
        let e = Example::encode(&toks("the cat met"), &toks("cat the"), &v, limits);
        assert_eq!(e.source.len(), 2);
        assert_eq!(e.target.len(), 1);
    }

    #[test]
    fn padding_masks_and_oov_width() {
        let v = vocab();
        let a = Example::encode(&toks("x the y"), &toks("the"), &v, Limits::default());
        let b = Example::encode(&toks("the cat met the cat"), &toks("cat"), &v, Limits::default());
        let batch = Batch::from_examples(&[&a, &b], v.len()).unwrap();
        assert_eq!(batch.src_len, 5);
        let sums: Vec<f64> = batch.src_mask.chunks(5).map(|r| r.iter().sum()).collect();
        assert_eq!(sums, vec![3.0, 5.0]);
        assert_eq!(batch.max_oov, 2);
        assert_eq!(batch.ext_size(), v.len() + 2);
        assert_eq!(&batch.dec_inputs[..2], &[START, v.id("the").unwrap()]);
        assert_eq!(&batch.targets[..2], &[v.id("the").unwrap(), END]);
    }

    #[test]
    fn batch_size_one() {
        let v = vocab();
        let ex: Vec<Example> = ["the", "cat", "met"]
            .iter()
            .map(|s| Example::encode(&toks(s), &toks(s), &v, Limits::default()))
            .collect();
        let batches = make_batches(&ex, 1, v.len()).unwrap();
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| b.size == 1));
    }
}
