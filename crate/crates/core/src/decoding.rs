//! Greedy and beam-search decoding over the extended vocabulary.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Batch, Example, Vocab, END, START, UNK};
use crate::error::{Error, Result};
use crate::model::{decoder_step, encode, DecoderState, EncodedSource, EncoderOutput, ModelParams, Weights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Tokens before the end token may be emitted.
    pub min_len: usize,
    /// Extended ids never emitted.
    pub banned: Vec<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 4,
            max_len: 100,
            min_len: 0,
            banned: Vec::new(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::config("decode.beam", "must be at least 1"));
        }
        if self.min_len > self.max_len {
            return Err(Error::config(
                "decode.min_len",
                format!("{} exceeds max_len {}", self.min_len, self.max_len),
            ));
        }
        Ok(())
    }

    fn allowed(&self, id: usize, step: usize) -> bool {
        !(self.banned.contains(&id) || id == END && step < self.min_len)
    }
}

/// A model that can be advanced one token at a time for several
/// hypotheses at once.
pub trait StepModel {
    type State: Clone;

    /// Width of the output distribution.
    fn ext_size(&self) -> usize;

    fn start(&self) -> Self::State;

    /// Output distribution and successor state for each `(state, previous token)`.
    fn step(&self, states: &[&Self::State], prev: &[usize]) -> Result<Vec<(Vec<f64>, Self::State)>>;
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Extended ids, including the end token when finished.
    pub tokens: Vec<usize>,
    pub logp: f64,
    pub state: S,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    /// Average log-probability per emitted token.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logp / self.tokens.len() as f64
        }
    }

    /// Tokens without the end marker.
    pub fn output(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&END, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

fn rank<S>(a: &Hypothesis<S>, b: &Hypothesis<S>) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search. Each step keeps the `beam` best expansions by cumulative
/// log-probability (ties to the lower token id); expansions ending in the
/// end token are set aside. Returns finished hypotheses, or the live beam
/// if none finished, sorted by length-normalized score.
pub fn beam_search<M: StepModel>(model: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis<M::State>>> {
    cfg.validate()?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logp: 0.0,
        state: model.start(),
        finished: false,
    }];
    let mut done: Vec<Hypothesis<M::State>> = Vec::new();
    for t in 0..cfg.max_len {
        if live.is_empty() || done.len() >= cfg.beam {
            break;
        }
        let prev: Vec<usize> = live.iter().map(|h| *h.tokens.last().unwrap_or(&START)).collect();
        let states: Vec<&M::State> = live.iter().map(|h| &h.state).collect();
        let outs = model.step(&states, &prev)?;
        // (logp, hypothesis index, token)
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, (dist, _)) in outs.iter().enumerate() {
            for (w, &p) in dist.iter().enumerate() {
                if p > 0.0 && cfg.allowed(w, t) {
                    cand.push((live[hi].logp + p.ln(), hi, w));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        cand.truncate(cfg.beam);
        let mut next = Vec::with_capacity(cand.len());
        for (logp, hi, w) in cand {
            let mut tokens = live[hi].tokens.clone();
            tokens.push(w);
            let h = Hypothesis {
                tokens,
                logp,
                state: outs[hi].1.clone(),
                finished: w == END,
            };
            if h.finished {
                done.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    let mut out = if done.is_empty() { live } else { done };
    if out.is_empty() {
        // every expansion was disallowed or had zero probability
        out.push(Hypothesis {
            tokens: Vec::new(),
            logp: 0.0,
            state: model.start(),
            finished: false,
        });
    }
    out.sort_by(rank);
    Ok(out)
}

/// Argmax decoding with ties to the lowest id; stops at the end token,
/// which is not included in the output.
pub fn greedy_decode<M: StepModel>(model: &M, cfg: &DecodeConfig) -> Result<Vec<usize>> {
    let mut state = model.start();
    let mut out = Vec::new();
    let mut prev = START;
    for t in 0..cfg.max_len {
        let (dist, next) = model.step(&[&state], &[prev])?.pop().expect("one row");
        let w = argmax(&dist, |w| cfg.allowed(w, t));
        match w {
            None | Some(END) => break,
            Some(w) => {
                out.push(w);
                prev = w;
                state = next;
            }
        }
    }
    Ok(out)
}

fn argmax(dist: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (w, &p) in dist.iter().enumerate() {
        if !allowed(w) {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((w, p));
        }
    }
    best.map(|b| b.0)
}

/// Per-hypothesis recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct PgState {
    pub layers: [(Vec<f64>, Vec<f64>); 2],
    pub context: Vec<f64>,
    /// Sum of this hypothesis's own attention history.
    pub coverage: Vec<f64>,
}

/// The pointer-generator model bound to one encoded source.
pub struct PointerGenerator<'a> {
    params: &'a ModelParams,
    coverage: bool,
    source: EncodedSource,
    src_ext_ids: Vec<usize>,
    ext_size: usize,
}

impl<'a> PointerGenerator<'a> {
    /// `coverage` must match how the model was trained.
    pub fn new(params: &'a ModelParams, coverage: bool, example: &Example) -> Result<Self> {
        let cfg = &params.config;
        if example.source_ids.is_empty() {
            return Err(Error::contract("empty source"));
        }
        let mut g: Graph<f64> = Graph::new();
        let w = Weights::bind(&mut g, cfg, &params.refs())?;
        let n = example.source_ids.len();
        let enc = encode(&mut g, &w, cfg, &example.source_ids, &vec![1.0; n], 1, n)?;
        Ok(PointerGenerator {
            params,
            coverage,
            source: enc.source(&g, 0),
            src_ext_ids: example.source_ext_ids.clone(),
            ext_size: cfg.vocab_size + example.oovs.len(),
        })
    }
}

fn split_rows(v: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let w = v.len() / rows;
    v.chunks(w).map(<[f64]>::to_vec).collect()
}

fn stack(rows: impl Iterator<Item = impl AsRef<[f64]>>) -> Vec<f64> {
    rows.flat_map(|r| r.as_ref().to_vec()).collect()
}

impl StepModel for PointerGenerator<'_> {
    type State = PgState;

    fn ext_size(&self) -> usize {
        self.ext_size
    }

    fn start(&self) -> PgState {
        PgState {
            layers: self.source.init.clone(),
            context: vec![0.0; self.source.states.len() / self.source.src_len],
            coverage: vec![0.0; self.source.src_len],
        }
    }

    fn step(&self, states: &[&PgState], prev: &[usize]) -> Result<Vec<(Vec<f64>, PgState)>> {
        let k = states.len();
        let cfg = &self.params.config;
        let h = cfg.hidden;
        let mut g: Graph<f64> = Graph::new();
        let w = Weights::bind(&mut g, cfg, &self.params.refs())?;
        let rows: Vec<&EncodedSource> = vec![&self.source; k];
        let enc = EncoderOutput::from_sources(&mut g, &rows)?;
        let mut layers = Vec::with_capacity(2);
        for l in 0..2 {
            let hh = g.constant_f64(&stack(states.iter().map(|s| &s.layers[l].0)), &[k, h])?;
            let cc = g.constant_f64(&stack(states.iter().map(|s| &s.layers[l].1)), &[k, h])?;
            layers.push((hh, cc));
        }
        let width = self.start().context.len();
        let state = DecoderState {
            layers: [layers[0], layers[1]],
            context: g.constant_f64(&stack(states.iter().map(|s| &s.context)), &[k, width])?,
            coverage: g.constant_f64(&stack(states.iter().map(|s| &s.coverage)), &[k, self.source.src_len])?,
        };
        let prev: Vec<usize> = prev.iter().map(|&p| if p >= cfg.vocab_size { UNK } else { p }).collect();
        let ext_ids: Vec<usize> = (0..k).flat_map(|_| self.src_ext_ids.iter().copied()).collect();
        let out = decoder_step(&mut g, &w, cfg, &enc, &state, &prev, &ext_ids, self.ext_size, self.coverage)?;
        let p_f = split_rows(g.value(out.p_f), k);
        let hs: Vec<_> = (0..2)
            .map(|l| {
                (
                    split_rows(g.value(out.state.layers[l].0), k),
                    split_rows(g.value(out.state.layers[l].1), k),
                )
            })
            .collect();
        let ctx = split_rows(g.value(out.state.context), k);
        let cov = split_rows(g.value(out.state.coverage), k);
        Ok((0..k)
            .map(|r| {
                (
                    p_f[r].clone(),
                    PgState {
                        layers: [
                            (hs[0].0[r].clone(), hs[0].1[r].clone()),
                            (hs[1].0[r].clone(), hs[1].1[r].clone()),
                        ],
                        context: ctx[r].clone(),
                        coverage: cov[r].clone(),
                    },
                )
            })
            .collect())
    }
}

/// Greedy decoding of a whole batch at once; one id sequence per row.
pub fn greedy_decode_batch(
    params: &ModelParams,
    coverage: bool,
    batch: &Batch,
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    let mc = &params.config;
    let b = batch.size;
    let ext = batch.ext_size();
    let mut g: Graph<f64> = Graph::new();
    let w = Weights::bind(&mut g, mc, &params.refs())?;
    let enc = encode(&mut g, &w, mc, &batch.src_ids, &batch.src_mask, b, batch.src_len)?;
    let mut state = DecoderState::initial(&mut g, &enc)?;
    let mut prev = vec![START; b];
    let mut out = vec![Vec::new(); b];
    let mut live = vec![true; b];
    for t in 0..cfg.max_len {
        if !live.iter().any(|&l| l) {
            break;
        }
        let inputs: Vec<usize> = prev.iter().map(|&p| if p >= mc.vocab_size { UNK } else { p }).collect();
        let step = decoder_step(&mut g, &w, mc, &enc, &state, &inputs, &batch.src_ext_ids, ext, coverage)?;
        let p_f = g.value(step.p_f);
        for r in 0..b {
            if !live[r] {
                continue;
            }
            // ids beyond this row's own OOV list are padding of the batch
            let width = mc.vocab_size + batch.oovs[r].len();
            let row = &p_f[r * ext..r * ext + width];
            match argmax(row, |w| cfg.allowed(w, t)) {
                None | Some(END) => live[r] = false,
                Some(wid) => {
                    out[r].push(wid);
                    prev[r] = wid;
                }
            }
        }
        state = step.state;
    }
    Ok(out)
}

/// Surface tokens for extended ids.
pub fn ids_to_tokens(ids: &[usize], vocab: &Vocab, oovs: &[String]) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.ext_token(id, oovs).unwrap_or("<unk>").to_string())
        .collect()
}

/// One line of a decode output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub hypothesis: String,
    pub score: f64,
}
