use std::sync::Arc;

use super::params::{BridgeWeights, LstmWeights, ModelConfig, Weights};
use crate::autodiff::{Graph, Scalar, Tensor};
use crate::data::{Batch, UNK};
use crate::error::{Error, Result};

/// Additive bias applied to padded source positions before the softmax.
pub const MASK_BIAS: f64 = -1e9;

/// Column indices of the four LSTM gates for a `[rows, 4h]` pre-activation.
#[derive(Clone, Debug)]
pub struct GateIndex {
    rows: usize,
    hidden: usize,
    gates: [Arc<[usize]>; 4],
}

impl GateIndex {
    pub fn new(rows: usize, hidden: usize) -> Self {
        let gate = |k: usize| -> Arc<[usize]> {
            (0..rows)
                .flat_map(|r| (0..hidden).map(move |j| r * 4 * hidden + k * hidden + j))
                .collect()
        };
        GateIndex {
            rows,
            hidden,
            gates: [gate(0), gate(1), gate(2), gate(3)],
        }
    }
}

/// One LSTM step: input, forget, candidate and output gates, no peepholes.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<T>,
    w: &LstmWeights,
    idx: &GateIndex,
    x: Tensor,
    (h, c): (Tensor, Tensor),
) -> Result<(Tensor, Tensor)> {
    let z = g.concat(&[x, h])?;
    let pre = g.matmul(z, w.w)?;
    let pre = g.add(pre, w.b)?;
    let shape = [idx.rows, idx.hidden];
    let gate = |k: usize, g: &mut Graph<T>| g.gather(pre, idx.gates[k].clone(), &shape);
    let i = gate(0, g)?;
    let f = gate(1, g)?;
    let u = gate(2, g)?;
    let o = gate(3, g)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let u = g.tanh(u);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let iu = g.mul(i, u)?;
    let c_new = g.add(fc, iu)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// `prev + m * (new - prev)`: padded rows keep their previous state.
fn masked<T: Scalar>(g: &mut Graph<T>, m: Option<Tensor>, new: Tensor, prev: Tensor) -> Result<Tensor> {
    match m {
        None => Ok(new),
        Some(m) => {
            let d = g.sub(new, prev)?;
            let d = g.mul(d, m)?;
            g.add(prev, d)
        }
    }
}

/// Rows of the embedding matrix, `[ids.len(), d_e]`.
pub fn embed<T: Scalar>(g: &mut Graph<T>, emb: Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = match g.shape(emb) {
        [v, d] => (*v, *d),
        s => return Err(Error::contract(format!("embedding must be 2-D, got {s:?}"))),
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
        return Err(Error::contract(format!("token id {bad} outside vocabulary of {v}")));
    }
    let index: Arc<[usize]> = ids
        .iter()
        .flat_map(|&id| (0..d).map(move |j| id * d + j))
        .collect();
    g.gather(emb, index, &[ids.len(), d])
}

/// Encoder outputs prepared for attention.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub batch: usize,
    pub src_len: usize,
    /// Layer-2 outputs for every step, `[batch * src_len, 2h]`.
    pub states: Tensor,
    /// `states · W_h`, `[batch * src_len, a]`.
    pub features: Tensor,
    /// 0 on real positions and a large negative bias on padding, `[batch, src_len]`.
    pub mask_bias: Tensor,
    /// Decoder initial `(h, c)` for layers 1 and 2.
    pub init: [(Tensor, Tensor); 2],
    pub gates: GateIndex,
    expand: Arc<[usize]>,
    context: Arc<[usize]>,
}

/// One source row's encoder results as plain values, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSource {
    pub src_len: usize,
    /// `[src_len, 2h]`
    pub states: Vec<f64>,
    /// `[src_len, a]`
    pub features: Vec<f64>,
    /// `[src_len]`
    pub mask_bias: Vec<f64>,
    /// Decoder initial `(h, c)` for layers 1 and 2.
    pub init: [(Vec<f64>, Vec<f64>); 2],
}

fn row<T: Scalar>(g: &Graph<T>, t: Tensor, r: usize) -> Vec<f64> {
    let w: usize = g.shape(t)[1..].iter().product();
    g.value(t)[r * w..(r + 1) * w].iter().map(|x| x.as_f64()).collect()
}

impl EncoderOutput {
    /// Detach row `b` of the batch.
    pub fn source<T: Scalar>(&self, g: &Graph<T>, b: usize) -> EncodedSource {
        let n = self.src_len;
        let block = |t: Tensor| -> Vec<f64> {
            let w = g.shape(t)[1];
            g.value(t)[b * n * w..(b + 1) * n * w].iter().map(|x| x.as_f64()).collect()
        };
        EncodedSource {
            src_len: n,
            states: block(self.states),
            features: block(self.features),
            mask_bias: row(g, self.mask_bias, b),
            init: [
                (row(g, self.init[0].0, b), row(g, self.init[0].1, b)),
                (row(g, self.init[1].0, b), row(g, self.init[1].1, b)),
            ],
        }
    }

    /// Rebuild a batch from detached rows as graph constants. All rows must
    /// share one source length.
    pub fn from_sources<T: Scalar>(g: &mut Graph<T>, rows: &[&EncodedSource]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::contract("no encoded sources"))?;
        let n = first.src_len;
        if rows.iter().any(|r| r.src_len != n) {
            return Err(Error::contract("encoded sources differ in length"));
        }
        let b = rows.len();
        let width = first.states.len() / n;
        let a = first.features.len() / n;
        let h = first.init[0].0.len();
        let cat = |f: &dyn Fn(&EncodedSource) -> &[f64]| -> Vec<f64> {
            rows.iter().flat_map(|r| f(r).iter().copied()).collect()
        };
        let states = g.constant_f64(&cat(&|r| &r.states), &[b * n, width])?;
        let features = g.constant_f64(&cat(&|r| &r.features), &[b * n, a])?;
        let mask_bias = g.constant_f64(&cat(&|r| &r.mask_bias), &[b, n])?;
        let mut init = Vec::with_capacity(2);
        for l in 0..2 {
            let hh = g.constant_f64(&cat(&|r| &r.init[l].0), &[b, h])?;
            let cc = g.constant_f64(&cat(&|r| &r.init[l].1), &[b, h])?;
            init.push((hh, cc));
        }
        Ok(EncoderOutput {
            batch: b,
            src_len: n,
            states,
            features,
            mask_bias,
            init: [init[0], init[1]],
            gates: GateIndex::new(b, h),
            expand: expand_index(b, n, a),
            context: context_index(b, n, width),
        })
    }
}

fn expand_index(batch: usize, src_len: usize, a: usize) -> Arc<[usize]> {
    (0..batch * src_len)
        .flat_map(|r| {
            let b = r / src_len;
            (0..a).map(move |j| b * a + j)
        })
        .collect()
}

fn context_index(batch: usize, src_len: usize, width: usize) -> Arc<[usize]> {
    (0..batch * src_len)
        .flat_map(|r| {
            let b = r / src_len;
            (0..width).map(move |j| b * width + j)
        })
        .collect()
}

fn bridge<T: Scalar>(g: &mut Graph<T>, w: &BridgeWeights, summary: Tensor) -> Result<(Tensor, Tensor)> {
    let h = g.matmul(summary, w.h_w)?;
    let h = g.add(h, w.h_b)?;
    let c = g.matmul(summary, w.c_w)?;
    let c = g.add(c, w.c_b)?;
    Ok((h, c))
}

struct Pass {
    outputs: Vec<Tensor>,
    last: (Tensor, Tensor),
}

fn run_direction<T: Scalar>(
    g: &mut Graph<T>,
    w: &LstmWeights,
    idx: &GateIndex,
    inputs: &[Tensor],
    masks: &[Option<Tensor>],
    reverse: bool,
    zero: Tensor,
) -> Result<Pass> {
    let n = inputs.len();
    let mut state = (zero, zero);
    let mut outputs = vec![zero; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let (h, c) = lstm_cell(g, w, idx, inputs[t], state)?;
        let h = masked(g, masks[t], h, state.0)?;
        let c = masked(g, masks[t], c, state.1)?;
        state = (h, c);
        outputs[t] = h;
    }
    Ok(Pass {
        outputs,
        last: state,
    })
}

/// Two-layer bidirectional encoder. `src_ids` and `src_mask` are row-major
/// `[batch, src_len]`; every row needs at least one real position.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    w: &Weights,
    cfg: &ModelConfig,
    src_ids: &[usize],
    src_mask: &[f64],
    batch: usize,
    src_len: usize,
) -> Result<EncoderOutput> {
    if batch == 0 || src_len == 0 {
        return Err(Error::contract("empty source"));
    }
    if src_ids.len() != batch * src_len || src_mask.len() != batch * src_len {
        return Err(Error::contract(format!(
            "source arrays must hold {batch} x {src_len} entries"
        )));
    }
    if let Some(b) = (0..batch).find(|&b| src_mask[b * src_len..(b + 1) * src_len].iter().all(|&m| m == 0.0)) {
        return Err(Error::contract(format!("source row {b} is empty")));
    }
    let h = cfg.hidden;
    let a = cfg.attention_width();
    let gates = GateIndex::new(batch, h);
    let zero = g.zeros(&[batch, h])?;

    let mut inputs = Vec::with_capacity(src_len);
    let mut masks = Vec::with_capacity(src_len);
    for t in 0..src_len {
        let ids: Vec<usize> = (0..batch).map(|b| src_ids[b * src_len + t]).collect();
        inputs.push(embed(g, w.emb, &ids)?);
        let m: Vec<f64> = (0..batch).map(|b| src_mask[b * src_len + t]).collect();
        masks.push(if m.iter().all(|&x| x == 1.0) {
            None
        } else {
            Some(g.constant_f64(&m, &[batch, 1])?)
        });
    }

    let mut summaries = Vec::with_capacity(2);
    let mut layer_in = inputs;
    for (fw, bw) in [(&w.enc1_fw, &w.enc1_bw), (&w.enc2_fw, &w.enc2_bw)] {
        let f = run_direction(g, fw, &gates, &layer_in, &masks, false, zero)?;
        let r = run_direction(g, bw, &gates, &layer_in, &masks, true, zero)?;
        layer_in = f
            .outputs
            .iter()
            .zip(&r.outputs)
            .map(|(&x, &y)| g.concat(&[x, y]))
            .collect::<Result<_>>()?;
        summaries.push(g.concat(&[f.last.0, r.last.0])?);
    }

    // Both the initial h and c are projected from the final hidden states.
    let init1 = bridge(g, &w.bridge1, summaries[0])?;
    let init2 = bridge(g, &w.bridge2, summaries[1])?;

    // [T][B, 2h] -> [B * T, 2h] with row b * T + t.
    let wide = g.concat(&layer_in)?; // [B, T * 2h]
    let states = g.reshape(wide, &[batch * src_len, 2 * h])?;
    let features = g.matmul(states, w.attn_w_h)?;
    let bias: Vec<f64> = src_mask
        .iter()
        .map(|&m| if m == 0.0 { MASK_BIAS } else { 0.0 })
        .collect();
    let mask_bias = g.constant_f64(&bias, &[batch, src_len])?;

    let expand = expand_index(batch, src_len, a);
    let context = context_index(batch, src_len, 2 * h);
    Ok(EncoderOutput {
        batch,
        src_len,
        states,
        features,
        mask_bias,
        init: [init1, init2],
        gates,
        expand,
        context,
    })
}

/// Coverage attention for a batch of decoder states `s_t: [B, h]` against
/// coverage `[B, T]`. Returns `(α [B, T], c_t [B, 2h])`.
pub fn attention_step<T: Scalar>(
    g: &mut Graph<T>,
    w: &Weights,
    enc: &EncoderOutput,
    s_t: Tensor,
    coverage: Tensor,
    use_coverage: bool,
) -> Result<(Tensor, Tensor)> {
    let (b, n) = (enc.batch, enc.src_len);
    if g.shape(coverage) != [b, n] {
        return Err(Error::Dimension {
            op: "attention_step",
            lhs: vec![b, n],
            rhs: g.shape(coverage).to_vec(),
        });
    }
    let a = g.shape(enc.features)[1];
    let ws = g.matmul(s_t, w.attn_w_s)?; // [B, a]
    let ws = g.gather(ws, enc.expand.clone(), &[b * n, a])?;
    let mut e = g.add(enc.features, ws)?;
    if use_coverage {
        let col = g.reshape(coverage, &[b * n, 1])?;
        let cw = g.matmul(col, w.attn_w_c)?;
        e = g.add(e, cw)?;
    }
    let e = g.add(e, w.attn_b)?;
    let e = g.tanh(e);
    let scores = g.matmul(e, w.attn_v)?; // [B * T, 1]
    let scores = g.reshape(scores, &[b, n])?;
    let scores = g.add(scores, enc.mask_bias)?;
    let alpha = g.softmax(scores);
    let col = g.reshape(alpha, &[b * n, 1])?;
    let weighted = g.mul(enc.states, col)?;
    let width = g.shape(enc.states)[1];
    let context = g.scatter_add(weighted, enc.context.clone(), &[b, width])?;
    Ok((alpha, context))
}

/// `softmax((W_f [s; c] + b_f) V_p + b_p)`, `[B, V]`.
pub fn vocab_distribution<T: Scalar>(g: &mut Graph<T>, w: &Weights, s_t: Tensor, c_t: Tensor) -> Result<Tensor> {
    let x = g.concat(&[s_t, c_t])?;
    let hid = g.matmul(x, w.out_w_f)?;
    let hid = g.add(hid, w.out_b_f)?;
    let logits = g.matmul(hid, w.out_v_p)?;
    let logits = g.add(logits, w.out_b_p)?;
    Ok(g.softmax(logits))
}

/// Generation switch `σ(W_g c + U_g s + V_g e + b_g)`, `[B, 1]`.
pub fn generation_prob<T: Scalar>(
    g: &mut Graph<T>,
    w: &Weights,
    c_t: Tensor,
    s_t: Tensor,
    e_prev: Tensor,
) -> Result<Tensor> {
    let a = g.matmul(c_t, w.ptr_w_g)?;
    let b = g.matmul(s_t, w.ptr_u_g)?;
    let c = g.matmul(e_prev, w.ptr_v_g)?;
    let z = g.add(a, b)?;
    let z = g.add(z, c)?;
    let z = g.add(z, w.ptr_b_g)?;
    Ok(g.sigmoid(z))
}

/// Scatter attention mass onto extended-vocabulary ids, `[B, ext_size]`.
/// `src_ext_ids` is row-major `[B, T]` matching `alpha`.
pub fn copy_distribution<T: Scalar>(
    g: &mut Graph<T>,
    alpha: Tensor,
    src_ext_ids: &[usize],
    ext_size: usize,
) -> Result<Tensor> {
    let (b, n) = match g.shape(alpha) {
        [b, n] => (*b, *n),
        [n] => (1, *n),
        s => return Err(Error::contract(format!("attention must be [B, T], got {s:?}"))),
    };
    if src_ext_ids.len() != b * n {
        return Err(Error::Dimension {
            op: "copy_distribution",
            lhs: vec![b, n],
            rhs: vec![src_ext_ids.len()],
        });
    }
    if let Some(&bad) = src_ext_ids.iter().find(|&&i| i >= ext_size) {
        return Err(Error::contract(format!(
            "extended id {bad} out of range for extended size {ext_size}"
        )));
    }
    let index: Arc<[usize]> = src_ext_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (i / n) * ext_size + id)
        .collect();
    g.scatter_add(alpha, index, &[b, ext_size])
}

/// Zero-extend `[B, V]` to `[B, ext_size]`.
pub fn extend_vocab<T: Scalar>(g: &mut Graph<T>, p_v: Tensor, ext_size: usize) -> Result<Tensor> {
    let (b, v) = match g.shape(p_v) {
        [b, v] => (*b, *v),
        s => return Err(Error::contract(format!("vocab distribution must be 2-D, got {s:?}"))),
    };
    if ext_size < v {
        return Err(Error::contract(format!("extended size {ext_size} below vocab size {v}")));
    }
    if ext_size == v {
        return Ok(p_v);
    }
    let index: Arc<[usize]> = (0..b * v).map(|i| (i / v) * ext_size + i % v).collect();
    g.scatter_add(p_v, index, &[b, ext_size])
}

/// `p_g · P_v + (1 − p_g) · P_c` with `P_v` zero-extended to `P_c`'s width.
pub fn final_distribution<T: Scalar>(g: &mut Graph<T>, p_g: Tensor, p_v: Tensor, p_c: Tensor) -> Result<Tensor> {
    let ext = *g.shape(p_c).last().unwrap();
    let rows = g.shape(p_g)[0];
    let pv = extend_vocab(g, p_v, ext)?;
    let ones = g.filled(&[rows, 1], 1.0)?;
    let q = g.sub(ones, p_g)?;
    let gen = g.mul(pv, p_g)?;
    let copy = g.mul(p_c, q)?;
    g.add(gen, copy)
}

/// Recurrent state carried between decoder steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub layers: [(Tensor, Tensor); 2],
    /// Previous context vector, fed back into layer 1.
    pub context: Tensor,
    /// Sum of all previous attention distributions.
    pub coverage: Tensor,
}

impl DecoderState {
    pub fn initial<T: Scalar>(g: &mut Graph<T>, enc: &EncoderOutput) -> Result<Self> {
        let width = g.shape(enc.states)[1];
        Ok(DecoderState {
            layers: enc.init,
            context: g.zeros(&[enc.batch, width])?,
            coverage: g.zeros(&[enc.batch, enc.src_len])?,
        })
    }
}

/// Everything one decoder step produces.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    pub s_t: Tensor,
    pub context: Tensor,
    pub alpha: Tensor,
    /// Coverage before this step's attention was added.
    pub coverage: Tensor,
    pub p_v: Tensor,
    pub p_g: Option<Tensor>,
    pub p_c: Option<Tensor>,
    pub p_f: Tensor,
}

/// One decoder step. `prev_ids` are in-vocabulary ids (OOVs already mapped
/// to UNK), one per row.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step<T: Scalar>(
    g: &mut Graph<T>,
    w: &Weights,
    cfg: &ModelConfig,
    enc: &EncoderOutput,
    state: &DecoderState,
    prev_ids: &[usize],
    src_ext_ids: &[usize],
    ext_size: usize,
    use_coverage: bool,
) -> Result<StepOutput> {
    if prev_ids.len() != enc.batch {
        return Err(Error::contract(format!(
            "{} previous tokens for batch of {}",
            prev_ids.len(),
            enc.batch
        )));
    }
    let e_prev = embed(g, w.emb, prev_ids)?;
    let x = g.concat(&[e_prev, state.context])?;
    let l1 = lstm_cell(g, &w.dec1, &enc.gates, x, state.layers[0])?;
    let l2 = lstm_cell(g, &w.dec2, &enc.gates, l1.0, state.layers[1])?;
    let s_t = l2.0;
    let (alpha, context) = attention_step(g, w, enc, s_t, state.coverage, use_coverage)?;
    let coverage = g.add(state.coverage, alpha)?;
    let p_v = vocab_distribution(g, w, s_t, context)?;
    let (p_g, p_c, p_f) = if cfg.pointer {
        let p_g = generation_prob(g, w, context, s_t, e_prev)?;
        let p_c = copy_distribution(g, alpha, src_ext_ids, ext_size)?;
        let p_f = final_distribution(g, p_g, p_v, p_c)?;
        (Some(p_g), Some(p_c), p_f)
    } else {
        (None, None, extend_vocab(g, p_v, ext_size)?)
    };
    Ok(StepOutput {
        state: DecoderState {
            layers: [l1, l2],
            context,
            coverage,
        },
        s_t,
        context,
        alpha,
        coverage: state.coverage,
        p_v,
        p_g,
        p_c,
        p_f,
    })
}

/// Loss terms for one batch under teacher forcing.
#[derive(Clone, Debug)]
pub struct LossTensors {
    pub nll: Tensor,
    pub coverage: Tensor,
    pub total: Tensor,
    /// Per-step coverage terms summed over the batch, before normalization.
    pub step_coverage: Vec<Tensor>,
}

/// Per-example mean over decoder steps, then mean over the batch.
pub fn forward_loss<T: Scalar>(
    g: &mut Graph<T>,
    w: &Weights,
    cfg: &ModelConfig,
    batch: &Batch,
    lambda: f64,
    coverage_enabled: bool,
) -> Result<LossTensors> {
    let ext = batch.ext_size();
    if let Some(&bad) = batch.targets.iter().find(|&&t| t >= ext) {
        return Err(Error::contract(format!(
            "target id {bad} out of range for extended size {ext}"
        )));
    }
    if batch.vocab_size != cfg.vocab_size {
        return Err(Error::contract(format!(
            "batch encoded for vocabulary {} but model has {}",
            batch.vocab_size, cfg.vocab_size
        )));
    }
    let (bsz, steps) = (batch.size, batch.tgt_len);
    let enc = encode(g, w, cfg, &batch.src_ids, &batch.src_mask, bsz, batch.src_len)?;
    let mut state = DecoderState::initial(g, &enc)?;

    // weight of step t in row b: mask / (n_b * B)
    let weights: Vec<f64> = (0..bsz * steps)
        .map(|i| {
            let b = i / steps;
            batch.tgt_mask[i] / (batch.tgt_lens[b] as f64 * bsz as f64)
        })
        .collect();

    let mut logps = Vec::with_capacity(steps);
    let mut step_coverage = Vec::with_capacity(steps);
    let mut cov_total: Option<Tensor> = None;
    for t in 0..steps {
        let prev: Vec<usize> = (0..bsz).map(|b| batch.dec_inputs[b * steps + t]).collect();
        let out = decoder_step(
            g,
            w,
            cfg,
            &enc,
            &state,
            &prev,
            &batch.src_ext_ids,
            ext,
            coverage_enabled,
        )?;
        // without the pointer an OOV target cannot be produced, so it is scored as UNK
        let gold: Arc<[usize]> = (0..bsz)
            .map(|b| {
                let id = batch.targets[b * steps + t];
                let id = if !cfg.pointer && id >= cfg.vocab_size { UNK } else { id };
                b * ext + id
            })
            .collect();
        let p = g.gather(out.p_f, gold, &[bsz, 1])?;
        logps.push(g.log(p));

        let col: Vec<f64> = (0..bsz).map(|b| weights[b * steps + t]).collect();
        let live: Vec<f64> = (0..bsz).map(|b| batch.tgt_mask[b * steps + t]).collect();
        let live = g.constant_f64(&live, &[bsz, 1])?;
        let m = g.min(out.alpha, out.coverage)?;
        let raw = g.mul(m, live)?;
        step_coverage.push(g.sum(raw));
        let wcol = g.constant_f64(&col, &[bsz, 1])?;
        let term = g.mul(m, wcol)?;
        let term = g.sum(term);
        cov_total = Some(match cov_total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
        state = out.state;
    }
    let logp = g.concat(&logps)?; // [B, steps]
    let wt = g.constant_f64(&weights, &[bsz, steps])?;
    let weighted = g.mul(logp, wt)?;
    let s = g.sum(weighted);
    let nll = g.scale(s, -1.0)?;
    let coverage = cov_total.expect("at least one decoder step");
    let total = if coverage_enabled {
        let c = g.scale(coverage, lambda)?;
        g.add(nll, c)?
    } else {
        nll
    };
    Ok(LossTensors {
        nll,
        coverage,
        total,
        step_coverage,
    })
}
