//! Bidirectional-encoder / two-layer-decoder attention model with a
//! pointer-generator switch and coverage.

mod forward;
mod params;

pub use forward::{
    attention_step, copy_distribution, decoder_step, embed, encode, extend_vocab, final_distribution,
    forward_loss, generation_prob, lstm_cell, vocab_distribution, DecoderState, EncodedSource, EncoderOutput, GateIndex,
    LossTensors, StepOutput, MASK_BIAS,
};
pub use params::{
    init_array, param_specs, BridgeWeights, LstmWeights, ModelConfig, ModelParams, ParamSpec, Tag, Weights,
};

use crate::autodiff::{Graph, Scalar};
use crate::data::Batch;
use crate::error::Result;
use crate::params::ParamArray;

/// Scalar loss values for reporting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub coverage: f64,
    pub total: f64,
}

/// Evaluate the loss without keeping the graph.
pub fn loss_value(
    cfg: &ModelConfig,
    arrays: &[&ParamArray],
    batch: &Batch,
    lambda: f64,
    coverage_enabled: bool,
) -> Result<LossBreakdown> {
    loss_value_in::<f64>(cfg, arrays, batch, lambda, coverage_enabled)
}

/// [`loss_value`] computed at precision `T`.
pub fn loss_value_in<T: Scalar>(
    cfg: &ModelConfig,
    arrays: &[&ParamArray],
    batch: &Batch,
    lambda: f64,
    coverage_enabled: bool,
) -> Result<LossBreakdown> {
    let mut g: Graph<T> = Graph::new();
    let w = Weights::bind(&mut g, cfg, arrays)?;
    let l = forward_loss(&mut g, &w, cfg, batch, lambda, coverage_enabled)?;
    Ok(LossBreakdown {
        nll: g.scalar(l.nll).as_f64(),
        coverage: g.scalar(l.coverage).as_f64(),
        total: g.scalar(l.total).as_f64(),
    })
}

/// Loss and per-array gradients, in [`param_specs`] order.
pub fn loss_and_grad(
    cfg: &ModelConfig,
    arrays: &[&ParamArray],
    batch: &Batch,
    lambda: f64,
    coverage_enabled: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    loss_and_grad_in::<f64>(cfg, arrays, batch, lambda, coverage_enabled)
}

/// [`loss_and_grad`] computed at precision `T`.
pub fn loss_and_grad_in<T: Scalar>(
    cfg: &ModelConfig,
    arrays: &[&ParamArray],
    batch: &Batch,
    lambda: f64,
    coverage_enabled: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut g: Graph<T> = Graph::new();
    let w = Weights::bind(&mut g, cfg, arrays)?;
    let l = forward_loss(&mut g, &w, cfg, batch, lambda, coverage_enabled)?;
    let grads = g.backward(l.total)?;
    let per = w.leaves.iter().map(|&t| grads.to_f64(&g, t)).collect();
    Ok((
        LossBreakdown {
            nll: g.scalar(l.nll).as_f64(),
            coverage: g.scalar(l.coverage).as_f64(),
            total: g.scalar(l.total).as_f64(),
        },
        per,
    ))
}
