//! Whole-model plumbing: hyperparameter config, parameter registration,
//! and the end-to-end forward pass for one example.

use serde::{Deserialize, Serialize};

use crate::controller::register_controller_params;
use crate::corpus::Example;
use crate::encoder::{encode, register_encoder_params, EncodedExample, Vocab};
use crate::error::Result;
use crate::modules::register_module_params;
use crate::params::{ParamSource, ParameterStore};
use crate::predict::{decode, example_loss, run_heads, Heads, LossParts, Prediction};
use crate::stack::{run_program, ProgramTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-direction LSTM width d; representations are 2d wide.
    pub hidden: usize,
    pub emb_dim: usize,
    /// Number of reasoning steps T.
    pub t_steps: usize,
    /// Stack depth D.
    pub depth: usize,
    /// Share the controller's per-step question projection across steps.
    pub share_steps: bool,
    /// Maximum predicted span length in tokens.
    pub span_max_len: usize,
    /// Weight of the intermediate (bridge) attention supervision.
    pub lambda_bridge: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            hidden: 32,
            emb_dim: 32,
            t_steps: 3,
            depth: 3,
            share_steps: false,
            span_max_len: 30,
            lambda_bridge: 1.0,
        }
    }
}

/// Register every model parameter in a fresh store.
pub fn register_model_params(
    store: &mut ParameterStore,
    vocab_len: usize,
    cfg: &ModelConfig,
) -> Result<()> {
    register_encoder_params(store, vocab_len, cfg.emb_dim, cfg.hidden)?;
    register_module_params(store, cfg.hidden)?;
    register_controller_params(store, cfg.hidden, cfg.t_steps, cfg.share_steps)?;
    crate::predict::register_predict_params(store, cfg.hidden)?;
    Ok(())
}

pub struct Forward {
    pub enc: EncodedExample,
    pub trace: ProgramTrace,
    pub heads: Heads,
    pub loss: crate::tensor::Tensor,
    pub parts: LossParts,
}

/// Full forward pass: encode, run the soft program, run the answer heads,
/// and assemble the loss.
pub fn forward(
    example: &Example,
    vocab: &Vocab,
    cfg: &ModelConfig,
    p: &impl ParamSource,
) -> Result<Forward> {
    let enc = encode(example, vocab, cfg.hidden, p)?;
    let trace = run_program(&enc, cfg.t_steps, cfg.depth, cfg.share_steps, p)?;
    let state = trace.states.last().expect("at least one step");
    let heads = run_heads(&enc, &trace.final_frame, &state.memory, p)?;
    let (loss, parts) = example_loss(example, &enc, &trace, &heads, cfg.lambda_bridge)?;
    Ok(Forward {
        enc,
        trace,
        heads,
        loss,
        parts,
    })
}

/// Forward pass for inference only; returns the decoded answer and the
/// per-step module distributions.
pub fn predict(
    example: &Example,
    vocab: &Vocab,
    cfg: &ModelConfig,
    p: &impl ParamSource,
) -> Result<(Prediction, Vec<Vec<f64>>)> {
    let enc = encode(example, vocab, cfg.hidden, p)?;
    let trace = run_program(&enc, cfg.t_steps, cfg.depth, cfg.share_steps, p)?;
    let state = trace.states.last().expect("at least one step");
    let heads = run_heads(&enc, &trace.final_frame, &state.memory, p)?;
    let pred = decode(&heads, &enc, cfg.span_max_len)?;
    let module_probs = trace
        .controller
        .iter()
        .map(|s| s.p.data().to_vec())
        .collect();
    Ok((pred, module_probs))
}
