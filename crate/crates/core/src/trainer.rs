//! Two-phase training loop, Adam optimizer, and checkpoint serialization.
//!
//! One epoch alternates two phases over disjoint data: phase A updates the
//! module/encoder/head parameters on the main training slice, phase B
//! updates only the controller on a held-out slice (or the dev set when
//! configured), so the controller's layout choices are scored on data the
//! modules were not just fit to.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig};
use crate::params::{ParameterStore, Partition};
use crate::tensor::{backward, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Fraction of the training set held out for controller (phase B)
    /// updates when `controller_on_dev` is false.
    pub controller_holdout: f64,
    /// Use the dev set instead of a training holdout for phase B.
    pub controller_on_dev: bool,
    /// Number of initial epochs that skip phase B entirely.
    pub warmup_epochs: usize,
    /// Weight of the commitment (negative-entropy) term on the per-step
    /// module distributions during phase B. The weight ramps in linearly
    /// over the post-warmup epochs, so the controller explores soft
    /// mixtures early and is pushed toward one-hot layouts late. Soft
    /// mixtures can cheat (e.g. reading a frame that a hard pop would have
    /// discarded), so committed programs are what make the induced hard
    /// layouts faithful.
    pub entropy_beta: f64,
    /// Weight of the per-step module-use cost in phase B (same ramp as
    /// `entropy_beta`): each unit of non-NoOp module probability costs this
    /// much. Breaks ties toward shorter programs, so steps whose module
    /// does not reduce the answer loss decay to NoOp.
    pub step_cost: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            lr: 0.001,
            clip_norm: 5.0,
            controller_holdout: 0.1,
            controller_on_dev: false,
            warmup_epochs: 1,
            entropy_beta: 1.0,
            step_cost: 0.05,
            seed: 0,
        }
    }
}

/// Adam moment estimates for one parameter partition.
pub struct AdamState {
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new() -> AdamState {
        AdamState {
            m: HashMap::new(),
            v: HashMap::new(),
            t: 0,
        }
    }
}

impl Default for AdamState {
    fn default() -> AdamState {
        AdamState::new()
    }
}

/// Global-norm clip over the given gradients, in place.
pub fn clip_global_norm(grads: &mut HashMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let sq: f64 = names
        .iter()
        .map(|n| grads[*n].iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// One Adam update restricted to parameters in `partition`.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &HashMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    partition: Partition,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.partition == partition)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let Some(g) = grads.get(&name) else { continue };
        let param = store.get_mut(&name)?;
        if g.len() != param.data.len() {
            return Err(Error::contract(format!(
                "adam: gradient length {} does not match parameter {name} length {}",
                g.len(),
                param.data.len()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for i in 0..g.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param.data[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

struct BatchGrads {
    grads: HashMap<String, Vec<f64>>,
    loss_sum: f64,
    answer_sum: f64,
    bridge_sum: f64,
    n: usize,
}

/// Forward/backward over one batch in parallel; gradients are averaged in
/// a fixed (index) order so the result is deterministic.
fn batch_gradients(
    batch: &[&Example],
    store: &ParameterStore,
    vocab: &Vocab,
    cfg: &ModelConfig,
    entropy_coef: f64,
    step_cost_coef: f64,
) -> Result<BatchGrads> {
    let per_example: Vec<Result<(HashMap<String, Vec<f64>>, f64, f64, f64, String)>> = batch
        .par_iter()
        .map(|ex| {
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let f = forward(ex, vocab, cfg, &bound)?;
            if !f.parts.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss on example {}",
                    ex.id
                )));
            }
            let loss = if entropy_coef > 0.0 || step_cost_coef > 0.0 {
                use crate::tensor::{add, add_scalar, log_t, mul, pick, reduce_sum, scale, sum_all};
                let mut extras = Vec::new();
                for s in &f.trace.controller {
                    if entropy_coef > 0.0 {
                        let logp = log_t(&add_scalar(&s.p, 1e-12)?)?;
                        extras.push(scale(&reduce_sum(&mul(&s.p, &logp)?)?, entropy_coef)?);
                    }
                    if step_cost_coef > 0.0 {
                        // 1 - p[NoOp], scaled: module use has a small price.
                        let active = add_scalar(
                            &scale(&pick(&s.p, crate::modules::NOOP)?, -1.0)?,
                            1.0,
                        )?;
                        extras.push(scale(&active, step_cost_coef)?);
                    }
                }
                add(&f.loss, &sum_all(&extras)?)?
            } else {
                f.loss.clone()
            };
            let grads = backward(&loss)?;
            Ok((
                bound.named_grads(&grads),
                f.parts.total,
                f.parts.answer,
                f.parts.bridge,
                ex.id.clone(),
            ))
        })
        .collect();

    let mut acc: HashMap<String, Vec<f64>> = HashMap::new();
    let mut loss_sum = 0.0;
    let mut answer_sum = 0.0;
    let mut bridge_sum = 0.0;
    for item in per_example {
        let (named, loss, answer, bridge, id) = item?;
        for (name, g) in named {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient for {name} on example {id}"
                )));
            }
            acc.entry(name)
                .and_modify(|a| a.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b))
                .or_insert(g);
        }
        loss_sum += loss;
        answer_sum += answer;
        bridge_sum += bridge;
    }
    let scale = 1.0 / batch.len() as f64;
    for g in acc.values_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(BatchGrads {
        grads: acc,
        loss_sum,
        answer_sum,
        bridge_sum,
        n: batch.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase_a_loss: f64,
    pub phase_a_answer: f64,
    pub phase_a_bridge: f64,
    /// Absent (0 batches) during warmup epochs.
    pub phase_b_loss: f64,
    pub phase_b_batches: usize,
}

/// Run the full two-phase training loop, mutating `store` in place.
/// Returns the per-epoch history; when `history_path` is given, each epoch
/// record is also appended there as one JSON line.
pub fn train_two_phase(
    store: &mut ParameterStore,
    train: &[Example],
    dev: &[Example],
    vocab: &Vocab,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    history_path: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::Input("empty training set".to_string()));
    }
    if cfg.controller_on_dev && dev.is_empty() {
        return Err(Error::config(
            "controller_on_dev requires a non-empty dev set",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut rng);
    let holdout_n = if cfg.controller_on_dev {
        0
    } else {
        ((train.len() as f64 * cfg.controller_holdout).round() as usize)
            .min(train.len().saturating_sub(1))
    };
    let (main_idx, holdout_idx) = indices.split_at(train.len() - holdout_n);
    let main: Vec<&Example> = main_idx.iter().map(|i| &train[*i]).collect();
    let phase_b: Vec<&Example> = if cfg.controller_on_dev {
        dev.iter().collect()
    } else {
        holdout_idx.iter().map(|i| &train[*i]).collect()
    };

    let mut adam_a = AdamState::new();
    let mut adam_b = AdamState::new();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..main.len()).collect();
    let mut order_b: Vec<usize> = (0..phase_b.len()).collect();

    let mut hist_file = match history_path {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut ans_sum = 0.0;
        let mut brg_sum = 0.0;
        let mut n_seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|i| main[*i]).collect();
            let mut bg = batch_gradients(&batch, store, vocab, model_cfg, 0.0, 0.0)?;
            clip_global_norm(&mut bg.grads, cfg.clip_norm);
            adam_step(store, &bg.grads, &mut adam_a, cfg.lr, Partition::Modules)?;
            loss_sum += bg.loss_sum;
            ans_sum += bg.answer_sum;
            brg_sum += bg.bridge_sum;
            n_seen += bg.n;
        }

        let mut b_loss_sum = 0.0;
        let mut b_batches = 0usize;
        let mut b_seen = 0usize;
        if epoch >= cfg.warmup_epochs && !phase_b.is_empty() {
            // Commitment pressure ramps from 0 at the first phase-B epoch
            // to `entropy_beta` halfway through the post-warmup epochs, then
            // holds, so the final epochs train under full commitment.
            let span = cfg.epochs.saturating_sub(cfg.warmup_epochs).max(1);
            let ramp = 2.0 * (epoch + 1 - cfg.warmup_epochs) as f64 / span as f64;
            let coef = cfg.entropy_beta * ramp.min(1.0);
            let cost_coef = cfg.step_cost * ramp.min(1.0);
            order_b.shuffle(&mut rng);
            for chunk in order_b.chunks(cfg.batch_size) {
                let batch: Vec<&Example> = chunk.iter().map(|i| phase_b[*i]).collect();
                let mut bg = batch_gradients(&batch, store, vocab, model_cfg, coef, cost_coef)?;
                clip_global_norm(&mut bg.grads, cfg.clip_norm);
                adam_step(store, &bg.grads, &mut adam_b, cfg.lr, Partition::Controller)?;
                b_loss_sum += bg.loss_sum;
                b_batches += 1;
                b_seen += bg.n;
            }
        }

        let record = EpochRecord {
            epoch,
            phase_a_loss: loss_sum / n_seen as f64,
            phase_a_answer: ans_sum / n_seen as f64,
            phase_a_bridge: brg_sum / n_seen as f64,
            phase_b_loss: if b_seen > 0 {
                b_loss_sum / b_seen as f64
            } else {
                0.0
            },
            phase_b_batches: b_batches,
        };
        if let Some(f) = hist_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "HOPQA-CKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    magic: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    seed: u64,
    /// (name, shape, partition) for every parameter, in store order.
    params: Vec<(String, Vec<usize>, Partition)>,
}

/// Write a checkpoint: a one-line JSON header followed by every parameter's
/// raw little-endian f64 data in store order. The float blob makes the
/// round-trip bit-exact by construction.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    store: &ParameterStore,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<()> {
    let header = CheckpointHeader {
        magic: CHECKPOINT_MAGIC.to_string(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        vocab: vocab.clone(),
        seed: store.seed(),
        params: store
            .iter()
            .map(|(n, p)| (n.clone(), p.shape.clone(), p.partition))
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for (_, p) in store.iter() {
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParameterStore, Vocab, ModelConfig)> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".to_string()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}",
            header.magic
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let mut vocab = header.vocab;
    vocab.reindex();
    let mut store = ParameterStore::new(header.seed);
    let mut offset = newline + 1;
    for (name, shape, partition) in &header.params {
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated data for parameter {name}"
            )));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.register(name, shape.clone(), data, *partition)?;
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameter data",
            bytes.len() - offset
        )));
    }
    Ok((store, vocab, header.config))
}
