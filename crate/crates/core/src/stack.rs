//! Differentiable stack of attention frames plus the soft program executor.
//!
//! The stack holds D frames and a pointer distribution over depths. A push
//! with weight w in [0, 1] interpolates between leaving the stack alone
//! (w = 0) and a discrete push (w = 1); a pop reads the pointer-weighted
//! frame mix and shifts the pointer down. Each reasoning step executes all
//! four modules discretely and blends the resulting states by the
//! controller's module distribution, so the new state is affine in p_t.

use crate::controller::{run_controller, ControllerStep};
use crate::encoder::EncodedExample;
use crate::error::{Error, Result};
use crate::modules::{compare, find, relocate, AttentionFrame, COMPARE, FIND, NOOP, RELOCATE};
use crate::params::ParamSource;
use crate::tensor as ts;
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct NetworkState {
    pub frames: Vec<AttentionFrame>,
    /// Pointer distribution over depths, shape [D].
    pub pointer: Tensor,
    /// Comparison memory, shape [2d].
    pub memory: Tensor,
}

impl NetworkState {
    pub fn new(depth: usize, context_len: usize, hidden2: usize) -> Result<NetworkState> {
        if depth == 0 {
            return Err(Error::config("stack depth must be at least 1"));
        }
        Ok(NetworkState {
            frames: vec![AttentionFrame::zeros(context_len, hidden2); depth],
            pointer: Tensor::one_hot(depth, 0),
            memory: Tensor::zeros(vec![hidden2]),
        })
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }
}

/// Shift pointer mass one depth up; mass already at the top stays there.
fn shift_up(p: &Tensor) -> Result<Tensor> {
    let d = p.len();
    if d == 1 {
        return Ok(p.clone());
    }
    let body = ts::concat1(&[&Tensor::zeros(vec![1]), &ts::slice1(p, 0, d - 1)?])?;
    let top = ts::mul_scalar_t(&Tensor::one_hot(d, d - 1), &ts::pick(p, d - 1)?)?;
    ts::add(&body, &top)
}

/// Shift pointer mass one depth down; mass already at the bottom stays.
fn shift_down(p: &Tensor) -> Result<Tensor> {
    let d = p.len();
    if d == 1 {
        return Ok(p.clone());
    }
    let body = ts::concat1(&[&ts::slice1(p, 1, d - 1)?, &Tensor::zeros(vec![1])])?;
    let bottom = ts::mul_scalar_t(&Tensor::one_hot(d, 0), &ts::pick(p, 0)?)?;
    ts::add(&body, &bottom)
}

/// Blend two tensors by a scalar tensor weight: w * a + (1 - w) * b.
fn lerp(w: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let wa = ts::mul_scalar_t(a, w)?;
    let one_minus = ts::add_scalar(&ts::scale(w, -1.0)?, 1.0)?;
    let wb = ts::mul_scalar_t(b, &one_minus)?;
    ts::add(&wa, &wb)
}

/// Soft push: move the pointer up by weight w and write `frame` into each
/// depth proportionally to w times the new pointer mass there.
pub fn soft_push(state: &NetworkState, frame: &AttentionFrame, w: f64) -> Result<NetworkState> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::contract(format!("push weight {w} outside [0, 1]")));
    }
    let shifted = shift_up(&state.pointer)?;
    let w_t = Tensor::scalar(w);
    let new_pointer = lerp(&w_t, &shifted, &state.pointer)?;
    let mut frames = Vec::with_capacity(state.depth());
    for i in 0..state.depth() {
        let wi = ts::mul_scalar_t(&ts::pick(&new_pointer, i)?, &w_t)?;
        frames.push(AttentionFrame {
            att: lerp(&wi, &frame.att, &state.frames[i].att)?,
            rich: lerp(&wi, &frame.rich, &state.frames[i].rich)?,
        });
    }
    Ok(NetworkState {
        frames,
        pointer: new_pointer,
        memory: state.memory.clone(),
    })
}

/// Soft pop: read the pointer-weighted frame mix and shift the pointer
/// down. Stored frames are left in place.
pub fn soft_pop(state: &NetworkState) -> Result<(AttentionFrame, NetworkState)> {
    let read = read_top(state)?;
    let new_pointer = shift_down(&state.pointer)?;
    Ok((
        read,
        NetworkState {
            frames: state.frames.clone(),
            pointer: new_pointer,
            memory: state.memory.clone(),
        },
    ))
}

/// Pointer-weighted read without moving the pointer.
pub fn read_top(state: &NetworkState) -> Result<AttentionFrame> {
    let mut att = Tensor::zeros(state.frames[0].att.shape().to_vec());
    let mut rich = Tensor::zeros(state.frames[0].rich.shape().to_vec());
    for i in 0..state.depth() {
        let pi = ts::pick(&state.pointer, i)?;
        att = ts::add(&att, &ts::mul_scalar_t(&state.frames[i].att, &pi)?)?;
        rich = ts::add(&rich, &ts::mul_scalar_t(&state.frames[i].rich, &pi)?)?;
    }
    Ok(AttentionFrame { att, rich })
}

fn blend_states(candidates: &[NetworkState], weights: &Tensor) -> Result<NetworkState> {
    let depth = candidates[0].depth();
    let mut frames = Vec::with_capacity(depth);
    for i in 0..depth {
        let mut att = Tensor::zeros(candidates[0].frames[i].att.shape().to_vec());
        let mut rich = Tensor::zeros(candidates[0].frames[i].rich.shape().to_vec());
        for (k, cand) in candidates.iter().enumerate() {
            let wk = ts::pick(weights, k)?;
            att = ts::add(&att, &ts::mul_scalar_t(&cand.frames[i].att, &wk)?)?;
            rich = ts::add(&rich, &ts::mul_scalar_t(&cand.frames[i].rich, &wk)?)?;
        }
        frames.push(AttentionFrame { att, rich });
    }
    let mut pointer = Tensor::zeros(vec![depth]);
    let mut memory = Tensor::zeros(candidates[0].memory.shape().to_vec());
    for (k, cand) in candidates.iter().enumerate() {
        let wk = ts::pick(weights, k)?;
        pointer = ts::add(&pointer, &ts::mul_scalar_t(&cand.pointer, &wk)?)?;
        memory = ts::add(&memory, &ts::mul_scalar_t(&cand.memory, &wk)?)?;
    }
    Ok(NetworkState {
        frames,
        pointer,
        memory,
    })
}

/// Execute one module discretely (weight-1 stack operations).
pub fn execute_hard(
    state: &NetworkState,
    module: usize,
    enc: &EncodedExample,
    ct: &Tensor,
    p: &impl ParamSource,
) -> Result<NetworkState> {
    match module {
        FIND => {
            let frame = find(enc, ct, p)?;
            soft_push(state, &frame, 1.0)
        }
        RELOCATE => {
            let (top, popped) = soft_pop(state)?;
            let frame = relocate(enc, ct, &top, p)?;
            soft_push(&popped, &frame, 1.0)
        }
        COMPARE => {
            let (first, after_one) = soft_pop(state)?;
            let (second, after_two) = soft_pop(&after_one)?;
            let memory = compare(enc, ct, &first, &second, p)?;
            Ok(NetworkState {
                frames: after_two.frames,
                pointer: after_two.pointer,
                memory,
            })
        }
        NOOP => Ok(state.clone()),
        other => Err(Error::contract(format!("unknown module index {other}"))),
    }
}

/// One soft step: execute every module discretely, then blend the four
/// candidate states by the controller distribution p_t.
pub fn execute_step(
    state: &NetworkState,
    step: &ControllerStep,
    enc: &EncodedExample,
    p: &impl ParamSource,
) -> Result<NetworkState> {
    let candidates: Vec<NetworkState> = (0..4)
        .map(|m| execute_hard(state, m, enc, &step.c, p))
        .collect::<Result<_>>()?;
    blend_states(&candidates, &step.p)
}

pub struct ProgramTrace {
    pub controller: Vec<ControllerStep>,
    /// State after each step (length T).
    pub states: Vec<NetworkState>,
    /// Pointer-weighted top-of-stack attention after the first step; the
    /// target of bridge supervision.
    pub first_hop_att: Tensor,
    /// Final pointer-weighted top frame.
    pub final_frame: AttentionFrame,
}

/// Run the full T-step soft program.
pub fn run_program(
    enc: &EncodedExample,
    t_steps: usize,
    depth: usize,
    share_steps: bool,
    p: &impl ParamSource,
) -> Result<ProgramTrace> {
    if t_steps == 0 {
        return Err(Error::config("program length must be at least 1"));
    }
    let hidden2 = enc.qv.len();
    let controller = run_controller(&enc.qv, &enc.u, t_steps, share_steps, p)?;
    let mut state = NetworkState::new(depth, enc.context.len(), hidden2)?;
    let mut states = Vec::with_capacity(t_steps);
    let mut first_hop_att = None;
    for step in &controller {
        state = execute_step(&state, step, enc, p)?;
        if first_hop_att.is_none() {
            first_hop_att = Some(read_top(&state)?.att);
        }
        states.push(state.clone());
    }
    let final_frame = read_top(&state)?;
    Ok(ProgramTrace {
        controller,
        states,
        first_hop_att: first_hop_att.expect("at least one step"),
        final_frame,
    })
}
