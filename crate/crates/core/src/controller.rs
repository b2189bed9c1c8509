//! Controller: at each reasoning step t, produce a soft distribution p_t
//! over the four modules and a question summary c_t (an attention-weighted
//! mix of question word representations).

use crate::error::Result;
use crate::params::{ParamSource, ParameterStore, Partition};
use crate::tensor as ts;
use crate::tensor::Tensor;

pub const N_MODULES: usize = 4;

#[derive(Clone)]
pub struct ControllerStep {
    /// Distribution over the four modules, shape [4].
    pub p: Tensor,
    /// Question summary for this step, shape [2d].
    pub c: Tensor,
    /// Attention over question words, shape [J].
    pub cv: Tensor,
}

/// Register controller parameters (controller partition). When
/// `share_steps` is false each step gets its own question projection.
pub fn register_controller_params(
    store: &mut ParameterStore,
    hidden: usize,
    t_steps: usize,
    share_steps: bool,
) -> Result<()> {
    let d2 = 2 * hidden;
    let n_proj = if share_steps { 1 } else { t_steps };
    for t in 0..n_proj {
        store.register_glorot(
            &format!("controller.step{t}.w1"),
            vec![d2, d2],
            Partition::Controller,
        )?;
        store.register_zeros(
            &format!("controller.step{t}.b1"),
            vec![d2],
            Partition::Controller,
        )?;
    }
    store.register_glorot("controller.w2", vec![d2, 2 * d2], Partition::Controller)?;
    store.register_zeros("controller.b2", vec![d2], Partition::Controller)?;
    store.register_glorot("controller.w3", vec![N_MODULES, d2], Partition::Controller)?;
    store.register_glorot("controller.w4", vec![d2], Partition::Controller)?;
    store.register_zeros("controller.b4", vec![1], Partition::Controller)?;
    Ok(())
}

/// One controller step: p_t = softmax(W3(W2[c_{t-1}; W1_t qv + b1_t] + b2)),
/// c_t = sum_j softmax_j(W4(cq_t * u_j) + b4) u_j.
pub fn controller_step(
    qv: &Tensor,
    u: &Tensor,
    c_prev: &Tensor,
    t: usize,
    share_steps: bool,
    p: &impl ParamSource,
) -> Result<ControllerStep> {
    let slot = if share_steps { 0 } else { t };
    let w1 = p.get(&format!("controller.step{slot}.w1"))?;
    let b1 = p.get(&format!("controller.step{slot}.b1"))?;
    let w2 = p.get("controller.w2")?;
    let b2 = p.get("controller.b2")?;
    let w3 = p.get("controller.w3")?;
    let w4 = p.get("controller.w4")?;
    let b4 = p.get("controller.b4")?;

    let qt = ts::add(&ts::matvec(&w1, qv)?, &b1)?;
    let cq = ts::add(&ts::matvec(&w2, &ts::concat1(&[c_prev, &qt])?)?, &b2)?;
    let logits = ts::matvec(&w3, &cq)?;
    let p_t = ts::softmax(&logits)?;

    let e = ts::matvec(&ts::mul_row(u, &cq)?, &w4)?;
    let e = ts::add_scalar_t(&e, &ts::pick(&b4, 0)?)?;
    let cv = ts::softmax(&e)?;
    let c = ts::vecmat(&cv, u)?;
    Ok(ControllerStep { p: p_t, c, cv })
}

/// Run all T controller steps starting from c_0 = 0.
pub fn run_controller(
    qv: &Tensor,
    u: &Tensor,
    t_steps: usize,
    share_steps: bool,
    p: &impl ParamSource,
) -> Result<Vec<ControllerStep>> {
    let d2 = qv.len();
    let mut c_prev = Tensor::zeros(vec![d2]);
    let mut steps = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let step = controller_step(qv, u, &c_prev, t, share_steps, p)?;
        c_prev = step.c.clone();
        steps.push(step);
    }
    Ok(steps)
}
