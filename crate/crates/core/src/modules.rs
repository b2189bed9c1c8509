//! The four composable modules. Find and Relocate consume the encoded
//! example plus the controller's per-step question summary and produce an
//! attention frame over the context; Compare consumes two frames and
//! produces only a memory vector; NoOp is the identity.

use crate::encoder::EncodedExample;
use crate::error::Result;
use crate::params::{ParamSource, ParameterStore, Partition};
use crate::tensor as ts;
use crate::tensor::Tensor;

pub const MODULE_NAMES: [&str; 4] = ["find", "relocate", "compare", "noop"];
pub const FIND: usize = 0;
pub const RELOCATE: usize = 1;
pub const COMPARE: usize = 2;
pub const NOOP: usize = 3;

/// One stack frame: the module's attention distribution over the S context
/// positions together with its full question-aware context representation
/// (S x 8d) before the 1-d projection.
#[derive(Clone)]
pub struct AttentionFrame {
    pub att: Tensor,
    pub rich: Tensor,
}

impl AttentionFrame {
    pub fn zeros(context_len: usize, hidden2: usize) -> AttentionFrame {
        AttentionFrame {
            att: Tensor::zeros(vec![context_len]),
            rich: Tensor::zeros(vec![context_len, 4 * hidden2]),
        }
    }
}

/// Register Find/Relocate/Compare parameters (module partition).
pub fn register_module_params(store: &mut ParameterStore, hidden: usize) -> Result<()> {
    let d2 = 2 * hidden;
    // Relocate applies the Find module to its bridge-modulated context, so
    // the bi-attention weights are shared between the two.
    store.register_glorot("find.w1", vec![d2], Partition::Modules)?;
    store.register_glorot("find.w2", vec![d2], Partition::Modules)?;
    store.register_glorot("find.w3", vec![d2], Partition::Modules)?;
    store.register_glorot("compare.w2", vec![d2, 4 * d2], Partition::Modules)?;
    store.register_zeros("compare.b2", vec![d2], Partition::Modules)?;
    store.register_glorot("compare.w1", vec![d2, d2], Partition::Modules)?;
    store.register_zeros("compare.b1", vec![d2], Partition::Modules)?;
    Ok(())
}

/// Bi-attention between the question rows `u` and (modulated) context rows
/// `hm`. Returns the query-to-context attention softmax_s(max_j M_{j,s})
/// and the question-aware context representation
/// [hm; c_q; hm * c_q; c_q * q_c] of shape S x 8d.
fn bi_attention(
    hm: &Tensor,
    u: &Tensor,
    prefix: &str,
    p: &impl ParamSource,
) -> Result<(Tensor, Tensor)> {
    let w1 = p.get(&format!("{prefix}.w1"))?;
    let w2 = p.get(&format!("{prefix}.w2"))?;
    let w3 = p.get(&format!("{prefix}.w3"))?;
    // M[j][s] = u_j . w1 + hm_s . w2 + (u_j * hm_s) . w3
    let uq = ts::matvec(u, &w1)?; // [J]
    let hc = ts::matvec(hm, &w2)?; // [S]
    let cross = ts::matmul(&ts::mul_row(u, &w3)?, &ts::transpose(hm)?)?; // [J,S]
    let m = ts::add_col(&ts::add_row(&cross, &hc)?, &uq)?;
    // Context-to-query: softmax over question words per context position.
    let pq = ts::softmax_axis(&m, 0)?; // [J,S], columns sum to 1
    let cq = ts::matmul(&ts::transpose(&pq)?, u)?; // [S,2d]
    // Query-to-context: one distribution over context positions.
    let col_max = ts::reduce_max_axis(&m, 0)?; // [S]
    let att = ts::softmax(&col_max)?;
    let qc = ts::vecmat(&att, hm)?; // [2d]
    let rich = ts::concat_cols(&[
        hm,
        &cq,
        &ts::mul(hm, &cq)?,
        &ts::mul_row(&cq, &qc)?,
    ])?;
    Ok((att, rich))
}

/// Find: attend to context positions relevant to the current question part.
pub fn find(enc: &EncodedExample, ct: &Tensor, p: &impl ParamSource) -> Result<AttentionFrame> {
    let hm = ts::mul_row(&enc.h, ct)?;
    let (att, rich) = bi_attention(&hm, &enc.u, "find", p)?;
    Ok(AttentionFrame { att, rich })
}

/// Relocate: hop from the entity currently attended (the frame popped off
/// the stack) to a related entity (a fresh bi-attention over the context,
/// modulated by the bridge summary).
pub fn relocate(
    enc: &EncodedExample,
    ct: &Tensor,
    top: &AttentionFrame,
    p: &impl ParamSource,
) -> Result<AttentionFrame> {
    let bridge = ts::vecmat(&top.att, &enc.h)?; // [2d]
    let hb = ts::mul_row(&enc.h, &bridge)?;
    let hm = ts::mul_row(&hb, ct)?;
    let (att, rich) = bi_attention(&hm, &enc.u, "find", p)?;
    Ok(AttentionFrame { att, rich })
}

/// Compare: combine the two frames popped off the stack into a memory
/// vector. Nothing is pushed back; the module's only output is the memory.
pub fn compare(
    enc: &EncodedExample,
    ct: &Tensor,
    first: &AttentionFrame,
    second: &AttentionFrame,
    p: &impl ParamSource,
) -> Result<Tensor> {
    let w1 = p.get("compare.w1")?;
    let w2 = p.get("compare.w2")?;
    let b1 = p.get("compare.b1")?;
    let b2 = p.get("compare.b2")?;
    let hs1 = ts::vecmat(&first.att, &enc.h)?;
    let hs2 = ts::vecmat(&second.att, &enc.h)?;
    let diff = ts::sub(&hs1, &hs2)?;
    let o_in = ts::concat1(&[ct, &hs1, &hs2, &ts::mul(ct, &diff)?])?;
    let hidden = ts::relu(&ts::add(&ts::matvec(&w2, &o_in)?, &b2)?)?;
    ts::add(&ts::matvec(&w1, &hidden)?, &b1)
}

/// NoOp: the identity module; defined here only for the name table. The
/// stack executor leaves the state untouched for this module index.
pub fn noop(frame: &AttentionFrame) -> AttentionFrame {
    frame.clone()
}
