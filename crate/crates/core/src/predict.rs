//! Answer heads and the per-example training loss.
//!
//! Span start/end heads project every row of the top-of-stack bi-attention
//! output (plus the attention weight itself) down to a logit. A 2-way gate
//! on [question vector; comparison memory] chooses span versus yes/no, and
//! a 2-way head on the comparison memory resolves yes against no.

use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Example};
use crate::encoder::EncodedExample;
use crate::error::{Error, Result};
use crate::modules::AttentionFrame;
use crate::params::{ParamSource, ParameterStore, Partition};
use crate::stack::ProgramTrace;
use crate::tensor as ts;
use crate::tensor::Tensor;

pub const TYPE_SPAN: usize = 0;
pub const TYPE_YES: usize = 1;
pub const TYPE_NO: usize = 2;

const BRIDGE_EPS: f64 = 1e-8;

pub fn register_predict_params(store: &mut ParameterStore, hidden: usize) -> Result<()> {
    let d2 = 2 * hidden;
    store.register_glorot("predict.start.w", vec![4 * d2 + 1], Partition::Modules)?;
    store.register_glorot("predict.end.w", vec![4 * d2 + 1], Partition::Modules)?;
    store.register_glorot("predict.gate.w", vec![2, 2 * d2], Partition::Modules)?;
    store.register_zeros("predict.gate.b", vec![2], Partition::Modules)?;
    store.register_glorot("predict.yesno.w", vec![2, d2], Partition::Modules)?;
    store.register_zeros("predict.yesno.b", vec![2], Partition::Modules)?;
    Ok(())
}

pub struct Heads {
    /// Span start probabilities over context positions, shape [S].
    pub start: Tensor,
    /// Span end probabilities over context positions, shape [S].
    pub end: Tensor,
    /// Gate probabilities [span, yes/no], shape [2].
    pub gate: Tensor,
    /// Yes-versus-no probabilities [yes, no], shape [2].
    pub yesno: Tensor,
}

impl Heads {
    /// Combined answer-type probabilities [span, yes, no].
    pub fn type_probs(&self) -> Vec<f64> {
        let g = self.gate.data();
        let yn = self.yesno.data();
        vec![g[0], g[1] * yn[0], g[1] * yn[1]]
    }
}

/// Run the answer heads on the final stack state.
pub fn run_heads(
    enc: &EncodedExample,
    frame: &AttentionFrame,
    memory: &Tensor,
    p: &impl ParamSource,
) -> Result<Heads> {
    let s = enc.context.len();
    let att_col = ts::reshape(&frame.att, vec![s, 1])?;
    let g = ts::concat_cols(&[&frame.rich, &att_col])?;
    let start = ts::softmax(&ts::matvec(&g, &p.get("predict.start.w")?)?)?;
    let end = ts::softmax(&ts::matvec(&g, &p.get("predict.end.w")?)?)?;
    let gi = ts::concat1(&[&enc.qv, memory])?;
    let gate = ts::softmax(&ts::add(
        &ts::matvec(&p.get("predict.gate.w")?, &gi)?,
        &p.get("predict.gate.b")?,
    )?)?;
    let yesno = ts::softmax(&ts::add(
        &ts::matvec(&p.get("predict.yesno.w")?, memory)?,
        &p.get("predict.yesno.b")?,
    )?)?;
    Ok(Heads {
        start,
        end,
        gate,
        yesno,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    /// Chosen context span (start, end exclusive), when the type head picks
    /// a span answer.
    pub span: Option<(usize, usize)>,
    pub type_probs: Vec<f64>,
}

/// Decode the most likely answer: argmax type, then for spans the pair
/// (s, e) maximizing start[s] * end[e] with s <= e < s + max_len.
pub fn decode(heads: &Heads, enc: &EncodedExample, max_len: usize) -> Result<Prediction> {
    let tp = heads.type_probs();
    let ty = argmax(&tp);
    if ty == TYPE_YES {
        return Ok(Prediction {
            answer: "yes".to_string(),
            span: None,
            type_probs: tp,
        });
    }
    if ty == TYPE_NO {
        return Ok(Prediction {
            answer: "no".to_string(),
            span: None,
            type_probs: tp,
        });
    }
    let (s, e) = best_span(heads.start.data(), heads.end.data(), max_len)?;
    Ok(Prediction {
        answer: enc.context.surface(s, e + 1),
        span: Some((s, e + 1)),
        type_probs: tp,
    })
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Highest-scoring (start, end-inclusive) pair with end < start + max_len.
pub fn best_span(start: &[f64], end: &[f64], max_len: usize) -> Result<(usize, usize)> {
    if start.is_empty() || start.len() != end.len() {
        return Err(Error::contract(format!(
            "best_span: start/end lengths {} vs {}",
            start.len(),
            end.len()
        )));
    }
    let mut best = (0usize, 0usize);
    let mut best_score = f64::NEG_INFINITY;
    for s in 0..start.len() {
        for e in s..(s + max_len).min(start.len()) {
            let score = start[s] * end[e];
            if score > best_score {
                best_score = score;
                best = (s, e);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Default)]
pub struct LossParts {
    pub answer: f64,
    pub bridge: f64,
    pub total: f64,
}

/// Supervised loss for one example:
/// span answers get start+end+gate cross-entropy, yes/no answers get
/// gate+yes/no cross-entropy, and bridge-annotated examples add
/// -lambda * log(sum of first-hop attention over the bridge span).
pub fn example_loss(
    example: &Example,
    enc: &EncodedExample,
    trace: &ProgramTrace,
    heads: &Heads,
    lambda_bridge: f64,
) -> Result<(Tensor, LossParts)> {
    let mut terms: Vec<Tensor> = Vec::new();
    let answer_loss;
    match &example.answer {
        Answer::Span(span) => {
            let s = enc.context.position(span.doc, span.start);
            let e = enc.context.position(span.doc, span.end - 1);
            answer_loss = ts::sum_all(&[
                ts::cross_entropy(&heads.start, s)?,
                ts::cross_entropy(&heads.end, e)?,
                ts::cross_entropy(&heads.gate, 0)?,
            ])?;
        }
        Answer::Yes => {
            answer_loss = ts::sum_all(&[
                ts::cross_entropy(&heads.gate, 1)?,
                ts::cross_entropy(&heads.yesno, 0)?,
            ])?;
        }
        Answer::No => {
            answer_loss = ts::sum_all(&[
                ts::cross_entropy(&heads.gate, 1)?,
                ts::cross_entropy(&heads.yesno, 1)?,
            ])?;
        }
        Answer::Unlocated(_) => {
            // Answer text not present in any document: only the gate can
            // be supervised.
            answer_loss = ts::cross_entropy(&heads.gate, 0)?;
        }
    }
    terms.push(answer_loss.clone());

    let mut bridge_loss_value = 0.0;
    if lambda_bridge != 0.0 && example.qtype == crate::corpus::QType::Comparison {
        // Intermediate supervision for comparison questions, mirroring the
        // bridge term: the hop-0 attention should cover the document of the
        // entity mentioned first in the question, and the hop-1 attention
        // the document of the entity mentioned second.
        if let Some(hops) = comparison_hop_masks(example, enc) {
            let hop_atts = [
                trace.first_hop_att.clone(),
                crate::stack::read_top(&trace.states[1.min(trace.states.len() - 1)])?.att,
            ];
            for (att, mask) in hop_atts.iter().zip(hops.iter()) {
                let covered = ts::reduce_sum(&ts::mul(att, mask)?)?;
                let term = ts::scale(
                    &ts::log_t(&ts::add_scalar(&covered, BRIDGE_EPS)?)?,
                    -lambda_bridge,
                )?;
                bridge_loss_value += term.scalar_value()?;
                terms.push(term);
            }
        }
    }
    if lambda_bridge != 0.0 {
        if let Some(bspan) = &example.bridge {
            let s = enc.context.len();
            let mut mask = vec![0.0; s];
            for pos in bspan.start..bspan.end {
                mask[enc.context.position(bspan.doc, pos)] = 1.0;
            }
            let mask = Tensor::from_vec(vec![s], mask)?;
            let covered = ts::reduce_sum(&ts::mul(&trace.first_hop_att, &mask)?)?;
            let bridge = ts::scale(
                &ts::log_t(&ts::add_scalar(&covered, BRIDGE_EPS)?)?,
                -lambda_bridge,
            )?;
            bridge_loss_value = bridge.scalar_value()?;
            terms.push(bridge);
        }
    }
    let total = ts::sum_all(&terms)?;
    let parts = LossParts {
        answer: answer_loss.scalar_value()?,
        bridge: bridge_loss_value,
        total: total.scalar_value()?,
    };
    Ok((total, parts))
}

/// Document-level masks for the two hops of a comparison question, ordered
/// by where each supporting document's title first appears in the question.
/// Returns `None` when a title cannot be located in the question.
fn comparison_hop_masks(example: &Example, enc: &EncodedExample) -> Option<[Tensor; 2]> {
    let lower = |ws: &[String]| -> Vec<String> { ws.iter().map(|w| w.to_lowercase()).collect() };
    let question = lower(&example.question);
    let mut order: Vec<(usize, usize)> = Vec::new(); // (question pos, doc index)
    for &doc in &example.supporting {
        let title = lower(&example.documents[doc].title);
        let pos = *crate::corpus::find_subseq(&question, &title).first()?;
        order.push((pos, doc));
    }
    order.sort();
    let s = enc.context.len();
    let masks = order.iter().map(|&(_, doc)| {
        let mut mask = vec![0.0; s];
        for pos in 0..example.documents[doc].body.len() {
            mask[enc.context.position(doc, pos)] = 1.0;
        }
        Tensor::from_vec(vec![s], mask).expect("mask shape")
    });
    let mut it = masks;
    Some([it.next()?, it.next()?])
}
