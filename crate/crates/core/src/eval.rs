//! Evaluation: answer normalization, exact match and token-level F1,
//! induced-layout analysis, and interpretability dumps.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, QType};
use crate::encoder::Vocab;
use crate::error::Result;
use crate::model::{predict, ModelConfig};
use crate::modules::{COMPARE, FIND, NOOP, RELOCATE};
use crate::params::ParameterStore;
use crate::predict::argmax;

/// SQuAD-style normalization: lowercase, drop punctuation, drop articles,
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Token-level F1 over normalized answers (multiset overlap).
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let pn = normalize_answer(prediction);
    let gn = normalize_answer(gold);
    let p: Vec<&str> = pn.split_whitespace().collect();
    let g: Vec<&str> = gn.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Discretize per-step module distributions: argmax each step, then strip
/// trailing NoOps.
pub fn hard_layout(module_probs: &[Vec<f64>]) -> Vec<usize> {
    let mut layout: Vec<usize> = module_probs.iter().map(|p| argmax(p)).collect();
    while layout.last() == Some(&NOOP) {
        layout.pop();
    }
    layout
}

/// Reference layouts a trained controller is expected to discover.
pub fn expert_layouts(qtype: QType) -> Vec<Vec<usize>> {
    match qtype {
        QType::Bridge => vec![vec![FIND, RELOCATE]],
        QType::Comparison => vec![
            vec![FIND, FIND, COMPARE],
            vec![FIND, RELOCATE, COMPARE],
        ],
    }
}

pub fn layout_matches_expert(layout: &[usize], qtype: QType) -> bool {
    expert_layouts(qtype).iter().any(|e| e == layout)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub prediction: String,
    pub gold: String,
    pub em: bool,
    pub f1: f64,
    pub layout: Vec<usize>,
    pub layout_matches_expert: bool,
    pub qtype: QType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub bridge_layout_match: f64,
    pub comparison_layout_match: f64,
    pub per_example: Vec<ExampleResult>,
}

/// Evaluate the model on a dataset. Examples are processed in parallel but
/// reported in input order, so the report is deterministic.
pub fn evaluate(
    examples: &[Example],
    store: &ParameterStore,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<EvalReport> {
    let results: Vec<Result<ExampleResult>> = examples
        .par_iter()
        .map(|ex| {
            let p = store.bind_frozen();
            let (pred, module_probs) = predict(ex, vocab, cfg, &p)?;
            let layout = hard_layout(&module_probs);
            Ok(ExampleResult {
                id: ex.id.clone(),
                em: exact_match(&pred.answer, &ex.answer_text),
                f1: f1_score(&pred.answer, &ex.answer_text),
                prediction: pred.answer,
                gold: ex.answer_text.clone(),
                layout_matches_expert: layout_matches_expert(&layout, ex.qtype),
                layout,
                qtype: ex.qtype,
            })
        })
        .collect();
    let per_example: Vec<ExampleResult> = results.into_iter().collect::<Result<_>>()?;
    let n = per_example.len();
    let em = per_example.iter().filter(|r| r.em).count() as f64 / n.max(1) as f64;
    let f1 = per_example.iter().map(|r| r.f1).sum::<f64>() / n.max(1) as f64;
    let frac = |qt: QType| {
        let of_type: Vec<&ExampleResult> =
            per_example.iter().filter(|r| r.qtype == qt).collect();
        if of_type.is_empty() {
            return 0.0;
        }
        of_type.iter().filter(|r| r.layout_matches_expert).count() as f64 / of_type.len() as f64
    };
    Ok(EvalReport {
        n,
        em,
        f1,
        bridge_layout_match: frac(QType::Bridge),
        comparison_layout_match: frac(QType::Comparison),
        per_example,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectStep {
    pub module_probs: Vec<f64>,
    pub module_names: Vec<String>,
    /// Controller attention over question words.
    pub question_attention: Vec<f64>,
    /// Pointer-weighted top-of-stack attention over context tokens after
    /// this step.
    pub stack_top_attention: Vec<f64>,
    pub pointer: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectBundle {
    pub id: String,
    pub question: Vec<String>,
    pub context_tokens: Vec<String>,
    pub steps: Vec<InspectStep>,
    pub layout: Vec<usize>,
    pub layout_names: Vec<String>,
    pub prediction: crate::predict::Prediction,
    pub gold: String,
}

/// Full interpretability dump for one example.
pub fn inspect(
    example: &Example,
    store: &ParameterStore,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<InspectBundle> {
    use crate::encoder::encode;
    use crate::modules::MODULE_NAMES;
    use crate::predict::{decode, run_heads};
    use crate::stack::{read_top, run_program};

    let p = store.bind_frozen();
    let enc = encode(example, vocab, cfg.hidden, &p)?;
    let trace = run_program(&enc, cfg.t_steps, cfg.depth, cfg.share_steps, &p)?;
    let state = trace.states.last().expect("at least one step");
    let heads = run_heads(&enc, &trace.final_frame, &state.memory, &p)?;
    let prediction = decode(&heads, &enc, cfg.span_max_len)?;

    let mut steps = Vec::new();
    for (ctrl, st) in trace.controller.iter().zip(trace.states.iter()) {
        let top = read_top(st)?;
        steps.push(InspectStep {
            module_probs: ctrl.p.data().to_vec(),
            module_names: MODULE_NAMES.iter().map(|s| s.to_string()).collect(),
            question_attention: ctrl.cv.data().to_vec(),
            stack_top_attention: top.att.data().to_vec(),
            pointer: st.pointer.data().to_vec(),
        });
    }
    let module_probs: Vec<Vec<f64>> = trace
        .controller
        .iter()
        .map(|s| s.p.data().to_vec())
        .collect();
    let layout = hard_layout(&module_probs);
    Ok(InspectBundle {
        id: example.id.clone(),
        question: example.question.clone(),
        context_tokens: enc.context.tokens.clone(),
        layout_names: layout
            .iter()
            .map(|m| MODULE_NAMES[*m].to_string())
            .collect(),
        layout,
        prediction,
        gold: example.answer_text.clone(),
        steps,
    })
}
