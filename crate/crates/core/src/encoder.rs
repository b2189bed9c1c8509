//! Context/question encoding: embedding lookup merged by a highway layer,
//! a one-layer BiLSTM per input, and an additive self-attention summary of
//! the question.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::params::{ParamSource, ParameterStore, Partition};
use crate::tensor as ts;
use crate::tensor::Tensor;

pub const UNK: &str = "<unk>";
pub const TITLE_MARK: &str = "<title>";
pub const SEP_MARK: &str = "<sep>";

/// Lowercased token vocabulary. Index 0 is a dedicated trained UNK row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(token_streams: impl Iterator<Item = &'a String>) -> Vocab {
        let mut tokens = vec![UNK.to_string(), TITLE_MARK.to_string(), SEP_MARK.to_string()];
        let mut seen: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for t in token_streams {
            let t = t.to_lowercase();
            if !seen.contains_key(&t) {
                seen.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }
        Vocab {
            tokens,
            index: seen,
        }
    }

    pub fn from_examples(examples: &[Example]) -> Vocab {
        let mut stream: Vec<&String> = Vec::new();
        for ex in examples {
            stream.extend(ex.question.iter());
            for d in &ex.documents {
                stream.extend(d.title.iter());
                stream.extend(d.body.iter());
            }
        }
        Vocab::build(stream.into_iter())
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(&token.to_lowercase()).unwrap_or(&0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(&token.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Assembled context: all documents concatenated as
/// `<title> title-tokens <sep> body-tokens` per document.
#[derive(Debug, Clone)]
pub struct ContextMap {
    pub tokens: Vec<String>,
    /// Context offset of each document's first body token.
    body_start: Vec<usize>,
}

impl ContextMap {
    pub fn assemble(example: &Example) -> ContextMap {
        let mut tokens = Vec::new();
        let mut body_start = Vec::new();
        for doc in &example.documents {
            tokens.push(TITLE_MARK.to_string());
            tokens.extend(doc.title.iter().cloned());
            tokens.push(SEP_MARK.to_string());
            body_start.push(tokens.len());
            tokens.extend(doc.body.iter().cloned());
        }
        ContextMap { tokens, body_start }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Context position of body token `pos` in document `doc`.
    pub fn position(&self, doc: usize, pos: usize) -> usize {
        self.body_start[doc] + pos
    }

    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..end.min(self.tokens.len())].join(" ")
    }
}

#[derive(Clone)]
pub struct EncodedExample {
    /// S x 2d contextualized context representation.
    pub h: Tensor,
    /// J x 2d contextualized question representation.
    pub u: Tensor,
    /// 2d fixed-size question summary.
    pub qv: Tensor,
    pub context: ContextMap,
}

/// Register every encoder parameter (all in the module partition).
pub fn register_encoder_params(
    store: &mut ParameterStore,
    vocab_len: usize,
    emb_dim: usize,
    hidden: usize,
) -> Result<()> {
    store.register_glorot("embed.word", vec![vocab_len, emb_dim], Partition::Modules)?;
    store.register_glorot("encoder.highway.wh", vec![emb_dim, emb_dim], Partition::Modules)?;
    store.register_zeros("encoder.highway.bh", vec![emb_dim], Partition::Modules)?;
    store.register_glorot("encoder.highway.wg", vec![emb_dim, emb_dim], Partition::Modules)?;
    store.register_zeros("encoder.highway.bg", vec![emb_dim], Partition::Modules)?;
    for side in ["ctx", "q"] {
        for dir in ["fwd", "bwd"] {
            let w = format!("encoder.{side}.{dir}.w");
            let b = format!("encoder.{side}.{dir}.b");
            store.register_glorot(&w, vec![4 * hidden, emb_dim + hidden], Partition::Modules)?;
            // Forget-gate bias starts at 1.
            let mut bias = vec![0.0; 4 * hidden];
            bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
            store.register(&b, vec![4 * hidden], bias, Partition::Modules)?;
        }
    }
    let d2 = 2 * hidden;
    store.register_glorot("encoder.qv.w1", vec![hidden, d2], Partition::Modules)?;
    store.register_zeros("encoder.qv.b1", vec![hidden], Partition::Modules)?;
    store.register_glorot("encoder.qv.w2", vec![hidden], Partition::Modules)?;
    Ok(())
}

fn highway(x: &Tensor, p: &impl ParamSource) -> Result<Tensor> {
    let wh = p.get("encoder.highway.wh")?;
    let bh = p.get("encoder.highway.bh")?;
    let wg = p.get("encoder.highway.wg")?;
    let bg = p.get("encoder.highway.bg")?;
    let hidden = ts::relu(&ts::add_row(&ts::matmul(x, &ts::transpose(&wh)?)?, &bh)?)?;
    let gate = ts::sigmoid(&ts::add_row(&ts::matmul(x, &ts::transpose(&wg)?)?, &bg)?)?;
    // y = g * hidden + (1 - g) * x
    let gh = ts::mul(&gate, &hidden)?;
    let one_minus_g = ts::add_scalar(&ts::scale(&gate, -1.0)?, 1.0)?;
    let gx = ts::mul(&one_minus_g, x)?;
    ts::add(&gh, &gx)
}

fn lstm_direction(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Tensor>> {
    let steps = x.shape()[0];
    let mut h = Tensor::zeros(vec![hidden]);
    let mut c = Tensor::zeros(vec![hidden]);
    let mut outputs = vec![Tensor::zeros(vec![hidden]); steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let xt = ts::row(x, t)?;
        let cat = ts::concat1(&[&xt, &h])?;
        let z = ts::add(&ts::matvec(w, &cat)?, b)?;
        let i = ts::sigmoid(&ts::slice1(&z, 0, hidden)?)?;
        let f = ts::sigmoid(&ts::slice1(&z, hidden, hidden)?)?;
        let o = ts::sigmoid(&ts::slice1(&z, 2 * hidden, hidden)?)?;
        let g = ts::tanh_t(&ts::slice1(&z, 3 * hidden, hidden)?)?;
        c = ts::add(&ts::mul(&f, &c)?, &ts::mul(&i, &g)?)?;
        h = ts::mul(&o, &ts::tanh_t(&c)?)?;
        outputs[t] = h.clone();
    }
    Ok(outputs)
}

fn bilstm(x: &Tensor, side: &str, hidden: usize, p: &impl ParamSource) -> Result<Tensor> {
    let wf = p.get(&format!("encoder.{side}.fwd.w"))?;
    let bf = p.get(&format!("encoder.{side}.fwd.b"))?;
    let wb = p.get(&format!("encoder.{side}.bwd.w"))?;
    let bb = p.get(&format!("encoder.{side}.bwd.b"))?;
    let fwd = lstm_direction(x, &wf, &bf, hidden, false)?;
    let bwd = lstm_direction(x, &wb, &bb, hidden, true)?;
    let rows: Vec<Tensor> = fwd
        .iter()
        .zip(bwd.iter())
        .map(|(f, b)| ts::concat1(&[f, b]))
        .collect::<Result<_>>()?;
    ts::stack_rows(&rows)
}

fn embed(tokens: &[String], vocab: &Vocab, p: &impl ParamSource) -> Result<Tensor> {
    let table = p.get("embed.word")?;
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    ts::gather_rows(&table, &ids)
}

/// Encode one example into (h, u, qv).
pub fn encode(
    example: &Example,
    vocab: &Vocab,
    hidden: usize,
    p: &impl ParamSource,
) -> Result<EncodedExample> {
    if example.question.is_empty() {
        return Err(Error::Input(format!("{}: empty question", example.id)));
    }
    let context = ContextMap::assemble(example);
    if context.is_empty() {
        return Err(Error::Input(format!("{}: empty context", example.id)));
    }
    let x_ctx = highway(&embed(&context.tokens, vocab, p)?, p)?;
    let x_q = highway(&embed(&example.question, vocab, p)?, p)?;
    let h = bilstm(&x_ctx, "ctx", hidden, p)?;
    let u = bilstm(&x_q, "q", hidden, p)?;

    // Additive self-attention over question words.
    let w1 = p.get("encoder.qv.w1")?;
    let b1 = p.get("encoder.qv.b1")?;
    let w2 = p.get("encoder.qv.w2")?;
    let hid = ts::tanh_t(&ts::add_row(&ts::matmul(&u, &ts::transpose(&w1)?)?, &b1)?)?;
    let scores = ts::matvec(&hid, &w2)?;
    let weights = ts::softmax(&scores)?;
    let qv = ts::vecmat(&weights, &u)?;
    Ok(EncodedExample { h, u, qv, context })
}

/// Overwrite in-vocabulary embedding rows from a `token v1 .. vn` text file.
/// Returns the fraction of the vocabulary covered by the file.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    store: &mut ParameterStore,
    vocab: &Vocab,
) -> Result<f64> {
    let emb_dim = store.get("embed.word")?.shape[1];
    let text = std::fs::read_to_string(path)?;
    let mut covered = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("embedding line {}", lineno + 1)))?;
        let values: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("embedding line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if values.len() != emb_dim {
            return Err(Error::config(format!(
                "embedding line {}: dimension {} does not match table dimension {}",
                lineno + 1,
                values.len(),
                emb_dim
            )));
        }
        if vocab.contains(token) {
            let id = vocab.id(token);
            let table = store.get_mut("embed.word")?;
            table.data[id * emb_dim..(id + 1) * emb_dim].copy_from_slice(&values);
            covered.insert(id);
        }
    }
    Ok(covered.len() as f64 / vocab.len() as f64)
}
