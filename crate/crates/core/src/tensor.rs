//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] when at least one input is tracked.
//! Calling [`backward`] on a scalar loss replays the tape in reverse and
//! accumulates gradients for every tracked ancestor. Tensors are immutable
//! values; a tape is single-threaded and must not be shared across threads.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

struct Node {
    parents: Vec<usize>,
    back: Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>,
}

struct TapeInner {
    nodes: RefCell<Vec<Node>>,
}

/// Gradient tape. One per forward pass (or per training thread).
#[derive(Clone)]
pub struct Tape(Rc<TapeInner>);

impl Tape {
    pub fn new() -> Self {
        Tape(Rc::new(TapeInner {
            nodes: RefCell::new(Vec::new()),
        }))
    }

    pub fn len(&self) -> usize {
        self.0.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.0.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Register a tracked leaf (e.g. a trainable parameter) on this tape.
    pub fn leaf(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape(&shape, &data)?;
        let id = self.push(Node {
            parents: vec![],
            back: Box::new(|_| vec![]),
        });
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node: Some((self.clone(), id)),
        })
    }

    /// Track an existing (constant) tensor on this tape.
    pub fn watch(&self, t: &Tensor) -> Result<Tensor> {
        self.leaf(t.shape.clone(), t.data.as_ref().clone())
    }

    fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_shape(shape: &[usize], data: &[f64]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::shape(format!(
            "shape {:?} implies {} elements, got {}",
            shape,
            n,
            data.len()
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero dimension in shape {:?}", shape)));
    }
    Ok(())
}

#[cfg(debug_assertions)]
fn check_finite(data: &[f64]) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value produced by a forward op"
    );
}

#[cfg(not(debug_assertions))]
fn check_finite(_data: &[f64]) {}

/// Dense row-major tensor. Cloning is cheap (shared data).
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape(&shape, &data)?;
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: Rc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn one_hot(n: usize, i: usize) -> Tensor {
        let mut data = vec![0.0; n];
        data[i] = 1.0;
        Tensor {
            shape: vec![n],
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Detached copy: same values, not on any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    fn rows(&self) -> usize {
        self.shape[0]
    }

    fn cols(&self) -> usize {
        self.shape[1]
    }

    fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }
}

fn tape_of(inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some((tape, _)) = &t.node {
            match &found {
                None => found = Some(tape.clone()),
                Some(prev) => {
                    if !prev.same_as(tape) {
                        return Err(Error::contract(
                            "operands recorded on different tapes".to_string(),
                        ));
                    }
                }
            }
        }
    }
    Ok(found)
}

/// Build the output tensor, recording a node when any input is tracked.
/// `backs` must align one-to-one with `inputs`; only closures for tracked
/// inputs are invoked during the reverse pass.
fn make_op(
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
    backs: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>>,
) -> Result<Tensor> {
    assert_eq!(inputs.len(), backs.len());
    check_shape(&shape, &data)?;
    check_finite(&data);
    let tape = tape_of(inputs)?;
    let node = match tape {
        None => None,
        Some(tape) => {
            let mut parents = Vec::new();
            let mut active: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = Vec::new();
            for (t, b) in inputs.iter().zip(backs) {
                if let Some((_, id)) = &t.node {
                    parents.push(*id);
                    active.push(b);
                }
            }
            let id = tape.push(Node {
                parents,
                back: Box::new(move |g| active.iter().map(|b| b(g)).collect()),
            });
            Some((tape, id))
        }
    };
    Ok(Tensor {
        shape,
        data: Rc::new(data),
        node,
    })
}

/// Accumulated gradients from one reverse pass.
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`, if `t` was a tracked ancestor.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let (tape, id) = t.node.as_ref()?;
        if !tape.same_as(&self.tape) {
            return None;
        }
        self.grads.get(*id)?.as_deref()
    }
}

/// Reverse-mode gradient of a scalar loss over its tape.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    let (tape, loss_id) = loss
        .node
        .as_ref()
        .ok_or_else(|| Error::contract("backward on an untracked tensor"))?;
    if loss.len() != 1 {
        return Err(Error::contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape
        )));
    }
    let nodes = tape.0.nodes.borrow();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[*loss_id] = Some(vec![1.0]);
    for id in (0..=*loss_id).rev() {
        let g = match &grads[id] {
            Some(g) => g.clone(),
            None => continue,
        };
        let node = &nodes[id];
        if node.parents.is_empty() {
            continue;
        }
        let parent_grads = (node.back)(&g);
        for (pid, pg) in node.parents.iter().zip(parent_grads) {
            match &mut grads[*pid] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&pg) {
                        *a += b;
                    }
                }
                slot => *slot = Some(pg),
            }
        }
    }
    Ok(Gradients {
        tape: tape.clone(),
        grads,
    })
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
    make_op(
        &[a, b],
        a.shape.clone(),
        data,
        vec![Box::new(|g| g.to_vec()), Box::new(|g| g.to_vec())],
    )
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x - y).collect();
    make_op(
        &[a, b],
        a.shape.clone(),
        data,
        vec![
            Box::new(|g| g.to_vec()),
            Box::new(|g| g.iter().map(|v| -v).collect()),
        ],
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
    let ad = a.data.clone();
    let bd = b.data.clone();
    make_op(
        &[a, b],
        a.shape.clone(),
        data,
        vec![
            Box::new(move |g| g.iter().zip(bd.iter()).map(|(g, y)| g * y).collect()),
            Box::new(move |g| g.iter().zip(ad.iter()).map(|(g, x)| g * x).collect()),
        ],
    )
}

/// Elementwise max; ties route the gradient to `a`.
pub fn max_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "max_elem")?;
    let data: Vec<f64> = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| x.max(*y))
        .collect();
    let ad = a.data.clone();
    let bd = b.data.clone();
    let ad2 = ad.clone();
    let bd2 = bd.clone();
    make_op(
        &[a, b],
        a.shape.clone(),
        data,
        vec![
            Box::new(move |g| {
                g.iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(g, (x, y))| if x >= y { *g } else { 0.0 })
                    .collect()
            }),
            Box::new(move |g| {
                g.iter()
                    .zip(ad2.iter().zip(bd2.iter()))
                    .map(|(g, (x, y))| if x >= y { 0.0 } else { *g })
                    .collect()
            }),
        ],
    )
}

// ---------------------------------------------------------------------------
// Broadcast variants
// ---------------------------------------------------------------------------

fn want_matrix_vec(m: &Tensor, v: &Tensor, along_cols: bool, op: &str) -> Result<()> {
    if !m.is_matrix() || !v.is_vector() {
        return Err(Error::shape(format!(
            "{op}: expected matrix and vector, got {:?} and {:?}",
            m.shape, v.shape
        )));
    }
    let need = if along_cols { m.cols() } else { m.rows() };
    if v.len() != need {
        return Err(Error::shape(format!(
            "{op}: matrix {:?} incompatible with vector {:?}",
            m.shape, v.shape
        )));
    }
    Ok(())
}

/// `out[r][c] = m[r][c] + v[c]` (row-broadcast add).
pub fn add_row(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    want_matrix_vec(m, v, true, "add_row")?;
    let (r, c) = (m.rows(), m.cols());
    let mut data = m.data.as_ref().clone();
    for i in 0..r {
        for j in 0..c {
            data[i * c + j] += v.data[j];
        }
    }
    make_op(
        &[m, v],
        m.shape.clone(),
        data,
        vec![
            Box::new(|g| g.to_vec()),
            Box::new(move |g| {
                let mut dv = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dv[j] += g[i * c + j];
                    }
                }
                dv
            }),
        ],
    )
}

/// `out[r][c] = m[r][c] + v[r]` (column-broadcast add).
pub fn add_col(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    want_matrix_vec(m, v, false, "add_col")?;
    let (r, c) = (m.rows(), m.cols());
    let mut data = m.data.as_ref().clone();
    for i in 0..r {
        for j in 0..c {
            data[i * c + j] += v.data[i];
        }
    }
    make_op(
        &[m, v],
        m.shape.clone(),
        data,
        vec![
            Box::new(|g| g.to_vec()),
            Box::new(move |g| {
                let mut dv = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        dv[i] += g[i * c + j];
                    }
                }
                dv
            }),
        ],
    )
}

/// `out[r][c] = m[r][c] * v[c]` (row-broadcast multiply).
pub fn mul_row(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    want_matrix_vec(m, v, true, "mul_row")?;
    let (r, c) = (m.rows(), m.cols());
    let mut data = m.data.as_ref().clone();
    for i in 0..r {
        for j in 0..c {
            data[i * c + j] *= v.data[j];
        }
    }
    let md = m.data.clone();
    let vd = v.data.clone();
    make_op(
        &[m, v],
        m.shape.clone(),
        data,
        vec![
            Box::new(move |g| {
                let mut dm = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dm[i * c + j] = g[i * c + j] * vd[j];
                    }
                }
                dm
            }),
            Box::new(move |g| {
                let mut dv = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dv[j] += g[i * c + j] * md[i * c + j];
                    }
                }
                dv
            }),
        ],
    )
}

/// Multiply by an untracked constant.
pub fn scale(a: &Tensor, k: f64) -> Result<Tensor> {
    let data = a.data.iter().map(|x| x * k).collect();
    make_op(
        &[a],
        a.shape.clone(),
        data,
        vec![Box::new(move |g| g.iter().map(|v| v * k).collect())],
    )
}

pub fn add_scalar(a: &Tensor, k: f64) -> Result<Tensor> {
    let data = a.data.iter().map(|x| x + k).collect();
    make_op(&[a], a.shape.clone(), data, vec![Box::new(|g| g.to_vec())])
}

/// Multiply every element of `a` by the (possibly tracked) scalar `s`.
pub fn mul_scalar_t(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    let sv = s.scalar_value()?;
    let data = a.data.iter().map(|x| x * sv).collect();
    let ad = a.data.clone();
    make_op(
        &[a, s],
        a.shape.clone(),
        data,
        vec![
            Box::new(move |g| g.iter().map(|v| v * sv).collect()),
            Box::new(move |g| vec![g.iter().zip(ad.iter()).map(|(g, x)| g * x).sum()]),
        ],
    )
}

/// Add a scalar tensor to every element of `a`.
pub fn add_scalar_t(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    let sv = s.scalar_value()?;
    let data = a.data.iter().map(|x| x + sv).collect();
    make_op(
        &[a, s],
        a.shape.clone(),
        data,
        vec![
            Box::new(|g| g.to_vec()),
            Box::new(|g| vec![g.iter().sum::<f64>()]),
        ],
    )
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "matmul: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    let ad = a.data.clone();
    let bd = b.data.clone();
    make_op(
        &[a, b],
        vec![m, n],
        data,
        vec![
            Box::new(move |g| {
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                da
            }),
            Box::new(move |g| {
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
                db
            }),
        ],
    )
}

/// `m [r x c] * v [c] -> [r]`
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    want_matrix_vec(m, v, true, "matvec")?;
    let (r, c) = (m.rows(), m.cols());
    let mut data = vec![0.0; r];
    for i in 0..r {
        let row = &m.data[i * c..(i + 1) * c];
        data[i] = row.iter().zip(v.data.iter()).map(|(a, b)| a * b).sum();
    }
    let md = m.data.clone();
    let vd = v.data.clone();
    make_op(
        &[m, v],
        vec![r],
        data,
        vec![
            Box::new(move |g| {
                let mut dm = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dm[i * c + j] = g[i] * vd[j];
                    }
                }
                dm
            }),
            Box::new(move |g| {
                let mut dv = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dv[j] += g[i] * md[i * c + j];
                    }
                }
                dv
            }),
        ],
    )
}

/// `v [r] * m [r x c] -> [c]` (e.g. attention-weighted row sums).
pub fn vecmat(v: &Tensor, m: &Tensor) -> Result<Tensor> {
    want_matrix_vec(m, v, false, "vecmat")?;
    let (r, c) = (m.rows(), m.cols());
    let mut data = vec![0.0; c];
    for i in 0..r {
        let w = v.data[i];
        if w == 0.0 {
            continue;
        }
        for j in 0..c {
            data[j] += w * m.data[i * c + j];
        }
    }
    let md = m.data.clone();
    let vd = v.data.clone();
    make_op(
        &[v, m],
        vec![c],
        data,
        vec![
            Box::new(move |g| {
                let mut dv = vec![0.0; r];
                for i in 0..r {
                    dv[i] = g.iter().zip(&md[i * c..(i + 1) * c]).map(|(a, b)| a * b).sum();
                }
                dv
            }),
            Box::new(move |g| {
                let mut dm = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dm[i * c + j] = vd[i] * g[j];
                    }
                }
                dm
            }),
        ],
    )
}

pub fn transpose(m: &Tensor) -> Result<Tensor> {
    if !m.is_matrix() {
        return Err(Error::shape(format!("transpose: {:?}", m.shape)));
    }
    let (r, c) = (m.rows(), m.cols());
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = m.data[i * c + j];
        }
    }
    make_op(
        &[m],
        vec![c, r],
        data,
        vec![Box::new(move |g| {
            let mut dm = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    dm[i * c + j] = g[j * r + i];
                }
            }
            dm
        })],
    )
}

/// Same data, new shape (element count preserved).
pub fn reshape(t: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != t.len() {
        return Err(Error::shape(format!(
            "reshape: {:?} -> {:?}",
            t.shape, shape
        )));
    }
    make_op(
        &[t],
        shape,
        t.data.as_ref().clone(),
        vec![Box::new(|g| g.to_vec())],
    )
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

fn unary(
    t: &Tensor,
    f: impl Fn(f64) -> f64,
    dback: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + 'static,
) -> Result<Tensor> {
    let data: Vec<f64> = t.data.iter().map(|&x| f(x)).collect();
    let xd = t.data.clone();
    let yd = Rc::new(data.clone());
    make_op(
        &[t],
        t.shape.clone(),
        data,
        vec![Box::new(move |g| dback(g, &xd, &yd))],
    )
}

pub fn relu(t: &Tensor) -> Result<Tensor> {
    unary(
        t,
        |x| x.max(0.0),
        |g, x, _| {
            g.iter()
                .zip(x.iter())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect()
        },
    )
}

pub fn tanh_t(t: &Tensor) -> Result<Tensor> {
    unary(
        t,
        f64::tanh,
        |g, _, y| g.iter().zip(y.iter()).map(|(g, y)| g * (1.0 - y * y)).collect(),
    )
}

pub fn sigmoid(t: &Tensor) -> Result<Tensor> {
    unary(
        t,
        |x| 1.0 / (1.0 + (-x).exp()),
        |g, _, y| g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y)).collect(),
    )
}

pub fn log_t(t: &Tensor) -> Result<Tensor> {
    unary(t, f64::ln, |g, x, _| {
        g.iter().zip(x.iter()).map(|(g, x)| g / x).collect()
    })
}

pub fn exp_t(t: &Tensor) -> Result<Tensor> {
    unary(t, f64::exp, |g, _, y| {
        g.iter().zip(y.iter()).map(|(g, y)| g * y).collect()
    })
}

/// Inverted dropout; `keep` fraction of units survive, scaled by 1/keep.
/// Off by default in every model path (`p = 0` is the identity).
pub fn dropout(t: &Tensor, p: f64, rng: &mut impl rand::RngExt) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::contract(format!("dropout rate {p} outside [0,1)")));
    }
    if p == 0.0 {
        return make_op(
            &[t],
            t.shape.clone(),
            t.data.as_ref().clone(),
            vec![Box::new(|g| g.to_vec())],
        );
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..t.len())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let data = t.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
    make_op(
        &[t],
        t.shape.clone(),
        data,
        vec![Box::new(move |g| {
            g.iter().zip(mask.iter()).map(|(g, m)| g * m).collect()
        })],
    )
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

/// Concatenate 1-d tensors.
pub fn concat1(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat1: empty input".to_string()));
    }
    let mut data = Vec::new();
    let mut lens = Vec::new();
    for p in parts {
        if !p.is_vector() {
            return Err(Error::shape(format!("concat1: non-vector {:?}", p.shape)));
        }
        lens.push(p.len());
        data.extend_from_slice(&p.data);
    }
    let total = data.len();
    let mut backs: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = Vec::new();
    let mut off = 0;
    for len in &lens {
        let (start, len) = (off, *len);
        backs.push(Box::new(move |g: &[f64]| g[start..start + len].to_vec()));
        off += len;
    }
    assert_eq!(off, total);
    make_op(parts, vec![total], data, backs)
}

/// Concatenate matrices with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat_cols: empty input".to_string()));
    }
    let r = parts[0].rows();
    let mut widths = Vec::new();
    for p in parts {
        if !p.is_matrix() || p.rows() != r {
            return Err(Error::shape(format!(
                "concat_cols: incompatible {:?}",
                p.shape
            )));
        }
        widths.push(p.cols());
    }
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; r * total];
    let mut off = 0;
    for (p, w) in parts.iter().zip(&widths) {
        for i in 0..r {
            data[i * total + off..i * total + off + w]
                .copy_from_slice(&p.data[i * w..(i + 1) * w]);
        }
        off += w;
    }
    let mut backs: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = Vec::new();
    let mut off = 0;
    for w in &widths {
        let (start, w) = (off, *w);
        backs.push(Box::new(move |g: &[f64]| {
            let mut dp = vec![0.0; r * w];
            for i in 0..r {
                dp[i * w..(i + 1) * w].copy_from_slice(&g[i * total + start..i * total + start + w]);
            }
            dp
        }));
        off += w;
    }
    make_op(parts, vec![r, total], data, backs)
}

/// Stack equal-length 1-d tensors into a matrix, one per row.
pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::shape("stack_rows: empty input".to_string()));
    }
    let c = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * c);
    for rt in rows {
        if !rt.is_vector() || rt.len() != c {
            return Err(Error::shape(format!("stack_rows: row {:?}", rt.shape)));
        }
        data.extend_from_slice(&rt.data);
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    let backs: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = (0..rows.len())
        .map(|i| {
            let b: Box<dyn Fn(&[f64]) -> Vec<f64>> =
                Box::new(move |g: &[f64]| g[i * c..(i + 1) * c].to_vec());
            b
        })
        .collect();
    make_op(&refs, vec![rows.len(), c], data, backs)
}

/// Contiguous slice of a 1-d tensor.
pub fn slice1(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if !t.is_vector() || start + len > t.len() {
        return Err(Error::shape(format!(
            "slice1: [{start}, {}) of {:?}",
            start + len,
            t.shape
        )));
    }
    let total = t.len();
    let data = t.data[start..start + len].to_vec();
    make_op(
        &[t],
        vec![len],
        data,
        vec![Box::new(move |g| {
            let mut d = vec![0.0; total];
            d[start..start + len].copy_from_slice(g);
            d
        })],
    )
}

/// Gather rows of a matrix by index (rows may repeat).
pub fn gather_rows(m: &Tensor, idx: &[usize]) -> Result<Tensor> {
    if !m.is_matrix() {
        return Err(Error::shape(format!("gather_rows: {:?}", m.shape)));
    }
    let (r, c) = (m.rows(), m.cols());
    if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
        return Err(Error::shape(format!(
            "gather_rows: index {bad} out of {r} rows"
        )));
    }
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(&m.data[i * c..(i + 1) * c]);
    }
    let idx = idx.to_vec();
    let n = idx.len();
    make_op(
        &[m],
        vec![n, c],
        data,
        vec![Box::new(move |g| {
            let mut dm = vec![0.0; r * c];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    dm[i * c + j] += g[k * c + j];
                }
            }
            dm
        })],
    )
}

/// Single row of a matrix as a 1-d tensor.
pub fn row(m: &Tensor, i: usize) -> Result<Tensor> {
    let g = gather_rows(m, &[i])?;
    let c = g.len();
    reshape(&g, vec![c])
}

/// Single element by flat index, as a scalar tensor.
pub fn pick(t: &Tensor, idx: usize) -> Result<Tensor> {
    if idx >= t.len() {
        return Err(Error::shape(format!(
            "pick: index {idx} out of {} elements",
            t.len()
        )));
    }
    let total = t.len();
    let data = vec![t.data[idx]];
    make_op(
        &[t],
        vec![1],
        data,
        vec![Box::new(move |g| {
            let mut d = vec![0.0; total];
            d[idx] = g[0];
            d
        })],
    )
}

// ---------------------------------------------------------------------------
// Reductions and normalizers
// ---------------------------------------------------------------------------

pub fn reduce_sum(t: &Tensor) -> Result<Tensor> {
    let s: f64 = t.data.iter().sum();
    let n = t.len();
    make_op(&[t], vec![1], vec![s], vec![Box::new(move |g| vec![g[0]; n])])
}

/// Max over one axis of a matrix; gradient flows to the (first) argmax.
pub fn reduce_max_axis(m: &Tensor, axis: usize) -> Result<Tensor> {
    if !m.is_matrix() || axis > 1 {
        return Err(Error::shape(format!(
            "reduce_max_axis: {:?} axis {axis}",
            m.shape
        )));
    }
    let (r, c) = (m.rows(), m.cols());
    let (out_len, slice_len) = if axis == 0 { (c, r) } else { (r, c) };
    let at = move |slice: usize, k: usize| {
        if axis == 0 {
            k * c + slice
        } else {
            slice * c + k
        }
    };
    let mut data = vec![0.0; out_len];
    let mut argmax = vec![0usize; out_len];
    for s in 0..out_len {
        let mut best = m.data[at(s, 0)];
        let mut bi = 0;
        for k in 1..slice_len {
            let v = m.data[at(s, k)];
            if v > best {
                best = v;
                bi = k;
            }
        }
        data[s] = best;
        argmax[s] = bi;
    }
    make_op(
        &[m],
        vec![out_len],
        data,
        vec![Box::new(move |g| {
            let mut dm = vec![0.0; r * c];
            for s in 0..out_len {
                dm[at(s, argmax[s])] = g[s];
            }
            dm
        })],
    )
}

fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable softmax over a 1-d tensor.
pub fn softmax(t: &Tensor) -> Result<Tensor> {
    if !t.is_vector() || t.is_empty() {
        return Err(Error::shape(format!("softmax: {:?}", t.shape)));
    }
    let y = softmax_slice(&t.data);
    let yd = y.clone();
    make_op(
        &[t],
        t.shape.clone(),
        y,
        vec![Box::new(move |g| softmax_back(g, &yd))],
    )
}

fn softmax_back(g: &[f64], y: &[f64]) -> Vec<f64> {
    let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    g.iter().zip(y.iter()).map(|(g, y)| y * (g - dot)).collect()
}

/// Softmax over one axis of a matrix (axis 0: each column is a distribution).
pub fn softmax_axis(m: &Tensor, axis: usize) -> Result<Tensor> {
    if !m.is_matrix() || axis > 1 {
        return Err(Error::shape(format!(
            "softmax_axis: {:?} axis {axis}",
            m.shape
        )));
    }
    let (r, c) = (m.rows(), m.cols());
    let (n_slices, slice_len) = if axis == 0 { (c, r) } else { (r, c) };
    let at = move |slice: usize, k: usize| {
        if axis == 0 {
            k * c + slice
        } else {
            slice * c + k
        }
    };
    let mut data = vec![0.0; r * c];
    for s in 0..n_slices {
        let xs: Vec<f64> = (0..slice_len).map(|k| m.data[at(s, k)]).collect();
        let ys = softmax_slice(&xs);
        for k in 0..slice_len {
            data[at(s, k)] = ys[k];
        }
    }
    let yd = data.clone();
    make_op(
        &[m],
        m.shape.clone(),
        data,
        vec![Box::new(move |g| {
            let mut dm = vec![0.0; r * c];
            for s in 0..n_slices {
                let gs: Vec<f64> = (0..slice_len).map(|k| g[at(s, k)]).collect();
                let ys: Vec<f64> = (0..slice_len).map(|k| yd[at(s, k)]).collect();
                let d = softmax_back(&gs, &ys);
                for k in 0..slice_len {
                    dm[at(s, k)] = d[k];
                }
            }
            dm
        })],
    )
}

/// `y = x / sum(x)` for a nonnegative 1-d tensor with positive mass.
pub fn normalize_sum(t: &Tensor) -> Result<Tensor> {
    if !t.is_vector() {
        return Err(Error::shape(format!("normalize_sum: {:?}", t.shape)));
    }
    let s: f64 = t.data.iter().sum();
    if s <= 0.0 {
        return Err(Error::contract("normalize_sum: nonpositive mass".to_string()));
    }
    let y: Vec<f64> = t.data.iter().map(|x| x / s).collect();
    let yd = y.clone();
    make_op(
        &[t],
        t.shape.clone(),
        y,
        vec![Box::new(move |g| {
            let dot: f64 = g.iter().zip(yd.iter()).map(|(a, b)| a * b).sum();
            g.iter().map(|g| (g - dot) / s).collect()
        })],
    )
}

/// Cross entropy of a proper distribution against a gold index: `-ln p[gold]`.
pub fn cross_entropy(dist: &Tensor, gold: usize) -> Result<Tensor> {
    let p = pick(dist, gold)?;
    scale(&log_t(&p)?, -1.0)
}

/// Sum a non-empty list of same-shaped tensors.
pub fn sum_all(parts: &[Tensor]) -> Result<Tensor> {
    let mut it = parts.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::shape("sum_all: empty input".to_string()))?;
    let mut acc = first.clone();
    for p in it {
        acc = add(&acc, p)?;
    }
    Ok(acc)
}
