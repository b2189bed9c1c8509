//! Central-difference gradient checking against the tape.
//!
//! The finite-difference side never touches the reverse pass: it re-runs the
//! forward closure on perturbed untracked inputs, so it stays an independent
//! oracle for whatever the closure computes.

use crate::error::{Error, Result};
use crate::tensor::{backward, Tape, Tensor};

/// A differentiable scalar function of several tensors.
pub type ScalarFn<'a> = &'a dyn Fn(&[Tensor]) -> Result<Tensor>;

/// Compare tape gradients of `f` against central differences at `inputs`.
///
/// Returns the max over all input entries of `|g_tape - g_fd| / max(1, |g_fd|)`.
/// Inputs must be smooth points of `f` (perturb away from relu/max kinks).
pub fn finite_diff_check(f: ScalarFn, inputs: &[Tensor], eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    // Tape gradients.
    let tape = Tape::new();
    let tracked: Vec<Tensor> = inputs
        .iter()
        .map(|t| tape.watch(t))
        .collect::<Result<_>>()?;
    let loss = f(&tracked)?;
    if loss.len() != 1 {
        return Err(Error::contract(format!(
            "gradient check requires a scalar output, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = backward(&loss)?;

    let eval = |points: &[Tensor]| -> Result<f64> {
        let detached: Vec<Tensor> = points.iter().map(|t| t.detach()).collect();
        f(&detached)?.scalar_value()
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let tape_grad: Vec<f64> = match grads.get(&tracked[k]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; input.len()],
        };
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k] = perturb(input, i, eps)?;
            minus[k] = perturb(input, i, -eps)?;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let err = (tape_grad[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn perturb(t: &Tensor, i: usize, delta: f64) -> Result<Tensor> {
    let mut data = t.data().to_vec();
    data[i] += delta;
    Tensor::from_vec(t.shape().to_vec(), data)
}
