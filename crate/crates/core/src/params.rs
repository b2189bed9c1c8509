//! Named trainable arrays, partitioned into controller and module parameters.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor};

/// Which half of the two-phase schedule updates a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    /// Layout-controller parameters (updated in the controller phase).
    Controller,
    /// Module, encoder and head parameters (updated in the module phase).
    Modules,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub partition: Partition,
}

/// Name -> parameter map with deterministic iteration order.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    items: BTreeMap<String, Param>,
    seed: u64,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            items: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Glorot-uniform weight matrix. The per-parameter RNG stream is derived
    /// from (store seed, name), so registration order does not matter.
    pub fn register_glorot(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        partition: Partition,
    ) -> Result<()> {
        let (fan_out, fan_in) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, *n),
            _ => {
                return Err(Error::config(format!(
                    "glorot init expects 1-d or 2-d shape, got {shape:?} for {name}"
                )))
            }
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.register(name, shape, data, partition)
    }

    pub fn register_zeros(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        partition: Partition,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![0.0; n], partition)
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<f64>,
        partition: Partition,
    ) -> Result<()> {
        if self.items.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "parameter {name}: shape {:?} vs {} values",
                shape,
                data.len()
            )));
        }
        self.items.insert(
            name.to_string(),
            Param {
                shape,
                data,
                partition,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.items
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.items
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.items.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.items.keys()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Bind to a tape for a differentiable forward pass.
    pub fn bind<'a>(&'a self, tape: &Tape) -> BoundParams<'a> {
        BoundParams {
            store: self,
            tape: tape.clone(),
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Bind without a tape: forward-only evaluation.
    pub fn bind_frozen(&self) -> FrozenParams<'_> {
        FrozenParams { store: self }
    }
}

/// Trait for anything that can hand out parameter tensors by name.
pub trait ParamSource {
    fn get(&self, name: &str) -> Result<Tensor>;
}

/// Parameters registered as tracked leaves on one tape, memoized so each
/// parameter gets exactly one node per forward pass.
pub struct BoundParams<'a> {
    store: &'a ParameterStore,
    tape: Tape,
    cache: RefCell<HashMap<String, Tensor>>,
}

impl BoundParams<'_> {
    /// Gradients keyed by parameter name for every parameter touched in the
    /// forward pass that produced `grads`.
    pub fn named_grads(&self, grads: &Gradients) -> HashMap<String, Vec<f64>> {
        let cache = self.cache.borrow();
        let mut out = HashMap::new();
        for (name, tensor) in cache.iter() {
            if let Some(g) = grads.get(tensor) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}

impl ParamSource for BoundParams<'_> {
    fn get(&self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.cache.borrow().get(name) {
            return Ok(t.clone());
        }
        let p = self.store.get(name)?;
        let t = self.tape.leaf(p.shape.clone(), p.data.clone())?;
        self.cache.borrow_mut().insert(name.to_string(), t.clone());
        Ok(t)
    }
}

pub struct FrozenParams<'a> {
    store: &'a ParameterStore,
}

impl ParamSource for FrozenParams<'_> {
    fn get(&self, name: &str) -> Result<Tensor> {
        let p = self.store.get(name)?;
        Tensor::from_vec(p.shape.clone(), p.data.clone())
    }
}
