//! Self-assembling modular network for multi-hop reading comprehension:
//! a controller softly composes Find/Relocate/Compare/NoOp modules over a
//! differentiable stack of attention maps, trained end to end.

pub mod augment;
pub mod controller;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod modules;
pub mod params;
pub mod predict;
pub mod stack;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
