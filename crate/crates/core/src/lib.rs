//! Multimodal contrastive training engine.
//!
//! Two modalities (image-like and caption-like vectors) are each embedded by a
//! query encoder with two heads: an intra-modal head trained with InfoNCE
//! against a queue of momentum-encoder keys, and an inter-modal head trained
//! with bidirectional margin ranking in a common space. Tags extend the
//! positive set of the image InfoNCE term.
//!
//! The crate is `no_std` (it needs `alloc`); IO, file formats and the CLI live
//! in the `mmct` crate.

#![no_std]
// Negated float comparisons let NaN fall into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod queue;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
