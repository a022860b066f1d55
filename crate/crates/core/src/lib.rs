//! Paired motion/language sequence models: data preparation, a small
//! reverse-mode autodiff core, the motion-to-language and
//! language-to-motion networks, beam search and evaluation.

pub mod checkpoint;
pub mod contexts;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod l2m;
pub mod m2l;
pub mod motion;
pub mod nn;
pub mod prepare;
pub mod text;
pub mod train;

pub use error::{Error, Result};
