//! Differentiable building blocks shared by both models.

pub mod activations;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;

pub use activations::Activation;
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{Graph, MdnLayout, Var, SIGMA_FLOOR};
pub use layers::{dense, dropout, layer_norm, BiGruStack, DecoderStack, DecoderState, Dense, Dropout, Embedding, GruLayer};
pub use optim::{clip_gradients, Nadam, NadamConfig};
pub use params::{Gradients, ParamId, ParameterSet};
