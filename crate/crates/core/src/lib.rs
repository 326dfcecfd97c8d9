//! Attention-gated convolutional sentence classifier with the NLReLU activation.

pub mod activation;
pub mod checkpoint;
pub mod corpus;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;

pub use activation::{Activation, ActivationKind};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{Dataset, EmbeddingTable, Vocabulary};
pub use error::{Error, Result};
pub use layers::Mode;
pub use model::{build_model, AgcnnConfig, AgcnnModel, Variant};
pub use tensor::{Rng, Tensor};
