//! Cross-modal variational autoencoder for 2D/3D hand keypoints.
//!
//! A single latent space is trained over several encoder/decoder modality
//! pairs. The crate bundles a small reverse-mode autodiff engine, the
//! Gaussian VAE machinery, MLP keypoint models, a synthetic kinematic hand
//! generator, the training loop, evaluation metrics and latent diagnostics.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod hand;
pub mod latent;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod training;
pub mod vae;

pub use autodiff::{Gradients, ParamId, Parameter, Primitive, Tape, Var};
pub use data::{HandednessMode, ModalData, PreprocessConfig};
pub use error::{Error, Result, TensorError};
pub use models::{KeypointDecoder, KeypointEncoder, Modality, ModalitySpec, ModelConfig, ModelSet};
pub use optim::{adam_step, AdamConfig};
pub use tensor::Tensor;
pub use vae::{GaussianParams, LossBreakdown, LossConfig, ReconstructionKind};
pub use training::{build_pairs, train, Pair, PairSet, SemiSupConfig, TrainConfig, VariantConfig};
