//! Federated multimodal learning under modality heterogeneity.
//!
//! Each client holds a subset of modalities. Per-modality feature extractors
//! are averaged across the clients that hold the modality, fusion classifiers
//! stay local, and cross-client class prototypes regularize the embedding
//! space through a loss whose weight shifts from BCE to prototype alignment
//! over the rounds.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod baselines;
pub mod client;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod prototype;
pub mod scalar;
pub mod seed;
pub mod server;
pub mod trace;
pub mod types;

pub use baselines::MethodId;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{ClassLabel, ModalityId};

pub type MlpParams = nn::Mlp<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type PrototypeSet = prototype::PrototypeSet<f64>;
pub type LocalModel = client::LocalModel<f64>;
pub type HospitalDataset = data::HospitalDataset<f64>;
pub type ClientReport = client::ClientReport<f64>;
pub type TrainHyper = client::TrainHyper<f64>;
pub type ServerState = server::ServerState<f64>;
pub type Participant = server::Participant<f64>;

pub type MlpParamsF32 = nn::Mlp<f32>;
pub type LocalModelF32 = client::LocalModel<f32>;
