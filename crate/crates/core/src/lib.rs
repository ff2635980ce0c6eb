//! Contrastive representation learning laboratory.
//!
//! The crate builds a latent-class generative model, the population and
//! empirical contrastive losses, a bias-free deep ReLU encoder with hand-written
//! backpropagation, a full-batch gradient-descent trainer, and a verifier that
//! checks the classical contrastive bounds (supervised loss vs. contrastive loss,
//! coupon-collector factors, collision corrections, smoothness of the triplet
//! loss) numerically with explicit Monte Carlo confidence intervals.
//!
//! Everything random takes an explicit [`rng::Stream`], so every result is a
//! pure function of its seed.

pub mod combinatorics;
pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod idx;
pub mod latent_model;
pub mod losses;
pub mod rng;
pub mod stats;
pub mod trainer;
pub mod verifier;

pub use dataset::TripletDataset;
pub use embedding::{ConstantEmbedding, Embedding, IdentityEmbedding};
pub use encoder::{Encoder, ForwardTape, ParameterGradients};
pub use harness::ExperimentConfig;
pub use error::{Error, Result};
pub use latent_model::{LatentClassModel, Task};
pub use losses::{MeanClassifier, TripletEmbedding};
pub use stats::LossEstimate;
pub use trainer::{TrainConfig, TrainingTrace};
pub use verifier::InequalityReport;
