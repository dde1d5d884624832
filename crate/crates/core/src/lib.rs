//! Localized adversarial domain generalization.
//!
//! A featurizer is trained against a discriminator that predicts each
//! sample's domain by label propagation over a K-NN graph of the current
//! minibatch. The featurizer matches every propagated domain distribution
//! to the minibatch domain prior, which forces local neighborhoods to mix
//! across domains, and a log-cosh coding-rate penalty keeps the feature
//! space from collapsing while it does so.
//!
//! Module map:
//!
//! * [`numerics`]: matrices, Cholesky/LU, the differentiation tape.
//! * [`graph`]: cosine K-NN neighbors, affinity and normalized adjacency.
//! * [`labelprop`]: closed-form and iterative propagation of domain labels.
//! * [`compactness`]: `V_k`, coding rate, class-wise rate, the rate loss.
//! * [`model`]: MLP featurizer/discriminator, linear predictor, SGD.
//! * [`losses`]: task, domain, prior-matching and DANN losses.
//! * [`data`]: synthetic multi-domain generators and CSV ingestion.
//! * [`trainer`]: ERM, DANN and localized ADG training loops.

pub mod compactness;
pub mod data;
pub mod error;
pub mod graph;
pub mod labelprop;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Matrix, Tape, Var};
