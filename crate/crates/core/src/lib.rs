//! Incremental training of sparse logistic regression and GLMix models.
//!
//! Each round trains on the newest phase of a data stream only and anchors
//! the weights to the previous round's posterior through a quadratic prior
//! penalty, `(λ_f/2)(w − w_prev)ᵀ H_prev (w − w_prev)`. The precision
//! `H_prev` is kept as a full matrix, its diagonal, a limited-memory DFP
//! operator, or an Adam second-moment estimate. Periodic cold starts reset
//! drift, and a benchmark harness compares cold start, warm start and the
//! incremental variants on phase-split streams.

pub mod bench;
pub mod error;
pub mod eval;
pub mod hessian;
pub mod io;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scheduler;
pub mod sparse;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use hessian::{HessianMode, HessianRepr, PriorDistribution};
pub use model::{glm_score, glmix_score, sigmoid, GlmModel, GlmixModel, LabeledExample, PhaseDataset};
pub use sparse::SparseVector;
