//! Contextual explanation networks.
//!
//! A context encoder maps each context `c` to the parameters `θ` of a simple
//! probabilistic model over attributes `x`; predictions come from that model
//! and `θ` doubles as the explanation for the instance.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dataset;
pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod explanations;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod posthoc;
pub mod training;

pub use dataset::{Batch, Dataset, Targets};
pub use encoders::{attention_compose, Attention, Dictionary, GruCell, MlpEncoder, RecurrentEncoder};
pub use error::{CenError, Result};
pub use explanations::{LinearExplanation, Omega, SurvivalExplanation, SurvivalTarget, TimeRule};
pub use model::{CenModel, Encoder, Family, ModelSpec, Regularization};
pub use numeric::{log_sum_exp, softmax, DenseMatrix, Parameters, Rng};
