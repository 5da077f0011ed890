//! Unsupervised ensemble learning for binary classifiers whose errors are
//! dependent through a small number of latent variables.
//!
//! The pipeline: estimate which classifiers share a latent variable from the
//! sample covariance ([`estimate_structure`]), fit a two-layer
//! Dawid–Skene style model ([`latent::fit`]) and predict with the exact
//! maximum-likelihood rule ([`latent::predict`]).

pub mod bench;
pub mod data;
pub mod dawid_skene;
mod error;
pub mod latent;
pub mod score;
pub mod stats;
pub mod structure;
pub mod synthetic;

pub use data::{CovarianceMatrix, LabelVector, PredictionMatrix};
pub use dawid_skene::{ds_predict, em_refine, fit_ci, fit_ci_with, majority_vote, EmOptions, sml_initialize, CIParams, EmFit, Posteriors};
pub use error::{Error, Result};
pub use latent::{LatentFit, LatentModel, LatentValueMatrix};
pub use score::{exact_group_match, score_matrix, ScoreMatrix};
pub use stats::{balanced_accuracy, balanced_error, conditional_covariance, sample_covariance, AccuracyPair};
pub use structure::{estimate_structure, estimate_structure_with, GroupStructure, ResidualReport, StructureOptions};
