//! Beta-negative-binomial CP factorization of sparse count tensors.
//!
//! A K-way count tensor is modeled as Poisson with rate
//! Σ_r λ_r Π_k U^(k)[i_k, r], where every factor column lies on the simplex,
//! λ_r ~ Gamma(g, p_r / (1 − p_r)) and p_r ~ Beta(cε, c(1 − ε)). Components
//! the data does not support are shrunk towards zero, so the number of
//! surviving components estimates the tensor rank.
//!
//! Four engines are provided: batch Gibbs sampling ([`gibbs`]), batch
//! variational Bayes ([`vb`]), and the minibatch variants conditional
//! density filtering and stochastic variational inference ([`online`]).
//! All of them only ever touch the stored nonzero entries.

pub mod allocation;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod gibbs;
pub mod model;
pub mod online;
pub mod rng;
pub mod sparse_tensor;
pub mod special;
pub mod synthetic;
pub mod vb;

pub use error::{Error, Result};
pub use evaluation::{FitTrace, TraceRow};
pub use model::{Hyperparams, Matrix, ModelState, SufficientStats, VariationalState};
pub use sparse_tensor::{DuplicatePolicy, Entry, SparseCountTensor, TensorShape};
