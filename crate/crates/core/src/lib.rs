//! Symmetry-invariant stochastic gradient descent for fully connected deep
//! networks.
//!
//! Fully connected networks built from linear / ReLU / 2x1-max-pool layers
//! (optionally with batch normalization) carry continuous weight-space
//! symmetries: the rows of a weight matrix can be rescaled, with compensating
//! rescalings downstream, without changing the loss. Plain Euclidean SGD is
//! not invariant to these reparameterizations. This crate implements two
//! update rules that are:
//!
//! * **SM** (scaled metric): Riemannian SGD under the metric whose inverse is
//!   `Diag(diag(W Wᵀ))` on weight rows and `Diag(diag(θᵀθ))` on classifier
//!   columns.
//! * **UN** (unit norm): Riemannian SGD on the oblique manifold: every
//!   filter row kept at unit Euclidean norm via tangent projection and a
//!   renormalization retraction.
//!
//! alongside the **B-SGD** baseline (Euclidean updates from unit-normalized
//! initialization), plus everything needed to train and evaluate on MNIST:
//! IDX ingestion, seeded splits and mini-batching, forward/backward passes,
//! a finite-difference gradient oracle, symmetry checkers, learning-rate
//! protocols (exponential decay and bold driver) and an experiment harness
//! with reproducible seeding.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); the experiment harness and all stated tolerances are
//! pinned to `f64`.
//!
//! # Example
//!
//! A bare training step, outside the harness:
//!
//! ```
//! use symsgd::data::synthetic_dataset;
//! use symsgd::network::{backward, forward, init_params, ArchConfig, Mode};
//! use symsgd::optim::{apply_rule_in_place, UpdateRule};
//!
//! let cfg = ArchConfig::batch_norm(2, 8, 784, 10);
//! let data = synthetic_dataset::<f64>(64, 0.05, 1, 2);
//! let mut params = init_params::<f64>(&cfg, 7);
//! let mut last_loss = f64::INFINITY;
//! for step in 0..4 {
//!     let idx: Vec<usize> = (16 * step..16 * (step + 1)).collect();
//!     let (input, labels) = data.gather(&idx);
//!     let pass = forward(&cfg, &params, &input, &labels, Mode::Train);
//!     let grads = backward(&cfg, &params, &pass, &labels);
//!     apply_rule_in_place(&mut params, &grads, UpdateRule::Sm, 1e-2);
//!     params.update_bn_running(&cfg, &pass);
//!     last_loss = pass.loss;
//! }
//! assert!(last_loss.is_finite());
//! ```

pub mod data;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod symmetry;

pub use scalar::Scalar;

/// Double-precision matrix, the concrete instantiation used by the harness.
pub type Matrix64 = linalg::Matrix<f64>;
/// Single-precision matrix.
pub type Matrix32 = linalg::Matrix<f32>;
/// Double-precision network parameters.
pub type NetworkParams64 = network::NetworkParams<f64>;
/// Double-precision gradients.
pub type Gradients64 = network::Gradients<f64>;
