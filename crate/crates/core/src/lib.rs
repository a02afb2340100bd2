//! Spectral-radius regularization for small feed-forward networks.
//!
//! The crate computes exact Hessian-vector products and third-order
//! directional derivatives with fused forward/backward passes, estimates the
//! dominant Hessian eigenpair by power iteration, and trains with a hinge
//! penalty on the spectral radius. Dense finite-difference and eigensolver
//! oracles, dataset loaders and two generalization harnesses (covariate
//! shift re-weighting and image augmentation) round it out.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod genharness;
pub mod hvp;
pub mod linalg;
pub mod net;
pub mod oracle;
pub mod seeds;
pub mod spectral;
pub mod train;
pub mod validation;

pub use error::{Error, Result};
pub use hvp::{hessian_vector_product, third_order_form, NetObjective, ObjectiveModel};
pub use linalg::Matrix;
pub use net::{Activation, LayerSpec, LossKind, Network};
pub use spectral::{power_iteration, spectral_radius_gradient, PowerIterationConfig, SpectralEstimate};
pub use train::{gd_train, sgd_train, RegularizerConfig, TrainConfig, TrainReport};
