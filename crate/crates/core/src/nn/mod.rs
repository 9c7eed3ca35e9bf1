//! Numerical substrate: matrices, parameters, layers, the differentiation
//! tape, Gaussian algebra and the optimizer.

pub mod adam;
pub mod gaussian;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod mat;
pub mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gaussian::{gaussian_loglik, jsd_mc, kl_diag_gaussian, reparameterize, GaussianParams};
pub use graph::{Activation, Grads, Graph, Var};
pub use layers::{dense_forward, gru_step, Dense, GaussianHead, GruCell, Mlp};
pub use mat::Mat;
pub use param::{ParamId, ParamSet, ParamTensor};
