//! Dense linear algebra, the feature-exposing MLP, optimizers and the
//! spectral decompositions used by the analysis code. Everything is `f64`.

mod eig;
mod matrix;
mod mlp;
mod optim;
mod svd;

pub use eig::{determinant, eig_complex, hessenberg_in_place};
pub use matrix::{axpy, dot, norm, Matrix};
pub use mlp::{
    central_difference, finite_diff_grad, mlp_backward, mlp_forward, Activation, Forward,
    Gradients, HeadMode, MlpParams, Tape,
};
pub use optim::{adam_step, adam_update_slice, sgd_step, sgd_update, AdamConfig, AdamState, Optimizer};
pub use svd::{lstsq, svd, svd_values, Svd};

pub use num_complex::Complex64;
