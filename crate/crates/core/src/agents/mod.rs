//! Offline TD agents: backup selectors, loss heads, target networks and the
//! DR3 regularizer family.

pub mod dr3;
pub mod losses;
pub mod network;
pub mod noisy;
pub mod train;

pub use dr3::{
    dr3_generalized, dr3_label_noise_penalty, dr3_penalty, label_noise_moments, label_noise_sigma, Dr3Config,
    Dr3Value, Dr3Variant,
};
pub use losses::{check_simplex, cql_penalty, logsumexp, rem_loss, sample_simplex, ErrorLoss, RemLoss, ValueGrad};
pub use network::{mix_heads, QNetwork, Which};
pub use noisy::{implicit_reg_full_gradient, noisy_td_run};
pub use train::{
    backup_target, batch_objective, compute_targets, next_feature_actions, BackupContext, BackupSelector, EvalSetup,
    LossComponents, LossHead, NoiseKind, OptimizerKind, SampleSpec, TrainConfig, Trainer, DIVERGENCE_CAP,
};
