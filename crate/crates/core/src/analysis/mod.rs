//! Co-adaptation diagnostics, linear-TD stability theory, the Lyapunov fixed
//! point, and metric traces.

pub mod lyapunov;
pub mod metrics;
pub mod stability;
pub mod trace;

pub use lyapunov::{lyapunov_iterate, lyapunov_sigma, LyapunovSolution, LyapunovStop};
pub use metrics::{
    coadaptation_trace_test, implicit_reg_value, mean_cosine, mean_feature_dot, srank, srank_from_values,
    CosineSummary, FeaturePair, DEFAULT_SRANK_DELTA,
};
pub use stability::{
    classify, simulate_linear_td, stability_spectrum, td_matrix, LinearTdRun, StabilityReport, Verdict,
    CONVERGED_ERROR, CONVERGED_SHRINK, DEFAULT_STABILITY_TOL,
};
pub use trace::{Checkpoint, MetricTrace, TRACE_COLUMNS};
