//! Synthetic data, KL divergences and predictive metrics.

mod kl;
mod metrics;
mod simulate;

pub use kl::{collapsed_truth, empirical_kl, empirical_kl_scaled, kl_divergence, CollapsedModel, GaussianSpec, KlDraw, KlSummary};
pub use metrics::{central_interval, coverage, draw_intervals, mse_w, percentile, rmspe};
pub use simulate::{simulate_gp, simulate_nngp, SimParams, SimTruth, DENSE_CAP};
