//! Circuit training and optimizer diagnostics.

pub mod cumulant;
pub mod direct;
pub mod objective;
pub mod shift;
pub mod surrogate;
pub mod train;

pub use cumulant::{loss_distribution_diagnostic, CumulantReport, CumulantRow};
pub use direct::{
    direct_optimize, potentially_optimal, DirectSettings, DirectState, OptimizerTrace, Rectangle,
    SearchBox, SplitRule, StopReason, TraceRecord,
};
pub use objective::{post_reservoir_loss, Objective, SensorTask};
pub use shift::{
    fit_trig_polynomial, fourier_derivative, parameter_shift_gradient, sample_and_fit, TrigPolynomial,
};
pub use surrogate::{surrogate_fit, surrogate_fit_from, surrogate_predict, KernelParams, Surrogate};
pub use train::{evaluate_params, polish, train, BoxMode, TrainOutcome, TrainSettings};
