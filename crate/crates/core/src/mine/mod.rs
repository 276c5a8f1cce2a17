//! Mutual-information estimation with a trainable Donsker–Varadhan critic.

pub mod adam;
pub mod critic;
pub mod dv;
pub mod train;

pub use adam::Adam;
pub use critic::{CriticConfig, CriticNetwork, ForwardCache};
pub use dv::{dv_bound, dv_from_outputs, log_mean_exp};
pub use train::{train_mi, train_mi_observed, write_curve_csv, EpochRecord, TrainConfig};
