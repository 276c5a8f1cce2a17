//! Donsker–Varadhan lower bound on mutual information.

use ndarray::ArrayView2;

use super::critic::CriticNetwork;
use crate::error::{Error, Result};

/// `log((1/n) Σ exp(v))`, computed with max subtraction.
///
/// Returns `None` for empty input or when any value is non-finite.
pub fn log_mean_exp(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Some(max + (sum / values.len() as f64).ln())
}

/// DV bound in nats from critic outputs on joint and marginal rows.
pub fn dv_from_outputs(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if joint.len() != marginal.len() {
        return Err(Error::Shape(format!(
            "joint has {} rows, marginal has {}",
            joint.len(),
            marginal.len()
        )));
    }
    if joint.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if joint.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergent { epoch: 0 });
    }
    let mean_joint = joint.iter().sum::<f64>() / joint.len() as f64;
    let lme = log_mean_exp(marginal).ok_or(Error::Divergent { epoch: 0 })?;
    Ok(mean_joint - lme)
}

/// `(1/B) Σ f(joint) − log((1/B) Σ exp f(marginal))` in nats.
pub fn dv_bound(
    critic: &CriticNetwork,
    joint_rows: ArrayView2<'_, f64>,
    marginal_rows: ArrayView2<'_, f64>,
) -> Result<f64> {
    if joint_rows.nrows() != marginal_rows.nrows() {
        return Err(Error::Shape(format!(
            "joint has {} rows, marginal has {}",
            joint_rows.nrows(),
            marginal_rows.nrows()
        )));
    }
    if joint_rows.iter().chain(marginal_rows.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input rows".into()));
    }
    let fj = critic.forward(joint_rows)?;
    let fm = critic.forward(marginal_rows)?;
    dv_from_outputs(fj.as_slice().expect("contiguous"), fm.as_slice().expect("contiguous"))
}
