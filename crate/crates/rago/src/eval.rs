//! Gauge alignment and angular-error metrics.
//!
//! Absolute rotations are only defined up to a global gauge: right-multiplying
//! every estimate by a fixed rotation leaves all relative rotations unchanged.
//! Errors are therefore measured after solving for the gauge that best maps
//! the estimates onto the ground truth.

use crate::so3::{geodesic_deg, project_to_so3, Rotation, So3Error};
use nalgebra::Matrix3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate and ground-truth lists differ in length ({est} vs {gt})")]
    LengthMismatch { est: usize, gt: usize },
    #[error("empty rotation list")]
    Empty,
    #[error(transparent)]
    Degenerate(#[from] So3Error),
}

fn check(est: &[Rotation], gt: &[Rotation]) -> Result<(), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Chordal-L2 gauge: the rotation R₀ minimizing Σ_u ‖est_u·R₀ − gt_u‖²_F,
/// obtained by projecting Σ_u est_uᵀ·gt_u onto SO(3).
pub fn align(est: &[Rotation], gt: &[Rotation]) -> Result<Rotation, EvalError> {
    check(est, gt)?;
    let mut acc = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        acc += e.matrix().transpose() * g.matrix();
    }
    Ok(project_to_so3(&acc)?)
}

/// Per-node geodesic errors in degrees after gauge alignment.
pub fn aligned_errors(est: &[Rotation], gt: &[Rotation]) -> Result<Vec<f64>, EvalError> {
    let r0 = align(est, gt)?;
    Ok(est
        .iter()
        .zip(gt)
        .map(|(e, g)| geodesic_deg(&(*e * r0), g))
        .collect())
}

/// Mean and lower median. The lower median (element at index (n−1)/2 of the
/// sorted list) keeps even-length results deterministic.
pub fn mean_and_median(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    (mean, sorted[(sorted.len() - 1) / 2])
}

/// (mean, median) aligned angular error in degrees.
pub fn mn_md_error(est: &[Rotation], gt: &[Rotation]) -> Result<(f64, f64), EvalError> {
    let errs = aligned_errors(est, gt)?;
    Ok(mean_and_median(&errs))
}
