//! Ingestion, preprocessing, survival-time discretization, synthetic
//! generators and feature corruption.

mod synthetic;
mod tabular;

pub use synthetic::{gen_blobs, gen_xor_context, BlobsSpec, XorSpec, XorVariant};
pub use tabular::{
    infer_schema, load_csv, preprocess, Column, ColumnKind, ColumnSchema, FeatureRole, PreprocessPlan,
    PreprocessRequest, Schema, SurvivalBinning, TabularDataset,
};

use crate::error::{CenError, Result};
use crate::explanations::SurvivalTarget;
use crate::numeric::{DenseMatrix, Rng};

/// Number of whole intervals of `width` that fit in `horizon`.
pub fn interval_count(horizon: f64, width: f64) -> Result<usize> {
    if !(width > 0.0 && horizon > 0.0 && width.is_finite() && horizon.is_finite()) {
        return Err(CenError::invalid("horizon and interval width must be positive"));
    }
    let m = (horizon / width + 1e-9).floor() as usize;
    if m == 0 {
        return Err(CenError::invalid("horizon shorter than one interval"));
    }
    Ok(m)
}

/// Maps event/censoring times to interval indices.
///
/// With `m = ⌊horizon / width⌋` intervals, a time `t` falls in interval
/// `⌊t / width⌋`. Records at or beyond `m · width` become censored at `m`
/// (alive through every interval). Returns the targets and the `m + 1`
/// interval boundaries `[0, w, …, m·w]`.
pub fn discretize_survival(
    times: &[f64],
    censored: &[bool],
    horizon: f64,
    width: f64,
) -> Result<(Vec<SurvivalTarget>, Vec<f64>)> {
    if times.len() != censored.len() {
        return Err(CenError::shape("discretize_survival", times.len(), censored.len()));
    }
    let m = interval_count(horizon, width)?;
    let cap = m as f64 * width;
    let mut out = Vec::with_capacity(times.len());
    for (&t, &cens) in times.iter().zip(censored) {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(CenError::invalid(format!("survival time {t} must be finite and >= 0")));
        }
        if t >= cap {
            out.push(SurvivalTarget::censored(m));
        } else {
            let j = ((t / width).floor() as usize).min(m - 1);
            out.push(SurvivalTarget { interval: j, censored: cens });
        }
    }
    let bounds = (0..=m).map(|j| j as f64 * width).collect();
    Ok((out, bounds))
}

/// `X + N(0, var(X_j)/snr)` per column; `snr = ∞` returns `X` unchanged.
pub fn inject_noise(x: &DenseMatrix, snr: f64, rng: &mut Rng) -> Result<DenseMatrix> {
    if !(snr > 0.0) {
        return Err(CenError::invalid("snr must be positive"));
    }
    if snr.is_infinite() {
        return Ok(x.clone());
    }
    let (n, d) = x.shape();
    let mut out = x.clone();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n.max(1) as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
            (var / snr).sqrt()
        })
        .collect();
    for i in 0..n {
        for (v, s) in out.row_mut(i).iter_mut().zip(&sd) {
            *v += s * rng.normal();
        }
    }
    Ok(out)
}

/// Keeps a seeded random subset of `⌈fraction · d⌉` columns (in original order).
pub fn subsample_features(x: &DenseMatrix, fraction: f64, rng: &mut Rng) -> Result<(DenseMatrix, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CenError::invalid("fraction must be in (0, 1]"));
    }
    let d = x.cols();
    let keep = ((fraction * d as f64 - 1e-9).ceil() as usize).clamp(1, d.max(1));
    if keep >= d {
        return Ok((x.clone(), (0..d).collect()));
    }
    let mut kept = rng.permutation(d);
    kept.truncate(keep);
    kept.sort_unstable();
    Ok((x.select_columns(&kept), kept))
}
