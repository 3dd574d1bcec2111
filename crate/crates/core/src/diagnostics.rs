//! Fano-style check that generated explanations are not predictive of the
//! label on their own.

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Dataset};
use crate::error::{CenError, Result};
use crate::metrics::{argmax, model_accuracy, model_predictions};
use crate::model::{CenModel, Family};
use crate::numeric::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoReport {
    /// `1 − accuracy` of the full model on the whole dataset.
    pub epsilon_hat: f64,
    /// `Ĥ(Y | θ)` over the whole dataset, in nats.
    pub delta_hat: f64,
    /// `(δ̂ − 1) / log|Y| − ε̂`.
    pub bound: f64,
    /// Full-model accuracy minus θ-only accuracy on the held-out half.
    pub contribution_lower_bound: f64,
    pub full_accuracy: f64,
    pub theta_only_accuracy: f64,
    pub clusters: usize,
    /// `"exact"` (hard attention) or `"k-means"`.
    pub clustering: String,
    pub holds: bool,
    pub note: String,
}

/// Lower bound `(δ − 1)/log|Y| − ε` on the contribution of the attributes.
pub fn fano_bound(delta: f64, epsilon: f64, classes: usize) -> Result<f64> {
    if classes < 2 {
        return Err(CenError::invalid("fano bound needs |Y| >= 2"));
    }
    Ok((delta - 1.0) / (classes as f64).ln() - epsilon)
}

/// Lloyd's algorithm with k-means++ seeding. Returns the assignment of each point.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut Rng, max_iter: usize) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if points.is_empty() || k == 0 {
        return Err(CenError::invalid("kmeans needs points and k >= 1"));
    }
    let k = k.min(points.len());
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![points[rng.below(points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.uniform() * total;
        let mut pick = d.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        centers.push(points[pick].clone());
    }
    let mut assign = vec![0usize; points.len()];
    for iter in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let dj = dist2(p, c);
                if dj < best_d {
                    best_d = dj;
                    best = j;
                }
            }
            if assign[i] != best {
                changed = true;
                assign[i] = best;
            }
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                *c = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    Ok((assign, centers))
}

const HARD_TOL: f64 = 1e-6;

/// Groups instances by their generated `θ`: exact atom selection when every
/// attention vector is one-hot, k-means with `K` clusters otherwise.
fn cluster_thetas(model: &CenModel, data: &Dataset, rng: &mut Rng) -> Result<(Vec<usize>, usize, &'static str)> {
    let mut thetas = Vec::with_capacity(data.len());
    let mut alphas = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (t, a) = model.generate_theta(data.contexts.row(i))?;
        thetas.push(t);
        alphas.push(a);
    }
    let hard = model.dictionary.is_some()
        && alphas
            .iter()
            .all(|a| a.iter().all(|v| v.iter().all(|&p| p < HARD_TOL || p > 1.0 - HARD_TOL)));
    if hard {
        let ids: Vec<usize> = alphas.iter().map(|a| argmax(&a[0])).collect();
        let k = model.dictionary.as_ref().map_or(1, |d| d.size());
        return Ok((ids, k, "exact"));
    }
    let k = model.dictionary.as_ref().map_or(4, |d| d.size());
    let (ids, centers) = kmeans(&thetas, k, rng, 100)?;
    Ok((ids, centers.len(), "k-means"))
}

/// Compares the measured contribution of `x` with the Fano lower bound.
/// `δ̂` is a plug-in estimate, so the check is heuristic.
pub fn fano_diagnostic(model: &CenModel, data: &Dataset, rng: &mut Rng) -> Result<FanoReport> {
    let Family::Linear { classes, .. } = model.family else {
        return Err(CenError::invalid("fano diagnostic needs the linear family"));
    };
    if classes < 2 {
        return Err(CenError::invalid("fano diagnostic needs |Y| >= 2"));
    }
    if data.len() < 4 {
        return Err(CenError::invalid("fano diagnostic needs at least 4 instances"));
    }
    let labels = data.labels().ok_or_else(|| CenError::invalid("fano diagnostic needs class labels"))?;
    let accuracy = model_accuracy(model, data)?;
    let idx = data.all_indices();
    let delta_hat = model.entropy_estimate(&Batch::new(data, &idx)?)?;
    let epsilon_hat = 1.0 - accuracy;
    let bound = fano_bound(delta_hat, epsilon_hat, classes)?;

    let (ids, clusters, clustering) = cluster_thetas(model, data, rng)?;
    let perm = rng.permutation(data.len());
    let (fit, held) = perm.split_at(data.len() / 2);
    let mut votes = vec![vec![0usize; classes]; clusters];
    let mut overall = vec![0usize; classes];
    for &i in fit {
        votes[ids[i]][labels[i]] += 1;
        overall[labels[i]] += 1;
    }
    let fallback = argmax(&overall.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let vote_of: Vec<usize> = votes
        .iter()
        .map(|v| {
            if v.iter().sum::<usize>() == 0 {
                fallback
            } else {
                argmax(&v.iter().map(|&c| c as f64).collect::<Vec<_>>())
            }
        })
        .collect();
    let preds = model_predictions(model, &data.subset(held))?;
    let mut full_hits = 0;
    let mut theta_hits = 0;
    for (p, &i) in preds.iter().zip(held) {
        full_hits += usize::from(argmax(p) == labels[i]);
        theta_hits += usize::from(vote_of[ids[i]] == labels[i]);
    }
    let full_accuracy = full_hits as f64 / held.len() as f64;
    let theta_only_accuracy = theta_hits as f64 / held.len() as f64;
    let contribution = full_accuracy - theta_only_accuracy;
    Ok(FanoReport {
        epsilon_hat,
        delta_hat,
        bound,
        contribution_lower_bound: contribution,
        full_accuracy,
        theta_only_accuracy,
        clusters,
        clustering: clustering.to_string(),
        holds: contribution >= bound - 1e-6,
        note: "heuristic: delta_hat is a plug-in estimate of H(Y|theta), not a proven lower bound".into(),
    })
}
