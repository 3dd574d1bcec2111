//! Classification and survival metrics.

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Dataset};
use crate::error::{CenError, Result};
use crate::explanations::{curve_from_probs, predicted_interval, SurvivalTarget, TimeRule};
use crate::model::{CenModel, Prediction};

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &[usize], targets: &[usize]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(CenError::shape("accuracy", targets.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(CenError::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic; tied pairs count 1/2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CenError::shape("auc", labels.len(), scores.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CenError::UndefinedMetric("auc needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CenError::invalid("auc scores contain NaN"));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CenError::shape("spearman", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(CenError::UndefinedMetric("spearman needs at least 2 points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(CenError::UndefinedMetric("spearman of a constant sequence".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Interval indices at the given population quantiles of observed end
/// intervals (censored or not), using the nearest-rank rule.
pub fn quantile_intervals(targets: &[SurvivalTarget], quantiles: &[f64]) -> Result<Vec<usize>> {
    if targets.is_empty() {
        return Err(CenError::UndefinedMetric("quantiles of an empty set".into()));
    }
    let mut ends: Vec<usize> = targets.iter().map(|t| t.interval).collect();
    ends.sort_unstable();
    quantiles
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(CenError::invalid(format!("quantile {q} outside [0, 1]")));
            }
            let rank = ((q * ends.len() as f64).ceil() as usize).clamp(1, ends.len());
            Ok(ends[rank - 1])
        })
        .collect()
}

/// Accuracy of the alive/dead call at each quantile interval `q`.
///
/// `curves[i][q]` is `S(t_q)`, the probability of surviving to the start of
/// interval `q`. A patient counts as alive at `t_q` when the event interval is
/// at least `q`. Censored patients whose last interval is below `q` are excluded.
pub fn acc_at_quantiles(curves: &[Vec<f64>], targets: &[SurvivalTarget], quantile_times: &[usize]) -> Result<Vec<f64>> {
    if curves.len() != targets.len() {
        return Err(CenError::shape("acc_at_quantiles", targets.len(), curves.len()));
    }
    quantile_times
        .iter()
        .map(|&q| {
            let mut hits = 0usize;
            let mut total = 0usize;
            for (curve, t) in curves.iter().zip(targets) {
                if t.censored && t.interval < q {
                    continue;
                }
                let s = *curve
                    .get(q)
                    .ok_or_else(|| CenError::shape("survival curve length", q + 1, curve.len()))?;
                let truth = t.interval >= q;
                let pred = s >= 0.5;
                total += 1;
                hits += usize::from(truth == pred);
            }
            if total == 0 {
                return Err(CenError::UndefinedMetric(format!("no patients with known status at interval {q}")));
            }
            Ok(hits as f64 / total as f64)
        })
        .collect()
}

/// Relative absolute error of predicted vs. actual event times for uncensored
/// patients: `min(1, |t̂ − t| / max(t, w))` with interval midpoints `(j + ½)·w`.
pub fn rae(predicted: &[usize], targets: &[SurvivalTarget], width: f64) -> Result<f64> {
    if predicted.len() != targets.len() {
        return Err(CenError::shape("rae", targets.len(), predicted.len()));
    }
    let times: Vec<f64> = predicted.iter().map(|&j| (j as f64 + 0.5) * width).collect();
    rae_from_times(&times, targets, width)
}

/// As [`rae`] with predicted times given directly.
pub fn rae_from_times(predicted: &[f64], targets: &[SurvivalTarget], width: f64) -> Result<f64> {
    if predicted.len() != targets.len() {
        return Err(CenError::shape("rae", targets.len(), predicted.len()));
    }
    if !(width > 0.0) {
        return Err(CenError::invalid("interval width must be positive"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in predicted.iter().zip(targets) {
        if t.censored {
            continue;
        }
        let actual = (t.interval as f64 + 0.5) * width;
        sum += ((p - actual).abs() / actual.max(width)).min(1.0);
        n += 1;
    }
    if n == 0 {
        return Err(CenError::UndefinedMetric("rae with every record censored".into()));
    }
    Ok(sum / n as f64)
}

/// Class predictions of a linear-family model over a dataset.
pub fn model_predictions(model: &CenModel, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len())
        .map(|i| model.predict_proba(data.contexts.row(i), data.attributes.row(i)))
        .collect()
}

pub fn model_accuracy(model: &CenModel, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels()
        .ok_or_else(|| CenError::invalid("accuracy needs class targets"))?;
    let preds: Vec<usize> = model_predictions(model, data)?.iter().map(|p| argmax(p)).collect();
    accuracy(&preds, labels)
}

/// Outcome probabilities of a survival-family model over a dataset.
pub fn survival_probabilities(model: &CenModel, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len())
        .map(|i| match model.forward(data.contexts.row(i), data.attributes.row(i))?.prediction {
            Prediction::Survival(lp) => Ok(lp.iter().map(|l| l.exp()).collect()),
            Prediction::Classes(_) => Err(CenError::invalid("expected a survival model")),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub nll: Option<f64>,
    pub entropy: Option<f64>,
    pub quantiles: Vec<f64>,
    pub quantile_intervals: Vec<usize>,
    pub acc_at_quantiles: Vec<f64>,
    pub rae: Option<f64>,
    /// Definition of `rae` used for this report.
    pub rae_definition: Option<String>,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const RAE_DEFINITION: &str =
    "mean over uncensored of min(1, |t_hat - t| / max(t, width)), t = (interval + 0.5) * width, t_hat from the median of the predicted distribution";

/// Evaluation summary. For survival data, `quantile_reference` supplies the
/// targets the quantile intervals are computed from (normally the training split).
pub fn evaluate(
    model: &CenModel,
    data: &Dataset,
    quantiles: &[f64],
    quantile_reference: Option<&[SurvivalTarget]>,
    width: f64,
) -> Result<MetricsReport> {
    let idx = data.all_indices();
    let batch = Batch::new(data, &idx)?;
    let mut report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        n: data.len(),
        nll: Some(model.cen_nll(&batch)?.nll),
        ..Default::default()
    };
    if let Some(labels) = data.labels() {
        let probs = model_predictions(model, data)?;
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        report.accuracy = Some(accuracy(&preds, labels)?);
        if probs.first().map(Vec::len) == Some(2) {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            report.auc = auc(&scores, &bin).ok();
        }
        if data.len() >= 2 {
            report.entropy = Some(model.entropy_estimate(&batch)?);
        }
    } else if let Some(targets) = data.survival_targets() {
        let probs = survival_probabilities(model, data)?;
        let curves: Vec<Vec<f64>> = probs.iter().map(|p| curve_from_probs(p)).collect();
        let reference = quantile_reference.unwrap_or(targets);
        report.quantiles = quantiles.to_vec();
        report.quantile_intervals = quantile_intervals(reference, quantiles)?;
        report.acc_at_quantiles = acc_at_quantiles(&curves, targets, &report.quantile_intervals)?;
        let preds: Vec<usize> = probs.iter().map(|p| predicted_interval(p, TimeRule::Median)).collect();
        report.rae = rae(&preds, targets, width).ok();
        report.rae_definition = Some(RAE_DEFINITION.to_string());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert_eq!(brute_auc(&s, &l), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(CenError::UndefinedMetric(_))));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(v in prop::collection::vec((0u8..20, any::<bool>()), 2..30)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = v.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert!((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_complement(v in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 2..30)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = v.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&flipped, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn acc_at_quantiles_trivial_cases() {
        let targets = vec![SurvivalTarget::event(0); 4];
        // mass on interval 0: S(t_0) = 1, S(t_j>0) = 0
        let curve = curve_from_probs(&[1.0, 0.0, 0.0, 0.0]);
        let curves = vec![curve; 4];
        let q = quantile_intervals(&targets, &[0.25, 0.5, 0.75]).unwrap();
        assert_eq!(q, vec![0, 0, 0]);
        // everyone is at (and counted alive at the start of) interval 0
        assert_eq!(acc_at_quantiles(&curves, &targets, &q).unwrap(), vec![1.0; 3]);

        let died_early = vec![SurvivalTarget::event(0), SurvivalTarget::event(1)];
        let always_alive = vec![vec![1.0; 4]; 2];
        assert_eq!(acc_at_quantiles(&always_alive, &died_early, &[2]).unwrap(), vec![0.0]);
    }

    #[test]
    fn acc_at_quantiles_fixture() {
        // m = 4; three censored patients
        let targets = vec![
            SurvivalTarget::event(1),
            SurvivalTarget::event(3),
            SurvivalTarget::censored(0),
            SurvivalTarget::censored(2),
            SurvivalTarget::event(2),
            SurvivalTarget::censored(4),
        ];
        let curves = vec![
            vec![1.0, 0.9, 0.4, 0.2, 0.1],
            vec![1.0, 0.9, 0.8, 0.6, 0.3],
            vec![1.0, 0.5, 0.4, 0.3, 0.2],
            vec![1.0, 0.9, 0.7, 0.45, 0.3],
            vec![1.0, 0.6, 0.55, 0.5, 0.1],
            vec![1.0, 1.0, 0.9, 0.9, 0.8],
        ];
        // ends sorted: 0 1 2 2 3 4 -> q25 rank 2 -> 1, q50 rank 3 -> 2, q75 rank 5 -> 3
        let q = quantile_intervals(&targets, &[0.25, 0.5, 0.75]).unwrap();
        assert_eq!(q, vec![1, 2, 3]);
        // t=1: excluded {2}; truth alive: p0 y, p1 y, p3 y, p4 y, p5 y; preds 0.9 0.9 0.9 0.6 1.0 -> 5/5
        // t=2: excluded {2}; truth: p0 n, p1 y, p3 y, p4 y, p5 y; preds 0.4 n, 0.8 y, 0.7 y, 0.55 y, 0.9 y -> 5/5
        // t=3: excluded {2, 3}; truth: p0 n, p1 y, p4 n, p5 y; preds 0.2 n, 0.6 y, 0.5 y(wrong), 0.9 y -> 3/4
        assert_eq!(acc_at_quantiles(&curves, &targets, &q).unwrap(), vec![1.0, 1.0, 0.75]);
    }

    #[test]
    fn rae_examples() {
        let t = vec![SurvivalTarget::event(2), SurvivalTarget::event(5)];
        assert_eq!(rae(&[2, 5], &t, 7.0).unwrap(), 0.0);
        let actual: Vec<f64> = t.iter().map(|x| (x.interval as f64 + 0.5) * 7.0).collect();
        let doubled: Vec<f64> = actual.iter().map(|a| 2.0 * a).collect();
        assert_eq!(rae_from_times(&doubled, &t, 7.0).unwrap(), 1.0);
        assert!(matches!(
            rae(&[1], &[SurvivalTarget::censored(1)], 1.0),
            Err(CenError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rae_fixture() {
        // width 1: actual midpoints 0.5, 3.5, 1.5 (censored skipped)
        let t = vec![
            SurvivalTarget::event(0),
            SurvivalTarget::event(3),
            SurvivalTarget::censored(2),
            SurvivalTarget::event(1),
        ];
        // predicted midpoints 2.5, 2.5, -, 1.5
        // contributions: min(1, 2/1) = 1; 1/3.5; 0
        let expected = (1.0 + 1.0 / 3.5 + 0.0) / 3.0;
        assert_abs_diff_eq!(rae(&[2, 2, 0, 1], &t, 1.0).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
