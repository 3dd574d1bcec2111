//! Interpretable predictors `p(Y | x, θ)`: multinomial linear models and
//! linear-chain survival CRFs over `m` discrete time intervals.
//!
//! # Survival outcome convention
//!
//! A target sequence `y¹..y^m` is valid only when it is monotone, `0^j 1^{m−j}`,
//! so there are `m + 1` outcomes `j = 0..m`. Outcome `j < m` means the event
//! happened in `[t_j, t_{j+1})`; outcome `m` means the subject survived past
//! the horizon `t_m`. Outcome `j` has score
//!
//! ```text
//! s(j) = Σ_{i=j+1}^{m} xᵀθ^i + ω-terms of the transitions in 0^j 1^{m−j}
//! ```
//!
//! so `s(m) = 0` when `ω = 0` and `log p(j) = s(j) − log Σ_k exp s(k)`.

use serde::{Deserialize, Serialize};

use crate::error::{CenError, Result};
use crate::numeric::{dot, log_sum_exp_unchecked, softmax_unchecked, DenseMatrix, Parameters};

/// Multinomial logistic explanation `p(y | x) = softmax(W x + b)`.
///
/// Flattened as `θ = [W (row-major, classes × d_x), b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearExplanation {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Loss and gradients of `−log p(y | x, θ)` for a linear explanation.
#[derive(Debug, Clone)]
pub struct LinearNllGrad {
    pub loss: f64,
    pub probs: Vec<f64>,
    /// `p − onehot(y)`, the gradient w.r.t. the logits.
    pub d_logits: Vec<f64>,
    /// Gradient w.r.t. the flattened `θ`.
    pub grad_theta: Vec<f64>,
}

impl LinearExplanation {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(CenError::invalid("linear explanation needs at least 2 classes"));
        }
        if weights.cols() == 0 {
            return Err(CenError::invalid("linear explanation needs d_x > 0"));
        }
        if bias.len() != weights.rows() {
            return Err(CenError::shape("LinearExplanation::new", weights.rows(), bias.len()));
        }
        Ok(LinearExplanation { weights, bias })
    }

    pub fn theta_len(classes: usize, d_x: usize) -> usize {
        classes * (d_x + 1)
    }

    pub fn from_theta(theta: &[f64], classes: usize, d_x: usize) -> Result<Self> {
        if theta.len() != Self::theta_len(classes, d_x) {
            return Err(CenError::shape(
                "LinearExplanation::from_theta",
                Self::theta_len(classes, d_x),
                theta.len(),
            ));
        }
        let split = classes * d_x;
        Self::new(
            DenseMatrix::from_vec(classes, d_x, theta[..split].to_vec())?,
            theta[split..].to_vec(),
        )
    }

    pub fn to_theta(&self) -> Vec<f64> {
        let mut t = self.weights.as_slice().to_vec();
        t.extend_from_slice(&self.bias);
        t
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(CenError::shape("linear_predict", self.input_dim(), x.len()));
        }
        Ok(linear_logits(self.weights.as_slice(), &self.bias, x))
    }

    /// `softmax(W x + b)`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_unchecked(&self.logits(x)?))
    }

    pub fn nll_grad(&self, x: &[f64], y: usize) -> Result<LinearNllGrad> {
        if y >= self.classes() {
            return Err(CenError::invalid(format!(
                "class index {y} out of range for {} classes",
                self.classes()
            )));
        }
        let logits = self.logits(x)?;
        Ok(linear_nll_grad_raw(&logits, x, y))
    }
}

/// Logits for a flattened weight block (`classes × d_x`, row-major) and bias.
pub(crate) fn linear_logits(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    bias.iter()
        .enumerate()
        .map(|(k, b)| dot(&weights[k * d..(k + 1) * d], x) + b)
        .collect()
}

pub(crate) fn linear_nll_grad_raw(logits: &[f64], x: &[f64], y: usize) -> LinearNllGrad {
    let lse = log_sum_exp_unchecked(logits);
    let loss = lse - logits[y];
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let mut d_logits = probs.clone();
    d_logits[y] -= 1.0;
    let grad_theta = linear_theta_grad(&d_logits, x);
    LinearNllGrad {
        loss,
        probs,
        d_logits,
        grad_theta,
    }
}

/// Chain rule from logit gradients to the flattened `θ = [W, b]`.
pub(crate) fn linear_theta_grad(d_logits: &[f64], x: &[f64]) -> Vec<f64> {
    let classes = d_logits.len();
    let d = x.len();
    let mut g = vec![0.0; classes * (d + 1)];
    for (k, dk) in d_logits.iter().enumerate() {
        for (j, xj) in x.iter().enumerate() {
            g[k * d + j] = dk * xj;
        }
        g[classes * d + k] = *dk;
    }
    g
}

/// Pairwise potentials of the survival chain. `ω(1, 0) = −∞` is structural.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Omega {
    /// `ω(0, 0)`
    pub w00: f64,
    /// `ω(0, 1)`
    pub w01: f64,
    /// `ω(1, 1)`
    pub w11: f64,
}

impl Omega {
    /// Number of `(0,0)`, `(0,1)` and `(1,1)` transitions in `0^j 1^{m−j}`.
    pub fn transition_counts(j: usize, m: usize) -> [f64; 3] {
        let c00 = j.saturating_sub(1);
        let c01 = usize::from(j >= 1 && j < m);
        let c11 = if j < m { m - 1 - j } else { 0 };
        [c00 as f64, c01 as f64, c11 as f64]
    }

    fn score(&self, j: usize, m: usize) -> f64 {
        let [a, b, c] = Self::transition_counts(j, m);
        a * self.w00 + b * self.w01 + c * self.w11
    }
}

impl Parameters for Omega {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&[self.w00, self.w01, self.w11])
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        let mut v = [self.w00, self.w01, self.w11];
        f(&mut v);
        [self.w00, self.w01, self.w11] = v;
    }
}

/// Interval index plus censoring flag.
///
/// Uncensored: the event happened in `[t_j, t_{j+1})` (or after `t_m` when `j = m`).
/// Censored: the subject was last seen alive in interval `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalTarget {
    pub interval: usize,
    pub censored: bool,
}

impl SurvivalTarget {
    pub fn event(interval: usize) -> Self {
        SurvivalTarget {
            interval,
            censored: false,
        }
    }

    pub fn censored(interval: usize) -> Self {
        SurvivalTarget {
            interval,
            censored: true,
        }
    }
}

/// Rule turning a distribution over outcomes into one predicted interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// Smallest `j` with `Σ_{k≤j} p(k) ≥ 0.5`.
    #[default]
    Median,
    /// `Σ_j j·p(j)`, rounded to the nearest interval.
    Mean,
    Argmax,
}

/// Linear-chain survival CRF with per-interval weights `θ¹..θ^m` (rows of an `m × d_x` matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalExplanation {
    pub weights: DenseMatrix,
    pub omega: Omega,
}

#[derive(Debug, Clone)]
pub struct SurvivalNllGrad {
    pub loss: f64,
    /// Gradient w.r.t. `θ¹..θ^m`, same shape as the weights.
    pub grad_weights: DenseMatrix,
    pub grad_omega: Omega,
}

impl SurvivalExplanation {
    pub fn new(weights: DenseMatrix, omega: Omega) -> Result<Self> {
        if weights.rows() == 0 {
            return Err(CenError::invalid("survival explanation needs m >= 1"));
        }
        Ok(SurvivalExplanation { weights, omega })
    }

    pub fn from_theta(theta: &[f64], steps: usize, d_x: usize, omega: Omega) -> Result<Self> {
        Self::new(DenseMatrix::from_vec(steps, d_x, theta.to_vec())?, omega)
    }

    pub fn steps(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(CenError::shape("survival", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Scores `s(0..=m)` via suffix sums of `xᵀθ^i`.
    pub fn outcome_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(self.scores_unchecked(x))
    }

    fn scores_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let m = self.steps();
        let mut s = vec![0.0; m + 1];
        // s(j) = Σ_{i=j+1}^m xᵀθ^i; row i-1 holds θ^i
        for j in (0..m).rev() {
            s[j] = s[j + 1] + dot(self.weights.row(j), x);
        }
        for (j, sj) in s.iter_mut().enumerate() {
            *sj += self.omega.score(j, m);
        }
        s
    }

    /// `log p(j)` for `j = 0..=m`.
    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.outcome_scores(x)?;
        let z = log_sum_exp_unchecked(&s);
        Ok(s.iter().map(|v| v - z).collect())
    }

    /// Log-likelihood of a censored record at interval `j`: `log Σ_{k=j+1}^m p(k)`,
    /// with `j = m` taken as `log p(m)` (survived past the horizon).
    pub fn censored_logprob(&self, x: &[f64], j: usize) -> Result<f64> {
        let m = self.steps();
        if j > m {
            return Err(CenError::invalid(format!("interval {j} out of range 0..={m}")));
        }
        let s = self.outcome_scores(x)?;
        let z = log_sum_exp_unchecked(&s);
        Ok(log_sum_exp_unchecked(&s[tail_start(j, m)..]) - z)
    }

    /// `S(t_j) = P(T ≥ t_j) = Σ_{k≥j} p(k)` for `j = 0..=m`; `S(t_0) = 1` exactly.
    pub fn survival_curve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p: Vec<f64> = self.log_probs(x)?.into_iter().map(f64::exp).collect();
        Ok(curve_from_probs(&p))
    }

    pub fn predicted_time(&self, x: &[f64], rule: TimeRule) -> Result<usize> {
        let p: Vec<f64> = self.log_probs(x)?.into_iter().map(f64::exp).collect();
        Ok(predicted_interval(&p, rule))
    }

    /// `−log` likelihood of the target and its gradient.
    pub fn nll_grad(&self, x: &[f64], target: SurvivalTarget) -> Result<SurvivalNllGrad> {
        let m = self.steps();
        if target.interval > m {
            return Err(CenError::invalid(format!(
                "target interval {} out of range 0..={m}",
                target.interval
            )));
        }
        self.check_x(x)?;
        let s = self.scores_unchecked(x);
        let z = log_sum_exp_unchecked(&s);
        let p: Vec<f64> = s.iter().map(|v| (v - z).exp()).collect();

        // posterior q over the outcomes compatible with the observation
        let range = observed_range(target, m);
        let zq = log_sum_exp_unchecked(&s[range.clone()]);
        let mut q = vec![0.0; m + 1];
        for k in range {
            q[k] = (s[k] - zq).exp();
        }
        let loss = z - zq;

        // dL/ds_k = p_k − q_k ; ds_k/dθ^i = x·[k < i]
        let mut grad_weights = DenseMatrix::zeros(m, x.len());
        let mut cumulative = 0.0;
        for i in 1..=m {
            cumulative += p[i - 1] - q[i - 1];
            if cumulative != 0.0 {
                crate::numeric::axpy(cumulative, x, grad_weights.row_mut(i - 1));
            }
        }
        let mut grad_omega = [0.0; 3];
        for k in 0..=m {
            let counts = Omega::transition_counts(k, m);
            for (g, c) in grad_omega.iter_mut().zip(counts) {
                *g += (p[k] - q[k]) * c;
            }
        }
        Ok(SurvivalNllGrad {
            loss,
            grad_weights,
            grad_omega: Omega {
                w00: grad_omega[0],
                w01: grad_omega[1],
                w11: grad_omega[2],
            },
        })
    }
}

fn tail_start(j: usize, m: usize) -> usize {
    if j == m {
        m
    } else {
        j + 1
    }
}

fn observed_range(target: SurvivalTarget, m: usize) -> std::ops::RangeInclusive<usize> {
    if target.censored {
        tail_start(target.interval, m)..=m
    } else {
        target.interval..=target.interval
    }
}

/// `S_j = Σ_{k≥j} p_k` with `S_0` pinned to 1.
pub fn curve_from_probs(p: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; p.len()];
    let mut acc = 0.0;
    for j in (0..p.len()).rev() {
        acc += p[j];
        s[j] = acc;
    }
    if let Some(first) = s.first_mut() {
        *first = 1.0;
    }
    // guard against round-off making the curve tick upwards
    for j in 1..s.len() {
        s[j] = s[j].min(s[j - 1]);
    }
    s
}

pub fn predicted_interval(p: &[f64], rule: TimeRule) -> usize {
    match rule {
        TimeRule::Median => {
            let mut acc = 0.0;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if acc >= 0.5 {
                    return j;
                }
            }
            p.len() - 1
        }
        TimeRule::Mean => {
            let mean: f64 = p.iter().enumerate().map(|(j, pj)| j as f64 * pj).sum();
            (mean.round() as usize).min(p.len() - 1)
        }
        TimeRule::Argmax => p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{fd_gradient, relative_error, Rng, DEFAULT_FD_EPS};
    use approx::assert_abs_diff_eq;

    fn lin(rows: &[Vec<f64>], b: Vec<f64>) -> LinearExplanation {
        LinearExplanation::new(DenseMatrix::from_rows(rows).unwrap(), b).unwrap()
    }

    #[test]
    fn linear_predict_examples() {
        let e = lin(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0; 3]);
        for p in e.predict(&[1.0, -4.0]).unwrap() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let e = lin(&[vec![1.0], vec![0.0]], vec![0.0, 0.0]);
        assert_eq!(e.predict(&[0.0]).unwrap(), vec![0.5, 0.5]);
        // logit difference 2 -> 1/(1+e^-2)
        let e = lin(&[vec![0.5], vec![1.5]], vec![0.25, 0.25]);
        let p = e.predict(&[2.0]).unwrap();
        assert_abs_diff_eq!(p[1], 0.8807970779778823, epsilon = 1e-12);
        assert!(e.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn theta_round_trip_and_validation() {
        let e = lin(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![5.0, 6.0]);
        assert_eq!(e.to_theta(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(LinearExplanation::from_theta(&e.to_theta(), 2, 2).unwrap(), e);
        assert!(LinearExplanation::from_theta(&[1.0; 5], 2, 2).is_err());
        assert!(LinearExplanation::new(DenseMatrix::zeros(1, 2), vec![0.0]).is_err());
        assert!(LinearExplanation::new(DenseMatrix::zeros(2, 0), vec![0.0; 2]).is_err());
    }

    #[test]
    fn linear_nll_examples() {
        let e = lin(&[vec![0.0], vec![0.0]], vec![0.0, 0.0]);
        assert_abs_diff_eq!(e.nll_grad(&[3.0], 1).unwrap().loss, 2f64.ln(), epsilon = 1e-15);
        let e = lin(&[vec![0.0], vec![0.0]], vec![-40.0, 40.0]);
        let g = e.nll_grad(&[1.0], 1).unwrap();
        assert!(g.loss < 1e-30);
        assert!(g.grad_theta.iter().all(|v| v.abs() < 1e-30));
        assert!(e.nll_grad(&[1.0], 2).is_err());
    }

    #[test]
    fn linear_nll_grad_matches_fd() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let (k, d) = (2 + rng.below(3), 1 + rng.below(5));
            let theta: Vec<f64> = (0..k * (d + 1)).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let y = rng.below(k);
            let e = LinearExplanation::from_theta(&theta, k, d).unwrap();
            let g = e.nll_grad(&x, y).unwrap();
            let n = fd_gradient(
                |t| Ok(LinearExplanation::from_theta(t, k, d)?.nll_grad(&x, y)?.loss),
                &theta,
                DEFAULT_FD_EPS,
            )
            .unwrap();
            assert!(relative_error(&g.grad_theta, &n) < 1e-5);
        }
    }

    fn surv(rows: &[Vec<f64>]) -> SurvivalExplanation {
        SurvivalExplanation::new(DenseMatrix::from_rows(rows).unwrap(), Omega::default()).unwrap()
    }

    /// m = 2 with xᵀθ¹ = 1, xᵀθ² = 2 (x = [1]).
    fn scored() -> SurvivalExplanation {
        surv(&[vec![1.0], vec![2.0]])
    }

    // e^3, e^2, e^0 normalized
    const SCORED_P: [f64; 3] = [0.7053845126982412, 0.2594964603424191, 0.03511902695933972];

    #[test]
    fn survival_log_probs_examples() {
        let e = surv(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        for lp in e.log_probs(&[1.0, 2.0]).unwrap() {
            assert_abs_diff_eq!(lp.exp(), 1.0 / 3.0, epsilon = 1e-15);
        }
        let e = surv(&[vec![0.0]]);
        assert_eq!(
            e.log_probs(&[5.0]).unwrap().iter().map(|v| v.exp()).collect::<Vec<_>>(),
            vec![0.5, 0.5]
        );
        let p: Vec<f64> = scored().log_probs(&[1.0]).unwrap().iter().map(|v| v.exp()).collect();
        for (a, b) in p.iter().zip(SCORED_P) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn censored_logprob_examples() {
        let e = surv(&[vec![0.0], vec![0.0]]);
        assert_abs_diff_eq!(e.censored_logprob(&[1.0], 0).unwrap(), (2.0f64 / 3.0).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(e.censored_logprob(&[1.0], 1).unwrap(), (1.0f64 / 3.0).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(e.censored_logprob(&[1.0], 2).unwrap(), (1.0f64 / 3.0).ln(), epsilon = 1e-14);
        assert!(e.censored_logprob(&[1.0], 3).is_err());
        assert_abs_diff_eq!(
            scored().censored_logprob(&[1.0], 0).unwrap(),
            (SCORED_P[1] + SCORED_P[2]).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn curve_and_time_examples() {
        let e = surv(&[vec![0.0], vec![0.0]]);
        let s = e.survival_curve(&[1.0]).unwrap();
        assert_eq!(s[0], 1.0);
        assert_abs_diff_eq!(s[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(e.predicted_time(&[1.0], TimeRule::Median).unwrap(), 1);

        let s = scored().survival_curve(&[1.0]).unwrap();
        assert_eq!(s[0], 1.0);
        assert_abs_diff_eq!(s[1], SCORED_P[1] + SCORED_P[2], epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], SCORED_P[2], epsilon = 1e-12);
        assert_eq!(scored().predicted_time(&[1.0], TimeRule::Median).unwrap(), 0);

        let concentrated = surv(&[vec![50.0], vec![0.0]]);
        assert_eq!(concentrated.predicted_time(&[1.0], TimeRule::Median).unwrap(), 0);
        assert_eq!(predicted_interval(&[0.1, 0.2, 0.7], TimeRule::Argmax), 2);
        assert_eq!(predicted_interval(&[0.1, 0.2, 0.7], TimeRule::Mean), 2);
    }

    #[test]
    fn survival_grad_hand_derivation() {
        // θ = 0, m = 1, event in interval 0: d/dθ¹ [log(e^{s0} + e^{s1}) − s0] = (p0 − 1)·x = −x/2
        let e = surv(&[vec![0.0, 0.0]]);
        let x = [2.0, -1.0];
        let g = e.nll_grad(&x, SurvivalTarget::event(0)).unwrap();
        assert_abs_diff_eq!(g.grad_weights.get(0, 0), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.grad_weights.get(0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn survival_grad_vanishes_when_matched() {
        // all mass on outcome 0: large positive scores on every θ^i
        let e = surv(&[vec![40.0], vec![40.0], vec![40.0]]);
        let g = e.nll_grad(&[1.0], SurvivalTarget::event(0)).unwrap();
        assert!(g.loss < 1e-15);
        assert!(g.grad_weights.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn survival_grad_matches_fd() {
        let mut rng = Rng::new(9);
        for trial in 0..40 {
            let m = 1 + rng.below(6);
            let d = 1 + rng.below(4);
            let w: Vec<f64> = (0..m * d).map(|_| 0.7 * rng.normal()).collect();
            let omega = Omega {
                w00: rng.normal(),
                w01: rng.normal(),
                w11: rng.normal(),
            };
            let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let target = SurvivalTarget {
                interval: rng.below(m + 1),
                censored: trial % 2 == 0,
            };
            let e = SurvivalExplanation::from_theta(&w, m, d, omega).unwrap();
            let g = e.nll_grad(&x, target).unwrap();
            let mut params = w.clone();
            params.extend([omega.w00, omega.w01, omega.w11]);
            let n = fd_gradient(
                |p| {
                    let om = Omega {
                        w00: p[m * d],
                        w01: p[m * d + 1],
                        w11: p[m * d + 2],
                    };
                    Ok(SurvivalExplanation::from_theta(&p[..m * d], m, d, om)?
                        .nll_grad(&x, target)?
                        .loss)
                },
                &params,
                DEFAULT_FD_EPS,
            )
            .unwrap();
            let mut analytic = g.grad_weights.as_slice().to_vec();
            analytic.extend([g.grad_omega.w00, g.grad_omega.w01, g.grad_omega.w11]);
            assert!(relative_error(&analytic, &n) < 1e-5, "trial {trial}");
        }
    }

    #[test]
    fn m1_matches_logistic() {
        // p(event in interval 0) = σ(xᵀθ¹)
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let w: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let e = SurvivalExplanation::from_theta(&w, 1, 3, Omega::default()).unwrap();
            let p0 = e.log_probs(&x).unwrap()[0].exp();
            assert_abs_diff_eq!(p0, crate::numeric::sigmoid(dot(&w, &x)), epsilon = 1e-12);
        }
    }

    #[test]
    fn transition_counts_cover_chain() {
        for m in 1..6 {
            for j in 0..=m {
                let c = Omega::transition_counts(j, m);
                assert_eq!(c.iter().sum::<f64>() as usize, m - 1);
            }
        }
    }
}
