//! Local surrogate explanations: perturb around a point, weight samples by a
//! Gaussian kernel and fit a weighted ridge regression to the black box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CenError, Result};
use crate::numeric::{validate_finite, Rng};

/// Regression target derived from the black-box probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateTarget {
    #[default]
    Probability,
    /// `logit(p)` with `p` clamped to `[1e-6, 1 − 1e-6]`.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// Perturb `x` and `c`; the kernel uses both displacements.
    #[default]
    Joint,
    /// Perturb `x` only and query the black box at the original `c`.
    XOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub samples: usize,
    pub scale_x: f64,
    pub scale_c: f64,
    /// `σ` in `exp(−D² / σ²)` with Euclidean `D`.
    pub kernel_width: f64,
    pub ridge: f64,
    pub target: SurrogateTarget,
    pub mode: PerturbationMode,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            samples: 2000,
            scale_x: 0.1,
            scale_c: 0.01,
            kernel_width: 1.0,
            ridge: 0.0,
            target: SurrogateTarget::Probability,
            mode: PerturbationMode::Joint,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self, d_x: usize) -> Result<()> {
        if self.samples < d_x + 1 {
            return Err(CenError::invalid(format!(
                "need at least d_x + 1 = {} samples, got {}",
                d_x + 1,
                self.samples
            )));
        }
        if !(self.scale_x >= 0.0 && self.scale_c >= 0.0) || !self.scale_x.is_finite() || !self.scale_c.is_finite() {
            return Err(CenError::invalid("perturbation scales must be finite and >= 0"));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(CenError::invalid("kernel width must be positive"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(CenError::invalid("ridge must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSample {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    /// Kernel weight, normalized so the weights average to 1.
    pub weight: f64,
}

/// Gaussian perturbations `x' = x + s_x·N(0, I)` (and `c'` likewise in joint mode)
/// weighted by `exp(−(‖x' − x‖² + ‖c' − c‖²)/σ²)`.
pub fn perturb(x: &[f64], c: &[f64], cfg: &PerturbationConfig, rng: &mut Rng) -> Result<Vec<PerturbedSample>> {
    validate_finite(x, "perturbation point x")?;
    validate_finite(c, "perturbation point c")?;
    let sigma2 = cfg.kernel_width * cfg.kernel_width;
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let mut d2 = 0.0;
        let xs: Vec<f64> = x
            .iter()
            .map(|v| {
                let e = cfg.scale_x * rng.normal();
                d2 += e * e;
                v + e
            })
            .collect();
        let cs: Vec<f64> = match cfg.mode {
            PerturbationMode::Joint => c
                .iter()
                .map(|v| {
                    let e = cfg.scale_c * rng.normal();
                    d2 += e * e;
                    v + e
                })
                .collect(),
            PerturbationMode::XOnly => c.to_vec(),
        };
        out.push(PerturbedSample {
            x: xs,
            c: cs,
            weight: (-d2 / sigma2).exp(),
        });
    }
    let mean = out.iter().map(|s| s.weight).sum::<f64>() / out.len().max(1) as f64;
    if mean > 0.0 {
        for s in &mut out {
            s.weight /= mean;
        }
    } else {
        for s in &mut out {
            s.weight = 1.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSurrogate {
    /// Coefficients on `x' − x`.
    pub weights: Vec<f64>,
    /// Fitted target value at the point itself.
    pub intercept: f64,
    /// Weighted coefficient of determination on the perturbation sample.
    pub r2: f64,
    /// `(Σ w)² / Σ w²`.
    pub effective_sample_size: f64,
}

impl LocalSurrogate {
    /// Surrogate output at `x_new` for a surrogate fitted around `x_point`.
    pub fn predict(&self, x_point: &[f64], x_new: &[f64]) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(x_new.iter().zip(x_point))
                .map(|(w, (a, b))| w * (a - b))
                .sum::<f64>()
    }
}

/// Weighted ridge regression of `targets` on the rows of `features`, with an
/// unpenalized intercept.
pub fn fit_weighted(features: &[Vec<f64>], targets: &[f64], weights: &[f64], ridge: f64) -> Result<LocalSurrogate> {
    let n = features.len();
    if n == 0 || targets.len() != n || weights.len() != n {
        return Err(CenError::shape("fit_weighted", n, format!("{} targets, {} weights", targets.len(), weights.len())));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(CenError::invalid("ragged feature rows"));
    }
    validate_finite(targets, "surrogate targets")?;
    let dim = d + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut z = vec![0.0; dim];
    for ((f, &t), &w) in features.iter().zip(targets).zip(weights) {
        z[0] = 1.0;
        z[1..].copy_from_slice(f);
        for a in 0..dim {
            rhs[a] += w * z[a] * t;
            for b in 0..dim {
                gram[(a, b)] += w * z[a] * z[b];
            }
        }
    }
    for a in 1..dim {
        gram[(a, a)] += ridge;
    }
    let scale = (0..dim).map(|a| gram[(a, a)].abs()).fold(0.0, f64::max);
    let chol = gram.clone().cholesky().ok_or(CenError::SingularFit)?;
    let l = chol.l();
    let min_pivot = (0..dim).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
    if !(scale > 0.0) || min_pivot <= 1e-12 * scale {
        return Err(CenError::SingularFit);
    }
    let beta = chol.solve(&rhs);
    let w_sum: f64 = weights.iter().sum();
    let w_sq: f64 = weights.iter().map(|w| w * w).sum();
    let t_mean = targets.iter().zip(weights).map(|(t, w)| t * w).sum::<f64>() / w_sum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((f, &t), &w) in features.iter().zip(targets).zip(weights) {
        let pred = beta[0] + f.iter().zip(beta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>();
        ss_res += w * (t - pred) * (t - pred);
        ss_tot += w * (t - t_mean) * (t - t_mean);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 * w_sum {
        1.0
    } else {
        0.0
    };
    Ok(LocalSurrogate {
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        r2,
        effective_sample_size: w_sum * w_sum / w_sq,
    })
}

pub const LOGIT_CLAMP: f64 = 1e-6;

pub fn clamped_logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Fits a local surrogate to `black_box(x', c') = p(Y = 1 | x', c')` around `(x, c)`.
pub fn fit_surrogate<F>(black_box: F, x: &[f64], c: &[f64], cfg: &PerturbationConfig, rng: &mut Rng) -> Result<LocalSurrogate>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    cfg.validate(x.len())?;
    let samples = perturb(x, c, cfg, rng)?;
    let mut features = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    let mut weights = Vec::with_capacity(samples.len());
    for s in &samples {
        let p = black_box(&s.x, &s.c)?;
        if !p.is_finite() {
            return Err(CenError::invalid("black box returned a non-finite value"));
        }
        targets.push(match cfg.target {
            SurrogateTarget::Probability => p,
            SurrogateTarget::Logit => clamped_logit(p),
        });
        features.push(s.x.iter().zip(x).map(|(a, b)| a - b).collect());
        weights.push(s.weight);
    }
    fit_weighted(&features, &targets, &weights, cfg.ridge)
}

/// `‖â − a‖ / ‖a‖`.
pub fn relative_l2_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sigmoid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_scale_gives_identical_samples() {
        let cfg = PerturbationConfig {
            samples: 5,
            scale_x: 0.0,
            scale_c: 0.0,
            ..Default::default()
        };
        let s = perturb(&[1.0, 2.0], &[3.0], &cfg, &mut Rng::new(1)).unwrap();
        for p in &s {
            assert_eq!(p.x, vec![1.0, 2.0]);
            assert_eq!(p.c, vec![3.0]);
            assert_eq!(p.weight, 1.0);
        }
    }

    #[test]
    fn kernel_weights_match_manual_evaluation() {
        let cfg = PerturbationConfig {
            samples: 5,
            scale_x: 0.5,
            scale_c: 0.0,
            kernel_width: 0.7,
            mode: PerturbationMode::XOnly,
            ..Default::default()
        };
        let x = [0.3, -0.2];
        let a = perturb(&x, &[], &cfg, &mut Rng::new(11)).unwrap();
        let b = perturb(&x, &[], &cfg, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        let raw: Vec<f64> = a
            .iter()
            .map(|s| {
                let d2: f64 = s.x.iter().zip(&x).map(|(p, q)| (p - q) * (p - q)).sum();
                (-d2 / 0.49).exp()
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / 5.0;
        for (s, r) in a.iter().zip(raw) {
            assert_abs_diff_eq!(s.weight, r / mean, epsilon = 1e-14);
        }
        // unnormalized kernel at the point itself
        assert_eq!((-(0.0f64) / 0.49).exp(), 1.0);
    }

    #[test]
    fn exact_linear_logistic_recovery() {
        let theta = [0.8, -1.3, 0.4];
        let b = 0.2;
        let f = |x: &[f64], _: &[f64]| Ok(sigmoid(theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + b));
        let cfg = PerturbationConfig {
            samples: 500,
            scale_x: 1.0,
            kernel_width: 2.0,
            target: SurrogateTarget::Logit,
            mode: PerturbationMode::XOnly,
            ..Default::default()
        };
        let x = [0.1, 0.2, -0.3];
        let s = fit_surrogate(f, &x, &[], &cfg, &mut Rng::new(3)).unwrap();
        for (a, t) in s.weights.iter().zip(theta) {
            assert_abs_diff_eq!(*a, t, epsilon = 1e-6);
        }
        let at_point: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + b;
        assert_abs_diff_eq!(s.intercept, at_point, epsilon = 1e-6);
        assert_abs_diff_eq!(s.r2, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_black_box() {
        let cfg = PerturbationConfig {
            samples: 50,
            target: SurrogateTarget::Logit,
            ..Default::default()
        };
        let s = fit_surrogate(|_, _| Ok(0.3), &[1.0, 1.0], &[0.0], &cfg, &mut Rng::new(4)).unwrap();
        for w in &s.weights {
            assert_abs_diff_eq!(*w, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(s.intercept, (0.3f64 / 0.7).ln(), epsilon = 1e-12);
    }

    #[test]
    fn singular_fit_without_ridge() {
        let cfg = PerturbationConfig {
            samples: 10,
            scale_x: 0.0,
            ..Default::default()
        };
        let r = fit_surrogate(|_, _| Ok(0.5), &[1.0], &[0.0], &cfg, &mut Rng::new(1));
        assert!(matches!(r, Err(CenError::SingularFit)));
        let cfg = PerturbationConfig { ridge: 1.0, ..cfg };
        assert!(fit_surrogate(|_, _| Ok(0.5), &[1.0], &[0.0], &cfg, &mut Rng::new(1)).is_ok());
    }

    #[test]
    fn duplicated_samples_with_halved_weights_match() {
        let mut rng = Rng::new(7);
        let n = 30;
        let f: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.1).collect();
        let a = fit_weighted(&f, &t, &w, 0.3).unwrap();
        let f2: Vec<Vec<f64>> = f.iter().chain(&f).cloned().collect();
        let t2: Vec<f64> = t.iter().chain(&t).copied().collect();
        let w2: Vec<f64> = w.iter().chain(&w).map(|v| v / 2.0).collect();
        let b = fit_weighted(&f2, &t2, &w2, 0.3).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(a.intercept, b.intercept, epsilon = 1e-10);
    }

    #[test]
    fn large_ridge_shrinks_to_zero() {
        let mut rng = Rng::new(8);
        let f: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let t: Vec<f64> = f.iter().map(|r| 3.0 * r[0] - 2.0 * r[1]).collect();
        let w = vec![1.0; 40];
        let mut prev = f64::INFINITY;
        for ridge in [0.0, 1.0, 100.0, 1e4, 1e8] {
            let s = fit_weighted(&f, &t, &w, ridge).unwrap();
            let norm = s.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= prev + 1e-12);
            prev = norm;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn too_few_samples_rejected() {
        let cfg = PerturbationConfig {
            samples: 2,
            ..Default::default()
        };
        assert!(fit_surrogate(|_, _| Ok(0.5), &[1.0, 2.0], &[], &cfg, &mut Rng::new(1)).is_err());
    }
}
