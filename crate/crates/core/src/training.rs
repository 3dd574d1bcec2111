//! Mini-batch optimization with early stopping on validation NLL.

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Dataset, Targets};
use crate::error::{CenError, Result};
use crate::metrics;
use crate::model::{CenModel, Regularization};
use crate::numeric::{Parameters, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    AmsGrad,
    SgdMomentum,
}

/// Which objective the loop minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `cen_nll − λ_H Ĥ` (the entropy term vanishes when `λ_H = 0`).
    #[default]
    Cen,
    /// Mixture of experts over the dictionary atoms.
    Moe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub regularization: Regularization,
    /// Share of the training data held out for validation when no validation set is given.
    pub validation_fraction: f64,
    /// Momentum for `sgd-momentum`.
    pub momentum: f64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            regularization: Regularization::default(),
            validation_fraction: 0.1,
            momentum: 0.9,
            objective: Objective::Cen,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CenError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        let r = &self.regularization;
        for (name, v) in [
            ("l1_theta", r.l1_theta),
            ("l2_theta", r.l2_theta),
            ("l1_dict", r.l1_dict),
            ("l2_dict", r.l2_dict),
            ("entropy_weight", r.entropy_weight),
            ("smoothness", r.smoothness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CenError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, n: usize) -> Self {
        Optimizer {
            kind,
            lr,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            v_max: vec![0.0; n],
        }
    }

    /// In-place update of `params` given `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), vel) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *vel = self.momentum * *vel + g;
                    *p -= self.lr * *vel;
                }
            }
            OptimizerKind::Adam | OptimizerKind::AmsGrad => {
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                let ams = self.kind == OptimizerKind::AmsGrad;
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let v = if ams {
                        self.v_max[i] = self.v_max[i].max(self.v[i]);
                        self.v_max[i]
                    } else {
                        self.v[i]
                    };
                    let m_hat = self.m[i] / c1;
                    let v_hat = v / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    /// Mean batch `Ĥ(Y | θ)` over the epoch when the entropy term was active.
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned (1-based; 0 means the initial weights).
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

impl History {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "val_acc", "entropy"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            out.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.val_acc),
                opt(r.entropy),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean validation NLL (with penalties, without the entropy term) and accuracy when applicable.
pub fn validation_metrics(model: &CenModel, data: &Dataset) -> Result<(f64, Option<f64>)> {
    let idx = data.all_indices();
    let batch = Batch::new(data, &idx)?;
    let loss = model.cen_nll(&batch)?.loss;
    let acc = match &data.targets {
        Targets::Classes(_) => Some(metrics::model_accuracy(model, data)?),
        Targets::Survival(_) => None,
    };
    Ok((loss, acc))
}

/// Trains `model` on `train`, holding out `validation` (or a seeded share of `train`).
///
/// Returns the weights with the lowest validation loss seen at the end of any
/// epoch (or the final weights when there is no validation data).
pub fn train(
    mut model: CenModel,
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(CenModel, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CenError::invalid("empty training set"));
    }
    model.regularization = cfg.regularization;
    let mut rng = Rng::new(cfg.seed);
    let mut split_rng = rng.fork(1);
    let mut dropout_rng = rng.fork(2);
    let held_out;
    let (train, validation) = match validation {
        Some(v) => (std::borrow::Cow::Borrowed(train), Some(v)),
        None if cfg.validation_fraction > 0.0 && train.len() >= 2 => {
            let (t, v) = train.split(cfg.validation_fraction, &mut split_rng);
            held_out = v;
            let v = if held_out.is_empty() { None } else { Some(&held_out) };
            (std::borrow::Cow::Owned(t), v)
        }
        None => (std::borrow::Cow::Borrowed(train), None),
    };
    let train: &Dataset = &train;
    let needs_pairs = cfg.objective == Objective::Cen && cfg.regularization.entropy_weight != 0.0;

    let mut params = model.flatten();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum, params.len());
    let mut history = History::default();
    let mut best = model.clone();
    let mut best_val = match validation {
        Some(v) => Some(validation_metrics(&model, v)?.0),
        None => None,
    };
    history.best_val_loss = best_val;
    let mut since_best = 0;
    let mut order = train.all_indices();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        let mut ent_sum = 0.0;
        let mut ent_count = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            if needs_pairs && chunk.len() < 2 {
                continue;
            }
            let batch = Batch::new(train, chunk)?;
            let result = match cfg.objective {
                Objective::Cen => model.training_objective(&batch, &mut dropout_rng),
                Objective::Moe => model.moe_nll(&batch),
            };
            let lg = match result {
                Ok(lg) => lg,
                Err(CenError::Diverged { detail, .. }) => {
                    return Err(CenError::Diverged {
                        epoch,
                        detail,
                        last_finite: Box::new(model),
                    })
                }
                Err(e) => return Err(e),
            };
            let w = chunk.len() as f64;
            loss_sum += lg.loss * w;
            weight_sum += w;
            if let Some(h) = lg.entropy {
                ent_sum += h;
                ent_count += 1.0;
            }
            let grad = lg.grad.flatten();
            opt.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(CenError::Diverged {
                    epoch,
                    detail: "non-finite parameters after optimizer step".into(),
                    last_finite: Box::new(model),
                });
            }
            model.assign(&params)?;
        }
        let train_loss = if weight_sum > 0.0 { loss_sum / weight_sum } else { f64::NAN };
        let (val_loss, val_acc) = match validation {
            Some(v) => match validation_metrics(&model, v) {
                Ok((l, a)) => (Some(l), a),
                Err(CenError::Diverged { detail, .. }) => {
                    return Err(CenError::Diverged {
                        epoch,
                        detail,
                        last_finite: Box::new(best),
                    })
                }
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            entropy: (ent_count > 0.0).then(|| ent_sum / ent_count),
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        match (val_loss, best_val) {
            (Some(vl), Some(bv)) if vl < bv => {
                best_val = Some(vl);
                best = model.clone();
                history.best_epoch = epoch;
                history.best_val_loss = best_val;
                since_best = 0;
            }
            (Some(_), Some(_)) => {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    log::info!("early stop at epoch {epoch}, best epoch {}", history.best_epoch);
                    break;
                }
            }
            _ => {
                best = model.clone();
                history.best_epoch = epoch;
            }
        }
    }
    Ok((best, history))
}
