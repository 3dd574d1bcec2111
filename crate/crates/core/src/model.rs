//! The contextual explanation network: an encoder maps the context `c` to
//! explanation parameters `θ` (directly, or as attention over a dictionary),
//! and the explanation family turns `θ` and the attributes `x` into a
//! predictive distribution.
//!
//! Training objectives live here as well: the mean negative log-likelihood
//! with penalties on generated `θ` and on the dictionary, the batch estimate
//! of the conditional entropy `H(Y | θ)` that is subtracted from it, and the
//! mixture-of-experts objective that mixes predictions instead of parameters.

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Targets};
use crate::encoders::{
    compose_unchecked, Dictionary, MlpCache, MlpEncoder, RecurrentCache, RecurrentEncoder,
};
use crate::error::{CenError, Result};
use crate::explanations::{
    linear_logits, linear_nll_grad_raw, linear_theta_grad, LinearExplanation, Omega,
    SurvivalExplanation, SurvivalTarget,
};
use crate::numeric::{
    axpy, glorot, log_sum_exp_unchecked, softmax_backward, softmax_unchecked, Parameters, Rng,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Encoder {
    Mlp(MlpEncoder),
    Recurrent(RecurrentEncoder),
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Mlp(e) => e.input_dim(),
            Encoder::Recurrent(e) => e.input_dim(),
        }
    }
}

impl Parameters for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        match self {
            Encoder::Mlp(e) => e.visit(f),
            Encoder::Recurrent(e) => e.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match self {
            Encoder::Mlp(e) => e.visit_mut(f),
            Encoder::Recurrent(e) => e.visit_mut(f),
        }
    }
}

/// Explanation family and the shape of its parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    Linear { classes: usize, attributes: usize },
    Survival { steps: usize, attributes: usize },
}

impl Family {
    /// Length of the flattened `θ`.
    pub fn theta_len(&self) -> usize {
        match *self {
            Family::Linear {
                classes,
                attributes,
            } => LinearExplanation::theta_len(classes, attributes),
            Family::Survival { steps, attributes } => steps * attributes,
        }
    }

    pub fn attributes(&self) -> usize {
        match *self {
            Family::Linear { attributes, .. } | Family::Survival { attributes, .. } => attributes,
        }
    }
}

/// Penalties and the conditional-entropy weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regularization {
    pub l1_theta: f64,
    pub l2_theta: f64,
    pub l1_dict: f64,
    pub l2_dict: f64,
    /// `λ_H`; the training objective is `nll − λ_H · Ĥ(Y | θ)`.
    pub entropy_weight: f64,
    /// `C₂ Σ_t ‖θ^{t+1} − θ^t‖²` for survival explanations.
    pub smoothness: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            l1_theta: 0.0,
            l2_theta: 0.0,
            l1_dict: 0.0,
            l2_dict: 0.0,
            entropy_weight: 0.1,
            smoothness: 0.0,
        }
    }
}

impl Regularization {
    pub fn none() -> Self {
        Regularization {
            entropy_weight: 0.0,
            ..Default::default()
        }
    }
}

/// Per-instance explanation produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Linear(LinearExplanation),
    Survival(SurvivalExplanation),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Class probabilities.
    Classes(Vec<f64>),
    /// Log-probabilities of outcomes `0..=m`.
    Survival(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub prediction: Prediction,
    pub theta: Vec<f64>,
    /// One attention vector (MLP encoder) or one per time step (recurrent); empty without a dictionary.
    pub attention: Vec<Vec<f64>>,
}

/// Objective value with gradients in the layout of the model itself.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// Mean negative log-likelihood, without penalties.
    pub nll: f64,
    /// `Ĥ(Y | θ)` when it was part of the objective.
    pub entropy: Option<f64>,
    pub grad: CenModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenModel {
    pub encoder: Encoder,
    /// Constrained mode when present; otherwise the encoder emits `θ` directly.
    pub dictionary: Option<Dictionary>,
    pub family: Family,
    pub omega: Omega,
    /// `ω` is part of the trainable parameters only when set.
    pub learn_omega: bool,
    pub regularization: Regularization,
}

enum EncCache {
    Mlp(MlpCache),
    Recurrent(RecurrentCache),
}

struct Generated {
    theta: Vec<f64>,
    alphas: Vec<Vec<f64>>,
    cache: EncCache,
}

impl CenModel {
    pub fn new(
        encoder: Encoder,
        dictionary: Option<Dictionary>,
        family: Family,
        regularization: Regularization,
    ) -> Result<Self> {
        let model = CenModel {
            encoder,
            dictionary,
            family,
            omega: Omega::default(),
            learn_omega: false,
            regularization,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.family.theta_len();
        match &self.encoder {
            Encoder::Mlp(e) => {
                MlpEncoder::new(e.layers.clone(), e.dropout)?;
            }
            Encoder::Recurrent(e) => {
                RecurrentEncoder::new(e.cell.clone(), e.head.clone())?;
                if e.head.bias.len() != e.head.weights.rows() {
                    return Err(CenError::shape("recurrent head bias", e.head.weights.rows(), e.head.bias.len()));
                }
            }
        }
        match &self.family {
            Family::Linear {
                classes,
                attributes,
            } => {
                if *classes < 2 || *attributes == 0 {
                    return Err(CenError::invalid("linear family needs >= 2 classes and d_x > 0"));
                }
            }
            Family::Survival { steps, attributes } => {
                if *steps == 0 || *attributes == 0 {
                    return Err(CenError::invalid("survival family needs m >= 1 and d_x > 0"));
                }
            }
        }
        match (&self.encoder, &self.dictionary) {
            (Encoder::Mlp(e), Some(d)) => {
                if e.output_dim() != d.size() {
                    return Err(CenError::shape("encoder output vs dictionary size", d.size(), e.output_dim()));
                }
                if d.atom_dim() != p {
                    return Err(CenError::shape("dictionary atom length", p, d.atom_dim()));
                }
            }
            (Encoder::Mlp(e), None) => {
                if e.output_dim() != p {
                    return Err(CenError::shape("encoder output vs theta length", p, e.output_dim()));
                }
            }
            (Encoder::Recurrent(e), Some(d)) => {
                let Family::Survival { attributes, .. } = self.family else {
                    return Err(CenError::invalid("recurrent encoders generate survival explanations only"));
                };
                if e.atoms() != d.size() {
                    return Err(CenError::shape("recurrent head vs dictionary size", d.size(), e.atoms()));
                }
                if d.atom_dim() != attributes {
                    return Err(CenError::shape("per-step atom length", attributes, d.atom_dim()));
                }
            }
            (Encoder::Recurrent(_), None) => {
                return Err(CenError::invalid("recurrent encoder requires a dictionary"));
            }
        }
        Ok(())
    }

    pub fn context_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn attribute_dim(&self) -> usize {
        self.family.attributes()
    }

    /// Copy with every trainable value set to zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> CenModel {
        let mut z = self.clone();
        z.encoder.fill(0.0);
        if let Some(d) = &mut z.dictionary {
            d.fill(0.0);
        }
        z.omega = Omega::default();
        z
    }

    fn check_inputs(&self, c: &[f64], x: &[f64]) -> Result<()> {
        if c.len() != self.context_dim() {
            return Err(CenError::shape("cen_forward context", self.context_dim(), c.len()));
        }
        if x.len() != self.attribute_dim() {
            return Err(CenError::shape("cen_forward attributes", self.attribute_dim(), x.len()));
        }
        Ok(())
    }

    fn generate(&self, c: &[f64], rng: Option<&mut Rng>) -> Result<Generated> {
        match (&self.encoder, &self.dictionary) {
            (Encoder::Mlp(e), dict) => {
                let cache = e.forward_cached(c, rng)?;
                let (theta, alphas) = match dict {
                    Some(d) => {
                        let alpha = softmax_unchecked(&cache.output);
                        (compose_unchecked(&alpha, d), vec![alpha])
                    }
                    None => (cache.output.clone(), Vec::new()),
                };
                Ok(Generated {
                    theta,
                    alphas,
                    cache: EncCache::Mlp(cache),
                })
            }
            (Encoder::Recurrent(e), Some(d)) => {
                let Family::Survival { steps, .. } = self.family else {
                    unreachable!("validated at construction")
                };
                let cache = e.unroll_cached(c, steps)?;
                let mut theta = Vec::with_capacity(self.family.theta_len());
                for a in &cache.alphas {
                    theta.extend(compose_unchecked(a, d));
                }
                Ok(Generated {
                    theta,
                    alphas: cache.alphas.clone(),
                    cache: EncCache::Recurrent(cache),
                })
            }
            (Encoder::Recurrent(_), None) => Err(CenError::invalid("recurrent encoder requires a dictionary")),
        }
    }

    /// Backpropagates `dL/dθ` into encoder and dictionary gradients.
    fn backprop_theta(&self, c: &[f64], gen: &Generated, d_theta: &[f64], grad: &mut CenModel) {
        match (&self.encoder, &gen.cache, &mut grad.encoder) {
            (Encoder::Mlp(e), EncCache::Mlp(cache), Encoder::Mlp(ge)) => match &self.dictionary {
                Some(d) => {
                    let alpha = &gen.alphas[0];
                    let gd = grad.dictionary.as_mut().expect("gradient mirrors model");
                    gd.atoms.add_outer_unchecked(1.0, alpha, d_theta);
                    let d_alpha = d.atoms.matvec_unchecked(d_theta);
                    let d_logits = softmax_backward(alpha, &d_alpha);
                    e.backward(cache, &d_logits, ge);
                }
                None => e.backward(cache, d_theta, ge),
            },
            (Encoder::Recurrent(e), EncCache::Recurrent(cache), Encoder::Recurrent(ge)) => {
                let d = self.dictionary.as_ref().expect("validated");
                let gd = grad.dictionary.as_mut().expect("gradient mirrors model");
                let width = d.atom_dim();
                let mut d_alphas = Vec::with_capacity(gen.alphas.len());
                for (t, alpha) in gen.alphas.iter().enumerate() {
                    let dt = &d_theta[t * width..(t + 1) * width];
                    gd.atoms.add_outer_unchecked(1.0, alpha, dt);
                    d_alphas.push(d.atoms.matvec_unchecked(dt));
                }
                e.backward(c, cache, &d_alphas, ge);
            }
            _ => unreachable!("gradient accumulator mirrors the model"),
        }
    }

    /// Explanation parameters `θ = φ(c)` and the attention used to build them.
    pub fn generate_theta(&self, c: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if c.len() != self.context_dim() {
            return Err(CenError::shape("generate_theta", self.context_dim(), c.len()));
        }
        let g = self.generate(c, None)?;
        Ok((g.theta, g.alphas))
    }

    pub fn explanation(&self, c: &[f64]) -> Result<Explanation> {
        let (theta, _) = self.generate_theta(c)?;
        self.explanation_from_theta(&theta)
    }

    pub fn explanation_from_theta(&self, theta: &[f64]) -> Result<Explanation> {
        Ok(match self.family {
            Family::Linear {
                classes,
                attributes,
            } => Explanation::Linear(LinearExplanation::from_theta(theta, classes, attributes)?),
            Family::Survival { steps, attributes } => Explanation::Survival(
                SurvivalExplanation::from_theta(theta, steps, attributes, self.omega)?,
            ),
        })
    }

    /// Single deterministic forward pass.
    pub fn forward(&self, c: &[f64], x: &[f64]) -> Result<Forward> {
        self.check_inputs(c, x)?;
        let g = self.generate(c, None)?;
        let prediction = match self.explanation_from_theta(&g.theta)? {
            Explanation::Linear(e) => Prediction::Classes(e.predict(x)?),
            Explanation::Survival(e) => Prediction::Survival(e.log_probs(x)?),
        };
        Ok(Forward {
            prediction,
            theta: g.theta,
            attention: g.alphas,
        })
    }

    /// Class probabilities (linear family only).
    pub fn predict_proba(&self, c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        match self.forward(c, x)?.prediction {
            Prediction::Classes(p) => Ok(p),
            Prediction::Survival(_) => Err(CenError::invalid("predict_proba needs the linear family")),
        }
    }

    fn theta_penalty(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let r = &self.regularization;
        let mut pen = 0.0;
        let mut g = grad;
        if r.l2_theta != 0.0 || r.l1_theta != 0.0 {
            for (i, t) in theta.iter().enumerate() {
                pen += r.l2_theta * t * t + r.l1_theta * t.abs();
                if let Some(g) = g.as_deref_mut() {
                    g[i] += 2.0 * r.l2_theta * t + r.l1_theta * sign(*t);
                }
            }
        }
        if let (Family::Survival { steps, attributes }, true) = (self.family, r.smoothness != 0.0) {
            for t in 0..steps.saturating_sub(1) {
                for j in 0..attributes {
                    let a = t * attributes + j;
                    let b = a + attributes;
                    let diff = theta[b] - theta[a];
                    pen += r.smoothness * diff * diff;
                    if let Some(g) = g.as_deref_mut() {
                        g[b] += 2.0 * r.smoothness * diff;
                        g[a] -= 2.0 * r.smoothness * diff;
                    }
                }
            }
        }
        pen
    }

    fn dictionary_penalty(&self, grad: Option<&mut CenModel>) -> f64 {
        let r = &self.regularization;
        let Some(d) = &self.dictionary else { return 0.0 };
        if r.l1_dict == 0.0 && r.l2_dict == 0.0 {
            return 0.0;
        }
        let atoms = d.atoms.as_slice();
        let pen = atoms
            .iter()
            .map(|a| r.l2_dict * a * a + r.l1_dict * a.abs())
            .sum();
        if let Some(g) = grad {
            let gd = g.dictionary.as_mut().expect("gradient mirrors model");
            for (gi, a) in gd.atoms.as_mut_slice().iter_mut().zip(atoms) {
                *gi += 2.0 * r.l2_dict * a + r.l1_dict * sign(*a);
            }
        }
        pen
    }

    fn sample_nll(&self, theta: &[f64], x: &[f64], target: TargetRef) -> Result<(f64, Vec<f64>, Option<Omega>)> {
        match (self.family, target) {
            (Family::Linear { classes, attributes }, TargetRef::Class(y)) => {
                if y >= classes {
                    return Err(CenError::invalid(format!("class {y} out of range for {classes} classes")));
                }
                let split = classes * attributes;
                let logits = linear_logits(&theta[..split], &theta[split..], x);
                let g = linear_nll_grad_raw(&logits, x, y);
                Ok((g.loss, g.grad_theta, None))
            }
            (Family::Survival { steps, attributes }, TargetRef::Survival(t)) => {
                let e = SurvivalExplanation::from_theta(theta, steps, attributes, self.omega)?;
                let g = e.nll_grad(x, t)?;
                Ok((g.loss, g.grad_weights.into_vec(), Some(g.grad_omega)))
            }
            _ => Err(CenError::invalid("targets do not match the explanation family")),
        }
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(CenError::invalid("empty batch"));
        }
        let data = batch.data;
        if data.context_dim() != self.context_dim() {
            return Err(CenError::shape("batch contexts", self.context_dim(), data.context_dim()));
        }
        if data.attribute_dim() != self.attribute_dim() {
            return Err(CenError::shape("batch attributes", self.attribute_dim(), data.attribute_dim()));
        }
        Ok(())
    }

    /// Mean `−log p(y|x, φ(c))` plus `θ` and dictionary penalties, with gradients.
    pub fn cen_nll(&self, batch: &Batch<'_>) -> Result<LossGrad> {
        self.objective(batch, 0.0, None)
    }

    /// `cen_nll − λ_H · Ĥ(Y | θ)` with `λ_H` from the model's regularization.
    pub fn cen_regularized_loss(&self, batch: &Batch<'_>) -> Result<LossGrad> {
        self.objective(batch, self.regularization.entropy_weight, None)
    }

    /// Training-mode objective: dropout driven by `rng`.
    pub fn training_objective(&self, batch: &Batch<'_>, rng: &mut Rng) -> Result<LossGrad> {
        self.objective(batch, self.regularization.entropy_weight, Some(rng))
    }

    fn objective(&self, batch: &Batch<'_>, entropy_weight: f64, mut rng: Option<&mut Rng>) -> Result<LossGrad> {
        self.check_batch(batch)?;
        if entropy_weight != 0.0 {
            if let Family::Survival { .. } = self.family {
                return Err(CenError::Unimplemented(
                    "conditional entropy regularization for survival explanations".into(),
                ));
            }
            if batch.len() < 2 {
                return Err(CenError::invalid("entropy regularization needs a batch of at least 2"));
            }
        }
        let data = batch.data;
        let n = batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut gens = Vec::with_capacity(batch.len());
        let mut d_thetas = Vec::with_capacity(batch.len());
        let mut nll = 0.0;
        let mut pen = 0.0;
        let mut d_omega = [0.0; 3];
        for &i in batch.indices {
            let c = data.contexts.row(i);
            let x = data.attributes.row(i);
            let g = self.generate(c, rng.as_deref_mut())?;
            let (loss, mut d_theta, g_omega) = self.sample_nll(&g.theta, x, target_at(&data.targets, i))?;
            nll += loss;
            pen += self.theta_penalty(&g.theta, Some(&mut d_theta));
            if let Some(go) = g_omega {
                d_omega[0] += go.w00;
                d_omega[1] += go.w01;
                d_omega[2] += go.w11;
            }
            d_thetas.push(d_theta);
            gens.push(g);
        }
        for d in &mut d_thetas {
            for v in d.iter_mut() {
                *v /= n;
            }
        }
        let mut entropy = None;
        if entropy_weight != 0.0 {
            let thetas: Vec<&[f64]> = gens.iter().map(|g| g.theta.as_slice()).collect();
            let (h, dh) = self.entropy_with_grad(&thetas, batch, true)?;
            for (d, dhi) in d_thetas.iter_mut().zip(dh) {
                axpy(-entropy_weight, &dhi, d);
            }
            entropy = Some(h);
        }
        for ((&i, g), d) in batch.indices.iter().zip(&gens).zip(&d_thetas) {
            self.backprop_theta(data.contexts.row(i), g, d, &mut grad);
        }
        if self.learn_omega {
            grad.omega = Omega {
                w00: d_omega[0] / n,
                w01: d_omega[1] / n,
                w11: d_omega[2] / n,
            };
        }
        let dict_pen = self.dictionary_penalty(Some(&mut grad));
        let mean_nll = nll / n;
        let loss = mean_nll + pen / n + dict_pen - entropy_weight * entropy.unwrap_or(0.0);
        if !loss.is_finite() {
            return Err(CenError::Diverged {
                epoch: 0,
                detail: format!("non-finite objective (nll = {mean_nll}, penalty = {})", pen / n + dict_pen),
                last_finite: Box::new(self.clone()),
            });
        }
        Ok(LossGrad {
            loss,
            nll: mean_nll,
            entropy,
            grad,
        })
    }

    /// Objective value only, evaluated deterministically (used by finite-difference checks).
    pub fn objective_value(&self, batch: &Batch<'_>, entropy_weight: f64) -> Result<f64> {
        Ok(self.objective(batch, entropy_weight, None)?.loss)
    }

    /// Batch estimate of `H(Y | θ)`:
    /// `Ĥ = −(1/|B|) Σ_i Σ_y p(y|x_i, θ_i) · log[(1/|B|) Σ_j p(y|x_j, θ_i)]`, in nats.
    pub fn entropy_estimate(&self, batch: &Batch<'_>) -> Result<f64> {
        self.check_batch(batch)?;
        if let Family::Survival { .. } = self.family {
            return Err(CenError::Unimplemented(
                "conditional entropy estimate for survival explanations".into(),
            ));
        }
        if batch.len() < 2 {
            return Err(CenError::invalid("entropy_estimate needs a batch of at least 2"));
        }
        let thetas: Vec<Vec<f64>> = batch
            .indices
            .iter()
            .map(|&i| self.generate(batch.data.contexts.row(i), None).map(|g| g.theta))
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
        Ok(self.entropy_with_grad(&refs, batch, false)?.0)
    }

    /// `Ĥ` and (optionally) `dĤ/dθ_i` for every batch member.
    fn entropy_with_grad(&self, thetas: &[&[f64]], batch: &Batch<'_>, want_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let Family::Linear { classes, attributes } = self.family else {
            return Err(CenError::Unimplemented("entropy for survival explanations".into()));
        };
        let split = classes * attributes;
        let b = batch.len();
        let bf = b as f64;
        let xs: Vec<&[f64]> = batch.indices.iter().map(|&j| batch.data.attributes.row(j)).collect();
        let mut h = 0.0;
        let mut grads = Vec::with_capacity(if want_grad { b } else { 0 });
        for (i, theta) in thetas.iter().enumerate() {
            let (w, bias) = theta.split_at(split);
            let probs: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| softmax_unchecked(&linear_logits(w, bias, x)))
                .collect();
            let mut mean = vec![0.0; classes];
            for p in &probs {
                axpy(1.0 / bf, p, &mut mean);
            }
            let own = &probs[i];
            for y in 0..classes {
                if own[y] > 0.0 {
                    h -= own[y] * mean[y].ln() / bf;
                }
            }
            if !want_grad {
                continue;
            }
            // ratio[y] = p_ii(y) / p̄_i(y) (0 where p_ii(y) = 0)
            let ratio: Vec<f64> = (0..classes)
                .map(|y| if own[y] > 0.0 { own[y] / mean[y] } else { 0.0 })
                .collect();
            let mut d_theta = vec![0.0; theta.len()];
            for (j, p) in probs.iter().enumerate() {
                let mut g: Vec<f64> = ratio.iter().map(|r| -r / (bf * bf)).collect();
                if j == i {
                    for y in 0..classes {
                        g[y] -= mean[y].max(f64::MIN_POSITIVE).ln() / bf;
                    }
                }
                let dz = softmax_backward(p, &g);
                axpy(1.0, &linear_theta_grad(&dz, xs[j]), &mut d_theta);
            }
            grads.push(d_theta);
        }
        Ok((h, grads))
    }

    /// Mixture-of-experts objective: `−(1/|B|) Σ_i log Σ_k α_k(c_i) p(y_i | x_i, θ_k)`,
    /// plus the attention-weighted `θ` penalty and the dictionary penalty.
    pub fn moe_nll(&self, batch: &Batch<'_>) -> Result<LossGrad> {
        self.check_batch(batch)?;
        let (Encoder::Mlp(enc), Some(dict), Family::Linear { classes, attributes }) =
            (&self.encoder, &self.dictionary, self.family)
        else {
            return Err(CenError::invalid(
                "moe_nll needs an MLP gate, a dictionary and the linear family",
            ));
        };
        let Targets::Classes(labels) = &batch.data.targets else {
            return Err(CenError::invalid("moe_nll needs class targets"));
        };
        let data = batch.data;
        let n = batch.len() as f64;
        let k_atoms = dict.size();
        let split = classes * attributes;
        let mut grad = self.zeros_like();
        let mut nll = 0.0;
        let mut pen_total = 0.0;
        for &i in batch.indices {
            let c = data.contexts.row(i);
            let x = data.attributes.row(i);
            let y = labels[i];
            if y >= classes {
                return Err(CenError::invalid(format!("class {y} out of range")));
            }
            let cache = enc.forward_cached(c, None)?;
            let alpha = softmax_unchecked(&cache.output);
            let mut log_terms = Vec::with_capacity(k_atoms);
            let mut expert = Vec::with_capacity(k_atoms);
            let mut pens = Vec::with_capacity(k_atoms);
            for k in 0..k_atoms {
                let theta = dict.atom(k);
                let logits = linear_logits(&theta[..split], &theta[split..], x);
                let g = linear_nll_grad_raw(&logits, x, y);
                log_terms.push(alpha[k].ln() - g.loss);
                let mut d_pen = vec![0.0; theta.len()];
                let pen = self.theta_penalty(theta, Some(&mut d_pen));
                pens.push((pen, d_pen));
                expert.push(g);
            }
            let log_mix = log_sum_exp_unchecked(&log_terms);
            nll -= log_mix;
            // responsibilities r_k = α_k p_k / Σ α p
            let resp: Vec<f64> = log_terms.iter().map(|l| (l - log_mix).exp()).collect();
            let gd = grad.dictionary.as_mut().expect("gradient mirrors model");
            let mut d_alpha = vec![0.0; k_atoms];
            for k in 0..k_atoms {
                let (pen, d_pen) = &pens[k];
                pen_total += alpha[k] * pen;
                d_alpha[k] = *pen;
                let row = gd.atoms.row_mut(k);
                axpy(resp[k] / n, &expert[k].grad_theta, row);
                axpy(alpha[k] / n, d_pen, row);
            }
            // d(−log mix)/d logits = α − r ; penalty adds softmax_backward(α, pen_k)
            let mut d_logits: Vec<f64> = alpha.iter().zip(&resp).map(|(a, r)| a - r).collect();
            axpy(1.0, &softmax_backward(&alpha, &d_alpha), &mut d_logits);
            for v in &mut d_logits {
                *v /= n;
            }
            let Encoder::Mlp(ge) = &mut grad.encoder else { unreachable!() };
            enc.backward(&cache, &d_logits, ge);
        }
        let dict_pen = self.dictionary_penalty(Some(&mut grad));
        let loss = nll / n + pen_total / n + dict_pen;
        if !loss.is_finite() {
            return Err(CenError::Diverged {
                epoch: 0,
                detail: "non-finite mixture-of-experts objective".into(),
                last_finite: Box::new(self.clone()),
            });
        }
        Ok(LossGrad {
            loss,
            nll: nll / n,
            entropy: None,
            grad,
        })
    }

    /// Mixture-of-experts predictive distribution `Σ_k α_k(c) p(y | x, θ_k)`.
    pub fn moe_predict(&self, c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(c, x)?;
        let (Encoder::Mlp(enc), Some(dict), Family::Linear { classes, attributes }) =
            (&self.encoder, &self.dictionary, self.family)
        else {
            return Err(CenError::invalid("moe_predict needs an MLP gate, a dictionary and the linear family"));
        };
        let alpha = softmax_unchecked(&enc.forward(c)?);
        let split = classes * attributes;
        let mut out = vec![0.0; classes];
        for (k, a) in alpha.iter().enumerate() {
            let theta = dict.atom(k);
            let p = softmax_unchecked(&linear_logits(&theta[..split], &theta[split..], x));
            axpy(*a, &p, &mut out);
        }
        Ok(out)
    }
}

impl Parameters for CenModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        if let Some(d) = &self.dictionary {
            d.visit(f);
        }
        if self.learn_omega {
            self.omega.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        if let Some(d) = &mut self.dictionary {
            d.visit_mut(f);
        }
        if self.learn_omega {
            self.omega.visit_mut(f);
        }
    }
}

#[derive(Clone, Copy)]
enum TargetRef {
    Class(usize),
    Survival(SurvivalTarget),
}

fn target_at(t: &Targets, i: usize) -> TargetRef {
    match t {
        Targets::Classes(v) => TargetRef::Class(v[i]),
        Targets::Survival(v) => TargetRef::Survival(v[i]),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Serializable description of a model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: FamilySpec,
    #[serde(default)]
    pub encoder: EncoderSpec,
    /// Dictionary size `K`; `None` selects the unconstrained (direct-output) encoder.
    #[serde(default)]
    pub dictionary_size: Option<usize>,
    #[serde(default)]
    pub learn_omega: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    Linear { classes: usize },
    Survival { steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EncoderSpec {
    Mlp {
        #[serde(default)]
        hidden: Vec<usize>,
        #[serde(default)]
        dropout: f64,
    },
    Recurrent {
        hidden: usize,
    },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Mlp {
            hidden: vec![16],
            dropout: 0.0,
        }
    }
}

impl ModelSpec {
    pub fn family(&self, attributes: usize) -> Family {
        match self.family {
            FamilySpec::Linear { classes } => Family::Linear {
                classes,
                attributes,
            },
            FamilySpec::Survival { steps } => Family::Survival { steps, attributes },
        }
    }

    /// Glorot-initialized model for the given input dimensions.
    pub fn build(
        &self,
        context_dim: usize,
        attribute_dim: usize,
        regularization: Regularization,
        rng: &mut Rng,
    ) -> Result<CenModel> {
        let family = self.family(attribute_dim);
        let p = family.theta_len();
        let (encoder, dictionary) = match (&self.encoder, self.dictionary_size) {
            (EncoderSpec::Mlp { hidden, dropout }, k) => {
                let out = k.unwrap_or(p);
                let mut sizes = vec![context_dim];
                sizes.extend(hidden);
                sizes.push(out);
                let enc = MlpEncoder::glorot(&sizes, *dropout, rng)?;
                let dict = match k {
                    Some(0) => return Err(CenError::Config("dictionary_size must be >= 1".into())),
                    Some(k) => Some(Dictionary::new(glorot(k, p, rng))?),
                    None => None,
                };
                (Encoder::Mlp(enc), dict)
            }
            (EncoderSpec::Recurrent { hidden }, Some(k)) if k >= 1 => {
                let enc = RecurrentEncoder::glorot(context_dim, *hidden, k, rng);
                let dict = Dictionary::new(glorot(k, attribute_dim, rng))?;
                (Encoder::Recurrent(enc), Some(dict))
            }
            (EncoderSpec::Recurrent { .. }, _) => {
                return Err(CenError::Config("recurrent encoder requires dictionary_size >= 1".into()))
            }
        };
        let mut model = CenModel::new(encoder, dictionary, family, regularization)?;
        model.learn_omega = self.learn_omega;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::encoders::DenseLayer;
    use crate::numeric::{fd_gradient, relative_error, DenseMatrix, DEFAULT_FD_EPS};
    use approx::assert_abs_diff_eq;

    fn linear_spec(k: Option<usize>, classes: usize, hidden: Vec<usize>) -> ModelSpec {
        ModelSpec {
            family: FamilySpec::Linear { classes },
            encoder: EncoderSpec::Mlp {
                hidden,
                dropout: 0.0,
            },
            dictionary_size: k,
            learn_omega: false,
        }
    }

    fn random_data(rng: &mut Rng, n: usize, dc: usize, dx: usize, classes: usize) -> Dataset {
        let c = DenseMatrix::from_vec(n, dc, (0..n * dc).map(|_| rng.normal()).collect()).unwrap();
        let x = DenseMatrix::from_vec(n, dx, (0..n * dx).map(|_| rng.normal()).collect()).unwrap();
        let y = (0..n).map(|_| rng.below(classes)).collect();
        Dataset::new(c, x, Targets::Classes(y)).unwrap()
    }

    fn fd_check(model: &CenModel, batch: &Batch<'_>, lambda: f64, analytic: &CenModel) -> f64 {
        let numeric = fd_gradient(
            |p| {
                let mut m = model.clone();
                m.assign(p)?;
                m.objective_value(batch, lambda)
            },
            &model.flatten(),
            DEFAULT_FD_EPS,
        )
        .unwrap();
        relative_error(&analytic.flatten(), &numeric)
    }

    #[test]
    fn k1_model_is_constant_linear_model() {
        let mut rng = Rng::new(3);
        let model = linear_spec(Some(1), 2, vec![4])
            .build(3, 2, Regularization::none(), &mut rng)
            .unwrap();
        let atom = model.dictionary.as_ref().unwrap().atom(0).to_vec();
        let plain = LinearExplanation::from_theta(&atom, 2, 2).unwrap();
        for _ in 0..10 {
            let c: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let x: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
            let f = model.forward(&c, &x).unwrap();
            assert_eq!(f.theta, atom);
            assert_eq!(f.prediction, Prediction::Classes(plain.predict(&x).unwrap()));
        }
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let mut model = linear_spec(Some(3), 2, vec![4])
            .build(3, 2, Regularization::none(), &mut Rng::new(1))
            .unwrap();
        model.fill(0.0);
        let p = model.predict_proba(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_matches_module_composition() {
        let mut rng = Rng::new(17);
        let model = linear_spec(Some(2), 2, vec![5])
            .build(3, 2, Regularization::none(), &mut rng)
            .unwrap();
        let c = [0.2, -0.7, 1.1];
        let x = [0.5, -1.5];
        let f = model.forward(&c, &x).unwrap();
        let Encoder::Mlp(enc) = &model.encoder else { panic!() };
        let alpha = crate::encoders::Attention::from_logits(&enc.forward(&c).unwrap()).unwrap();
        let theta = crate::encoders::attention_compose(&alpha, model.dictionary.as_ref().unwrap()).unwrap();
        let p = LinearExplanation::from_theta(&theta, 2, 2).unwrap().predict(&x).unwrap();
        assert_eq!(f.theta, theta);
        assert_eq!(f.attention[0], alpha.as_slice());
        let Prediction::Classes(q) = f.prediction else { panic!() };
        for (a, b) in p.iter().zip(q) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(model.forward(&c, &[1.0]).is_err());
        assert!(model.forward(&[1.0], &x).is_err());
    }

    #[test]
    fn uniform_model_loss_is_log2() {
        let mut rng = Rng::new(2);
        let mut model = linear_spec(Some(2), 2, vec![3])
            .build(2, 2, Regularization::none(), &mut rng)
            .unwrap();
        model.fill(0.0);
        let data = random_data(&mut rng, 6, 2, 2, 2);
        let idx = data.all_indices();
        let batch = Batch::new(&data, &idx).unwrap();
        assert_abs_diff_eq!(model.cen_nll(&batch).unwrap().loss, 2f64.ln(), epsilon = 1e-15);
        model.regularization.entropy_weight = 1.0;
        assert_abs_diff_eq!(model.cen_regularized_loss(&batch).unwrap().loss, 0.0, epsilon = 1e-15);
        model.regularization.entropy_weight = 0.0;
        assert_eq!(
            model.cen_regularized_loss(&batch).unwrap().loss,
            model.cen_nll(&batch).unwrap().loss
        );
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let enc = MlpEncoder::new(
            vec![DenseLayer::new(DenseMatrix::zeros(2, 1), vec![0.0, 0.0]).unwrap()],
            0.0,
        )
        .unwrap();
        let dict = Dictionary::new(
            DenseMatrix::from_rows(&[vec![0.0, 0.0, -40.0, 40.0], vec![0.0, 0.0, -40.0, 40.0]]).unwrap(),
        )
        .unwrap();
        let model = CenModel::new(
            Encoder::Mlp(enc),
            Some(dict),
            Family::Linear { classes: 2, attributes: 1 },
            Regularization::none(),
        )
        .unwrap();
        let data = Dataset::new(
            DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![2.0]]).unwrap(),
            Targets::Classes(vec![1]),
        )
        .unwrap();
        let batch = Batch::new(&data, &[0]).unwrap();
        assert!(model.cen_nll(&batch).unwrap().loss < 1e-30);
    }

    #[test]
    fn construction_rejects_mismatched_shapes() {
        let mut rng = Rng::new(1);
        let enc = MlpEncoder::glorot(&[3, 4], 0.0, &mut rng).unwrap();
        let dict = Dictionary::random(3, 6, 0.1, &mut rng);
        let fam = Family::Linear { classes: 2, attributes: 2 };
        assert!(CenModel::new(Encoder::Mlp(enc.clone()), Some(dict), fam, Regularization::none()).is_err());
        assert!(CenModel::new(Encoder::Mlp(enc), None, fam, Regularization::none()).is_err());
        let rec = RecurrentEncoder::glorot(3, 4, 2, &mut rng);
        let d = Dictionary::random(2, 6, 0.1, &mut rng);
        assert!(CenModel::new(Encoder::Recurrent(rec.clone()), Some(d), fam, Regularization::none()).is_err());
        assert!(CenModel::new(
            Encoder::Recurrent(rec),
            None,
            Family::Survival { steps: 3, attributes: 2 },
            Regularization::none()
        )
        .is_err());
    }

    #[test]
    fn entropy_examples() {
        // zero model: every p = [0.5, 0.5]
        let mut rng = Rng::new(5);
        let mut model = linear_spec(Some(2), 2, vec![])
            .build(2, 2, Regularization::none(), &mut rng)
            .unwrap();
        model.fill(0.0);
        let data = random_data(&mut rng, 5, 2, 2, 2);
        let idx = data.all_indices();
        let batch = Batch::new(&data, &idx).unwrap();
        assert_abs_diff_eq!(model.entropy_estimate(&batch).unwrap(), 2f64.ln(), epsilon = 1e-15);

        // p = [0.9, 0.1] under both θ's for both x's: bias-only atoms with logit gap ln 9
        let mut m2 = model.clone();
        let gap = 9f64.ln();
        m2.dictionary = Some(
            Dictionary::new(
                DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0, 0.0, gap, 0.0], vec![0.0, 0.0, 0.0, 0.0, gap, 0.0]])
                    .unwrap(),
            )
            .unwrap(),
        );
        let two = Batch::new(&data, &idx[..2]).unwrap();
        let expected = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert_abs_diff_eq!(m2.entropy_estimate(&two).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.3250829733914482, epsilon = 1e-15);

        // deterministic identical predictions -> 0
        let mut m3 = model.clone();
        m3.dictionary = Some(
            Dictionary::new(
                DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0, 0.0, 800.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 800.0, 0.0]])
                    .unwrap(),
            )
            .unwrap(),
        );
        assert_eq!(m3.entropy_estimate(&batch).unwrap(), 0.0);

        assert!(model.entropy_estimate(&Batch::new(&data, &idx[..1]).unwrap()).is_err());
    }

    #[test]
    fn entropy_is_permutation_invariant() {
        let mut rng = Rng::new(8);
        let model = linear_spec(Some(3), 3, vec![4])
            .build(3, 2, Regularization::none(), &mut rng)
            .unwrap();
        let data = random_data(&mut rng, 9, 3, 2, 3);
        let idx = data.all_indices();
        let mut perm = idx.clone();
        rng.shuffle(&mut perm);
        let a = model.entropy_estimate(&Batch::new(&data, &idx).unwrap()).unwrap();
        let b = model.entropy_estimate(&Batch::new(&data, &perm).unwrap()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn survival_entropy_is_unimplemented() {
        let spec = ModelSpec {
            family: FamilySpec::Survival { steps: 3 },
            encoder: EncoderSpec::default(),
            dictionary_size: Some(2),
            learn_omega: false,
        };
        let mut rng = Rng::new(1);
        let model = spec.build(2, 2, Regularization::default(), &mut rng).unwrap();
        let c = DenseMatrix::from_vec(2, 2, vec![0.0; 4]).unwrap();
        let data = Dataset::new(
            c.clone(),
            c,
            Targets::Survival(vec![SurvivalTarget::event(0), SurvivalTarget::censored(1)]),
        )
        .unwrap();
        let batch = Batch::new(&data, &[0, 1]).unwrap();
        assert!(matches!(model.entropy_estimate(&batch), Err(CenError::Unimplemented(_))));
        assert!(matches!(model.cen_regularized_loss(&batch), Err(CenError::Unimplemented(_))));
        assert!(model.cen_nll(&batch).is_ok());
    }

    #[test]
    fn regularized_gradient_matches_fd() {
        let mut rng = Rng::new(40);
        for trial in 0..10 {
            let reg = Regularization {
                l1_theta: 0.01,
                l2_theta: 0.05,
                l1_dict: 0.02,
                l2_dict: 0.03,
                entropy_weight: 0.7,
                smoothness: 0.0,
            };
            let k = 1 + rng.below(4);
            let model = linear_spec(Some(k), 2 + trial % 2, vec![4])
                .build(3, 2, reg, &mut rng)
                .unwrap();
            let data = random_data(&mut rng, 5, 3, 2, 2 + trial % 2);
            let idx = data.all_indices();
            let batch = Batch::new(&data, &idx).unwrap();
            let lg = model.cen_regularized_loss(&batch).unwrap();
            assert!(fd_check(&model, &batch, reg.entropy_weight, &lg.grad) < 1e-5);
        }
    }

    #[test]
    fn moe_examples() {
        // K = 2, gate [0.5, 0.5], expert likelihoods 0.8 and 0.6 -> −log 0.7
        let enc = MlpEncoder::new(
            vec![DenseLayer::new(DenseMatrix::zeros(2, 1), vec![0.0, 0.0]).unwrap()],
            0.0,
        )
        .unwrap();
        let l = |p: f64| (p / (1.0 - p)).ln();
        let dict = Dictionary::new(
            DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0, l(0.8)], vec![0.0, 0.0, 0.0, l(0.6)]]).unwrap(),
        )
        .unwrap();
        let model = CenModel::new(
            Encoder::Mlp(enc),
            Some(dict),
            Family::Linear { classes: 2, attributes: 1 },
            Regularization::none(),
        )
        .unwrap();
        let data = Dataset::new(
            DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
            Targets::Classes(vec![1]),
        )
        .unwrap();
        let batch = Batch::new(&data, &[0]).unwrap();
        assert_abs_diff_eq!(model.moe_nll(&batch).unwrap().loss, -(0.7f64.ln()), epsilon = 1e-12);
        let p = model.moe_predict(&[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(p[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn moe_gradient_matches_fd() {
        let mut rng = Rng::new(41);
        let reg = Regularization {
            l2_theta: 0.05,
            l1_theta: 0.01,
            l2_dict: 0.02,
            ..Regularization::none()
        };
        for _ in 0..10 {
            let k = 1 + rng.below(4);
            let model = linear_spec(Some(k), 2, vec![3]).build(3, 2, reg, &mut rng).unwrap();
            let data = random_data(&mut rng, 4, 3, 2, 2);
            let idx = data.all_indices();
            let batch = Batch::new(&data, &idx).unwrap();
            let lg = model.moe_nll(&batch).unwrap();
            let numeric = fd_gradient(
                |p| {
                    let mut m = model.clone();
                    m.assign(p)?;
                    Ok(m.moe_nll(&batch)?.loss)
                },
                &model.flatten(),
                DEFAULT_FD_EPS,
            )
            .unwrap();
            assert!(relative_error(&lg.grad.flatten(), &numeric) < 1e-5);
        }
    }

    #[test]
    fn survival_cen_gradients_match_fd() {
        let mut rng = Rng::new(50);
        for (encoder, dict) in [
            (EncoderSpec::Recurrent { hidden: 3 }, Some(3)),
            (EncoderSpec::Mlp { hidden: vec![4], dropout: 0.0 }, Some(2)),
            (EncoderSpec::Mlp { hidden: vec![4], dropout: 0.0 }, None),
        ] {
            let spec = ModelSpec {
                family: FamilySpec::Survival { steps: 4 },
                encoder,
                dictionary_size: dict,
                learn_omega: true,
            };
            let reg = Regularization {
                l2_theta: 0.1,
                smoothness: 0.2,
                l2_dict: 0.05,
                ..Regularization::none()
            };
            let mut model = spec.build(3, 2, reg, &mut rng).unwrap();
            model.omega = Omega { w00: 0.3, w01: -0.2, w11: 0.1 };
            let n = 5;
            let c = DenseMatrix::from_vec(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap();
            let x = DenseMatrix::from_vec(n, 2, (0..n * 2).map(|_| rng.normal()).collect()).unwrap();
            let t = (0..n)
                .map(|i| SurvivalTarget { interval: rng.below(5), censored: i % 2 == 1 })
                .collect();
            let data = Dataset::new(c, x, Targets::Survival(t)).unwrap();
            let idx = data.all_indices();
            let batch = Batch::new(&data, &idx).unwrap();
            let lg = model.cen_nll(&batch).unwrap();
            assert!(fd_check(&model, &batch, 0.0, &lg.grad) < 1e-5);
        }
    }
}
