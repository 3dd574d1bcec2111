//! Context encoders: a feed-forward network mapping a context vector to
//! attention logits (or raw explanation parameters), a gated recurrent
//! encoder emitting one attention vector per time step, and the global
//! dictionary of explanation atoms that attention is taken over.

use serde::{Deserialize, Serialize};

use crate::error::{CenError, Result};
use crate::numeric::{
    axpy, glorot, sigmoid, softmax_backward, softmax_unchecked, validate_finite, DenseMatrix,
    Parameters, Rng,
};

/// Tolerance on `Σα = 1` and `α ≥ 0` accepted by [`attention_compose`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Affine layer `W·v + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(CenError::shape("DenseLayer::new", weights.rows(), bias.len()));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        DenseLayer {
            weights: glorot(output, input, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.weights.matvec_unchecked(v);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `d input`.
    fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        grad.weights.add_outer_unchecked(1.0, d_out, input);
        axpy(1.0, d_out, &mut grad.bias);
        self.weights.t_matvec_unchecked(d_out)
    }
}

impl Parameters for DenseLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.weights.visit(f);
        self.bias.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.weights.visit_mut(f);
        self.bias.visit_mut(f);
    }
}

/// Feed-forward encoder: ReLU hidden layers, linear output layer.
///
/// Inverted dropout is applied to hidden activations in training mode only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder {
    pub layers: Vec<DenseLayer>,
    pub dropout: f64,
}

/// Intermediate values of one MLP forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation, post-dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale factor per hidden unit (`0` or `1/(1−rate)`), empty in eval mode.
    masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpEncoder {
    pub fn new(layers: Vec<DenseLayer>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(CenError::invalid("MlpEncoder needs at least one layer"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(CenError::invalid(format!("dropout {dropout} outside [0, 1)")));
        }
        for l in &layers {
            if l.bias.len() != l.weights.rows() {
                return Err(CenError::shape("MlpEncoder layer bias", l.weights.rows(), l.bias.len()));
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(CenError::shape(
                    "MlpEncoder::new",
                    w[0].output_dim(),
                    w[1].input_dim(),
                ));
            }
        }
        Ok(MlpEncoder { layers, dropout })
    }

    /// Glorot-initialized network with layer widths `sizes = [input, hidden.., output]`.
    pub fn glorot(sizes: &[usize], dropout: f64, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(CenError::invalid("MlpEncoder sizes need input and output"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::glorot(w[0], w[1], rng))
            .collect();
        Self::new(layers, dropout)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Deterministic (inference-mode) forward pass.
    pub fn forward(&self, c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(c, None)?.output)
    }

    /// Forward pass; with `Some(rng)` the encoder is in training mode and applies dropout.
    pub fn forward_cached(&self, c: &[f64], mut rng: Option<&mut Rng>) -> Result<MlpCache> {
        if c.len() != self.input_dim() {
            return Err(CenError::shape("mlp_forward", self.input_dim(), c.len()));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut masks = Vec::new();
        let mut h = c.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            if l + 1 == n {
                return Ok(MlpCache {
                    inputs,
                    pre,
                    masks,
                    output: z,
                });
            }
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let (Some(r), true) = (rng.as_deref_mut(), self.dropout > 0.0) {
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..a.len())
                    .map(|_| if r.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (ai, mi) in a.iter_mut().zip(&mask) {
                    *ai *= mi;
                }
                masks.push(mask);
            }
            pre.push(z);
            h = a;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Accumulates parameter gradients for `d_output` into `grad`.
    pub fn backward(&self, cache: &MlpCache, d_output: &[f64], grad: &mut MlpEncoder) {
        let n = self.layers.len();
        let mut d = d_output.to_vec();
        for l in (0..n).rev() {
            let d_in = self.layers[l].backward(&cache.inputs[l], &d, &mut grad.layers[l]);
            if l == 0 {
                break;
            }
            // through dropout and ReLU of hidden layer l-1
            let z = &cache.pre[l - 1];
            d = d_in
                .iter()
                .zip(z)
                .enumerate()
                .map(|(i, (g, zi))| {
                    let m = cache.masks.get(l - 1).map_or(1.0, |m| m[i]);
                    if *zi > 0.0 {
                        g * m
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
}

impl Parameters for MlpEncoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// GRU-style gated cell; the context is fed as input at every step.
///
/// `z = σ(W_z c + U_z h + b_z)`, `r = σ(W_r c + U_r h + b_r)`,
/// `ĥ = tanh(W_h c + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_update: DenseMatrix,
    pub u_update: DenseMatrix,
    pub b_update: Vec<f64>,
    pub w_reset: DenseMatrix,
    pub u_reset: DenseMatrix,
    pub b_reset: Vec<f64>,
    pub w_cand: DenseMatrix,
    pub u_cand: DenseMatrix,
    pub b_cand: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w_update: DenseMatrix::zeros(hidden, input),
            u_update: DenseMatrix::zeros(hidden, hidden),
            b_update: vec![0.0; hidden],
            w_reset: DenseMatrix::zeros(hidden, input),
            u_reset: DenseMatrix::zeros(hidden, hidden),
            b_reset: vec![0.0; hidden],
            w_cand: DenseMatrix::zeros(hidden, input),
            u_cand: DenseMatrix::zeros(hidden, hidden),
            b_cand: vec![0.0; hidden],
        }
    }

    pub fn glorot(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruCell {
            w_update: glorot(hidden, input, rng),
            u_update: glorot(hidden, hidden, rng),
            b_update: vec![0.0; hidden],
            w_reset: glorot(hidden, input, rng),
            u_reset: glorot(hidden, hidden, rng),
            b_reset: vec![0.0; hidden],
            w_cand: glorot(hidden, input, rng),
            u_cand: glorot(hidden, hidden, rng),
            b_cand: vec![0.0; hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_update.rows()
    }

    fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        let mats = [
            (&self.w_update, i),
            (&self.w_reset, i),
            (&self.w_cand, i),
            (&self.u_update, h),
            (&self.u_reset, h),
            (&self.u_cand, h),
        ];
        for (m, cols) in mats {
            if m.shape() != (h, cols) {
                return Err(CenError::shape(
                    "GruCell",
                    format!("{h}x{cols}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }
        for b in [&self.b_update, &self.b_reset, &self.b_cand] {
            if b.len() != h {
                return Err(CenError::shape("GruCell bias", h, b.len()));
            }
        }
        Ok(())
    }

    fn step(&self, c: &[f64], h: &[f64]) -> GruStep {
        let gate = |w: &DenseMatrix, u: &DenseMatrix, b: &[f64], hv: &[f64]| -> Vec<f64> {
            let mut a = w.matvec_unchecked(c);
            let uh = u.matvec_unchecked(hv);
            for ((ai, ui), bi) in a.iter_mut().zip(uh).zip(b) {
                *ai += ui + bi;
            }
            a
        };
        let z: Vec<f64> = gate(&self.w_update, &self.u_update, &self.b_update, h)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = gate(&self.w_reset, &self.u_reset, &self.b_reset, h)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(&self.w_cand, &self.u_cand, &self.b_cand, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let next = (0..h.len())
            .map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k])
            .collect();
        GruStep {
            z,
            r,
            rh,
            cand,
            next,
        }
    }

    /// Backprop through one step. Returns `d h_prev`.
    fn step_backward(
        &self,
        c: &[f64],
        h_prev: &[f64],
        s: &GruStep,
        d_next: &[f64],
        grad: &mut GruCell,
    ) -> Vec<f64> {
        let n = h_prev.len();
        let mut d_prev: Vec<f64> = (0..n).map(|k| d_next[k] * (1.0 - s.z[k])).collect();
        let d_cand_pre: Vec<f64> = (0..n)
            .map(|k| d_next[k] * s.z[k] * (1.0 - s.cand[k] * s.cand[k]))
            .collect();
        let d_z_pre: Vec<f64> = (0..n)
            .map(|k| d_next[k] * (s.cand[k] - h_prev[k]) * s.z[k] * (1.0 - s.z[k]))
            .collect();

        grad.w_cand.add_outer_unchecked(1.0, &d_cand_pre, c);
        grad.u_cand.add_outer_unchecked(1.0, &d_cand_pre, &s.rh);
        axpy(1.0, &d_cand_pre, &mut grad.b_cand);
        let d_rh = self.u_cand.t_matvec_unchecked(&d_cand_pre);
        let d_r_pre: Vec<f64> = (0..n)
            .map(|k| d_rh[k] * h_prev[k] * s.r[k] * (1.0 - s.r[k]))
            .collect();
        for k in 0..n {
            d_prev[k] += d_rh[k] * s.r[k];
        }

        grad.w_update.add_outer_unchecked(1.0, &d_z_pre, c);
        grad.u_update.add_outer_unchecked(1.0, &d_z_pre, h_prev);
        axpy(1.0, &d_z_pre, &mut grad.b_update);
        axpy(1.0, &self.u_update.t_matvec_unchecked(&d_z_pre), &mut d_prev);

        grad.w_reset.add_outer_unchecked(1.0, &d_r_pre, c);
        grad.u_reset.add_outer_unchecked(1.0, &d_r_pre, h_prev);
        axpy(1.0, &d_r_pre, &mut grad.b_reset);
        axpy(1.0, &self.u_reset.t_matvec_unchecked(&d_r_pre), &mut d_prev);

        d_prev
    }
}

impl Parameters for GruCell {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for m in [&self.w_update, &self.u_update, &self.w_reset, &self.u_reset, &self.w_cand, &self.u_cand] {
            m.visit(f);
        }
        for b in [&self.b_update, &self.b_reset, &self.b_cand] {
            b.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for m in [
            &mut self.w_update,
            &mut self.u_update,
            &mut self.w_reset,
            &mut self.u_reset,
            &mut self.w_cand,
            &mut self.u_cand,
        ] {
            m.visit_mut(f);
        }
        for b in [&mut self.b_update, &mut self.b_reset, &mut self.b_cand] {
            b.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone)]
struct GruStep {
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    cand: Vec<f64>,
    next: Vec<f64>,
}

/// Recurrent encoder producing one attention vector over `K` atoms per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentEncoder {
    pub cell: GruCell,
    /// `K × H` head mapping each hidden state to attention logits.
    pub head: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct RecurrentCache {
    /// `h⁰ .. h^m`.
    hidden: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
    pub alphas: Vec<Vec<f64>>,
}

impl RecurrentEncoder {
    pub fn new(cell: GruCell, head: DenseLayer) -> Result<Self> {
        cell.validate()?;
        if head.input_dim() != cell.hidden_dim() {
            return Err(CenError::shape(
                "RecurrentEncoder head",
                cell.hidden_dim(),
                head.input_dim(),
            ));
        }
        Ok(RecurrentEncoder { cell, head })
    }

    pub fn glorot(input: usize, hidden: usize, atoms: usize, rng: &mut Rng) -> Self {
        let cell = GruCell::glorot(input, hidden, rng);
        let head = DenseLayer::glorot(hidden, atoms, rng);
        RecurrentEncoder { cell, head }
    }

    pub fn input_dim(&self) -> usize {
        self.cell.input_dim()
    }

    pub fn atoms(&self) -> usize {
        self.head.output_dim()
    }

    /// Attention vectors `α¹..α^m`, starting from `h⁰ = 0`.
    pub fn unroll(&self, c: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.unroll_cached(c, steps)?.alphas)
    }

    pub fn unroll_cached(&self, c: &[f64], steps: usize) -> Result<RecurrentCache> {
        if steps == 0 {
            return Err(CenError::invalid("recurrent_unroll needs at least one step"));
        }
        if c.len() != self.input_dim() {
            return Err(CenError::shape("recurrent_unroll", self.input_dim(), c.len()));
        }
        let mut hidden = vec![vec![0.0; self.cell.hidden_dim()]];
        let mut cache_steps = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        for _ in 0..steps {
            let s = self.cell.step(c, hidden.last().expect("h0 present"));
            alphas.push(softmax_unchecked(&self.head.apply(&s.next)));
            hidden.push(s.next.clone());
            cache_steps.push(s);
        }
        Ok(RecurrentCache {
            hidden,
            steps: cache_steps,
            alphas,
        })
    }

    /// Backprop through time given `d α^t` for every step.
    pub fn backward(
        &self,
        c: &[f64],
        cache: &RecurrentCache,
        d_alphas: &[Vec<f64>],
        grad: &mut RecurrentEncoder,
    ) {
        let n = self.cell.hidden_dim();
        let mut d_h = vec![0.0; n];
        for t in (0..cache.steps.len()).rev() {
            let d_logits = softmax_backward(&cache.alphas[t], &d_alphas[t]);
            let d_from_head = self
                .head
                .backward(&cache.hidden[t + 1], &d_logits, &mut grad.head);
            axpy(1.0, &d_from_head, &mut d_h);
            d_h = self
                .cell
                .step_backward(c, &cache.hidden[t], &cache.steps[t], &d_h, &mut grad.cell);
        }
    }
}

impl Parameters for RecurrentEncoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.cell.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.cell.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// `K` global explanation atoms, one per row of a `K × p` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub atoms: DenseMatrix,
}

impl Dictionary {
    pub fn new(atoms: DenseMatrix) -> Result<Self> {
        if atoms.rows() == 0 {
            return Err(CenError::invalid("dictionary needs at least one atom"));
        }
        atoms.validate_finite("dictionary")?;
        Ok(Dictionary { atoms })
    }

    /// Atoms drawn from `U(−scale, scale)`.
    pub fn random(size: usize, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..size * dim).map(|_| rng.uniform_range(-scale, scale)).collect();
        Dictionary {
            atoms: DenseMatrix::from_vec(size, dim, data).expect("sized above"),
        }
    }

    pub fn size(&self) -> usize {
        self.atoms.rows()
    }

    pub fn atom_dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        self.atoms.row(k)
    }
}

impl Parameters for Dictionary {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.atoms.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.atoms.visit_mut(f)
    }
}

/// A probability vector over dictionary atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention(Vec<f64>);

impl Attention {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        validate_finite(&weights, "attention")?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&a| a < -SIMPLEX_TOL) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(CenError::invalid(format!(
                "attention is not on the simplex (sum = {total})"
            )));
        }
        Ok(Attention(weights))
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Ok(Attention(crate::numeric::softmax(logits)?))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `θ = αᵀD`.
pub fn attention_compose(alpha: &Attention, dictionary: &Dictionary) -> Result<Vec<f64>> {
    if alpha.0.len() != dictionary.size() {
        return Err(CenError::shape(
            "attention_compose",
            dictionary.size(),
            alpha.0.len(),
        ));
    }
    Ok(compose_unchecked(&alpha.0, dictionary))
}

pub(crate) fn compose_unchecked(alpha: &[f64], dictionary: &Dictionary) -> Vec<f64> {
    dictionary.atoms.t_matvec_unchecked(alpha)
}
