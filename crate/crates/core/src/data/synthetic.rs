use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Targets};
use crate::error::{CenError, Result};
use crate::numeric::{DenseMatrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XorVariant {
    /// Both classes in every context; the context alone says nothing about `y`.
    #[default]
    Mixed,
    /// One class per context; the context alone determines `y`.
    ClassPure,
}

/// Four contexts (one-hot in `C`) over 2-D attributes.
///
/// With `d₁ = (1, 1)/√2` and `d₂ = (1, −1)/√2`, blobs sit at `±r·d₁` and
/// are shifted by `q` along `d₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XorSpec {
    pub n_per_context: usize,
    pub variant: XorVariant,
    /// `r`: distance of each blob from the origin along `d₁`.
    pub radius: f64,
    /// `q`: offset along `d₂`.
    pub offset: f64,
    /// Standard deviation of every blob.
    pub noise: f64,
}

impl Default for XorSpec {
    fn default() -> Self {
        XorSpec {
            n_per_context: 100,
            variant: XorVariant::Mixed,
            radius: 1.0,
            offset: 1.0,
            noise: 0.25,
        }
    }
}

const CONTEXTS: usize = 4;

pub fn gen_xor_context(spec: &XorSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.n_per_context < 2 {
        return Err(CenError::invalid("xor-context needs at least 2 points per context"));
    }
    if !(spec.noise >= 0.0 && spec.radius.is_finite() && spec.offset.is_finite()) {
        return Err(CenError::invalid("xor-context geometry must be finite with noise >= 0"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let d1 = [s, s];
    let d2 = [s, -s];
    let (r, q) = (spec.radius, spec.offset);
    let n = CONTEXTS * spec.n_per_context;
    let mut c = Vec::with_capacity(n * CONTEXTS);
    let mut x = Vec::with_capacity(n * 2);
    let mut y = Vec::with_capacity(n);
    for k in 0..CONTEXTS {
        for i in 0..spec.n_per_context {
            let first_half = i < spec.n_per_context.div_ceil(2);
            // (position along d1, position along d2, label)
            let (a, b, label) = match spec.variant {
                XorVariant::Mixed => {
                    let o = if k < 2 { -q } else { q };
                    let side = if first_half { r } else { -r };
                    let positive_side_label = usize::from(k % 2 == 0);
                    let label = if first_half { positive_side_label } else { 1 - positive_side_label };
                    (side, o, label)
                }
                XorVariant::ClassPure => {
                    let (side, label) = match k {
                        0 => (r, 1),
                        1 => (-r, 0),
                        2 => (-r, 1),
                        _ => (r, 0),
                    };
                    (side, if first_half { q } else { -q }, label)
                }
            };
            for j in 0..CONTEXTS {
                c.push(if j == k { 1.0 } else { 0.0 });
            }
            for dim in 0..2 {
                x.push(a * d1[dim] + b * d2[dim] + spec.noise * rng.normal());
            }
            y.push(label);
        }
    }
    let data = Dataset::new(
        DenseMatrix::from_vec(n, CONTEXTS, c)?,
        DenseMatrix::from_vec(n, 2, x)?,
        Targets::Classes(y),
    )?;
    let perm = rng.permutation(n);
    Ok(data.subset(&perm))
}

/// Gaussian clusters with a random separating hyperplane through each centre.
/// The context equals the attributes (`C = X`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Standard deviation of the cluster centres.
    pub center_scale: f64,
    /// Within-cluster standard deviation.
    pub spread: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        BlobsSpec {
            n: 1000,
            dim: 8,
            clusters: 4,
            center_scale: 4.0,
            spread: 1.0,
        }
    }
}

pub fn gen_blobs(spec: &BlobsSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.n == 0 || spec.dim == 0 || spec.clusters == 0 {
        return Err(CenError::invalid("blobs need positive sizes"));
    }
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| (0..spec.dim).map(|_| spec.center_scale * rng.normal()).collect())
        .collect();
    let normals: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| a / norm).collect()
        })
        .collect();
    let mut x = Vec::with_capacity(spec.n * spec.dim);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = i % spec.clusters;
        let mut proj = 0.0;
        for j in 0..spec.dim {
            let e = spec.spread * rng.normal();
            proj += normals[k][j] * e;
            x.push(centers[k][j] + e);
        }
        y.push(usize::from(proj > 0.0));
    }
    let x = DenseMatrix::from_vec(spec.n, spec.dim, x)?;
    Dataset::new(x.clone(), x, Targets::Classes(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::model_accuracy;
    use crate::model::{EncoderSpec, FamilySpec, ModelSpec, Regularization};
    use crate::training::{train, TrainConfig};

    fn context_id(row: &[f64]) -> usize {
        row.iter().position(|&v| v == 1.0).unwrap()
    }

    /// Best accuracy of any map from context id to label.
    fn best_context_only(data: &Dataset) -> f64 {
        let labels = data.labels().unwrap();
        let mut best: f64 = 0.0;
        for assign in 0..16u32 {
            let hits = (0..data.len())
                .filter(|&i| {
                    let k = context_id(data.contexts.row(i));
                    ((assign >> k) & 1) as usize == labels[i]
                })
                .count();
            best = best.max(hits as f64 / data.len() as f64);
        }
        best
    }

    fn separable_within_contexts(data: &Dataset) -> bool {
        // the label is the sign of the projection on d1 (possibly flipped) in each context
        let labels = data.labels().unwrap();
        (0..4).all(|k| {
            let rows: Vec<usize> = (0..data.len()).filter(|&i| context_id(data.contexts.row(i)) == k).collect();
            let side = |i: usize| {
                let x = data.attributes.row(i);
                usize::from(x[0] + x[1] > 0.0)
            };
            rows.iter().all(|&i| side(i) == labels[i]) || rows.iter().all(|&i| side(i) != labels[i])
        })
    }

    #[test]
    fn properties_hold_across_seeds() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let spec = XorSpec {
                n_per_context: 50,
                noise: 0.2,
                ..Default::default()
            };
            let mixed = gen_xor_context(&spec, &mut rng).unwrap();
            let n = mixed.len() as f64;
            assert!(best_context_only(&mixed) <= 0.5 + 3.0 / n.sqrt());
            assert!(separable_within_contexts(&mixed));
            let pure = gen_xor_context(
                &XorSpec {
                    variant: XorVariant::ClassPure,
                    ..spec
                },
                &mut rng,
            )
            .unwrap();
            assert_eq!(best_context_only(&pure), 1.0);
            assert!(separable_within_contexts(&pure));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = XorSpec::default();
        let a = gen_xor_context(&spec, &mut Rng::new(3)).unwrap();
        let b = gen_xor_context(&spec, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_linear_model_fails_on_mixed_variant() {
        let mut rng = Rng::new(12);
        let data = gen_xor_context(&XorSpec::default(), &mut rng).unwrap();
        let model = ModelSpec {
            family: FamilySpec::Linear { classes: 2 },
            encoder: EncoderSpec::Mlp { hidden: vec![], dropout: 0.0 },
            dictionary_size: Some(1),
            learn_omega: false,
        }
        .build(4, 2, Regularization::none(), &mut rng)
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 100,
            validation_fraction: 0.0,
            regularization: Regularization::none(),
            ..Default::default()
        };
        let (model, _) = train(model, &data, None, &cfg).unwrap();
        assert!(model_accuracy(&model, &data).unwrap() <= 0.75);
    }

    #[test]
    fn blobs_shapes() {
        let d = gen_blobs(&BlobsSpec { n: 40, dim: 3, clusters: 2, ..Default::default() }, &mut Rng::new(1)).unwrap();
        assert_eq!(d.contexts, d.attributes);
        assert_eq!(d.attribute_dim(), 3);
    }
}
