//! Seeded desk-scale sweeps. Each returns tidy rows (one per condition and
//! seed) that serialize to CSV.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_blobs, gen_xor_context, inject_noise, load_csv, preprocess, subsample_features, BlobsSpec, ColumnKind,
    ColumnSchema, FeatureRole, PreprocessRequest, Schema, SurvivalBinning, XorSpec, XorVariant,
};
use crate::dataset::{Batch, Dataset, Targets};
use crate::diagnostics::{fano_diagnostic, FanoReport};
use crate::error::{CenError, Result};
use crate::metrics::{argmax, evaluate, model_accuracy};
use crate::model::{CenModel, EncoderSpec, FamilySpec, ModelSpec, Regularization};
use crate::numeric::{DenseMatrix, Rng};
use crate::posthoc::{fit_surrogate, relative_l2_error, PerturbationConfig, PerturbationMode, SurrogateTarget};
use crate::training::{train, TrainConfig};

pub const EXPERIMENTS: [&str; 7] = [
    "dict-size",
    "sample-efficiency",
    "noisy-features",
    "incomplete-features",
    "entropy-reg",
    "lime-recovery",
    "fano",
];

/// Worker count from `CEN_THREADS` (default: available parallelism).
pub fn thread_budget() -> usize {
    std::env::var("CEN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to `threads` workers; output order matches input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}

pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Architecture plus optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Setup {
    /// Builds with the seed from `train.seed` and trains.
    pub fn fit(&self, data: &Dataset, validation: Option<&Dataset>) -> Result<CenModel> {
        let mut rng = Rng::new(self.train.seed).fork(7);
        let model = self
            .model
            .build(data.context_dim(), data.attribute_dim(), self.train.regularization, &mut rng)?;
        Ok(train(model, data, validation, &self.train)?.0)
    }

    pub fn with_seed(&self, seed: u64) -> Setup {
        let mut s = self.clone();
        s.train.seed = seed;
        s
    }
}

/// Plain MLP classifier on the concatenated inputs, expressed as a direct
/// encoder whose explanation only has a bias (attributes are a single zero).
pub fn classifier_view(data: &Dataset, include_attributes: bool) -> Result<Dataset> {
    let inputs = if include_attributes {
        data.contexts.hstack(&data.attributes)?
    } else {
        data.contexts.clone()
    };
    Dataset::new(inputs, DenseMatrix::zeros(data.len(), 1), data.targets.clone())
}

fn mlp_classifier_spec(classes: usize, hidden: Vec<usize>) -> ModelSpec {
    ModelSpec {
        family: FamilySpec::Linear { classes },
        encoder: EncoderSpec::Mlp { hidden, dropout: 0.0 },
        dictionary_size: None,
        learn_omega: false,
    }
}

fn linear_cen_spec(k: usize, hidden: Vec<usize>) -> ModelSpec {
    ModelSpec {
        family: FamilySpec::Linear { classes: 2 },
        encoder: EncoderSpec::Mlp { hidden, dropout: 0.0 },
        dictionary_size: Some(k),
        learn_omega: false,
    }
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

// ---------------------------------------------------------------- entropy-reg

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyRegConfig {
    pub data: XorSpec,
    pub test_per_context: usize,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub setup: Setup,
}

impl Default for EntropyRegConfig {
    fn default() -> Self {
        EntropyRegConfig {
            data: XorSpec {
                n_per_context: 100,
                variant: XorVariant::ClassPure,
                radius: 0.5,
                offset: 1.0,
                noise: 0.1,
            },
            test_per_context: 100,
            lambdas: vec![0.0, 0.1],
            seeds: seeds(3),
            setup: Setup {
                model: linear_cen_spec(4, vec![]),
                train: TrainConfig {
                    learning_rate: 0.01,
                    batch_size: 32,
                    max_epochs: 1000,
                    patience: 0,
                    validation_fraction: 0.0,
                    regularization: Regularization {
                        l2_theta: 1e-3,
                        ..Regularization::none()
                    },
                    ..Default::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRegRow {
    pub lambda: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    /// `Ĥ(Y | θ)` over the whole test set, in nats.
    pub entropy: f64,
}

fn xor_split(spec: &XorSpec, test_per_context: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = Rng::new(seed).fork(11);
    let train = gen_xor_context(spec, &mut rng)?;
    let test = gen_xor_context(
        &XorSpec {
            n_per_context: test_per_context,
            ..*spec
        },
        &mut rng,
    )?;
    Ok((train, test))
}

fn entropy_model(cfg: &EntropyRegConfig, lambda: f64, seed: u64) -> Result<(CenModel, Dataset)> {
    let (train_set, test) = xor_split(&cfg.data, cfg.test_per_context, seed)?;
    let mut setup = cfg.setup.with_seed(seed);
    setup.train.regularization.entropy_weight = lambda;
    Ok((setup.fit(&train_set, None)?, test))
}

pub fn entropy_reg(cfg: &EntropyRegConfig, threads: usize) -> Result<Vec<EntropyRegRow>> {
    let conditions: Vec<(f64, u64)> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    parallel_map(&conditions, threads, |&(lambda, seed)| {
        let (model, test) = entropy_model(cfg, lambda, seed)?;
        let idx = test.all_indices();
        Ok(EntropyRegRow {
            lambda,
            seed,
            test_accuracy: model_accuracy(&model, &test)?,
            entropy: model.entropy_estimate(&Batch::new(&test, &idx)?)?,
        })
    })
}

// ----------------------------------------------------------------------- fano

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoRow {
    pub seed: u64,
    pub lambda: f64,
    pub epsilon_hat: f64,
    pub delta_hat: f64,
    pub bound: f64,
    pub contribution: f64,
    pub holds: bool,
}

/// Trains as in `entropy-reg` (every `λ_H` and seed) and runs the Fano diagnostic on each test set.
pub fn fano(cfg: &EntropyRegConfig, threads: usize) -> Result<Vec<(FanoRow, FanoReport)>> {
    let conditions: Vec<(f64, u64)> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    parallel_map(&conditions, threads, |&(lambda, seed)| {
        let (model, test) = entropy_model(cfg, lambda, seed)?;
        let report = fano_diagnostic(&model, &test, &mut Rng::new(seed).fork(13))?;
        Ok((
            FanoRow {
                seed,
                lambda,
                epsilon_hat: report.epsilon_hat,
                delta_hat: report.delta_hat,
                bound: report.bound,
                contribution: report.contribution_lower_bound,
                holds: report.holds,
            },
            report,
        ))
    })
}

// ------------------------------------------------------------------ dict-size

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictSizeConfig {
    pub data: XorSpec,
    pub test_per_context: usize,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub setup: Setup,
}

impl Default for DictSizeConfig {
    fn default() -> Self {
        DictSizeConfig {
            data: XorSpec {
                n_per_context: 100,
                ..Default::default()
            },
            test_per_context: 100,
            sizes: vec![1, 2, 4, 8, 16],
            seeds: seeds(3),
            setup: Setup {
                model: linear_cen_spec(2, vec![]),
                train: TrainConfig {
                    learning_rate: 0.01,
                    max_epochs: 100,
                    patience: 20,
                    validation_fraction: 0.2,
                    regularization: Regularization::default(),
                    ..Default::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictSizeRow {
    pub k: usize,
    pub seed: u64,
    pub val_error: f64,
    pub test_error: f64,
}

pub fn dict_size(cfg: &DictSizeConfig, threads: usize) -> Result<Vec<DictSizeRow>> {
    let conditions: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    parallel_map(&conditions, threads, |&(k, seed)| {
        let (all, test) = xor_split(&cfg.data, cfg.test_per_context, seed)?;
        let (train_set, val) = all.split(cfg.setup.train.validation_fraction.max(0.1), &mut Rng::new(seed).fork(3));
        let mut setup = cfg.setup.with_seed(seed);
        setup.model.dictionary_size = Some(k);
        let model = setup.fit(&train_set, Some(&val))?;
        Ok(DictSizeRow {
            k,
            seed,
            val_error: 1.0 - model_accuracy(&model, &val)?,
            test_error: 1.0 - model_accuracy(&model, &test)?,
        })
    })
}

// ---------------------------------------------------------- sample-efficiency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleEfficiencyConfig {
    pub data: XorSpec,
    pub test_per_context: usize,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cen: Setup,
    /// MLP on `c ⊕ x` (hidden sizes taken from this setup's encoder).
    pub baseline: Setup,
}

impl Default for SampleEfficiencyConfig {
    fn default() -> Self {
        let train = TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 150,
            patience: 0,
            validation_fraction: 0.0,
            regularization: Regularization::none(),
            ..Default::default()
        };
        SampleEfficiencyConfig {
            data: XorSpec {
                n_per_context: 250,
                noise: 0.6,
                ..Default::default()
            },
            test_per_context: 250,
            fractions: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            seeds: seeds(5),
            cen: Setup {
                model: linear_cen_spec(2, vec![]),
                train: TrainConfig {
                    regularization: Regularization::default(),
                    ..train.clone()
                },
            },
            baseline: Setup {
                model: mlp_classifier_spec(2, vec![16]),
                train,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEfficiencyRow {
    pub fraction: f64,
    pub seed: u64,
    pub model: String,
    pub test_error: f64,
}

pub fn sample_efficiency(cfg: &SampleEfficiencyConfig, threads: usize) -> Result<Vec<SampleEfficiencyRow>> {
    let conditions: Vec<(f64, u64, bool)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| cfg.seeds.iter().flat_map(move |&s| [(f, s, true), (f, s, false)]))
        .collect();
    parallel_map(&conditions, threads, |&(fraction, seed, is_cen)| {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CenError::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        let (all, test) = xor_split(&cfg.data, cfg.test_per_context, seed)?;
        let mut perm = Rng::new(seed).fork(5).permutation(all.len());
        perm.truncate(((fraction * all.len() as f64).round() as usize).max(2));
        let subset = all.subset(&perm);
        let test_error = if is_cen {
            let model = cfg.cen.with_seed(seed).fit(&subset, None)?;
            1.0 - model_accuracy(&model, &test)?
        } else {
            let model = cfg.baseline.with_seed(seed).fit(&classifier_view(&subset, true)?, None)?;
            1.0 - model_accuracy(&model, &classifier_view(&test, true)?)?
        };
        Ok(SampleEfficiencyRow {
            fraction,
            seed,
            model: if is_cen { "cen" } else { "mlp" }.into(),
            test_error,
        })
    })
}

// ------------------------------------------------- noisy / incomplete features

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Levels are signal-to-noise ratios (`inf` allowed).
    Noise,
    /// Levels are fractions of attribute columns kept.
    Subsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub data: BlobsSpec,
    pub test_size: usize,
    pub corruption: Corruption,
    #[serde(with = "levels")]
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cen: Setup,
    /// Context-only classifier explained by the surrogate.
    pub baseline: Setup,
    pub lime: PerturbationConfig,
    /// Test points explained per condition.
    pub lime_points: usize,
}

impl ConsistencyConfig {
    pub fn noisy() -> Self {
        ConsistencyConfig::default()
    }

    pub fn incomplete() -> Self {
        ConsistencyConfig {
            corruption: Corruption::Subsample,
            levels: vec![1.0, 0.75, 0.5, 0.25],
            ..Default::default()
        }
    }
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        let train = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 60,
            patience: 0,
            validation_fraction: 0.0,
            regularization: Regularization::default(),
            ..Default::default()
        };
        ConsistencyConfig {
            data: BlobsSpec {
                n: 1000,
                dim: 8,
                clusters: 4,
                center_scale: 3.0,
                spread: 1.0,
            },
            test_size: 1000,
            corruption: Corruption::Noise,
            levels: vec![f64::INFINITY, 8.0, 4.0, 2.0, 1.0, 0.5],
            seeds: seeds(10),
            cen: Setup {
                model: linear_cen_spec(4, vec![]),
                train: train.clone(),
            },
            baseline: Setup {
                model: mlp_classifier_spec(2, vec![16]),
                train: TrainConfig {
                    regularization: Regularization::none(),
                    ..train
                },
            },
            lime: PerturbationConfig {
                samples: 200,
                scale_x: 0.03,
                scale_c: 0.0,
                kernel_width: 1.0,
                ridge: 1e-6,
                target: SurrogateTarget::Probability,
                mode: PerturbationMode::XOnly,
            },
            lime_points: 50,
        }
    }
}

/// Levels as JSON numbers, with `"inf"` for an infinite SNR.
mod levels {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Level {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&x| if x.is_finite() { Level::Num(x) } else { Level::Text(x.to_string()) })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Level>::deserialize(d)?
            .into_iter()
            .map(|l| match l {
                Level::Num(x) => Ok(x),
                Level::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub level: f64,
    pub seed: u64,
    /// Error of the surrogate explanations used as predictors on the (corrupted) attributes.
    pub surrogate_error: f64,
    pub cen_error: f64,
    /// Mean weighted R² of the surrogates against the context-only baseline.
    pub fidelity_r2: f64,
}

fn corrupt(cfg: &ConsistencyConfig, level: f64, train_x: &DenseMatrix, test_x: &DenseMatrix, seed: u64) -> Result<(DenseMatrix, DenseMatrix, Vec<usize>)> {
    let mut rng = Rng::new(seed).fork(17);
    match cfg.corruption {
        Corruption::Noise => {
            let all = train_x.transpose();
            let joined = DenseMatrix::from_rows(
                &all.to_rows()
                    .iter()
                    .zip(test_x.transpose().to_rows())
                    .map(|(a, b)| a.iter().chain(&b).copied().collect())
                    .collect::<Vec<Vec<f64>>>(),
            )?
            .transpose();
            let noisy = inject_noise(&joined, level, &mut rng)?;
            let n = train_x.rows();
            let tr: Vec<usize> = (0..n).collect();
            let te: Vec<usize> = (n..noisy.rows()).collect();
            Ok((noisy.select_rows(&tr), noisy.select_rows(&te), (0..train_x.cols()).collect()))
        }
        Corruption::Subsample => {
            let (_, kept) = subsample_features(train_x, level, &mut rng)?;
            Ok((train_x.select_columns(&kept), test_x.select_columns(&kept), kept))
        }
    }
}

pub fn consistency(cfg: &ConsistencyConfig, threads: usize) -> Result<Vec<ConsistencyRow>> {
    // per seed: data and the context-only baseline are shared by every level
    let bases = parallel_map(&cfg.seeds, threads, |&seed| {
        let mut rng = Rng::new(seed).fork(19);
        let all = gen_blobs(
            &BlobsSpec {
                n: cfg.data.n + cfg.test_size,
                ..cfg.data
            },
            &mut rng,
        )?;
        let idx: Vec<usize> = (0..cfg.data.n).collect();
        let test_idx: Vec<usize> = (cfg.data.n..all.len()).collect();
        let (train_set, test) = (all.subset(&idx), all.subset(&test_idx));
        let baseline = cfg.baseline.with_seed(seed).fit(&classifier_view(&train_set, false)?, None)?;
        Ok((train_set, test, baseline))
    })?;
    let conditions: Vec<(f64, usize)> = cfg
        .levels
        .iter()
        .flat_map(|&l| (0..cfg.seeds.len()).map(move |s| (l, s)))
        .collect();
    parallel_map(&conditions, threads, |&(level, si)| {
        let seed = cfg.seeds[si];
        let (train_set, test, baseline) = &bases[si];
        let (tr_x, te_x, kept) = corrupt(cfg, level, &train_set.attributes, &test.attributes, seed)?;
        let cen_train = train_set.with_attributes(tr_x)?;
        let cen_test = test.with_attributes(te_x)?;
        let cen = cfg.cen.with_seed(seed).fit(&cen_train, None)?;
        let cen_error = 1.0 - model_accuracy(&cen, &cen_test)?;

        let labels = test.labels().ok_or_else(|| CenError::invalid("blobs have class labels"))?;
        let mut rng = Rng::new(seed).fork(23);
        let points = cfg.lime_points.min(test.len());
        let mut r2 = 0.0;
        let mut wrong = 0usize;
        for i in 0..points {
            let c = test.contexts.row(i);
            // the surrogate lives on the kept attribute dimensions of the clean context
            let x0: Vec<f64> = kept.iter().map(|&j| c[j]).collect();
            let black_box = |x: &[f64], _: &[f64]| {
                let mut cc = c.to_vec();
                for (&j, v) in kept.iter().zip(x) {
                    cc[j] = *v;
                }
                Ok(baseline.predict_proba(&cc, &[0.0])?[1])
            };
            let s = fit_surrogate(black_box, &x0, &[], &cfg.lime, &mut rng)?;
            r2 += s.r2;
            let threshold = match cfg.lime.target {
                SurrogateTarget::Probability => 0.5,
                SurrogateTarget::Logit => 0.0,
            };
            let pred = usize::from(s.predict(&x0, cen_test.attributes.row(i)) > threshold);
            wrong += usize::from(pred != labels[i]);
        }
        Ok(ConsistencyRow {
            level,
            seed,
            surrogate_error: wrong as f64 / points as f64,
            cen_error,
            fidelity_r2: r2 / points as f64,
        })
    })
}

// -------------------------------------------------------------- lime-recovery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeRecoveryConfig {
    pub data: XorSpec,
    pub points: usize,
    pub seed: u64,
    pub setup: Setup,
    pub lime: PerturbationConfig,
}

impl Default for LimeRecoveryConfig {
    fn default() -> Self {
        LimeRecoveryConfig {
            data: XorSpec {
                n_per_context: 100,
                ..Default::default()
            },
            points: 100,
            seed: 0,
            setup: Setup {
                model: linear_cen_spec(2, vec![]),
                train: TrainConfig {
                    learning_rate: 0.01,
                    max_epochs: 100,
                    patience: 0,
                    validation_fraction: 0.0,
                    regularization: Regularization {
                        l2_theta: 1e-2,
                        ..Regularization::default()
                    },
                    ..Default::default()
                },
            },
            lime: PerturbationConfig {
                samples: 2000,
                scale_x: 0.1,
                scale_c: 0.01,
                kernel_width: 0.5,
                ridge: 0.0,
                target: SurrogateTarget::Logit,
                mode: PerturbationMode::Joint,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeRecoveryRow {
    pub point: usize,
    pub seed: u64,
    pub relative_error: f64,
    pub r2: f64,
}

/// `θ*(c)` for a binary linear explanation as the logit-difference weights `w₁ − w₀`.
pub fn binary_logit_weights(model: &CenModel, c: &[f64]) -> Result<Vec<f64>> {
    let (theta, _) = model.generate_theta(c)?;
    let d = model.attribute_dim();
    Ok((0..d).map(|j| theta[d + j] - theta[j]).collect())
}

pub fn lime_recovery(cfg: &LimeRecoveryConfig, threads: usize) -> Result<Vec<LimeRecoveryRow>> {
    let (train_set, test) = xor_split(&cfg.data, cfg.points.div_ceil(4), cfg.seed)?;
    let model = cfg.setup.with_seed(cfg.seed).fit(&train_set, None)?;
    let points: Vec<usize> = (0..cfg.points.min(test.len())).collect();
    parallel_map(&points, threads, |&i| {
        let c = test.contexts.row(i);
        let x = test.attributes.row(i);
        let truth = binary_logit_weights(&model, c)?;
        let mut rng = Rng::new(cfg.seed).fork(1000 + i as u64);
        let s = fit_surrogate(
            |xs: &[f64], cs: &[f64]| Ok(model.predict_proba(cs, xs)?[1]),
            x,
            c,
            &cfg.lime,
            &mut rng,
        )?;
        Ok(LimeRecoveryRow {
            point: i,
            seed: cfg.seed,
            relative_error: relative_l2_error(&s.weights, &truth),
            r2: s.r2,
        })
    })
}

/// Predicted class per row for a linear-family model.
pub fn predict_classes(model: &CenModel, data: &Dataset) -> Result<Vec<usize>> {
    (0..data.len())
        .map(|i| Ok(argmax(&model.predict_proba(data.contexts.row(i), data.attributes.row(i))?)))
        .collect()
}

/// Fails unless the dataset carries class labels.
pub fn require_classes(data: &Dataset) -> Result<&[usize]> {
    match &data.targets {
        Targets::Classes(v) => Ok(v),
        Targets::Survival(_) => Err(CenError::invalid("expected class targets")),
    }
}

// ------------------------------------------------------------------- support2

/// Column schema for a SUPPORT2 CSV with the given header. `d.time` and
/// `death` are the survival columns, known categorical variables are one-hot
/// encoded, `hospdead` and `sfdm2` leak the outcome and are ignored, and any
/// other column is numeric.
pub fn support2_schema(headers: &[String]) -> Result<Schema> {
    const CATEGORICAL: [&str; 7] = ["sex", "dzgroup", "dzclass", "income", "race", "ca", "dnr"];
    const IGNORED: [&str; 3] = ["hospdead", "sfdm2", ""];
    for required in ["d.time", "death"] {
        if !headers.iter().any(|h| h == required) {
            return Err(CenError::Ingestion {
                row: 0,
                message: format!("SUPPORT2 file lacks the {required:?} column"),
            });
        }
    }
    let columns = headers
        .iter()
        .map(|h| ColumnSchema {
            name: h.clone(),
            kind: match h.as_str() {
                "d.time" => ColumnKind::EventTime,
                "death" => ColumnKind::CensorFlag,
                n if CATEGORICAL.contains(&n) => ColumnKind::Categorical,
                n if IGNORED.contains(&n) => ColumnKind::Ignore,
                _ => ColumnKind::Numeric,
            },
            role: FeatureRole::Both,
            event_indicator: true,
        })
        .collect();
    Ok(Schema::new(columns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Support2Config {
    pub folds: usize,
    pub seed: u64,
    pub binning: SurvivalBinning,
    pub quantiles: Vec<f64>,
    /// Plain CRF: a direct encoder on a constant context, so `θ¹..θᵐ` is shared by every patient.
    pub crf: Setup,
    pub cen: Setup,
}

impl Default for Support2Config {
    fn default() -> Self {
        let steps = 156;
        let train = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 64,
            max_epochs: 40,
            patience: 5,
            validation_fraction: 0.1,
            regularization: Regularization {
                l1_theta: 0.0,
                l2_theta: 1e-4,
                ..Regularization::none()
            },
            ..Default::default()
        };
        Support2Config {
            folds: 5,
            seed: 0,
            binning: SurvivalBinning {
                horizon: 3.0 * 365.0,
                width: 7.0,
            },
            quantiles: vec![0.25, 0.5, 0.75],
            crf: Setup {
                model: ModelSpec {
                    family: FamilySpec::Survival { steps },
                    encoder: EncoderSpec::Mlp {
                        hidden: vec![],
                        dropout: 0.0,
                    },
                    dictionary_size: None,
                    learn_omega: false,
                },
                train: train.clone(),
            },
            cen: Setup {
                model: ModelSpec {
                    family: FamilySpec::Survival { steps },
                    encoder: EncoderSpec::Mlp {
                        hidden: vec![64],
                        dropout: 0.5,
                    },
                    dictionary_size: Some(16),
                    learn_omega: false,
                },
                train: TrainConfig {
                    regularization: Regularization {
                        l1_theta: 1e-3,
                        l2_theta: 1e-4,
                        ..Regularization::none()
                    },
                    ..train
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support2Row {
    pub fold: usize,
    pub model: String,
    pub acc_25: f64,
    pub acc_50: f64,
    pub acc_75: f64,
    pub rae: f64,
}

/// K-fold cross-validation of the plain CRF and the MLP-CEN on a SUPPORT2 CSV.
pub fn support2_cv(path: &std::path::Path, cfg: &Support2Config, threads: usize) -> Result<Vec<Support2Row>> {
    if cfg.folds < 2 || cfg.quantiles.len() != 3 {
        return Err(CenError::Config("support2 needs >= 2 folds and three quantiles".into()));
    }
    let headers: Vec<String> = csv::Reader::from_path(path)?.headers()?.iter().map(str::to_string).collect();
    let table = load_csv(path, Some(&support2_schema(&headers)?))?;
    let perm = Rng::new(cfg.seed).fork(41).permutation(table.rows);
    let request = PreprocessRequest {
        survival: Some(cfg.binning),
        ..Default::default()
    };
    let conditions: Vec<(usize, bool)> = (0..cfg.folds).flat_map(|f| [(f, false), (f, true)]).collect();
    parallel_map(&conditions, threads, |&(fold, is_cen)| {
        let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = {
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for (pos, &i) in perm.iter().enumerate() {
                if pos % cfg.folds == fold { te.push(i) } else { tr.push(i) }
            }
            (tr, te)
        };
        let (all, _) = preprocess(&table, &request, &train_idx)?;
        let (mut train_set, mut test) = (all.subset(&train_idx), all.subset(&test_idx));
        let setup = if is_cen { &cfg.cen } else { &cfg.crf };
        if !is_cen {
            train_set = Dataset::new(DenseMatrix::zeros(train_set.len(), 1), train_set.attributes, train_set.targets)?;
            test = Dataset::new(DenseMatrix::zeros(test.len(), 1), test.attributes, test.targets)?;
        }
        let model = setup.with_seed(cfg.seed + fold as u64).fit(&train_set, None)?;
        let report = evaluate(&model, &test, &cfg.quantiles, train_set.survival_targets(), cfg.binning.width)?;
        Ok(Support2Row {
            fold,
            model: if is_cen { "mlp-cen" } else { "crf" }.into(),
            acc_25: report.acc_at_quantiles[0],
            acc_50: report.acc_at_quantiles[1],
            acc_75: report.acc_at_quantiles[2],
            rae: report.rae.unwrap_or(f64::NAN),
        })
    })
}
