//! Run configuration shared by the `train`, `eval`, `explain` and `diagnose` commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_blobs, gen_xor_context, interval_count, load_csv, preprocess, BlobsSpec, PreprocessPlan, PreprocessRequest,
    Schema, TabularDataset, XorSpec,
};
use crate::dataset::Dataset;
use crate::error::{CenError, Result};
use crate::explanations::SurvivalTarget;
use crate::model::{EncoderSpec, FamilySpec, ModelSpec};
use crate::numeric::Rng;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    XorContext(XorSpec),
    Blobs(BlobsSpec),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::XorContext(XorSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// JSON column schema; inferred from the file when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub preprocess: PreprocessRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSource,
    /// Share of rows held out for testing.
    pub test_fraction: f64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Survival-time quantiles for Acc@K.
    pub quantiles: Vec<f64>,
    /// Seeds data generation, the split and training (overrides `train.seed`).
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::default(),
            test_fraction: 0.2,
            model: ModelSpec {
                family: FamilySpec::Linear { classes: 2 },
                encoder: EncoderSpec::Mlp {
                    hidden: vec![],
                    dropout: 0.0,
                },
                dictionary_size: Some(4),
                learn_omega: false,
            },
            train: TrainConfig {
                learning_rate: 0.01,
                ..Default::default()
            },
            quantiles: vec![0.25, 0.5, 0.75],
            seed: 0,
        }
    }
}

/// Train/test datasets plus the naming and preprocessing needed for reports.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub context_names: Vec<String>,
    pub attribute_names: Vec<String>,
    pub plan: Option<PreprocessPlan>,
    pub schema: Option<Schema>,
    /// Interval width for survival data (1 otherwise).
    pub width: f64,
}

impl PreparedData {
    pub fn survival_reference(&self) -> Option<&[SurvivalTarget]> {
        self.train.survival_targets()
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CenError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CenError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        // relative data paths are taken from the config file's directory
        if let (DataSource::Csv(src), Some(dir)) = (&mut cfg.data, path.parent()) {
            if src.path.is_relative() {
                src.path = dir.join(&src.path);
            }
            if let Some(s) = src.schema.as_mut().filter(|s| s.is_relative()) {
                *s = dir.join(&*s);
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CenError::Config(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return bad("quantiles must lie in (0, 1)".into());
        }
        self.train.validate()?;
        match (&self.model.family, &self.data) {
            (FamilySpec::Linear { classes }, _) if *classes < 2 => return bad("classes must be >= 2".into()),
            (FamilySpec::Survival { .. }, DataSource::XorContext(_) | DataSource::Blobs(_)) => {
                return bad("synthetic data sources have class labels; use the linear family".into())
            }
            (FamilySpec::Survival { .. }, _) if self.train.regularization.entropy_weight != 0.0 => {
                return bad(
                    "entropy regularization is only available for the linear family; \
                     set train.regularization.entropy_weight to 0"
                        .into(),
                )
            }
            _ => {}
        }
        if let DataSource::Csv(src) = &self.data {
            if !src.path.is_file() {
                return bad(format!("data file {} does not exist", src.path.display()));
            }
            if let Some(s) = &src.schema {
                if !s.is_file() {
                    return bad(format!("schema file {} does not exist", s.display()));
                }
            }
            match (&self.model.family, &src.preprocess.survival) {
                (FamilySpec::Survival { steps }, Some(b)) => {
                    let m = interval_count(b.horizon, b.width).map_err(|e| CenError::Config(e.to_string()))?;
                    if *steps != m {
                        return bad(format!(
                            "survival steps {steps} do not match horizon/width binning ({m} intervals)"
                        ));
                    }
                }
                (FamilySpec::Survival { .. }, None) => {
                    return bad("the survival family needs preprocess.survival binning".into())
                }
                (FamilySpec::Linear { .. }, Some(_)) => {
                    return bad("survival binning requires the survival family".into())
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Generates or loads the data and splits it with the run seed.
    pub fn prepare(&self) -> Result<PreparedData> {
        let base = Rng::new(self.seed);
        let synthetic = |data: Dataset| {
            let (train, test) = data.split(self.test_fraction, &mut base.fork(32));
            PreparedData {
                context_names: numbered("c", train.context_dim()),
                attribute_names: numbered("x", train.attribute_dim()),
                train,
                test,
                plan: None,
                schema: None,
                width: 1.0,
            }
        };
        match &self.data {
            DataSource::XorContext(spec) => Ok(synthetic(gen_xor_context(spec, &mut base.fork(31))?)),
            DataSource::Blobs(spec) => Ok(synthetic(gen_blobs(spec, &mut base.fork(31))?)),
            DataSource::Csv(src) => {
                let table = load_table(&src.path, src.schema.as_deref())?;
                let perm = base.fork(32).permutation(table.rows);
                let n_test = (self.test_fraction * table.rows as f64).floor() as usize;
                if n_test == 0 || n_test >= table.rows {
                    return Err(CenError::invalid(format!(
                        "cannot split {} rows with test_fraction {}",
                        table.rows, self.test_fraction
                    )));
                }
                let (train_idx, test_idx) = perm.split_at(table.rows - n_test);
                let (all, plan) = preprocess(&table, &src.preprocess, train_idx)?;
                Ok(PreparedData {
                    train: all.subset(train_idx),
                    test: all.subset(test_idx),
                    context_names: plan.context_names(),
                    attribute_names: plan.attribute_names(),
                    width: plan.survival.map_or(1.0, |b| b.width),
                    plan: Some(plan),
                    schema: Some(table.schema.clone()),
                })
            }
        }
    }

    /// The training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Reads a CSV with an explicit schema file or an inferred one.
pub fn load_table(path: &Path, schema: Option<&Path>) -> Result<TabularDataset> {
    let schema = schema.map(Schema::from_json_file).transpose()?;
    load_csv(path, schema.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"learning_rat": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"source": "xor-context", "radios": 1}}"#).is_err());
    }

    #[test]
    fn parses_sources() {
        let cfg = RunConfig::from_json(
            r#"{"data": {"source": "blobs", "n": 50, "dim": 3}, "seed": 4,
                "model": {"family": {"kind": "linear", "classes": 2}, "dictionary_size": 2}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.data, DataSource::Blobs(BlobsSpec { n: 50, dim: 3, .. })));
        cfg.validate().unwrap();
        let prepared = cfg.prepare().unwrap();
        assert_eq!(prepared.train.len() + prepared.test.len(), 50);
        assert_eq!(prepared.test.len(), 10);
    }

    #[test]
    fn missing_csv_is_a_config_error() {
        let cfg = RunConfig::from_json(r#"{"data": {"source": "csv", "path": "/nonexistent/x.csv"}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(CenError::Config(_))));
    }

    #[test]
    fn survival_steps_must_match_binning() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,t,d\n1,2,1\n").unwrap();
        let text = format!(
            r#"{{"data": {{"source": "csv", "path": {:?}, "preprocess": {{"survival": {{"horizon": 10, "width": 2}}}}}},
                "model": {{"family": {{"kind": "survival", "steps": 4}}}}}}"#,
            p
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CenError::Config(_))));
    }

    #[test]
    fn preparation_is_deterministic() {
        let cfg = RunConfig::default();
        let a = cfg.prepare().unwrap();
        let b = cfg.prepare().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }
}
