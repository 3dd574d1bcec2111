//! Versioned JSON checkpoints.
//!
//! A checkpoint is a UTF-8 JSON document. Matrices are stored as
//! `{"rows", "cols", "data"}` with `data` flattened row-major; floats are
//! written in shortest round-trip decimal form, so there is no byte order to
//! track and a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreprocessPlan, Schema};
use crate::error::{CenError, Result};
use crate::model::CenModel;

pub const CHECKPOINT_FORMAT: &str = "cen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: CenModel,
    #[serde(default)]
    pub context_names: Vec<String>,
    #[serde(default)]
    pub attribute_names: Vec<String>,
    /// Fitted preprocessing for CSV data.
    #[serde(default)]
    pub preprocess: Option<PreprocessPlan>,
    /// Column schema of the training CSV, reused when reading new files.
    #[serde(default)]
    pub schema: Option<Schema>,
    /// Run configuration the model was trained with.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(model: CenModel) -> Self {
        let context_names = (0..model.context_dim()).map(|i| format!("c{i}")).collect();
        let attribute_names = (0..model.attribute_dim()).map(|i| format!("x{i}")).collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            context_names,
            attribute_names,
            preprocess: None,
            schema: None,
            config: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CenError::invalid(format!("not a checkpoint (format {:?})", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CenError::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.model.validate()?;
        if ckpt.context_names.len() != ckpt.model.context_dim() {
            return Err(CenError::shape("checkpoint context names", ckpt.model.context_dim(), ckpt.context_names.len()));
        }
        if ckpt.attribute_names.len() != ckpt.model.attribute_dim() {
            return Err(CenError::shape(
                "checkpoint attribute names",
                ckpt.model.attribute_dim(),
                ckpt.attribute_names.len(),
            ));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderSpec, FamilySpec, ModelSpec, Regularization};
    use crate::numeric::{Parameters, Rng};

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::new(4);
        for spec in [
            ModelSpec {
                family: FamilySpec::Linear { classes: 3 },
                encoder: EncoderSpec::Mlp { hidden: vec![5, 4], dropout: 0.1 },
                dictionary_size: Some(3),
                learn_omega: false,
            },
            ModelSpec {
                family: FamilySpec::Survival { steps: 4 },
                encoder: EncoderSpec::Recurrent { hidden: 3 },
                dictionary_size: Some(2),
                learn_omega: true,
            },
        ] {
            let model = spec.build(3, 2, Regularization::default(), &mut rng).unwrap();
            let ckpt = Checkpoint::new(model.clone());
            let text = serde_json::to_string(&ckpt).unwrap();
            let back = Checkpoint::from_json(&text).unwrap();
            assert_eq!(back.model, model);
            assert_eq!(back.model.flatten(), model.flatten());
        }
    }

    #[test]
    fn rejects_bad_versions_and_shapes() {
        let mut rng = Rng::new(5);
        let spec = ModelSpec {
            family: FamilySpec::Linear { classes: 2 },
            encoder: EncoderSpec::default(),
            dictionary_size: None,
            learn_omega: false,
        };
        let ckpt = Checkpoint::new(spec.build(2, 2, Regularization::default(), &mut rng).unwrap());
        let mut v: serde_json::Value = serde_json::to_value(&ckpt).unwrap();
        v["version"] = 99.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::to_value(&ckpt).unwrap();
        v["model"]["encoder"]["layers"][0]["weights"]["rows"] = 7.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }
}
