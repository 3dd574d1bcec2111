use serde::{Deserialize, Serialize};

use crate::error::{CenError, Result};
use crate::explanations::SurvivalTarget;
use crate::numeric::{DenseMatrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Targets {
    Classes(Vec<usize>),
    Survival(Vec<SurvivalTarget>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Survival(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Survival(v) => Targets::Survival(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Contexts `C`, attributes `X` and targets `Y` with one row per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub contexts: DenseMatrix,
    pub attributes: DenseMatrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(contexts: DenseMatrix, attributes: DenseMatrix, targets: Targets) -> Result<Self> {
        if contexts.rows() != attributes.rows() || contexts.rows() != targets.len() {
            return Err(CenError::shape(
                "Dataset::new",
                format!("{} rows everywhere", contexts.rows()),
                format!(
                    "C={}, X={}, Y={}",
                    contexts.rows(),
                    attributes.rows(),
                    targets.len()
                ),
            ));
        }
        Ok(Dataset {
            contexts,
            attributes,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(v) => Some(v),
            Targets::Survival(_) => None,
        }
    }

    pub fn survival_targets(&self) -> Option<&[SurvivalTarget]> {
        match &self.targets {
            Targets::Survival(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            contexts: self.contexts.select_rows(idx),
            attributes: self.attributes.select_rows(idx),
            targets: self.targets.select(idx),
        }
    }

    /// Same rows with a different attribute matrix.
    pub fn with_attributes(&self, attributes: DenseMatrix) -> Result<Dataset> {
        Dataset::new(self.contexts.clone(), attributes, self.targets.clone())
    }

    /// Seeded split into `(first, second)` where `second` holds `⌊fraction·n⌋` rows.
    pub fn split(&self, fraction: f64, rng: &mut Rng) -> (Dataset, Dataset) {
        let perm = rng.permutation(self.len());
        let cut = self.len() - (fraction * self.len() as f64).floor() as usize;
        (self.subset(&perm[..cut]), self.subset(&perm[cut..]))
    }
}

/// A view of selected rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(CenError::invalid(format!(
                "batch index {bad} out of range for {} rows",
                data.len()
            )));
        }
        Ok(Batch { data, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
