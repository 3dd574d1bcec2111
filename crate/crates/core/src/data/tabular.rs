use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discretize_survival;
use crate::dataset::{Dataset, Targets};
use crate::error::{CenError, Result};
use crate::numeric::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    EventTime,
    CensorFlag,
    Label,
    Ignore,
}

/// Which design matrix a feature column feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRole {
    Context,
    Attribute,
    #[default]
    Both,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub role: FeatureRole,
    /// For `censor-flag` columns: when true, a value of 1 marks an observed
    /// event (0 = censored) instead of marking censoring.
    #[serde(default)]
    pub event_indicator: bool,
}

fn default_missing() -> Vec<String> {
    ["", "NA", "N/A", "NaN", "nan", "?"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
    /// Cell values treated as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

impl Schema {
    /// Schema with the default missing-value markers.
    pub fn new(columns: Vec<ColumnSchema>) -> Schema {
        Schema {
            columns,
            missing: default_missing(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(CenError::Config(format!("duplicate column {:?} in schema", c.name)));
            }
        }
        let count = |k| self.columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Label) > 1 || count(ColumnKind::EventTime) > 1 || count(ColumnKind::CensorFlag) > 1 {
            return Err(CenError::Config("at most one label, event-time and censor-flag column".into()));
        }
        if (count(ColumnKind::EventTime) == 1) != (count(ColumnKind::CensorFlag) == 1) {
            return Err(CenError::Config("event-time and censor-flag columns come together".into()));
        }
        Ok(())
    }

    fn find(&self, kind: ColumnKind) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            Column::Text(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }
}

/// Typed columns read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub schema: Schema,
    pub columns: Vec<Column>,
    pub rows: usize,
}

impl TabularDataset {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.columns.iter().position(|c| c.name == name).map(|i| &self.columns[i])
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }
}

/// Numeric where every non-missing cell parses as a number, categorical otherwise.
pub fn infer_schema(headers: &[String], rows: &[Vec<String>], missing: &[String]) -> Schema {
    let columns = headers
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let numeric = rows
                .iter()
                .map(|r| r[j].trim())
                .filter(|v| !missing.iter().any(|m| m == v))
                .all(|v| v.parse::<f64>().is_ok());
            ColumnSchema {
                name: name.clone(),
                kind: if numeric { ColumnKind::Numeric } else { ColumnKind::Categorical },
                role: FeatureRole::Both,
                event_indicator: false,
            }
        })
        .collect();
    Schema {
        columns,
        missing: missing.to_vec(),
    }
}

/// Reads a header-first CSV. Without a schema, column kinds are inferred.
pub fn load_csv(path: &Path, schema: Option<&Schema>) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut raw = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CenError::Ingestion {
            row: i + 1,
            message: e.to_string(),
        })?;
        raw.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let schema = match schema {
        Some(s) => {
            s.validate()?;
            s.clone()
        }
        None => infer_schema(&headers, &raw, &default_missing()),
    };
    let mut positions = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let pos = headers.iter().position(|h| *h == c.name).ok_or_else(|| CenError::Ingestion {
            row: 0,
            message: format!("column {:?} from the schema is missing in the header", c.name),
        })?;
        positions.push(pos);
    }
    for h in &headers {
        if !schema.columns.iter().any(|c| &c.name == h) {
            log::warn!("column {h:?} is not in the schema and will be ignored");
        }
    }
    let is_missing = |v: &str| schema.missing.iter().any(|m| m == v);
    let mut columns = Vec::with_capacity(schema.columns.len());
    for (c, &pos) in schema.columns.iter().zip(&positions) {
        let col = match c.kind {
            ColumnKind::Numeric | ColumnKind::EventTime | ColumnKind::CensorFlag => {
                let mut v = Vec::with_capacity(raw.len());
                for (i, r) in raw.iter().enumerate() {
                    let cell = r[pos].trim();
                    if is_missing(cell) {
                        v.push(None);
                    } else {
                        let x: f64 = cell.parse().map_err(|_| CenError::Ingestion {
                            row: i + 1,
                            message: format!("column {:?}: cannot parse {cell:?} as a number", c.name),
                        })?;
                        if !x.is_finite() {
                            v.push(None);
                        } else {
                            v.push(Some(x));
                        }
                    }
                }
                Column::Numeric(v)
            }
            ColumnKind::Categorical | ColumnKind::Label | ColumnKind::Ignore => Column::Text(
                raw.iter()
                    .map(|r| {
                        let cell = r[pos].trim();
                        (!is_missing(cell)).then(|| cell.to_string())
                    })
                    .collect(),
            ),
        };
        columns.push(col);
    }
    Ok(TabularDataset {
        schema,
        columns,
        rows: raw.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalBinning {
    pub horizon: f64,
    pub width: f64,
}

/// Overrides for the context/attribute split and survival binning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessRequest {
    /// Column names feeding `C`; defaults to columns with role `context` or `both`.
    pub context_columns: Option<Vec<String>>,
    /// Column names feeding `X`; defaults to columns with role `attribute` or `both`.
    pub attribute_columns: Option<Vec<String>>,
    pub survival: Option<SurvivalBinning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureTransform {
    Standardize { mean: f64, std: f64 },
    OneHot { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePlan {
    pub column: String,
    pub transform: FeatureTransform,
}

impl FeaturePlan {
    fn names(&self) -> Vec<String> {
        match &self.transform {
            FeatureTransform::Standardize { .. } => vec![self.column.clone()],
            FeatureTransform::OneHot { levels } => levels.iter().map(|l| format!("{}={l}", self.column)).collect(),
        }
    }
}

/// Fitted preprocessing: train-split statistics, one-hot maps and the `C`/`X` split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub context: Vec<FeaturePlan>,
    pub attributes: Vec<FeaturePlan>,
    pub na_fill: f64,
    pub label_levels: Option<Vec<String>>,
    pub survival: Option<SurvivalBinning>,
}

pub const NA_FILL: f64 = -1.0;

impl PreprocessPlan {
    pub fn fit(ds: &TabularDataset, request: &PreprocessRequest, train_idx: &[usize]) -> Result<PreprocessPlan> {
        if let Some(&bad) = train_idx.iter().find(|&&i| i >= ds.rows) {
            return Err(CenError::invalid(format!("train index {bad} out of range")));
        }
        let schema = &ds.schema;
        let is_feature = |k: ColumnKind| matches!(k, ColumnKind::Numeric | ColumnKind::Categorical);
        let select = |names: &Option<Vec<String>>, roles: [FeatureRole; 2]| -> Result<Vec<usize>> {
            match names {
                Some(list) => list
                    .iter()
                    .map(|n| {
                        let i = schema
                            .columns
                            .iter()
                            .position(|c| &c.name == n)
                            .ok_or_else(|| CenError::Config(format!("unknown column {n:?}")))?;
                        if !is_feature(schema.columns[i].kind) {
                            return Err(CenError::Config(format!("column {n:?} is not a feature")));
                        }
                        Ok(i)
                    })
                    .collect(),
                None => Ok(schema
                    .columns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| is_feature(c.kind) && roles.contains(&c.role))
                    .map(|(i, _)| i)
                    .collect()),
            }
        };
        let ctx = select(&request.context_columns, [FeatureRole::Context, FeatureRole::Both])?;
        let attr = select(&request.attribute_columns, [FeatureRole::Attribute, FeatureRole::Both])?;
        if ctx.is_empty() || attr.is_empty() {
            return Err(CenError::Config("need at least one context and one attribute column".into()));
        }
        let fit_col = |i: usize| -> FeaturePlan {
            let transform = match &ds.columns[i] {
                Column::Numeric(v) => {
                    let vals: Vec<f64> = train_idx.iter().filter_map(|&r| v[r]).collect();
                    let n = vals.len() as f64;
                    let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / n };
                    let var = if vals.is_empty() {
                        0.0
                    } else {
                        vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
                    };
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    FeatureTransform::Standardize { mean, std }
                }
                Column::Text(v) => {
                    let levels: BTreeSet<&str> = train_idx.iter().filter_map(|&r| v[r].as_deref()).collect();
                    FeatureTransform::OneHot {
                        levels: levels.into_iter().map(str::to_string).collect(),
                    }
                }
            };
            FeaturePlan {
                column: schema.columns[i].name.clone(),
                transform,
            }
        };
        let label_levels = match schema.find(ColumnKind::Label) {
            Some(i) => {
                let Column::Text(v) = &ds.columns[i] else { unreachable!() };
                let levels: BTreeSet<&str> = v.iter().flatten().map(String::as_str).collect();
                let mut levels: Vec<String> = levels.into_iter().map(str::to_string).collect();
                if levels.iter().all(|l| l.parse::<u64>().is_ok()) {
                    levels.sort_by_key(|l| l.parse::<u64>().unwrap_or(0));
                }
                Some(levels)
            }
            None => None,
        };
        if label_levels.is_none() && schema.find(ColumnKind::EventTime).is_some() && request.survival.is_none() {
            return Err(CenError::Config("survival data needs a `survival` binning (horizon, width)".into()));
        }
        Ok(PreprocessPlan {
            context: ctx.into_iter().map(fit_col).collect(),
            attributes: attr.into_iter().map(fit_col).collect(),
            na_fill: NA_FILL,
            label_levels,
            survival: request.survival,
        })
    }

    pub fn context_names(&self) -> Vec<String> {
        self.context.iter().flat_map(FeaturePlan::names).collect()
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().flat_map(FeaturePlan::names).collect()
    }

    fn design(&self, ds: &TabularDataset, plans: &[FeaturePlan], unseen: &mut usize) -> Result<DenseMatrix> {
        let width: usize = plans.iter().map(|p| p.names().len()).sum();
        let mut m = DenseMatrix::zeros(ds.rows, width);
        let mut offset = 0;
        for p in plans {
            let col = ds
                .column(&p.column)
                .ok_or_else(|| CenError::invalid(format!("column {:?} missing from dataset", p.column)))?;
            match (&p.transform, col) {
                (FeatureTransform::Standardize { mean, std }, Column::Numeric(v)) => {
                    for (r, x) in v.iter().enumerate() {
                        // fill after standardizing so −1 stays a sentinel
                        m.set(r, offset, x.map_or(self.na_fill, |x| (x - mean) / std));
                    }
                    offset += 1;
                }
                (FeatureTransform::OneHot { levels }, Column::Text(v)) => {
                    for (r, x) in v.iter().enumerate() {
                        if let Some(x) = x {
                            match levels.iter().position(|l| l == x) {
                                Some(k) => m.set(r, offset + k, 1.0),
                                None => *unseen += 1,
                            }
                        }
                    }
                    offset += levels.len();
                }
                _ => return Err(CenError::invalid(format!("column {:?} changed type", p.column))),
            }
        }
        Ok(m)
    }

    /// Applies the fitted plan. Also returns the number of categorical cells
    /// whose level was not seen during fitting (encoded as all zeros).
    pub fn transform(&self, ds: &TabularDataset) -> Result<(Dataset, usize)> {
        let mut unseen = 0;
        let c = self.design(ds, &self.context, &mut unseen)?;
        let x = self.design(ds, &self.attributes, &mut unseen)?;
        if unseen > 0 {
            log::warn!("{unseen} categorical cells had levels unseen during fitting; encoded as all zeros");
        }
        let targets = if let Some(levels) = &self.label_levels {
            let i = ds
                .schema
                .find(ColumnKind::Label)
                .ok_or_else(|| CenError::invalid("label column missing"))?;
            let Column::Text(v) = &ds.columns[i] else { unreachable!() };
            let mut y = Vec::with_capacity(ds.rows);
            for (r, val) in v.iter().enumerate() {
                let val = val.as_ref().ok_or_else(|| CenError::Ingestion {
                    row: r + 1,
                    message: "missing label".into(),
                })?;
                y.push(levels.iter().position(|l| l == val).ok_or_else(|| CenError::Ingestion {
                    row: r + 1,
                    message: format!("label {val:?} not seen during fitting"),
                })?);
            }
            Targets::Classes(y)
        } else if let Some(bin) = self.survival {
            let ti = ds.schema.find(ColumnKind::EventTime).ok_or_else(|| CenError::invalid("event-time column missing"))?;
            let fi = ds.schema.find(ColumnKind::CensorFlag).ok_or_else(|| CenError::invalid("censor-flag column missing"))?;
            let (Column::Numeric(times), Column::Numeric(flags)) = (&ds.columns[ti], &ds.columns[fi]) else {
                unreachable!()
            };
            let event_indicator = ds.schema.columns[fi].event_indicator;
            let mut t = Vec::with_capacity(ds.rows);
            let mut cens = Vec::with_capacity(ds.rows);
            for r in 0..ds.rows {
                let time = times[r].ok_or_else(|| CenError::Ingestion {
                    row: r + 1,
                    message: "missing event time".into(),
                })?;
                let flag = flags[r].ok_or_else(|| CenError::Ingestion {
                    row: r + 1,
                    message: "missing censoring flag".into(),
                })?;
                t.push(time);
                cens.push((flag != 0.0) != event_indicator);
            }
            Targets::Survival(discretize_survival(&t, &cens, bin.horizon, bin.width)?.0)
        } else {
            return Err(CenError::Config("schema has neither a label nor survival columns".into()));
        };
        Ok((Dataset::new(c, x, targets)?, unseen))
    }
}

/// Fits a plan on `train_idx` and applies it to every row.
pub fn preprocess(ds: &TabularDataset, request: &PreprocessRequest, train_idx: &[usize]) -> Result<(Dataset, PreprocessPlan)> {
    let plan = PreprocessPlan::fit(ds, request, train_idx)?;
    let (data, _) = plan.transform(ds)?;
    Ok((data, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema() -> Schema {
        serde_json::from_str(
            r#"{"columns": [
                {"name": "age", "kind": "numeric"},
                {"name": "sex", "kind": "categorical", "role": "attribute"},
                {"name": "y", "kind": "label"}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_data_section() {
        let f = write("age,sex,y\n");
        let ds = load_csv(f.path(), Some(&schema())).unwrap();
        assert_eq!(ds.rows, 0);
        assert_eq!(ds.schema.columns.len(), 3);
    }

    #[test]
    fn shapes_and_missing_cells() {
        let f = write("age,sex,y\n30,m,0\n,f,1\n50,NA,1\n");
        let ds = load_csv(f.path(), Some(&schema())).unwrap();
        assert_eq!(ds.rows, 3);
        assert_eq!(ds.missing_count(), 2);
        let inferred = load_csv(f.path(), None).unwrap();
        assert_eq!(inferred.schema.columns[0].kind, ColumnKind::Numeric);
        assert_eq!(inferred.schema.columns[1].kind, ColumnKind::Categorical);
    }

    #[test]
    fn ingestion_errors_name_the_row() {
        let f = write("age,sex,y\n30,m,0\nabc,f,1\n");
        match load_csv(f.path(), Some(&schema())) {
            Err(CenError::Ingestion { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let f = write("age,sex,y\n30,m,0\n40,f\n");
        assert!(matches!(load_csv(f.path(), Some(&schema())), Err(CenError::Ingestion { row: 2, .. })));
    }

    #[test]
    fn standardization_fixture() {
        // train rows 0..3: ages 20, 30, 40 -> mean 30, std sqrt(200/3)
        let f = write("age,sex,y\n20,m,0\n30,f,1\n40,m,1\n,x,0\n");
        let ds = load_csv(f.path(), Some(&schema())).unwrap();
        let (data, plan) = preprocess(&ds, &PreprocessRequest::default(), &[0, 1, 2]).unwrap();
        let sd = (200.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(data.contexts.get(0, 0), -10.0 / sd, epsilon = 1e-15);
        assert_abs_diff_eq!(data.contexts.get(2, 0), 10.0 / sd, epsilon = 1e-15);
        assert_eq!(data.contexts.get(3, 0), -1.0);
        assert_eq!(plan.attribute_names(), vec!["age", "sex=f", "sex=m"]);
        // 3 columns: age + 2 levels; unseen "x" becomes all zeros
        assert_eq!(data.attributes.row(3), &[-1.0, 0.0, 0.0]);
        assert_eq!(data.labels().unwrap(), &[0, 1, 1, 0]);
        let (_, unseen) = plan.transform(&ds).unwrap();
        assert_eq!(unseen, 1);
    }

    #[test]
    fn constant_column_and_three_levels() {
        let f = write("age,sex,y\n5,a,0\n5,b,1\n5,c,1\n");
        let ds = load_csv(f.path(), Some(&schema())).unwrap();
        let (data, plan) = preprocess(&ds, &PreprocessRequest::default(), &[0, 1, 2]).unwrap();
        assert_eq!(data.contexts.column(0), vec![0.0; 3]);
        assert_eq!(plan.attributes[1].names().len(), 3);
    }

    #[test]
    fn transform_is_deterministic() {
        let f = write("age,sex,y\n20,m,0\n30,f,1\n40,m,1\n");
        let ds = load_csv(f.path(), Some(&schema())).unwrap();
        let plan = PreprocessPlan::fit(&ds, &PreprocessRequest::default(), &[0, 1]).unwrap();
        assert_eq!(plan.transform(&ds).unwrap(), plan.transform(&ds).unwrap());
    }

    #[test]
    fn survival_columns() {
        let schema: Schema = serde_json::from_str(
            r#"{"columns": [
                {"name": "age", "kind": "numeric"},
                {"name": "t", "kind": "event-time"},
                {"name": "death", "kind": "censor-flag", "event_indicator": true}
            ]}"#,
        )
        .unwrap();
        let f = write("age,t,death\n60,3,1\n70,10,0\n80,30,1\n");
        let ds = load_csv(f.path(), Some(&schema)).unwrap();
        let req = PreprocessRequest {
            survival: Some(SurvivalBinning { horizon: 21.0, width: 7.0 }),
            ..Default::default()
        };
        let (data, _) = preprocess(&ds, &req, &[0, 1, 2]).unwrap();
        use crate::explanations::SurvivalTarget as S;
        assert_eq!(data.survival_targets().unwrap(), &[S::event(0), S::censored(1), S::censored(3)]);
        assert!(preprocess(&ds, &PreprocessRequest::default(), &[0]).is_err());
    }
}
