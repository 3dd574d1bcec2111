//! Python bindings: train from a JSON run config, load checkpoints, and query
//! predictions and explanations.

use std::path::PathBuf;

use cen::checkpoint::Checkpoint;
use cen::config::RunConfig;
use cen::metrics::evaluate;
use cen::model::{Explanation, Prediction};
use cen::training::train;
use cen::{CenError, Omega, Rng, SurvivalExplanation};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: CenError) -> PyErr {
    match e {
        CenError::Config(_) | CenError::InvalidInput(_) | CenError::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A trained model together with its column names.
#[pyclass(name = "Model", module = "cen_py")]
struct PyModel {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            ckpt: Checkpoint::load(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            ckpt: Checkpoint::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.ckpt).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(py_err)
    }

    #[getter]
    fn context_names(&self) -> Vec<String> {
        self.ckpt.context_names.clone()
    }

    #[getter]
    fn attribute_names(&self) -> Vec<String> {
        self.ckpt.attribute_names.clone()
    }

    /// Class probabilities (linear family) or outcome probabilities `p(0..=m)` (survival).
    fn predict_proba(&self, c: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = self.ckpt.model.forward(&c, &x).map_err(py_err)?;
        Ok(match f.prediction {
            Prediction::Classes(p) => p,
            Prediction::Survival(lp) => lp.into_iter().map(f64::exp).collect(),
        })
    }

    /// Explanation for context `c` as a dict with `weights` and, for the linear family, `bias`.
    fn explain<'py>(&self, py: Python<'py>, c: Vec<f64>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let out = pyo3::types::PyDict::new(py);
        match self.ckpt.model.explanation(&c).map_err(py_err)? {
            Explanation::Linear(e) => {
                out.set_item("weights", e.weights.to_rows())?;
                out.set_item("bias", e.bias)?;
            }
            Explanation::Survival(e) => {
                out.set_item("weights", e.weights.to_rows())?;
            }
        }
        let (_, attention) = self.ckpt.model.generate_theta(&c).map_err(py_err)?;
        out.set_item("attention", attention)?;
        Ok(out)
    }
}

/// Trains from a JSON run config; returns the model and the test metrics as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, seed=None))]
fn train_model(py: Python<'_>, config_json: &str, seed: Option<u64>) -> PyResult<(PyModel, String)> {
    let mut cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(py_err)?;
    py.detach(|| {
        let data = cfg.prepare()?;
        let tc = cfg.train_config();
        let model = cfg.model.build(
            data.train.context_dim(),
            data.train.attribute_dim(),
            tc.regularization,
            &mut Rng::new(cfg.seed).fork(7),
        )?;
        let (model, _) = train(model, &data.train, None, &tc)?;
        let metrics = evaluate(&model, &data.test, &cfg.quantiles, data.survival_reference(), data.width)?;
        let mut ckpt = Checkpoint::new(model);
        ckpt.context_names = data.context_names;
        ckpt.attribute_names = data.attribute_names;
        ckpt.preprocess = data.plan;
        ckpt.schema = data.schema;
        ckpt.config = Some(serde_json::to_value(&cfg)?);
        Ok((PyModel { ckpt }, serde_json::to_string(&metrics)?))
    })
    .map_err(py_err)
}

/// `log p(j)`, `j = 0..=m`, of a survival chain with per-interval weight rows.
#[pyfunction]
#[pyo3(signature = (weights, x, omega=(0.0, 0.0, 0.0)))]
fn survival_log_probs(weights: Vec<Vec<f64>>, x: Vec<f64>, omega: (f64, f64, f64)) -> PyResult<Vec<f64>> {
    let w = cen::DenseMatrix::from_rows(&weights).map_err(py_err)?;
    let omega = Omega {
        w00: omega.0,
        w01: omega.1,
        w11: omega.2,
    };
    SurvivalExplanation::new(w, omega)
        .and_then(|e| e.log_probs(&x))
        .map_err(py_err)
}

/// Runs the command-line interface with `args` (without the program name); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("cen".to_string()).chain(args).collect();
    py.detach(|| cen::cli::run(argv))
}

#[pymodule]
fn cen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(survival_log_probs, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
