//! Python bindings. Rows are lists of floats; missing cells are `None`.

use std::collections::BTreeMap;

use pcadist::dataio::CsvOptions;
use pcadist::{
    Components, DataMatrix, PcaConfig, PredictionTask, PrincipalModel, ResampleConfig, Resampling,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(pcadist_py, PcadistError, PyException);

fn err(e: pcadist::Error) -> PyErr {
    PcadistError::new_err(e.to_string())
}

fn data_matrix(rows: Vec<Vec<f64>>, columns: Option<Vec<String>>) -> PyResult<DataMatrix> {
    let data = DataMatrix::from_rows(&rows).map_err(err)?;
    match columns {
        Some(names) => data.with_column_names(names).map_err(err),
        None => Ok(data),
    }
}

/// `n` is a component count, `variance` a cumulative explained-variance
/// fraction; at most one may be given.
fn pca_config(n: Option<usize>, variance: Option<f64>, standardize: bool) -> PyResult<PcaConfig> {
    let components = match (n, variance) {
        (Some(_), Some(_)) => {
            return Err(PyValueError::new_err("give either n or variance, not both"))
        }
        (Some(n), None) => Components::Count(n),
        (None, Some(f)) => Components::VarianceFraction(f),
        (None, None) => Components::default(),
    };
    components.validate().map_err(err)?;
    Ok(PcaConfig {
        components,
        standardize,
    })
}

fn task(record: Vec<Option<f64>>) -> PyResult<PredictionTask> {
    PredictionTask::from_record(&record).map_err(err)
}

/// Outcome of one prediction.
#[pyclass(name = "Prediction", module = "pcadist_py", frozen, get_all)]
struct Prediction {
    /// Predicted values in data units, keyed by column index.
    imputed: BTreeMap<usize, f64>,
    t_pred: Vec<f64>,
    distance: f64,
    unique: bool,
    distance_invariant: bool,
    intersects: bool,
    /// The input record with the predicted cells filled in.
    completed: Vec<f64>,
}

#[pymethods]
impl Prediction {
    fn __repr__(&self) -> String {
        format!(
            "Prediction(imputed={:?}, distance={}, unique={}, distance_invariant={})",
            self.imputed, self.distance, self.unique, self.distance_invariant
        )
    }
}

/// A fitted shifted principal subspace.
#[pyclass(name = "Model", module = "pcadist_py", frozen)]
struct Model {
    inner: PrincipalModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (rows, n=None, variance=None, standardize=true, columns=None))]
    fn fit(
        rows: Vec<Vec<f64>>,
        n: Option<usize>,
        variance: Option<f64>,
        standardize: bool,
        columns: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let data = data_matrix(rows, columns)?;
        let config = pca_config(n, variance, standardize)?;
        let inner = pcadist::fit_pca(&data, &config).map_err(err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = PrincipalModel::load_json(path).map_err(err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_json(path).map_err(err)
    }

    /// Fills the `None` cells of `record`.
    fn impute(&self, record: Vec<Option<f64>>) -> PyResult<Prediction> {
        let task = task(record)?;
        let res = pcadist::impute_record(&self.inner, &task).map_err(err)?;
        Ok(Prediction {
            completed: res.completed(&task),
            intersects: res.intersects(),
            imputed: res.imputed,
            t_pred: res.t_pred,
            distance: res.distance,
            unique: res.unique,
            distance_invariant: res.distance_invariant,
        })
    }

    /// Distance from a complete point to the subspace, in scaled units.
    fn distance(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.distance(&point).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names.clone()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.scaling.means.clone()
    }

    #[getter]
    fn stds(&self) -> Vec<f64> {
        self.inner.scaling.stds.clone()
    }

    /// One list of length `dim` per component.
    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        let q = self.inner.components.matrix();
        q.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    #[getter]
    fn explained_variance(&self) -> Vec<f64> {
        self.inner.explained_variance.clone()
    }

    #[getter]
    fn clamped(&self) -> bool {
        self.inner.clamped
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={}, n={})", self.inner.dim(), self.inner.n())
    }
}

#[pyclass(name = "Influence", module = "pcadist_py", frozen, get_all)]
struct Influence {
    n: usize,
    absolute: Vec<f64>,
    relative: Vec<f64>,
    baseline: f64,
    baseline_zero: bool,
    /// Row indices ordered from most to least influential.
    ranking: Vec<usize>,
}

#[pyfunction]
#[pyo3(signature = (rows, n=None, variance=None, standardize=true))]
fn influence_scores(
    rows: Vec<Vec<f64>>,
    n: Option<usize>,
    variance: Option<f64>,
    standardize: bool,
) -> PyResult<Influence> {
    let data = data_matrix(rows, None)?;
    let config = pca_config(n, variance, standardize)?;
    let r = pcadist::influence_scores(&data, &config).map_err(err)?;
    Ok(Influence {
        ranking: r.ranking(),
        n: r.n,
        absolute: r.absolute,
        relative: r.relative,
        baseline: r.baseline,
        baseline_zero: r.baseline_zero,
    })
}

#[pyclass(name = "Validation", module = "pcadist_py", frozen, get_all)]
struct Validation {
    target: usize,
    n: usize,
    actual: Vec<f64>,
    predicted: Vec<f64>,
    mse: f64,
    baseline_mse: f64,
}

#[pyfunction]
#[pyo3(signature = (rows, target, n=None, variance=None, standardize=true))]
fn loo_cv(
    rows: Vec<Vec<f64>>,
    target: usize,
    n: Option<usize>,
    variance: Option<f64>,
    standardize: bool,
) -> PyResult<Validation> {
    let data = data_matrix(rows, None)?;
    let config = pca_config(n, variance, standardize)?;
    let r = pcadist::loo_cv(&data, &config, target).map_err(err)?;
    Ok(Validation {
        target: r.target,
        n: r.n,
        actual: r.actual,
        predicted: r.predicted,
        mse: r.mse,
        baseline_mse: r.baseline_mse,
    })
}

#[pyclass(name = "Interval", module = "pcadist_py", frozen, get_all)]
struct Interval {
    column: usize,
    point: f64,
    lower: f64,
    upper: f64,
    level: f64,
    replicates: usize,
    skipped: usize,
    seed: u64,
}

/// Percentile intervals for the `None` cells of `record`. `method` is
/// `"bootstrap"` or `"jackknife"` (leave-`p`-out).
#[pyfunction]
#[pyo3(signature = (
    rows, record, n=None, variance=None, standardize=true,
    method="bootstrap", p=1, replicates=500, level=0.9, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn resample_ci(
    rows: Vec<Vec<f64>>,
    record: Vec<Option<f64>>,
    n: Option<usize>,
    variance: Option<f64>,
    standardize: bool,
    method: &str,
    p: usize,
    replicates: usize,
    level: f64,
    seed: u64,
) -> PyResult<Vec<Interval>> {
    let data = data_matrix(rows, None)?;
    let config = pca_config(n, variance, standardize)?;
    let method = match method {
        "bootstrap" => Resampling::Bootstrap,
        "jackknife" => Resampling::Jackknife { p },
        other => {
            return Err(PyValueError::new_err(format!(
                "method must be 'bootstrap' or 'jackknife', got {other:?}"
            )))
        }
    };
    let resample = ResampleConfig {
        method,
        replicates,
        level,
        seed,
    };
    let estimates =
        pcadist::resample_ci(&data, &config, &task(record)?, &resample).map_err(err)?;
    Ok(estimates
        .into_iter()
        .map(|e| Interval {
            column: e.column,
            point: e.point,
            lower: e.lower,
            upper: e.upper,
            level: e.level,
            replicates: e.replicates,
            skipped: e.skipped,
            seed: e.seed,
        })
        .collect())
}

/// Reads a CSV file; returns `(column_names, rows)` with `None` for missing
/// cells.
type Table = (Vec<String>, Vec<Vec<Option<f64>>>);

#[pyfunction]
#[pyo3(signature = (path, missing=None, header=true))]
fn load_csv(
    path: &str,
    missing: Option<Vec<String>>,
    header: bool,
) -> PyResult<Table> {
    let mut options = CsvOptions {
        header,
        ..CsvOptions::default()
    };
    if let Some(markers) = missing {
        options.missing_markers = markers;
    }
    let dataset = pcadist::load_csv(path, &options).map_err(err)?;
    let rows = dataset
        .rows
        .iter()
        .zip(&dataset.missing_mask)
        .map(|(row, mask)| {
            row.iter()
                .zip(mask)
                .map(|(&v, &m)| (!m).then_some(v))
                .collect()
        })
        .collect();
    Ok((dataset.column_names, rows))
}

#[pymodule]
fn pcadist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PcadistError", m.py().get_type::<PcadistError>())?;
    m.add_class::<Model>()?;
    m.add_class::<Prediction>()?;
    m.add_class::<Influence>()?;
    m.add_class::<Validation>()?;
    m.add_class::<Interval>()?;
    m.add_function(wrap_pyfunction!(influence_scores, m)?)?;
    m.add_function(wrap_pyfunction!(loo_cv, m)?)?;
    m.add_function(wrap_pyfunction!(resample_ci, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    Ok(())
}
