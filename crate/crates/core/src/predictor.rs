//! Closed-form PCA-distance predictions.
//!
//! All formulas run in scaled coordinates, where the principal subspace goes
//! through the origin. The missing coordinates of a record are handled by
//! index selection: `W_k` is assembled from the residual columns of the
//! missing indices and `W'l'` is the residual of the record with its missing
//! entries set to zero. This is the same as permuting the missing block to the
//! front, without copying.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Basis};
use crate::pca::PrincipalModel;

/// Zero threshold for residual columns and rank tests, in scaled units.
pub fn zero_threshold(m: usize) -> f64 {
    1e-10 * (m as f64).sqrt()
}

/// Inner product used to measure the distance to the principal subspace.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MetricSpec {
    #[default]
    Euclidean,
    General(MetricMatrix),
}

/// Symmetric positive-definite `M` with its Cholesky factor `M = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl MetricMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Lᵀ x`, so that `‖Lᵀx‖² = xᵀ M x`.
    fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.lower.tr_mul(x)
    }
}

impl MetricSpec {
    pub fn general(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if matrix.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: matrix.ncols(),
            });
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > linalg::GRAM_SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = matrix.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(MetricSpec::General(MetricMatrix {
            lower: chol.l(),
            matrix,
        }))
    }

    fn dim(&self) -> Option<usize> {
        match self {
            MetricSpec::Euclidean => None,
            MetricSpec::General(mm) => Some(mm.matrix.nrows()),
        }
    }
}

/// One incomplete record: known coordinates in data units and the missing
/// indices to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTask {
    dim: usize,
    known: BTreeMap<usize, f64>,
    missing: Vec<usize>,
    metric: MetricSpec,
}

impl PredictionTask {
    /// Every coordinate of `0..dim` not in `known` is missing.
    pub fn new(dim: usize, known: BTreeMap<usize, f64>) -> Result<Self> {
        if let Some((&idx, _)) = known.iter().find(|(&i, _)| i >= dim) {
            return Err(Error::IndexOutOfRange { index: idx, dim });
        }
        if let Some((&idx, _)) = known.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidTask(format!(
                "known value at coordinate {idx} is not finite"
            )));
        }
        if known.is_empty() {
            return Err(Error::InvalidTask("no known coordinates".into()));
        }
        let missing: Vec<usize> = (0..dim).filter(|i| !known.contains_key(i)).collect();
        if missing.is_empty() {
            return Err(Error::InvalidTask("no missing coordinates".into()));
        }
        Ok(PredictionTask {
            dim,
            known,
            missing,
            metric: MetricSpec::Euclidean,
        })
    }

    /// `None` marks a missing cell.
    pub fn from_record(record: &[Option<f64>]) -> Result<Self> {
        let known = record
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect();
        Self::new(record.len(), known)
    }

    /// Known values by column name; the remaining columns are missing.
    pub fn from_named<S: AsRef<str>>(columns: &[String], known: &[(S, f64)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, value) in known {
            let name = name.as_ref();
            let idx = columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
            map.insert(idx, *value);
        }
        Self::new(columns.len(), map)
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Result<Self> {
        if let Some(d) = metric.dim() {
            if d != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: d,
                });
            }
        }
        self.metric = metric;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn known(&self) -> &BTreeMap<usize, f64> {
        &self.known
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Predicted values in data units, by coordinate index.
    pub imputed: BTreeMap<usize, f64>,
    /// Predicted missing coordinates in scaled units, in missing-index order.
    pub t_pred: Vec<f64>,
    /// Distance from the predicted point to the principal subspace, scaled
    /// units (measured in the task's metric).
    pub distance: f64,
    pub unique: bool,
    /// Distance does not depend on the missing coordinates; the column means
    /// were returned.
    pub distance_invariant: bool,
}

impl PredictionResult {
    /// `true` when the candidate subspace meets the principal subspace.
    pub fn intersects(&self) -> bool {
        self.distance < 1e-9
    }

    /// The full record with the predicted cells filled in, in data units.
    pub fn completed(&self, task: &PredictionTask) -> Vec<f64> {
        (0..task.dim)
            .map(|i| {
                task.known
                    .get(&i)
                    .or_else(|| self.imputed.get(&i))
                    .copied()
                    .unwrap_or(f64::NAN)
            })
            .collect()
    }
}

/// Route for solving the multi-coordinate problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceMethod {
    /// `A t = b` with `A_ij = w_iᵀw_j`, `b_i = -w_iᵀW'l'`.
    #[default]
    NormalSystem,
    /// `t = -W_{k,L} proj_{W_k}(W'l')`; requires full column rank of `W_k`.
    LeftInverse,
}

/// Scaled-coordinate view of a task against a model.
struct Frame<'a> {
    model: &'a PrincipalModel,
    missing: &'a [usize],
    /// Scaled record with zeros in the missing slots.
    anchor: DVector<f64>,
    /// `W'l'`: residual of the anchor.
    offset: DVector<f64>,
}

impl<'a> Frame<'a> {
    fn new(model: &'a PrincipalModel, task: &'a PredictionTask) -> Result<Self> {
        let m = model.dim();
        if task.dim != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: task.dim,
            });
        }
        let mut anchor = DVector::zeros(m);
        for (&j, &v) in &task.known {
            anchor[j] = model.scaling.scale_value(j, v);
        }
        let offset = linalg::apply_residual(&model.components, &anchor)?;
        Ok(Frame {
            model,
            missing: &task.missing,
            anchor,
            offset,
        })
    }

    fn q(&self) -> &Basis {
        &self.model.components
    }

    fn residual_columns(&self) -> Result<Vec<DVector<f64>>> {
        self.missing
            .iter()
            .map(|&j| linalg::residual_column(self.q(), j))
            .collect()
    }

    /// The candidate point for the given scaled missing values.
    fn candidate(&self, t: &[f64]) -> DVector<f64> {
        let mut l = self.anchor.clone();
        for (&j, &tj) in self.missing.iter().zip(t) {
            l[j] = tj;
        }
        l
    }

    fn finish(
        &self,
        t: Vec<f64>,
        distance: f64,
        unique: bool,
        distance_invariant: bool,
    ) -> PredictionResult {
        let imputed = self
            .missing
            .iter()
            .zip(&t)
            .map(|(&j, &tj)| (j, self.model.scaling.unscale_value(j, tj)))
            .collect();
        PredictionResult {
            imputed,
            t_pred: t,
            distance,
            unique,
            distance_invariant,
        }
    }

    fn invariant(&self, metric: &MetricSpec) -> PredictionResult {
        let distance = metric_norm(metric, &self.offset);
        self.finish(vec![0.0; self.missing.len()], distance, false, true)
    }
}

fn metric_norm(metric: &MetricSpec, x: &DVector<f64>) -> f64 {
    match metric {
        MetricSpec::Euclidean => x.norm(),
        MetricSpec::General(mm) => x.dot(&(&mm.matrix * x)).max(0.0).sqrt(),
    }
}

fn metric_inner(metric: &MetricSpec, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    match metric {
        MetricSpec::Euclidean => x.dot(y),
        MetricSpec::General(mm) => x.dot(&(&mm.matrix * y)),
    }
}

fn single_missing(task: &PredictionTask) -> Result<()> {
    match task.missing.len() {
        1 => Ok(()),
        k => Err(Error::NotSingleMissing(k)),
    }
}

/// One missing coordinate: `t = -w₁ᵀW'l' / ‖w₁‖²`.
///
/// Uses the task's metric; a general metric is routed to
/// [`predict_line_metric`].
pub fn predict_line(model: &PrincipalModel, task: &PredictionTask) -> Result<PredictionResult> {
    if let MetricSpec::General(_) = task.metric {
        return predict_line_metric(model, task, &task.metric);
    }
    single_missing(task)?;
    let frame = Frame::new(model, task)?;
    let w1 = linalg::residual_column(frame.q(), task.missing[0])?;
    let w1_sq = w1.norm_squared();
    if w1_sq.sqrt() < zero_threshold(model.dim()) {
        return Ok(frame.invariant(&MetricSpec::Euclidean));
    }
    let t = -w1.dot(&frame.offset) / w1_sq;
    let distance = (&w1 * t + &frame.offset).norm();
    Ok(frame.finish(vec![t], distance, true, false))
}

/// One missing coordinate under the inner product `xᵀMy`:
/// `t = -w₁ᵀMW'l' / ‖w₁‖²_M`. The reported distance is the M-norm of the
/// residual.
pub fn predict_line_metric(
    model: &PrincipalModel,
    task: &PredictionTask,
    metric: &MetricSpec,
) -> Result<PredictionResult> {
    single_missing(task)?;
    if let Some(d) = metric.dim() {
        if d != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: d,
            });
        }
    }
    let frame = Frame::new(model, task)?;
    let w1 = linalg::residual_column(frame.q(), task.missing[0])?;
    if w1.norm() < zero_threshold(model.dim()) {
        return Ok(frame.invariant(metric));
    }
    let w1_sq = metric_inner(metric, &w1, &w1);
    let t = -metric_inner(metric, &w1, &frame.offset) / w1_sq;
    let distance = metric_norm(metric, &(&w1 * t + &frame.offset));
    Ok(frame.finish(vec![t], distance, true, false))
}

/// One missing coordinate by fitting the quadratic `d²(t) = a₀ + a₁t + a₂t²`
/// through the squared distances at `t ∈ {-1, 0, 1}` and taking its vertex.
///
/// Independent of the residual-column formula; kept to cross-check
/// [`predict_line`]. Euclidean metric only.
pub fn predict_line_quadfit(
    model: &PrincipalModel,
    task: &PredictionTask,
) -> Result<PredictionResult> {
    single_missing(task)?;
    let frame = Frame::new(model, task)?;
    let samples = [-1.0, 0.0, 1.0];
    let mut d = Vector3::zeros();
    for (i, &t) in samples.iter().enumerate() {
        let l = frame.candidate(&[t]);
        d[i] = linalg::apply_residual(frame.q(), &l)?.norm_squared();
    }
    let vandermonde = Matrix3::from_fn(|i, j| samples[i].powi(j as i32));
    let a = vandermonde
        .lu()
        .solve(&d)
        .expect("Vandermonde matrix with distinct nodes is invertible");
    let tau = zero_threshold(model.dim());
    if a[2] < tau * tau {
        return Err(Error::DistanceInvariant);
    }
    let t = -a[1] / (2.0 * a[2]);
    let l = frame.candidate(&[t]);
    let distance = linalg::apply_residual(frame.q(), &l)?.norm();
    Ok(frame.finish(vec![t], distance, true, false))
}

/// Several missing coordinates.
///
/// The normal-system route always applies; a singular but consistent system
/// gives the minimum-norm solution with `unique = false`. The left-inverse
/// route needs `rank(W_k) = k`. A general metric is handled by whitening the
/// residual vectors with the Cholesky factor of `M`.
pub fn predict_space(
    model: &PrincipalModel,
    task: &PredictionTask,
    method: SpaceMethod,
) -> Result<PredictionResult> {
    let frame = Frame::new(model, task)?;
    let k = task.missing.len();
    let tau = zero_threshold(model.dim());
    let columns = frame.residual_columns()?;
    if columns.iter().all(|w| w.norm() < tau) {
        return Ok(frame.invariant(&task.metric));
    }

    let (wk, offset) = match &task.metric {
        MetricSpec::Euclidean => (DMatrix::from_columns(&columns), frame.offset.clone()),
        MetricSpec::General(mm) => {
            let whitened: Vec<_> = columns.iter().map(|w| mm.whiten(w)).collect();
            (DMatrix::from_columns(&whitened), mm.whiten(&frame.offset))
        }
    };

    let (t, unique) = match method {
        SpaceMethod::NormalSystem => {
            let a = wk.tr_mul(&wk);
            let b = -wk.tr_mul(&offset);
            let sol = linalg::solve_spd(&a, &b)?;
            // One refinement step against the unsquared residual; forming
            // WᵀW squares the condition number.
            let gradient = wk.tr_mul(&(&wk * &sol.solution + &offset));
            let correction = linalg::solve_spd(&a, &-gradient)?;
            (sol.solution + correction.solution, sol.unique)
        }
        SpaceMethod::LeftInverse => {
            let rank = wk
                .singular_values()
                .iter()
                .filter(|&&s| s > tau)
                .count();
            if rank < k {
                return Err(Error::LeftInverseUnavailable { rank, k });
            }
            // W_k = Q_k R_k: proj = Q_k Q_kᵀ and R_k⁻¹ Q_kᵀ is a left inverse.
            let qr = wk.clone().qr();
            let (qk, rk) = (qr.q(), qr.r());
            let proj = &qk * qk.tr_mul(&offset);
            let rhs = -qk.tr_mul(&proj);
            let t = rk
                .solve_upper_triangular(&rhs)
                .ok_or(Error::LeftInverseUnavailable { rank: k - 1, k })?;
            (t, true)
        }
    };
    let distance = (&wk * &t + &offset).norm();
    Ok(frame.finish(t.iter().copied().collect(), distance, unique, false))
}

/// Full prediction for one record: one missing coordinate goes through the
/// line formula, several through the normal system.
pub fn impute_record(model: &PrincipalModel, task: &PredictionTask) -> Result<PredictionResult> {
    if task.missing.len() == 1 {
        predict_line(model, task)
    } else {
        predict_space(model, task, SpaceMethod::NormalSystem)
    }
}
