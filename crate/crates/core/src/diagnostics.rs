//! Influence scores, leave-one-out validation and resampling intervals.
//!
//! Every fold and replicate refits both the scaling and the principal
//! subspace. Folds run in parallel; results are collected by index so the
//! output never depends on scheduling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Basis};
use crate::pca::{fit_pca, Components, DataMatrix, PcaConfig, PrincipalModel};
use crate::predictor::{self, PredictionTask};

/// Default share of rows dropped as outliers.
pub const DEFAULT_OUTLIER_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// Number of components of every fitted subspace.
    pub n: usize,
    /// `C_i = ‖(H - H_i) Sᵀ‖_F`, scaled units.
    pub absolute: Vec<f64>,
    /// `RC_i = C_i / ‖(H - I) Sᵀ‖_F`.
    pub relative: Vec<f64>,
    /// `‖(H - I) Sᵀ‖_F`.
    pub baseline: f64,
    /// The data lie on the fitted subspace, so `RC` is undefined and reported
    /// as zero.
    pub baseline_zero: bool,
}

impl InfluenceReport {
    /// Row indices sorted by decreasing relative influence (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.absolute.len()).collect();
        order.sort_by(|&a, &b| {
            self.relative[b]
                .total_cmp(&self.relative[a])
                .then(self.absolute[b].total_cmp(&self.absolute[a]))
                .then(a.cmp(&b))
        });
        order
    }

    /// CSV in ranking order; `row_ids[i]` labels row `i`.
    pub fn write_csv<W: Write>(&self, out: W, row_ids: &[usize]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "row", "absolute", "relative"])?;
        for (rank, i) in self.ranking().into_iter().enumerate() {
            w.write_record([
                (rank + 1).to_string(),
                row_ids[i].to_string(),
                self.absolute[i].to_string(),
                self.relative[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Resolves a variance fraction to a fixed count on the full data.
fn resolve_components(data: &DataMatrix, config: &PcaConfig) -> Result<(PrincipalModel, usize)> {
    let model = fit_pca(data, config)?;
    let n = match config.components {
        Components::Count(k) => k,
        Components::VarianceFraction(_) => model.n(),
    };
    Ok((model, n))
}

fn fold_config(config: &PcaConfig, n: usize) -> PcaConfig {
    PcaConfig {
        components: Components::Count(n),
        standardize: config.standardize,
    }
}

/// A fold's shifted subspace expressed in the coordinates of a reference
/// scaling: `offset + span(basis)`.
struct AffineSubspace {
    offset: DVector<f64>,
    basis: Option<Basis>,
}

impl AffineSubspace {
    fn in_frame_of(fold: &PrincipalModel, reference: &PrincipalModel) -> Result<Self> {
        let m = reference.dim();
        let offset = DVector::from_fn(m, |j, _| {
            reference.scaling.scale_value(j, fold.scaling.means[j])
        });
        let stretch = DVector::from_fn(m, |j, _| {
            fold.scaling.unit(j) / reference.scaling.unit(j)
        });
        let basis = if fold.n() == 0 {
            None
        } else {
            let mut generators = fold.components.matrix().clone();
            for mut col in generators.column_iter_mut() {
                col.component_mul_assign(&stretch);
            }
            match linalg::orthonormal_basis(&Basis::from_matrix(generators)) {
                Ok(q) => Some(q),
                Err(Error::ZeroSubspace) => None,
                Err(e) => return Err(e),
            }
        };
        Ok(AffineSubspace { offset, basis })
    }

    /// Projects every column of `points`.
    fn project(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut shifted = points.clone();
        for mut col in shifted.column_iter_mut() {
            col -= &self.offset;
        }
        let mut out = match &self.basis {
            Some(q) => q.project_block(&shifted)?,
            None => DMatrix::zeros(points.nrows(), points.ncols()),
        };
        for mut col in out.column_iter_mut() {
            col += &self.offset;
        }
        Ok(out)
    }
}

/// Leave-one-out influence of every row on the principal subspace.
pub fn influence_scores(data: &DataMatrix, config: &PcaConfig) -> Result<InfluenceReport> {
    let s = data.nrows();
    if s < 3 {
        return Err(Error::InsufficientRows {
            needed: 3,
            found: s,
        });
    }
    let (full, n) = resolve_components(data, config)?;
    let limit = (s - 2).min(data.ncols());
    if n > limit {
        return Err(Error::InvalidArgument(format!(
            "influence needs n <= min(s - 2, m) = {limit}, got {n}"
        )));
    }

    // Columns are data points in the full model's scaled coordinates.
    let points = full.scaling.apply(data.values()).transpose();
    let projected = full.components.project_block(&points)?;
    let baseline = (&projected - &points).norm();
    let baseline_zero = baseline <= 1e-10 * points.norm().max(f64::MIN_POSITIVE);

    let fold_cfg = fold_config(config, n);
    let absolute: Vec<f64> = (0..s)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let fold = fit_pca(&data.without_row(i), &fold_cfg)?;
            let sub = AffineSubspace::in_frame_of(&fold, &full)?;
            Ok((&projected - sub.project(&points)?).norm())
        })
        .collect::<Result<_>>()?;
    let relative = absolute
        .iter()
        .map(|&c| if baseline_zero { 0.0 } else { c / baseline })
        .collect();
    Ok(InfluenceReport {
        n,
        absolute,
        relative,
        baseline,
        baseline_zero,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRemoval {
    pub kept: DataMatrix,
    /// Removed rows as indices into the input, in removal order.
    pub removed: Vec<usize>,
    /// Influence report of the first pass over the full input.
    pub report: InfluenceReport,
}

/// Number of rows dropped for a given fraction: `⌈fraction · s⌉`.
pub fn outlier_count(fraction: f64, rows: usize) -> usize {
    (fraction * rows as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Drops the rows with the largest relative influence, either all at once
/// from a single pass or one at a time with recomputation.
pub fn remove_outliers(
    data: &DataMatrix,
    config: &PcaConfig,
    fraction: f64,
    iterative: bool,
) -> Result<OutlierRemoval> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "outlier fraction {fraction} not in [0, 0.5)"
        )));
    }
    let s = data.nrows();
    let count = outlier_count(fraction, s);
    let report = influence_scores(data, config)?;
    let n = report.n;
    if s - count < n + 2 {
        return Err(Error::InsufficientRows {
            needed: n + 2 + count,
            found: s,
        });
    }

    let removed = if !iterative {
        report.ranking().into_iter().take(count).collect::<Vec<_>>()
    } else {
        let fixed = fold_config(config, n);
        let mut remaining: Vec<usize> = (0..s).collect();
        let mut removed = Vec::with_capacity(count);
        for step in 0..count {
            let pass = if step == 0 {
                report.clone()
            } else {
                influence_scores(&data.select_rows(&remaining), &fixed)?
            };
            let worst = pass.ranking()[0];
            removed.push(remaining.remove(worst));
        }
        removed
    };
    let kept: Vec<usize> = (0..s).filter(|i| !removed.contains(i)).collect();
    Ok(OutlierRemoval {
        kept: data.select_rows(&kept),
        removed,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub target: usize,
    pub n: usize,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub squared_errors: Vec<f64>,
    pub mse: f64,
    /// Column-mean imputation from the same folds.
    pub baseline_predicted: Vec<f64>,
    pub baseline_mse: f64,
}

impl ValidationReport {
    pub fn write_csv<W: Write>(&self, out: W, row_ids: &[usize]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "actual", "predicted", "squared_error", "mean_baseline"])?;
        for (i, id) in row_ids.iter().enumerate().take(self.actual.len()) {
            w.write_record([
                id.to_string(),
                self.actual[i].to_string(),
                self.predicted[i].to_string(),
                self.squared_errors[i].to_string(),
                self.baseline_predicted[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Leave-one-out prediction of one column from all the others. MSE is in data
/// units.
pub fn loo_cv(data: &DataMatrix, config: &PcaConfig, target: usize) -> Result<ValidationReport> {
    let (s, m) = (data.nrows(), data.ncols());
    if target >= m {
        return Err(Error::IndexOutOfRange {
            index: target,
            dim: m,
        });
    }
    if m < 2 {
        return Err(Error::InvalidArgument(
            "validation needs at least two columns".into(),
        ));
    }
    let (_, n) = resolve_components(data, config)?;
    if s < n + 2 {
        return Err(Error::InsufficientRows {
            needed: n + 2,
            found: s,
        });
    }
    let fold_cfg = fold_config(config, n);
    let folds: Vec<(f64, f64)> = (0..s)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let train = data.without_row(i);
            let model = fit_pca(&train, &fold_cfg)?;
            let row = data.row(i);
            let known = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(j, &v)| (j, v))
                .collect();
            let task = PredictionTask::new(m, known)?;
            let predicted = predictor::predict_line(&model, &task)?.imputed[&target];
            let column_mean = train.values().column(target).mean();
            Ok((predicted, column_mean))
        })
        .collect::<Result<_>>()?;

    let actual: Vec<f64> = data.values().column(target).iter().copied().collect();
    let predicted: Vec<f64> = folds.iter().map(|f| f.0).collect();
    let baseline_predicted: Vec<f64> = folds.iter().map(|f| f.1).collect();
    let squared_errors: Vec<f64> = actual
        .iter()
        .zip(&predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .collect();
    let baseline_sq: Vec<f64> = actual
        .iter()
        .zip(&baseline_predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .collect();
    Ok(ValidationReport {
        target,
        n,
        mse: mean(&squared_errors),
        baseline_mse: mean(&baseline_sq),
        actual,
        predicted,
        squared_errors,
        baseline_predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Resampling {
    /// Random leave-`p`-out subsets, drawn without replacement.
    Jackknife { p: usize },
    /// Resamples of size `s` drawn with replacement.
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    /// Coordinate index of the predicted value.
    pub column: usize,
    /// Prediction from the full data.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Replicates that contributed.
    pub replicates: usize,
    /// Replicates discarded because their rank fell below `n`.
    pub skipped: usize,
    pub method: Resampling,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub method: Resampling,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl ResampleConfig {
    pub fn validate(&self, rows: usize, n: usize) -> Result<()> {
        if self.replicates < 20 {
            return Err(Error::InvalidArgument(format!(
                "need at least 20 replicates, got {}",
                self.replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level {} not in (0, 1)",
                self.level
            )));
        }
        if let Resampling::Jackknife { p } = self.method {
            let max_p = rows.saturating_sub(n + 2);
            if p < 1 || p > max_p {
                return Err(Error::InvalidArgument(format!(
                    "jackknife p = {p} not in [1, {max_p}]"
                )));
            }
        }
        Ok(())
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval for each missing coordinate of `task`, from
/// predictions on resampled data. Deterministic for a given seed.
pub fn resample_ci(
    data: &DataMatrix,
    config: &PcaConfig,
    task: &PredictionTask,
    resample: &ResampleConfig,
) -> Result<Vec<IntervalEstimate>> {
    let s = data.nrows();
    let (full, n) = resolve_components(data, config)?;
    resample.validate(s, n)?;
    let point = predictor::impute_record(&full, task)?;

    let mut rng = ChaCha8Rng::seed_from_u64(resample.seed);
    let subsets: Vec<Vec<usize>> = (0..resample.replicates)
        .map(|_| match resample.method {
            Resampling::Jackknife { p } => {
                let mut dropped = vec![false; s];
                for i in index::sample(&mut rng, s, p) {
                    dropped[i] = true;
                }
                (0..s).filter(|&i| !dropped[i]).collect()
            }
            Resampling::Bootstrap => (0..s).map(|_| rng.random_range(0..s)).collect(),
        })
        .collect();

    let fold_cfg = fold_config(config, n);
    let outcomes: Vec<Option<Vec<f64>>> = subsets
        .par_iter()
        .map(|rows| -> Result<Option<Vec<f64>>> {
            let model = fit_pca(&data.select_rows(rows), &fold_cfg)?;
            if model.clamped {
                return Ok(None);
            }
            let r = predictor::impute_record(&model, task)?;
            Ok(Some(task.missing().iter().map(|j| r.imputed[j]).collect()))
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let skipped = outcomes.len() - used.len();
    if skipped * 2 > outcomes.len() {
        return Err(Error::TooManySkipped {
            skipped,
            total: outcomes.len(),
        });
    }
    let alpha = (1.0 - resample.level) / 2.0;
    Ok(task
        .missing()
        .iter()
        .enumerate()
        .map(|(slot, &column)| {
            let mut values: Vec<f64> = used.iter().map(|v| v[slot]).collect();
            values.sort_by(f64::total_cmp);
            IntervalEstimate {
                column,
                point: point.imputed[&column],
                lower: quantile(&values, alpha),
                upper: quantile(&values, 1.0 - alpha),
                level: resample.level,
                replicates: values.len(),
                skipped,
                method: resample.method,
                seed: resample.seed,
            }
        })
        .collect())
}
