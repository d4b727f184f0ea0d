//! Column scaling and principal component fitting of the complete samples.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Basis};

/// Columns whose standard deviation falls below this are only centered.
pub const CONSTANT_COLUMN_TOL: f64 = 1e-12;

/// Default cumulative explained-variance target when no count is given.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.9;

/// `s × m` matrix of complete samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    column_names: Vec<String>,
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(column_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if column_names.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.ncols(),
                found: column_names.len(),
            });
        }
        Ok(DataMatrix {
            column_names,
            values,
        })
    }

    /// Builds a matrix with generated column names `c0, c1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let column_names = (0..values.ncols()).map(|j| format!("c{j}")).collect();
        DataMatrix {
            column_names,
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Ragged {
                    row: i + 1,
                    expected: m,
                    found: row.len(),
                });
            }
        }
        Ok(Self::from_matrix(DMatrix::from_fn(rows.len(), m, |i, j| {
            rows[i][j]
        })))
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: names.len(),
            });
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Rows at the given indices, in that order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        let values = DMatrix::from_fn(indices.len(), self.ncols(), |i, j| {
            self.values[(indices[i], j)]
        });
        DataMatrix {
            column_names: self.column_names.clone(),
            values,
        }
    }

    pub fn without_row(&self, row: usize) -> DataMatrix {
        let keep: Vec<usize> = (0..self.nrows()).filter(|&i| i != row).collect();
        self.select_rows(&keep)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    Standardize,
    CenterOnly,
}

/// Per-column affine map `x -> (x - mean) / std` (or `x - mean`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub modes: Vec<ScalingMode>,
}

impl ScalingParams {
    /// The identity transform on `R^m`.
    pub fn identity(m: usize) -> Self {
        ScalingParams {
            means: vec![0.0; m],
            stds: vec![1.0; m],
            modes: vec![ScalingMode::CenterOnly; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn scale_value(&self, column: usize, value: f64) -> f64 {
        let centered = value - self.means[column];
        match self.modes[column] {
            ScalingMode::Standardize => centered / self.stds[column],
            ScalingMode::CenterOnly => centered,
        }
    }

    pub fn unscale_value(&self, column: usize, value: f64) -> f64 {
        let spread = match self.modes[column] {
            ScalingMode::Standardize => value * self.stds[column],
            ScalingMode::CenterOnly => value,
        };
        spread + self.means[column]
    }

    /// Factor converting a scaled difference back to data units.
    pub fn unit(&self, column: usize) -> f64 {
        match self.modes[column] {
            ScalingMode::Standardize => self.stds[column],
            ScalingMode::CenterOnly => 1.0,
        }
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            self.scale_value(j, data[(i, j)])
        })
    }

    pub fn invert(&self, scaled: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(scaled.nrows(), scaled.ncols(), |i, j| {
            self.unscale_value(j, scaled[(i, j)])
        })
    }
}

/// Column means and sample standard deviations (divisor `s - 1`).
///
/// With `standardize = false` every column is only centered.
pub fn fit_scaling(data: &DataMatrix, standardize: bool) -> Result<ScalingParams> {
    let s = data.nrows();
    if s < 2 {
        return Err(Error::InsufficientRows {
            needed: 2,
            found: s,
        });
    }
    let m = data.ncols();
    let mut means = Vec::with_capacity(m);
    let mut stds = Vec::with_capacity(m);
    let mut modes = Vec::with_capacity(m);
    for col in data.values.column_iter() {
        let mean = col.sum() / s as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = (ss / (s - 1) as f64).sqrt();
        means.push(mean);
        stds.push(std);
        modes.push(if standardize && std >= CONSTANT_COLUMN_TOL {
            ScalingMode::Standardize
        } else {
            ScalingMode::CenterOnly
        });
    }
    Ok(ScalingParams { means, stds, modes })
}

/// How many principal components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Components {
    Count(usize),
    /// Smallest count whose cumulative explained variance reaches the fraction.
    VarianceFraction(f64),
}

impl Default for Components {
    fn default() -> Self {
        Components::VarianceFraction(DEFAULT_VARIANCE_FRACTION)
    }
}

impl Components {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Components::Count(0) => Err(Error::InvalidArgument(
                "component count must be at least 1".into(),
            )),
            Components::VarianceFraction(f) if !(f > 0.0 && f <= 1.0) => Err(
                Error::InvalidArgument(format!("variance fraction {f} not in (0, 1]")),
            ),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Components {
    type Err = Error;

    /// Integers select a count; anything with a decimal point or exponent is a
    /// variance fraction.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parsed = if let Ok(n) = s.parse::<usize>() {
            Components::Count(n)
        } else {
            let f: f64 = s
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse {s:?} as n")))?;
            Components::VarianceFraction(f)
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaConfig {
    pub components: Components,
    pub standardize: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            components: Components::default(),
            standardize: true,
        }
    }
}

impl PcaConfig {
    pub fn with_count(n: usize) -> Self {
        PcaConfig {
            components: Components::Count(n),
            ..Default::default()
        }
    }
}

/// Fitted shifted principal subspace.
///
/// In scaled coordinates the subspace passes through the origin: centering
/// absorbs the shift by the column means.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalModel {
    pub column_names: Vec<String>,
    pub scaling: ScalingParams,
    /// Orthonormal components ordered by decreasing explained variance.
    pub components: Basis,
    pub explained_variance: Vec<f64>,
    /// Variance of all scaled columns together.
    pub total_variance: f64,
    /// The requested count exceeded the achievable rank.
    pub clamped: bool,
}

impl PrincipalModel {
    /// A model with identity scaling whose subspace is `span(generators)`.
    ///
    /// Intended for working directly in scaled coordinates; explained
    /// variances are unknown and reported as zero.
    pub fn from_subspace(generators: &Basis) -> Result<Self> {
        let components = linalg::orthonormal_basis(generators)?;
        let m = components.dim();
        let n = components.len();
        Ok(PrincipalModel {
            column_names: (0..m).map(|j| format!("c{j}")).collect(),
            scaling: ScalingParams::identity(m),
            components,
            explained_variance: vec![0.0; n],
            total_variance: 0.0,
            clamped: false,
        })
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.dim()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// Scales a full data-unit record.
    pub fn scale_point(&self, point: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            point.len(),
            point
                .iter()
                .enumerate()
                .map(|(j, &v)| self.scaling.scale_value(j, v)),
        )
    }

    /// Distance from a data-unit record to the shifted principal subspace, in
    /// scaled units.
    pub fn distance(&self, point: &[f64]) -> Result<f64> {
        let x = self.scale_point(point);
        Ok(linalg::apply_residual(&self.components, &x)?.norm())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            column_names: self.column_names.clone(),
            means: self.scaling.means.clone(),
            stds: self.scaling.stds.clone(),
            modes: self.scaling.modes.clone(),
            n: self.n(),
            components: self
                .components
                .matrix()
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            explained_variance: self.explained_variance.clone(),
            total_variance: self.total_variance,
            clamped: self.clamped,
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unexpected model format {:?}",
                doc.format
            )));
        }
        let m = doc.means.len();
        for len in [doc.stds.len(), doc.modes.len(), doc.column_names.len()] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: len,
                });
            }
        }
        if doc.components.len() != doc.n || doc.explained_variance.len() != doc.n {
            return Err(Error::DimensionMismatch {
                expected: doc.n,
                found: doc.components.len(),
            });
        }
        if let Some(bad) = doc.components.iter().find(|c| c.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        let mat = DMatrix::from_fn(m, doc.n, |i, j| doc.components[j][i]);
        Ok(PrincipalModel {
            column_names: doc.column_names,
            scaling: ScalingParams {
                means: doc.means,
                stds: doc.stds,
                modes: doc.modes,
            },
            components: Basis::orthonormal(mat)?,
            explained_variance: doc.explained_variance,
            total_variance: doc.total_variance,
            clamped: doc.clamped,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_document())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(serde_json::from_str(&text)?)
    }
}

pub const MODEL_FORMAT: &str = "pcadist-model";
pub const MODEL_VERSION: u32 = 1;

/// JSON form of a [`PrincipalModel`]. `components[j]` is the j-th principal
/// direction as an m-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub column_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub modes: Vec<ScalingMode>,
    pub n: usize,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub clamped: bool,
}

/// Scales the samples and keeps the leading right singular vectors.
///
/// A count larger than `min(s - 1, m, rank)` is clamped and flagged rather
/// than rejected. Each component is signed so that its largest-magnitude entry
/// is positive.
pub fn fit_pca(data: &DataMatrix, config: &PcaConfig) -> Result<PrincipalModel> {
    config.components.validate()?;
    let scaling = fit_scaling(data, config.standardize)?;
    let (s, m) = (data.nrows(), data.ncols());
    let scaled = scaling.apply(data.values());

    let svd = scaled.svd(false, true);
    let v_t = svd
        .v_t
        .expect("SVD was asked for right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigmas: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let rank = linalg::numerical_rank(&sigmas, s, m);
    let max_n = rank.min(s - 1).min(m);
    let variances: Vec<f64> = sigmas.iter().map(|sv| sv * sv / (s - 1) as f64).collect();
    let total_variance: f64 = variances.iter().sum();

    let (requested, n) = match config.components {
        Components::Count(k) => (k, k.min(max_n)),
        Components::VarianceFraction(f) => {
            let target = f * total_variance * (1.0 - 1e-12);
            let mut acc = 0.0;
            let mut k = 0;
            while k < max_n && acc < target {
                acc += variances[k];
                k += 1;
            }
            (k, k)
        }
    };
    let clamped = requested > n;
    if clamped {
        log::warn!("requested {requested} components but the data supports only {n}");
    }

    let mut comps = DMatrix::zeros(m, n);
    for (j, &row) in order.iter().take(n).enumerate() {
        let mut v = v_t.row(row).transpose();
        let lead = v.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.neg_mut();
        }
        comps.set_column(j, &v);
    }

    Ok(PrincipalModel {
        column_names: data.column_names().to_vec(),
        scaling,
        components: Basis::orthonormal_unchecked(comps),
        explained_variance: variances[..n].to_vec(),
        total_variance,
        clamped,
    })
}
