//! Dense kernels behind the predictor: rank-revealing orthonormalization,
//! factored orthogonal projectors and the residual map `W = QQᵀ - I`.
//!
//! Projectors are always kept in factored form. `W x` costs `O(m r)` and no
//! `m × m` matrix is ever allocated, which keeps the predictor usable for
//! records with thousands of coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pairwise inner products of an orthonormal basis must match the identity
/// to this tolerance.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Maximum asymmetry accepted by [`solve_spd`].
pub const GRAM_SYMMETRY_TOL: f64 = 1e-9;

/// Singular values below `max(rows, cols) * eps * sigma_max` count as zero.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Numerical rank from a list of singular values.
pub fn numerical_rank(singular_values: &[f64], rows: usize, cols: usize) -> usize {
    let sigma_max = singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(rows, cols, sigma_max);
    singular_values.iter().filter(|&&s| s > tol).count()
}

/// An ordered set of column vectors in `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    columns: DMatrix<f64>,
    orthonormal: bool,
}

impl Basis {
    /// Wraps generators without checking independence or orthogonality.
    pub fn from_matrix(columns: DMatrix<f64>) -> Self {
        Basis {
            columns,
            orthonormal: false,
        }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::InvalidArgument("basis needs at least one column".into()))?;
        let m = first.len();
        if m == 0 {
            return Err(Error::InvalidArgument("basis columns must be non-empty".into()));
        }
        if let Some(bad) = columns.iter().find(|c| c.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        let mat = DMatrix::from_fn(m, columns.len(), |i, j| columns[j][i]);
        Ok(Basis::from_matrix(mat))
    }

    /// Accepts the columns as an orthonormal basis after verifying it.
    pub fn orthonormal(columns: DMatrix<f64>) -> Result<Self> {
        let gram = columns.tr_mul(&columns);
        let r = gram.nrows();
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - target).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "columns are not orthonormal: <q{i}, q{j}> = {}",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(Basis {
            columns,
            orthonormal: true,
        })
    }

    pub(crate) fn orthonormal_unchecked(columns: DMatrix<f64>) -> Self {
        Basis {
            columns,
            orthonormal: true,
        }
    }

    /// Ambient dimension `m`.
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.columns.column(j).into_owned()
    }

    /// `Q (Qᵀ X)` for a block of column vectors, without forming `QQᵀ`.
    pub fn project_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.require_orthonormal()?;
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.nrows(),
            });
        }
        let coords = self.columns.tr_mul(x);
        Ok(&self.columns * coords)
    }

    /// Orthogonal projection of a single vector onto the span.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_orthonormal()?;
        self.check_len(x.len())?;
        Ok(&self.columns * self.columns.tr_mul(x))
    }

    fn require_orthonormal(&self) -> Result<()> {
        if self.orthonormal {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "operation requires an orthonormal basis".into(),
            ))
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            })
        }
    }
}

/// Orthonormal basis of `span(P)` with as many columns as the numerical rank
/// of `P`.
///
/// Full column rank goes through a Householder QR with the signs of `R`'s
/// diagonal made positive, so the result is the Gram-Schmidt basis of the
/// generators in their given order. Rank-deficient generators go through a
/// column-pivoted QR and keep the leading `rank` columns of `Q`.
pub fn orthonormal_basis(p: &Basis) -> Result<Basis> {
    let (m, n) = p.columns.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "basis needs at least one column of positive dimension".into(),
        ));
    }
    let sv = p.columns.singular_values();
    let rank = numerical_rank(sv.as_slice(), m, n);
    if rank == 0 {
        return Err(Error::ZeroSubspace);
    }

    // `R` is min(m, n) x n, so read its diagonal entrywise.
    let (q, r) = if rank == n {
        let qr = p.columns.clone().qr();
        (qr.q(), qr.r())
    } else {
        let qr = p.columns.clone().col_piv_qr();
        (qr.q(), qr.r())
    };
    let mut q = q.columns(0, rank).into_owned();
    for j in 0..rank {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Basis::orthonormal_unchecked(q))
}

/// `W x = Q(Qᵀx) - x`; its norm is the distance from `x` to `span(Q)`.
pub fn apply_residual(q: &Basis, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = q.project(x)?;
    out -= x;
    Ok(out)
}

/// Column `j` of the residual map, `Q(Qᵀ e_j) - e_j`.
pub fn residual_column(q: &Basis, j: usize) -> Result<DVector<f64>> {
    q.require_orthonormal()?;
    if j >= q.dim() {
        return Err(Error::IndexOutOfRange {
            index: j,
            dim: q.dim(),
        });
    }
    let coords = q.columns.row(j).transpose();
    let mut w = &q.columns * coords;
    w[j] -= 1.0;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub solution: DVector<f64>,
    pub unique: bool,
}

/// Solves `A t = b` for a symmetric positive semidefinite `A`.
///
/// Nonsingular systems are solved by Cholesky. Singular ones return the
/// minimum-norm solution through the eigendecomposition pseudo-inverse and
/// report `unique = false`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SpdSolution> {
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: a.ncols(),
        });
    }
    if b.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: b.len(),
        });
    }
    let scale = a.amax().max(1.0);
    let asymmetry = (a - a.transpose()).amax();
    if asymmetry > GRAM_SYMMETRY_TOL * scale {
        return Err(Error::NotGram { asymmetry });
    }
    if k == 0 {
        return Ok(SpdSolution {
            solution: DVector::zeros(0),
            unique: true,
        });
    }

    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(k, k, lambda_max);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > tol).count();

    if rank == k {
        if let Some(chol) = sym.cholesky() {
            return Ok(SpdSolution {
                solution: chol.solve(b),
                unique: true,
            });
        }
    }

    let mut solution = DVector::zeros(k);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > tol {
            let v = eig.eigenvectors.column(idx);
            solution += v * (v.dot(b) / lambda);
        }
    }
    Ok(SpdSolution {
        solution,
        unique: rank == k,
    })
}
