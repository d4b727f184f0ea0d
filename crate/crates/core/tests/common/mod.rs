//! Test-only oracles. Everything here works from dense projectors and
//! function evaluations, never from the library's closed forms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pcadist::pca::{ScalingMode, ScalingParams};
use pcadist::{Basis, PrincipalModel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// `G (GᵀG)⁻¹ Gᵀ` for generators with full column rank.
pub fn dense_projector(generators: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = generators.transpose() * generators;
    generators * gram.try_inverse().expect("full column rank") * generators.transpose()
}

/// `H - I` built densely from generators.
pub fn dense_residual(generators: &DMatrix<f64>) -> DMatrix<f64> {
    let m = generators.nrows();
    dense_projector(generators) - DMatrix::identity(m, m)
}

/// A model over `span(generators)` with random (but valid) column scaling.
pub fn random_model<R: Rng>(rng: &mut R, generators: &DMatrix<f64>) -> PrincipalModel {
    let mut model = PrincipalModel::from_subspace(&Basis::from_matrix(generators.clone())).unwrap();
    let m = generators.nrows();
    model.scaling = ScalingParams {
        means: (0..m).map(|_| 5.0 * gaussian(rng)).collect(),
        stds: (0..m).map(|_| rng.random_range(0.5..3.0)).collect(),
        modes: (0..m)
            .map(|_| {
                if rng.random_bool(0.8) {
                    ScalingMode::Standardize
                } else {
                    ScalingMode::CenterOnly
                }
            })
            .collect(),
    };
    model
}

/// Candidate point in scaled coordinates: `anchor` with `t` written into the
/// missing slots.
pub fn candidate(anchor: &DVector<f64>, missing: &[usize], t: &[f64]) -> DVector<f64> {
    let mut l = anchor.clone();
    for (&j, &v) in missing.iter().zip(t) {
        l[j] = v;
    }
    l
}

/// Squared weighted distance `rᵀ M r` with `r = (H - I) l`.
pub fn squared_distance(
    residual: &DMatrix<f64>,
    metric: Option<&DMatrix<f64>>,
    l: &DVector<f64>,
) -> f64 {
    let r = residual * l;
    match metric {
        Some(m) => r.dot(&(m * &r)),
        None => r.norm_squared(),
    }
}

/// Brute-force minimizer: a coarse grid over `[-10, 10]^k`, then Newton steps
/// from central finite differences of `f`. The finite differences are exact
/// for quadratics up to rounding.
pub fn brute_force_minimize(f: &dyn Fn(&[f64]) -> f64, k: usize) -> Vec<f64> {
    let per_axis = match k {
        1 => 401,
        2 => 81,
        _ => 41,
    };
    let step = 20.0 / (per_axis - 1) as f64;
    let total = (per_axis as u64).pow(k as u32);
    let mut best = vec![0.0; k];
    let mut best_val = f64::INFINITY;
    let mut point = vec![0.0; k];
    for flat in 0..total {
        let mut rest = flat;
        for slot in point.iter_mut() {
            *slot = -10.0 + (rest % per_axis as u64) as f64 * step;
            rest /= per_axis as u64;
        }
        let v = f(&point);
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&point);
        }
    }

    let h = 1.0;
    let eval = |x: &[f64], moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in moves {
            y[i] += d;
        }
        f(&y)
    };
    for _ in 0..3 {
        let f0 = f(&best);
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..k {
            let fp = eval(&best, &[(i, h)]);
            let fm = eval(&best, &[(i, -h)]);
            grad[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let v = (eval(&best, &[(i, h), (j, h)])
                    - eval(&best, &[(i, h), (j, -h)])
                    - eval(&best, &[(i, -h), (j, h)])
                    + eval(&best, &[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let Some(inv) = hess.try_inverse() else {
            break;
        };
        let delta = inv * grad;
        for i in 0..k {
            best[i] -= delta[i];
        }
    }
    best
}
