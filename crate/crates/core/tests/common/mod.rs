#![allow(dead_code)]

use gfblup::shrinkage::CvFold;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random SPD matrix `A A^T / k + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n + 2);
    let mut s = &a * a.transpose() / (n as f64 + 2.0);
    for i in 0..n {
        s[(i, i)] += shift;
    }
    s
}

/// Random PSD matrix of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, rank);
    &a * a.transpose() / rank as f64
}

/// Random correlation matrix built from a random SPD matrix.
pub fn random_correlation(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let s = random_spd(rng, n, 0.1);
    let d = s.diagonal().map(|v| 1.0 / v.sqrt());
    DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 } else { s[(i, j)] * d[i] * d[j] },
    )
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Solves `(Σ_g ⊗ K + Σ_e ⊗ I) vec(X) = vec(B)` by dense LU.
pub fn dense_kron_solve(
    sg: &DMatrix<f64>,
    se: &DMatrix<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = k.nrows();
    let t = sg.nrows();
    let v = kron(sg, k) + kron(se, &DMatrix::identity(n, n));
    let rhs = DVector::from_column_slice(b.as_slice());
    let x = v.lu().solve(&rhs).expect("dense system is nonsingular");
    DMatrix::from_column_slice(n, t, x.as_slice())
}

/// Direct evaluation of the cross-validated penalized likelihood loss.
pub fn naive_cv_loss(folds: &[CvFold<f64>], theta: f64) -> f64 {
    let mut total = 0.0;
    for f in folds {
        let p = f.train.nrows();
        let mut pen = &f.train * (1.0 - theta);
        for i in 0..p {
            pen[(i, i)] += theta;
        }
        let log_det = pen.determinant().ln();
        let inv = pen.try_inverse().unwrap();
        total += f.weight * (log_det + (&f.heldout * inv).trace());
    }
    total / folds.len() as f64
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..1.0)
}

/// Balanced design with `n_g` genotypes and `r` replicates, replicate-major.
pub fn design_rows(n_g: usize, r: usize) -> Vec<usize> {
    (0..n_g * r).map(|i| i % n_g).collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("g{i}")).collect()
}
