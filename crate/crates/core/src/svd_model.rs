//! Unconstrained structure learning: truncated SVD of the reference matrix,
//! plus the least-squares relationship fit shared by both models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dissim::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// How the structure matrices were learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Mixture,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Svd => "svd",
            Method::Mixture => "mixture",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Method::Svd),
            "mixture" => Ok(Method::Mixture),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Structure, relationship and self-fit loss at one complexity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanLevel {
    /// `d x k` structure matrix.
    pub structure: DMatrix<f64>,
    /// `k x k` relationship matrix.
    pub relationship: DMatrix<f64>,
    /// Frobenius norm of `Y - A X Aᵀ`.
    pub loss: f64,
}

/// Decompositions of a reference matrix for complexities `1..=kmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureScan {
    pub method: Method,
    /// Singular values of the reference, non-increasing.
    pub singular_values: Vec<f64>,
    levels: Vec<ScanLevel>,
}

impl StructureScan {
    pub fn new(method: Method, singular_values: Vec<f64>, levels: Vec<ScanLevel>) -> Self {
        Self { method, singular_values, levels }
    }

    pub fn kmax(&self) -> usize {
        self.levels.len()
    }

    /// Level for complexity `k` (1-based).
    pub fn level(&self, k: usize) -> &ScanLevel {
        &self.levels[k - 1]
    }

    pub fn levels(&self) -> &[ScanLevel] {
        &self.levels
    }

    pub fn structure(&self, k: usize) -> &DMatrix<f64> {
        &self.level(k).structure
    }

    pub fn relationship(&self, k: usize) -> &DMatrix<f64> {
        &self.level(k).relationship
    }

    pub fn loss(&self, k: usize) -> f64 {
        self.level(k).loss
    }

    pub fn losses(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.loss).collect()
    }
}

/// Truncated SVD scan of a symmetric reference matrix.
///
/// The symmetric eigendecomposition is used: singular values are the
/// eigenvalue magnitudes and `A_k` holds the corresponding eigenvectors
/// (each flipped so its largest-magnitude entry is positive). `X_k` keeps the
/// eigenvalue signs, so `A_k X_k A_kᵀ` is the best rank-`k` approximation even
/// when the matrix is indefinite, as distance matrices are.
pub fn learn_svd_scan(y: &DissimilarityMatrix, kmax: usize) -> Result<StructureScan> {
    scan_symmetric(y.values(), kmax)
}

/// [`learn_svd_scan`] on an unlabelled symmetric matrix.
pub fn scan_symmetric(y: &DMatrix<f64>, kmax: usize) -> Result<StructureScan> {
    let d = y.nrows();
    if kmax < 1 || kmax > d {
        return Err(Error::InvalidArgument(format!("kmax must be in 1..={d}, got {kmax}")));
    }
    let eig = linalg::sym_eigen_by_magnitude(y)?;
    let singular_values: Vec<f64> = eig.values.iter().map(|v| v.abs()).collect();

    let mut residual = (y + y.transpose()) * 0.5;
    let mut levels = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let u = eig.vectors.column(k - 1);
        let lambda = eig.values[k - 1];
        residual.ger(-lambda, &u, &u, 1.0);
        let structure = eig.vectors.columns(0, k).into_owned();
        let relationship = DMatrix::from_diagonal(&eig.values.rows(0, k).into_owned());
        levels.push(ScanLevel { structure, relationship, loss: residual.norm() });
    }
    Ok(StructureScan::new(Method::Svd, singular_values, levels))
}

/// Least-squares relationship `X = A⁺ Y (A⁺)ᵀ` for a full-column-rank structure.
///
/// This is the minimiser of `‖Y - A X Aᵀ‖_F`; with orthonormal columns it
/// reduces to `Aᵀ Y A`.
pub fn fit_relationship(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_structure_shape(a, y)?;
    let pinv = linalg::left_pseudo_inverse(a)?;
    Ok(&pinv * y * pinv.transpose())
}

/// Like [`fit_relationship`] but falls back to the Moore-Penrose inverse when
/// `A` is rank deficient (still a minimiser, no longer unique).
pub fn fit_relationship_any(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match fit_relationship(a, y) {
        Err(Error::RankDeficient { .. }) => {
            let pinv = linalg::pseudo_inverse(a)?;
            Ok(&pinv * y * pinv.transpose())
        }
        other => other,
    }
}

fn check_structure_shape(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if !y.is_square() || a.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "structure is {}x{}, target is {}x{}",
            a.nrows(),
            a.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `Ŷ = A X Aᵀ`.
pub fn predict(a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != a.ncols() || x.ncols() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "structure is {}x{} but relationship is {}x{}",
            a.nrows(),
            a.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(a * x * a.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn rank_one() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let y = &v * v.transpose();
        let scan = scan_symmetric(&y, 3).unwrap();
        assert!((scan.singular_values[0] - 9.0).abs() < 1e-12);
        assert!(scan.loss(1) <= 1e-10);
        // sign convention: largest entry positive
        let a = scan.structure(1);
        assert!(a[(1, 0)] > 0.0);
    }

    #[test]
    fn full_rank_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_symmetric(9, &mut rng);
        let scan = scan_symmetric(&y, 9).unwrap();
        assert!(scan.loss(9) <= 1e-8 * y.norm());
        for k in 1..=9 {
            assert!(linalg::orthonormality_defect(scan.structure(k)) < 1e-8);
            if k > 1 {
                assert!(scan.loss(k) <= scan.loss(k - 1) + 1e-12);
                let prev = scan.structure(k - 1);
                assert_eq!(scan.structure(k).columns(0, k - 1), prev.columns(0, k - 1));
            }
        }
        assert!(scan.singular_values.windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
        assert!(matches!(scan_symmetric(&y, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(scan_symmetric(&y, 10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_structure_returns_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_symmetric(5, &mut rng);
        let x = fit_relationship(&DMatrix::identity(5, 5), &y).unwrap();
        assert!((&x - &y).norm() < 1e-14);
        let yhat = predict(&DMatrix::identity(5, 5), &y).unwrap();
        assert_eq!(yhat, y);
    }

    #[test]
    fn orthonormal_structure_matches_transpose_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y1 = random_symmetric(8, &mut rng);
        let y2 = random_symmetric(8, &mut rng);
        let scan = scan_symmetric(&y1, 4).unwrap();
        let a = scan.structure(4);
        let via_pinv = fit_relationship(a, &y2).unwrap();
        let via_t = a.transpose() * &y2 * a;
        assert!((via_pinv - via_t).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_structure_is_rejected() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.5, 0.5, 0.2, 0.2]);
        let y = DMatrix::identity(3, 3);
        assert!(matches!(fit_relationship(&a, &y), Err(Error::RankDeficient { .. })));
        assert!(fit_relationship_any(&a, &y).is_ok());
    }

    #[test]
    fn fitted_relationship_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = random_symmetric(5, &mut rng);
        let x = fit_relationship(&a, &y).unwrap();
        let loss = |x: &DMatrix<f64>| (&y - &a * x * a.transpose()).norm();
        let best = loss(&x);
        for _ in 0..100 {
            let mut e = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            e *= 1e-3 / e.norm();
            assert!(best <= loss(&(&x + e)));
        }
    }

    #[test]
    fn predict_examples() {
        let d = 4;
        let a = DMatrix::from_element(d, 1, 1.0 / (d as f64).sqrt());
        let x = DMatrix::from_element(1, 1, 2.5);
        let yhat = predict(&a, &x).unwrap();
        assert!(yhat.iter().all(|v| (v - 2.5 / d as f64).abs() < 1e-15));
        assert!(matches!(predict(&a, &DMatrix::zeros(2, 2)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn self_prediction_reproduces_scan_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = random_symmetric(10, &mut rng);
        let scan = scan_symmetric(&y, 10).unwrap();
        for k in 1..=10 {
            let a = scan.structure(k);
            let x = fit_relationship(a, &y).unwrap();
            let loss = (&y - predict(a, &x).unwrap()).norm();
            assert!((loss - scan.loss(k)).abs() < 1e-10, "k={k}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eckart_young(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_symmetric(7, &mut rng);
            let scan = scan_symmetric(&y, 7).unwrap();
            let best = scan.loss(k);
            for _ in 0..100 {
                let b = DMatrix::from_fn(7, k, |_, _| rng.random_range(-1.0..1.0));
                let c = DMatrix::from_fn(k, 7, |_, _| rng.random_range(-1.0..1.0));
                prop_assert!(best <= (&y - b * c).norm() + 1e-9);
            }
        }

        #[test]
        fn projection_is_idempotent(seed in any::<u64>(), k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_symmetric(7, &mut rng);
            let scan = scan_symmetric(&y, 7).unwrap();
            let a = scan.structure(k);
            let x = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let back = fit_relationship(a, &predict(a, &x).unwrap()).unwrap();
            prop_assert!((back - x).amax() < 1e-9);
        }

        #[test]
        fn nested_spans(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_symmetric(8, &mut rng);
            let scan = scan_symmetric(&y, 8).unwrap();
            for k in 1..8 {
                let small = scan.structure(k);
                let big = scan.structure(k + 1);
                let projected = big * (big.transpose() * small);
                prop_assert!((projected - small).norm() <= 1e-8);
            }
        }
    }
}
