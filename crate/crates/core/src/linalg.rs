//! Dense linear-algebra helpers shared by the model modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a Gram matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 100_000;

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in the order of `vectors`' columns.
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

fn raw_eigen(y: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !y.is_square() {
        return Err(Error::BadShape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DecompositionFailure("matrix contains non-finite entries".into()));
    }
    // Work on the exact symmetric part; the solver reads only one triangle.
    let sym = (y + y.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::DecompositionFailure(format!(
            "symmetric QR iteration did not converge in {EIGEN_MAX_ITER} sweeps (d = {})",
            y.nrows()
        ))
    })
}

fn reorder(eig: SymmetricEigen<f64, nalgebra::Dyn>, order: &[usize]) -> SymEigen {
    let d = order.len();
    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), d);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    SymEigen { values, vectors }
}

/// Eigenpairs sorted by signed eigenvalue, largest first.
pub fn sym_eigen_desc(y: &DMatrix<f64>) -> Result<SymEigen> {
    let eig = raw_eigen(y)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    Ok(reorder(eig, &order))
}

/// Eigenpairs sorted by eigenvalue magnitude, largest first. For a symmetric
/// matrix the vectors are its left singular vectors and `|values|` its
/// singular values.
pub fn sym_eigen_by_magnitude(y: &DMatrix<f64>) -> Result<SymEigen> {
    let eig = raw_eigen(y)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]))
            .then(a.cmp(&b))
    });
    Ok(reorder(eig, &order))
}

/// Flip `v` so that its largest-magnitude entry is positive (first index wins ties).
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> Result<f64> {
    let eig = raw_eigen(m)?;
    Ok(eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Condition number of `AᵀA`, infinite when it is singular.
pub fn gram_condition(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    match raw_eigen(&gram) {
        Ok(eig) => {
            let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            if min <= 0.0 || max == 0.0 {
                f64::INFINITY
            } else {
                max / min
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// `(AᵀA)⁻¹Aᵀ` for a full-column-rank `a`.
pub fn left_pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = gram_condition(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient { cond });
    }
    let gram = a.transpose() * a;
    let chol = gram.cholesky().ok_or(Error::RankDeficient { cond })?;
    Ok(chol.solve(&a.transpose()))
}

/// Moore-Penrose pseudoinverse through the SVD; handles rank deficiency.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, &v| m.max(v));
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    svd.pseudo_inverse(tol).map_err(|e| Error::DecompositionFailure(e.to_string()))
}

/// Orthonormal polar factor `U Vᵀ` of a square matrix.
pub fn polar_orthogonal(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::DecompositionFailure("SVD did not return singular vectors".into())),
    }
}

/// Largest deviation of `AᵀA` from the identity.
pub fn orthonormality_defect(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}
