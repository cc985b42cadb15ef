//! Test-only reference numerics, independent of nalgebra's decompositions.

#![allow(dead_code)]

/// Eigenvalues of a symmetric matrix (row-major `n x n`) by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// `sqrt(sum_{j>k} sigma_j^2)` for `k = 1..=kmax`, singular values from the oracle.
pub fn tail_norms(a: &[f64], n: usize, kmax: usize) -> Vec<f64> {
    let mut sigma: Vec<f64> = jacobi_eigenvalues(a, n).into_iter().map(f64::abs).collect();
    sigma.sort_by(|x, y| y.total_cmp(x));
    (1..=kmax).map(|k| sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt()).collect()
}
