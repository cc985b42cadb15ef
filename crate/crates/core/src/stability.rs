//! Numerical checks of the perturbation bounds for the SVD comparison:
//! how far the residual norm can move when both matrices are perturbed, and
//! the Davis-Kahan `sin Θ` bound it rests on.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::svd_model;

/// Absolute slack allowed when comparing the two sides of a bound.
pub const BOUND_SLACK: f64 = 1e-9;
/// Gaps below this skip the gap-dependent bounds.
pub const MIN_GAP: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-8;

/// `λ_k - λ_{k+1}` with eigenvalues sorted non-increasing (`k` is 1-based).
pub fn eigengap(y: &DMatrix<f64>, k: usize) -> Result<f64> {
    let d = y.nrows();
    if k < 1 || k >= d {
        return Err(Error::InvalidArgument(format!("k must be in 1..{d}, got {k}")));
    }
    let eig = linalg::sym_eigen_desc(y)?;
    Ok(eig.values[k - 1] - eig.values[k])
}

fn check_orthonormal(v: &DMatrix<f64>) -> Result<()> {
    let defect = linalg::orthonormality_defect(v);
    if defect > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(defect));
    }
    Ok(())
}

/// `‖sin Θ(V', V)‖_F = sqrt(Σ_j (1 - σ_j²))`, `σ_j` the singular values of `V'ᵀV`.
pub fn sin_theta_norm(v: &DMatrix<f64>, v_prime: &DMatrix<f64>) -> Result<f64> {
    if v.shape() != v_prime.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            v.nrows(),
            v.ncols(),
            v_prime.nrows(),
            v_prime.ncols()
        )));
    }
    check_orthonormal(v)?;
    check_orthonormal(v_prime)?;
    let cosines = (v_prime.transpose() * v).singular_values();
    Ok(cosines.iter().map(|c| (1.0 - c * c).max(0.0)).sum::<f64>().sqrt())
}

/// `‖VVᵀ - V'V'ᵀ‖_F`, which equals `sqrt(2) ‖sin Θ‖_F` for orthonormal inputs.
pub fn projector_distance(v: &DMatrix<f64>, v_prime: &DMatrix<f64>) -> f64 {
    (v * v.transpose() - v_prime * v_prime.transpose()).norm()
}

/// Two sides of one inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, pass: lhs <= rhs + BOUND_SLACK }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// `max(‖Y1 - Y1'‖_F, ‖Y2 - Y2'‖_F)`.
    pub epsilon: f64,
    pub delta_k: f64,
    pub delta_k_prime: f64,
    pub target_norm: f64,
    /// Same structure, perturbed target: bound `2ε`.
    pub part1: BoundCheck,
    /// Perturbed structure, same target: bound `2^{5/2} ε / δ_k`. `None` when skipped.
    pub part2: Option<BoundCheck>,
    /// Both perturbed: bound `(2 + 2^{5/2}) ε / min(δ_k, δ'_k)`.
    pub deviation: Option<BoundCheck>,
    /// `‖sin Θ‖_F <= 2 min(√k ‖E‖_2, ‖E‖_F) / δ_k`.
    pub davis_kahan: Option<BoundCheck>,
}

impl TrialRecord {
    pub fn all_pass(&self) -> bool {
        self.part1.pass && [self.part2, self.deviation, self.davis_kahan].iter().flatten().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundSummary {
    pub trials: usize,
    pub part1_pass: usize,
    pub part2_pass: usize,
    pub part2_skipped: usize,
    pub deviation_pass: usize,
    pub deviation_skipped: usize,
    pub davis_kahan_pass: usize,
    pub davis_kahan_skipped: usize,
}

impl BoundSummary {
    pub fn all_pass(&self) -> bool {
        self.part1_pass == self.trials
            && self.part2_pass + self.part2_skipped == self.trials
            && self.deviation_pass + self.deviation_skipped == self.trials
            && self.davis_kahan_pass + self.davis_kahan_skipped == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub epsilon0: f64,
    pub summary: BoundSummary,
    pub trials: Vec<TrialRecord>,
}

/// Symmetric Gaussian matrix rescaled to Frobenius norm exactly `scale`.
pub fn symmetric_perturbation(d: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    if scale == 0.0 {
        return DMatrix::zeros(d, d);
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = (&g + g.transpose()) * 0.5;
    let n = s.norm();
    s * (scale / n)
}

fn structure(y: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    Ok(svd_model::scan_symmetric(y, k)?.structure(k).clone())
}

fn residual_norm(y: &DMatrix<f64>, a: &DMatrix<f64>, target_for_fit: &DMatrix<f64>) -> Result<f64> {
    let x = svd_model::fit_relationship(a, target_for_fit)?;
    Ok((y - a * x * a.transpose()).norm())
}

fn run_trial(y1: &DMatrix<f64>, y2: &DMatrix<f64>, eps0: f64, k: usize, seed: u64) -> Result<TrialRecord> {
    let d = y1.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e1 = symmetric_perturbation(d, eps0, &mut rng);
    let e2 = symmetric_perturbation(d, eps0, &mut rng);
    let y1p = y1 + &e1;
    let y2p = y2 + &e2;
    let epsilon = e1.norm().max(e2.norm());

    let a = structure(y1, k)?;
    let ap = structure(&y1p, k)?;
    let delta_k = eigengap(y1, k)?;
    let delta_kp = eigengap(&y1p, k)?;

    let base = residual_norm(y2, &a, y2)?;
    let part1 = BoundCheck::new(base, residual_norm(&y2p, &a, &y2p)? + 2.0 * epsilon);

    let c = 2f64.powf(2.5);
    let part2 = (delta_k >= MIN_GAP)
        .then(|| -> Result<_> {
            Ok(BoundCheck::new(base, residual_norm(y2, &ap, y2)? + c * epsilon / delta_k))
        })
        .transpose()?;
    let min_gap = delta_k.min(delta_kp);
    let deviation = (min_gap >= MIN_GAP)
        .then(|| -> Result<_> {
            let moved = residual_norm(&y2p, &ap, &y2p)?;
            Ok(BoundCheck::new((base - moved).abs(), (2.0 + c) * epsilon / min_gap))
        })
        .transpose()?;

    let davis_kahan = (delta_k >= MIN_GAP)
        .then(|| -> Result<_> {
            let v = linalg::sym_eigen_desc(y1)?.vectors.columns(0, k).into_owned();
            let vp = linalg::sym_eigen_desc(&y1p)?.vectors.columns(0, k).into_owned();
            let spectral = linalg::spectral_norm_sym(&e1)?;
            let bound = 2.0 * ((k as f64).sqrt() * spectral).min(e1.norm()) / delta_k;
            Ok(BoundCheck::new(sin_theta_norm(&v, &vp)?, bound))
        })
        .transpose()?;

    Ok(TrialRecord {
        seed,
        epsilon,
        delta_k,
        delta_k_prime: delta_kp,
        target_norm: y2.norm(),
        part1,
        part2,
        deviation,
        davis_kahan,
    })
}

fn summarise(trials: &[TrialRecord]) -> BoundSummary {
    let mut s = BoundSummary { trials: trials.len(), ..Default::default() };
    for t in trials {
        s.part1_pass += t.part1.pass as usize;
        match t.part2 {
            Some(c) => s.part2_pass += c.pass as usize,
            None => s.part2_skipped += 1,
        }
        match t.deviation {
            Some(c) => s.deviation_pass += c.pass as usize,
            None => s.deviation_skipped += 1,
        }
        match t.davis_kahan {
            Some(c) => s.davis_kahan_pass += c.pass as usize,
            None => s.davis_kahan_skipped += 1,
        }
    }
    s
}

/// Evaluate the perturbation bounds on `trials` random perturbations of
/// norm `eps0` of a fixed pair. Trial `t` uses seed `seed + t`.
pub fn check_perturbation_bounds(
    y1: &DMatrix<f64>,
    y2: &DMatrix<f64>,
    eps0: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    let d = y1.nrows();
    if !y1.is_square() || y2.shape() != y1.shape() {
        return Err(Error::ShapeMismatch("Y1 and Y2 must be square and of equal size".into()));
    }
    if k < 1 || k >= d {
        return Err(Error::InvalidArgument(format!("k must be in 1..{d}, got {k}")));
    }
    if !(eps0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {eps0}")));
    }
    let records = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(y1, y2, eps0, k, seed.wrapping_add(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { k, epsilon0: eps0, summary: summarise(&records), trials: records })
}

/// Random pair with a positive semi-definite, well-separated reference
/// spectrum. Both matrices have unit Frobenius norm, the scale on which the
/// bounds are stated (they carry no `‖Y2‖_F` factor).
pub fn well_gapped_pair(d: usize, rng: &mut impl Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let lambdas: Vec<f64> = (0..d).map(|i| (d - i) as f64 + rng.random_range(-0.25..0.25)).collect();
    let y1 = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambdas)) * q.transpose();
    let y1 = (&y1 + y1.transpose()) * 0.5;
    let y1 = &y1 / y1.norm();
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y2 = (&m + m.transpose()) * 0.5;
    let y2 = &y2 / y2.norm();
    (y1, y2)
}

/// Many independent well-gapped pairs, one perturbation trial each.
pub fn random_bound_trials(d: usize, k: usize, eps0: f64, trials: usize, seed: u64) -> Result<BoundReport> {
    if k < 1 || k >= d {
        return Err(Error::InvalidArgument(format!("k must be in 1..{d}, got {k}")));
    }
    let records = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = seed.wrapping_add(t);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (y1, y2) = well_gapped_pair(d, &mut rng);
            run_trial(&y1, &y2, eps0, k, s ^ 0x9e37_79b9_7f4a_7c15)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { k, epsilon0: eps0, summary: summarise(&records), trials: records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn gaps() {
        let eye = DMatrix::<f64>::identity(4, 4);
        for k in 1..4 {
            assert!(eigengap(&eye, k).unwrap().abs() < 1e-12);
        }
        let y = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert!((eigengap(&y, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((eigengap(&y, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(eigengap(&y, 3).is_err());
    }

    #[test]
    fn sin_theta_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let q = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let v = q.columns(0, 3).into_owned();
        assert!(sin_theta_norm(&v, &v).unwrap() < 1e-7);
        let w = q.columns(3, 3).into_owned();
        assert!((sin_theta_norm(&v, &w).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        let not = DMatrix::from_element(6, 3, 1.0);
        assert!(matches!(sin_theta_norm(&v, &not), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn sin_theta_symmetry_and_projector_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let v = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let w = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let s = sin_theta_norm(&v, &w).unwrap();
            assert!((s - sin_theta_norm(&w, &v).unwrap()).abs() < 1e-12);
            assert!((projector_distance(&v, &w).powi(2) - 2.0 * s * s).abs() < 1e-10);
            let r = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            assert!((sin_theta_norm(&(&v * &r), &w).unwrap() - s).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_perturbation_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (y1, y2) = well_gapped_pair(8, &mut rng);
        let report = check_perturbation_bounds(&y1, &y2, 0.0, 3, 5, 0).unwrap();
        for t in &report.trials {
            assert_eq!(t.epsilon, 0.0);
            assert_eq!(t.part1.lhs, t.part1.rhs);
            let p2 = t.part2.unwrap();
            assert!((p2.lhs - p2.rhs).abs() < 1e-12);
            assert!(t.all_pass());
        }
        assert!(report.summary.all_pass());
    }

    #[test]
    fn degenerate_gap_is_skipped() {
        let y1 = DMatrix::<f64>::identity(5, 5);
        let y2 = DMatrix::from_element(5, 5, 0.1);
        let report = check_perturbation_bounds(&y1, &y2, 0.0, 2, 3, 0).unwrap();
        assert_eq!(report.summary.part2_skipped, 3);
        assert_eq!(report.summary.davis_kahan_skipped, 3);
        assert!(report.summary.all_pass());
    }

    #[test]
    fn perturbation_has_exact_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let e = symmetric_perturbation(9, 0.01, &mut rng);
        assert!((e.norm() - 0.01).abs() < 1e-15);
        assert_eq!(e, e.transpose());
    }
}
