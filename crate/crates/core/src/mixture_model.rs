//! Simplex-constrained structure learning: `Y ≈ A X Aᵀ` with every row of
//! `A` a probability vector, fitted by alternating a multiplicative update of
//! `A` with an exact (or multiplicative, when `A` loses column rank) update of `X`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};
use crate::svd_model::{Method, ScanLevel, StructureScan};

/// Entries of `A` are kept at or above this after every update.
pub const ENTRY_FLOOR: f64 = 1e-12;
/// Denominators smaller than this in magnitude are replaced by it.
pub const DENOM_FLOOR: f64 = 1e-300;
/// Relative loss increase tolerated when accepting a step.
pub const ACCEPT_SLACK: f64 = 1e-12;
/// Halvings attempted on a rejected step before giving up.
pub const MAX_BLENDS: usize = 10;
/// Offset added to `|U_k|` in the SVD-seeded start.
const SEED_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    SvdSeeded,
    RandomDirichlet,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd_seeded" | "svd" => Ok(Init::SvdSeeded),
            "random_dirichlet" | "random" => Ok(Init::RandomDirichlet),
            other => Err(Error::InvalidArgument(format!("unknown init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptions {
    pub t_max: usize,
    pub delta: f64,
    pub init: Init,
    pub seed: u64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self { t_max: 2000, delta: 1e-6, init: Init::SvdSeeded, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `‖A_t - A_{t-1}‖_F < delta`.
    Delta,
    MaxIter,
    /// No loss-decreasing step found after [`MAX_BLENDS`] halvings.
    LossIncrease,
}

/// Which rule produced the relationship matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XBranch {
    Projection,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    /// `d x k`, rows on the probability simplex.
    pub structure: DMatrix<f64>,
    /// `k x k`.
    pub relationship: DMatrix<f64>,
    /// Loss at the start and after every accepted iteration.
    pub loss_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub termination: Termination,
}

impl MixtureFit {
    pub fn loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

fn check_shapes(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    let (d, k) = a.shape();
    if y.shape() != (d, d) || x.shape() != (k, k) {
        return Err(Error::ShapeMismatch(format!(
            "A {}x{}, X {}x{}, Y {}x{}",
            d,
            k,
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    let den = if den.abs() < DENOM_FLOOR { DENOM_FLOOR.copysign(den) } else { den };
    num / den
}

/// Numerator `YᵀAX + YAXᵀ` and denominator `AXAᵀAXᵀ + AXᵀAᵀAX` of the `A` update.
pub fn update_a_terms(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shapes(a, x, y)?;
    let num = y.transpose() * a * x + y * a * x.transpose();
    let ata = a.transpose() * a;
    let ax = a * x;
    let axt = a * x.transpose();
    let den = &ax * &ata * x.transpose() + &axt * &ata * x;
    Ok((num, den))
}

/// Divide every row by its sum.
pub fn normalise_rows(a: &mut DMatrix<f64>) {
    for mut row in a.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
}

/// One multiplicative step on `A` followed by flooring and row normalisation.
///
/// The ratio `N / D` is taken with negative parts moved across, so both sides
/// stay nonnegative when `X` has negative entries: `P = [N]⁺ + [D]⁻`,
/// `M = [N]⁻ + [D]⁺`. Each row also carries the multiplier of its sum-to-one
/// constraint: `A_ij ← A_ij (P_ij + Σ_l A_il M_il) / (M_ij + Σ_l A_il P_il)`.
/// Points with `N = D` are fixed, as are simplex-constrained stationary points.
pub fn update_a(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (num, den) = update_a_terms(a, x, y)?;
    let up = num.map(|v| v.max(0.0)) + den.map(|v| (-v).max(0.0));
    let down = num.map(|v| (-v).max(0.0)) + den.map(|v| v.max(0.0));
    let mut next = a.clone();
    for i in 0..a.nrows() {
        let row_up = a.row(i).dot(&up.row(i));
        let row_down = a.row(i).dot(&down.row(i));
        for j in 0..a.ncols() {
            let updated = a[(i, j)] * safe_ratio(up[(i, j)] + row_down, down[(i, j)] + row_up);
            next[(i, j)] = if updated.is_finite() { updated.max(ENTRY_FLOOR) } else { ENTRY_FLOOR };
        }
    }
    normalise_rows(&mut next);
    Ok(next)
}

/// Relationship update: the exact least-squares solution when `A` has full
/// column rank, otherwise `X ∘ (AᵀYA) / (AᵀA X AᵀA)`.
pub fn update_x(
    a: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, XBranch)> {
    check_shapes(a, x_prev, y)?;
    if linalg::gram_condition(a) <= linalg::MAX_CONDITION {
        if let Ok(pinv) = linalg::left_pseudo_inverse(a) {
            return Ok((&pinv * y * pinv.transpose(), XBranch::Projection));
        }
    }
    let ata = a.transpose() * a;
    let num = a.transpose() * y * a;
    let den = &ata * x_prev * &ata;
    let mut next = x_prev.clone();
    for ((v, n), dn) in next.iter_mut().zip(num.iter()).zip(den.iter()) {
        let updated = *v * safe_ratio(*n, *dn);
        if updated.is_finite() {
            *v = updated;
        }
    }
    Ok((next, XBranch::Multiplicative))
}

fn loss(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (y - a * x * a.transpose()).norm()
}

fn initial_structure(
    y: &DMatrix<f64>,
    k: usize,
    opts: &MixtureOptions,
    eig: Option<&SymEigen>,
) -> Result<DMatrix<f64>> {
    let d = y.nrows();
    let mut a = match opts.init {
        Init::SvdSeeded => {
            let owned;
            let eig = match eig {
                Some(e) => e,
                None => {
                    owned = linalg::sym_eigen_by_magnitude(y)?;
                    &owned
                }
            };
            eig.vectors.columns(0, k).map(|v| v.abs() + SEED_OFFSET)
        }
        Init::RandomDirichlet => {
            // Dirichlet(1, ..., 1) rows: normalised unit exponentials.
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            DMatrix::from_fn(d, k, |_, _| {
                let e: f64 = Exp1.sample(&mut rng);
                e.max(ENTRY_FLOOR)
            })
        }
    };
    normalise_rows(&mut a);
    Ok(a)
}

/// Fit the mixture model at complexity `k`.
pub fn learn_mixture(y: &DMatrix<f64>, k: usize, opts: &MixtureOptions) -> Result<MixtureFit> {
    learn_mixture_observed(y, k, opts, None, |_, _, _, _| {})
}

/// [`learn_mixture`] with an optional precomputed eigendecomposition (for
/// the SVD-seeded start) and a callback invoked with
/// `(iteration, A, X, loss)` after the start and every accepted iteration.
pub fn learn_mixture_observed<F>(
    y: &DMatrix<f64>,
    k: usize,
    opts: &MixtureOptions,
    eig: Option<&SymEigen>,
    mut observe: F,
) -> Result<MixtureFit>
where
    F: FnMut(usize, &DMatrix<f64>, &DMatrix<f64>, f64),
{
    let d = y.nrows();
    if !y.is_square() {
        return Err(Error::BadShape(format!("target is {}x{}", y.nrows(), y.ncols())));
    }
    if k < 1 || k > d {
        return Err(Error::InvalidArgument(format!("k must be in 1..={d}, got {k}")));
    }
    if !(opts.delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {}", opts.delta)));
    }

    let mut a = initial_structure(y, k, opts, eig)?;
    let mean = y.mean();
    let x_seed = DMatrix::from_element(k, k, if mean != 0.0 { mean } else { 1.0 });
    let (mut x, _) = update_x(&a, &x_seed, y)?;
    let mut current = loss(&a, &x, y);
    let mut trace = vec![current];
    observe(0, &a, &x, current);

    let mut termination = Termination::MaxIter;
    let mut iterations = 0;
    for t in 1..=opts.t_max {
        iterations = t;
        let mut proposal = update_a(&a, &x, y)?;
        let mut accepted = None;
        for attempt in 0..=MAX_BLENDS {
            if attempt > 0 {
                // halve the step toward the previous iterate
                proposal = (&proposal + &a) * 0.5;
                normalise_rows(&mut proposal);
            }
            let (x_new, _) = update_x(&proposal, &x, y)?;
            let l = loss(&proposal, &x_new, y);
            if l.is_finite() && l <= current * (1.0 + ACCEPT_SLACK) {
                accepted = Some((x_new, l));
                break;
            }
        }
        let Some((x_new, l)) = accepted else {
            termination = Termination::LossIncrease;
            iterations = t - 1;
            break;
        };
        let step = (&proposal - &a).norm();
        a = proposal;
        x = x_new;
        current = l;
        trace.push(l);
        observe(t, &a, &x, l);
        if step < opts.delta {
            termination = Termination::Delta;
            break;
        }
    }

    Ok(MixtureFit {
        structure: a,
        relationship: x,
        loss_trace: trace,
        iterations_used: iterations,
        converged: termination == Termination::Delta,
        termination,
    })
}

/// Independent mixture fits for every `k` in `1..=kmax`, run in parallel.
/// Fit `k` uses seed `opts.seed + k`.
pub fn learn_mixture_scan(
    y: &DMatrix<f64>,
    kmax: usize,
    opts: &MixtureOptions,
) -> Result<(StructureScan, Vec<MixtureFit>)> {
    let d = y.nrows();
    if kmax < 1 || kmax > d {
        return Err(Error::InvalidArgument(format!("kmax must be in 1..={d}, got {kmax}")));
    }
    let eig = linalg::sym_eigen_by_magnitude(y)?;
    let fits = (1..=kmax)
        .into_par_iter()
        .map(|k| {
            let o = MixtureOptions { seed: opts.seed.wrapping_add(k as u64), ..*opts };
            learn_mixture_observed(y, k, &o, Some(&eig), |_, _, _, _| {})
        })
        .collect::<Result<Vec<_>>>()?;
    let levels = fits
        .iter()
        .map(|f| ScanLevel {
            structure: f.structure.clone(),
            relationship: f.relationship.clone(),
            loss: f.loss(),
        })
        .collect();
    let singular_values = eig.values.iter().map(|v| v.abs()).collect();
    Ok((StructureScan::new(Method::Mixture, singular_values, levels), fits))
}
