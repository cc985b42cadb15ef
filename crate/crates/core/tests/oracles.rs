mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strucmp_core::comparison::{structural_comparison, ComparisonOptions};
use strucmp_core::dissim::{euclidean_dissimilarity, preprocess_features, PreprocessOptions};
use strucmp_core::io;
use strucmp_core::linalg;
use strucmp_core::significance::{self, ResamplingPlan, StatisticConfig};
use strucmp_core::simulation::{simulate, SimulationConfig};
use strucmp_core::svd_model;
use strucmp_core::DMatrix;

fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[test]
fn eigenvalues_agree_with_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 5, 12] {
        let y = random_symmetric(n, &mut rng);
        let mut oracle = common::jacobi_eigenvalues(&row_major(&y), n);
        oracle.sort_by(|a, b| b.total_cmp(a));
        let eig = linalg::sym_eigen_desc(&y).unwrap();
        for (a, b) in eig.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn scan_losses_are_spectral_tails() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let y = random_symmetric(8, &mut rng);
        let scan = svd_model::scan_symmetric(&y, 8).unwrap();
        let tails = common::tail_norms(&row_major(&y), 8, 8);
        for (a, b) in scan.losses().iter().zip(&tails) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn same_structure_converges_and_different_structure_persists() {
    let cfg = SimulationConfig { n: 40, l: 500, k: 8, sigma: 0.01, seed: 4, ..SimulationConfig::default() };
    let sim = simulate(&cfg).unwrap();
    let y1 = euclidean_dissimilarity(&sim.reference).unwrap();
    let ya = euclidean_dissimilarity(&sim.scenario_a).unwrap();
    let yb = euclidean_dissimilarity(&sim.scenario_b).unwrap();
    let ra = structural_comparison(&y1, &ya, &ComparisonOptions::svd(10)).unwrap();
    let rb = structural_comparison(&y1, &yb, &ComparisonOptions::svd(10)).unwrap();
    let (la, lb) = (&ra.predicted.loss, &rb.predicted.loss);
    // at k = K the same-structure target is explained up to noise
    assert!(la[7] < 0.05 * la[0]);
    assert!((3..8).all(|k| lb[k - 1] > la[k - 1]));
    for k in 1..=10 {
        let r = ra.residual(k);
        let total: f64 = ra.persistence().column(k - 1).sum();
        assert!((total - r.norm_squared()).abs() <= 1e-9 * total.max(1.0));
    }
}

#[test]
fn bootstrap_directory_matches_internal_resampling() {
    let cfg = SimulationConfig { n: 10, l: 30, k: 3, seed: 6, ..SimulationConfig::default() };
    let sim = simulate(&cfg).unwrap();
    let opts = PreprocessOptions::default();
    let d1 = preprocess_features(&sim.reference, &opts).unwrap().table;
    let d2 = preprocess_features(&sim.scenario_b, &opts).unwrap().table;
    let plan = ResamplingPlan::new(19, 3).unwrap();
    let mut stat = StatisticConfig::svd(4);
    stat.residual_ks = vec![2];
    let internal = significance::significance(&d1, &d2, &plan, &stat).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mats = significance::resample_matrices(&d1, &d2, &plan).unwrap();
    io::write_bootstrap_dir(dir.path(), d1.subjects(), &mats).unwrap();
    let (subjects, loaded) = io::read_bootstrap_dir(dir.path()).unwrap();
    assert_eq!(subjects, d1.subjects());
    assert_eq!(loaded, mats);
    let external = significance::significance_from_matrices(&loaded, &stat).unwrap();
    assert_eq!(external, internal);
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(io::read_bootstrap_dir(dir.path()).is_err());
    std::fs::write(dir.path().join(io::MANIFEST), "replicate,role,path\n0,reference,a.csv\n").unwrap();
    assert!(io::read_bootstrap_dir(dir.path()).is_err());
    std::fs::write(dir.path().join(io::MANIFEST), "replicate,role,path\n0,bogus,a.csv\n").unwrap();
    assert!(io::read_bootstrap_dir(dir.path()).is_err());
}
