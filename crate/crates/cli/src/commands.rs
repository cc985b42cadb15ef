use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use strucmp_core::comparison::{self, structural_comparison, ClusterAssignment, ComparisonOptions};
use strucmp_core::dissim::{
    euclidean_dissimilarity, filter_missing, preprocess_features, DissimilarityMatrix, FeatureTable, Impute,
    PreprocessOptions,
};
use strucmp_core::io::{self, format_f64, LabeledMatrix};
use strucmp_core::significance::{self, ResamplingPlan, StatisticConfig, MIN_RESAMPLES};
use strucmp_core::simulation::{self, SimulationConfig};
use strucmp_core::{stability, DMatrix};

use crate::args::{BoundsArgs, ChartArgs, CompareArgs, FeatureArgs, SignificanceArgs, SimulateArgs};
use crate::chart::{self, ChartData};
use crate::error::{CliError, CliResult};
use crate::metadata::{digest_file, resolve_seed, InputDigest, RunMetadata};

/// Default upper complexity.
pub const DEFAULT_KMAX: usize = 30;

fn input_error(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

pub fn k_labels(kmax: usize) -> Vec<String> {
    (1..=kmax).map(|k| format!("k{k}")).collect()
}

fn labeled(rows: &[String], cols: Vec<String>, values: DMatrix<f64>) -> LabeledMatrix {
    LabeledMatrix { corner: "subject".into(), rows: rows.to_vec(), cols, values }
}

fn write_labeled(dir: &Path, name: &str, m: &LabeledMatrix, outputs: &mut Vec<String>) -> CliResult<()> {
    io::write_matrix_path(&dir.join(name), m)?;
    outputs.push(name.to_string());
    Ok(())
}

fn write_rows<S: AsRef<str>>(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
    outputs: &mut Vec<String>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    w.flush()?;
    outputs.push(name.to_string());
    Ok(())
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))
}

fn preprocess_options(f: &FeatureArgs) -> CliResult<PreprocessOptions> {
    if !(f.cap > 0.0) {
        return Err(input_error(format!("--cap must be positive, got {}", f.cap)));
    }
    if !(0.0..=1.0).contains(&f.max_missing) {
        return Err(input_error(format!("--max-missing must be in [0, 1], got {}", f.max_missing)));
    }
    Ok(PreprocessOptions { cap: f.cap, standardize: !f.no_standardize, impute: Impute::Mean })
}

/// Read, filter by missingness, and preprocess a feature table.
pub fn load_table(path: &Path, f: &FeatureArgs) -> CliResult<FeatureTable> {
    let opts = preprocess_options(f)?;
    let raw = io::read_feature_table_path(path).map_err(|e| with_path(e, path))?;
    let kept = filter_missing(&raw, f.max_missing).map_err(|e| with_path(e, path))?;
    Ok(preprocess_features(&kept, &opts).map_err(|e| with_path(e, path))?.table)
}

fn load_matrix(path: &Path) -> CliResult<DissimilarityMatrix> {
    io::read_dissimilarity_path(path).map_err(|e| with_path(e, path))
}

fn with_path(e: strucmp_core::Error, path: &Path) -> CliError {
    let numerical = e.is_numerical();
    let text = e.to_string();
    let shown = path.display().to_string();
    let msg = if text.contains(&shown) { text } else { format!("{shown}: {text}") };
    if numerical {
        CliError::Numerical(msg)
    } else {
        CliError::Input(msg)
    }
}

fn choose_kmax(requested: Option<usize>, d: usize) -> CliResult<usize> {
    let kmax = requested.unwrap_or(d.min(DEFAULT_KMAX));
    if kmax < 1 || kmax > d {
        return Err(input_error(format!("--kmax must be in 1..={d}, got {kmax}")));
    }
    Ok(kmax)
}

fn check_residual_ks(ks: &[usize], kmax: usize) -> CliResult<Vec<usize>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if let Some(k) = ks.iter().find(|&&k| k < 1 || k > kmax) {
        return Err(input_error(format!("--residual-k {k} outside 1..={kmax}")));
    }
    Ok(ks)
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(input_error(format!("--alpha must be in (0, 0.5], got {alpha}")));
    }
    Ok(())
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let (y1, y2, inputs) = match (&a.y1, &a.y2, &a.d1, &a.d2) {
        (Some(p1), Some(p2), None, None) => {
            (load_matrix(p1)?, load_matrix(p2)?, vec![digest_file(p1)?, digest_file(p2)?])
        }
        (None, None, Some(p1), Some(p2)) => {
            let t1 = load_table(p1, &a.features)?;
            let t2 = load_table(p2, &a.features)?;
            let y1 = euclidean_dissimilarity(&t1).map_err(|e| with_path(e, p1))?;
            let y2 = euclidean_dissimilarity(&t2).map_err(|e| with_path(e, p2))?;
            (y1, y2, vec![digest_file(p1)?, digest_file(p2)?])
        }
        _ => return Err(input_error("give either --y1 and --y2 or --d1 and --d2")),
    };
    let kmax = choose_kmax(a.kmax, y1.dim())?;
    let residual_ks = check_residual_ks(&a.residual_k, kmax)?;
    let opts = ComparisonOptions { kmax, method: a.method, mixture: a.mixture.options(seed.value) };
    let result = structural_comparison(&y1, &y2, &opts)?;
    let (direct_scan, _) = comparison::learn_scan(y2.values(), &opts)?;
    let direct = direct_scan.losses();

    create_out(&a.out)?;
    let mut outputs = Vec::new();
    let subjects = &result.subjects;
    write_labeled(
        &a.out,
        "persistence.csv",
        &labeled(subjects, k_labels(kmax), result.persistence().clone()),
        &mut outputs,
    )?;
    let loss_rows = (1..=kmax).map(|k| {
        vec![
            k.to_string(),
            format_f64(result.learned.loss[k - 1]),
            format_f64(result.predicted.loss[k - 1]),
            format_f64(direct[k - 1]),
        ]
    });
    write_rows(&a.out, "losses.csv", &["k", "learned", "predicted", "direct"], loss_rows, &mut outputs)?;
    let structure = result.scan.structure(kmax).clone();
    let comps = (1..=kmax).map(|c| format!("c{c}")).collect();
    write_labeled(&a.out, "structure.csv", &labeled(subjects, comps, structure), &mut outputs)?;
    for &k in &residual_ks {
        let name = format!("residuals_k{k}.csv");
        write_labeled(&a.out, &name, &labeled(subjects, subjects.clone(), result.residual(k)), &mut outputs)?;
    }
    if let Some(fits) = &result.mixture_fits {
        let rows = fits.iter().enumerate().map(|(i, f)| {
            vec![
                (i + 1).to_string(),
                f.iterations_used.to_string(),
                format!("{:?}", f.termination).to_lowercase(),
                f.converged.to_string(),
                format_f64(f.loss()),
            ]
        });
        write_rows(
            &a.out,
            "mixture_fits.csv",
            &["k", "iterations", "termination", "converged", "loss"],
            rows,
            &mut outputs,
        )?;
    }
    let mut meta = RunMetadata::new("compare", Some(seed), a, inputs)?;
    meta.outputs = outputs;
    meta.notes = Some(serde_json::json!({ "kmax": kmax, "subjects": subjects.len() }));
    meta.write(&a.out)?;
    println!(
        "compared {} subjects, kmax {kmax}, method {}: predicted loss {} at k=1, {} at k={kmax}",
        subjects.len(),
        a.method,
        result.predicted.loss[0],
        result.predicted.loss[kmax - 1]
    );
    Ok(())
}

fn directory_digests(dir: &Path) -> CliResult<Vec<InputDigest>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input_error(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(|p| digest_file(p)).collect()
}

#[derive(Serialize)]
struct SignificanceNotes {
    mode: &'static str,
    n_bs: usize,
    kmax: usize,
    alpha: f64,
    observed_statistic: &'static str,
    marking_rule: &'static str,
}

pub fn significance(a: &SignificanceArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    check_alpha(a.alpha)?;
    let (mode, subjects, mats, inputs) = match (&a.bootstrap_dir, &a.d1, &a.d2) {
        (Some(dir), None, None) => {
            let (subjects, mats) = io::read_bootstrap_dir(dir).map_err(|e| with_path(e, dir))?;
            if mats.len() < MIN_RESAMPLES {
                return Err(input_error(format!(
                    "{}: need at least {MIN_RESAMPLES} replicates, found {}",
                    dir.display(),
                    mats.len()
                )));
            }
            ("external", subjects, mats, directory_digests(dir)?)
        }
        (None, Some(p1), Some(p2)) => {
            let t1 = load_table(p1, &a.features)?;
            let t2 = load_table(p2, &a.features)?;
            let plan = ResamplingPlan::new(a.nbs, seed.value)?;
            let mats = significance::resample_matrices(&t1, &t2, &plan)?;
            if let Some(dir) = &a.export_bootstrap {
                io::write_bootstrap_dir(dir, t1.subjects(), &mats)?;
            }
            ("internal", t1.subjects().to_vec(), mats, vec![digest_file(p1)?, digest_file(p2)?])
        }
        _ => return Err(input_error("give either --d1 and --d2 or --bootstrap-dir")),
    };
    let d = subjects.len();
    let kmax = choose_kmax(a.kmax, d)?;
    let residual_ks = check_residual_ks(&a.residual_k, kmax)?;
    let cfg = StatisticConfig {
        comparison: ComparisonOptions { kmax, method: a.method, mixture: a.mixture.options(seed.value) },
        residual_ks: residual_ks.clone(),
    };
    let res = significance::significance_from_matrices(&mats, &cfg)?;

    create_out(&a.out)?;
    let mut outputs = Vec::new();
    let ks = k_labels(kmax);
    write_labeled(&a.out, "pvalues.csv", &labeled(&subjects, ks.clone(), res.p_cells.clone()), &mut outputs)?;
    write_labeled(
        &a.out,
        "observed_persistence.csv",
        &labeled(&subjects, ks.clone(), res.observed_persistence.clone()),
        &mut outputs,
    )?;
    let pk_rows = res.p_of_k.iter().enumerate().map(|(i, p)| vec![(i + 1).to_string(), format_f64(*p)]);
    write_rows(&a.out, "p_of_k.csv", &["k", "p_of_k"], pk_rows, &mut outputs)?;
    let marks = res.significant(a.alpha);
    let mut combined = Vec::with_capacity(d * kmax);
    for (i, s) in subjects.iter().enumerate() {
        for k in 0..kmax {
            combined.push(vec![
                s.clone(),
                (k + 1).to_string(),
                format_f64(res.p_cells[(i, k)]),
                format_f64(res.p_of_k[k]),
                format_f64(res.combined[(i, k)]),
                marks[(i, k)].to_string(),
            ]);
        }
    }
    write_rows(
        &a.out,
        "combined.csv",
        &["subject", "k", "p_cell", "p_of_k", "combined", "significant"],
        combined,
        &mut outputs,
    )?;
    let kh_rows = res.k_hats.iter().enumerate().map(|(i, k)| vec![i.to_string(), k.to_string()]);
    write_rows(&a.out, "k_hats.csv", &["replicate", "k_hat"], kh_rows, &mut outputs)?;
    let mut archive = Vec::with_capacity(res.replicates.len() * d * kmax);
    for (r, rep) in res.replicates.iter().enumerate() {
        for (i, s) in subjects.iter().enumerate() {
            for k in 0..kmax {
                archive.push(vec![
                    r.to_string(),
                    s.clone(),
                    (k + 1).to_string(),
                    format_f64(rep.null_persistence[(i, k)]),
                    format_f64(rep.observed_persistence[(i, k)]),
                ]);
            }
        }
    }
    write_rows(
        &a.out,
        "null_statistics.csv",
        &["replicate", "subject", "k", "null_persistence", "observed_persistence"],
        archive,
        &mut outputs,
    )?;
    for (k, p) in &res.p_residual_cells {
        let name = format!("pvalues_residuals_k{k}.csv");
        write_labeled(&a.out, &name, &labeled(&subjects, subjects.clone(), p.clone()), &mut outputs)?;
    }
    let mut meta = RunMetadata::new("significance", Some(seed), a, inputs)?;
    meta.outputs = outputs;
    meta.notes = Some(serde_json::to_value(SignificanceNotes {
        mode,
        n_bs: res.n_bs,
        kmax,
        alpha: a.alpha,
        observed_statistic: "first replicate's target half against all null replicates",
        marking_rule: "p_cell <= alpha and p_of_k >= 1 - alpha",
    })?);
    meta.write(&a.out)?;
    let n_sig = marks.iter().filter(|&&m| m).count();
    println!(
        "{} replicates ({mode}); {n_sig} of {} cells significant at alpha {}",
        res.n_bs,
        d * kmax,
        a.alpha
    );
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let cfg = SimulationConfig {
        n: a.n,
        l: a.l,
        k: a.k,
        sigma: a.sigma,
        beta: a.beta,
        r: a.r,
        rate: a.rate,
        seed: seed.value,
    };
    let sim = simulation::simulate(&cfg)?;
    create_out(&a.out)?;
    let mut outputs = Vec::new();
    for (name, table) in [
        ("reference.csv", &sim.reference),
        ("scenario_a.csv", &sim.scenario_a),
        ("scenario_b.csv", &sim.scenario_b),
    ] {
        io::write_feature_table_path(&a.out.join(name), table)?;
        outputs.push(name.to_string());
    }
    let truth = serde_json::to_string_pretty(&sim.ground_truth())?;
    fs::write(a.out.join("ground_truth.json"), truth + "\n")?;
    outputs.push("ground_truth.json".into());
    let mut meta = RunMetadata::new("simulate", Some(seed), a, Vec::new())?;
    meta.outputs = outputs;
    meta.write(&a.out)?;
    println!(
        "simulated {} subjects x {} features, {} clusters; recipient {} donor {}",
        a.n, a.l, a.k, sim.edge.recipient, sim.edge.donor
    );
    Ok(())
}

fn read_square(path: &Path) -> CliResult<DMatrix<f64>> {
    let m = io::read_matrix_path(path).map_err(|e| with_path(e, path))?;
    if m.values.nrows() != m.values.ncols() {
        return Err(input_error(format!("{}: matrix is not square", path.display())));
    }
    Ok(m.values)
}

pub fn verify_bounds(a: &BoundsArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let (report, inputs) = match (&a.y1, &a.y2) {
        (Some(p1), Some(p2)) => {
            let y1 = read_square(p1)?;
            let y2 = read_square(p2)?;
            (
                stability::check_perturbation_bounds(&y1, &y2, a.eps, a.k, a.trials, seed.value)?,
                vec![digest_file(p1)?, digest_file(p2)?],
            )
        }
        (None, None) => (stability::random_bound_trials(a.d, a.k, a.eps, a.trials, seed.value)?, Vec::new()),
        _ => return Err(input_error("--y1 and --y2 must be given together")),
    };
    create_out(&a.out)?;
    fs::write(a.out.join("bounds.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut meta = RunMetadata::new("verify-bounds", Some(seed), a, inputs)?;
    meta.outputs = vec!["bounds.json".into()];
    meta.notes = Some(serde_json::to_value(report.summary)?);
    meta.write(&a.out)?;
    let s = &report.summary;
    println!(
        "{} trials: part1 {}/{}, part2 {}/{} ({} skipped), deviation {}/{} ({} skipped), davis-kahan {}/{} ({} skipped)",
        s.trials,
        s.part1_pass,
        s.trials,
        s.part2_pass,
        s.trials - s.part2_skipped,
        s.part2_skipped,
        s.deviation_pass,
        s.trials - s.deviation_skipped,
        s.deviation_skipped,
        s.davis_kahan_pass,
        s.trials - s.davis_kahan_skipped,
        s.davis_kahan_skipped
    );
    Ok(())
}

fn read_clusters(path: &Path) -> CliResult<HashMap<String, String>> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(input_error(format!("{}: expected subject,cluster rows", path.display())));
        }
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

/// Rows of `m` rearranged to follow `rows`.
fn align_rows(m: &LabeledMatrix, rows: &[String], path: &Path) -> CliResult<DMatrix<f64>> {
    let index: HashMap<&str, usize> = m.rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let mut out = DMatrix::zeros(rows.len(), m.values.ncols());
    for (i, r) in rows.iter().enumerate() {
        let src = index
            .get(r.as_str())
            .ok_or_else(|| input_error(format!("{}: subject `{r}` not found", path.display())))?;
        out.set_row(i, &m.values.row(*src));
    }
    Ok(out)
}

pub fn chart(a: &ChartArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    let p = io::read_matrix_path(&a.persistence).map_err(|e| with_path(e, &a.persistence))?;
    let mut inputs = vec![digest_file(&a.persistence)?];
    let (d, kmax) = p.values.shape();
    let mut significant = None;
    if let Some(path) = &a.pvalues {
        let pv = io::read_matrix_path(path).map_err(|e| with_path(e, path))?;
        inputs.push(digest_file(path)?);
        if pv.cols != p.cols {
            return Err(input_error(format!(
                "{}: columns differ from the persistence table",
                path.display()
            )));
        }
        let pv = align_rows(&pv, &p.rows, path)?;
        let pk =
            match &a.p_of_k {
                Some(path) => {
                    inputs.push(digest_file(path)?);
                    let mut rdr = csv::Reader::from_path(path)
                        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                    let mut v = Vec::new();
                    for rec in rdr.records() {
                        let rec = rec?;
                        v.push(rec.get(1).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| {
                            input_error(format!("{}: expected k,p_of_k rows", path.display()))
                        })?);
                    }
                    if v.len() != kmax {
                        return Err(input_error(format!(
                            "{}: {} rows for {kmax} complexities",
                            path.display(),
                            v.len()
                        )));
                    }
                    v
                }
                None => vec![1.0; kmax],
            };
        significant =
            Some(DMatrix::from_fn(d, kmax, |i, k| significance::is_significant(pv[(i, k)], pk[k], a.alpha)));
    }

    let (data, order_note) = if let Some(path) = &a.clusters {
        inputs.push(digest_file(path)?);
        let labels = read_clusters(path)?;
        let ca = ClusterAssignment::from_labels(&p.rows, &labels).map_err(|e| with_path(e, path))?;
        let values = ca.aggregate_rows(&p.values)?;
        let data = ChartData { rows: ca.names().to_vec(), cols: p.cols.clone(), values, significant: None };
        (data, "rows are clusters (summed persistence) in order of first appearance".to_string())
    } else {
        let order: Vec<usize> = match &a.structure {
            Some(path) => {
                inputs.push(digest_file(path)?);
                let s = io::read_matrix_path(path).map_err(|e| with_path(e, path))?;
                chart::average_linkage_order(&align_rows(&s, &p.rows, path)?)
            }
            None => (0..d).collect(),
        };
        let rows = order.iter().map(|&i| p.rows[i].clone()).collect();
        let values = DMatrix::from_fn(d, kmax, |i, k| p.values[(order[i], k)]);
        let sig = significant.map(|m| DMatrix::from_fn(d, kmax, |i, k| m[(order[i], k)]));
        let note = if a.structure.is_some() {
            "rows in average-linkage leaf order of the structure matrix rows"
        } else {
            "rows in input order"
        };
        (ChartData { rows, cols: p.cols.clone(), values, significant: sig }, note.to_string())
    };
    let (svg, scale) = chart::render_svg(&data, a.alpha, &order_note);
    create_out(&a.out)?;
    fs::write(a.out.join("chart.svg"), svg)?;
    let mut meta = RunMetadata::new("chart", None, a, inputs)?;
    meta.outputs = vec!["chart.svg".into()];
    meta.notes = Some(serde_json::json!({
        "color_scale": scale,
        "row_order": order_note,
        "reduced_cell_fraction": chart::REDUCED_SIZE,
        "rows": data.rows.len(),
        "cols": data.cols.len(),
    }));
    meta.write(&a.out)?;
    println!("chart with {} x {} cells written", data.rows.len(), data.cols.len());
    Ok(())
}
