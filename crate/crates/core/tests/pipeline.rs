use std::fs;

use ssgic::experiment::{run_experiment, ExperimentConfig};
use ssgic::gic::{select_lft, select_ss, select_sscv, select_ssnet};
use ssgic::sim::generate;
use ssgic::{Dataset, GicPenalty, LossSpec, PredictorSet, SimModel, SimModelSpec, SolverConfig};

fn m2(n: usize, p: usize, seed: u64) -> Dataset {
    generate(&SimModelSpec {
        model: SimModel::M2,
        n,
        p,
        rho: 0.0,
        seed,
    })
    .unwrap()
    .0
}

#[test]
fn single_replication_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        model: SimModel::M2,
        n: 500,
        p: 150,
        replications: 1,
        rho_grid: vec![0.0],
        procedures: vec!["ssnet".into()],
        penalties: vec!["ebic:1".into()],
        losses: vec!["logistic".into()],
        base_seed: 1,
        lambda_count: 20,
        lambda_ratio: 0.01,
        folds: 10,
        output_dir: dir.path().to_path_buf(),
    };
    let summary = run_experiment(&cfg, &SolverConfig::default()).unwrap();
    assert_eq!(summary.report.len(), 1);
    let reps = fs::read_to_string(&summary.replications_path).unwrap();
    assert_eq!(reps.lines().count(), 2);
    assert!(reps.lines().nth(1).unwrap().contains(",ok,\"1,2\","), "{reps}");
}

#[test]
fn stale_temporary_files_do_not_block_a_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        model: SimModel::M1,
        n: 90,
        p: 10,
        replications: 2,
        rho_grid: vec![0.2],
        procedures: vec!["sscv".into()],
        penalties: vec!["bic".into()],
        losses: vec!["quadratic".into()],
        base_seed: 3,
        lambda_count: 6,
        lambda_ratio: 0.05,
        folds: 3,
        output_dir: dir.path().to_path_buf(),
    };
    let s = SolverConfig::default();
    let first = run_experiment(&cfg, &s).unwrap();
    let report = fs::read(&first.report_path).unwrap();
    // a crash during the write of the cell report leaves only a temporary file
    let key = cfg.cell_key(0.2, &s);
    let cell = dir.path().join("cells").join(format!("{key}.report.csv"));
    fs::rename(&cell, cell.with_extension("tmp")).unwrap();
    let second = run_experiment(&cfg, &s).unwrap();
    assert_eq!(second.cells_run, 1);
    assert_eq!(fs::read(&second.report_path).unwrap(), report);
}

#[test]
fn csv_round_trip_then_selection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m2.csv");
    let raw = m2(400, 25, 12);
    raw.write_csv(&path, "label").unwrap();
    let loaded = Dataset::load_csv(&path, "label").unwrap();
    assert_eq!((loaded.n(), loaded.p()), (400, 25));
    assert_eq!(loaded.y(), raw.y());
    assert_eq!(loaded.x(), raw.x());

    let d = loaded.standardize().unwrap();
    let cfg = SolverConfig::default();
    let truth = PredictorSet::new(vec![1, 2]).unwrap();
    let net = select_ssnet(&d, &LossSpec::Logistic, 20, 0.01, &GicPenalty::ebic(1.0), &cfg).unwrap();
    assert_eq!(net.selected, truth);
    assert!(net.family.contains(&truth));
    let lft = select_lft(&d, &LossSpec::Logistic, 20, 0.01, &cfg).unwrap();
    assert!(lft.selected.is_superset(&truth));
    let ss = select_ss(&d, &LossSpec::Logistic, 0.05, &GicPenalty::bic(), &cfg).unwrap();
    assert!(ss.family.models.windows(2).all(|w| w[0].is_subset(&w[1])));
}

#[test]
fn sscv_is_reproducible_from_its_seed() {
    let d = m2(300, 30, 8).standardize().unwrap();
    let cfg = SolverConfig::default();
    let run = |seed| select_sscv(&d, &LossSpec::Logistic, 5, 12, 0.02, &GicPenalty::ebic(1.0), &cfg, seed).unwrap();
    let (a, b) = (run(4), run(4));
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.lambda.map(f64::to_bits), b.lambda.map(f64::to_bits));
    assert_eq!(a.refit.coefficients, b.refit.coefficients);
    assert_eq!(a.min_gic().to_bits(), b.min_gic().to_bits());
}

#[test]
fn original_scale_coefficients_follow_column_units() {
    let raw = m2(500, 12, 21);
    let mut x = raw.x().clone();
    x.column_mut(0).scale_mut(4.0);
    x.column_mut(1).add_scalar_mut(-3.0);
    let rescaled = Dataset::new(x, raw.y().to_vec()).unwrap();
    let cfg = SolverConfig::default();
    let pen = GicPenalty::ebic(1.0);
    let pick = |d: &Dataset| {
        let s = d.standardize().unwrap();
        let o = select_ssnet(&s, &LossSpec::Logistic, 20, 0.01, &pen, &cfg).unwrap();
        let (b0, b) = s.destandardize_coefficients(o.refit.intercept, &o.refit.coefficients).unwrap();
        (o.selected, b0, b)
    };
    let (sa, a0, a) = pick(&raw);
    let (sb, b0, b) = pick(&rescaled);
    assert_eq!(sa, sb);
    assert!((a[0] - 4.0 * b[0]).abs() < 1e-6 * a[0].abs().max(1.0));
    assert!((a[1] - b[1]).abs() < 1e-6);
    // shifting x2 by −3 moves the intercept by +3·b2
    assert!((b0 - (a0 + 3.0 * a[1])).abs() < 1e-6);
}
