mod common;

use calpath_core::diagnostics::{ExportOptions, PATH_COLUMNS, SUMMARY_COLUMNS, WEIGHT_COLUMNS};
use calpath_core::path::{power_grid, run_path, Method, PathConfig};
use calpath_core::{export_path, CalibrationProblem, PathResult, SparseMatrix, Target};
use common::*;
use rand::Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Two separable targets: `x_i = (1 + a t_i) / (1 + a)` at penalty `a`.
fn toy() -> (CalibrationProblem, PathResult) {
    let a = SparseMatrix::from_dense_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
    let p = CalibrationProblem::new(vec![1.0, 1.0], a, vec![Target::Point(2.0), Target::Point(3.0)]).unwrap();
    let cfg = PathConfig {
        alpha_grid: vec![1.0, 2.0, 4.0],
        ..PathConfig::new(Method::QuadQuad)
    };
    let r = run_path(&p, &cfg).unwrap();
    (p, r)
}

fn read(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap()).collect();
    (header, rows)
}

#[test]
fn toy_path_has_one_row_per_target_and_alpha() {
    let (p, r) = toy();
    let dir = tempfile::tempdir().unwrap();
    export_path(&r, &p, dir.path(), &ExportOptions::default()).unwrap();
    let (header, rows) = read(&dir.path().join("path.csv"));
    assert_eq!(header, PATH_COLUMNS);
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let a: f64 = row[0].parse().unwrap();
        let t: f64 = row[3].parse().unwrap();
        let achieved: f64 = row[2].parse().unwrap();
        assert!((achieved - (1.0 + a * t) / (1.0 + a)).abs() <= 1e-9);
    }
    let (header, rows) = read(&dir.path().join("weights.csv"));
    assert_eq!(header, WEIGHT_COLUMNS);
    assert_eq!(rows.len(), 6);
    let (header, rows) = read(&dir.path().join("summary.csv"));
    assert_eq!(header, SUMMARY_COLUMNS);
    assert_eq!(rows.len(), 3);
}

#[test]
fn golden_files_match() {
    let (p, r) = toy();
    let dir = tempfile::tempdir().unwrap();
    export_path(&r, &p, dir.path(), &ExportOptions::default()).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["path.csv", "weights.csv", "summary.csv"] {
        let got = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let want = std::fs::read_to_string(golden.join(name)).unwrap();
        assert_eq!(got, want, "{name} differs from the golden copy");
    }
}

#[test]
fn final_only_keeps_last_weights() {
    let (p, r) = toy();
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions { final_only: true, ..ExportOptions::default() };
    export_path(&r, &p, dir.path(), &opts).unwrap();
    let (_, rows) = read(&dir.path().join("weights.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|row| &row[0] == "4"));
    let (_, rows) = read(&dir.path().join("path.csv"));
    assert_eq!(rows.len(), 6);
}

#[test]
fn met_target_has_unit_relative_achievement() {
    // a single exact row: the quadratic path meets it to rounding at every alpha
    let a = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0]], 2).unwrap();
    let p = CalibrationProblem::new(vec![1.0, 1.0], a, vec![Target::Point(2.0)]).unwrap();
    let r = run_path(&p, &PathConfig { alpha_grid: vec![1.0, 8.0], ..PathConfig::new(Method::QuadQuad) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_path(&r, &p, dir.path(), &ExportOptions::default()).unwrap();
    let (_, rows) = read(&dir.path().join("path.csv"));
    for row in &rows {
        assert_eq!(&row[4], "1");
        assert_eq!(row[4].parse::<f64>().unwrap(), 1.0);
        assert_eq!(&row[5], "true");
    }
}

#[test]
fn reimported_path_reproduces_summary_counts() {
    let mut r = rng(11);
    let (n, m) = (60, 12);
    let a = random_matrix(&mut r, m, n, 0.4);
    let y: Vec<f64> = (0..n).map(|_| r.random_range(20.0..80.0)).collect();
    // targets off the base totals by up to 30%, so misses vary along the path
    let t: Vec<f64> = a.mul_vec(&y).unwrap().iter().map(|v| v * r.random_range(0.7..1.3)).collect();
    let p = CalibrationProblem::new(y, a, t.iter().map(|&v| Target::Point(v)).collect())
        .unwrap()
        .with_penalty(calpath_core::PenaltyKind::Absolute);
    let cfg = PathConfig { alpha_grid: power_grid(2.0, -8, 6), ..PathConfig::new(Method::Custom) };
    let res = run_path(&p, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions::default();
    export_path(&res, &p, dir.path(), &opts).unwrap();

    let mut from_flags: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut from_values: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for row in read(&dir.path().join("path.csv")).1 {
        let e = from_flags.entry(row[0].to_string()).or_default();
        e.0 += (&row[5] == "false") as usize;
        e.1 += (&row[6] == "false") as usize;
        let (achieved, target): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
        let gap = (achieved - target).abs();
        let e = from_values.entry(row[0].to_string()).or_default();
        e.0 += (gap > opts.rounding_unit / 2.0) as usize;
        e.1 += (gap > opts.rel_tol * target.abs()) as usize;
    }
    let summary = read(&dir.path().join("summary.csv"));
    let col = |name: &str| summary.0.iter().position(|h| h == name).unwrap();
    let (ce, cr) = (col("missed_exact"), col("missed_relative"));
    assert_eq!(summary.1.len(), res.records.len());
    let mut varied = std::collections::BTreeSet::new();
    for row in &summary.1 {
        let want: (usize, usize) = (row[ce].parse().unwrap(), row[cr].parse().unwrap());
        assert_eq!(from_flags[&row[0]], want, "alpha {}", &row[0]);
        assert_eq!(from_values[&row[0]], want, "alpha {}", &row[0]);
        varied.insert(want);
    }
    assert!(varied.len() > 1, "fixture should produce differing miss counts");
}
