//! Target achievement, weight dispersion, structural findings and path export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::io::fmt_sig;
use crate::linalg::{estimate_rank, SparseMatrix, RANK_DENSE_LIMIT};
use crate::path::PathResult;
use crate::problem::{Bounds, CalibrationProblem, Target};

pub const DEFAULT_ROUNDING_UNIT: f64 = 1.0;
pub const DEFAULT_REL_TOL: f64 = 0.05;
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub id: String,
    pub group: Option<String>,
    pub target: Target,
    pub achieved: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub met_exact: bool,
    pub met_relative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupCount {
    pub total: usize,
    pub missed_exact: usize,
    pub missed_relative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetReport {
    pub rows: Vec<TargetRow>,
    /// Counts per group label; unlabeled targets are counted under `""`.
    pub groups: BTreeMap<String, GroupCount>,
    pub missed_exact: usize,
    pub missed_relative: usize,
}

/// Whether `achieved` meets `target` within rounding, and within a relative
/// tolerance of its center.
///
/// The rounding test uses the distance to the target set (zero inside an
/// interval). The relative test compares against the center, so for an
/// interval of +-5% around its center it matches the interval itself.
pub fn classify(target: &Target, achieved: f64, rounding_unit: f64, rel_tol: f64) -> (f64, f64, bool, bool) {
    let gap = target.distance(achieved);
    let center = target.center();
    let dev = (achieved - center).abs();
    let rel_gap = if center != 0.0 {
        gap / center.abs()
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let met_exact = gap <= 0.5 * rounding_unit;
    let met_relative = dev <= rel_tol * center.abs() || (target.is_interval() && gap == 0.0);
    (gap, rel_gap, met_exact, met_relative)
}

pub fn target_report(p: &CalibrationProblem, x: &[f64], rounding_unit: f64, rel_tol: f64) -> Result<TargetReport> {
    if !(rounding_unit > 0.0) || !(rel_tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rounding unit and relative tolerance must be positive, got {rounding_unit} and {rel_tol}"
        )));
    }
    let achieved = p.penalized.mul_vec(x)?;
    report_from_achieved(p, &achieved, rounding_unit, rel_tol)
}

pub(crate) fn report_from_achieved(
    p: &CalibrationProblem,
    achieved: &[f64],
    rounding_unit: f64,
    rel_tol: f64,
) -> Result<TargetReport> {
    check_len("achieved values", p.n_targets(), achieved.len())?;
    let mut rows = Vec::with_capacity(achieved.len());
    let mut groups: BTreeMap<String, GroupCount> = BTreeMap::new();
    let (mut missed_exact, mut missed_relative) = (0, 0);
    for (j, (&target, &a)) in p.targets.iter().zip(achieved).enumerate() {
        let (abs_gap, rel_gap, met_exact, met_relative) = classify(&target, a, rounding_unit, rel_tol);
        let meta = &p.meta[j];
        let g = groups.entry(meta.group.clone().unwrap_or_default()).or_default();
        g.total += 1;
        if !met_exact {
            g.missed_exact += 1;
            missed_exact += 1;
        }
        if !met_relative {
            g.missed_relative += 1;
            missed_relative += 1;
        }
        rows.push(TargetRow {
            id: meta.id.clone(),
            group: meta.group.clone(),
            target,
            achieved: a,
            abs_gap,
            rel_gap,
            met_exact,
            met_relative,
        });
    }
    Ok(TargetReport {
        rows,
        groups,
        missed_exact,
        missed_relative,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionMetrics {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub cv: f64,
    pub max_min_ratio: f64,
    /// `1 + CV^2`.
    pub deff: f64,
    pub near_lower: usize,
    pub near_upper: usize,
}

/// Dispersion of positive weights. CV uses the population standard deviation.
pub fn weight_dispersion(x: &[f64], bounds: Option<&Bounds>, near_tol: f64) -> Result<DispersionMetrics> {
    if x.is_empty() {
        return Err(Error::InvalidInput("dispersion of an empty weight vector".into()));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("dispersion needs positive weights, weight {i} is {}", x[i])));
    }
    let n = x.len() as f64;
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cv = var.sqrt() / mean;
    let (mut near_lower, mut near_upper) = (0, 0);
    if let Some(b) = bounds {
        check_len("bounds", x.len(), b.len())?;
        for (i, &v) in x.iter().enumerate() {
            let width = b.upper[i] - b.lower[i];
            if !width.is_finite() {
                continue;
            }
            let tol = near_tol * width;
            if (v - b.lower[i]).abs() <= tol {
                near_lower += 1;
            } else if (b.upper[i] - v).abs() <= tol {
                near_upper += 1;
            }
        }
    }
    Ok(DispersionMetrics {
        min,
        max,
        mean,
        cv,
        max_min_ratio: max / min,
        deff: 1.0 + cv * cv,
        near_lower,
        near_upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Exact,
    Penalized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    /// A constraint row with no sample support but a target excluding zero.
    ZeroSupport {
        block: Block,
        row: usize,
        id: String,
        target: Target,
    },
    /// Stacked constraint rows exceed the numerical rank.
    RankDeficiency {
        rows: usize,
        rank: usize,
        deficiency: usize,
    },
    /// Rank estimation was not attempted.
    RankSkipped { reason: String },
}

/// Zero-support rows and rank deficiency of `[A1; A2]`.
pub fn detect_unachievable(p: &CalibrationProblem, tol: f64) -> Result<Vec<Finding>> {
    let mut out = Vec::new();
    for i in 0..p.n_exact() {
        if p.exact.row_is_zero(i) && p.exact_targets[i] != 0.0 {
            out.push(Finding::ZeroSupport {
                block: Block::Exact,
                row: i,
                id: format!("exact{i}"),
                target: Target::Point(p.exact_targets[i]),
            });
        }
    }
    for (j, t) in p.targets.iter().enumerate() {
        if p.penalized.row_is_zero(j) && t.distance(0.0) > 0.0 {
            out.push(Finding::ZeroSupport {
                block: Block::Penalized,
                row: j,
                id: p.meta[j].id.clone(),
                target: *t,
            });
        }
    }
    let stacked = SparseMatrix::vstack(&[&p.exact, &p.penalized])?;
    let rows = stacked.n_rows();
    match estimate_rank(&stacked, tol) {
        Ok(rank) if rank < rows => out.push(Finding::RankDeficiency {
            rows,
            rank,
            deficiency: rows - rank,
        }),
        Ok(_) => {}
        Err(Error::RankTooLarge { n_rows, n_cols, .. }) => out.push(Finding::RankSkipped {
            reason: format!("{n_rows}x{n_cols} exceeds the dense rank limit of {RANK_DENSE_LIMIT}"),
        }),
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    pub rounding_unit: f64,
    pub rel_tol: f64,
    pub near_tol: f64,
    pub final_only: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            rounding_unit: DEFAULT_ROUNDING_UNIT,
            rel_tol: DEFAULT_REL_TOL,
            near_tol: 0.01,
            final_only: false,
        }
    }
}

pub const PATH_COLUMNS: [&str; 7] = [
    "alpha",
    "target_id",
    "achieved",
    "target",
    "relative_achievement",
    "met_exact",
    "met_relative",
];

pub const SUMMARY_COLUMNS: [&str; 17] = [
    "alpha",
    "status",
    "newton_iterations",
    "irls_iterations",
    "irls_converged",
    "deviance",
    "objective",
    "min",
    "max",
    "mean",
    "cv",
    "deff",
    "max_min_ratio",
    "near_lower",
    "near_upper",
    "missed_exact",
    "missed_relative",
];

pub const WEIGHT_COLUMNS: [&str; 3] = ["alpha", "unit", "weight"];

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(&header.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(io)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `path.csv`, `weights.csv` and `summary.csv` into `dir`.
pub fn export_path(r: &PathResult, p: &CalibrationProblem, dir: &Path, opts: &ExportOptions) -> Result<()> {
    if r.records.is_empty() {
        return Err(Error::InvalidInput("cannot export an empty path".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut path_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for rec in &r.records {
        let report = report_from_achieved(p, &rec.achieved, opts.rounding_unit, opts.rel_tol)?;
        let alpha = fmt_sig(rec.alpha);
        for row in &report.rows {
            let center = row.target.center();
            let rel = if center != 0.0 { fmt_sig(row.achieved / center) } else { String::new() };
            path_rows.push(vec![
                alpha.clone(),
                csv_field(&row.id),
                fmt_sig(row.achieved),
                fmt_sig(center),
                rel,
                row.met_exact.to_string(),
                row.met_relative.to_string(),
            ]);
        }
        let disp = weight_dispersion(&rec.x, p.bounds.as_ref(), opts.near_tol).ok();
        let d = |f: fn(&DispersionMetrics) -> f64| disp.as_ref().map_or(String::new(), |m| fmt_sig(f(m)));
        let c = |f: fn(&DispersionMetrics) -> usize| disp.as_ref().map_or(String::new(), |m| f(m).to_string());
        summary_rows.push(vec![
            alpha,
            rec.status.kind.to_string(),
            rec.newton_iterations.to_string(),
            rec.irls_iterations.to_string(),
            rec.irls_converged.to_string(),
            fmt_sig(rec.deviance),
            fmt_sig(rec.objective),
            d(|m| m.min),
            d(|m| m.max),
            d(|m| m.mean),
            d(|m| m.cv),
            d(|m| m.deff),
            d(|m| m.max_min_ratio),
            c(|m| m.near_lower),
            c(|m| m.near_upper),
            report.missed_exact.to_string(),
            report.missed_relative.to_string(),
        ]);
    }
    let chosen: Vec<_> = if opts.final_only {
        r.records.last().into_iter().collect()
    } else {
        r.records.iter().collect()
    };
    let mut weight_rows = Vec::new();
    for rec in chosen {
        let alpha = fmt_sig(rec.alpha);
        for (i, v) in rec.x.iter().enumerate() {
            weight_rows.push(vec![alpha.clone(), i.to_string(), fmt_sig(*v)]);
        }
    }
    write_csv(&dir.join("path.csv"), &PATH_COLUMNS, &path_rows)?;
    write_csv(&dir.join("weights.csv"), &WEIGHT_COLUMNS, &weight_rows)?;
    write_csv(&dir.join("summary.csv"), &SUMMARY_COLUMNS, &summary_rows)?;
    Ok(())
}

/// Writes `findings.csv` with columns `kind,block,row,id,target,detail`.
pub fn write_findings(findings: &[Finding], path: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = findings
        .iter()
        .map(|f| match f {
            Finding::ZeroSupport { block, row, id, target } => vec![
                "zero_support".into(),
                match block {
                    Block::Exact => "exact".into(),
                    Block::Penalized => "penalized".into(),
                },
                row.to_string(),
                csv_field(id),
                fmt_sig(target.center()),
                String::new(),
            ],
            Finding::RankDeficiency { rows, rank, deficiency } => vec![
                "rank_deficiency".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("rows={rows} rank={rank} deficiency={deficiency}"),
            ],
            Finding::RankSkipped { reason } => vec![
                "rank_skipped".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                csv_field(reason),
            ],
        })
        .collect();
    write_csv(path, &["kind", "block", "row", "id", "target", "detail"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::TargetMeta;
    use proptest::prelude::*;

    #[test]
    fn classification_examples() {
        let (_, _, exact, rel) = classify(&Target::Point(100.0), 100.4, 1.0, 0.05);
        assert!(exact && rel);
        let (_, _, exact, rel) = classify(&Target::Point(100.0), 104.0, 1.0, 0.05);
        assert!(!exact && rel);
        let iv = Target::Interval { lo: 95.0, hi: 105.0 };
        let (gap, _, exact, _) = classify(&iv, 105.3, 1.0, 0.05);
        assert!((gap - 0.3).abs() < 1e-12 && exact);
        let (_, _, exact, rel) = classify(&iv, 106.0, 1.0, 0.05);
        assert!(!exact && !rel);
        let (_, _, exact, rel) = classify(&iv, 100.0, 1.0, 0.05);
        assert!(exact && rel);
    }

    #[test]
    fn dispersion_examples() {
        let m = weight_dispersion(&[1.0; 4], None, 0.01).unwrap();
        assert_eq!((m.cv, m.deff, m.max_min_ratio), (0.0, 1.0, 1.0));
        let m = weight_dispersion(&[1.0, 3.0], None, 0.01).unwrap();
        assert_eq!((m.mean, m.cv, m.deff), (2.0, 0.5, 1.25));
        let b = Bounds::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let m = weight_dispersion(&[1.999, 1.0], Some(&b), 0.01).unwrap();
        assert_eq!((m.near_lower, m.near_upper), (0, 1));
        assert!(weight_dispersion(&[1.0, 0.0], None, 0.01).is_err());
        assert!(weight_dispersion(&[], None, 0.01).is_err());
    }

    fn problem(rows: &[Vec<f64>], targets: Vec<Target>) -> CalibrationProblem {
        let n = rows[0].len();
        CalibrationProblem::new(vec![1.0; n], SparseMatrix::from_dense_rows(rows, n).unwrap(), targets).unwrap()
    }

    #[test]
    fn zero_support_is_flagged() {
        let p = problem(
            &[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]],
            vec![Target::Point(3.0), Target::Point(500.0), Target::Point(2.0)],
        );
        let f = detect_unachievable(&p, DEFAULT_RANK_TOL).unwrap();
        assert!(f.contains(&Finding::ZeroSupport {
            block: Block::Penalized,
            row: 1,
            id: "t1".into(),
            target: Target::Point(500.0)
        }));
        assert!(f.contains(&Finding::RankDeficiency {
            rows: 3,
            rank: 2,
            deficiency: 1
        }));
    }

    #[test]
    fn conflicting_duplicate_rows_give_deficiency_one() {
        let p = problem(
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![Target::Point(3.0), Target::Point(4.0)],
        );
        assert_eq!(
            detect_unachievable(&p, DEFAULT_RANK_TOL).unwrap(),
            vec![Finding::RankDeficiency {
                rows: 2,
                rank: 1,
                deficiency: 1
            }]
        );
    }

    #[test]
    fn consistent_full_rank_has_no_findings() {
        let p = problem(
            &[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]],
            vec![Target::Point(3.0), Target::Point(4.0)],
        );
        assert!(detect_unachievable(&p, DEFAULT_RANK_TOL).unwrap().is_empty());
    }

    #[test]
    fn zero_row_with_interval_containing_zero_is_not_flagged() {
        let p = problem(&[vec![0.0, 0.0]], vec![Target::Interval { lo: -1.0, hi: 1.0 }]);
        let f = detect_unachievable(&p, DEFAULT_RANK_TOL).unwrap();
        assert!(!f.iter().any(|f| matches!(f, Finding::ZeroSupport { .. })));
    }

    proptest! {
        #[test]
        fn report_is_permutation_invariant(
            vals in proptest::collection::vec((1.0f64..1000.0, 0.8f64..1.2, any::<bool>()), 1..12),
            seed in any::<u64>(),
        ) {
            let m = vals.len();
            let targets: Vec<Target> = vals.iter().map(|&(t, _, iv)| if iv {
                Target::Interval { lo: 0.95 * t, hi: 1.05 * t }
            } else {
                Target::Point(t)
            }).collect();
            let achieved: Vec<f64> = vals.iter().map(|&(t, f, _)| t * f).collect();
            let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
            let meta: Vec<TargetMeta> = (0..m).map(|j| TargetMeta { id: format!("r{j}"), group: Some(format!("g{}", j % 3)) }).collect();
            let p = problem(&rows, targets.clone()).with_meta(meta.clone());
            let base = target_report(&p, &achieved, 1.0, 0.05).unwrap();

            let mut perm: Vec<usize> = (0..m).collect();
            let mut s = seed;
            for i in (1..m).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pt: Vec<Target> = perm.iter().map(|&k| targets[k]).collect();
            let pm: Vec<TargetMeta> = perm.iter().map(|&k| meta[k].clone()).collect();
            let px: Vec<f64> = perm.iter().map(|&k| achieved[k]).collect();
            let q = problem(&rows, pt).with_meta(pm);
            let permuted = target_report(&q, &px, 1.0, 0.05).unwrap();
            prop_assert_eq!(&base.groups, &permuted.groups);
            prop_assert_eq!(base.missed_exact, permuted.missed_exact);
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(&base.rows[src], &permuted.rows[k]);
            }
            let total: usize = base.groups.values().map(|g| g.total).sum();
            prop_assert_eq!(total, m);
        }
    }
}
