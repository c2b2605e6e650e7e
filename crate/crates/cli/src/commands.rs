//! The `run`, `diagnose` and `rank` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use calpath_core::diagnostics::write_findings;
use calpath_core::io::{fmt_sig, read_mtx};
use calpath_core::{detect_unachievable, estimate_rank, export_path, run_path, Finding, PathResult, SparseMatrix};
use serde::Serialize;

use crate::config::{LoadedConfig, RunConfig};
use crate::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Serialize)]
struct ManifestRecord {
    alpha: f64,
    status: String,
    message: String,
    newton_iterations: usize,
    irls_iterations: usize,
    irls_converged: bool,
}

#[derive(Debug, Serialize)]
struct ManifestFailure {
    alpha: f64,
    message: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    method: &'static str,
    complete: bool,
    records: Vec<ManifestRecord>,
    failure: Option<ManifestFailure>,
    outputs: Vec<&'static str>,
    wall_time_seconds: f64,
}

/// Rounds to 12 significant digits so JSON numbers match the CSV outputs.
fn sig(v: f64) -> f64 {
    fmt_sig(v).parse().unwrap_or(v)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(m).map_err(|e| CliError::Output(format!("manifest: {e}")))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config("output_dir", format!("{}: {e}", dir.display())))
}

/// Outcome of one `run`: exit code and a one-line report.
pub struct RunReport {
    pub code: i32,
    pub line: String,
}

pub fn cmd_run(config_path: &Path, out: Option<&Path>, final_only: bool) -> RunReport {
    match run_inner(config_path, out, final_only) {
        Ok((code, line)) => RunReport { code, line },
        Err(e) => RunReport {
            code: e.exit_code(),
            line: format!("error: {e}"),
        },
    }
}

fn run_inner(config_path: &Path, out: Option<&Path>, final_only: bool) -> Result<(i32, String), CliError> {
    let loaded = LoadedConfig::read(config_path)?;
    let p = loaded.problem()?;
    let cfg = loaded.path_config()?;
    let opts = loaded.export_options(final_only)?;
    let dir = loaded.output_dir(out);
    create_dir(&dir)?;

    let start = Instant::now();
    let result: PathResult = run_path(&p, &cfg).map_err(|e| CliError::config("method", e.to_string()))?;
    let wall = start.elapsed().as_secs_f64();

    let mut outputs = vec!["manifest.json"];
    if !result.records.is_empty() {
        export_path(&result, &p, &dir, &opts).map_err(|e| CliError::Output(e.to_string()))?;
        outputs.extend(["path.csv", "weights.csv", "summary.csv"]);
    }
    let manifest = Manifest {
        config: &loaded.config,
        method: result.method.name(),
        complete: result.is_complete(),
        records: result
            .records
            .iter()
            .map(|r| ManifestRecord {
                alpha: sig(r.alpha),
                status: r.status.kind.to_string(),
                message: r.status.message.clone(),
                newton_iterations: r.newton_iterations,
                irls_iterations: r.irls_iterations,
                irls_converged: r.irls_converged,
            })
            .collect(),
        failure: result.failure.as_ref().map(|f| ManifestFailure {
            alpha: sig(f.alpha),
            message: f.message.clone(),
        }),
        outputs,
        wall_time_seconds: (wall * 1e3).round() / 1e3,
    };
    write_manifest(&dir, &manifest)?;

    let n = result.records.len();
    let grid = cfg.alpha_grid.len();
    Ok(match &result.failure {
        None => (EXIT_OK, format!("{}: {n}/{grid} penalty values solved, output in {}", config_path.display(), dir.display())),
        Some(f) => (
            EXIT_PARTIAL,
            format!(
                "{}: partial path, {n}/{grid} penalty values before failure at alpha {}: {}; output in {}",
                config_path.display(),
                fmt_sig(f.alpha),
                f.message,
                dir.display()
            ),
        ),
    })
}

/// Runs several configurations on up to `jobs` worker threads. Reports come
/// back in input order.
pub fn run_many(configs: &[PathBuf], out: Option<&Path>, final_only: bool, jobs: usize) -> Vec<RunReport> {
    // with several configs a shared --out gets one subdirectory per config
    let outs: Vec<Option<PathBuf>> = configs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            out.map(|d| {
                if configs.len() == 1 {
                    d.to_path_buf()
                } else {
                    let stem = c.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    d.join(format!("{k:02}-{stem}"))
                }
            })
        })
        .collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<RunReport>>> = configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= configs.len() {
                    break;
                }
                let r = cmd_run(&configs[k], outs[k].as_deref(), final_only);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every config is run")).collect()
}

/// Worst code across runs: configuration errors first, then partial paths.
pub fn combine_codes(codes: impl IntoIterator<Item = i32>) -> i32 {
    codes.into_iter().fold(EXIT_OK, |acc, c| match (acc, c) {
        (EXIT_CONFIG, _) | (_, EXIT_CONFIG) => EXIT_CONFIG,
        (EXIT_PARTIAL, _) | (_, EXIT_PARTIAL) => EXIT_PARTIAL,
        _ => EXIT_OK,
    })
}

pub fn cmd_diagnose(config_path: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let loaded = LoadedConfig::read(config_path)?;
    let p = loaded.problem()?;
    let dir = loaded.output_dir(out);
    create_dir(&dir)?;
    let findings = detect_unachievable(&p, loaded.config.rank_tol).map_err(|e| CliError::config("targets", e.to_string()))?;
    let path = dir.join("findings.csv");
    write_findings(&findings, &path).map_err(|e| CliError::Output(e.to_string()))?;
    let zero = findings.iter().filter(|f| matches!(f, Finding::ZeroSupport { .. })).count();
    let rank = findings.iter().find_map(|f| match f {
        Finding::RankDeficiency { rows, rank, deficiency } => Some(format!("rank {rank} of {rows} rows, deficiency {deficiency}")),
        Finding::RankSkipped { reason } => Some(format!("rank skipped: {reason}")),
        _ => None,
    });
    Ok(format!(
        "{} zero-support rows; {}; findings in {}",
        zero,
        rank.unwrap_or_else(|| "full rank".into()),
        path.display()
    ))
}

pub fn cmd_rank(matrix: Option<&Path>, config: Option<&Path>, tol: f64) -> Result<String, CliError> {
    if !(tol > 0.0) {
        return Err(CliError::Config("--tol must be positive".into()));
    }
    let a = match (matrix, config) {
        (Some(m), None) => read_mtx(m).map_err(|e| CliError::Config(e.to_string()))?,
        (None, Some(c)) => {
            let p = LoadedConfig::read(c)?.problem()?;
            SparseMatrix::vstack(&[&p.exact, &p.penalized]).map_err(|e| CliError::Config(e.to_string()))?
        }
        _ => return Err(CliError::Config("rank needs exactly one of --matrix or --config".into())),
    };
    let rank = estimate_rank(&a, tol).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!(
        "rows={} cols={} rank={} deficiency={}",
        a.n_rows(),
        a.n_cols(),
        rank,
        a.n_rows().saturating_sub(rank)
    ))
}
