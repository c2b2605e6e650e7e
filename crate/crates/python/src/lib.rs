//! Python bindings: `import calpath`.

use calpath_core::deviance::h_map as core_h_map;
use calpath_core::path::PathConfig;
use calpath_core::{
    detect_unachievable, estimate_rank, run_path, Bounds, CalibrationProblem, DevianceFamily, Finding, Method,
    SparseMatrix, Target,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: calpath_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A target given as a number or as a `(lo, hi)` pair.
#[derive(Debug, Clone, Copy, FromPyObject)]
enum PyTarget {
    Point(f64),
    Interval((f64, f64)),
}

impl From<PyTarget> for Target {
    fn from(t: PyTarget) -> Self {
        match t {
            PyTarget::Point(v) => Target::Point(v),
            PyTarget::Interval((lo, hi)) => Target::Interval { lo, hi },
        }
    }
}

fn dense(rows: &[Vec<f64>], n_cols: usize) -> calpath_core::Result<SparseMatrix> {
    SparseMatrix::from_dense_rows(rows, n_cols)
}

fn build_problem(
    base: Vec<f64>,
    matrix: &[Vec<f64>],
    targets: Vec<Target>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
    method: Method,
) -> calpath_core::Result<CalibrationProblem> {
    let a = dense(matrix, base.len())?;
    let mut p = CalibrationProblem::new(base, a, targets)?;
    if let Some((lo, hi)) = bounds {
        p = p.with_bounds(Bounds::new(lo, hi)?);
    }
    let p = method.configure(p);
    method.check(&p)?;
    Ok(p)
}

fn pair<T>(a: Option<T>, b: Option<T>, what: &str) -> PyResult<Option<(T, T)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(PyValueError::new_err(format!("{what}: give both lower and upper"))),
    }
}

/// Solves the calibration path for a preset method.
///
/// `matrix` holds the target rows as dense lists; each target is a number or
/// a `(lo, hi)` interval. Returns a dict with the penalty values, weights,
/// achieved totals and per-value solver status.
#[pyfunction]
#[pyo3(signature = (base, matrix, targets, method = "LL2", lower = None, upper = None, alphas = None))]
#[allow(clippy::too_many_arguments)]
fn solve_path<'py>(
    py: Python<'py>,
    base: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    targets: Vec<PyTarget>,
    method: &str,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    alphas: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(err)?;
    let bounds = pair(lower, upper, "bounds")?;
    let p = build_problem(base, &matrix, targets.into_iter().map(Target::from).collect(), bounds, method).map_err(err)?;
    let mut cfg = PathConfig::new(method);
    if let Some(a) = alphas {
        cfg.alpha_grid = a;
    }
    let r = py.detach(|| run_path(&p, &cfg)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("method", r.method.name())?;
    out.set_item("alphas", r.records.iter().map(|x| x.alpha).collect::<Vec<_>>())?;
    out.set_item("weights", r.records.iter().map(|x| x.x.clone()).collect::<Vec<_>>())?;
    out.set_item("achieved", r.records.iter().map(|x| x.achieved.clone()).collect::<Vec<_>>())?;
    out.set_item("status", r.records.iter().map(|x| x.status.kind.to_string()).collect::<Vec<_>>())?;
    out.set_item("complete", r.is_complete())?;
    out.set_item("failure", r.failure.as_ref().map(|f| (f.alpha, f.message.clone())))?;
    Ok(out)
}

/// Numerical rank: singular values above `tol` times the largest.
#[pyfunction]
#[pyo3(signature = (matrix, tol = 1e-9))]
fn matrix_rank(matrix: Vec<Vec<f64>>, tol: f64) -> PyResult<usize> {
    let n = matrix.first().map_or(0, Vec::len);
    estimate_rank(&dense(&matrix, n).map_err(err)?, tol).map_err(err)
}

/// Zero-support rows and rank deficiency of the target rows.
#[pyfunction]
#[pyo3(signature = (base, matrix, targets, tol = 1e-9))]
fn find_unachievable<'py>(
    py: Python<'py>,
    base: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    targets: Vec<PyTarget>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = CalibrationProblem::new(
        base.clone(),
        dense(&matrix, base.len()).map_err(err)?,
        targets.into_iter().map(Target::from).collect(),
    )
    .map_err(err)?;
    let findings = detect_unachievable(&p, tol).map_err(err)?;
    let out = PyDict::new(py);
    let zero: Vec<usize> = findings
        .iter()
        .filter_map(|f| match f {
            Finding::ZeroSupport { row, .. } => Some(*row),
            _ => None,
        })
        .collect();
    out.set_item("zero_support", zero)?;
    let deficiency = findings.iter().find_map(|f| match f {
        Finding::RankDeficiency { deficiency, .. } => Some(*deficiency),
        _ => None,
    });
    out.set_item("deficiency", deficiency.unwrap_or(0))?;
    Ok(out)
}

fn family(name: &str, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> PyResult<DevianceFamily> {
    match name {
        "quadratic" => Ok(DevianceFamily::Quadratic),
        "poisson" => Ok(DevianceFamily::Poisson),
        "discrimination" => Ok(DevianceFamily::Discrimination),
        "logistic" => {
            let (lo, hi) = pair(lower, upper, "logistic")?
                .ok_or_else(|| PyValueError::new_err("logistic needs lower and upper"))?;
            DevianceFamily::logistic(lo, hi).map_err(err)
        }
        other => Err(PyValueError::new_err(format!("unknown deviance '{other}'"))),
    }
}

/// Weights `h(eta)` for a deviance family around reference values `y`.
#[pyfunction]
#[pyo3(signature = (name, eta, y, lower = None, upper = None))]
fn h_map(name: &str, eta: Vec<f64>, y: Vec<f64>, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    core_h_map(&family(name, lower, upper)?, &eta, &y).map_err(err)
}

#[pymodule]
fn calpath(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve_path, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_rank, m)?)?;
    m.add_function(wrap_pyfunction!(find_unachievable, m)?)?;
    m.add_function(wrap_pyfunction!(h_map, m)?)?;
    Ok(())
}
