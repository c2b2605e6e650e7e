//! Solution paths over an increasing penalty grid.
//!
//! Each grid value is solved warm-started from the previous one. Absolute and
//! interval penalties go through an IRLS loop: the penalty rows are majorized
//! by quadratics scaled with `kappa = max(|x2 - t|, eps)` and re-solved until
//! the weights settle. Rows that IRLS drives toward their target are then
//! tried as exactly met (the target variable fixed) and kept that way when
//! their multipliers stay inside the subgradient bound `alpha q`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::deviance::{DevianceKind, PreparedDeviance};
use crate::diagnostics::{weight_dispersion, DispersionMetrics};
use crate::error::{check_len, Error, Result};
use crate::linalg::{inf_norm, DiagScale};
use crate::problem::{
    build_augmented_rescaled, default_weight_scale, expand_interval_targets, AugmentedSystem, CalibrationProblem,
    PenaltyKind,
};
use crate::qp::{qp_solve_box_warm, QpProblem};
use crate::solver::{newton_solve_prepared, SolveOptions, SolveStatus, SolverState, StatusKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    LL1,
    LL1N,
    LL2,
    QPL2,
    QuadQuad,
    Custom,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LL1 => "LL1",
            Method::LL1N => "LL1N",
            Method::LL2 => "LL2",
            Method::QPL2 => "QPL2",
            Method::QuadQuad => "QuadQuad",
            Method::Custom => "Custom",
        }
    }

    /// Weight deviance and penalty of a preset (`None` for `Custom`).
    pub fn kinds(self) -> Option<(DevianceKind, PenaltyKind)> {
        match self {
            Method::LL1 | Method::LL1N => Some((DevianceKind::Logistic, PenaltyKind::Absolute)),
            Method::LL2 => Some((DevianceKind::Logistic, PenaltyKind::Quadratic)),
            Method::QPL2 | Method::QuadQuad => Some((DevianceKind::Quadratic, PenaltyKind::Quadratic)),
            Method::Custom => None,
        }
    }

    /// Sets the preset's deviance and penalty with default scales: relative
    /// weights for the quadratic deviance, identity otherwise, identity on
    /// targets.
    pub fn configure(self, p: CalibrationProblem) -> CalibrationProblem {
        match self.kinds() {
            Some((dev, pen)) => {
                let m2 = p.n_targets();
                let q1 = default_weight_scale(dev, &p.base);
                let mut p = p.with_penalty(pen).with_weight_scale(q1).with_target_scale(DiagScale::ones(m2));
                p.weight_deviance = dev;
                p
            }
            None => p,
        }
    }

    fn uses_qp(self) -> bool {
        self == Method::QPL2
    }

    /// Checks that `p` is set up the way this method expects.
    pub fn check(self, p: &CalibrationProblem) -> Result<()> {
        p.validate()?;
        if let Some((dev, pen)) = self.kinds() {
            if p.weight_deviance != dev || p.penalty != pen {
                return Err(Error::InvalidInput(format!(
                    "{} needs {dev} weight deviance with {pen:?} penalty, problem has {} with {:?}",
                    self.name(),
                    p.weight_deviance,
                    p.penalty
                )));
            }
        }
        match self {
            Method::LL1 if p.has_intervals() => Err(Error::InvalidInput(
                "LL1 uses point targets; interval targets need LL1N".into(),
            )),
            Method::LL1N if !p.has_intervals() => Err(Error::InvalidInput("LL1N needs interval targets".into())),
            Method::QPL2 if p.bounds.is_none() => Err(Error::InvalidInput("QPL2 needs weight bounds".into())),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::LL1, Method::LL1N, Method::LL2, Method::QPL2, Method::QuadQuad, Method::Custom]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// `2^k` for `k` in `k_min..=k_max`.
pub fn power_grid(base: f64, k_min: i32, k_max: i32) -> Vec<f64> {
    (k_min..=k_max).map(|k| base.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub alpha_grid: Vec<f64>,
    pub method: Method,
    pub irls_max: usize,
    /// IRLS stops when `|dx|_inf <= irls_tol (1 + |x|_inf)`.
    pub irls_tol: f64,
    pub kappa_floor: f64,
    /// Freeze targets within `snap (1 + |t|)` and weights within
    /// `snap (b_u - b_l)` of a bound for all later penalty values.
    pub freeze_snap: Option<f64>,
    /// Try exactly-met rows after IRLS (absolute penalty only).
    pub refine_support: bool,
    /// Rows within `support_tol (1 + |t|)` of their target are candidates.
    pub support_tol: f64,
    pub warm_start: bool,
    pub solve: SolveOptions,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            alpha_grid: power_grid(2.0, -14, 15),
            method: Method::LL1,
            irls_max: 50,
            irls_tol: 1e-8,
            kappa_floor: 1e-8,
            freeze_snap: None,
            refine_support: true,
            support_tol: 1e-2,
            warm_start: true,
            solve: SolveOptions::default(),
        }
    }
}

impl PathConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::InvalidInput("empty alpha grid".into()));
        }
        if self.alpha_grid.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidInput("alpha grid values must be positive and finite".into()));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("alpha grid must be strictly increasing".into()));
        }
        if !(self.kappa_floor > 0.0) || !(self.irls_tol > 0.0) || self.irls_max == 0 {
            return Err(Error::InvalidInput("IRLS settings must be positive".into()));
        }
        if let Some(s) = self.freeze_snap {
            if !(s > 0.0) {
                return Err(Error::InvalidInput("freeze_snap must be positive".into()));
            }
        }
        self.solve.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsState {
    pub kappa: Vec<f64>,
}

impl IrlsState {
    pub fn ones(m: usize) -> Self {
        Self { kappa: vec![1.0; m] }
    }
}

/// `kappa' = max(|x2 - targets|, eps)`.
pub fn irls_step(state: &IrlsState, x2: &[f64], targets: &[f64], eps: f64) -> Result<IrlsState> {
    check_len("irls kappa", state.kappa.len(), x2.len())?;
    check_len("irls targets", x2.len(), targets.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("kappa floor must be positive, got {eps}")));
    }
    Ok(IrlsState {
        kappa: x2.iter().zip(targets).map(|(x, t)| (x - t).abs().max(eps)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub alpha: f64,
    /// Weights (last iterate when the solve failed).
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub status: SolveStatus,
    /// `A2 x` on the original targets.
    pub achieved: Vec<f64>,
    pub deviance: f64,
    pub objective: f64,
    pub dispersion: Option<DispersionMetrics>,
    pub newton_iterations: usize,
    pub irls_iterations: usize,
    pub irls_converged: bool,
    /// Penalized objective after each IRLS inner solve.
    pub irls_objectives: Vec<f64>,
    pub kappa: Option<Vec<f64>>,
    /// Expanded target rows solved as exactly met.
    pub exact_rows: Vec<usize>,
    pub clamps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFailure {
    pub alpha: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub method: Method,
    pub records: Vec<PathRecord>,
    pub failure: Option<PathFailure>,
}

impl PathResult {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn last(&self) -> Option<&PathRecord> {
        self.records.last()
    }
}

struct Outcome {
    state: SolverState,
    status: SolveStatus,
    newton_iterations: usize,
    irls_iterations: usize,
    irls_converged: bool,
    objectives: Vec<f64>,
    kappa: Option<Vec<f64>>,
    exact_rows: Vec<usize>,
}

struct Driver<'a> {
    original: &'a CalibrationProblem,
    expanded: CalibrationProblem,
    prep: PreparedDeviance,
    cfg: &'a PathConfig,
    n: usize,
    m1: usize,
    m2: usize,
    centers: Vec<f64>,
    frozen_targets: BTreeSet<usize>,
    fixed_weights: Vec<(usize, f64)>,
}

impl Driver<'_> {
    fn system(&self, alpha: f64, kappa: Option<&[f64]>, extra: &BTreeSet<usize>) -> Result<AugmentedSystem> {
        let mut s = build_augmented_rescaled(&self.expanded, alpha, kappa)?;
        let frozen: Vec<usize> = self.frozen_targets.union(extra).map(|j| self.n + j).collect();
        if !frozen.is_empty() {
            s = s.freeze_components(&frozen)?;
        }
        if !self.fixed_weights.is_empty() {
            let (idx, vals): (Vec<usize>, Vec<f64>) = self.fixed_weights.iter().copied().unzip();
            s = s.append_fixing_rows_at(&idx, &vals)?;
        }
        Ok(s)
    }

    fn n_rows(&self) -> usize {
        self.m1 + self.m2 + self.fixed_weights.len()
    }

    fn fit_lambda(&self, lambda: Option<&Vec<f64>>) -> Option<Vec<f64>> {
        lambda.map(|l| {
            let mut l = l.clone();
            l.resize(self.n_rows(), 0.0);
            l
        })
    }

    fn objective(&self, x: &[f64], alpha: f64) -> f64 {
        self.expanded.objective(&x[..self.n], alpha).unwrap_or(f64::NAN)
    }

    fn newton(&self, alpha: f64, lambda: Option<Vec<f64>>) -> Result<Outcome> {
        let s = self.system(alpha, None, &BTreeSet::new())?;
        let (state, status) = newton_solve_prepared(&s, &self.prep, lambda.as_deref(), &self.cfg.solve)?;
        Ok(Outcome {
            newton_iterations: state.iterations,
            state,
            status,
            irls_iterations: 0,
            irls_converged: true,
            objectives: Vec::new(),
            kappa: None,
            exact_rows: Vec::new(),
        })
    }

    fn qp(&self, alpha: f64, lambda: Option<Vec<f64>>) -> Result<Outcome> {
        let s = self.system(alpha, None, &BTreeSet::new())?;
        let bounds = self.expanded.bounds.as_ref().expect("checked by Method::check");
        let nv = s.n_vars();
        let mut lower = vec![f64::NEG_INFINITY; nv];
        let mut upper = vec![f64::INFINITY; nv];
        lower[..self.n].copy_from_slice(&bounds.lower);
        upper[..self.n].copy_from_slice(&bounds.upper);
        let mut q = Vec::with_capacity(nv);
        for (i, &w) in s.qinv.values().iter().enumerate() {
            if w > 0.0 {
                q.push(1.0 / w);
            } else {
                q.push(1.0);
                lower[i] = s.y[i];
                upper[i] = s.y[i];
            }
        }
        let qp = QpProblem {
            y: s.y.clone(),
            qdiag: DiagScale::new(q)?,
            a: s.a.clone(),
            t: s.t.clone(),
            lower,
            upper,
            row_scale: s.row_scale.clone(),
        };
        let sol = qp_solve_box_warm(&qp, &self.cfg.solve, lambda.as_deref())?;
        let ax = s.a.mul_vec(&sol.x)?;
        let residual: Vec<f64> = s.t.iter().zip(&ax).map(|(t, v)| t - v).collect();
        let status = if sol.converged {
            SolveStatus::new(StatusKind::Converged, "")
        } else {
            SolveStatus::new(StatusKind::MaxIter, format!("kkt residual {:e}", sol.kkt_residual))
        };
        Ok(Outcome {
            state: SolverState {
                lambda: sol.lambda,
                eta: Vec::new(),
                x: sol.x,
                residual,
                iterations: sol.iterations,
                clamps: 0,
                ridge_used: 0.0,
            },
            status,
            newton_iterations: sol.iterations,
            irls_iterations: 0,
            irls_converged: true,
            objectives: Vec::new(),
            kappa: None,
            exact_rows: Vec::new(),
        })
    }

    /// IRLS at one penalty value with `extra` target rows held exact.
    fn irls(
        &self,
        alpha: f64,
        mut kappa: IrlsState,
        mut lambda: Option<Vec<f64>>,
        extra: &BTreeSet<usize>,
    ) -> Result<Outcome> {
        let (n, m2) = (self.n, self.m2);
        let mut x_prev: Option<Vec<f64>> = None;
        let mut objectives = Vec::new();
        let mut newton_iterations = 0;
        let mut irls_converged = false;
        let mut last: Option<(SolverState, SolveStatus)> = None;
        let mut iterations = 0;
        while iterations < self.cfg.irls_max {
            iterations += 1;
            let s = self.system(alpha, Some(&kappa.kappa), extra)?;
            let (state, status) = newton_solve_prepared(&s, &self.prep, lambda.as_deref(), &self.cfg.solve)?;
            newton_iterations += state.iterations;
            if !status.converged() {
                last = Some((state, status));
                break;
            }
            objectives.push(self.objective(&state.x, alpha));
            kappa = irls_step(&kappa, &state.x[n..n + m2], &self.centers, self.cfg.kappa_floor)?;
            let x = &state.x[..n];
            let settled = x_prev.as_ref().is_some_and(|p| {
                let dx = p.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                dx <= self.cfg.irls_tol * (1.0 + inf_norm(x))
            });
            x_prev = Some(x.to_vec());
            lambda = Some(state.lambda.clone());
            last = Some((state, status));
            if settled {
                irls_converged = true;
                break;
            }
        }
        let (state, status) = last.expect("at least one IRLS iteration");
        Ok(Outcome {
            state,
            status,
            newton_iterations,
            irls_iterations: iterations,
            irls_converged,
            objectives,
            kappa: Some(kappa.kappa),
            exact_rows: self.frozen_targets.union(extra).copied().collect(),
        })
    }

    /// Re-solves with near-met rows held exact, releasing rows whose
    /// multiplier exceeds `alpha q`; keeps the result when it does not
    /// worsen the penalized objective.
    fn refine(&self, alpha: f64, base: Outcome) -> Result<Outcome> {
        let (n, m1) = (self.n, self.m1);
        let x2 = &base.state.x[n..n + self.m2];
        let mut support: BTreeSet<usize> = (0..self.m2)
            .filter(|&j| {
                !self.frozen_targets.contains(&j)
                    && !self.expanded.penalized.row_is_zero(j)
                    && (x2[j] - self.centers[j]).abs() <= self.cfg.support_tol * (1.0 + self.centers[j].abs())
            })
            .collect();
        if support.is_empty() {
            return Ok(base);
        }
        let base_obj = self.objective(&base.state.x, alpha);
        let q2 = self.expanded.target_scale.values();
        let mut total_newton = base.newton_iterations;
        let mut total_irls = base.irls_iterations;
        for _ in 0..self.m2.min(20) {
            let kappa = IrlsState {
                kappa: base.kappa.clone().unwrap_or_else(|| vec![1.0; self.m2]),
            };
            let out = self.irls(alpha, kappa, Some(base.state.lambda.clone()), &support)?;
            total_newton += out.newton_iterations;
            total_irls += out.irls_iterations;
            if !out.status.converged() {
                break;
            }
            let violators: Vec<usize> = support
                .iter()
                .copied()
                .filter(|&j| out.state.lambda[m1 + j].abs() > alpha * q2[j] * (1.0 + 1e-9) + 1e-12)
                .collect();
            if violators.is_empty() {
                let obj = self.objective(&out.state.x, alpha);
                if obj <= base_obj + 1e-9 * (1.0 + base_obj.abs()) {
                    let mut objectives = base.objectives;
                    objectives.extend(out.objectives);
                    return Ok(Outcome {
                        newton_iterations: total_newton,
                        irls_iterations: total_irls,
                        objectives,
                        ..out
                    });
                }
                break;
            }
            for j in violators {
                support.remove(&j);
            }
            if support.is_empty() {
                break;
            }
        }
        Ok(Outcome {
            newton_iterations: total_newton,
            irls_iterations: total_irls,
            ..base
        })
    }

    fn record(&self, alpha: f64, out: Outcome) -> Result<PathRecord> {
        let x = out.state.x[..self.n].to_vec();
        let achieved = self.original.penalized.mul_vec(&x)?;
        let deviance = self
            .original
            .weight_family()
            .and_then(|f| f.prepare(&self.original.base))
            .and_then(|d| d.value(&x, self.original.weight_scale.values()))
            .unwrap_or(f64::NAN);
        let objective = self.original.objective(&x, alpha).unwrap_or(f64::NAN);
        let dispersion = weight_dispersion(&x, self.original.bounds.as_ref(), 0.01).ok();
        Ok(PathRecord {
            alpha,
            lambda: out.state.lambda,
            clamps: out.state.clamps,
            x,
            status: out.status,
            achieved,
            deviance,
            objective,
            dispersion,
            newton_iterations: out.newton_iterations,
            irls_iterations: out.irls_iterations,
            irls_converged: out.irls_converged,
            irls_objectives: out.objectives,
            kappa: out.kappa,
            exact_rows: out.exact_rows,
        })
    }

    fn snap(&mut self, x: &[f64]) {
        let Some(snap) = self.cfg.freeze_snap else { return };
        let n = self.n;
        for j in 0..self.m2 {
            let t = self.centers[j];
            if (x[n + j] - t).abs() <= snap * (1.0 + t.abs()) && !self.expanded.penalized.row_is_zero(j) {
                self.frozen_targets.insert(j);
            }
        }
        if self.cfg.method.uses_qp() {
            return;
        }
        if let Some(b) = &self.expanded.bounds {
            for i in 0..n {
                let width = b.upper[i] - b.lower[i];
                let near = (x[i] - b.lower[i]).abs().min((b.upper[i] - x[i]).abs());
                if width.is_finite() && near <= snap * width && !self.fixed_weights.iter().any(|&(k, _)| k == i) {
                    self.fixed_weights.push((i, x[i]));
                }
            }
        }
    }
}

/// Solves `p` at every grid value in ascending order. A failed solve ends the
/// path; its last iterate is recorded and the failure noted.
pub fn run_path(p: &CalibrationProblem, cfg: &PathConfig) -> Result<PathResult> {
    cfg.validate()?;
    cfg.method.check(p)?;
    let expanded = expand_interval_targets(p)?;
    let prep = expanded.augmented_deviance()?.prepare(&{
        let mut y = expanded.base.clone();
        y.extend(expanded.target_centers());
        y
    })?;
    let mut d = Driver {
        original: p,
        n: expanded.n_weights(),
        m1: expanded.n_exact(),
        m2: expanded.n_targets(),
        centers: expanded.target_centers(),
        prep,
        cfg,
        expanded,
        frozen_targets: BTreeSet::new(),
        fixed_weights: Vec::new(),
    };
    let absolute = d.expanded.penalty == PenaltyKind::Absolute;
    let mut lambda: Option<Vec<f64>> = None;
    let mut kappa = IrlsState::ones(d.m2);
    let mut result = PathResult {
        method: cfg.method,
        records: Vec::with_capacity(cfg.alpha_grid.len()),
        failure: None,
    };
    for &alpha in &cfg.alpha_grid {
        if !cfg.warm_start {
            lambda = None;
            kappa = IrlsState::ones(d.m2);
        }
        let warm = d.fit_lambda(lambda.as_ref());
        let outcome = if cfg.method.uses_qp() {
            d.qp(alpha, warm)
        } else if absolute {
            d.irls(alpha, kappa.clone(), warm, &BTreeSet::new()).and_then(|out| {
                if cfg.refine_support && out.status.converged() {
                    d.refine(alpha, out)
                } else {
                    Ok(out)
                }
            })
        } else {
            d.newton(alpha, warm)
        };
        let out = match outcome {
            Ok(out) => out,
            Err(e @ (Error::Infeasible { .. } | Error::CyclingGuard(_) | Error::SingularGram { .. })) => {
                result.failure = Some(PathFailure {
                    alpha,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let converged = out.status.converged();
        let message = out.status.to_string();
        if converged {
            lambda = Some(out.state.lambda.clone());
            if let Some(k) = &out.kappa {
                kappa = IrlsState { kappa: k.clone() };
            }
            d.snap(&out.state.x);
        }
        result.records.push(d.record(alpha, out)?);
        if !converged {
            result.failure = Some(PathFailure { alpha, message });
            break;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationarity {
    pub per_target: Vec<bool>,
    pub max_change: Vec<f64>,
    pub stationary: bool,
}

/// Whether each target's achieved value changed by at most `tol`
/// (relative) between consecutive records among the last `window`.
pub fn check_stationarity(r: &PathResult, window: usize, tol: f64) -> Result<Stationarity> {
    if window < 2 || window > r.records.len() {
        return Err(Error::InvalidInput(format!(
            "stationarity window must be in 2..={}, got {window}",
            r.records.len()
        )));
    }
    let tail = &r.records[r.records.len() - window..];
    let m = tail[0].achieved.len();
    let max_change: Vec<f64> = (0..m)
        .map(|j| {
            tail.windows(2)
                .map(|w| {
                    let (a, b) = (w[0].achieved[j], w[1].achieved[j]);
                    let scale = a.abs().max(b.abs());
                    if scale == 0.0 {
                        0.0
                    } else {
                        (b - a).abs() / scale
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let per_target: Vec<bool> = max_change.iter().map(|&c| c <= tol).collect();
    let stationary = per_target.iter().all(|&s| s);
    Ok(Stationarity {
        per_target,
        max_change,
        stationary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SparseMatrix;
    use crate::problem::{Bounds, Target};

    fn toy(penalty: PenaltyKind) -> CalibrationProblem {
        CalibrationProblem::new(
            vec![1.0, 1.0],
            SparseMatrix::from_dense_rows(&[vec![1.0, 1.0]], 2).unwrap(),
            vec![Target::Point(4.0)],
        )
        .unwrap()
        .with_penalty(penalty)
    }

    #[test]
    fn irls_step_examples() {
        let s = irls_step(&IrlsState::ones(1), &[1.5], &[1.0], 1e-8).unwrap();
        assert_eq!(s.kappa, vec![0.5]);
        let s = irls_step(&IrlsState::ones(2), &[3.0, 4.0], &[3.0, 4.0], 1e-8).unwrap();
        assert_eq!(s.kappa, vec![1e-8, 1e-8]);
        assert!(irls_step(&IrlsState::ones(1), &[1.0, 2.0], &[1.0, 2.0], 1e-8).is_err());
    }

    #[test]
    fn quadratic_toy_path() {
        let cfg = PathConfig::new(Method::QuadQuad);
        let r = run_path(&Method::QuadQuad.configure(toy(PenaltyKind::Quadratic)), &cfg).unwrap();
        assert!(r.is_complete());
        for rec in &r.records {
            let a = rec.alpha;
            let want = 2.0 + 4.0 * a / (1.0 + 2.0 * a);
            assert!((rec.achieved[0] - want).abs() < 1e-9, "alpha {a}");
        }
        assert!((r.records[0].achieved[0] - 2.0).abs() < 1e-3);
        let at_one = r.records.iter().find(|r| r.alpha == 1.0).unwrap();
        assert!((at_one.achieved[0] - 10.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn absolute_toy_path_is_exact_from_two() {
        let cfg = PathConfig::new(Method::Custom);
        let r = run_path(&toy(PenaltyKind::Absolute), &cfg).unwrap();
        assert!(r.is_complete());
        for rec in &r.records {
            let a = rec.alpha;
            if a < 2.0 {
                let want = 1.0 + a / 2.0;
                assert!((rec.x[0] - want).abs() < 1e-6 && (rec.x[1] - want).abs() < 1e-6, "alpha {a}: {:?}", rec.x);
            } else {
                assert!((rec.achieved[0] - 4.0).abs() <= 1e-8, "alpha {a}: {}", rec.achieved[0]);
            }
        }
    }

    #[test]
    fn irls_alone_reaches_exact_solution_at_four() {
        let cfg = PathConfig {
            alpha_grid: vec![4.0],
            refine_support: false,
            ..PathConfig::new(Method::Custom)
        };
        let r = run_path(&toy(PenaltyKind::Absolute), &cfg).unwrap();
        let rec = &r.records[0];
        assert!(rec.irls_converged);
        assert!((rec.x[0] - 2.0).abs() < 1e-7 && (rec.x[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn irls_objective_is_monotone() {
        let cfg = PathConfig {
            refine_support: false,
            ..PathConfig::new(Method::Custom)
        };
        let r = run_path(&toy(PenaltyKind::Absolute), &cfg).unwrap();
        for rec in &r.records {
            for w in rec.irls_objectives.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "alpha {}: {:?}", rec.alpha, w);
            }
        }
    }

    #[test]
    fn stationarity_of_quadratic_toy() {
        let p = Method::QuadQuad.configure(toy(PenaltyKind::Quadratic));
        let upto = |k: i32| {
            let cfg = PathConfig {
                alpha_grid: power_grid(2.0, -14, k),
                ..PathConfig::new(Method::QuadQuad)
            };
            run_path(&p, &cfg).unwrap()
        };
        assert!(!check_stationarity(&upto(8), 3, 1e-3).unwrap().stationary);
        assert!(check_stationarity(&upto(9), 3, 1e-3).unwrap().stationary);
        assert!(check_stationarity(&upto(15), 3, 1e-3).unwrap().stationary);
        assert!(check_stationarity(&upto(9), 1, 1e-3).is_err());
    }

    #[test]
    fn stationarity_examples() {
        let mk = |vals: &[f64]| PathResult {
            method: Method::Custom,
            failure: None,
            records: vals
                .iter()
                .enumerate()
                .map(|(k, &v)| PathRecord {
                    alpha: (k + 1) as f64,
                    x: vec![],
                    lambda: vec![],
                    status: SolveStatus::new(StatusKind::Converged, ""),
                    achieved: vec![v],
                    deviance: 0.0,
                    objective: 0.0,
                    dispersion: None,
                    newton_iterations: 0,
                    irls_iterations: 0,
                    irls_converged: true,
                    irls_objectives: vec![],
                    kappa: None,
                    exact_rows: vec![],
                    clamps: 0,
                })
                .collect(),
        };
        assert!(check_stationarity(&mk(&[5.0, 5.0, 5.0]), 3, 1e-3).unwrap().stationary);
        assert!(!check_stationarity(&mk(&[100.0, 101.0, 102.01]), 3, 1e-3).unwrap().stationary);
    }

    #[test]
    fn method_problem_mismatch_is_rejected() {
        let p = toy(PenaltyKind::Quadratic);
        assert!(run_path(&p, &PathConfig::new(Method::LL1)).is_err());
        assert!(run_path(&Method::QPL2.configure(p.clone()), &PathConfig::new(Method::QPL2)).is_err());
        let empty = PathConfig {
            alpha_grid: vec![],
            ..PathConfig::new(Method::QuadQuad)
        };
        assert!(run_path(&Method::QuadQuad.configure(p), &empty).is_err());
    }

    #[test]
    fn logistic_paths_stay_in_bounds() {
        let b = Bounds::new(vec![0.5, 0.5], vec![1.8, 1.8]).unwrap();
        for m in [Method::LL1, Method::LL2] {
            let p = m.configure(toy(PenaltyKind::Quadratic).with_bounds(b.clone()));
            let r = run_path(&p, &PathConfig::new(m)).unwrap();
            for rec in &r.records {
                assert!(rec.x.iter().all(|&v| (0.5..=1.8).contains(&v)));
            }
        }
    }

    #[test]
    fn qp_path_respects_bounds_and_matches_quadratic_when_inactive() {
        let wide = Bounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let p = Method::QPL2.configure(toy(PenaltyKind::Quadratic).with_bounds(wide));
        let r = run_path(&p, &PathConfig::new(Method::QPL2)).unwrap();
        for rec in &r.records {
            let want = 2.0 + 4.0 * rec.alpha / (1.0 + 2.0 * rec.alpha);
            assert!((rec.achieved[0] - want).abs() < 1e-9);
        }
        let tight = Bounds::new(vec![0.0, 0.0], vec![1.5, 1.5]).unwrap();
        let p = Method::QPL2.configure(toy(PenaltyKind::Quadratic).with_bounds(tight));
        let r = run_path(&p, &PathConfig::new(Method::QPL2)).unwrap();
        let last = r.last().unwrap();
        assert_eq!(last.x, vec![1.5, 1.5]);
    }

    #[test]
    fn warm_and_cold_agree_on_smooth_methods() {
        let b = Bounds::new(vec![0.2, 0.2], vec![3.0, 3.0]).unwrap();
        for m in [Method::LL2, Method::QuadQuad] {
            let p = m.configure(toy(PenaltyKind::Quadratic).with_bounds(b.clone()));
            let warm = run_path(&p, &PathConfig::new(m)).unwrap();
            let cold = run_path(
                &p,
                &PathConfig {
                    warm_start: false,
                    ..PathConfig::new(m)
                },
            )
            .unwrap();
            for (a, b) in warm.records.iter().zip(&cold.records) {
                for (u, v) in a.x.iter().zip(&b.x) {
                    assert!((u - v).abs() < 1e-6);
                }
            }
        }
    }
}
