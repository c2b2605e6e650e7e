//! Newton iteration on the Lagrange multipliers and the closed-form
//! quadratic solution.
//!
//! At a multiplier vector `lambda` the weights are `x = h[eta]` with
//! `eta = W A' lambda`, where `W = Q^-1 / c` and `c` is the stationarity factor
//! of each element's deviance. Newton on `A h[W A' lambda] = t` gives
//!
//! ```text
//!     lambda+ = lambda + [A W <h'[eta]> A']^-1 (t - A h[eta])
//! ```

use std::fmt;

use crate::deviance::{DevianceFamily, EtaGuard, MixedDeviance, PreparedDeviance};
use crate::error::{check_len, Error, Result};
use crate::linalg::{gram, solve_spd, DiagScale, SparseMatrix};
use crate::problem::AugmentedSystem;

pub const MAX_HALVINGS: usize = 20;
/// Consecutive steps without dual ascent or residual decrease before giving up.
pub const DIVERGENCE_STREAK: usize = 5;
const ARMIJO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol_resid: f64,
    pub tol_step: f64,
    pub step_halving: bool,
    pub ridge: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol_resid: 1e-8,
            tol_step: 1e-10,
            step_halving: true,
            ridge: 0.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_resid > 0.0) || !(self.tol_step > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "solver tolerances must be positive and ridge non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusKind {
    Converged,
    MaxIter,
    Diverged,
    SingularGram,
    DomainViolation,
}

impl StatusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusKind::Converged => "converged",
            StatusKind::MaxIter => "max_iter",
            StatusKind::Diverged => "diverged",
            StatusKind::SingularGram => "singular_gram",
            StatusKind::DomainViolation => "domain_violation",
        }
    }
}

impl fmt::Display for StatusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStatus {
    pub kind: StatusKind,
    pub message: String,
}

impl SolveStatus {
    pub fn new(kind: StatusKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn converged(&self) -> bool {
        self.kind == StatusKind::Converged
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.kind, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub iterations: usize,
    /// Poisson adjustments clamped below 1 during the solve.
    pub clamps: usize,
    /// Largest ridge the gram solves needed.
    pub ridge_used: f64,
}

impl SolverState {
    /// Infinity norm of the residual.
    pub fn residual_norm(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// `x = y + Q^-1 A' (A Q^-1 A')^-1 (t - A y)`: the minimizer of
/// `(x - y)' Q (x - y)` subject to `A x = t`.
pub fn solve_quadratic_exact(y: &[f64], qinv: &DiagScale, a: &SparseMatrix, t: &[f64]) -> Result<Vec<f64>> {
    check_len("reference values", a.n_cols(), y.len())?;
    check_len("scale", a.n_cols(), qinv.len())?;
    check_len("targets", a.n_rows(), t.len())?;
    let ay = a.mul_vec(y)?;
    let rhs: Vec<f64> = t.iter().zip(&ay).map(|(t, v)| t - v).collect();
    let g = gram(a, qinv.values())?;
    let z = solve_spd(&g, &rhs, 0.0)?.z;
    let atz = a.mul_t_vec(&z)?;
    Ok(y.iter()
        .zip(qinv.values())
        .zip(&atz)
        .map(|((y, w), v)| y + w * v)
        .collect())
}

/// Newton solve with a single family over all variables.
pub fn newton_solve_family(
    s: &AugmentedSystem,
    f: &DevianceFamily,
    lambda0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(SolverState, SolveStatus)> {
    newton_solve(s, &MixedDeviance::single(s.n_vars(), f.clone())?, lambda0, opts)
}

/// Newton solve of `A h[W A' lambda] = t` from `lambda0` (zero when absent).
///
/// Input errors (dimensions, reference values outside the family domain) are
/// returned as `Err`; numerical failures are reported through the status with
/// the last iterate in the state.
pub fn newton_solve(
    s: &AugmentedSystem,
    f: &MixedDeviance,
    lambda0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(SolverState, SolveStatus)> {
    check_len("deviance partition", s.n_vars(), f.len())?;
    let prep = f.prepare(&s.y)?;
    newton_solve_prepared(s, &prep, lambda0, opts)
}

struct Trial {
    lambda: Vec<f64>,
    eta: Vec<f64>,
    x: Vec<f64>,
    residual: Vec<f64>,
    clamps: usize,
}

fn evaluate(
    s: &AugmentedSystem,
    prep: &PreparedDeviance,
    w: &[f64],
    lambda: Vec<f64>,
    guard: EtaGuard,
) -> Result<Trial> {
    let atl = s.a.mul_t_vec(&lambda)?;
    let eta: Vec<f64> = w.iter().zip(&atl).map(|(w, v)| w * v).collect();
    let mut x = vec![0.0; eta.len()];
    let clamps = prep.map_into(&eta, &mut x, guard)?;
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("weight {i} overflowed")));
    }
    let ax = s.a.mul_vec(&x)?;
    let residual = s.t.iter().zip(&ax).map(|(t, v)| t - v).collect();
    Ok(Trial {
        lambda,
        eta,
        x,
        residual,
        clamps,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn within_tolerance(r: &[f64], scale: &[f64], tol: f64) -> bool {
    r.iter().zip(scale).all(|(r, s)| r.abs() <= tol * (1.0 + s.abs()))
}

pub(crate) fn newton_solve_prepared(
    s: &AugmentedSystem,
    prep: &PreparedDeviance,
    lambda0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(SolverState, SolveStatus)> {
    opts.validate()?;
    let m = s.n_rows();
    check_len("deviance reference values", s.n_vars(), prep.len())?;
    check_len("row scale", m, s.row_scale.len())?;
    let lambda = match lambda0 {
        Some(l) => {
            check_len("initial multipliers", m, l.len())?;
            l.to_vec()
        }
        None => vec![0.0; m],
    };
    let w: Vec<f64> = s
        .qinv
        .values()
        .iter()
        .zip(prep.stationarity_factors())
        .map(|(q, c)| q / c)
        .collect();

    let mut cur = match evaluate(s, prep, &w, lambda.clone(), EtaGuard::Strict) {
        Ok(t) => t,
        Err(Error::Domain(msg)) => match evaluate(s, prep, &w, lambda, EtaGuard::Clamp) {
            Ok(t) => t,
            Err(_) => {
                let state = SolverState {
                    lambda: lambda0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; m]),
                    eta: vec![f64::NAN; s.n_vars()],
                    x: s.y.clone(),
                    residual: vec![f64::NAN; m],
                    iterations: 0,
                    clamps: 0,
                    ridge_used: 0.0,
                };
                return Ok((state, SolveStatus::new(StatusKind::DomainViolation, msg)));
            }
        },
        Err(e) => return Err(e),
    };
    let mut clamps = cur.clamps;
    let mut ridge_used = 0.0f64;
    let mut iterations = 0;
    let mut streak = 0;
    let mut deriv = vec![0.0; s.n_vars()];

    let finish = |t: Trial, iterations, clamps, ridge_used, status: SolveStatus| {
        (
            SolverState {
                lambda: t.lambda,
                eta: t.eta,
                x: t.x,
                residual: t.residual,
                iterations,
                clamps,
                ridge_used,
            },
            status,
        )
    };

    loop {
        if within_tolerance(&cur.residual, &s.row_scale, opts.tol_resid) {
            return Ok(finish(cur, iterations, clamps, ridge_used, SolveStatus::new(StatusKind::Converged, "")));
        }
        if iterations >= opts.max_iter {
            let msg = format!("residual {:e} after {iterations} iterations", norm_inf(&cur.residual));
            return Ok(finish(cur, iterations, clamps, ridge_used, SolveStatus::new(StatusKind::MaxIter, msg)));
        }
        iterations += 1;

        clamps += prep.deriv_into(&cur.eta, &mut deriv, EtaGuard::Clamp)?;
        let scale: Vec<f64> = w.iter().zip(&deriv).map(|(w, d)| w * d).collect();
        let g = gram(&s.a, &scale)?;
        let dir = match solve_spd(&g, &cur.residual, opts.ridge) {
            Ok(sol) => {
                ridge_used = ridge_used.max(sol.ridge);
                sol.z
            }
            Err(Error::SingularGram { ridge }) => {
                let msg = format!("gram singular with ridge {ridge:e}");
                return Ok(finish(cur, iterations, clamps, ridge_used, SolveStatus::new(StatusKind::SingularGram, msg)));
            }
            Err(e) => return Err(e),
        };

        // The residual is the gradient of the concave dual, so along `dir`
        // the slope d'r falls from `slope0`. A step is accepted while the
        // mean slope over it keeps a tenth of `slope0`, which bounds the dual
        // increase without differencing large objective values.
        let r0 = norm2(&cur.residual);
        let slope0 = dot(&dir, &cur.residual);
        let acceptable = |t: &Trial| {
            if slope0 > 0.0 && slope0.is_finite() {
                dot(&dir, &t.residual) >= -(1.0 - 2.0 * ARMIJO) * slope0
            } else {
                norm2(&t.residual) <= r0
            }
        };
        let mut step = 1.0;
        let mut accepted: Option<Trial> = None;
        let mut fallback: Option<Trial> = None;
        let max_halvings = if opts.step_halving { MAX_HALVINGS } else { 0 };
        for _ in 0..=max_halvings {
            let lam: Vec<f64> = cur.lambda.iter().zip(&dir).map(|(l, d)| l + step * d).collect();
            match evaluate(s, prep, &w, lam, EtaGuard::Strict) {
                Ok(t) if !opts.step_halving || acceptable(&t) => {
                    accepted = Some(t);
                    break;
                }
                Ok(t) => fallback = Some(t),
                Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let progressed = accepted.is_some();
        let trial = match accepted.or(fallback) {
            Some(t) => t,
            None => {
                // every damped step left the domain: take the shortest one with clamping
                let lam: Vec<f64> = cur.lambda.iter().zip(&dir).map(|(l, d)| l + 2.0 * step * d).collect();
                match evaluate(s, prep, &w, lam, EtaGuard::Clamp) {
                    Ok(t) => t,
                    Err(Error::Domain(msg)) => {
                        return Ok(finish(
                            cur,
                            iterations,
                            clamps,
                            ridge_used,
                            SolveStatus::new(StatusKind::DomainViolation, msg),
                        ))
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        clamps += trial.clamps;

        let step_norm = trial
            .lambda
            .iter()
            .zip(&cur.lambda)
            .fold(0.0f64, |a, (n, o)| a.max((n - o).abs()));
        let lambda_norm = norm_inf(&trial.lambda);
        if progressed || norm2(&trial.residual) < r0 {
            streak = 0;
        } else {
            streak += 1;
        }
        cur = trial;
        if within_tolerance(&cur.residual, &s.row_scale, opts.tol_resid) {
            continue;
        }
        if streak >= DIVERGENCE_STREAK {
            let msg = format!(
                "residual did not decrease for {DIVERGENCE_STREAK} steps (|r| = {:e})",
                norm_inf(&cur.residual)
            );
            return Ok(finish(cur, iterations, clamps, ridge_used, SolveStatus::new(StatusKind::Diverged, msg)));
        }
        if step_norm <= opts.tol_step * (1.0 + lambda_norm) {
            let msg = format!("step {step_norm:e} stalled with residual {:e}", norm_inf(&cur.residual));
            return Ok(finish(cur, iterations, clamps, ridge_used, SolveStatus::new(StatusKind::Diverged, msg)));
        }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}
