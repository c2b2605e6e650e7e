//! Diagonal quadratic programs with equality rows and per-element bounds.
//!
//! Solved in the dual: for multipliers `lambda` the box-constrained
//! minimizer of the Lagrangian is `x(lambda) = clip(y + A' lambda / 2q, l, u)`
//! and the concave dual has gradient `t - A x(lambda)`. Semismooth Newton
//! steps use the gram over the free variables only, and each step is
//! followed by an exact line search on the piecewise-linear directional
//! derivative, so the dual increases strictly and no active set repeats.

use crate::error::{check_len, Error, Result};
use crate::linalg::{gram, solve_spd, DiagScale, SparseMatrix};
use crate::solver::SolveOptions;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub y: Vec<f64>,
    pub qdiag: DiagScale,
    pub a: SparseMatrix,
    pub t: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Magnitude used to scale each row's feasibility test (defaults to `|t|`).
    pub row_scale: Vec<f64>,
}

impl QpProblem {
    pub fn new(
        y: Vec<f64>,
        qdiag: DiagScale,
        a: SparseMatrix,
        t: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let row_scale = t.iter().map(|v| v.abs()).collect();
        let p = Self {
            y,
            qdiag,
            a,
            t,
            lower,
            upper,
            row_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_vars(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        check_len("qp columns", n, self.a.n_cols())?;
        check_len("qp scale", n, self.qdiag.len())?;
        check_len("qp targets", self.a.n_rows(), self.t.len())?;
        check_len("qp row scale", self.a.n_rows(), self.row_scale.len())?;
        check_len("qp lower bounds", n, self.lower.len())?;
        check_len("qp upper bounds", n, self.upper.len())?;
        if self.qdiag.values().iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            return Err(Error::InvalidInput("qp scale must be positive and finite".into()));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) || !self.y[i].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "qp variable {i}: bounds [{}, {}] with reference {}",
                    self.lower[i], self.upper[i], self.y[i]
                )));
            }
        }
        Ok(())
    }

    /// Range `A_i x` can take over the box, for every row.
    pub fn achievable_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.a.n_rows())
            .map(|i| {
                let (cols, vals) = self.a.row(i);
                cols.iter().zip(vals).fold((0.0, 0.0), |(lo, hi), (&j, &v)| {
                    let (a, b) = (v * self.lower[j], v * self.upper[j]);
                    // 0 * inf is treated as 0
                    let (a, b) = (if a.is_nan() { 0.0 } else { a }, if b.is_nan() { 0.0 } else { b });
                    (lo + a.min(b), hi + a.max(b))
                })
            })
            .collect()
    }

    fn infeasible_row(&self, row: usize) -> Error {
        let (lo, hi) = self.achievable_ranges()[row];
        Error::Infeasible {
            row,
            target: self.t[row],
            lo,
            hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub lambda: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    /// Max of the stationarity residual and the row-scaled feasibility residual.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active_set_changes: usize,
    pub converged: bool,
}

pub fn qp_solve_box(p: &QpProblem, opts: &SolveOptions) -> Result<QpSolution> {
    qp_solve_box_warm(p, opts, None)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    Lower,
    Upper,
}

struct Iterate {
    x: Vec<f64>,
    side: Vec<Side>,
    residual: Vec<f64>,
}

fn evaluate(p: &QpProblem, lambda: &[f64]) -> Result<Iterate> {
    let atl = p.a.mul_t_vec(lambda)?;
    let q = p.qdiag.values();
    let mut x = Vec::with_capacity(p.n_vars());
    let mut side = Vec::with_capacity(p.n_vars());
    for i in 0..p.n_vars() {
        let v = p.y[i] + atl[i] / (2.0 * q[i]);
        if v <= p.lower[i] {
            x.push(p.lower[i]);
            side.push(if v < p.lower[i] || p.lower[i] == p.upper[i] { Side::Lower } else { Side::Free });
        } else if v >= p.upper[i] {
            x.push(p.upper[i]);
            side.push(if v > p.upper[i] { Side::Upper } else { Side::Free });
        } else {
            x.push(v);
            side.push(Side::Free);
        }
    }
    let ax = p.a.mul_vec(&x)?;
    let residual = p.t.iter().zip(&ax).map(|(t, v)| t - v).collect();
    Ok(Iterate { x, side, residual })
}

/// Exact maximizer along `d` of the dual: the root of the non-increasing,
/// piecewise-linear `phi'(s)`. `None` when `phi'` stays positive for all s.
fn exact_step(p: &QpProblem, lambda: &[f64], d: &[f64], slope0: f64) -> Result<Option<f64>> {
    let q = p.qdiag.values();
    let atl = p.a.mul_t_vec(lambda)?;
    let b = p.a.mul_t_vec(d)?;
    // each variable contributes -b_i c_i to the slope of phi' while free
    let mut events: Vec<(f64, f64)> = Vec::new();
    let mut sigma = 0.0;
    for i in 0..p.n_vars() {
        if b[i] == 0.0 {
            continue;
        }
        let v = p.y[i] + atl[i] / (2.0 * q[i]);
        let c = b[i] / (2.0 * q[i]);
        let w = b[i] * c;
        let (s_lo, s_hi) = ((p.lower[i] - v) / c, (p.upper[i] - v) / c);
        let (enter, leave) = if c > 0.0 { (s_lo, s_hi) } else { (s_hi, s_lo) };
        if !(enter < leave) {
            continue;
        }
        if enter <= 0.0 {
            if leave > 0.0 {
                sigma -= w;
                if leave.is_finite() {
                    events.push((leave, w));
                }
            }
        } else {
            events.push((enter, -w));
            if leave.is_finite() {
                events.push((leave, w));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut s, mut phi) = (0.0, slope0);
    let mut k = 0;
    loop {
        let next = events.get(k).map_or(f64::INFINITY, |e| e.0);
        if sigma < 0.0 {
            let root = s - phi / sigma;
            if root <= next {
                return Ok(Some(root));
            }
        }
        if !next.is_finite() {
            return Ok(None);
        }
        phi += sigma * (next - s);
        s = next;
        if phi <= 0.0 {
            return Ok(Some(s));
        }
        while k < events.len() && events[k].0 == next {
            sigma += events[k].1;
            k += 1;
        }
    }
}

fn scaled_inf(r: &[f64], scale: &[f64]) -> f64 {
    r.iter().zip(scale).fold(0.0f64, |m, (r, s)| m.max(r.abs() / (1.0 + s.abs())))
}

/// [`qp_solve_box`] from a given multiplier vector.
pub fn qp_solve_box_warm(p: &QpProblem, opts: &SolveOptions, lambda0: Option<&[f64]>) -> Result<QpSolution> {
    p.validate()?;
    opts.validate()?;
    let (m, n) = (p.a.n_rows(), p.n_vars());
    for (i, &(lo, hi)) in p.achievable_ranges().iter().enumerate() {
        let slack = 1e-12 * (1.0 + p.t[i].abs());
        if p.t[i] < lo - slack || p.t[i] > hi + slack {
            return Err(p.infeasible_row(i));
        }
    }
    let mut lambda = match lambda0 {
        Some(l) => {
            check_len("initial multipliers", m, l.len())?;
            l.to_vec()
        }
        None => vec![0.0; m],
    };
    let q = p.qdiag.values();
    let max_changes = 10 * n.max(1);
    let max_iter = opts.max_iter + max_changes;
    let mut cur = evaluate(p, &lambda)?;
    let mut changes = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut free_scale = vec![0.0; n];
    while iterations < max_iter {
        if scaled_inf(&cur.residual, &p.row_scale) <= opts.tol_resid {
            converged = true;
            break;
        }
        iterations += 1;
        for i in 0..n {
            free_scale[i] = if cur.side[i] == Side::Free { 1.0 / (2.0 * q[i]) } else { 0.0 };
        }
        let g = gram(&p.a, &free_scale)?;
        let d = solve_spd(&g, &cur.residual, opts.ridge)?.z;
        let slope0: f64 = d.iter().zip(&cur.residual).map(|(d, r)| d * r).sum();
        if !(slope0 > 0.0) {
            break;
        }
        let Some(step) = exact_step(p, &lambda, &d, slope0)? else {
            let row = (0..m)
                .max_by(|&a, &b| cur.residual[a].abs().total_cmp(&cur.residual[b].abs()))
                .unwrap_or(0);
            return Err(p.infeasible_row(row));
        };
        for (l, d) in lambda.iter_mut().zip(&d) {
            *l += step * d;
        }
        let next = evaluate(p, &lambda)?;
        if next.side != cur.side {
            changes += 1;
            if changes > max_changes {
                return Err(Error::CyclingGuard(changes));
            }
        }
        cur = next;
    }
    if !converged && iterations >= max_iter {
        return Err(Error::CyclingGuard(changes));
    }

    let atl = p.a.mul_t_vec(&lambda)?;
    let mut mu_lower = vec![0.0; n];
    let mut mu_upper = vec![0.0; n];
    let mut stationarity = 0.0f64;
    let (mut active_lower, mut active_upper) = (Vec::new(), Vec::new());
    for i in 0..n {
        let g = 2.0 * q[i] * (cur.x[i] - p.y[i]) - atl[i];
        // reported active sets include degenerate bounds reached with zero multiplier
        if cur.x[i] == p.lower[i] {
            active_lower.push(i);
            mu_lower[i] = g.max(0.0);
            stationarity = stationarity.max((-g).max(0.0));
        } else if cur.x[i] == p.upper[i] {
            active_upper.push(i);
            mu_upper[i] = (-g).max(0.0);
            stationarity = stationarity.max(g.max(0.0));
        } else {
            stationarity = stationarity.max(g.abs());
        }
    }
    let kkt_residual = stationarity.max(scaled_inf(&cur.residual, &p.row_scale));
    Ok(QpSolution {
        x: cur.x,
        active_lower,
        active_upper,
        lambda,
        mu_lower,
        mu_upper,
        kkt_residual,
        iterations,
        active_set_changes: changes,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_quadratic_exact;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> SparseMatrix {
        SparseMatrix::from_dense_rows(&[v.to_vec()], v.len()).unwrap()
    }

    fn boxed(y: &[f64], a: SparseMatrix, t: &[f64], lo: f64, hi: f64) -> QpProblem {
        let n = y.len();
        QpProblem::new(y.to_vec(), DiagScale::ones(n), a, t.to_vec(), vec![lo; n], vec![hi; n]).unwrap()
    }

    #[test]
    fn both_upper_bounds_active() {
        let p = boxed(&[1.0, 3.0], row(&[1.0, 1.0]), &[4.0], 0.0, 2.0);
        let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.x, vec![2.0, 2.0]);
        assert_eq!(s.active_upper, vec![0, 1]);
        assert!(s.kkt_residual <= 1e-12);
        // hand KKT: 2(x0 - 1) = lambda gives lambda = 2 with x0 on its bound at zero
        // multiplier, and mu_1 = lambda - 2(2 - 3) = 4
        assert!((s.lambda[0] - 2.0).abs() < 1e-12);
        assert!(s.mu_upper[0].abs() < 1e-12);
        assert!((s.mu_upper[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn interior_optimum_matches_closed_form() {
        let p = boxed(&[1.0, 1.0], row(&[1.0, 1.0]), &[3.0], 0.0, 5.0);
        let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.x, vec![1.5, 1.5]);
        assert!(s.active_lower.is_empty() && s.active_upper.is_empty());
    }

    #[test]
    fn infeasible_row_reports_range() {
        let p = boxed(&[1.0, 1.0], row(&[1.0, 1.0]), &[10.0], 0.0, 2.0);
        match qp_solve_box(&p, &SolveOptions::default()) {
            Err(Error::Infeasible { row, lo, hi, .. }) => {
                assert_eq!(row, 0);
                assert_eq!((lo, hi), (0.0, 4.0));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn jointly_infeasible_rows_are_detected() {
        let a = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]], 2).unwrap();
        let p = boxed(&[1.0, 1.0], a, &[3.0, 3.5], 0.0, 2.0);
        assert!(matches!(qp_solve_box(&p, &SolveOptions::default()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn fixed_variables() {
        let p = QpProblem::new(
            vec![1.0, 1.0, 1.0],
            DiagScale::ones(3),
            row(&[1.0, 1.0, 1.0]),
            vec![6.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 10.0, 10.0],
        )
        .unwrap();
        let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.x[0], 1.0);
        assert!((s.x[1] - 2.5).abs() < 1e-12 && (s.x[2] - 2.5).abs() < 1e-12);
    }

    fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, bounded: bool) -> QpProblem {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(-1.0..2.0) } else { 0.0 }).collect())
            .collect();
        let a = SparseMatrix::from_dense_rows(&rows, n).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let q = DiagScale::new((0..n).map(|_| rng.random_range(0.2..4.0)).collect()).unwrap();
        let (lo, hi): (Vec<f64>, Vec<f64>) = if bounded {
            y.iter().map(|v| (v * 0.5, v * 1.6)).unzip()
        } else {
            (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
        };
        // a feasible point inside the box
        let x0: Vec<f64> = (0..n).map(|i| if bounded { rng.random_range(lo[i]..hi[i]) } else { y[i] * 1.3 }).collect();
        let t = a.mul_vec(&x0).unwrap();
        QpProblem::new(y, q, a, t, lo, hi).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unbounded_box_is_closed_form(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_qp(&mut rng, 15, 4, false);
            let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
            let qinv = DiagScale::new(p.qdiag.values().iter().map(|q| 1.0 / q).collect()).unwrap();
            let x = solve_quadratic_exact(&p.y, &qinv, &p.a, &p.t).unwrap();
            for i in 0..p.n_vars() {
                prop_assert!((s.x[i] - x[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn kkt_and_complementarity(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_qp(&mut rng, 25, 5, true);
            let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
            prop_assert!(s.converged);
            prop_assert!(s.kkt_residual <= 1e-8);
            for i in 0..p.n_vars() {
                prop_assert!(p.lower[i] <= s.x[i] && s.x[i] <= p.upper[i]);
                prop_assert!(s.mu_lower[i] >= 0.0 && s.mu_upper[i] >= 0.0);
                prop_assert!((s.mu_lower[i] * (s.x[i] - p.lower[i])).abs() <= 1e-8);
                prop_assert!((s.mu_upper[i] * (p.upper[i] - s.x[i])).abs() <= 1e-8);
            }
            for i in &s.active_lower {
                prop_assert!(!s.active_upper.contains(i));
            }
        }

        #[test]
        fn duplicated_row_leaves_solution_unchanged(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_qp(&mut rng, 20, 4, true);
            let s = qp_solve_box(&p, &SolveOptions::default()).unwrap();
            let k = rng.random_range(0..4);
            let dup = SparseMatrix::vstack(&[&p.a, &p.a.select_rows(&[k]).unwrap()]).unwrap();
            let mut t = p.t.clone();
            t.push(p.t[k]);
            let p2 = QpProblem::new(p.y.clone(), p.qdiag.clone(), dup, t, p.lower.clone(), p.upper.clone()).unwrap();
            let s2 = qp_solve_box(&p2, &SolveOptions::default()).unwrap();
            for i in 0..p.n_vars() {
                prop_assert!((s.x[i] - s2.x[i]).abs() <= 1e-9);
            }
        }
    }
}
