//! Independent reference implementations for the integration tests.
#![allow(dead_code)]

use calpath_core::{QpProblem, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Iterative proportional fitting of `cells` to the given margins.
pub fn ipf(cells: &[Vec<f64>], rows: &[f64], cols: &[f64], tol: f64) -> Vec<Vec<f64>> {
    let mut x = cells.to_vec();
    for _ in 0..100_000 {
        for (i, r) in x.iter_mut().enumerate() {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v *= rows[i] / s);
        }
        let mut worst = 0.0f64;
        for j in 0..cols.len() {
            let s: f64 = x.iter().map(|r| r[j]).sum();
            worst = worst.max((s - cols[j]).abs() / cols[j]);
            x.iter_mut().for_each(|r| r[j] *= cols[j] / s);
        }
        let row_err = x
            .iter()
            .zip(rows)
            .map(|(r, t)| (r.iter().sum::<f64>() - t).abs() / t)
            .fold(0.0f64, f64::max);
        if worst.max(row_err) < tol {
            break;
        }
    }
    x
}

/// Dense KKT solve of `min sum q (x - y)^2` subject to `A x = t`.
pub fn quadratic_kkt(a: &SparseMatrix, t: &[f64], y: &[f64], q: &[f64]) -> Vec<f64> {
    let (m, n) = (a.n_rows(), a.n_cols());
    let ad = a.to_dense();
    let mut k = DMatrix::zeros(n + m, n + m);
    let mut b = DVector::zeros(n + m);
    for i in 0..n {
        k[(i, i)] = 2.0 * q[i];
        b[i] = 2.0 * q[i] * y[i];
    }
    for r in 0..m {
        for c in 0..n {
            k[(n + r, c)] = ad[(r, c)];
            k[(c, n + r)] = ad[(r, c)];
        }
        b[n + r] = t[r];
    }
    let sol = k.lu().solve(&b).expect("nonsingular KKT system");
    sol.as_slice()[..n].to_vec()
}

/// Minimizer of `sum q (x - y)^2` subject to `A x = t`, `x_fixed = v` by
/// pseudo-inverse on the free coordinates. `None` when the face is infeasible.
fn face_solution(p: &QpProblem, fixed: &[Option<f64>]) -> Option<Vec<f64>> {
    let n = p.n_vars();
    let ad = p.a.to_dense();
    let m = ad.nrows();
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let q = p.qdiag.values();
    let mut x: Vec<f64> = (0..n).map(|i| fixed[i].unwrap_or(p.y[i])).collect();
    let ax = &ad * DVector::from_column_slice(&x);
    let rhs = DVector::from_iterator(m, (0..m).map(|r| p.t[r] - ax[r]));
    if !free.is_empty() && m > 0 {
        let af = DMatrix::from_fn(m, free.len(), |r, c| ad[(r, free[c])]);
        let winv = DVector::from_iterator(free.len(), free.iter().map(|&i| 1.0 / (2.0 * q[i])));
        let g = &af * DMatrix::from_diagonal(&winv) * af.transpose();
        let z = g.svd(true, true).solve(&rhs, 1e-12).ok()?;
        let dx = DMatrix::from_diagonal(&winv) * af.transpose() * z;
        for (k, &i) in free.iter().enumerate() {
            x[i] += dx[k];
        }
    }
    let r = &ad * DVector::from_column_slice(&x) - DVector::from_column_slice(&p.t);
    let scale = 1.0 + p.t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r.amax() > 1e-9 * scale {
        return None;
    }
    let slack = 1e-10;
    if (0..n).any(|i| x[i] < p.lower[i] - slack || x[i] > p.upper[i] + slack) {
        return None;
    }
    Some(x)
}

/// Enumerates every free / lower / upper assignment of the bounded
/// variables and returns the best feasible face solution.
pub fn qp_enumerate(p: &QpProblem) -> Option<Vec<f64>> {
    let n = p.n_vars();
    let bounded: Vec<usize> = (0..n).filter(|&i| p.lower[i].is_finite() || p.upper[i].is_finite()).collect();
    assert!(bounded.len() <= 10, "enumeration is exponential in bounded variables");
    let q = p.qdiag.values();
    let objective = |x: &[f64]| -> f64 { (0..n).map(|i| q[i] * (x[i] - p.y[i]).powi(2)).sum() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(bounded.len() as u32);
    for code in 0..total {
        let mut fixed = vec![None; n];
        let mut c = code;
        let mut skip = false;
        for &i in &bounded {
            match c % 3 {
                1 if p.lower[i].is_finite() => fixed[i] = Some(p.lower[i]),
                2 if p.upper[i].is_finite() => fixed[i] = Some(p.upper[i]),
                0 => {}
                _ => skip = true,
            }
            c /= 3;
        }
        if skip {
            continue;
        }
        if let Some(x) = face_solution(p, &fixed) {
            let f = objective(&x);
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Random dense-ish sparse matrix with entries in `[-1, 2)`.
pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> SparseMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| if rng.random_bool(density) { rng.random_range(-1.0..2.0) } else { 0.0 })
                .collect()
        })
        .collect();
    SparseMatrix::from_dense_rows(&rows, n).unwrap()
}

/// Resident-set high-water mark of this process in bytes (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
