//! Smooth deviance families and their element-wise adjustment maps.
//!
//! Each family measures the distance `delta(x | y, q)` between adjusted
//! values `x` and reference values `y`. Stationarity of a deviance under
//! linear constraints reduces to `x = h[eta | y]` for an element-wise map
//! `h`, which is what the Newton solver iterates on:
//!
//! | family         | `h[eta]`                               | `h'[eta]`                    |
//! |----------------|----------------------------------------|------------------------------|
//! | quadratic      | `y + eta`                              | `1`                          |
//! | poisson        | `y / (1 - eta)`                        | `y / (1 - eta)^2`            |
//! | discrimination | `y exp(eta)`                           | `y exp(eta)`                 |
//! | logistic       | `F(eta + mu) (b_u - b_l) + b_l`        | `f(eta + mu) (b_u - b_l)`    |
//!
//! where `F`/`f` are the logistic distribution and density functions and
//! `mu = F^-1[(y - b_l) / (b_u - b_l)]`.
//!
//! The quadratic deviance is the full form `(x - y)' <q> (x - y)`; its
//! gradient is `2 q (x - y)`, so it carries a stationarity factor of 2 that
//! the other families (gradient `q h^-1(x)`) do not.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::DiagScale;

/// Upper limit applied to Poisson adjustments when clamping is requested.
pub const POISSON_ETA_CAP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DevianceKind {
    Quadratic,
    Poisson,
    Discrimination,
    Logistic,
}

impl DevianceKind {
    /// Ratio between the deviance gradient and `q h^-1(x)`.
    pub fn stationarity_factor(self) -> f64 {
        match self {
            DevianceKind::Quadratic => 2.0,
            _ => 1.0,
        }
    }

    /// Whether the family scales its adjustment by `y`, so `y` must be positive.
    pub fn is_multiplicative(self) -> bool {
        !matches!(self, DevianceKind::Quadratic)
    }
}

impl std::fmt::Display for DevianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DevianceKind::Quadratic => "quadratic",
            DevianceKind::Poisson => "poisson",
            DevianceKind::Discrimination => "discrimination",
            DevianceKind::Logistic => "logistic",
        };
        f.write_str(s)
    }
}

/// A deviance family. Logistic carries element-wise bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum DevianceFamily {
    Quadratic,
    Poisson,
    Discrimination,
    Logistic { lower: Vec<f64>, upper: Vec<f64> },
}

impl DevianceFamily {
    pub fn logistic(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("logistic bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::InvalidInput(format!(
                "logistic bounds need lower < upper, element {i} has [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(DevianceFamily::Logistic { lower, upper })
    }

    pub fn kind(&self) -> DevianceKind {
        match self {
            DevianceFamily::Quadratic => DevianceKind::Quadratic,
            DevianceFamily::Poisson => DevianceKind::Poisson,
            DevianceFamily::Discrimination => DevianceKind::Discrimination,
            DevianceFamily::Logistic { .. } => DevianceKind::Logistic,
        }
    }

    /// Binds the family to reference values, checking the domain and
    /// precomputing the logistic centers.
    pub fn prepare(&self, y: &[f64]) -> Result<PreparedDeviance> {
        let seg = Segment::new(0..y.len(), self, y)?;
        Ok(PreparedDeviance {
            y: y.to_vec(),
            segments: vec![seg],
        })
    }
}

/// Logistic distribution function, exact at `+-inf`.
pub fn logistic_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic density, zero at `+-inf`.
pub fn logistic_pdf(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Logistic quantile; `0 -> -inf`, `1 -> +inf`.
pub fn logistic_quantile(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// How the Poisson map treats `eta >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaGuard {
    Strict,
    Clamp,
}

#[derive(Debug, Clone)]
struct Segment {
    range: Range<usize>,
    kind: DevianceKind,
    // logistic only, indexed relative to `range.start`
    lower: Vec<f64>,
    upper: Vec<f64>,
    width: Vec<f64>,
    mu: Vec<f64>,
}

impl Segment {
    fn new(range: Range<usize>, family: &DevianceFamily, y: &[f64]) -> Result<Self> {
        let ys = &y[range.clone()];
        let kind = family.kind();
        let mut seg = Segment {
            range,
            kind,
            lower: Vec::new(),
            upper: Vec::new(),
            width: Vec::new(),
            mu: Vec::new(),
        };
        match family {
            DevianceFamily::Quadratic => {
                if let Some(i) = ys.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("reference value {} is not finite", seg.range.start + i)));
                }
            }
            DevianceFamily::Poisson | DevianceFamily::Discrimination => {
                if let Some(i) = ys.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "{kind} deviance needs positive reference values, element {} is {}",
                        seg.range.start + i,
                        ys[i]
                    )));
                }
            }
            DevianceFamily::Logistic { lower, upper } => {
                check_len("logistic bounds", ys.len(), lower.len())?;
                check_len("logistic bounds", ys.len(), upper.len())?;
                for (i, &v) in ys.iter().enumerate() {
                    if !(lower[i] < v && v < upper[i]) {
                        return Err(Error::Domain(format!(
                            "logistic deviance needs lower < y < upper, element {} has {} outside ({}, {})",
                            seg.range.start + i,
                            v,
                            lower[i],
                            upper[i]
                        )));
                    }
                    let w = upper[i] - lower[i];
                    seg.lower.push(lower[i]);
                    seg.upper.push(upper[i]);
                    seg.width.push(w);
                    seg.mu.push(logistic_quantile((v - lower[i]) / w));
                }
            }
        }
        Ok(seg)
    }
}

/// An ordered partition of the index space, each part with its own family.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDeviance {
    parts: Vec<(Range<usize>, DevianceFamily)>,
}

/// Builds a mixed deviance from contiguous, ordered, non-overlapping parts
/// starting at index 0.
pub fn make_mixed(parts: Vec<(Range<usize>, DevianceFamily)>) -> Result<MixedDeviance> {
    let mut expect = 0;
    for (k, (r, fam)) in parts.iter().enumerate() {
        if r.start != expect {
            return Err(Error::InvalidInput(format!(
                "partition {k} starts at {} but the previous part ends at {expect} ({})",
                r.start,
                if r.start > expect { "gap" } else { "overlap" }
            )));
        }
        if r.end < r.start {
            return Err(Error::InvalidInput(format!("partition {k} has a reversed range")));
        }
        if let DevianceFamily::Logistic { lower, .. } = fam {
            check_len("logistic partition bounds", r.len(), lower.len())?;
        }
        expect = r.end;
    }
    Ok(MixedDeviance { parts })
}

impl MixedDeviance {
    pub fn single(len: usize, family: DevianceFamily) -> Result<Self> {
        make_mixed(vec![(0..len, family)])
    }

    pub fn len(&self) -> usize {
        self.parts.last().map_or(0, |(r, _)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parts(&self) -> &[(Range<usize>, DevianceFamily)] {
        &self.parts
    }

    pub fn prepare(&self, y: &[f64]) -> Result<PreparedDeviance> {
        check_len("mixed deviance reference values", self.len(), y.len())?;
        let segments = self
            .parts
            .iter()
            .map(|(r, f)| Segment::new(r.clone(), f, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedDeviance {
            y: y.to_vec(),
            segments,
        })
    }

    pub fn h_map(&self, eta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.prepare(y)?.h_map(eta)
    }

    pub fn h_deriv(&self, eta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.prepare(y)?.h_deriv(eta)
    }

    pub fn deviance_value(&self, x: &[f64], y: &[f64], q: &DiagScale) -> Result<f64> {
        self.prepare(y)?.value(x, q.values())
    }
}

/// A deviance bound to its reference values, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedDeviance {
    y: Vec<f64>,
    segments: Vec<Segment>,
}

impl PreparedDeviance {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn reference(&self) -> &[f64] {
        &self.y
    }

    /// Per-element stationarity factors (2 on quadratic parts, 1 elsewhere).
    pub fn stationarity_factors(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.y.len()];
        for s in &self.segments {
            let f = s.kind.stationarity_factor();
            out[s.range.clone()].iter_mut().for_each(|v| *v = f);
        }
        out
    }

    pub fn h_map(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; eta.len()];
        self.map_into(eta, &mut out, EtaGuard::Strict)?;
        Ok(out)
    }

    pub fn h_deriv(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; eta.len()];
        self.deriv_into(eta, &mut out, EtaGuard::Strict)?;
        Ok(out)
    }

    /// Writes `h[eta]` into `out`. Returns the number of Poisson entries
    /// clamped to [`POISSON_ETA_CAP`] (always 0 under [`EtaGuard::Strict`]).
    pub fn map_into(&self, eta: &[f64], out: &mut [f64], guard: EtaGuard) -> Result<usize> {
        check_len("adjustment vector", self.y.len(), eta.len())?;
        check_len("output vector", self.y.len(), out.len())?;
        let mut clamped = 0;
        for s in &self.segments {
            for i in s.range.clone() {
                let (e, y) = (eta[i], self.y[i]);
                if e.is_nan() {
                    return Err(Error::Domain(format!("adjustment {i} is NaN")));
                }
                out[i] = match s.kind {
                    DevianceKind::Quadratic => y + e,
                    DevianceKind::Poisson => {
                        let e = poisson_eta(i, e, guard, &mut clamped)?;
                        y / (1.0 - e)
                    }
                    DevianceKind::Discrimination => y * e.exp(),
                    DevianceKind::Logistic => {
                        let k = i - s.range.start;
                        if e == 0.0 {
                            y
                        } else {
                            logistic_value(e + s.mu[k], s.lower[k], s.upper[k])
                        }
                    }
                };
            }
        }
        Ok(clamped)
    }

    /// Writes `h'[eta]` into `out`.
    pub fn deriv_into(&self, eta: &[f64], out: &mut [f64], guard: EtaGuard) -> Result<usize> {
        check_len("adjustment vector", self.y.len(), eta.len())?;
        check_len("output vector", self.y.len(), out.len())?;
        let mut clamped = 0;
        for s in &self.segments {
            for i in s.range.clone() {
                let (e, y) = (eta[i], self.y[i]);
                if e.is_nan() {
                    return Err(Error::Domain(format!("adjustment {i} is NaN")));
                }
                out[i] = match s.kind {
                    DevianceKind::Quadratic => 1.0,
                    DevianceKind::Poisson => {
                        let e = poisson_eta(i, e, guard, &mut clamped)?;
                        let d = 1.0 - e;
                        y / (d * d)
                    }
                    DevianceKind::Discrimination => y * e.exp(),
                    DevianceKind::Logistic => {
                        let k = i - s.range.start;
                        logistic_pdf(e + s.mu[k]) * s.width[k]
                    }
                };
            }
        }
        Ok(clamped)
    }

    /// `delta(x | y, <q>)` summed over all parts.
    pub fn value(&self, x: &[f64], q: &[f64]) -> Result<f64> {
        check_len("deviance argument", self.y.len(), x.len())?;
        check_len("deviance scale", self.y.len(), q.len())?;
        let mut total = 0.0;
        for s in &self.segments {
            for i in s.range.clone() {
                let (x, y, q) = (x[i], self.y[i], q[i]);
                let term = match s.kind {
                    DevianceKind::Quadratic => (x - y) * (x - y),
                    DevianceKind::Poisson => {
                        if !(x > 0.0) {
                            return Err(Error::Domain(format!("poisson deviance needs x > 0, element {i} is {x}")));
                        }
                        y * (y / x).ln() - y + x
                    }
                    DevianceKind::Discrimination => {
                        if !(x >= 0.0) {
                            return Err(Error::Domain(format!(
                                "discrimination deviance needs x >= 0, element {i} is {x}"
                            )));
                        }
                        xlogx_ratio(x, y) - x + y
                    }
                    DevianceKind::Logistic => {
                        let k = i - s.range.start;
                        let (lo, hi) = (s.lower[k], s.upper[k]);
                        if !(lo <= x && x <= hi) {
                            return Err(Error::Domain(format!(
                                "logistic deviance needs x in [{lo}, {hi}], element {i} is {x}"
                            )));
                        }
                        xlogx_ratio(x - lo, y - lo) + xlogx_ratio(hi - x, hi - y)
                    }
                };
                total += q * term;
            }
        }
        Ok(total)
    }
}

fn poisson_eta(i: usize, e: f64, guard: EtaGuard, clamped: &mut usize) -> Result<f64> {
    if e <= POISSON_ETA_CAP {
        return Ok(e);
    }
    match guard {
        EtaGuard::Clamp => {
            *clamped += 1;
            Ok(POISSON_ETA_CAP)
        }
        EtaGuard::Strict if e < 1.0 => Ok(e),
        EtaGuard::Strict => Err(Error::Domain(format!(
            "poisson adjustment must be < 1, element {i} is {e}"
        ))),
    }
}

// `a ln(a / b)` with the convention `0 ln 0 = 0`
fn xlogx_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

fn logistic_value(z: f64, lower: f64, upper: f64) -> f64 {
    let width = upper - lower;
    // evaluate from the nearer bound so saturation lands exactly on it
    let x = if z >= 0.0 {
        upper - logistic_cdf(-z) * width
    } else {
        lower + logistic_cdf(z) * width
    };
    x.clamp(lower, upper)
}

/// Element-wise `h[eta | y]` for a single family.
pub fn h_map(f: &DevianceFamily, eta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_len("adjustment vector", y.len(), eta.len())?;
    f.prepare(y)?.h_map(eta)
}

/// Element-wise `h'[eta | y]` for a single family.
pub fn h_deriv(f: &DevianceFamily, eta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_len("adjustment vector", y.len(), eta.len())?;
    f.prepare(y)?.h_deriv(eta)
}

/// `delta(x | y, <q>)` for a single family.
pub fn deviance_value(f: &DevianceFamily, x: &[f64], y: &[f64], q: &DiagScale) -> Result<f64> {
    check_len("deviance argument", y.len(), x.len())?;
    f.prepare(y)?.value(x, q.values())
}
