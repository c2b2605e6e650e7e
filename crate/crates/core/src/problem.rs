//! Calibration problems and their augmented equality-constrained form.
//!
//! A problem minimizes `delta_1(x | y, Q1) + alpha * delta_2(A2 x | t2, Q2)`
//! subject to `A1 x = t1` (and optionally `b_l <= x <= b_u`). Penalties are
//! folded into the constraint system by introducing `x2 = A2 x` as extra
//! variables centered at the targets:
//!
//! ```text
//!     A = [ A1   0 ]     t = [ t1 ]     y = [ y  ]     Q = < Q1, alpha Q2 >
//!         [ A2  -I ]         [ 0  ]         [ t2 ]
//! ```
//!
//! after which every method is a single deviance minimization under `A x = t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::deviance::{make_mixed, DevianceFamily, DevianceKind, MixedDeviance};
use crate::error::{check_len, Error, Result};
use crate::linalg::{DiagScale, SparseMatrix};

/// A penalized target: a point, or an interval with zero penalty inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Point(f64),
    Interval { lo: f64, hi: f64 },
}

impl Target {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let t = Target::Interval { lo, hi };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Target::Point(v) if v.is_finite() => Ok(()),
            Target::Interval { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            _ => Err(Error::InvalidInput(format!("invalid target {self:?}"))),
        }
    }

    /// The reference value: the point, or the interval midpoint.
    pub fn center(&self) -> f64 {
        match *self {
            Target::Point(v) => v,
            Target::Interval { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self, Target::Interval { .. })
    }

    /// Distance from `value` to the target set.
    pub fn distance(&self, value: f64) -> f64 {
        match *self {
            Target::Point(v) => (value - v).abs(),
            Target::Interval { lo, hi } => (lo - value).max(value - hi).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Quadratic,
    Absolute,
}

/// Element-wise range restriction on the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i]) {
            return Err(Error::InvalidInput(format!(
                "bound {i} has lower {} > upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// Identifier and optional grouping label of a penalized target.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TargetMeta {
    pub id: String,
    pub group: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub base: Vec<f64>,
    pub exact: SparseMatrix,
    pub exact_targets: Vec<f64>,
    pub penalized: SparseMatrix,
    pub targets: Vec<Target>,
    pub weight_scale: DiagScale,
    pub target_scale: DiagScale,
    pub bounds: Option<Bounds>,
    pub weight_deviance: DevianceKind,
    pub penalty: PenaltyKind,
    pub meta: Vec<TargetMeta>,
}

/// Default weight scaling: relative (`1 / y`) for the quadratic deviance,
/// identity otherwise. Zero base weights get unit scale.
pub fn default_weight_scale(kind: DevianceKind, base: &[f64]) -> DiagScale {
    let q = match kind {
        DevianceKind::Quadratic => base.iter().map(|&y| if y > 0.0 { 1.0 / y } else { 1.0 }).collect(),
        _ => vec![1.0; base.len()],
    };
    DiagScale::new(q).unwrap_or_else(|_| DiagScale::ones(base.len()))
}

impl CalibrationProblem {
    /// A problem with only penalized targets, quadratic deviance and
    /// quadratic penalty, and default scales.
    pub fn new(base: Vec<f64>, penalized: SparseMatrix, targets: Vec<Target>) -> Result<Self> {
        let n = base.len();
        let m2 = targets.len();
        let p = Self {
            weight_scale: default_weight_scale(DevianceKind::Quadratic, &base),
            target_scale: DiagScale::ones(m2),
            exact: SparseMatrix::zeros(0, n),
            exact_targets: Vec::new(),
            penalized,
            targets,
            bounds: None,
            weight_deviance: DevianceKind::Quadratic,
            penalty: PenaltyKind::Quadratic,
            meta: (0..m2)
                .map(|j| TargetMeta {
                    id: format!("t{j}"),
                    group: None,
                })
                .collect(),
            base,
        };
        check_len("penalized matrix columns", n, p.penalized.n_cols())?;
        check_len("targets", p.penalized.n_rows(), m2)?;
        Ok(p)
    }

    pub fn with_exact(mut self, a1: SparseMatrix, t1: Vec<f64>) -> Self {
        self.exact = a1;
        self.exact_targets = t1;
        self
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// Sets the weight deviance and resets the weight scale to its default.
    pub fn with_weight_deviance(mut self, kind: DevianceKind) -> Self {
        self.weight_deviance = kind;
        self.weight_scale = default_weight_scale(kind, &self.base);
        self
    }

    pub fn with_penalty(mut self, penalty: PenaltyKind) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_weight_scale(mut self, q: DiagScale) -> Self {
        self.weight_scale = q;
        self
    }

    pub fn with_target_scale(mut self, q: DiagScale) -> Self {
        self.target_scale = q;
        self
    }

    pub fn with_meta(mut self, meta: Vec<TargetMeta>) -> Self {
        self.meta = meta;
        self
    }

    pub fn n_weights(&self) -> usize {
        self.base.len()
    }

    pub fn n_exact(&self) -> usize {
        self.exact.n_rows()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn has_intervals(&self) -> bool {
        self.targets.iter().any(Target::is_interval)
    }

    pub fn target_centers(&self) -> Vec<f64> {
        self.targets.iter().map(Target::center).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_weights();
        if let Some(i) = self.base.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("base weight {i} is not finite")));
        }
        if self.weight_deviance.is_multiplicative() {
            if let Some(i) = self.base.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "{} weight deviance needs positive base weights, weight {i} is {}",
                    self.weight_deviance, self.base[i]
                )));
            }
        }
        check_len("exact constraint columns", n, self.exact.n_cols())?;
        check_len("exact targets", self.exact.n_rows(), self.exact_targets.len())?;
        check_len("penalized constraint columns", n, self.penalized.n_cols())?;
        check_len("penalized targets", self.penalized.n_rows(), self.targets.len())?;
        check_len("weight scale", n, self.weight_scale.len())?;
        check_len("target scale", self.targets.len(), self.target_scale.len())?;
        check_len("target metadata", self.targets.len(), self.meta.len())?;
        if let Some(i) = self.exact_targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("exact target {i} is not finite")));
        }
        for t in &self.targets {
            t.validate()?;
        }
        if self.weight_scale.values().iter().any(|&q| q <= 0.0) {
            return Err(Error::InvalidInput("weight scale entries must be positive".into()));
        }
        if self.target_scale.values().iter().any(|&q| q <= 0.0) {
            return Err(Error::InvalidInput("target scale entries must be positive".into()));
        }
        if self.penalty == PenaltyKind::Quadratic && self.has_intervals() {
            return Err(Error::InvalidInput(
                "interval targets need the absolute penalty; a quadratic penalty collapses them to the midpoint".into(),
            ));
        }
        if let Some(b) = &self.bounds {
            check_len("bounds", n, b.len())?;
            let strict = self.weight_deviance == DevianceKind::Logistic;
            for i in 0..n {
                let (lo, hi, y) = (b.lower[i], b.upper[i], self.base[i]);
                let ok = if strict { lo < y && y < hi } else { lo <= hi };
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "weight {i}: base {y} not inside bounds [{lo}, {hi}]"
                    )));
                }
            }
        } else if self.weight_deviance == DevianceKind::Logistic {
            return Err(Error::InvalidInput("logistic weight deviance needs bounds".into()));
        }
        Ok(())
    }

    /// Family on the weights, carrying bounds for the logistic deviance.
    pub fn weight_family(&self) -> Result<DevianceFamily> {
        Ok(match self.weight_deviance {
            DevianceKind::Quadratic => DevianceFamily::Quadratic,
            DevianceKind::Poisson => DevianceFamily::Poisson,
            DevianceKind::Discrimination => DevianceFamily::Discrimination,
            DevianceKind::Logistic => {
                let b = self
                    .bounds
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("logistic weight deviance needs bounds".into()))?;
                DevianceFamily::logistic(b.lower.clone(), b.upper.clone())?
            }
        })
    }

    /// Weight family on `[0, n)` and a quadratic family on the augmented
    /// target variables.
    pub fn augmented_deviance(&self) -> Result<MixedDeviance> {
        let n = self.n_weights();
        let m2 = self.n_targets();
        let mut parts = vec![(0..n, self.weight_family()?)];
        if m2 > 0 {
            parts.push((n..n + m2, DevianceFamily::Quadratic));
        }
        make_mixed(parts)
    }

    /// Penalized objective `delta_1(x) + alpha * delta_2(A2 x)` with the
    /// configured penalty. Interval targets use the distance to the interval,
    /// which differs from the stacked two-endpoint form by a constant.
    pub fn objective(&self, x: &[f64], alpha: f64) -> Result<f64> {
        let fam = self.weight_family()?;
        let dev = fam.prepare(&self.base)?.value(x, self.weight_scale.values())?;
        let achieved = self.penalized.mul_vec(x)?;
        let q2 = self.target_scale.values();
        let pen: f64 = self
            .targets
            .iter()
            .zip(&achieved)
            .zip(q2)
            .map(|((t, &a), &q)| match self.penalty {
                PenaltyKind::Quadratic => q * (a - t.center()).powi(2),
                PenaltyKind::Absolute => q * t.distance(a),
            })
            .sum();
        Ok(dev + alpha * pen)
    }
}

/// For each row of the expanded penalty block, the original target row.
pub fn expansion_map(p: &CalibrationProblem) -> Vec<usize> {
    p.targets
        .iter()
        .enumerate()
        .flat_map(|(j, t)| {
            let reps = if t.is_interval() { 2 } else { 1 };
            std::iter::repeat_n(j, reps)
        })
        .collect()
}

/// Replaces each interval target by two point targets at its endpoints on
/// duplicated rows sharing the row's scale. Point targets pass through.
pub fn expand_interval_targets(p: &CalibrationProblem) -> Result<CalibrationProblem> {
    if !p.has_intervals() {
        return Ok(p.clone());
    }
    if p.penalty != PenaltyKind::Absolute {
        return Err(Error::InvalidInput(
            "interval targets need the absolute penalty; a quadratic penalty collapses them to the midpoint".into(),
        ));
    }
    let map = expansion_map(p);
    let penalized = p.penalized.select_rows(&map)?;
    let mut targets = Vec::with_capacity(map.len());
    let mut meta = Vec::with_capacity(map.len());
    for (j, t) in p.targets.iter().enumerate() {
        match *t {
            Target::Point(_) => {
                targets.push(*t);
                meta.push(p.meta[j].clone());
            }
            Target::Interval { lo, hi } => {
                for (v, suffix) in [(lo, "lo"), (hi, "hi")] {
                    targets.push(Target::Point(v));
                    meta.push(TargetMeta {
                        id: format!("{}:{suffix}", p.meta[j].id),
                        group: p.meta[j].group.clone(),
                    });
                }
            }
        }
    }
    let q2: Vec<f64> = map.iter().map(|&j| p.target_scale.values()[j]).collect();
    Ok(CalibrationProblem {
        penalized,
        targets,
        target_scale: DiagScale::new(q2)?,
        meta,
        ..p.clone()
    })
}

/// The stacked equality system of a problem at one penalty level.
///
/// `qinv` holds the diagonal of `Q^-1`; a zero entry fixes that component at
/// its reference value.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub a: SparseMatrix,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub qinv: DiagScale,
    pub alpha: f64,
    /// Number of weight variables; target variables follow.
    pub n_weights: usize,
    /// Magnitude used to scale each row's convergence test.
    pub row_scale: Vec<f64>,
}

impl AugmentedSystem {
    /// A plain system `min delta(x | y, Q) s.t. A x = t` with no penalty block.
    pub fn plain(a: SparseMatrix, t: Vec<f64>, y: Vec<f64>, qinv: DiagScale) -> Result<Self> {
        check_len("system targets", a.n_rows(), t.len())?;
        check_len("system reference values", a.n_cols(), y.len())?;
        check_len("system scale", a.n_cols(), qinv.len())?;
        let row_scale = t.iter().map(|v| v.abs()).collect();
        Ok(Self {
            n_weights: y.len(),
            a,
            t,
            y,
            qinv,
            alpha: 1.0,
            row_scale,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.a.n_rows()
    }

    pub fn n_vars(&self) -> usize {
        self.a.n_cols()
    }

    /// Diagonal of `Q` (infinite where frozen).
    pub fn q(&self) -> Vec<f64> {
        self.qinv.values().iter().map(|&v| 1.0 / v).collect()
    }

    /// Zeroes `Q^-1` on `idx`, fixing those components at `y`.
    pub fn freeze_components(&self, idx: &[usize]) -> Result<Self> {
        let mut qinv = self.qinv.values().to_vec();
        for &i in idx {
            if i >= qinv.len() {
                return Err(Error::InvalidInput(format!(
                    "freeze index {i} outside system of size {}",
                    qinv.len()
                )));
            }
            qinv[i] = 0.0;
        }
        Ok(Self {
            qinv: DiagScale::new(qinv)?,
            ..self.clone()
        })
    }

    /// Appends equality rows `x_i = y_i` for `idx`; the constraint-side
    /// equivalent of [`AugmentedSystem::freeze_components`].
    pub fn append_fixing_rows(&self, idx: &[usize]) -> Result<Self> {
        let values: Vec<f64> = idx.iter().map(|&i| self.y.get(i).copied().unwrap_or(f64::NAN)).collect();
        self.append_fixing_rows_at(idx, &values)
    }

    /// Appends equality rows `x_i = v_i`.
    pub fn append_fixing_rows_at(&self, idx: &[usize], values: &[f64]) -> Result<Self> {
        check_len("fixing values", idx.len(), values.len())?;
        let m = self.n_rows();
        let nv = self.n_vars();
        let mut trip: Vec<_> = self.a.triplets().collect();
        let mut t = self.t.clone();
        let mut row_scale = self.row_scale.clone();
        for (k, (&i, &v)) in idx.iter().zip(values).enumerate() {
            if i >= nv {
                return Err(Error::InvalidInput(format!("fixing index {i} outside system of size {nv}")));
            }
            trip.push((m + k, i, 1.0));
            t.push(v);
            row_scale.push(v.abs());
        }
        Ok(Self {
            a: SparseMatrix::from_triplets(m + idx.len(), nv, trip)?,
            t,
            row_scale,
            ..self.clone()
        })
    }
}

/// Turns the point targets at `rows` into intervals `t (1 -+ fraction)`.
pub fn widen_to_intervals(p: &CalibrationProblem, rows: &[usize], fraction: f64) -> Result<CalibrationProblem> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::InvalidInput(format!("interval fraction must be >= 0, got {fraction}")));
    }
    let mut out = p.clone();
    for &j in rows {
        let t = out
            .targets
            .get_mut(j)
            .ok_or_else(|| Error::InvalidInput(format!("target row {j} out of range")))?;
        if let Target::Point(v) = *t {
            let (a, b) = (v * (1.0 - fraction), v * (1.0 + fraction));
            *t = Target::Interval {
                lo: a.min(b),
                hi: a.max(b),
            };
        }
    }
    Ok(out)
}

/// Builds the augmented system at penalty `alpha`.
pub fn build_augmented(p: &CalibrationProblem, alpha: f64) -> Result<AugmentedSystem> {
    build_augmented_rescaled(p, alpha, None)
}

/// Like [`build_augmented`], with the penalty rows of an absolute penalty
/// majorized at `kappa`: `alpha q |u| <= alpha q / (2 kappa) u^2 + const`.
pub fn build_augmented_rescaled(
    p: &CalibrationProblem,
    alpha: f64,
    kappa: Option<&[f64]>,
) -> Result<AugmentedSystem> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be positive and finite, got {alpha}")));
    }
    if p.has_intervals() {
        return Err(Error::InvalidInput(
            "expand interval targets before building the augmented system".into(),
        ));
    }
    p.validate()?;
    let n = p.n_weights();
    let m1 = p.n_exact();
    let m2 = p.n_targets();
    if let Some(k) = kappa {
        check_len("kappa", m2, k.len())?;
    }

    let mut trip: Vec<(usize, usize, f64)> = p.exact.triplets().collect();
    trip.extend(p.penalized.triplets().map(|(i, j, v)| (i + m1, j, v)));
    trip.extend((0..m2).map(|k| (m1 + k, n + k, -1.0)));
    let a = SparseMatrix::from_triplets(m1 + m2, n + m2, trip)?;

    let mut t = p.exact_targets.clone();
    t.extend(std::iter::repeat_n(0.0, m2));

    let centers = p.target_centers();
    let mut y = p.base.clone();
    y.extend_from_slice(&centers);

    let mut qinv: Vec<f64> = p.weight_scale.values().iter().map(|q| 1.0 / q).collect();
    for (k, &q2) in p.target_scale.values().iter().enumerate() {
        let scale = match kappa {
            Some(kap) => alpha * q2 / (2.0 * kap[k]),
            None => alpha * q2,
        };
        qinv.push(1.0 / scale);
    }

    let mut row_scale: Vec<f64> = p.exact_targets.iter().map(|v| v.abs()).collect();
    row_scale.extend(centers.iter().map(|v| v.abs()));

    Ok(AugmentedSystem {
        a,
        t,
        y,
        qinv: DiagScale::new(qinv)?,
        alpha,
        n_weights: n,
        row_scale,
    })
}

/// `max |Q_alpha^-1 - Q_0^-|` where `Q_alpha = [[QA, a^rho QB], [a^rho QB', a QC]]`
/// and `Q_0^- = <QA^-1, 0>`.
pub fn penalized_limit_gap(
    qa: &DMatrix<f64>,
    qb: &DMatrix<f64>,
    qc: &DMatrix<f64>,
    rho: f64,
    alpha: f64,
) -> Result<f64> {
    let (na, nc) = (qa.nrows(), qc.nrows());
    if qa.ncols() != na || qc.ncols() != nc {
        return Err(Error::InvalidInput("Q_A and Q_C must be square".into()));
    }
    if qb.nrows() != na || qb.ncols() != nc {
        return Err(Error::DimensionMismatch {
            context: "Q_B shape",
            expected: na * nc,
            found: qb.nrows() * qb.ncols(),
        });
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let qa_inv = qa
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("Q_A is singular".into()))?;
    if qc.clone().try_inverse().is_none() {
        return Err(Error::InvalidInput("Q_C is singular".into()));
    }
    let n = na + nc;
    let off = alpha.powf(rho);
    let mut q = DMatrix::zeros(n, n);
    q.view_mut((0, 0), (na, na)).copy_from(qa);
    q.view_mut((0, na), (na, nc)).copy_from(&(qb * off));
    q.view_mut((na, 0), (nc, na)).copy_from(&(qb.transpose() * off));
    q.view_mut((na, na), (nc, nc)).copy_from(&(qc * alpha));
    let inv = q
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("Q_alpha is singular".into()))?;
    let mut limit = DMatrix::zeros(n, n);
    limit.view_mut((0, 0), (na, na)).copy_from(&qa_inv);
    Ok((inv - limit).amax())
}
