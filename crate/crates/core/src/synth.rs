//! Synthetic problems for tests, benchmarks and CLI fixtures.
//!
//! The survey-shaped generator mimics a household survey post-stratified on
//! crossed demographics: units carry state, quarter, age, race, gender and
//! Hispanic origin, and target rows are indicator sums over cells. A few
//! cells are left empty (zero-support rows with nonzero targets) and the
//! quarter margins repeat the state totals implied by the detailed cells,
//! so the stacked rows are rank deficient by a known amount.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::Result;
use crate::linalg::SparseMatrix;
use crate::problem::{Bounds, CalibrationProblem, Target, TargetMeta};

pub const STATES: usize = 6;
pub const QUARTERS: usize = 4;
pub const AGES: usize = 6;
/// white, black, asian, native, multiple
pub const RACES5: usize = 5;
const RACE3_NAMES: [&str; 3] = ["white", "black", "other"];

fn race3(r5: usize) -> usize {
    r5.min(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub state: usize,
    pub quarter: usize,
    pub age: usize,
    pub race5: usize,
    pub female: bool,
    pub hispanic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveySpec {
    pub n_units: usize,
    pub seed: u64,
    /// `(state, age, race3)` cells left without sampled units.
    pub empty_cells: Vec<(usize, usize, usize)>,
    /// Target value given to each empty cell.
    pub empty_cell_target: f64,
    /// Multiplier on the black and other race targets, so detailed cells
    /// disagree with the margins they sum to.
    pub race_shift: f64,
    /// Bounds are `y / bound_ratio ..= y * bound_ratio`.
    pub bound_ratio: f64,
}

impl Default for SurveySpec {
    fn default() -> Self {
        Self {
            n_units: 5791,
            seed: 20_240_601,
            empty_cells: vec![(0, 5, 2), (2, 4, 1), (3, 5, 1), (5, 0, 2)],
            empty_cell_target: 40.0,
            race_shift: 1.06,
            bound_ratio: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurveyFixture {
    pub problem: CalibrationProblem,
    pub units: Vec<Unit>,
    /// Weights the targets were generated from (before the race shift).
    pub true_weights: Vec<f64>,
    /// Penalized rows that are identically zero.
    pub zero_rows: Vec<usize>,
    /// Dependencies injected beyond the zero rows.
    pub injected_dependencies: usize,
}

impl SurveyFixture {
    pub fn expected_deficiency(&self) -> usize {
        self.zero_rows.len() + self.injected_dependencies
    }
}

struct RowBuilder {
    triplets: Vec<(usize, usize, f64)>,
    meta: Vec<TargetMeta>,
    members: Vec<Vec<usize>>,
}

impl RowBuilder {
    fn push(&mut self, id: String, group: &str, units: &[Unit], pred: impl Fn(&Unit) -> bool) {
        let r = self.meta.len();
        let members: Vec<usize> = units.iter().enumerate().filter(|(_, u)| pred(u)).map(|(i, _)| i).collect();
        self.triplets.extend(members.iter().map(|&i| (r, i, 1.0)));
        self.members.push(members);
        self.meta.push(TargetMeta {
            id,
            group: Some(group.to_string()),
        });
    }
}

fn draw_units(spec: &SurveySpec, rng: &mut ChaCha8Rng) -> Vec<Unit> {
    let race_w = [0.62, 0.13, 0.06, 0.02, 0.17];
    let races: Vec<usize> = (0..RACES5).collect();
    (0..spec.n_units)
        .map(|_| {
            let state = rng.random_range(0..STATES);
            let age = rng.random_range(0..AGES);
            let mut race5 = *races.choose_weighted(rng, |&r| race_w[r]).expect("weights are positive");
            while spec.empty_cells.contains(&(state, age, race3(race5))) {
                race5 = (race5 + 1) % RACES5;
            }
            Unit {
                state,
                quarter: rng.random_range(0..QUARTERS),
                age,
                race5,
                female: rng.random_bool(0.52),
                hispanic: rng.random_bool(if race5 == 4 { 0.4 } else { 0.15 }),
            }
        })
        .collect()
}

/// Survey-shaped problem with point targets, quadratic deviance and
/// penalty, and bounds `y / r ..= y r`. Use [`crate::path::Method::configure`]
/// to switch presets.
pub fn survey_problem(spec: &SurveySpec) -> Result<SurveyFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let units = draw_units(spec, &mut rng);
    let n = units.len();
    let ln = LogNormal::new(50f64.ln(), 0.45).expect("valid lognormal");
    let base: Vec<f64> = (0..n).map(|_| ln.sample(&mut rng)).collect();
    // smooth adjustment by cell plus unit noise, well inside the bounds
    let true_weights: Vec<f64> = units
        .iter()
        .zip(&base)
        .map(|(u, &y)| {
            let cell = 1.0 + 0.15 * ((u.state * 7 + u.age * 3 + u.race5) as f64).sin();
            y * cell * (1.0 + 0.1 * (rng.random::<f64>() - 0.5))
        })
        .collect();

    let mut b = RowBuilder {
        triplets: Vec::new(),
        meta: Vec::new(),
        members: Vec::new(),
    };
    let mut zero_rows = Vec::new();
    for s in 0..STATES {
        for a in 0..AGES {
            for r in 0..3 {
                if spec.empty_cells.contains(&(s, a, r)) {
                    zero_rows.push(b.meta.len());
                }
                let name = RACE3_NAMES[r];
                b.push(format!("state{s}:age{a}:{name}"), "state_age_race", &units, |u| {
                    u.state == s && u.age == a && race3(u.race5) == r
                });
            }
        }
    }
    // quarter margins sum to the state totals: one dependency per state
    for s in 0..STATES {
        for q in 0..QUARTERS {
            b.push(format!("state{s}:q{q}"), "state_quarter", &units, |u| u.state == s && u.quarter == q);
        }
    }
    for s in 0..STATES {
        for (r, name) in [(2, "asian"), (3, "native")] {
            b.push(format!("state{s}:{name}"), "state_race5", &units, |u| u.state == s && u.race5 == r);
        }
    }
    for s in 0..STATES {
        for a in 0..AGES {
            b.push(format!("state{s}:age{a}:female"), "state_age_sex", &units, |u| {
                u.state == s && u.age == a && u.female
            });
        }
    }
    for s in 0..STATES {
        for a in 0..AGES {
            b.push(format!("state{s}:age{a}:hisp"), "state_age_hisp", &units, |u| {
                u.state == s && u.age == a && u.hispanic
            });
        }
    }
    for a in 0..AGES {
        for r in 0..4 {
            b.push(format!("age{a}:race5_{r}:female"), "age_race5_sex", &units, |u| {
                u.age == a && u.race5 == r && u.female
            });
        }
    }
    for q in 0..QUARTERS {
        b.push(format!("q{q}:hisp:female"), "quarter_hisp_sex", &units, |u| {
            u.quarter == q && u.hispanic && u.female
        });
    }
    for s in 0..STATES {
        for r in 0..2 {
            let name = RACE3_NAMES[r];
            b.push(format!("state{s}:{name}:hisp"), "state_race_hisp", &units, |u| {
                u.state == s && race3(u.race5) == r && u.hispanic
            });
        }
    }
    // one age left out of each quarter so these do not sum to a quarter total
    for (a, q) in (0..AGES - 1).map(|a| (a, 0)).chain([(0, 1)]) {
        b.push(format!("age{a}:q{q}"), "age_quarter", &units, |u| u.age == a && u.quarter == q);
    }
    for q in 0..QUARTERS {
        b.push(format!("q{q}:native:hisp"), "quarter_race5_hisp", &units, |u| {
            u.quarter == q && u.race5 == 3 && u.hispanic
        });
    }
    b.push("multi:hisp".into(), "race_hisp", &units, |u| u.race5 == 4 && u.hispanic);

    let m = b.meta.len();
    let targets: Vec<Target> = b
        .members
        .iter()
        .zip(&b.meta)
        .enumerate()
        .map(|(j, (mem, meta))| {
            if zero_rows.contains(&j) {
                return Target::Point(spec.empty_cell_target);
            }
            let total: f64 = mem.iter().map(|&i| true_weights[i]).sum();
            let shifted = meta.id.contains(":black") || meta.id.contains(":other");
            Target::Point(if shifted { total * spec.race_shift } else { total })
        })
        .collect();
    let a2 = SparseMatrix::from_triplets(m, n, b.triplets)?;
    let bounds = Bounds::new(
        base.iter().map(|y| y / spec.bound_ratio).collect(),
        base.iter().map(|y| y * spec.bound_ratio).collect(),
    )?;
    let problem = CalibrationProblem::new(base, a2, targets)?.with_bounds(bounds).with_meta(b.meta);
    Ok(SurveyFixture {
        problem,
        units,
        true_weights,
        zero_rows,
        injected_dependencies: STATES,
    })
}

/// Unit-level problem for an `r x c` table: one unit per cell with base
/// weight `cells[i][j]`, targets are the row then column margins.
pub fn contingency_problem(cells: &[Vec<f64>], row_margins: &[f64], col_margins: &[f64]) -> Result<CalibrationProblem> {
    let r = cells.len();
    let c = cells.first().map_or(0, Vec::len);
    let mut trip = Vec::with_capacity(2 * r * c);
    let mut base = Vec::with_capacity(r * c);
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let k = i * c + j;
            base.push(v);
            trip.push((i, k, 1.0));
            trip.push((r + j, k, 1.0));
        }
    }
    let a = SparseMatrix::from_triplets(r + c, r * c, trip)?;
    let targets = row_margins.iter().chain(col_margins).map(|&t| Target::Point(t)).collect();
    let meta = (0..r)
        .map(|i| TargetMeta {
            id: format!("row{i}"),
            group: Some("row".into()),
        })
        .chain((0..c).map(|j| TargetMeta {
            id: format!("col{j}"),
            group: Some("col".into()),
        }))
        .collect();
    Ok(CalibrationProblem::new(base, a, targets)?.with_meta(meta))
}

/// The 2x2 raking fixture: cells `[[40, 10], [20, 30]]` raked to row
/// margins `(60, 40)` and column margins `(55, 45)`.
pub fn raking_2x2() -> Result<CalibrationProblem> {
    contingency_problem(&[vec![40.0, 10.0], vec![20.0, 30.0]], &[60.0, 40.0], &[55.0, 45.0])
}

/// Three units with bounds `[0.5, 2]`. The total of the first two has
/// target 5, beyond the largest achievable 4, so both saturate at the upper
/// bound; the third unit carries two copies of one row with conflicting
/// targets 1.5 and 1.75. As the penalty grows the duplicate rows make the
/// multiplier system singular to working precision and the path breaks
/// down a little past `alpha = 2^32`.
pub fn boundary_saturation() -> Result<CalibrationProblem> {
    let rows = [vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
    let a = SparseMatrix::from_dense_rows(&rows, 3)?;
    let targets = vec![Target::Point(5.0), Target::Point(1.5), Target::Point(1.75)];
    Ok(CalibrationProblem::new(vec![1.0; 3], a, targets)?.with_bounds(Bounds::new(vec![0.5; 3], vec![2.0; 3])?))
}
