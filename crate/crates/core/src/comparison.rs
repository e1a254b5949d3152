//! Comparison-theorem hypotheses, balanced drivers, dominance and arbitrage,
//! the two jump-driven counterexamples and the essential range of a claim.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::chain::{path_rng, reachable_states, simulate_paths, RateModel};
use crate::driver::{check_flags, eval_with, Driver, ZNormDriver, ZDriftDriver};
use crate::error::{Error, Result};
use crate::psi::{canonical_from_jumps, row_seminorms_sq, PsiMatrix};
use crate::solver::{forward_sde, solve_on, ValueGrid, ZQuery};

pub use crate::psi::epsilon_threshold;

/// Tolerance for the conclusion `u¹ ≥ u²` on the grid.
pub const CONCLUSION_TOL: f64 = 1e-8;
/// Values closer than this count as equal in strictness bookkeeping.
pub const STRICT_TOL: f64 = 1e-9;
/// Slack for pointwise driver inequalities.
const POINT_TOL: f64 = 1e-12;

/// Which comparison result is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComparisonKind {
    /// `K = 1`; jump-term premise implies `F¹(Z¹) - F¹(Z²) ≥ -δZ A X`.
    Scalar,
    /// Each component on its own row of `Z`, by the scalar criterion.
    VectorRowwise,
    /// Component `j` of `F¹(Z¹) - F¹(Z²)` is nonnegative whenever no jump of
    /// row `j` of `δZ` is significantly negative (measured by the full `‖δZ‖`).
    VectorJoint,
    /// `F¹` ignores `Z`; a drop of component `i` under the `Y` gap needs a
    /// large gap in `i` or a significantly negative gap elsewhere.
    VectorZFree,
}

impl ComparisonKind {
    pub const ALL: [ComparisonKind; 4] = [
        ComparisonKind::Scalar,
        ComparisonKind::VectorRowwise,
        ComparisonKind::VectorJoint,
        ComparisonKind::VectorZFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComparisonKind::Scalar => "scalar",
            ComparisonKind::VectorRowwise => "rowwise",
            ComparisonKind::VectorJoint => "joint",
            ComparisonKind::VectorZFree => "z-free",
        }
    }

    /// Whether strict comparison is tracked per component (otherwise only for
    /// the whole vector).
    pub fn componentwise_strictness(self) -> bool {
        !matches!(self, ComparisonKind::VectorJoint)
    }
}

impl fmt::Display for ComparisonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assumption {
    TerminalOrdering,
    DriverOrdering,
    JumpDrift,
    Structure,
}

impl Assumption {
    pub fn name(self) -> &'static str {
        match self {
            Assumption::TerminalOrdering => "terminal ordering",
            Assumption::DriverOrdering => "driver ordering",
            Assumption::JumpDrift => "jump/drift implication",
            Assumption::Structure => "driver structure",
        }
    }
}

/// First point at which a check fails.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub time: f64,
    pub state: usize,
    pub component: usize,
    /// Target state or other index involved, when relevant.
    pub index: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub note: String,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t = {}, state {}, component {}: {} (lhs = {:e}, rhs = {:e})",
            self.time,
            self.state + 1,
            self.component + 1,
            self.note,
            self.lhs,
            self.rhs
        )?;
        if let Some(j) = self.index {
            write!(f, " [index {}]", j + 1)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionVerdict {
    pub assumption: Assumption,
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConclusionCheck {
    /// `u¹ ≥ u² - 1e-8` everywhere on the grid.
    pub holds: bool,
    pub min_gap: f64,
    pub witness: Option<Witness>,
    /// Wherever `u¹ = u²` (within `1e-9`), the terminal values agree on every
    /// state reachable from there.
    pub strictness_consistent: bool,
    pub strictness_witness: Option<Witness>,
    pub equal_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub kind: ComparisonKind,
    pub eps: f64,
    pub assumptions: Vec<AssumptionVerdict>,
    pub conclusion: Option<ConclusionCheck>,
}

impl ComparisonReport {
    pub fn all_assumptions_pass(&self) -> bool {
        self.assumptions.iter().all(|a| a.passed)
    }

    pub fn verdict(&self, a: Assumption) -> Option<&AssumptionVerdict> {
        self.assumptions.iter().find(|v| v.assumption == a)
    }

    /// Whether the hypotheses of a balanced driver hold: the jump/drift
    /// implication and the structural condition.
    pub fn balanced_part_passes(&self) -> bool {
        self.assumptions
            .iter()
            .filter(|v| matches!(v.assumption, Assumption::JumpDrift | Assumption::Structure))
            .all(|v| v.passed)
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonOptions {
    /// Working `ε`; defaults to half of [`epsilon_threshold`].
    pub eps: Option<f64>,
    pub check_conclusion: bool,
    /// Also sample this many random canonical `Z` pairs per piece and state.
    pub exhaustive_samples: usize,
    pub seed: u64,
    /// Inputs per structural spot check.
    pub structure_samples: usize,
    /// Only evaluate the jump/drift implication and structure.
    pub balanced_only: bool,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            eps: None,
            check_conclusion: true,
            exhaustive_samples: 0,
            seed: 0,
            structure_samples: 32,
            balanced_only: false,
        }
    }
}

/// One `(t, X_{t-})` point with both solutions' `Y_{t-}` and `Z_t`.
#[derive(Clone, Copy, Debug)]
pub struct PointInput<'a> {
    pub t: f64,
    pub piece: usize,
    pub psi: &'a PsiMatrix,
    pub y1: &'a DVector<f64>,
    pub y2: &'a DVector<f64>,
    pub z1: &'a DMatrix<f64>,
    pub z2: &'a DMatrix<f64>,
}

fn slack(a: f64, b: f64) -> f64 {
    POINT_TOL * (1.0 + a.abs() + b.abs())
}

/// Driver ordering `F¹(Y², Z²) ≥ F²(Y², Z²)` at one point.
pub fn driver_ordering_point(f1: &dyn Driver, f2: &dyn Driver, p: &PointInput<'_>) -> Option<Witness> {
    let a = eval_with(f1, p.t, p.piece, p.psi, p.y2, p.z2);
    let b = eval_with(f2, p.t, p.piece, p.psi, p.y2, p.z2);
    (0..a.len()).find(|&k| a[k] < b[k] - slack(a[k], b[k])).map(|k| Witness {
        time: p.t,
        state: p.psi.state(),
        component: k,
        index: None,
        lhs: a[k],
        rhs: b[k],
        note: "F1(Y2, Z2) < F2(Y2, Z2)".into(),
    })
}

/// Premise of the jump/drift implication: `a_j δz (e_j - x) ≥ -ε n` for all
/// `j`. Returns the first `j` breaking it.
fn premise_breaker(psi: &PsiMatrix, dz_row: &[f64], n: f64, eps: f64) -> Option<usize> {
    let s = psi.state();
    psi.active_targets()
        .into_iter()
        .find(|&j| psi.rates()[j] * (dz_row[j] - dz_row[s]) < -eps * n)
}

/// The theorem-specific implication at one point.
pub fn jump_drift_point(kind: ComparisonKind, f1: &dyn Driver, p: &PointInput<'_>, eps: f64) -> Option<Witness> {
    let state = p.psi.state();
    let witness = |component: usize, index: Option<usize>, lhs: f64, rhs: f64, note: &str| Witness {
        time: p.t,
        state,
        component,
        index,
        lhs,
        rhs,
        note: note.into(),
    };
    match kind {
        ComparisonKind::Scalar | ComparisonKind::VectorRowwise | ComparisonKind::VectorJoint => {
            let dz = p.z1 - p.z2;
            let row_norms = row_seminorms_sq(&dz, p.psi);
            let full_norm = row_norms.sum().sqrt();
            let d = eval_with(f1, p.t, p.piece, p.psi, p.y2, p.z1) - eval_with(f1, p.t, p.piece, p.psi, p.y2, p.z2);
            let dza = &dz * p.psi.rates();
            for k in 0..dz.nrows() {
                let row: Vec<f64> = dz.row(k).iter().copied().collect();
                if kind == ComparisonKind::VectorJoint {
                    if premise_breaker(p.psi, &row, full_norm, eps).is_none() && d[k] < -slack(d[k], 0.0) {
                        return Some(witness(k, None, d[k], 0.0, "F1 difference negative with no large negative jump"));
                    }
                    continue;
                }
                let n = row_norms[k].sqrt();
                if premise_breaker(p.psi, &row, n, eps).is_some() {
                    continue;
                }
                // need d ≥ -δz A X, strictly unless ‖δz‖ = 0
                let lhs = d[k] + dza[k];
                if lhs < -slack(d[k], dza[k]) {
                    return Some(witness(k, None, d[k], -dza[k], "F1 difference below -dZ A X"));
                }
                if n > STRICT_TOL && lhs <= 0.0 {
                    return Some(witness(k, None, d[k], -dza[k], "equality with nonzero dZ"));
                }
            }
            None
        }
        ComparisonKind::VectorZFree => {
            let dy = p.y1 - p.y2;
            let norm = dy.norm();
            let a = eval_with(f1, p.t, p.piece, p.psi, p.y1, p.z2);
            let b = eval_with(f1, p.t, p.piece, p.psi, p.y2, p.z2);
            for i in 0..dy.len() {
                if !(a[i] < b[i] - slack(a[i], b[i])) {
                    continue;
                }
                let own = dy[i].abs() > eps * norm;
                let other = (0..dy.len()).any(|j| dy[j] < -eps * norm);
                if !own && !other {
                    return Some(witness(i, None, a[i], b[i], "F1 drops under a small, nonnegative Y gap"));
                }
            }
            None
        }
    }
}

fn structure_check(kind: ComparisonKind, f1: &dyn Driver, f2: &dyn Driver, model: &RateModel, n: usize, seed: u64) -> Option<Witness> {
    let fail = |note: String| Witness {
        time: 0.0,
        state: 0,
        component: 0,
        index: None,
        lhs: 0.0,
        rhs: 0.0,
        note,
    };
    let spot = |d: &dyn Driver, s: u64| check_flags(d, model, n, s).err().map(|e| fail(e.to_string()));
    match kind {
        ComparisonKind::Scalar => {
            if f1.dim() != 1 || f2.dim() != 1 {
                return Some(fail("scalar comparison needs K = 1".into()));
            }
            None
        }
        ComparisonKind::VectorRowwise => {
            for (label, d, s) in [("F1", f1, seed), ("F2", f2, seed ^ 1)] {
                if !d.flags().row_separable {
                    return Some(fail(format!("{label} is not declared row-separable")));
                }
                if let Some(w) = spot(d, s) {
                    return Some(w);
                }
            }
            None
        }
        ComparisonKind::VectorJoint => {
            if !f1.flags().y_separable {
                return Some(fail("F1 is not declared y-separable".into()));
            }
            spot(f1, seed)
        }
        ComparisonKind::VectorZFree => {
            if f1.flags().depends_on_z {
                return Some(fail("F1 depends on Z".into()));
            }
            spot(f1, seed)
        }
    }
}

fn same_grid(a: &ValueGrid, b: &ValueGrid) -> Result<()> {
    let same_model = std::sync::Arc::ptr_eq(a.model(), b.model())
        || (a.model().pieces() == b.model().pieces() && a.model().num_states() == b.model().num_states());
    if !same_model || a.times() != b.times() || a.dim() != b.dim() {
        return Err(Error::InvalidParameter {
            name: "solutions",
            reason: "solutions do not share model, dimension and time grid".into(),
        });
    }
    Ok(())
}

/// Resolves the working `ε` for a model, rejecting values at or above the
/// threshold.
pub fn working_eps(model: &RateModel, eps: Option<f64>) -> Result<f64> {
    let bound = epsilon_threshold(model.epsilon_r(), model.num_states())?;
    match eps {
        None => Ok(0.5 * bound),
        Some(e) if e > 0.0 && e < bound => Ok(e),
        Some(e) => Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("{e} is outside (0, {bound})"),
        }),
    }
}

fn point_at(grid: &ValueGrid, k: usize, state: usize) -> (f64, usize, DVector<f64>, DMatrix<f64>) {
    let t = grid.times()[k];
    let piece = grid.model().piece_index(t);
    let y = grid.values()[k].column(state).into_owned();
    let z = grid.z_at(t, state).expect("grid time");
    (t, piece, y, z)
}

fn psi_at_piece(model: &RateModel, piece: usize, state: usize) -> PsiMatrix {
    PsiMatrix::new(state, model.pieces()[piece].generator.column(state).into_owned()).expect("validated model")
}

/// Random canonical `Z` pair; about half the draws have only nonnegative
/// jumps in `δZ`, so the premise is exercised.
fn random_z_pair(rng: &mut ChaCha8Rng, psi: &PsiMatrix, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = psi.dim();
    let d2 = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let positive = rng.random_bool(0.5);
    let dd = DMatrix::from_fn(k, n, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        if positive {
            v.abs()
        } else {
            v
        }
    });
    let z2 = canonical_from_jumps(psi, &d2);
    let z1 = canonical_from_jumps(psi, &(d2 + dd));
    (z1, z2)
}

/// Checks the comparison hypotheses on every grid time and state, using the
/// realized `Z` of the two solutions, and optionally the conclusion.
pub fn check_comparison(
    kind: ComparisonKind,
    sol1: &ValueGrid,
    sol2: &ValueGrid,
    options: &ComparisonOptions,
) -> Result<ComparisonReport> {
    same_grid(sol1, sol2)?;
    let model = sol1.model().clone();
    let eps = working_eps(&model, options.eps)?;
    let (f1, f2) = (sol1.driver().as_ref(), sol2.driver().as_ref());
    if kind == ComparisonKind::Scalar && sol1.dim() != 1 {
        return Err(Error::ModelShape(format!("scalar comparison needs K = 1, got K = {}", sol1.dim())));
    }
    let n = model.num_states();
    let mut assumptions = Vec::new();

    if !options.balanced_only {
        let (g1, g2) = (sol1.terminal(), sol2.terminal());
        let terminal = (0..n)
            .flat_map(|i| (0..g1.nrows()).map(move |k| (i, k)))
            .find(|&(i, k)| g1[(k, i)] < g2[(k, i)])
            .map(|(i, k)| Witness {
                time: sol1.end(),
                state: i,
                component: k,
                index: None,
                lhs: g1[(k, i)],
                rhs: g2[(k, i)],
                note: "g1 < g2".into(),
            });
        assumptions.push(AssumptionVerdict {
            assumption: Assumption::TerminalOrdering,
            passed: terminal.is_none(),
            witness: terminal,
        });
    }

    let mut ordering = None;
    let mut implication = None;
    'grid: for k in 0..sol1.times().len() {
        for i in 0..n {
            if sol1.absorbing()[i] || sol2.absorbing()[i] {
                continue;
            }
            let (t, piece, y1, z1) = point_at(sol1, k, i);
            let (_, _, y2, z2) = point_at(sol2, k, i);
            let psi = psi_at_piece(&model, piece, i);
            let p = PointInput {
                t,
                piece,
                psi: &psi,
                y1: &y1,
                y2: &y2,
                z1: &z1,
                z2: &z2,
            };
            if ordering.is_none() && !options.balanced_only {
                ordering = driver_ordering_point(f1, f2, &p);
            }
            if implication.is_none() {
                implication = jump_drift_point(kind, f1, &p, eps);
            }
            if implication.is_some() && (ordering.is_some() || options.balanced_only) {
                break 'grid;
            }
        }
    }
    if implication.is_none() && options.exhaustive_samples > 0 {
        let mut rng = path_rng(options.seed, 0x5eed);
        'pieces: for piece in 0..model.pieces().len() {
            let t = model.pieces()[piece].end;
            for i in 0..n {
                let psi = psi_at_piece(&model, piece, i);
                for _ in 0..options.exhaustive_samples {
                    let (z1, z2) = random_z_pair(&mut rng, &psi, sol1.dim());
                    let y2 = DVector::from_fn(sol1.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let y1 = &y2 + DVector::from_fn(sol1.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let p = PointInput {
                        t,
                        piece,
                        psi: &psi,
                        y1: &y1,
                        y2: &y2,
                        z1: &z1,
                        z2: &z2,
                    };
                    if let Some(mut w) = jump_drift_point(kind, f1, &p, eps) {
                        w.note = format!("{} (sampled Z pair)", w.note);
                        implication = Some(w);
                        break 'pieces;
                    }
                }
            }
        }
    }
    if !options.balanced_only {
        assumptions.push(AssumptionVerdict {
            assumption: Assumption::DriverOrdering,
            passed: ordering.is_none(),
            witness: ordering,
        });
    }
    assumptions.push(AssumptionVerdict {
        assumption: Assumption::JumpDrift,
        passed: implication.is_none(),
        witness: implication,
    });
    let structure = structure_check(kind, f1, f2, &model, options.structure_samples, options.seed);
    assumptions.push(AssumptionVerdict {
        assumption: Assumption::Structure,
        passed: structure.is_none(),
        witness: structure,
    });

    let conclusion = if options.check_conclusion && !options.balanced_only {
        Some(conclusion_check(kind, sol1, sol2))
    } else {
        None
    };
    Ok(ComparisonReport {
        kind,
        eps,
        assumptions,
        conclusion,
    })
}

pub(crate) fn conclusion_check(kind: ComparisonKind, sol1: &ValueGrid, sol2: &ValueGrid) -> ConclusionCheck {
    let model = sol1.model();
    let n = model.num_states();
    let kdim = sol1.dim();
    let (g1, g2) = (sol1.terminal(), sol2.terminal());
    let mut min_gap = f64::INFINITY;
    let mut witness = None;
    let mut strictness_witness = None;
    let mut equal_points = 0;
    for (idx, &t) in sol1.times().iter().enumerate() {
        let gap = &sol1.values()[idx] - &sol2.values()[idx];
        for i in 0..n {
            for k in 0..kdim {
                if gap[(k, i)] < min_gap {
                    min_gap = gap[(k, i)];
                    if min_gap < -CONCLUSION_TOL {
                        witness = Some(Witness {
                            time: t,
                            state: i,
                            component: k,
                            index: None,
                            lhs: sol1.values()[idx][(k, i)],
                            rhs: sol2.values()[idx][(k, i)],
                            note: "u1 < u2".into(),
                        });
                    }
                }
            }
            if idx + 1 == sol1.times().len() || strictness_witness.is_some() {
                continue;
            }
            let equal: Vec<usize> = if kind.componentwise_strictness() {
                (0..kdim).filter(|&k| gap[(k, i)].abs() <= STRICT_TOL).collect()
            } else if (0..kdim).all(|k| gap[(k, i)].abs() <= STRICT_TOL) {
                (0..kdim).collect()
            } else {
                vec![]
            };
            if equal.is_empty() {
                continue;
            }
            equal_points += 1;
            let reach = reachable_states(model, i, t, sol1.end());
            'check: for j in (0..n).filter(|&j| reach[j]) {
                for &k in &equal {
                    if (g1[(k, j)] - g2[(k, j)]).abs() > STRICT_TOL {
                        strictness_witness = Some(Witness {
                            time: t,
                            state: i,
                            component: k,
                            index: Some(j),
                            lhs: g1[(k, j)],
                            rhs: g2[(k, j)],
                            note: "u1 = u2 but terminal values differ on a reachable state".into(),
                        });
                        break 'check;
                    }
                }
            }
        }
    }
    ConclusionCheck {
        holds: witness.is_none(),
        min_gap,
        witness,
        strictness_consistent: strictness_witness.is_none(),
        strictness_witness,
        equal_points,
    }
}

/// Re-evaluates a reported witness directly; `true` if it is a violation.
pub fn confirm_witness(
    kind: ComparisonKind,
    assumption: Assumption,
    sol1: &ValueGrid,
    sol2: &ValueGrid,
    eps: f64,
    w: &Witness,
) -> Result<bool> {
    let model = sol1.model();
    match assumption {
        Assumption::TerminalOrdering => Ok(sol1.terminal()[(w.component, w.state)] < sol2.terminal()[(w.component, w.state)]),
        Assumption::Structure => Ok(structure_check(kind, sol1.driver().as_ref(), sol2.driver().as_ref(), model, 32, 0).is_some()),
        Assumption::DriverOrdering | Assumption::JumpDrift => {
            let k = sol1.index_of(w.time)?;
            let (t, piece, y1, z1) = point_at(sol1, k, w.state);
            let (_, _, y2, z2) = point_at(sol2, k, w.state);
            let psi = psi_at_piece(model, piece, w.state);
            let p = PointInput {
                t,
                piece,
                psi: &psi,
                y1: &y1,
                y2: &y2,
                z1: &z1,
                z2: &z2,
            };
            Ok(if assumption == Assumption::DriverOrdering {
                driver_ordering_point(sol1.driver().as_ref(), sol2.driver().as_ref(), &p).is_some()
            } else {
                jump_drift_point(kind, sol1.driver().as_ref(), &p, eps).is_some()
            })
        }
    }
}

/// Comparison kinds whose hypotheses can apply to drivers of dimension `k`.
pub fn applicable_kinds(k: usize) -> Vec<ComparisonKind> {
    if k == 1 {
        vec![ComparisonKind::Scalar, ComparisonKind::VectorZFree]
    } else {
        vec![
            ComparisonKind::VectorRowwise,
            ComparisonKind::VectorJoint,
            ComparisonKind::VectorZFree,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct BalancedReport {
    /// No sampled pair violated every applicable kind.
    pub balanced: bool,
    pub samples_checked: usize,
    /// Sample index and the failing report of the first applicable kind.
    pub witnesses: Vec<(usize, ComparisonReport)>,
}

/// Terminal-condition pairs `(g¹, g²)`; `None` when the family is exhausted.
pub type PairSampler<'a> = dyn FnMut(&mut ChaCha8Rng) -> Option<(DMatrix<f64>, DMatrix<f64>)> + 'a;

/// Sampling-based balancedness check of `driver` on `]s, t]`.
#[allow(clippy::too_many_arguments)]
pub fn balanced_check(
    driver: &std::sync::Arc<dyn Driver>,
    sampler: &mut PairSampler<'_>,
    model: &std::sync::Arc<RateModel>,
    s: f64,
    t: f64,
    n_samples: usize,
    seed: u64,
    step: f64,
) -> Result<BalancedReport> {
    let mut rng = path_rng(seed, 0);
    let mut witnesses = Vec::new();
    let options = ComparisonOptions {
        balanced_only: true,
        check_conclusion: false,
        seed,
        ..Default::default()
    };
    for idx in 0..n_samples {
        let Some((g1, g2)) = sampler(&mut rng) else {
            return Err(Error::SamplerExhausted(idx));
        };
        let sol1 = solve_on(model, driver, &g1, s, t, step)?;
        let sol2 = solve_on(model, driver, &g2, s, t, step)?;
        let mut first_failure = None;
        let mut any_pass = false;
        for kind in applicable_kinds(driver.dim()) {
            let report = check_comparison(kind, &sol1, &sol2, &options)?;
            if report.balanced_part_passes() {
                any_pass = true;
                break;
            }
            first_failure.get_or_insert(report);
        }
        if !any_pass {
            witnesses.push((idx, first_failure.expect("at least one kind applies")));
        }
    }
    Ok(BalancedReport {
        balanced: witnesses.is_empty(),
        samples_checked: n_samples,
        witnesses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DominanceMode {
    Dominance,
    /// Dominance over the zero claim priced at zero.
    Arbitrage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominanceVerdict {
    pub detected: bool,
    pub event_size: usize,
    /// Fraction of paths in the event with `Q¹ > Q² + 1e-9`.
    pub terminal_strict_frequency: f64,
    /// Fraction of paths in the event with `Y¹_s < Y²_s - 1e-9`.
    pub price_strict_frequency: f64,
    /// Paths in the event breaking `Q¹ ≥ Q²` or `Y¹_s ≤ Y²_s`.
    pub violations: usize,
}

/// Empirical dominance of claim 1 over claim 2 at `s` on the event `A`.
pub fn detect_dominance_arbitrage(
    y1_s: &[f64],
    y2_s: &[f64],
    q1: &[f64],
    q2: &[f64],
    mode: DominanceMode,
    event: &[bool],
) -> Result<DominanceVerdict> {
    let n = event.len();
    let zeros = vec![0.0; n];
    let (y2_s, q2) = match mode {
        DominanceMode::Dominance => (y2_s, q2),
        DominanceMode::Arbitrage => (&zeros[..], &zeros[..]),
    };
    if y1_s.len() != n || y2_s.len() != n || q1.len() != n || q2.len() != n {
        return Err(Error::Dimension {
            expected: format!("{n} samples each"),
            got: "sample vectors of different lengths".into(),
        });
    }
    let idx: Vec<usize> = (0..n).filter(|&p| event[p]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyEvent);
    }
    let m = idx.len() as f64;
    let violations = idx
        .iter()
        .filter(|&&p| q1[p] < q2[p] - STRICT_TOL || y1_s[p] > y2_s[p] + STRICT_TOL)
        .count();
    let q_strict = idx.iter().filter(|&&p| q1[p] > q2[p] + STRICT_TOL).count() as f64 / m;
    let y_strict = idx.iter().filter(|&&p| y1_s[p] < y2_s[p] - STRICT_TOL).count() as f64 / m;
    Ok(DominanceVerdict {
        detected: violations == 0 && (q_strict > 0.0 || y_strict > 0.0),
        event_size: idx.len(),
        terminal_strict_frequency: q_strict,
        price_strict_frequency: y_strict,
        violations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Counterexample {
    /// Two states, `F = -2‖Z‖`: a unit-jump hedge against the zero hedge
    /// yields `Q¹ > Q²` at equal prices.
    TwoStateDominance,
    /// Three states, `F = -‖Z‖ - Z A X`, with `Z¹` driven by the jump count:
    /// `Y¹` grows although the comparison hypotheses break down.
    JumpCounter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleRow {
    pub path: usize,
    pub jumps: usize,
    pub y1_0: f64,
    pub y1_t: f64,
    pub y2_0: f64,
    pub y2_t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleSummary {
    pub min_y1_t: f64,
    pub max_y1_t: f64,
    /// Fraction of paths with `Y¹_T > Y²_T + 1e-9`.
    pub strict_fraction: f64,
    pub dominance: DominanceVerdict,
    /// Range of `‖Z¹‖²_{X_{t-}}` over all visited states and jump counts.
    pub z1_norm_sq_range: (f64, f64),
    /// First point on the first path where the jump/drift implication fails.
    pub assumption_failure: Option<(usize, Witness)>,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleReport {
    pub which: Counterexample,
    pub rows: Vec<CounterexampleRow>,
    pub summary: CounterexampleSummary,
}

/// `Z¹` of the jump-counter construction: jump responses
/// `2·sqrt(1 - 4^{-(J+2)})` towards the lower-indexed other state and
/// `-2^{-(J+1)}` towards the higher-indexed one.
pub fn jump_counter_z(psi: &PsiMatrix, jumps: usize) -> DMatrix<f64> {
    let n = psi.dim();
    let s = psi.state();
    let others: Vec<usize> = (0..n).filter(|&j| j != s).collect();
    let mut diffs = DMatrix::zeros(1, n);
    let up = 2.0 * (1.0 - 4f64.powi(-(jumps as i32 + 2))).sqrt();
    let down = -(2f64.powi(-(jumps as i32 + 1)));
    diffs[(0, others[0])] = up;
    diffs[(0, others[1])] = down;
    canonical_from_jumps(psi, &diffs)
}

/// `Z¹` of the two-state construction: unit jump response.
pub fn unit_jump_z(psi: &PsiMatrix) -> DMatrix<f64> {
    let n = psi.dim();
    let diffs = DMatrix::from_fn(1, n, |_, j| if j == psi.state() { 0.0 } else { 1.0 });
    canonical_from_jumps(psi, &diffs)
}

fn check_shape(which: Counterexample, model: &RateModel) -> Result<()> {
    let n = model.num_states();
    let want = match which {
        Counterexample::TwoStateDominance => 2,
        Counterexample::JumpCounter => 3,
    };
    if n != want {
        return Err(Error::ModelShape(format!("needs {want} states, got {n}")));
    }
    for (k, p) in model.pieces().iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                if i != j && !(p.generator[(j, i)] > 0.0) {
                    return Err(Error::ModelShape(format!(
                        "rate {} -> {} vanishes on piece {}; every pair of states must communicate",
                        i + 1,
                        j + 1,
                        k + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Runs one of the counterexample constructions by forward integration.
pub fn run_counterexample(
    which: Counterexample,
    model: &RateModel,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    step: f64,
) -> Result<CounterexampleReport> {
    check_shape(which, model)?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter {
            name: "n_paths",
            reason: "at least one path is needed".into(),
        });
    }
    let eps = working_eps(model, None)?;
    let driver: Box<dyn Driver> = match which {
        Counterexample::TwoStateDominance => Box::new(ZNormDriver { k: 1, c: 2.0 }),
        Counterexample::JumpCounter => Box::new(ZDriftDriver::new(1, model)),
    };
    let z1 = |q: &ZQuery<'_>| match which {
        Counterexample::TwoStateDominance => unit_jump_z(q.psi),
        Counterexample::JumpCounter => jump_counter_z(q.psi, q.jumps),
    };
    let z2 = |q: &ZQuery<'_>| DMatrix::zeros(1, q.psi.dim());
    let zero = DVector::zeros(1);
    let paths = simulate_paths(model, 0, horizon, n_paths, seed)?;
    let rows: Vec<CounterexampleRow> = paths
        .par_iter()
        .enumerate()
        .map(|(p, path)| {
            let t1 = forward_sde(model, path, &zero, &z1, driver.as_ref(), step)?;
            let t2 = forward_sde(model, path, &zero, &z2, driver.as_ref(), step)?;
            Ok(CounterexampleRow {
                path: p,
                jumps: path.events.len(),
                y1_0: t1.values[0][0],
                y1_t: t1.terminal()[0],
                y2_0: t2.values[0][0],
                y2_t: t2.terminal()[0],
            })
        })
        .collect::<Result<_>>()?;

    let mut norm_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut assumption_failure = None;
    for (p, path) in paths.iter().enumerate() {
        for (a, b, state) in path.sojourns() {
            let jumps = path.jumps_before(b);
            for (_, _, piece) in model.segments(a, b) {
                let psi = psi_at_piece(model, piece, state);
                let q = ZQuery {
                    t: b,
                    piece,
                    state,
                    jumps,
                    psi: &psi,
                };
                let z = z1(&q);
                let nsq = row_seminorms_sq(&z, &psi)[0];
                norm_range = (norm_range.0.min(nsq), norm_range.1.max(nsq));
                if assumption_failure.is_none() {
                    let zz = z2(&q);
                    let y = DVector::zeros(1);
                    let point = PointInput {
                        t: b,
                        piece,
                        psi: &psi,
                        y1: &y,
                        y2: &y,
                        z1: &z,
                        z2: &zz,
                    };
                    if let Some(w) = jump_drift_point(ComparisonKind::Scalar, driver.as_ref(), &point, eps) {
                        assumption_failure = Some((p, w));
                    }
                }
            }
        }
    }

    let y1_0: Vec<f64> = rows.iter().map(|r| r.y1_0).collect();
    let y2_0: Vec<f64> = rows.iter().map(|r| r.y2_0).collect();
    let q1: Vec<f64> = rows.iter().map(|r| r.y1_t).collect();
    let q2: Vec<f64> = rows.iter().map(|r| r.y2_t).collect();
    let dominance = detect_dominance_arbitrage(&y1_0, &y2_0, &q1, &q2, DominanceMode::Dominance, &vec![true; rows.len()])?;
    let summary = CounterexampleSummary {
        min_y1_t: q1.iter().copied().fold(f64::INFINITY, f64::min),
        max_y1_t: q1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        strict_fraction: dominance.terminal_strict_frequency,
        dominance,
        z1_norm_sq_range: norm_range,
        assumption_failure,
        eps,
    };
    Ok(CounterexampleReport { which, rows, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssentialRange {
    pub reachable: Vec<bool>,
    pub inf: f64,
    pub sup: f64,
}

impl EssentialRange {
    pub fn is_singleton(&self) -> bool {
        self.sup - self.inf <= STRICT_TOL
    }

    /// Strictly inside `(inf, sup)`, or equal to the single value.
    pub fn contains_in_relative_interior(&self, value: f64) -> bool {
        if self.is_singleton() {
            (value - self.inf).abs() <= STRICT_TOL
        } else {
            value > self.inf && value < self.sup
        }
    }
}

/// Range of a scalar Markovian claim `g(X_T)` seen from `X_0 = x0`.
pub fn essential_range(model: &RateModel, x0: usize, horizon: f64, g: &[f64]) -> Result<EssentialRange> {
    model.check_state(x0)?;
    model.check_time(horizon)?;
    if g.len() != model.num_states() {
        return Err(Error::Dimension {
            expected: model.num_states().to_string(),
            got: g.len().to_string(),
        });
    }
    let reachable = reachable_states(model, x0, 0.0, horizon);
    let values = (0..g.len()).filter(|&j| reachable[j]).map(|j| g[j]);
    let inf = values.clone().fold(f64::INFINITY, f64::min);
    let sup = values.fold(f64::NEG_INFINITY, f64::max);
    Ok(EssentialRange { reachable, inf, sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{FnDriver, ZeroDriver};
    use crate::solver::solve_markovian;
    use std::sync::Arc;

    fn two_state() -> Arc<RateModel> {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        Arc::new(RateModel::homogeneous(a, 1.0, 1.0).unwrap())
    }

    fn three_state() -> Arc<RateModel> {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]);
        Arc::new(RateModel::homogeneous(a, 1.0, 1.0).unwrap())
    }

    #[test]
    fn zero_driver_passes_everything() {
        let m = two_state();
        let d: Arc<dyn Driver> = Arc::new(ZeroDriver { k: 1 });
        let s1 = solve_markovian(&m, &d, &DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), 1.0, 1e-2).unwrap();
        let s2 = solve_markovian(&m, &d, &DMatrix::from_row_slice(1, 2, &[0.5, 0.5]), 1.0, 1e-2).unwrap();
        let r = check_comparison(ComparisonKind::Scalar, &s1, &s2, &ComparisonOptions::default()).unwrap();
        assert!(r.all_assumptions_pass(), "{r:?}");
        let c = r.conclusion.unwrap();
        assert!(c.holds && c.strictness_consistent && c.min_gap >= 0.0);
    }

    #[test]
    fn zdrift_driver_fails_implication() {
        let m = three_state();
        let d: Arc<dyn Driver> = Arc::new(ZDriftDriver::new(1, &m));
        let s1 = solve_markovian(&m, &d, &DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.5]), 1.0, 1e-2).unwrap();
        let s2 = solve_markovian(&m, &d, &DMatrix::zeros(1, 3), 1.0, 1e-2).unwrap();
        let opts = ComparisonOptions::default();
        let r = check_comparison(ComparisonKind::Scalar, &s1, &s2, &opts).unwrap();
        let v = r.verdict(Assumption::JumpDrift).unwrap();
        assert!(!v.passed);
        let w = v.witness.as_ref().unwrap();
        assert!(confirm_witness(ComparisonKind::Scalar, Assumption::JumpDrift, &s1, &s2, r.eps, w).unwrap());
    }

    #[test]
    fn eps_above_threshold_is_rejected() {
        let m = two_state();
        let d: Arc<dyn Driver> = Arc::new(ZeroDriver { k: 1 });
        let s = solve_markovian(&m, &d, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 1.0, 0.1).unwrap();
        let opts = ComparisonOptions {
            eps: Some(0.4),
            ..Default::default()
        };
        assert!(check_comparison(ComparisonKind::Scalar, &s, &s, &opts).is_err());
    }

    #[test]
    fn structural_failure_for_z_dependent_driver() {
        let m = two_state();
        let d: Arc<dyn Driver> = Arc::new(ZNormDriver { k: 1, c: 1.0 });
        let s = solve_markovian(&m, &d, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 1.0, 0.1).unwrap();
        let r = check_comparison(ComparisonKind::VectorZFree, &s, &s, &ComparisonOptions::default()).unwrap();
        assert!(!r.verdict(Assumption::Structure).unwrap().passed);
    }

    #[test]
    fn exhaustive_mode_refutes_zdrift() {
        let m = two_state();
        let d: Arc<dyn Driver> = Arc::new(ZDriftDriver::new(1, &m));
        let g = DMatrix::from_row_slice(1, 2, &[0.3, 0.3]);
        let s = solve_markovian(&m, &d, &g, 1.0, 0.1).unwrap();
        let quiet = check_comparison(ComparisonKind::Scalar, &s, &s, &ComparisonOptions::default()).unwrap();
        assert!(quiet.all_assumptions_pass());
        let opts = ComparisonOptions {
            exhaustive_samples: 50,
            ..Default::default()
        };
        let loud = check_comparison(ComparisonKind::Scalar, &s, &s, &opts).unwrap();
        assert!(!loud.verdict(Assumption::JumpDrift).unwrap().passed);
    }

    #[test]
    fn balanced_verdicts() {
        let m = three_state();
        let mut family = |rng: &mut ChaCha8Rng| {
            let g1 = DMatrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
            Some((g1, DMatrix::zeros(1, 3)))
        };
        let zero: Arc<dyn Driver> = Arc::new(ZeroDriver { k: 1 });
        assert!(balanced_check(&zero, &mut family, &m, 0.0, 1.0, 4, 7, 0.05).unwrap().balanced);
        let zd: Arc<dyn Driver> = Arc::new(ZDriftDriver::new(1, &m));
        let r = balanced_check(&zd, &mut family, &m, 0.0, 1.0, 4, 7, 0.05).unwrap();
        assert!(!r.balanced && !r.witnesses.is_empty());
        let mut empty = |_: &mut ChaCha8Rng| None;
        assert!(matches!(
            balanced_check(&zero, &mut empty, &m, 0.0, 1.0, 2, 7, 0.05),
            Err(Error::SamplerExhausted(0))
        ));
    }

    #[test]
    fn dominance_detection() {
        let same = detect_dominance_arbitrage(&[0.0; 3], &[0.0; 3], &[1.0; 3], &[1.0; 3], DominanceMode::Dominance, &[true; 3]).unwrap();
        assert!(!same.detected);
        let d = detect_dominance_arbitrage(&[0.0; 2], &[0.0; 2], &[1.0, 0.0], &[0.0, 0.0], DominanceMode::Dominance, &[true; 2]).unwrap();
        assert!(d.detected && d.terminal_strict_frequency == 0.5);
        let a = detect_dominance_arbitrage(&[0.0], &[9.0], &[0.1], &[9.0], DominanceMode::Arbitrage, &[true]).unwrap();
        assert!(a.detected);
        assert!(matches!(
            detect_dominance_arbitrage(&[0.0], &[0.0], &[0.0], &[0.0], DominanceMode::Dominance, &[false]),
            Err(Error::EmptyEvent)
        ));
    }

    #[test]
    fn jump_counter_z_has_constant_norm() {
        let m = three_state();
        for state in 0..3 {
            let psi = psi_at_piece(&m, 0, state);
            for jumps in 0..12 {
                let z = jump_counter_z(&psi, jumps);
                assert!((row_seminorms_sq(&z, &psi)[0] - 4.0).abs() < 1e-12);
                assert!(z.row(0).sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn counterexamples_on_small_batches() {
        let r = run_counterexample(Counterexample::JumpCounter, &three_state(), 1.0, 50, 3, 1e-3).unwrap();
        assert!(r.summary.min_y1_t >= 1.0 - 1e-6);
        assert!(r.rows.iter().all(|row| row.y1_0 == 0.0));
        let d = run_counterexample(Counterexample::TwoStateDominance, &two_state(), 1.0, 50, 3, 1e-3).unwrap();
        assert!(d.summary.dominance.detected);
        assert!(run_counterexample(Counterexample::JumpCounter, &two_state(), 1.0, 5, 3, 1e-3).is_err());
    }

    #[test]
    fn essential_range_cases() {
        let m = two_state();
        let r = essential_range(&m, 0, 1.0, &[1.0, 0.0]).unwrap();
        assert_eq!((r.inf, r.sup), (0.0, 1.0));
        assert!(r.contains_in_relative_interior(0.567667));
        let c = essential_range(&m, 0, 1.0, &[0.3, 0.3]).unwrap();
        assert!(c.is_singleton() && c.contains_in_relative_interior(0.3));
        let iso = Arc::new(RateModel::homogeneous(DMatrix::zeros(2, 2), 1.0, 1.0).unwrap());
        let r = essential_range(&iso, 1, 1.0, &[5.0, 2.0]).unwrap();
        assert_eq!(r.reachable, vec![false, true]);
        assert_eq!((r.inf, r.sup), (2.0, 2.0));
    }

    #[test]
    fn y_gap_condition() {
        let m = two_state();
        let flipped = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 1.0]);
        let flags = crate::driver::DriverFlags {
            depends_on_y: true,
            ..Default::default()
        };
        let d = FnDriver::new(2, 2.0, flags, move |_, y, _| &flipped * y);
        let psi = psi_at_piece(&m, 0, 0);
        let y1 = DVector::from_vec(vec![1.0, 0.0]);
        let y2 = DVector::zeros(2);
        let z = DMatrix::zeros(2, 2);
        let p = PointInput {
            t: 0.5,
            piece: 0,
            psi: &psi,
            y1: &y1,
            y2: &y2,
            z1: &z,
            z2: &z,
        };
        assert!(jump_drift_point(ComparisonKind::VectorZFree, &d, &p, 0.1).is_some());
    }
}
