//! Nonlinear evaluations `E^F_{s,t}` and the dynamic risk measure
//! `ρ_s(Q) = -E^F_{s,T}(Q)`, with a property harness.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{path_rng, reachable_states, simulate_paths, RateModel};
use crate::comparison::{applicable_kinds, balanced_check, check_comparison, conclusion_check, ComparisonOptions};
use crate::driver::{check_flags, Driver};
use crate::error::{Error, Result};
use crate::linear::mean_and_stderr;
use crate::solver::{path_drift_sample, solve_on, ValueGrid};

/// Tolerance of the deterministic property checks.
pub const PROPERTY_TOL: f64 = 1e-7;
pub const RECURSIVITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct EvaluationRequest {
    pub model: Arc<RateModel>,
    pub driver: Arc<dyn Driver>,
    /// `K × N`, column `i` is `g(e_i)`.
    pub terminal: DMatrix<f64>,
    pub s: f64,
    pub t: f64,
    pub step: f64,
}

impl EvaluationRequest {
    pub fn with_terminal(&self, terminal: DMatrix<f64>) -> Self {
        Self {
            terminal,
            ..self.clone()
        }
    }

    pub fn with_times(&self, s: f64, t: f64) -> Self {
        Self { s, t, ..self.clone() }
    }

    pub fn solve(&self) -> Result<ValueGrid> {
        if !(self.s <= self.t) {
            return Err(Error::TimeOutOfRange {
                time: self.s,
                lower: 0.0,
                upper: self.t,
            });
        }
        solve_on(&self.model, &self.driver, &self.terminal, self.s, self.t, self.step)
    }
}

/// `E^F_{s,t}(g(X_t))` at time `s`, one column per state.
pub fn evaluate(req: &EvaluationRequest) -> Result<DMatrix<f64>> {
    Ok(req.solve()?.initial().clone())
}

/// `ρ_s(Q) = -E^F_{s,t}(Q)` with `t` the terminal time of `Q`.
pub fn rho(req: &EvaluationRequest) -> Result<DMatrix<f64>> {
    Ok(-evaluate(req)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RiskProperty {
    Monotonicity,
    Constants,
    Translation,
    Homogeneity,
    Convexity,
    ZeroOne,
    Recursivity,
}

impl RiskProperty {
    pub const ALL: [RiskProperty; 7] = [
        RiskProperty::Monotonicity,
        RiskProperty::Constants,
        RiskProperty::Translation,
        RiskProperty::Homogeneity,
        RiskProperty::Convexity,
        RiskProperty::ZeroOne,
        RiskProperty::Recursivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RiskProperty::Monotonicity => "monotonicity",
            RiskProperty::Constants => "constants",
            RiskProperty::Translation => "translation",
            RiskProperty::Homogeneity => "homogeneity",
            RiskProperty::Convexity => "convexity",
            RiskProperty::ZeroOne => "zero_one",
            RiskProperty::Recursivity => "recursivity",
        }
    }
}

impl fmt::Display for RiskProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RiskProperty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        RiskProperty::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::InvalidParameter {
                name: "property",
                reason: format!("unknown property '{s}'"),
            })
    }
}

/// One test case. `g2` is the second claim for monotonicity and convexity;
/// `q` the cash amount for translation; `lambdas` the scalings.
#[derive(Clone, Debug)]
pub struct RiskInstance {
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub q: f64,
    pub lambdas: Vec<f64>,
}

/// Shared settings of a property run.
#[derive(Clone, Debug)]
pub struct RiskSetup {
    pub model: Arc<RateModel>,
    pub s: f64,
    /// Intermediate time for recursivity.
    pub mid: f64,
    pub t: f64,
    pub step: f64,
    /// Paths per event in the zero-one law check.
    pub mc_paths: usize,
    pub initial_state: usize,
}

impl RiskSetup {
    fn request(&self, driver: &Arc<dyn Driver>, terminal: DMatrix<f64>) -> EvaluationRequest {
        EvaluationRequest {
            model: self.model.clone(),
            driver: driver.clone(),
            terminal,
            s: self.s,
            t: self.t,
            step: self.step,
        }
    }
}

/// Random instances with terminal values uniform on `[-1, 1]`.
pub fn random_instances(k: usize, n_states: usize, count: usize, seed: u64) -> Vec<RiskInstance> {
    (0..count)
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let draw = |rng: &mut ChaCha8Rng| DMatrix::from_fn(k, n_states, |_, _| rng.random_range(-1.0..1.0));
            RiskInstance {
                g1: draw(&mut rng),
                g2: draw(&mut rng),
                q: rng.random_range(-1.0..1.0),
                lambdas: vec![0.25, 0.5, 0.75, 2.0],
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyVerdict {
    pub property: RiskProperty,
    pub passed: bool,
    pub instances_checked: usize,
    /// Largest observed violation measure (error, or `|bias| / stderr` for
    /// the zero-one law).
    pub max_error: f64,
    pub tolerance: f64,
    pub witness: Option<String>,
}

struct InstanceOutcome {
    error: f64,
    witness: Option<String>,
}

fn require(cond: bool, property: RiskProperty, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Hypothesis(format!("{property} requires {what}")))
    }
}

fn require_balanced(driver: &Arc<dyn Driver>, setup: &RiskSetup, instances: &[RiskInstance], seed: u64, property: RiskProperty) -> Result<()> {
    let mut next = 0;
    let mut sampler = |_: &mut ChaCha8Rng| {
        let inst = instances.get(next)?;
        next += 1;
        Some((inst.g1.clone(), inst.g2.clone()))
    };
    let report = balanced_check(driver, &mut sampler, &setup.model, setup.s, setup.t, instances.len(), seed, setup.step)?;
    require(report.balanced, property, "a balanced driver on the instance family")
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Checks one risk-measure property on every instance.
pub fn check_property(
    property: RiskProperty,
    driver: &Arc<dyn Driver>,
    setup: &RiskSetup,
    instances: &[RiskInstance],
    seed: u64,
) -> Result<PropertyVerdict> {
    if instances.is_empty() {
        return Err(Error::InvalidParameter {
            name: "instances",
            reason: "no instances".into(),
        });
    }
    let flags = driver.flags();
    let spot = || check_flags(driver.as_ref(), &setup.model, 32, seed).map_err(|e| Error::Hypothesis(e.to_string()));
    match property {
        RiskProperty::Translation => {
            require(!flags.depends_on_y && flags.normalized_at_zero, property, "a Y-independent normalized driver")?;
            spot()?;
        }
        RiskProperty::Homogeneity => {
            require(flags.positively_homogeneous, property, "a positively homogeneous driver")?;
            spot()?;
        }
        RiskProperty::Convexity => {
            require(flags.concave, property, "a concave driver")?;
            spot()?;
            require_balanced(driver, setup, instances, seed, property)?;
        }
        RiskProperty::Monotonicity => require_balanced(driver, setup, instances, seed, property)?,
        RiskProperty::Constants | RiskProperty::ZeroOne => {
            require(flags.normalized_at_zero, property, "a normalized driver")?;
            spot()?;
        }
        RiskProperty::Recursivity => {}
    }
    let tolerance = match property {
        RiskProperty::Recursivity => RECURSIVITY_TOL,
        RiskProperty::ZeroOne => 3.0,
        _ => PROPERTY_TOL,
    };
    let outcomes: Vec<InstanceOutcome> = instances
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| check_instance(property, driver, setup, inst, seed, idx, tolerance))
        .collect::<Result<_>>()?;
    let max_error = outcomes.iter().map(|o| o.error).fold(0.0, f64::max);
    let witness = outcomes.iter().find_map(|o| o.witness.clone());
    Ok(PropertyVerdict {
        property,
        passed: witness.is_none(),
        instances_checked: instances.len(),
        max_error,
        tolerance,
        witness,
    })
}

fn check_instance(
    property: RiskProperty,
    driver: &Arc<dyn Driver>,
    setup: &RiskSetup,
    inst: &RiskInstance,
    seed: u64,
    idx: usize,
    tol: f64,
) -> Result<InstanceOutcome> {
    let req = setup.request(driver, inst.g1.clone());
    let outcome = |error: f64, detail: String| InstanceOutcome {
        error,
        witness: (error > tol).then(|| format!("instance {idx}: {detail}")),
    };
    match property {
        RiskProperty::Translation => {
            let shifted = inst.g1.map(|v| v + inst.q);
            let lhs = rho(&req.with_terminal(shifted))?;
            let rhs = rho(&req)?.map(|v| v - inst.q);
            let err = max_abs(&(lhs - rhs));
            Ok(outcome(err, format!("|rho(Q + {}) - rho(Q) + {}| = {err:e}", inst.q, inst.q)))
        }
        RiskProperty::Homogeneity => {
            let base = evaluate(&req)?;
            let mut worst = (0.0, 0.0);
            for &l in &inst.lambdas {
                let scaled = evaluate(&req.with_terminal(&inst.g1 * l))?;
                let err = max_abs(&(scaled - &base * l));
                if err > worst.0 {
                    worst = (err, l);
                }
            }
            Ok(outcome(worst.0, format!("|E(lQ) - l E(Q)| = {:e} at l = {}", worst.0, worst.1)))
        }
        RiskProperty::Convexity => {
            let r1 = rho(&req)?;
            let r2 = rho(&req.with_terminal(inst.g2.clone()))?;
            let mut worst = (0.0, 0.0);
            for &l in inst.lambdas.iter().filter(|&&l| (0.0..=1.0).contains(&l)) {
                let mix = rho(&req.with_terminal(&inst.g1 * l + &inst.g2 * (1.0 - l)))?;
                let excess = (mix - (&r1 * l + &r2 * (1.0 - l))).max();
                if excess > worst.0 {
                    worst = (excess, l);
                }
            }
            Ok(outcome(worst.0, format!("convexity exceeded by {:e} at l = {}", worst.0, worst.1)))
        }
        RiskProperty::Monotonicity => {
            let hi = inst.g1.zip_map(&inst.g2, f64::max);
            let lo = inst.g1.zip_map(&inst.g2, f64::min);
            let s1 = req.with_terminal(hi).solve()?;
            let s2 = req.with_terminal(lo).solve()?;
            let options = ComparisonOptions {
                balanced_only: true,
                check_conclusion: false,
                seed,
                ..Default::default()
            };
            let mut kind = None;
            for k in applicable_kinds(driver.dim()) {
                if check_comparison(k, &s1, &s2, &options)?.balanced_part_passes() {
                    kind = Some(k);
                    break;
                }
            }
            let Some(kind) = kind else {
                return Ok(InstanceOutcome {
                    error: f64::INFINITY,
                    witness: Some(format!("instance {idx}: no comparison result applies to the ordered pair")),
                });
            };
            let c = conclusion_check(kind, &s1, &s2);
            let err = (-c.min_gap).max(0.0);
            let witness = if let Some(w) = c.witness.filter(|_| err > tol) {
                Some(format!("instance {idx}: rho(Q1) > rho(Q2) at {w}"))
            } else {
                c.strictness_witness.map(|w| format!("instance {idx}: {w}"))
            };
            Ok(InstanceOutcome { error: err, witness })
        }
        RiskProperty::Constants => {
            let n = setup.model.num_states();
            // constant on each class reachable from a state, checked from that state
            let mut worst = 0.0f64;
            for i in 0..n {
                let reach = reachable_states(&setup.model, i, setup.s, setup.t);
                let c = inst.g1.column(i).into_owned();
                let g = DMatrix::from_fn(inst.g1.nrows(), n, |k, j| if reach[j] { c[k] } else { inst.g2[(k, j)] });
                let e = evaluate(&req.with_terminal(g))?;
                worst = worst.max((e.column(i) - &c).amax());
            }
            Ok(outcome(worst, format!("E(c) differs from c by {worst:e}")))
        }
        RiskProperty::Recursivity => {
            let whole = evaluate(&req)?;
            let inner = evaluate(&req.with_times(setup.mid, setup.t))?;
            let outer = evaluate(&req.with_terminal(inner).with_times(setup.s, setup.mid))?;
            let err = max_abs(&(whole - outer));
            Ok(outcome(err, format!("E_(s,mid)(E_(mid,t)(Q)) - E_(s,t)(Q) = {err:e}")))
        }
        RiskProperty::ZeroOne => zero_one(setup, &req, seed, idx),
    }
}

/// Paired Monte Carlo comparison of `I_A E(Q | F_s)` and `E(I_A Q | F_s)` for
/// each event `A = {X_s = e_i}`; the error is the worst `|mean| / stderr`.
fn zero_one(setup: &RiskSetup, req: &EvaluationRequest, seed: u64, idx: usize) -> Result<InstanceOutcome> {
    let grid = req.solve()?;
    let paths = simulate_paths(&setup.model, setup.initial_state, setup.t, setup.mc_paths, seed.wrapping_add(idx as u64))?;
    let n = setup.model.num_states();
    let k = grid.dim();
    let drift: Vec<(usize, DVector<f64>)> = paths
        .par_iter()
        .map(|p| Ok((p.state_at(setup.s), path_drift_sample(p, &grid)?)))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut witness = None;
    for i in 0..n {
        let u = grid.initial().column(i).into_owned();
        let diffs: Vec<DVector<f64>> = drift
            .iter()
            .map(|(x, sample)| if *x == i { &u - sample } else { DVector::zeros(k) })
            .collect();
        if diffs.len() < 2 || drift.iter().all(|(x, _)| *x != i) {
            continue;
        }
        let est = mean_and_stderr(&diffs, seed);
        for c in 0..k {
            let (m, se) = (est.mean[c], est.stderr[c]);
            let ratio = if se > 0.0 { m.abs() / se } else if m.abs() <= PROPERTY_TOL { 0.0 } else { f64::INFINITY };
            if ratio > worst {
                worst = ratio;
            }
            if ratio > 3.0 && witness.is_none() {
                witness = Some(format!(
                    "instance {idx}: event X_s = {}: mean difference {m:e} vs stderr {se:e}",
                    i + 1
                ));
            }
        }
    }
    Ok(InstanceOutcome { error: worst, witness })
}
