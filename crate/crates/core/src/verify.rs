//! Invariant suite run against a single model: the checks behind
//! `chainbsde verify`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{path_rng, simulate_paths, transition_matrix, RateModel};
use crate::comparison::{check_comparison, ComparisonKind, ComparisonOptions};
use crate::driver::{Driver, ZNormDriver, ZeroDriver};
use crate::error::Result;
use crate::linear::{adjoint_on_path, check_linear_conditions, closed_form_estimate, LinearDriverSpec};
use crate::oracle::svd_pseudoinverse;
use crate::psi::{canonicalize_z, check_jump_drift_bound, epsilon_threshold, seminorm_sq, PsiMatrix, SeminormForm};
use crate::risk::{check_property, random_instances, RiskProperty, RiskSetup};
use crate::solver::{forward_residual, solve_markovian, solve_on};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    /// First failure, or a short summary.
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub paths: usize,
    /// Solver step; defaults to `1e-3 · horizon`.
    pub step: Option<f64>,
    pub initial_state: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: 4000,
            step: None,
            initial_state: 0,
        }
    }
}

struct Tally {
    checks: usize,
    failure: Option<String>,
    summary: String,
}

impl Tally {
    fn new() -> Self {
        Self {
            checks: 0,
            failure: None,
            summary: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult {
            name,
            passed: self.failure.is_none(),
            checks: self.checks,
            detail: self.failure.unwrap_or(self.summary),
        }
    }
}

fn pieces_and_states(model: &RateModel) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..model.pieces().len()).flat_map(move |p| (0..model.num_states()).map(move |i| (p, i)))
}

fn psi_of(model: &RateModel, piece: usize, state: usize) -> Result<PsiMatrix> {
    PsiMatrix::new(state, model.pieces()[piece].generator.column(state).into_owned())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn psi_suite(model: &RateModel, seed: u64) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let mut rng = path_rng(seed, 1);
    let n = model.num_states();
    let eps = 0.5 * epsilon_threshold(model.epsilon_r(), n)?;
    for (p, i) in pieces_and_states(model) {
        let psi = psi_of(model, p, i)?;
        let m = psi.matrix();
        let scale = 1.0 + m.amax();
        let tol = 1e-9 * scale;
        t.check(psi.check_invariants(1e-12 * scale).is_ok(), || format!("psi invariants at piece {p}, state {}", i + 1));
        let plus = psi.pseudoinverse();
        let svd = svd_pseudoinverse(m);
        t.check((&plus - &svd).amax() <= 1e-9 * (1.0 + svd.amax()), || {
            format!("structured and SVD pseudoinverses differ at piece {p}, state {}", i + 1)
        });
        t.check((m * &plus * m - m).amax() <= tol && (&plus * m * &plus - &plus).amax() <= 1e-9 * (1.0 + plus.amax()), || {
            format!("Penrose identities at piece {p}, state {}", i + 1)
        });
        t.check(
            (0..n).all(|r| plus.row(r).sum().abs() <= 1e-9 * (1.0 + plus.amax())),
            || format!("pseudoinverse row sums at piece {p}, state {}", i + 1),
        );
        let proj = psi.projector();
        for j in psi.active_targets() {
            let mut d = DVector::zeros(n);
            d[j] = 1.0;
            d[i] -= 1.0;
            t.check((&proj * &d - &d).amax() <= 1e-12, || format!("projector fixes e_{} - e_{}", j + 1, i + 1));
        }
        for _ in 0..20 {
            let z = random_matrix(&mut rng, 2, n);
            let trace = seminorm_sq(&z, &psi, SeminormForm::Trace)?;
            let jump = seminorm_sq(&z, &psi, SeminormForm::Jump)?;
            t.check((trace - jump).abs() <= 1e-10 * (1.0 + jump), || format!("seminorm forms disagree: {trace} vs {jump}"));
            let canon = canonicalize_z(&z, &psi, &plus)?;
            let cn = seminorm_sq(&canon, &psi, SeminormForm::Jump)?;
            t.check((cn - jump).abs() <= 1e-10 * (1.0 + jump), || "canonical Z changes the seminorm".into());
            t.check(canon.row(0).sum().abs() <= 1e-10 * (1.0 + canon.amax()), || "canonical Z has nonzero row sum".into());
            let row = z.rows(0, 1).into_owned();
            if psi.active_targets().is_empty() || seminorm_sq(&row, &psi, SeminormForm::Trace)? == 0.0 {
                continue;
            }
            let c = check_jump_drift_bound(&row, &psi, model.epsilon_r(), eps)?;
            t.check(!c.premise_holds || c.conclusion_holds, || "jump/drift bound violated".into());
        }
    }
    t.summary = format!("{} pieces x {n} states", model.pieces().len());
    Ok(t.finish("psi"))
}

fn chain_suite(model: &RateModel, opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let horizon = model.horizon();
    let p = transition_matrix(model, 0.0, horizon)?;
    let n = model.num_states();
    for i in 0..n {
        t.check(p.column(i).iter().all(|&v| v >= -1e-12) && (p.column(i).sum() - 1.0).abs() <= 1e-10, || {
            format!("column {} of the transition matrix is not a distribution", i + 1)
        });
    }
    let paths = simulate_paths(model, opts.initial_state, horizon, opts.paths, opts.seed)?;
    for path in paths.iter().take(50) {
        t.check(path.check_against(model).is_ok(), || "simulated path inconsistent with the model".into());
    }
    let m = paths.len() as f64;
    for j in 0..n {
        let freq = paths.iter().filter(|p| p.terminal_state() == j).count() as f64 / m;
        let prob = p[(j, opts.initial_state)];
        let se = (prob * (1.0 - prob) / m).sqrt();
        // four standard errors: one comparison per state
        t.check((freq - prob).abs() <= 4.0 * se + 1e-12, || {
            format!("terminal frequency of state {} is {freq}, law gives {prob}", j + 1)
        });
    }
    t.summary = format!("{} paths", paths.len());
    Ok(t.finish("chain"))
}

fn solver_suite(model: &Arc<RateModel>, opts: &VerifyOptions, step: f64) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let horizon = model.horizon();
    let n = model.num_states();
    let mut rng = path_rng(opts.seed, 2);
    let g = random_matrix(&mut rng, 1, n);
    let zero: Arc<dyn Driver> = Arc::new(ZeroDriver { k: 1 });
    let grid = solve_markovian(model, &zero, &g, horizon, step)?;
    let oracle = &g * transition_matrix(model, 0.0, horizon)?;
    let err = (grid.initial() - &oracle).amax();
    t.check(err <= 1e-6, || format!("zero driver differs from the expectation by {err:e}"));

    let znorm: Arc<dyn Driver> = Arc::new(ZNormDriver { k: 1, c: 0.5 });
    let whole = solve_markovian(model, &znorm, &g, horizon, step)?;
    let mid = 0.5 * horizon;
    let late = solve_on(model, &znorm, &g, mid, horizon, step)?;
    let early = solve_on(model, &znorm, late.initial(), 0.0, mid, step)?;
    let rec = (whole.initial() - early.initial()).amax();
    t.check(rec <= 1e-8, || format!("flow property off by {rec:e}"));

    let paths = simulate_paths(model, opts.initial_state, horizon, 20, opts.seed)?;
    let worst = paths
        .par_iter()
        .map(|p| forward_residual(p, &whole))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    t.check(worst <= 1e-5, || format!("forward residual {worst:e}"));
    t.summary = format!("expectation error {err:.1e}, flow {rec:.1e}, residual {worst:.1e}");
    Ok(t.finish("solver"))
}

fn linear_suite(model: &Arc<RateModel>, opts: &VerifyOptions, step: f64) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let n = model.num_states();
    let k = 2;
    let horizon = model.horizon();
    let mut rng = path_rng(opts.seed, 3);
    // small coefficients keep every jump update invertible
    let alpha = (0..n).map(|_| random_matrix(&mut rng, k, n) * 0.1).collect();
    let beta = random_matrix(&mut rng, k, k) * 0.5;
    let gamma = DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5));
    let phi = DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5));
    let spec = LinearDriverSpec::constant(model, alpha, beta, gamma, phi)?;
    let conditions = check_linear_conditions(&spec, model)?;
    if !conditions.invertible() {
        t.check(false, || "generated linear driver is not invertible".into());
        return Ok(t.finish("linear"));
    }
    let paths = simulate_paths(model, opts.initial_state, horizon, 50, opts.seed ^ 3)?;
    let mid = 0.5 * horizon;
    for path in &paths {
        let full = adjoint_on_path(path, &spec, model, 0.0)?;
        let tail = adjoint_on_path(path, &spec, model, mid)?;
        let lhs = full.gamma_to(mid)? * tail.gamma_to(horizon)?;
        let rhs = full.gamma_to(horizon)?;
        let semigroup = (&lhs - &rhs).amax();
        t.check(semigroup <= 1e-8 * (1.0 + rhs.amax()), || format!("adjoint semigroup off by {semigroup:e}"));
        let inv = full.inverse_to(horizon)?;
        let id = (&rhs * inv - DMatrix::identity(k, k)).amax();
        t.check(id <= 1e-8, || format!("adjoint inverse off by {id:e}"));
    }
    let g = random_matrix(&mut rng, k, n);
    let driver: Arc<dyn Driver> = Arc::new(spec.clone());
    let grid = solve_markovian(model, &driver, &g, horizon, step)?;
    let est = closed_form_estimate(&spec, &g, model, opts.initial_state, horizon, opts.paths, opts.seed)?;
    let u0 = grid.initial().column(opts.initial_state);
    for c in 0..k {
        let gap = (est.mean[c] - u0[c]).abs();
        // four standard errors: one comparison per component
        t.check(gap <= 4.0 * est.stderr[c] + 1e-9, || {
            format!("closed form {} vs solver {} (stderr {})", est.mean[c], u0[c], est.stderr[c])
        });
    }
    t.summary = format!("{} adjoint paths, {} estimator paths", paths.len(), est.n_paths);
    Ok(t.finish("linear"))
}

fn comparison_suite(model: &Arc<RateModel>, opts: &VerifyOptions, step: f64) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let n = model.num_states();
    let mut rng = path_rng(opts.seed, 4);
    let zero: Arc<dyn Driver> = Arc::new(ZeroDriver { k: 1 });
    for _ in 0..5 {
        let g2 = random_matrix(&mut rng, 1, n);
        let g1 = &g2 + random_matrix(&mut rng, 1, n).map(f64::abs);
        let s1 = solve_markovian(model, &zero, &g1, model.horizon(), step)?;
        let s2 = solve_markovian(model, &zero, &g2, model.horizon(), step)?;
        let r = check_comparison(ComparisonKind::Scalar, &s1, &s2, &ComparisonOptions::default())?;
        let c = r.conclusion.as_ref().expect("conclusion requested");
        t.check(r.all_assumptions_pass(), || format!("assumption failed for the zero driver: {:?}", r.assumptions));
        t.check(c.holds, || format!("u1 < u2 by {:e}", -c.min_gap));
        t.check(c.strictness_consistent, || "strict comparison inconsistent with reachability".into());
    }
    t.summary = "zero driver, ordered random claims".into();
    Ok(t.finish("comparison"))
}

fn risk_suite(model: &Arc<RateModel>, opts: &VerifyOptions, step: f64) -> Result<SuiteResult> {
    let mut t = Tally::new();
    let horizon = model.horizon();
    let setup = RiskSetup {
        model: model.clone(),
        s: 0.25 * horizon,
        mid: 0.5 * horizon,
        t: horizon,
        step,
        mc_paths: opts.paths.min(2000),
        initial_state: opts.initial_state,
    };
    let driver: Arc<dyn Driver> = Arc::new(ZNormDriver { k: 1, c: 0.5 });
    let instances = random_instances(1, model.num_states(), 3, opts.seed);
    for property in RiskProperty::ALL {
        let v = check_property(property, &driver, &setup, &instances, opts.seed)?;
        t.check(v.passed, || format!("{property}: {}", v.witness.clone().unwrap_or_default()));
    }
    t.summary = "seminorm driver, all properties".into();
    Ok(t.finish("risk"))
}

/// Runs every suite; a suite that cannot run reports its error as a failure.
pub fn run_suite(model: &Arc<RateModel>, opts: &VerifyOptions) -> Vec<SuiteResult> {
    let step = opts.step.unwrap_or(1e-3 * model.horizon());
    let report = model.validate();
    let mut out = vec![SuiteResult {
        name: "model",
        passed: report.is_ok(),
        checks: 1,
        detail: report.first().map_or_else(|| "valid".into(), |v| v.to_string()),
    }];
    if !report.is_ok() {
        return out;
    }
    let suites: [(&'static str, Box<dyn Fn() -> Result<SuiteResult>>); 6] = [
        ("psi", Box::new(|| psi_suite(model, opts.seed))),
        ("chain", Box::new(|| chain_suite(model, opts))),
        ("solver", Box::new(|| solver_suite(model, opts, step))),
        ("linear", Box::new(|| linear_suite(model, opts, step))),
        ("comparison", Box::new(|| comparison_suite(model, opts, step))),
        ("risk", Box::new(|| risk_suite(model, opts, step))),
    ];
    for (name, suite) in suites {
        out.push(suite().unwrap_or_else(|e| SuiteResult {
            name,
            passed: false,
            checks: 0,
            detail: e.to_string(),
        }));
    }
    out
}
