//! One function per subcommand. Each returns a [`Report`]; `main` prints and
//! writes it.

use std::sync::Arc;

use chainbsde::chain::{simulate_paths, transition_matrix};
use chainbsde::comparison::{
    applicable_kinds, balanced_check, check_comparison, essential_range, run_counterexample, working_eps,
    ComparisonKind, ComparisonOptions, ComparisonReport, Counterexample, Witness,
};
use chainbsde::driver::Driver;
use chainbsde::linear::{check_linear_conditions, closed_form_estimate, necessity_probe};
use chainbsde::risk::{self, check_property, random_instances, EvaluationRequest, RiskProperty, RiskSetup};
use chainbsde::solver::{solve_hitting_time, solve_markovian, ValueGrid};
use chainbsde::verify::{run_suite, VerifyOptions};
use chainbsde::RateModel;
use nalgebra::DMatrix;
use serde_json::Value;

use crate::config::Scenario;
use crate::error::CliError;
use crate::output::{Cell, Report, Table};
use crate::{Cli, Command, KindArg, Which};

/// Resolved run settings: flags override the `[run]` block.
pub struct Context<'a> {
    cli: &'a Cli,
    sc: &'a Scenario,
}

impl<'a> Context<'a> {
    pub fn new(cli: &'a Cli, sc: &'a Scenario) -> Self {
        Self { cli, sc }
    }

    pub fn seed_if_set(&self) -> Option<u64> {
        self.cli.seed.or(self.sc.run.seed)
    }

    fn seed(&self, report: &mut Report) -> Result<u64, CliError> {
        let seed = self.seed_if_set().ok_or_else(|| {
            CliError::Config(format!(
                "{} is stochastic and needs a seed: pass --seed or set run.seed",
                self.cli.command.name()
            ))
        })?;
        report.param("seed", seed);
        Ok(seed)
    }

    fn paths(&self, default: usize, report: &mut Report) -> Result<usize, CliError> {
        let n = self.cli.paths.or(self.sc.run.paths).unwrap_or(default);
        if n == 0 {
            return Err(CliError::Config("paths must be positive".into()));
        }
        report.param("paths", n);
        Ok(n)
    }

    fn step(&self, model: &RateModel, report: &mut Report) -> Result<f64, CliError> {
        let h = self.cli.step.or(self.sc.run.step).unwrap_or(1e-3 * model.horizon());
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!("step = {h} is not a positive number")));
        }
        report.param("step", h);
        Ok(h)
    }

    fn eps(&self, report: &mut Report) -> Option<f64> {
        let eps = self.cli.eps.or(self.sc.run.eps);
        if let Some(e) = eps {
            report.param("eps", e);
        }
        eps
    }

    /// `(s, t)`, defaulting to `(0, horizon)`.
    fn window(&self, model: &RateModel, report: &mut Report) -> (f64, f64) {
        let s = self.sc.run.s.unwrap_or(0.0);
        let t = self.sc.run.t.unwrap_or(model.horizon());
        report.param("s", s);
        report.param("t", t);
        (s, t)
    }
}

pub fn dispatch(cmd: &Command, ctx: &Context<'_>) -> Result<Report, CliError> {
    let mut r = Report::default();
    match cmd {
        Command::Validate => validate(ctx, &mut r)?,
        Command::Simulate => simulate(ctx, &mut r)?,
        Command::Solve => solve(ctx, &mut r, false)?,
        Command::SolveHitting => solve(ctx, &mut r, true)?,
        Command::LinearSolve => linear_solve(ctx, &mut r)?,
        Command::LinearEstimate => linear_estimate(ctx, &mut r)?,
        Command::CheckComparison { kind, exhaustive } => comparison(ctx, &mut r, *kind, *exhaustive)?,
        Command::BalancedCheck { samples } => balanced(ctx, &mut r, *samples)?,
        Command::Counterexample { which } => counterexample(ctx, &mut r, *which)?,
        Command::EssentialRange => range(ctx, &mut r)?,
        Command::Evaluate => evaluation(ctx, &mut r, false)?,
        Command::Rho => evaluation(ctx, &mut r, true)?,
        Command::CheckRiskProperties { properties } => risk_properties(ctx, &mut r, properties)?,
        Command::Verify => verify(ctx, &mut r)?,
    }
    Ok(r)
}

fn fmt_vec(v: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = v.into_iter().map(|x| format!("{x:.9}")).collect();
    format!("({})", parts.join(", "))
}

fn y_header(prefix: &[&str], k: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((1..=k).map(|c| format!("y_{c}")));
    h
}

fn solution_table(grid: &ValueGrid) -> Table {
    let k = grid.dim();
    let mut t = Table {
        file: "solution.csv".into(),
        header: y_header(&["time", "state"], k),
        rows: Vec::new(),
    };
    for (time, values) in grid.times().iter().zip(grid.values()) {
        for (i, col) in values.column_iter().enumerate() {
            let mut row = vec![Cell::Float(*time), (i + 1).into()];
            row.extend(col.iter().map(|&v| Cell::Float(v)));
            t.push(row);
        }
    }
    t
}

fn validate(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let n = model.num_states();
    r.line(format!(
        "rate model valid: {n} states, {} piece(s) on (0, {}], epsilon_r = {}",
        model.pieces().len(),
        model.horizon(),
        model.epsilon_r()
    ));
    r.line(format!("initial state {}", x0 + 1));
    let threshold = chainbsde::psi::epsilon_threshold(model.epsilon_r(), n)?;
    r.line(format!("comparison epsilon must lie in (0, {threshold:e})"));
    if let Some(e) = ctx.eps(r) {
        working_eps(&model, Some(e))?;
        r.line(format!("eps = {e} accepted"));
    }
    let mut k = None;
    if ctx.sc.driver.is_some() {
        let d = ctx.sc.driver(&model, false)?;
        r.line(format!("driver {} with K = {}", d.name(), d.dim()));
        k = Some(d.dim());
    }
    if ctx.sc.driver2.is_some() {
        let d = ctx.sc.driver(&model, true)?;
        r.line(format!("second driver {} with K = {}", d.name(), d.dim()));
    }
    if let Some(k) = k {
        if ctx.sc.terminal.is_some() {
            ctx.sc.terminal(k, false)?;
            let absorbing = ctx.sc.absorbing()?;
            r.line(format!("terminal values {k}x{n}, {} absorbing state(s)", absorbing.len()));
        }
        if ctx.sc.terminal2.is_some() {
            ctx.sc.terminal(k, true)?;
            r.line(format!("second terminal values {k}x{n}"));
        }
    }
    Ok(())
}

fn simulate(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let seed = ctx.seed(r)?;
    let n_paths = ctx.paths(10, r)?;
    let horizon = model.horizon();
    let paths = simulate_paths(&model, x0, horizon, n_paths, seed)?;
    let mut table = Table::new("paths.csv", &["path", "jump", "time", "state"]);
    let n = model.num_states();
    let mut counts = vec![0usize; n];
    let mut jumps = 0usize;
    for (p, path) in paths.iter().enumerate() {
        table.push(vec![(p + 1).into(), 0usize.into(), 0.0.into(), (path.initial_state + 1).into()]);
        for (j, ev) in path.events.iter().enumerate() {
            table.push(vec![(p + 1).into(), (j + 1).into(), ev.time.into(), (ev.state + 1).into()]);
        }
        counts[path.terminal_state()] += 1;
        jumps += path.events.len();
    }
    let exact = transition_matrix(&model, 0.0, horizon)?;
    let mut dist = Table::new("terminal_distribution.csv", &["state", "empirical", "exact"]);
    for (j, &c) in counts.iter().enumerate() {
        dist.push(vec![(j + 1).into(), (c as f64 / n_paths as f64).into(), exact[(j, x0)].into()]);
    }
    r.line(format!(
        "{n_paths} paths from state {} on [0, {horizon}], mean {:.4} jumps per path",
        x0 + 1,
        jumps as f64 / n_paths as f64
    ));
    r.tables.push(table);
    r.tables.push(dist);
    Ok(())
}

fn solve(ctx: &Context<'_>, r: &mut Report, hitting: bool) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let driver = ctx.sc.driver(&model, false)?;
    let terminal = ctx.sc.terminal(driver.dim(), false)?;
    let step = ctx.step(&model, r)?;
    let grid = if hitting {
        let absorbing = ctx.sc.absorbing()?;
        if absorbing.is_empty() {
            return Err(CliError::Config("solve-hitting needs terminal.absorbing".into()));
        }
        r.param("absorbing", absorbing.iter().map(|a| a + 1).collect::<Vec<_>>());
        solve_hitting_time(&model, &driver, &terminal, model.horizon(), step, &absorbing)?
    } else {
        solve_markovian(&model, &driver, &terminal, model.horizon(), step)?
    };
    r.line(format!(
        "driver {}: u(0, state {}) = {}",
        driver.name(),
        x0 + 1,
        fmt_vec(grid.value(0.0, x0)?.iter().copied())
    ));
    r.tables.push(solution_table(&grid));
    Ok(())
}

fn linear_solve(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let spec = ctx.sc.linear_spec(&model)?;
    let conditions = check_linear_conditions(&spec, &model)?;
    let mut table = Table::new(
        "linear_conditions.csv",
        &["piece", "state", "target", "det", "invertible", "nonnegative"],
    );
    for v in &conditions.jumps {
        table.push(vec![
            (v.piece + 1).into(),
            (v.state + 1).into(),
            (v.target + 1).into(),
            v.det.into(),
            v.invertible.into(),
            v.nonnegative.into(),
        ]);
    }
    r.tables.push(table);
    if let Some(v) = conditions.first_singular() {
        return Err(CliError::Precondition(format!(
            "jump update is singular at piece {}, state {}, target {} (det = {:e}); the linear BSDE is not solved",
            v.piece + 1,
            v.state + 1,
            v.target + 1,
            v.det
        )));
    }
    r.line(format!("invertibility holds at all {} jumps", conditions.jumps.len()));
    if conditions.nonnegative() {
        r.line("nonnegativity hypotheses hold: Gamma >= 0 on every path");
    } else {
        r.line("nonnegativity hypotheses fail");
        if let Some(w) = necessity_probe(&spec, &model, 1e-3 * model.horizon())? {
            r.line(format!(
                "probe: piece {}, state {}: Gamma entry ({}, {}) = {:e} over a jump-free interval of length {}",
                w.piece + 1,
                w.state + 1,
                w.row + 1,
                w.col + 1,
                w.entry,
                w.delta
            ));
        }
    }
    let terminal = ctx.sc.terminal(spec.dim(), false)?;
    let step = ctx.step(&model, r)?;
    let driver: Arc<dyn Driver> = Arc::new(spec);
    let grid = solve_markovian(&model, &driver, &terminal, model.horizon(), step)?;
    r.line(format!(
        "u(0, state {}) = {}",
        x0 + 1,
        fmt_vec(grid.value(0.0, x0)?.iter().copied())
    ));
    r.tables.push(solution_table(&grid));
    Ok(())
}

fn linear_estimate(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let spec = ctx.sc.linear_spec(&model)?;
    let terminal = ctx.sc.terminal(spec.dim(), false)?;
    let seed = ctx.seed(r)?;
    let n_paths = ctx.paths(10_000, r)?;
    let step = ctx.step(&model, r)?;
    let est = closed_form_estimate(&spec, &terminal, &model, x0, model.horizon(), n_paths, seed)?;
    let driver: Arc<dyn Driver> = Arc::new(spec);
    let ode = solve_markovian(&model, &driver, &terminal, model.horizon(), step)?.value(0.0, x0)?;
    let mut table = Table::new("linear_estimate.csv", &["component", "mean", "stderr", "ode", "z_score"]);
    for c in 0..ode.len() {
        let z = if est.stderr[c] > 0.0 {
            (est.mean[c] - ode[c]) / est.stderr[c]
        } else {
            0.0
        };
        table.push(vec![(c + 1).into(), est.mean[c].into(), est.stderr[c].into(), ode[c].into(), z.into()]);
        r.line(format!(
            "component {}: closed form {:.9} ± {:.2e}, ODE {:.9} ({z:+.2} stderr)",
            c + 1,
            est.mean[c],
            est.stderr[c],
            ode[c]
        ));
    }
    r.tables.push(table);
    Ok(())
}

fn parse_kind(s: &str) -> Result<ComparisonKind, CliError> {
    ComparisonKind::ALL
        .into_iter()
        .find(|k| k.name() == s.trim())
        .ok_or_else(|| CliError::Config(format!("unknown comparison kind '{s}' (scalar, rowwise, joint, z-free)")))
}

fn kind_of(arg: KindArg) -> ComparisonKind {
    match arg {
        KindArg::Scalar => ComparisonKind::Scalar,
        KindArg::Rowwise => ComparisonKind::VectorRowwise,
        KindArg::Joint => ComparisonKind::VectorJoint,
        KindArg::ZFree => ComparisonKind::VectorZFree,
    }
}

fn witness_cells(w: Option<&Witness>) -> Vec<Cell> {
    match w {
        Some(w) => vec![
            w.time.into(),
            (w.state + 1).into(),
            (w.component + 1).into(),
            w.lhs.into(),
            w.rhs.into(),
            w.note.clone().into(),
        ],
        None => vec!["".into(), "".into(), "".into(), "".into(), "".into(), "".into()],
    }
}

const WITNESS_COLUMNS: [&str; 6] = ["time", "state", "component", "lhs", "rhs", "note"];

fn verdict_table(file: &str, prefix: &[&str]) -> Table {
    let mut header: Vec<&str> = prefix.to_vec();
    header.extend(["item", "passed"]);
    header.extend(WITNESS_COLUMNS);
    Table::new(file, &header)
}

fn push_report(table: &mut Table, prefix: Vec<Cell>, report: &ComparisonReport) {
    for v in &report.assumptions {
        let mut row = prefix.clone();
        row.extend([v.assumption.name().into(), v.passed.into()]);
        row.extend(witness_cells(v.witness.as_ref()));
        table.push(row);
    }
    if let Some(c) = &report.conclusion {
        let mut row = prefix.clone();
        row.extend(["conclusion u1 >= u2".into(), c.holds.into()]);
        row.extend(witness_cells(c.witness.as_ref()));
        table.push(row);
        let mut row = prefix;
        row.extend(["strictness bookkeeping".into(), c.strictness_consistent.into()]);
        row.extend(witness_cells(c.strictness_witness.as_ref()));
        table.push(row);
    }
}

fn comparison(ctx: &Context<'_>, r: &mut Report, kind: Option<KindArg>, exhaustive: Option<usize>) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let f1 = ctx.sc.driver(&model, false)?;
    let f2 = ctx.sc.driver(&model, true)?;
    if f1.dim() != f2.dim() {
        return Err(CliError::Config(format!("drivers have dimensions {} and {}", f1.dim(), f2.dim())));
    }
    let k = f1.dim();
    let g1 = ctx.sc.terminal(k, false)?;
    let g2 = ctx.sc.terminal(k, true)?;
    let step = ctx.step(&model, r)?;
    let kinds = match (kind, &ctx.sc.run.comparison) {
        (Some(a), _) => vec![kind_of(a)],
        (None, Some(s)) => vec![parse_kind(s)?],
        (None, None) => applicable_kinds(k),
    };
    r.param("kinds", kinds.iter().map(|k| k.name()).collect::<Vec<_>>());
    let exhaustive_samples = exhaustive.or(ctx.sc.run.exhaustive_samples).unwrap_or(0);
    let seed = if exhaustive_samples > 0 {
        r.param("exhaustive_samples", exhaustive_samples);
        ctx.seed(r)?
    } else {
        0
    };
    let options = ComparisonOptions {
        eps: ctx.eps(r),
        exhaustive_samples,
        seed,
        ..Default::default()
    };
    let sol1 = solve_markovian(&model, &f1, &g1, model.horizon(), step)?;
    let sol2 = solve_markovian(&model, &f2, &g2, model.horizon(), step)?;
    let mut table = verdict_table("comparison.csv", &["kind"]);
    let mut conclusion = None;
    for kind in kinds {
        let report = check_comparison(kind, &sol1, &sol2, &options)?;
        let status: Vec<String> = report
            .assumptions
            .iter()
            .map(|v| format!("{} {}", v.assumption.name(), if v.passed { "ok" } else { "FAILS" }))
            .collect();
        r.line(format!("{kind} (eps = {:e}): {}", report.eps, status.join(", ")));
        for v in report.assumptions.iter().filter(|v| !v.passed) {
            if let Some(w) = &v.witness {
                r.line(format!("  {}: {w}", v.assumption.name()));
            }
        }
        if let Some(c) = &report.conclusion {
            if report.all_assumptions_pass() && !(c.holds && c.strictness_consistent) {
                r.fail(format!("{kind}: every hypothesis holds but the conclusion does not"));
            }
            conclusion.get_or_insert_with(|| c.clone());
        }
        push_report(&mut table, vec![kind.name().into()], &report);
    }
    if let Some(c) = conclusion {
        if c.holds {
            r.line(format!("conclusion u1 >= u2 holds on the grid (min gap {:e})", c.min_gap));
        } else {
            let w = c.witness.map(|w| w.to_string()).unwrap_or_default();
            r.line(format!("conclusion u1 >= u2 FAILS: {w}"));
            r.fail(format!("u1 >= u2 is violated (min gap {:e})", c.min_gap));
        }
        r.line(format!(
            "strictness bookkeeping {} ({} equal points)",
            if c.strictness_consistent { "consistent" } else { "INCONSISTENT" },
            c.equal_points
        ));
    }
    r.tables.push(table);
    Ok(())
}

fn balanced(ctx: &Context<'_>, r: &mut Report, samples: Option<usize>) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let driver = ctx.sc.driver(&model, false)?;
    let seed = ctx.seed(r)?;
    let step = ctx.step(&model, r)?;
    let (s, t) = ctx.window(&model, r);
    let n = samples.or(ctx.sc.run.samples).unwrap_or(20);
    r.param("samples", n);
    let instances = random_instances(driver.dim(), model.num_states(), n, seed);
    let mut pairs = instances.into_iter().map(|i| (i.g1, i.g2));
    let mut sampler = |_: &mut _| pairs.next();
    let report = balanced_check(&driver, &mut sampler, &model, s, t, n, seed, step)?;
    let mut table = verdict_table("balanced.csv", &["sample", "kind"]);
    for (idx, rep) in &report.witnesses {
        push_report(&mut table, vec![(idx + 1).into(), rep.kind.name().into()], rep);
    }
    r.tables.push(table);
    if report.balanced {
        r.line(format!(
            "driver {} is balanced on all {} terminal pairs",
            driver.name(),
            report.samples_checked
        ));
    } else {
        r.line(format!(
            "driver {} is NOT balanced on {} of {} terminal pairs",
            driver.name(),
            report.witnesses.len(),
            report.samples_checked
        ));
        r.fail("driver is not balanced");
    }
    Ok(())
}

fn counterexample(ctx: &Context<'_>, r: &mut Report, which: Which) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let seed = ctx.seed(r)?;
    let n_paths = ctx.paths(1000, r)?;
    let step = ctx.step(&model, r)?;
    let t = ctx.sc.run.t.unwrap_or(1.0_f64.min(model.horizon()));
    r.param("t", t);
    let which = match which {
        Which::TwoStateDominance => Counterexample::TwoStateDominance,
        Which::JumpCounter => Counterexample::JumpCounter,
    };
    let report = run_counterexample(which, &model, t, n_paths, seed, step)?;
    let mut table = Table::new("counterexample.csv", &["path", "jumps", "y1_0", "y1_t", "y2_0", "y2_t"]);
    for row in &report.rows {
        table.push(vec![
            (row.path + 1).into(),
            row.jumps.into(),
            row.y1_0.into(),
            row.y1_t.into(),
            row.y2_0.into(),
            row.y2_t.into(),
        ]);
    }
    r.tables.push(table);
    let s = &report.summary;
    let y0 = report.rows.iter().fold(0.0_f64, |m, row| m.max(row.y1_0.abs()));
    r.line(format!("{n_paths} paths, t = {t}, eps = {:e}", s.eps));
    r.line(format!("Y1_0 = {y0}; Y1_t in [{:.9}, {:.9}]", s.min_y1_t, s.max_y1_t));
    r.line(format!(
        "squared seminorm of Z1 in [{:.12}, {:.12}]",
        s.z1_norm_sq_range.0, s.z1_norm_sq_range.1
    ));
    match &s.assumption_failure {
        Some((p, w)) => r.line(format!("comparison hypothesis fails on path {}: {w}", p + 1)),
        None => r.line("no comparison hypothesis failure found"),
    }
    match which {
        Counterexample::JumpCounter => {
            if t == 1.0 {
                if s.min_y1_t >= 1.0 - 1e-6 {
                    r.line(format!("min Y₁ ≥ 1 holds (min Y₁ = {:.9})", s.min_y1_t));
                } else {
                    r.line(format!("min Y₁ ≥ 1 FAILS (min Y₁ = {:.9})", s.min_y1_t));
                    r.fail("min Y₁ < 1");
                }
            } else {
                r.line(format!("min Y_t = {:.9} (the bound min Y₁ ≥ 1 is stated at t = 1)", s.min_y1_t));
            }
        }
        Counterexample::TwoStateDominance => {
            let d = &s.dominance;
            r.line(format!(
                "dominance {}: Q1 >= Q2 with {} violations, strict on {:.1}% of paths, initial values equal",
                if d.detected { "detected" } else { "NOT detected" },
                d.violations,
                100.0 * d.terminal_strict_frequency
            ));
            if !d.detected {
                r.fail("dominance not detected");
            }
        }
    }
    Ok(())
}

fn range(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let x0 = ctx.sc.initial_state()?;
    let driver = match &ctx.sc.driver {
        Some(_) => Some(ctx.sc.driver(&model, false)?),
        None => None,
    };
    let k = match (&driver, &ctx.sc.terminal) {
        (Some(d), _) => d.dim(),
        (None, Some(t)) => t.values.len(),
        (None, None) => return Err(CliError::Config("missing [terminal] block".into())),
    };
    let terminal = ctx.sc.terminal(k, false)?;
    let horizon = model.horizon();
    let value = match &driver {
        Some(d) => {
            let step = ctx.step(&model, r)?;
            Some(solve_markovian(&model, d, &terminal, horizon, step)?.value(0.0, x0)?)
        }
        None => None,
    };
    let mut table = Table::new(
        "essential_range.csv",
        &["component", "ess_inf", "ess_sup", "value", "inside", "reachable"],
    );
    for c in 0..k {
        let g: Vec<f64> = terminal.row(c).iter().copied().collect();
        let er = essential_range(&model, x0, horizon, &g)?;
        let reach: Vec<String> = (0..g.len()).filter(|&j| er.reachable[j]).map(|j| (j + 1).to_string()).collect();
        let (v, inside) = match &value {
            Some(v) => (Cell::Float(v[c]), Cell::Bool(er.contains_in_relative_interior(v[c]))),
            None => ("".into(), "".into()),
        };
        let mut line = format!(
            "component {}: ess range [{:.9}, {:.9}] over states {{{}}}{}",
            c + 1,
            er.inf,
            er.sup,
            reach.join(", "),
            if er.is_singleton() { " (singleton)" } else { "" }
        );
        if let Some(v) = &value {
            let pos = if er.contains_in_relative_interior(v[c]) {
                "inside the relative interior"
            } else {
                "NOT inside the relative interior"
            };
            line.push_str(&format!("; u(0, state {}) = {:.9} is {pos}", x0 + 1, v[c]));
        }
        r.line(line);
        table.push(vec![(c + 1).into(), er.inf.into(), er.sup.into(), v, inside, reach.join(" ").into()]);
    }
    r.tables.push(table);
    Ok(())
}

fn evaluation(ctx: &Context<'_>, r: &mut Report, negate: bool) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let driver = ctx.sc.driver(&model, false)?;
    let terminal = ctx.sc.terminal(driver.dim(), false)?;
    let step = ctx.step(&model, r)?;
    let (s, t) = ctx.window(&model, r);
    let req = EvaluationRequest {
        model: model.clone(),
        driver: driver.clone(),
        terminal,
        s,
        t,
        step,
    };
    let values: DMatrix<f64> = if negate { risk::rho(&req)? } else { risk::evaluate(&req)? };
    let (file, label) = if negate { ("rho.csv", "rho") } else { ("evaluation.csv", "E") };
    let mut table = Table {
        file: file.into(),
        header: y_header(&["state"], values.nrows()),
        rows: Vec::new(),
    };
    for (i, col) in values.column_iter().enumerate() {
        let mut row: Vec<Cell> = vec![(i + 1).into()];
        row.extend(col.iter().map(|&v| Cell::Float(v)));
        table.push(row);
        r.line(format!("{label}_{{{s},{t}}} at state {} = {}", i + 1, fmt_vec(col.iter().copied())));
    }
    r.tables.push(table);
    Ok(())
}

fn risk_properties(ctx: &Context<'_>, r: &mut Report, flags: &[String]) -> Result<(), CliError> {
    let model = ctx.sc.model()?;
    let driver = ctx.sc.driver(&model, false)?;
    let x0 = ctx.sc.initial_state()?;
    let seed = ctx.seed(r)?;
    let step = ctx.step(&model, r)?;
    let mc_paths = ctx.paths(2000, r)?;
    let (s, t) = ctx.window(&model, r);
    let mid = ctx.sc.run.mid.unwrap_or(0.5 * (s + t));
    r.param("mid", mid);
    let requested: &[String] = if flags.is_empty() { &ctx.sc.run.properties } else { flags };
    let explicit = !requested.is_empty();
    let properties: Vec<RiskProperty> = if explicit {
        requested.iter().map(|p| p.parse()).collect::<Result<_, _>>()?
    } else {
        RiskProperty::ALL.to_vec()
    };
    r.param(
        "properties",
        properties.iter().map(|p| Value::from(p.name())).collect::<Vec<_>>(),
    );
    let count = ctx.sc.run.instances.unwrap_or(10);
    r.param("instances", count);
    let instances = random_instances(driver.dim(), model.num_states(), count, seed);
    let setup = RiskSetup {
        model: model.clone(),
        s,
        mid,
        t,
        step,
        mc_paths,
        initial_state: x0,
    };
    let mut table = Table::new(
        "risk_properties.csv",
        &["property", "status", "instances", "max_error", "tolerance", "witness"],
    );
    let mut unmet = Vec::new();
    for p in properties {
        match check_property(p, &driver, &setup, &instances, seed) {
            Ok(v) => {
                let status = if v.passed { "pass" } else { "fail" };
                r.line(format!(
                    "{p}: {status} on {} instances (max error {:.3e}, tolerance {:.1e})",
                    v.instances_checked, v.max_error, v.tolerance
                ));
                if let Some(w) = &v.witness {
                    if !v.passed {
                        r.line(format!("  {w}"));
                    }
                }
                if !v.passed {
                    r.fail(format!("{p} does not hold"));
                }
                table.push(vec![
                    p.name().into(),
                    status.into(),
                    v.instances_checked.into(),
                    v.max_error.into(),
                    v.tolerance.into(),
                    v.witness.unwrap_or_default().into(),
                ]);
            }
            Err(chainbsde::Error::Hypothesis(why)) => {
                r.line(format!("{p}: not applicable ({why})"));
                table.push(vec![
                    p.name().into(),
                    "not-applicable".into(),
                    0usize.into(),
                    "".into(),
                    "".into(),
                    why.clone().into(),
                ]);
                unmet.push(why);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if explicit && !unmet.is_empty() {
        return Err(CliError::Precondition(unmet.join("; ")));
    }
    r.tables.push(table);
    Ok(())
}

fn verify(ctx: &Context<'_>, r: &mut Report) -> Result<(), CliError> {
    let model: Arc<RateModel> = ctx.sc.model()?;
    let seed = ctx.seed(r)?;
    let paths = ctx.paths(4000, r)?;
    let step = ctx.step(&model, r)?;
    let opts = VerifyOptions {
        seed,
        paths,
        step: Some(step),
        initial_state: ctx.sc.initial_state()?,
    };
    let results = run_suite(&model, &opts);
    let mut table = Table::new("verify.csv", &["suite", "passed", "checks", "detail"]);
    for s in &results {
        r.line(format!(
            "{:<11} {} ({} checks): {}",
            s.name,
            if s.passed { "PASS" } else { "FAIL" },
            s.checks,
            s.detail
        ));
        if !s.passed {
            r.fail(format!("suite {} failed", s.name));
        }
        table.push(vec![s.name.into(), s.passed.into(), s.checks.into(), s.detail.clone().into()]);
    }
    r.tables.push(table);
    Ok(())
}
