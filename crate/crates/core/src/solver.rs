//! Markovian BSDE solver.
//!
//! With `Y_t = u(t, X_t)` and `ΔY = Z ΔX`, the BSDE is equivalent to the
//! backward system
//!
//! ```text
//! du/dt(t, e_i) = -F(t, u(t, e_i), Z_i(t)) - Σ_j (e_j* A_t e_i)(u(t, e_j) - u(t, e_i)),
//! ```
//!
//! where `Z_i(t)` is the canonical matrix with `Z_i(t)(e_j - e_i) =
//! u(t, e_j) - u(t, e_i)`. The system is integrated with classical RK4.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chain::{ChainPath, RateModel};
use crate::driver::{eval_with, Driver};
use crate::error::{Error, Result};
use crate::psi::{canonical_from_jumps, PsiMatrix};

/// Default step as a fraction of the solve interval.
pub const DEFAULT_RELATIVE_STEP: f64 = 1e-4;

/// Solution `u(t_k, e_i) ∈ R^K` on a uniform grid.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    times: Vec<f64>,
    /// `values[k]` is `K × N`; column `i` is `u(t_k, e_i)`.
    values: Vec<DMatrix<f64>>,
    step: f64,
    model: Arc<RateModel>,
    driver: Arc<dyn Driver>,
    terminal: DMatrix<f64>,
    absorbing: Vec<bool>,
}

impl ValueGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn model(&self) -> &Arc<RateModel> {
        &self.model
    }

    pub fn driver(&self) -> &Arc<dyn Driver> {
        &self.driver
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.terminal
    }

    pub fn absorbing(&self) -> &[bool] {
        &self.absorbing
    }

    pub fn dim(&self) -> usize {
        self.terminal.nrows()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// `u` at the first grid time.
    pub fn initial(&self) -> &DMatrix<f64> {
        &self.values[0]
    }

    /// Index of the grid point at `t`, to a relative tolerance of `1e-9` steps.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if self.times.len() == 1 {
            return if (t - self.times[0]).abs() <= 1e-12 * (1.0 + t.abs()) {
                Ok(0)
            } else {
                Err(Error::OffGrid(t))
            };
        }
        let x = (t - self.start()) / self.step;
        let k = x.round();
        if k < 0.0 || k as usize >= self.times.len() || (x - k).abs() > 1e-9 {
            return Err(Error::OffGrid(t));
        }
        Ok(k as usize)
    }

    /// `u(t, e_state)` at a grid time.
    pub fn value(&self, t: f64, state: usize) -> Result<DVector<f64>> {
        self.model.check_state(state)?;
        let k = self.index_of(t)?;
        Ok(self.values[k].column(state).into_owned())
    }

    /// Piecewise-linear interpolation of `u(t, ·)`; `t` is clamped to the grid.
    pub fn interpolate(&self, t: f64) -> DMatrix<f64> {
        if self.times.len() == 1 || t <= self.start() {
            return self.values[0].clone();
        }
        if t >= self.end() {
            return self.values[self.values.len() - 1].clone();
        }
        let x = (t - self.start()) / self.step;
        let k = (x.floor() as usize).min(self.times.len() - 2);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
    }

    /// Canonical `Z` at a grid time; zero for absorbed states.
    pub fn z_at(&self, t: f64, state: usize) -> Result<DMatrix<f64>> {
        self.model.check_state(state)?;
        let k = self.index_of(t)?;
        Ok(self.z_from(&self.values[k], t, state))
    }

    /// Canonical `Z` built from the interpolated `u(t, ·)`.
    pub fn z_interp(&self, t: f64, state: usize) -> DMatrix<f64> {
        self.z_from(&self.interpolate(t), t, state)
    }

    fn z_from(&self, u: &DMatrix<f64>, t: f64, state: usize) -> DMatrix<f64> {
        if self.absorbing[state] {
            return DMatrix::zeros(u.nrows(), u.ncols());
        }
        let psi = psi_for(&self.model, self.model.piece_index(t), state);
        jump_z(u, &psi)
    }

    /// The restriction of this grid to `[s, end]`, reusing the stored values.
    pub fn restrict_from(&self, s: f64) -> Result<ValueGrid> {
        let k = self.index_of(s)?;
        Ok(ValueGrid {
            times: self.times[k..].to_vec(),
            values: self.values[k..].to_vec(),
            ..self.clone()
        })
    }
}

fn psi_for(model: &RateModel, piece: usize, state: usize) -> PsiMatrix {
    let rates = model.pieces()[piece].generator.column(state).into_owned();
    PsiMatrix::new(state, rates).expect("validated model has valid rate columns")
}

/// Canonical `Z` at the state of `psi` carrying the jump differences of `u`.
fn jump_z(u: &DMatrix<f64>, psi: &PsiMatrix) -> DMatrix<f64> {
    let s = psi.state();
    let diffs = DMatrix::from_fn(u.nrows(), u.ncols(), |k, j| u[(k, j)] - u[(k, s)]);
    canonical_from_jumps(psi, &diffs)
}

struct System<'a> {
    model: &'a RateModel,
    driver: &'a dyn Driver,
    absorbed: &'a [bool],
    psi: Vec<Vec<PsiMatrix>>,
}

impl<'a> System<'a> {
    fn new(model: &'a RateModel, driver: &'a dyn Driver, absorbed: &'a [bool]) -> Self {
        let n = model.num_states();
        let psi = (0..model.pieces().len())
            .map(|k| (0..n).map(|i| psi_for(model, k, i)).collect())
            .collect();
        Self {
            model,
            driver,
            absorbed,
            psi,
        }
    }

    fn rhs(&self, t: f64, piece: usize, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.model.num_states();
        let mut du = DMatrix::zeros(u.nrows(), n);
        for i in 0..n {
            if self.absorbed[i] {
                continue;
            }
            let psi = &self.psi[piece][i];
            let ui = u.column(i).into_owned();
            let z = jump_z(u, psi);
            let f = eval_with(self.driver, t, piece, psi, &ui, &z);
            if f.len() != ui.len() {
                return Err(Error::Dimension {
                    expected: format!("driver output of length {}", ui.len()),
                    got: f.len().to_string(),
                });
            }
            let mut col = -f;
            for j in psi.active_targets() {
                col -= (u.column(j) - &ui) * psi.rates()[j];
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: t, state: i });
            }
            du.set_column(i, &col);
        }
        Ok(du)
    }

    /// One RK4 step from `b` down to `a` within a single rate piece.
    fn step_back(&self, a: f64, b: f64, piece: usize, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let h = b - a;
        let mid = b - 0.5 * h;
        let k1 = self.rhs(b, piece, u)?;
        let k2 = self.rhs(mid, piece, &(u - &k1 * (0.5 * h)))?;
        let k3 = self.rhs(mid, piece, &(u - &k2 * (0.5 * h)))?;
        let k4 = self.rhs(a, piece, &(u - &k3 * h))?;
        Ok(u - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }
}

/// Number of uniform steps of size at most `step` on an interval of `length`,
/// robust to round-off so that aligned sub-intervals share grid points.
pub fn step_count(length: f64, step: f64) -> usize {
    let x = length / step;
    let r = x.round();
    let n = if (x - r).abs() <= 1e-7 * x.max(1.0) { r } else { x.ceil() };
    (n as usize).max(1)
}

fn solve_impl(
    model: &Arc<RateModel>,
    driver: &Arc<dyn Driver>,
    terminal: &DMatrix<f64>,
    s: f64,
    t: f64,
    step: f64,
    absorbed: Vec<bool>,
) -> Result<ValueGrid> {
    let n_states = model.num_states();
    if let Some(v) = model.validate().first() {
        return Err(Error::InvalidModel(v.clone()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: format!("{step} is not a positive finite number"),
        });
    }
    if terminal.nrows() != driver.dim() || terminal.ncols() != n_states {
        return Err(Error::Dimension {
            expected: format!("{}x{}", driver.dim(), n_states),
            got: format!("{}x{}", terminal.nrows(), terminal.ncols()),
        });
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "terminal",
            reason: "non-finite terminal value".into(),
        });
    }
    model.check_time(t)?;
    if !(s >= 0.0 && s <= t) {
        return Err(Error::TimeOutOfRange {
            time: s,
            lower: 0.0,
            upper: t,
        });
    }
    if s == t {
        return Ok(ValueGrid {
            times: vec![t],
            values: vec![terminal.clone()],
            step,
            model: model.clone(),
            driver: driver.clone(),
            terminal: terminal.clone(),
            absorbing: absorbed,
        });
    }
    let n = step_count(t - s, step);
    let h = (t - s) / n as f64;
    let times: Vec<f64> = (0..=n).map(|k| if k == n { t } else { s + k as f64 * h }).collect();
    let system = System::new(model, driver.as_ref(), &absorbed);
    let mut values = vec![DMatrix::zeros(0, 0); n + 1];
    let mut u = terminal.clone();
    values[n] = u.clone();
    for k in (0..n).rev() {
        for (a, b, piece) in model.segments(times[k], times[k + 1]).into_iter().rev() {
            u = system.step_back(a, b, piece, &u)?;
        }
        values[k] = u.clone();
    }
    Ok(ValueGrid {
        times,
        values,
        step: h,
        model: model.clone(),
        driver: driver.clone(),
        terminal: terminal.clone(),
        absorbing: absorbed,
    })
}

/// Solves on `[0, horizon]` from `u(horizon, e_i) = terminal.column(i)`.
pub fn solve_markovian(
    model: &Arc<RateModel>,
    driver: &Arc<dyn Driver>,
    terminal: &DMatrix<f64>,
    horizon: f64,
    step: f64,
) -> Result<ValueGrid> {
    solve_on(model, driver, terminal, 0.0, horizon, step)
}

/// Solves on `[s, t]` with terminal values at `t`.
pub fn solve_on(
    model: &Arc<RateModel>,
    driver: &Arc<dyn Driver>,
    terminal: &DMatrix<f64>,
    s: f64,
    t: f64,
    step: f64,
) -> Result<ValueGrid> {
    solve_impl(model, driver, terminal, s, t, step, vec![false; model.num_states()])
}

/// Terminal time `min(first entry into absorbing, horizon)`: absorbed rows
/// are frozen at their terminal values and carry no driver or `Z`.
pub fn solve_hitting_time(
    model: &Arc<RateModel>,
    driver: &Arc<dyn Driver>,
    terminal: &DMatrix<f64>,
    horizon: f64,
    step: f64,
    absorbing: &[usize],
) -> Result<ValueGrid> {
    let mut absorbed = vec![false; model.num_states()];
    for &a in absorbing {
        model.check_state(a)?;
        absorbed[a] = true;
    }
    solve_impl(model, driver, terminal, 0.0, horizon, step, absorbed)
}

fn path_nodes(path: &ChainPath, model: &RateModel, s: f64, t: f64, extra: &[f64]) -> Vec<f64> {
    let mut nodes: Vec<f64> = extra.iter().copied().filter(|&x| x > s && x < t).collect();
    nodes.extend(path.events.iter().map(|e| e.time).filter(|&x| x > s && x < t));
    nodes.extend(model.pieces().iter().map(|p| p.end).filter(|&x| x > s && x < t));
    nodes.push(s);
    nodes.push(t);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    nodes
}

/// `g(X_T) + ∫ F du - ∫ Z dM` along `path`, using the interpolated solution.
/// For an exact solution this equals `u(start, X_start)`.
pub fn path_representation(path: &ChainPath, grid: &ValueGrid) -> Result<DVector<f64>> {
    representation(path, grid, true)
}

/// `g(X_T) + ∫ F du` along `path`: an unbiased sample of `u(start, X_start)`
/// given `X_start`.
pub fn path_drift_sample(path: &ChainPath, grid: &ValueGrid) -> Result<DVector<f64>> {
    representation(path, grid, false)
}

fn representation(path: &ChainPath, grid: &ValueGrid, martingale: bool) -> Result<DVector<f64>> {
    let (s, t) = (grid.start(), grid.end());
    if (path.horizon - t).abs() > 1e-12 * (1.0 + t) {
        return Err(Error::InvalidParameter {
            name: "path",
            reason: format!("path horizon {} differs from grid end {t}", path.horizon),
        });
    }
    let model = grid.model();
    let nodes = path_nodes(path, model, s, t, grid.times());
    let integrand = |time: f64, piece: usize, state: usize| -> DVector<f64> {
        if grid.absorbing[state] {
            return DVector::zeros(grid.dim());
        }
        let u = grid.interpolate(time);
        let psi = psi_for(model, piece, state);
        let z = jump_z(&u, &psi);
        let ui = u.column(state).into_owned();
        let f = eval_with(grid.driver.as_ref(), time, piece, &psi, &ui, &z);
        if martingale {
            f + &z * psi.rates()
        } else {
            f
        }
    };
    let mut acc = grid.terminal.column(path.state_at(t)).into_owned();
    for w in nodes.windows(2) {
        let (c, d) = (w[0], w[1]);
        let state = path.state_at(c);
        let piece = model.piece_index(0.5 * (c + d));
        acc += (integrand(c, piece, state) + integrand(d, piece, state)) * (0.5 * (d - c));
    }
    for e in path.events.iter().filter(|e| martingale && e.time > s && e.time <= t) {
        let old = path.state_before(e.time);
        if grid.absorbing[old] {
            continue;
        }
        let u = grid.interpolate(e.time);
        acc -= u.column(e.state) - u.column(old);
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            time: t,
            state: path.state_at(t),
        });
    }
    Ok(acc)
}

/// `|u(start, X_start) - [g(X_T) + ∫ F du - ∫ Z dM]|` (max norm).
pub fn forward_residual(path: &ChainPath, grid: &ValueGrid) -> Result<f64> {
    let rep = path_representation(path, grid)?;
    let u0 = grid.values[0].column(path.state_at(grid.start()));
    Ok((u0 - rep).amax())
}

/// Information available to a predictable `Z` process.
#[derive(Clone, Copy, Debug)]
pub struct ZQuery<'a> {
    pub t: f64,
    pub piece: usize,
    /// `X_{t-}`
    pub state: usize,
    /// Number of jumps strictly before `t`.
    pub jumps: usize,
    pub psi: &'a PsiMatrix,
}

pub type ZProcess<'a> = dyn Fn(&ZQuery<'_>) -> DMatrix<f64> + Sync + 'a;

/// A forward trajectory, right-continuous at the recorded nodes.
#[derive(Clone, Debug)]
pub struct ForwardTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl ForwardTrajectory {
    pub fn terminal(&self) -> &DVector<f64> {
        self.values.last().expect("trajectory is never empty")
    }
}

/// Integrates `dY = [-F(t, Y, Z) - Z A X_{t-}] dt + Z dX` forward along
/// `path` from `Y_0 = y0`, with RK4 between jumps.
pub fn forward_sde(
    model: &RateModel,
    path: &ChainPath,
    y0: &DVector<f64>,
    z_process: &ZProcess<'_>,
    driver: &dyn Driver,
    step: f64,
) -> Result<ForwardTrajectory> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: format!("{step} is not a positive finite number"),
        });
    }
    if y0.len() != driver.dim() {
        return Err(Error::Dimension {
            expected: driver.dim().to_string(),
            got: y0.len().to_string(),
        });
    }
    let horizon = path.horizon;
    model.check_time(horizon)?;
    let n = step_count(horizon, step);
    let grid: Vec<f64> = (1..n).map(|k| k as f64 * horizon / n as f64).collect();
    let nodes = path_nodes(path, model, 0.0, horizon, &grid);
    let mut y = y0.clone();
    let mut times = vec![0.0];
    let mut values = vec![y.clone()];
    let mut events = path.events.iter().peekable();
    for w in nodes.windows(2) {
        let (c, d) = (w[0], w[1]);
        let state = path.state_at(c);
        let jumps = path.jumps_before(d);
        let piece = model.piece_index(0.5 * (c + d));
        let psi = psi_for(model, piece, state);
        let drift = |t: f64, y: &DVector<f64>| -> DVector<f64> {
            let z = z_process(&ZQuery {
                t,
                piece,
                state,
                jumps,
                psi: &psi,
            });
            let f = eval_with(driver, t, piece, &psi, y, &z);
            -(f + &z * psi.rates())
        };
        let h = d - c;
        let k1 = drift(c, &y);
        let k2 = drift(c + 0.5 * h, &(&y + &k1 * (0.5 * h)));
        let k3 = drift(c + 0.5 * h, &(&y + &k2 * (0.5 * h)));
        let k4 = drift(d, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        while let Some(e) = events.peek() {
            if e.time > d + 1e-14 * (1.0 + d) {
                break;
            }
            let z = z_process(&ZQuery {
                t: e.time,
                piece,
                state,
                jumps,
                psi: &psi,
            });
            y += z.column(e.state) - z.column(state);
            events.next();
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: d, state });
        }
        times.push(d);
        values.push(y.clone());
    }
    Ok(ForwardTrajectory { times, values })
}
