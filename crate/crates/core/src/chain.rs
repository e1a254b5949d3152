//! Finite-state continuous-time Markov chains with piecewise-constant generators.
//!
//! States are indices `0..N`. The generator follows the column convention:
//! `A[(j, i)]` is the jump intensity from state `i` to state `j`, and every
//! column sums to zero. A piece with end time `t_k` governs the half-open
//! interval `(t_{k-1}, t_k]`, so the rate process is left continuous.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};

const COLUMN_SUM_TOL: f64 = 1e-12;
const RATE_BOUND_TOL: f64 = 1e-12;

/// One constant-rate interval of a [`RateModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct RatePiece {
    pub end: f64,
    pub generator: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateModel {
    num_states: usize,
    pieces: Vec<RatePiece>,
    epsilon_r: f64,
    horizon: f64,
}

/// A single reason a candidate rate model is rejected.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TooFewStates(usize),
    NoPieces,
    EpsilonRange(f64),
    Shape {
        piece: usize,
        rows: usize,
        cols: usize,
    },
    NonFinite {
        piece: usize,
        row: usize,
        col: usize,
    },
    ColumnSum {
        piece: usize,
        column: usize,
        sum: f64,
    },
    RateBound {
        piece: usize,
        from: usize,
        to: usize,
        rate: f64,
        epsilon_r: f64,
    },
    PieceOrder {
        piece: usize,
        end: f64,
    },
    Coverage {
        last_end: f64,
        horizon: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewStates(n) => write!(f, "a chain needs at least 2 states, got {n}"),
            Violation::NoPieces => write!(f, "no rate pieces given"),
            Violation::EpsilonRange(e) => write!(f, "epsilon_r = {e} is outside (0, 1]"),
            Violation::Shape { piece, rows, cols } => {
                write!(f, "piece {piece}: matrix is {rows}x{cols}, not N x N")
            }
            Violation::NonFinite { piece, row, col } => {
                write!(f, "piece {piece}: entry ({row}, {col}) is not finite")
            }
            Violation::ColumnSum { piece, column, sum } => {
                write!(f, "piece {piece}: column sum nonzero (column {column} sums to {sum})")
            }
            Violation::RateBound {
                piece,
                from,
                to,
                rate,
                epsilon_r,
            } => write!(
                f,
                "piece {piece}: entry ({to}, {from}) = {rate} outside [eps_r, 1/eps_r] ∪ {{0}} with eps_r = {epsilon_r}"
            ),
            Violation::PieceOrder { piece, end } => {
                write!(f, "piece {piece}: end time {end} is not strictly increasing from 0")
            }
            Violation::Coverage { last_end, horizon } => {
                write!(f, "pieces end at {last_end} but the horizon is {horizon}")
            }
        }
    }
}

/// Outcome of [`RateModel::validate`]; empty means the model is valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

impl RateModel {
    /// Builds a model and rejects it unless every invariant holds.
    pub fn new(
        num_states: usize,
        pieces: Vec<RatePiece>,
        epsilon_r: f64,
        horizon: f64,
    ) -> Result<Self> {
        let model = Self::unchecked(num_states, pieces, epsilon_r, horizon);
        match model.validate().violations.into_iter().next() {
            None => Ok(model),
            Some(v) => Err(Error::InvalidModel(v)),
        }
    }

    /// Builds a model without validation, for reporting on candidates.
    pub fn unchecked(
        num_states: usize,
        pieces: Vec<RatePiece>,
        epsilon_r: f64,
        horizon: f64,
    ) -> Self {
        Self {
            num_states,
            pieces,
            epsilon_r,
            horizon,
        }
    }

    /// Time-homogeneous model on `(0, horizon]`.
    pub fn homogeneous(generator: DMatrix<f64>, epsilon_r: f64, horizon: f64) -> Result<Self> {
        let n = generator.nrows();
        Self::new(
            n,
            vec![RatePiece {
                end: horizon,
                generator,
            }],
            epsilon_r,
            horizon,
        )
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.num_states;
        if n < 2 {
            violations.push(Violation::TooFewStates(n));
        }
        if !(self.epsilon_r > 0.0 && self.epsilon_r <= 1.0) {
            violations.push(Violation::EpsilonRange(self.epsilon_r));
        }
        if self.pieces.is_empty() {
            violations.push(Violation::NoPieces);
        }
        let mut prev_end = 0.0;
        for (k, piece) in self.pieces.iter().enumerate() {
            if !(piece.end > prev_end) || !piece.end.is_finite() {
                violations.push(Violation::PieceOrder {
                    piece: k,
                    end: piece.end,
                });
            }
            prev_end = piece.end;
            let a = &piece.generator;
            if a.nrows() != n || a.ncols() != n {
                violations.push(Violation::Shape {
                    piece: k,
                    rows: a.nrows(),
                    cols: a.ncols(),
                });
                continue;
            }
            if let Some((idx, _)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                violations.push(Violation::NonFinite {
                    piece: k,
                    row: idx % n,
                    col: idx / n,
                });
                continue;
            }
            let scale = 1.0 + a.amax();
            for i in 0..n {
                let sum: f64 = a.column(i).sum();
                if sum.abs() > COLUMN_SUM_TOL * scale {
                    violations.push(Violation::ColumnSum {
                        piece: k,
                        column: i,
                        sum,
                    });
                }
            }
            let lo = self.epsilon_r * (1.0 - RATE_BOUND_TOL);
            let hi = (1.0 / self.epsilon_r) * (1.0 + RATE_BOUND_TOL);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let rate = a[(j, i)];
                    if rate != 0.0 && !(rate >= lo && rate <= hi) {
                        violations.push(Violation::RateBound {
                            piece: k,
                            from: i,
                            to: j,
                            rate,
                            epsilon_r: self.epsilon_r,
                        });
                    }
                }
            }
        }
        if let Some(last) = self.pieces.last() {
            if (last.end - self.horizon).abs() > 1e-12 * (1.0 + self.horizon.abs()) {
                violations.push(Violation::Coverage {
                    last_end: last.end,
                    horizon: self.horizon,
                });
            }
        }
        ValidationReport { violations }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn epsilon_r(&self) -> f64 {
        self.epsilon_r
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pieces(&self) -> &[RatePiece] {
        &self.pieces
    }

    pub fn piece_start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.pieces[k - 1].end
        }
    }

    /// Index of the piece governing time `t` (left continuous; `t = 0` maps to the first piece).
    pub fn piece_index(&self, t: f64) -> usize {
        self.pieces
            .iter()
            .position(|p| t <= p.end)
            .unwrap_or(self.pieces.len() - 1)
    }

    pub fn generator_at(&self, t: f64) -> &DMatrix<f64> {
        &self.pieces[self.piece_index(t)].generator
    }

    /// Intensity of the jump `from -> to` at time `t`.
    pub fn rate(&self, t: f64, from: usize, to: usize) -> f64 {
        self.generator_at(t)[(to, from)]
    }

    /// Splits `[s, t]` at piece boundaries, yielding `(start, end, piece)` with positive length.
    pub fn segments(&self, s: f64, t: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        if t <= s {
            return out;
        }
        let mut a = s;
        let mut k = self.piece_index_after(s);
        while a < t {
            let end = if k + 1 == self.pieces.len() {
                t
            } else {
                self.pieces[k].end.min(t)
            };
            if end > a {
                out.push((a, end, k));
            }
            a = end;
            k += 1;
            if k >= self.pieces.len() {
                break;
            }
        }
        out
    }

    /// Piece governing times just after `t`.
    fn piece_index_after(&self, t: f64) -> usize {
        self.pieces
            .iter()
            .position(|p| t < p.end)
            .unwrap_or(self.pieces.len() - 1)
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.num_states {
            return Err(Error::StateOutOfRange {
                state,
                num_states: self.num_states,
            });
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::TimeOutOfRange {
                time: t,
                lower: 0.0,
                upper: self.horizon,
            });
        }
        Ok(())
    }
}

/// Standard basis vector `e_i` in `R^n`.
pub fn basis(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub state: usize,
}

/// One realized trajectory on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPath {
    pub initial_state: usize,
    pub events: Vec<Jump>,
    pub horizon: f64,
}

impl ChainPath {
    /// `X_t` (right continuous).
    pub fn state_at(&self, t: f64) -> usize {
        self.events
            .iter()
            .take_while(|e| e.time <= t)
            .last()
            .map_or(self.initial_state, |e| e.state)
    }

    /// `X_{t-}`.
    pub fn state_before(&self, t: f64) -> usize {
        self.events
            .iter()
            .take_while(|e| e.time < t)
            .last()
            .map_or(self.initial_state, |e| e.state)
    }

    /// Number of jumps strictly before `t`.
    pub fn jumps_before(&self, t: f64) -> usize {
        self.events.iter().take_while(|e| e.time < t).count()
    }

    pub fn terminal_state(&self) -> usize {
        self.state_at(self.horizon)
    }

    /// Sojourns `(start, end, state)` covering `[0, horizon]`.
    pub fn sojourns(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut start = 0.0;
        let mut state = self.initial_state;
        for e in &self.events {
            out.push((start, e.time, state));
            start = e.time;
            state = e.state;
        }
        out.push((start, self.horizon, state));
        out
    }

    /// Checks ordering, distinct consecutive states and positive realized rates.
    pub fn check_against(&self, model: &RateModel) -> Result<()> {
        model.check_state(self.initial_state)?;
        let mut prev_t = 0.0;
        let mut prev_state = self.initial_state;
        for (k, e) in self.events.iter().enumerate() {
            model.check_state(e.state)?;
            if !(e.time > prev_t) || e.time > self.horizon {
                return Err(Error::InconsistentPath(format!(
                    "event {k} at time {} is out of order",
                    e.time
                )));
            }
            if e.state == prev_state {
                return Err(Error::InconsistentPath(format!(
                    "event {k} does not change state"
                )));
            }
            if model.rate(e.time, prev_state, e.state) <= 0.0 {
                return Err(Error::InconsistentPath(format!(
                    "event {k}: jump {prev_state} -> {} has zero intensity at t = {}",
                    e.state, e.time
                )));
            }
            prev_t = e.time;
            prev_state = e.state;
        }
        Ok(())
    }
}

/// Generator for path `index` of a batch seeded by `seed`; each path gets its own stream.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_sim_inputs(model: &RateModel, initial_state: usize, horizon: f64) -> Result<()> {
    if let Some(v) = model.validate().violations.into_iter().next() {
        return Err(Error::InvalidModel(v));
    }
    model.check_state(initial_state)?;
    if !(horizon > 0.0 && horizon <= model.horizon() * (1.0 + 1e-12)) {
        return Err(Error::TimeOutOfRange {
            time: horizon,
            lower: 0.0,
            upper: model.horizon(),
        });
    }
    Ok(())
}

/// Exact simulation: exponential holding times within each constant piece,
/// restarted at piece boundaries by memorylessness.
pub fn sample_path<R: Rng + ?Sized>(
    model: &RateModel,
    initial_state: usize,
    horizon: f64,
    rng: &mut R,
) -> ChainPath {
    let mut events = Vec::new();
    let mut state = initial_state;
    let mut t = 0.0;
    while t < horizon {
        let k = model.piece_index_after(t);
        let piece_end = if k + 1 == model.pieces().len() {
            horizon
        } else {
            model.pieces()[k].end.min(horizon)
        };
        let a = &model.pieces()[k].generator;
        let exit_rate = -a[(state, state)];
        if exit_rate <= 0.0 {
            t = piece_end;
            continue;
        }
        let hold: f64 = Exp1.sample(rng);
        let candidate = t + hold / exit_rate;
        if candidate > piece_end {
            t = piece_end;
            continue;
        }
        let u: f64 = rng.random::<f64>() * exit_rate;
        let mut acc = 0.0;
        let mut target = None;
        let mut last_positive = None;
        for j in 0..model.num_states() {
            if j == state || a[(j, state)] <= 0.0 {
                continue;
            }
            last_positive = Some(j);
            acc += a[(j, state)];
            if u < acc {
                target = Some(j);
                break;
            }
        }
        // rounding can leave u just above the accumulated total
        let target = target.or(last_positive).expect("positive exit rate");
        events.push(Jump {
            time: candidate,
            state: target,
        });
        state = target;
        t = candidate;
    }
    ChainPath {
        initial_state,
        events,
        horizon,
    }
}

/// Single path, deterministic in `seed` (same as path 0 of [`simulate_paths`]).
pub fn simulate_path(
    model: &RateModel,
    initial_state: usize,
    horizon: f64,
    seed: u64,
) -> Result<ChainPath> {
    check_sim_inputs(model, initial_state, horizon)?;
    Ok(sample_path(
        model,
        initial_state,
        horizon,
        &mut path_rng(seed, 0),
    ))
}

/// Batch of independent paths, simulated in parallel with one stream per path.
pub fn simulate_paths(
    model: &RateModel,
    initial_state: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ChainPath>> {
    check_sim_inputs(model, initial_state, horizon)?;
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| sample_path(model, initial_state, horizon, &mut path_rng(seed, i as u64)))
        .collect())
}

/// `∫_0^t A_u X_{u-} du`, integrated exactly over constant pieces.
pub fn compensator(path: &ChainPath, model: &RateModel, t: f64) -> DVector<f64> {
    let mut acc = DVector::zeros(model.num_states());
    for (a, b, state) in path.sojourns() {
        let b = b.min(t);
        if b <= a {
            continue;
        }
        for (s0, s1, k) in model.segments(a, b) {
            acc += model.pieces()[k].generator.column(state) * (s1 - s0);
        }
    }
    acc
}

/// `M_t = X_t - X_0 - ∫_0^t A_u X_{u-} du` at each grid time.
pub fn martingale_increments(
    path: &ChainPath,
    model: &RateModel,
    grid: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let n = model.num_states();
    grid.iter()
        .map(|&t| {
            if !(t >= 0.0 && t <= path.horizon) {
                return Err(Error::TimeOutOfRange {
                    time: t,
                    lower: 0.0,
                    upper: path.horizon,
                });
            }
            Ok(basis(n, path.state_at(t)) - basis(n, path.initial_state) - compensator(path, model, t))
        })
        .collect()
}

/// `P(s, t)`: column `i` is the law of `X_t` given `X_s = e_i`.
pub fn transition_matrix(model: &RateModel, s: f64, t: f64) -> Result<DMatrix<f64>> {
    if s > t {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("s = {s} exceeds t = {t}"),
        });
    }
    model.check_time(s)?;
    model.check_time(t)?;
    let n = model.num_states();
    let mut p = DMatrix::identity(n, n);
    for (a, b, k) in model.segments(s, t) {
        let step = (&model.pieces()[k].generator * (b - a)).exp();
        p = step * p;
    }
    Ok(p)
}

/// States carrying positive probability at `t` when started from `from` at `s`.
pub fn reachable_states(model: &RateModel, from: usize, s: f64, t: f64) -> Vec<bool> {
    let n = model.num_states();
    let mut reach = vec![false; n];
    reach[from] = true;
    for (_, _, k) in model.segments(s, t) {
        let a = &model.pieces()[k].generator;
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                if !reach[i] {
                    continue;
                }
                for j in 0..n {
                    if !reach[j] && j != i && a[(j, i)] > 0.0 {
                        reach[j] = true;
                        changed = true;
                    }
                }
            }
        }
    }
    reach
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> RateModel {
        RateModel::homogeneous(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]), 1.0, 1.0)
            .unwrap()
    }

    #[test]
    fn symmetric_two_state_validates() {
        assert!(two_state().validate().is_ok());
    }

    #[test]
    fn column_sum_violation_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.1, -1.0]);
        let m = RateModel::unchecked(2, vec![RatePiece { end: 1.0, generator: a }], 1.0, 1.0);
        let report = m.validate();
        assert!(matches!(report.first(), Some(Violation::ColumnSum { column: 0, .. })));
        assert!(report.first().unwrap().to_string().contains("column sum nonzero"));
    }

    #[test]
    fn rate_below_epsilon_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.5, -1.0]);
        let m = RateModel::unchecked(2, vec![RatePiece { end: 1.0, generator: a }], 0.9, 1.0);
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RateBound { from: 0, to: 1, .. })));
        assert!(report.first().unwrap().to_string().contains("outside [eps_r, 1/eps_r]"));
    }

    #[test]
    fn piece_order_and_coverage() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let m = RateModel::unchecked(
            2,
            vec![
                RatePiece { end: 0.5, generator: a.clone() },
                RatePiece { end: 0.5, generator: a.clone() },
            ],
            1.0,
            0.5,
        );
        assert!(matches!(m.validate().first(), Some(Violation::PieceOrder { piece: 1, .. })));
        let m = RateModel::unchecked(2, vec![RatePiece { end: 0.5, generator: a }], 1.0, 1.0);
        assert!(matches!(m.validate().first(), Some(Violation::Coverage { .. })));
    }

    #[test]
    fn absorbing_model_never_jumps() {
        let m = RateModel::homogeneous(DMatrix::zeros(3, 3), 0.5, 2.0).unwrap();
        let p = simulate_path(&m, 1, 2.0, 9).unwrap();
        assert!(p.events.is_empty());
        assert_eq!(p.terminal_state(), 1);
    }

    #[test]
    fn same_seed_same_path() {
        let m = two_state();
        assert_eq!(simulate_path(&m, 0, 1.0, 5).unwrap(), simulate_path(&m, 0, 1.0, 5).unwrap());
        assert_eq!(
            simulate_paths(&m, 0, 1.0, 3, 5).unwrap()[0],
            simulate_path(&m, 0, 1.0, 5).unwrap()
        );
    }

    #[test]
    fn horizon_out_of_range_is_rejected() {
        assert!(matches!(
            simulate_path(&two_state(), 0, 2.0, 1),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            simulate_path(&two_state(), 2, 1.0, 1),
            Err(Error::StateOutOfRange { .. })
        ));
    }

    #[test]
    fn no_jump_martingale_is_minus_compensator() {
        let m = two_state();
        let path = ChainPath {
            initial_state: 0,
            events: vec![],
            horizon: 1.0,
        };
        let vals = martingale_increments(&path, &m, &[0.0, 1.0]).unwrap();
        assert_eq!(vals[0], DVector::zeros(2));
        assert!((vals[1][0] - 1.0).abs() < 1e-15);
        assert!((vals[1][1] + 1.0).abs() < 1e-15);
        assert!(martingale_increments(&path, &m, &[1.5]).is_err());
    }

    #[test]
    fn transition_two_state_closed_form() {
        let p = transition_matrix(&two_state(), 0.0, 1.0).unwrap();
        let expected = (1.0 + (-2.0f64).exp()) / 2.0;
        assert!((p[(0, 0)] - expected).abs() < 1e-12);
        assert!((p[(1, 1)] - expected).abs() < 1e-12);
        assert_eq!(transition_matrix(&two_state(), 0.3, 0.3).unwrap(), DMatrix::identity(2, 2));
        assert!(transition_matrix(&two_state(), 0.6, 0.3).is_err());
    }

    #[test]
    fn piecewise_lookup_is_left_continuous() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let m = RateModel::new(
            2,
            vec![
                RatePiece { end: 0.5, generator: a.clone() },
                RatePiece { end: 1.0, generator: a * 2.0 },
            ],
            0.5,
            1.0,
        )
        .unwrap();
        assert_eq!(m.piece_index(0.5), 0);
        assert_eq!(m.piece_index(0.5 + 1e-9), 1);
        assert_eq!(m.segments(0.25, 1.0), vec![(0.25, 0.5, 0), (0.5, 1.0, 1)]);
        assert_eq!(m.segments(0.5, 1.0), vec![(0.5, 1.0, 1)]);
    }

    #[test]
    fn reachability_respects_piece_order() {
        // piece 0: 0 -> 1 only; piece 1: 1 -> 2 only
        let mut a0 = DMatrix::zeros(3, 3);
        a0[(1, 0)] = 1.0;
        a0[(0, 0)] = -1.0;
        let mut a1 = DMatrix::zeros(3, 3);
        a1[(2, 1)] = 1.0;
        a1[(1, 1)] = -1.0;
        let m = RateModel::new(
            3,
            vec![
                RatePiece { end: 0.5, generator: a0.clone() },
                RatePiece { end: 1.0, generator: a1.clone() },
            ],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(reachable_states(&m, 0, 0.0, 1.0), vec![true, true, true]);
        assert_eq!(reachable_states(&m, 0, 0.5, 1.0), vec![true, false, false]);
        let m2 = RateModel::new(
            3,
            vec![
                RatePiece { end: 0.5, generator: a1 },
                RatePiece { end: 1.0, generator: a0 },
            ],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(reachable_states(&m2, 0, 0.0, 1.0), vec![true, true, false]);
    }
}
