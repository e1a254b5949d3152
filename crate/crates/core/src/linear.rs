//! Linear BSDEs `F = φ + β Y + α Z* γ`, their adjoint process `Γ` and the
//! closed-form solution `Y_t = E[Γ_t^T Q + ∫_t^T Γ_t^u φ_u du | F_t]`.
//!
//! Between jumps `Γ` solves `dΓ_t^s = Γ_t^s (β - α ψ⁺ A X γ*) ds`; at a jump
//! it is right-multiplied by `I + α ψ⁺ ΔX γ*`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::chain::{simulate_paths, ChainPath, RateModel};
use crate::driver::{Driver, DriverContext, DriverFlags};
use crate::error::{Error, Result};
use crate::psi::PsiMatrix;

/// Coefficients of a linear driver, constant on each rate piece; `α` also
/// depends on the current state.
#[derive(Clone, Debug)]
pub struct LinearDriverSpec {
    k: usize,
    n: usize,
    /// `alpha[piece][state]`, `K × N`
    alpha: Vec<Vec<DMatrix<f64>>>,
    beta: Vec<DMatrix<f64>>,
    gamma: Vec<DVector<f64>>,
    phi: Vec<DVector<f64>>,
    lipschitz: f64,
    /// `ψ` per piece and state of the model the spec was built for.
    psi: Vec<Vec<PsiMatrix>>,
}

fn finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

impl LinearDriverSpec {
    pub fn new(
        model: &RateModel,
        alpha: Vec<Vec<DMatrix<f64>>>,
        beta: Vec<DMatrix<f64>>,
        gamma: Vec<DVector<f64>>,
        phi: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let pieces = model.pieces().len();
        let n = model.num_states();
        let k = beta.first().map_or(0, |b| b.nrows());
        if k == 0 {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: "empty coefficient list".into(),
            });
        }
        let dim_err = |what: &str| Error::Dimension {
            expected: format!("{pieces} pieces of {what} with K = {k}, N = {n}"),
            got: "mismatched coefficient shapes".into(),
        };
        if alpha.len() != pieces || beta.len() != pieces || gamma.len() != pieces || phi.len() != pieces {
            return Err(dim_err("coefficients"));
        }
        for p in 0..pieces {
            if alpha[p].len() != n || alpha[p].iter().any(|a| a.nrows() != k || a.ncols() != n) {
                return Err(dim_err("alpha"));
            }
            if beta[p].nrows() != k || beta[p].ncols() != k {
                return Err(dim_err("beta"));
            }
            if gamma[p].len() != k || phi[p].len() != k {
                return Err(dim_err("gamma/phi"));
            }
            let all_finite = alpha[p].iter().all(finite)
                && finite(&beta[p])
                && gamma[p].iter().chain(phi[p].iter()).all(|v| v.is_finite());
            if !all_finite {
                return Err(Error::InvalidParameter {
                    name: "linear spec",
                    reason: format!("non-finite coefficient on piece {p}"),
                });
            }
        }
        let psi: Vec<Vec<PsiMatrix>> = model
            .pieces()
            .iter()
            .map(|piece| {
                (0..n)
                    .map(|i| PsiMatrix::new(i, piece.generator.column(i).into_owned()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut lipschitz: f64 = 0.0;
        for p in 0..pieces {
            let beta_norm = beta[p].clone().svd(false, false).singular_values.max();
            for i in 0..n {
                let a = &alpha[p][i];
                let quad = a * psi[p][i].pseudoinverse() * a.transpose();
                let quad_norm = quad.symmetric_eigen().eigenvalues.amax();
                lipschitz = lipschitz.max(beta_norm + quad_norm.sqrt() * gamma[p].norm());
            }
        }
        Ok(Self {
            k,
            n,
            alpha,
            beta,
            gamma,
            phi,
            lipschitz,
            psi,
        })
    }

    /// The same coefficients on every piece.
    pub fn constant(
        model: &RateModel,
        alpha: Vec<DMatrix<f64>>,
        beta: DMatrix<f64>,
        gamma: DVector<f64>,
        phi: DVector<f64>,
    ) -> Result<Self> {
        let p = model.pieces().len();
        Self::new(model, vec![alpha; p], vec![beta; p], vec![gamma; p], vec![phi; p])
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    pub fn num_pieces(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha(&self, piece: usize, state: usize) -> &DMatrix<f64> {
        &self.alpha[piece][state]
    }

    pub fn beta(&self, piece: usize) -> &DMatrix<f64> {
        &self.beta[piece]
    }

    pub fn gamma(&self, piece: usize) -> &DVector<f64> {
        &self.gamma[piece]
    }

    pub fn phi(&self, piece: usize) -> &DVector<f64> {
        &self.phi[piece]
    }

    /// `β - α ψ⁺ A X γ*` at a piece and state.
    pub fn generator(&self, piece: usize, state: usize) -> DMatrix<f64> {
        let psi = &self.psi[piece][state];
        let u = &self.alpha[piece][state] * psi.pseudoinverse() * psi.rates();
        &self.beta[piece] - u * self.gamma[piece].transpose()
    }

    /// `α ψ⁺ (e_to - e_from)`, the column of the rank-one jump update.
    pub fn jump_vector(&self, piece: usize, from: usize, to: usize) -> DVector<f64> {
        let plus = self.psi[piece][from].pseudoinverse();
        let dx = plus.column(to) - plus.column(from);
        &self.alpha[piece][from] * dx
    }

    /// `I + α ψ⁺ (e_to - e_from) γ*`
    pub fn jump_update(&self, piece: usize, from: usize, to: usize) -> DMatrix<f64> {
        DMatrix::identity(self.k, self.k) + self.jump_vector(piece, from, to) * self.gamma[piece].transpose()
    }

    fn check_model(&self, model: &RateModel) -> Result<()> {
        if model.pieces().len() != self.num_pieces() || model.num_states() != self.n {
            return Err(Error::Dimension {
                expected: format!("{} pieces on {} states", self.num_pieces(), self.n),
                got: format!("{} pieces on {} states", model.pieces().len(), model.num_states()),
            });
        }
        Ok(())
    }
}

impl Driver for LinearDriverSpec {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, ctx: &DriverContext<'_>, y: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        let p = ctx.piece;
        &self.phi[p] + &self.beta[p] * y + &self.alpha[p][ctx.state] * (z.transpose() * &self.gamma[p])
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn flags(&self) -> DriverFlags {
        let phi_zero = self.phi.iter().all(|v| v.iter().all(|&x| x == 0.0));
        let alpha_zero = self.alpha.iter().flatten().all(|a| a.iter().all(|&x| x == 0.0));
        let gamma_zero = self.gamma.iter().all(|g| g.iter().all(|&x| x == 0.0));
        let beta_zero = self.beta.iter().all(|b| b.iter().all(|&x| x == 0.0));
        let beta_diag = self
            .beta
            .iter()
            .all(|b| (0..self.k).all(|i| (0..self.k).all(|j| i == j || b[(i, j)] == 0.0)));
        let z_free = alpha_zero || gamma_zero;
        // α Z* γ mixes rows of Z unless it vanishes or K = 1
        let rows_ok = z_free || self.k == 1;
        DriverFlags {
            depends_on_y: !beta_zero,
            depends_on_z: !z_free,
            normalized_at_zero: phi_zero && beta_zero,
            row_separable: beta_diag && rows_ok,
            y_separable: beta_diag,
            positively_homogeneous: phi_zero,
            concave: true,
        }
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProductRule {
    /// `Π exp(H(u_mid) Δ)`: exact for piecewise-constant `H`, second order
    /// otherwise.
    #[default]
    Exponential,
    /// `Π (I + H(u_mid) Δ)`: the literal product-integral factors, first order.
    Euler,
}

fn check_interval(s: f64, t: f64, n: usize) -> Result<()> {
    if !(s < t) || !s.is_finite() || !t.is_finite() {
        return Err(Error::InvalidParameter {
            name: "interval",
            reason: format!("need s < t, got s = {s}, t = {t}"),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "at least one subdivision is needed".into(),
        });
    }
    Ok(())
}

/// `Π_{]s,t]} (I + H(u) du)` over `n` uniform subintervals, earlier factors
/// on the left.
pub fn product_integral(
    h: &dyn Fn(f64) -> DMatrix<f64>,
    s: f64,
    t: f64,
    n: usize,
    rule: ProductRule,
) -> Result<DMatrix<f64>> {
    check_interval(s, t, n)?;
    let dt = (t - s) / n as f64;
    let mut out: Option<DMatrix<f64>> = None;
    for i in 0..n {
        let mid = s + (i as f64 + 0.5) * dt;
        let hm = h(mid) * dt;
        let factor = match rule {
            ProductRule::Exponential => hm.exp(),
            ProductRule::Euler => DMatrix::identity(hm.nrows(), hm.nrows()) + hm,
        };
        out = Some(match out {
            None => factor,
            Some(acc) => acc * factor,
        });
    }
    Ok(out.expect("n >= 1"))
}

/// Reversed product of `exp(-H Δ)` (or `I - H Δ` for [`ProductRule::Euler`]),
/// the inverse of [`product_integral`] (exact for the exponential rule).
pub fn product_integral_inverse(
    h: &dyn Fn(f64) -> DMatrix<f64>,
    s: f64,
    t: f64,
    n: usize,
    rule: ProductRule,
) -> Result<DMatrix<f64>> {
    check_interval(s, t, n)?;
    let dt = (t - s) / n as f64;
    let mut out: Option<DMatrix<f64>> = None;
    for i in (0..n).rev() {
        let mid = s + (i as f64 + 0.5) * dt;
        let hm = h(mid) * (-dt);
        let factor = match rule {
            ProductRule::Exponential => hm.exp(),
            ProductRule::Euler => DMatrix::identity(hm.nrows(), hm.nrows()) + hm,
        };
        out = Some(match out {
            None => factor,
            Some(acc) => acc * factor,
        });
    }
    Ok(out.expect("n >= 1"))
}

/// Product integral with `2n` subdivisions and the max-norm change from `n`.
pub fn product_integral_richardson(
    h: &dyn Fn(f64) -> DMatrix<f64>,
    s: f64,
    t: f64,
    n: usize,
    rule: ProductRule,
) -> Result<(DMatrix<f64>, f64)> {
    let coarse = product_integral(h, s, t, n, rule)?;
    let fine = product_integral(h, s, t, 2 * n, rule)?;
    let change = (&fine - coarse).amax();
    Ok((fine, change))
}

/// Default subdivision count: sub-steps of at most `1e-3` time units.
pub fn default_subdivisions(s: f64, t: f64) -> usize {
    (((t - s) / 1e-3).ceil() as usize).max(1)
}

/// `exp(H τ)` and `∫_0^τ exp(H v) dv` from one augmented exponential.
fn flow_and_integral(h: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = h.nrows();
    let mut aug = DMatrix::zeros(2 * k, 2 * k);
    aug.view_mut((0, 0), (k, k)).copy_from(&(h * tau));
    aug.view_mut((0, k), (k, k)).fill_diagonal(tau);
    let e = aug.exp();
    (e.view((0, 0), (k, k)).into_owned(), e.view((0, k), (k, k)).into_owned())
}

#[derive(Clone, Debug)]
pub enum FactorKind {
    /// Constant-generator flow between events.
    Flow {
        piece: usize,
        state: usize,
        generator: DMatrix<f64>,
        phi: DVector<f64>,
    },
    /// Jump update `I + u γ*` at `start == end`.
    Jump {
        piece: usize,
        from: usize,
        to: usize,
        u: DVector<f64>,
        gamma: DVector<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct Factor {
    pub start: f64,
    pub end: f64,
    pub transfer: DMatrix<f64>,
    /// `∫_start^end exp(H (u - start)) du · φ` for flows, zero for jumps.
    pub phi_integral: DVector<f64>,
    pub kind: FactorKind,
}

/// `Γ_{t}^{·}` along one path, anchored at `t` with `Γ_t^t = I`.
#[derive(Clone, Debug)]
pub struct AdjointSegment {
    t_start: f64,
    horizon: f64,
    k: usize,
    factors: Vec<Factor>,
}

impl AdjointSegment {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    fn check(&self, s: f64) -> Result<()> {
        if s < self.t_start - 1e-12 || s > self.horizon + 1e-12 {
            return Err(Error::TimeOutOfRange {
                time: s,
                lower: self.t_start,
                upper: self.horizon,
            });
        }
        Ok(())
    }

    /// Walks factors up to `s`, calling `visit(Γ_t^{start}, factor, fraction)`.
    fn walk(&self, s: f64, mut visit: impl FnMut(&DMatrix<f64>, &Factor, Option<f64>)) -> DMatrix<f64> {
        let mut gamma = DMatrix::identity(self.k, self.k);
        for f in &self.factors {
            if f.end <= s {
                visit(&gamma, f, None);
                gamma = &gamma * &f.transfer;
                continue;
            }
            if f.start < s {
                if let FactorKind::Flow { generator, .. } = &f.kind {
                    let tau = s - f.start;
                    visit(&gamma, f, Some(tau));
                    gamma = &gamma * (generator * tau).exp();
                }
            }
            break;
        }
        gamma
    }

    /// `Γ_t^s`, including jumps at times `≤ s`.
    pub fn gamma_to(&self, s: f64) -> Result<DMatrix<f64>> {
        self.check(s)?;
        Ok(self.walk(s, |_, _, _| {}))
    }

    /// `(Γ_t^s)⁻¹` as the reversed product of the factor inverses.
    pub fn inverse_to(&self, s: f64) -> Result<DMatrix<f64>> {
        self.check(s)?;
        let mut inv = DMatrix::identity(self.k, self.k);
        self.walk(s, |_, f, partial| {
            let factor_inv = match &f.kind {
                FactorKind::Flow { generator, .. } => {
                    let tau = partial.unwrap_or(f.end - f.start);
                    (generator * (-tau)).exp()
                }
                FactorKind::Jump { u, gamma, .. } => {
                    let denom = 1.0 + gamma.dot(u);
                    DMatrix::identity(self.k, self.k) - u * gamma.transpose() / denom
                }
            };
            inv = &factor_inv * &inv;
        });
        Ok(inv)
    }

    /// `∫_]t,s] Γ_t^u φ_u du`
    pub fn phi_integral_to(&self, s: f64) -> Result<DVector<f64>> {
        self.check(s)?;
        let mut acc = DVector::zeros(self.k);
        self.walk(s, |gamma, f, partial| {
            if let FactorKind::Flow { generator, phi, .. } = &f.kind {
                let piece_integral = match partial {
                    None => f.phi_integral.clone(),
                    Some(tau) => flow_and_integral(generator, tau).1 * phi,
                };
                acc += gamma * piece_integral;
            }
        });
        Ok(acc)
    }

    /// `Γ_t^s` at every factor end, in time order.
    pub fn running_products(&self) -> Vec<(f64, DMatrix<f64>)> {
        let mut gamma = DMatrix::identity(self.k, self.k);
        let mut out = vec![(self.t_start, gamma.clone())];
        for f in &self.factors {
            gamma = &gamma * &f.transfer;
            out.push((f.end, gamma.clone()));
        }
        out
    }
}

/// Assembles `Γ_{t_start}^{·}` along `path`.
pub fn adjoint_on_path(
    path: &ChainPath,
    spec: &LinearDriverSpec,
    model: &RateModel,
    t_start: f64,
) -> Result<AdjointSegment> {
    spec.check_model(model)?;
    path.check_against(model)?;
    if !(t_start >= 0.0 && t_start < path.horizon) {
        return Err(Error::TimeOutOfRange {
            time: t_start,
            lower: 0.0,
            upper: path.horizon,
        });
    }
    let k = spec.dim();
    let mut breaks: Vec<f64> = path
        .events
        .iter()
        .map(|e| e.time)
        .chain(model.pieces().iter().map(|p| p.end))
        .filter(|&x| x > t_start && x < path.horizon)
        .collect();
    breaks.push(path.horizon);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut factors = Vec::new();
    let mut events = path.events.iter().filter(|e| e.time > t_start).peekable();
    let mut prev = t_start;
    for &b in &breaks {
        let piece = model.piece_index(0.5 * (prev + b));
        let state = path.state_at(prev);
        let generator = spec.generator(piece, state);
        let phi = spec.phi(piece).clone();
        let (transfer, integral) = flow_and_integral(&generator, b - prev);
        factors.push(Factor {
            start: prev,
            end: b,
            transfer,
            phi_integral: integral * &phi,
            kind: FactorKind::Flow {
                piece,
                state,
                generator,
                phi,
            },
        });
        while let Some(e) = events.peek() {
            if e.time > b {
                break;
            }
            let from = path.state_before(e.time);
            let jp = model.piece_index(e.time);
            let u = spec.jump_vector(jp, from, e.state);
            let gamma = spec.gamma(jp).clone();
            let det = 1.0 + gamma.dot(&u);
            if det.abs() <= INVERTIBILITY_TOL {
                return Err(Error::NotInvertible {
                    piece: jp,
                    state: from,
                    target: e.state,
                    det,
                });
            }
            factors.push(Factor {
                start: e.time,
                end: e.time,
                transfer: DMatrix::identity(k, k) + &u * gamma.transpose(),
                phi_integral: DVector::zeros(k),
                kind: FactorKind::Jump {
                    piece: jp,
                    from,
                    to: e.state,
                    u,
                    gamma,
                },
            });
            events.next();
        }
        prev = b;
    }
    Ok(AdjointSegment {
        t_start,
        horizon: path.horizon,
        k,
        factors,
    })
}

/// `|det(I + u γ*)|` at or below this is treated as singular.
pub const INVERTIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct JumpVerdict {
    pub piece: usize,
    pub state: usize,
    pub target: usize,
    /// `det(I + α ψ⁺ (e_j - x) γ*) = 1 + γ* α ψ⁺ (e_j - x)`
    pub det: f64,
    pub invertible: bool,
    pub nonnegative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftVerdict {
    pub piece: usize,
    pub state: usize,
    /// Smallest off-diagonal entry of `β - α ψ⁺ A X γ*` (`+∞` when `K = 1`).
    pub min_off_diagonal: f64,
    pub off_diagonal_nonnegative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConditions {
    pub jumps: Vec<JumpVerdict>,
    pub drifts: Vec<DriftVerdict>,
}

impl LinearConditions {
    pub fn invertible(&self) -> bool {
        self.jumps.iter().all(|v| v.invertible)
    }

    /// Both nonnegativity hypotheses: nonnegative jump updates and a drift
    /// generator with nonnegative off-diagonal entries.
    pub fn nonnegative(&self) -> bool {
        self.jumps.iter().all(|v| v.nonnegative) && self.drifts.iter().all(|v| v.off_diagonal_nonnegative)
    }

    pub fn first_singular(&self) -> Option<&JumpVerdict> {
        self.jumps.iter().find(|v| !v.invertible)
    }
}

/// Evaluates the invertibility and nonnegativity hypotheses at every piece,
/// state and active target.
pub fn check_linear_conditions(spec: &LinearDriverSpec, model: &RateModel) -> Result<LinearConditions> {
    spec.check_model(model)?;
    let k = spec.dim();
    let mut jumps = Vec::new();
    let mut drifts = Vec::new();
    for piece in 0..spec.num_pieces() {
        for state in 0..spec.num_states() {
            let psi = &spec.psi[piece][state];
            for target in psi.active_targets() {
                let u = spec.jump_vector(piece, state, target);
                let det = 1.0 + spec.gamma(piece).dot(&u);
                let update = spec.jump_update(piece, state, target);
                jumps.push(JumpVerdict {
                    piece,
                    state,
                    target,
                    det,
                    invertible: det.abs() > INVERTIBILITY_TOL,
                    nonnegative: update.iter().all(|&v| v >= 0.0),
                });
            }
            let h = spec.generator(piece, state);
            let mut min_off = f64::INFINITY;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        min_off = min_off.min(h[(i, j)]);
                    }
                }
            }
            drifts.push(DriftVerdict {
                piece,
                state,
                min_off_diagonal: min_off,
                off_diagonal_nonnegative: min_off >= 0.0,
            });
        }
    }
    Ok(LinearConditions { jumps, drifts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NecessityWitness {
    pub piece: usize,
    pub state: usize,
    pub row: usize,
    pub col: usize,
    /// Entry of `Γ_t^{t+δ} = exp(H δ)` on a jump-free interval.
    pub entry: f64,
    pub delta: f64,
}

/// For the first `(piece, state)` whose drift generator has a negative
/// off-diagonal entry, evaluates `Γ` over a jump-free interval of length
/// `delta`. A negative entry there shows nonnegativity cannot hold.
pub fn necessity_probe(spec: &LinearDriverSpec, model: &RateModel, delta: f64) -> Result<Option<NecessityWitness>> {
    let report = check_linear_conditions(spec, model)?;
    let Some(v) = report.drifts.iter().find(|v| !v.off_diagonal_nonnegative) else {
        return Ok(None);
    };
    let h = spec.generator(v.piece, v.state);
    let start = model.piece_start(v.piece);
    let path = ChainPath {
        initial_state: v.state,
        events: vec![],
        horizon: (start + delta).min(model.pieces()[v.piece].end),
    };
    let gamma = if start == 0.0 {
        adjoint_on_path(&path, spec, model, 0.0)?.gamma_to(path.horizon)?
    } else {
        (h.clone() * (path.horizon - start)).exp()
    };
    let k = spec.dim();
    let (mut row, mut col, mut entry) = (0, 0, f64::INFINITY);
    for i in 0..k {
        for j in 0..k {
            if i != j && gamma[(i, j)] < entry {
                (row, col, entry) = (i, j, gamma[(i, j)]);
            }
        }
    }
    Ok(Some(NecessityWitness {
        piece: v.piece,
        state: v.state,
        row,
        col,
        entry,
        delta: path.horizon - start,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: DVector<f64>,
    pub stderr: DVector<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

/// `Γ_0^T g(X_T) + ∫_0^T Γ_0^u φ_u du` on one path.
pub fn closed_form_on_path(
    path: &ChainPath,
    spec: &LinearDriverSpec,
    model: &RateModel,
    terminal: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let seg = adjoint_on_path(path, spec, model, 0.0)?;
    let gamma = seg.gamma_to(path.horizon)?;
    let phi = seg.phi_integral_to(path.horizon)?;
    Ok(gamma * terminal.column(path.terminal_state()) + phi)
}

/// Monte Carlo estimate of `Y_0 = E[Γ_0^T Q + ∫ Γ_0^u φ_u du]`.
pub fn closed_form_estimate(
    spec: &LinearDriverSpec,
    terminal: &DMatrix<f64>,
    model: &RateModel,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let conditions = check_linear_conditions(spec, model)?;
    if let Some(v) = conditions.first_singular() {
        return Err(Error::NotInvertible {
            piece: v.piece,
            state: v.state,
            target: v.target,
            det: v.det,
        });
    }
    if terminal.nrows() != spec.dim() || terminal.ncols() != model.num_states() {
        return Err(Error::Dimension {
            expected: format!("{}x{}", spec.dim(), model.num_states()),
            got: format!("{}x{}", terminal.nrows(), terminal.ncols()),
        });
    }
    if n_paths < 2 {
        return Err(Error::InvalidParameter {
            name: "n_paths",
            reason: "at least two paths are needed for a standard error".into(),
        });
    }
    let paths = simulate_paths(model, x0, horizon, n_paths, seed)?;
    let samples: Vec<DVector<f64>> = paths
        .par_iter()
        .map(|p| closed_form_on_path(p, spec, model, terminal))
        .collect::<Result<_>>()?;
    Ok(mean_and_stderr(&samples, seed))
}

pub(crate) fn mean_and_stderr(samples: &[DVector<f64>], seed: u64) -> Estimate {
    let n = samples.len();
    let k = samples[0].len();
    let mut mean = DVector::zeros(k);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut var = DVector::zeros(k);
    for s in samples {
        var += (s - &mean).map(|d| d * d);
    }
    var /= (n - 1) as f64;
    Estimate {
        stderr: var.map(|v| (v / n as f64).sqrt()),
        mean,
        n_paths: n,
        seed,
    }
}
