//! The covariation density `ψ`, its Moore–Penrose inverse, the stochastic
//! seminorm and the canonical (zero-row-sum) representative of `Z`.
//!
//! With `x = e_s` the current state and `a = A x` the rate column,
//! `ψ = diag(a) - a x* - x a* = Σ_j a_j (e_j - x)(e_j - x)*`, a weighted
//! star-graph Laplacian centred on `s`. Everything here exploits that shape.

use nalgebra::{DMatrix, DVector};

use crate::chain::RateModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PsiMatrix {
    matrix: DMatrix<f64>,
    state: usize,
    rates: DVector<f64>,
}

impl PsiMatrix {
    /// Builds `ψ` from the current state and the rate column `a = A e_state`.
    pub fn new(state: usize, rates: DVector<f64>) -> Result<Self> {
        let n = rates.len();
        if state >= n {
            return Err(Error::StateOutOfRange {
                state,
                num_states: n,
            });
        }
        let off: f64 = (0..n).filter(|&j| j != state).map(|j| rates[j]).sum();
        if (0..n).any(|j| j != state && !(rates[j] >= 0.0)) {
            return Err(Error::InvalidParameter {
                name: "rates",
                reason: "off-diagonal rates must be nonnegative".into(),
            });
        }
        if (rates[state] + off).abs() > 1e-12 * (1.0 + off) {
            return Err(Error::InvalidParameter {
                name: "rates",
                reason: format!("rate column sums to {}", rates[state] + off),
            });
        }
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            if j == state {
                continue;
            }
            let a = rates[j];
            m[(j, j)] = a;
            m[(j, state)] = -a;
            m[(state, j)] = -a;
        }
        m[(state, state)] = off;
        Ok(Self {
            matrix: m,
            state,
            rates,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// The rate column `A X_{t-}`.
    pub fn rates(&self) -> &DVector<f64> {
        &self.rates
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    /// Targets `j != state` with positive intensity.
    pub fn active_targets(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| j != self.state && self.rates[j] > 0.0)
            .collect()
    }

    /// Structured Moore–Penrose inverse `B G D⁻¹ G B*`, where `B` stacks
    /// `e_j - x` over active targets, `D = diag(a_active)` and
    /// `G = (B* B)⁻¹ = I - 𝟏𝟏*/(m+1)`.
    pub fn pseudoinverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let s = self.state;
        let active = self.active_targets();
        let m = active.len();
        let mut out = DMatrix::zeros(n, n);
        if m == 0 {
            return out;
        }
        let c = 1.0 / (m as f64 + 1.0);
        let w: Vec<f64> = active.iter().map(|&j| 1.0 / self.rates[j]).collect();
        let w_sum: f64 = w.iter().sum();
        let mut h = DMatrix::zeros(m, m);
        for p in 0..m {
            for q in 0..m {
                let diag = if p == q { w[p] } else { 0.0 };
                h[(p, q)] = diag - (w[p] + w[q]) * c + w_sum * c * c;
            }
        }
        let mut total = 0.0;
        for (p, &j) in active.iter().enumerate() {
            let mut row = 0.0;
            for (q, &k) in active.iter().enumerate() {
                out[(j, k)] = h[(p, q)];
                row += h[(p, q)];
            }
            out[(j, s)] = -row;
            out[(s, j)] = -row;
            total += row;
        }
        out[(s, s)] = total;
        out
    }

    /// The orthogonal projector `ψψ⁺ = B G B*`.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.dim();
        let s = self.state;
        let active = self.active_targets();
        let m = active.len();
        let mut out = DMatrix::zeros(n, n);
        if m == 0 {
            return out;
        }
        let c = 1.0 / (m as f64 + 1.0);
        for &j in &active {
            for &k in &active {
                out[(j, k)] = if j == k { 1.0 - c } else { -c };
            }
            out[(j, s)] = -c;
            out[(s, j)] = -c;
        }
        out[(s, s)] = m as f64 * c;
        out
    }

    /// Checks symmetry, zero row/column sums and the star structure.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let n = self.dim();
        let m = &self.matrix;
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension {
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        for i in 0..n {
            if m.row(i).sum().abs() > tol || m.column(i).sum().abs() > tol {
                return Err(Error::InvalidParameter {
                    name: "psi",
                    reason: format!("row/column {i} does not sum to zero"),
                });
            }
            for j in 0..n {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::InvalidParameter {
                        name: "psi",
                        reason: "not symmetric".into(),
                    });
                }
                if i != j && i != self.state && j != self.state && m[(i, j)].abs() > tol {
                    return Err(Error::InvalidParameter {
                        name: "psi",
                        reason: format!("off-star entry ({i}, {j}) is nonzero"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// `ψ_t` at the given state: `diag(A x) - A diag(x) - diag(x) A*`.
pub fn psi_at(model: &RateModel, t: f64, state: usize) -> Result<PsiMatrix> {
    model.check_state(state)?;
    model.check_time(t)?;
    PsiMatrix::new(state, model.generator_at(t).column(state).into_owned())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeminormForm {
    /// `Tr(Z ψ Z*)`
    Trace,
    /// `Σ_{i,j} (e_j* A x) [e_i* Z (e_j - x)]²`
    Jump,
}

fn check_cols(z: &DMatrix<f64>, n: usize) -> Result<()> {
    if z.ncols() != n {
        return Err(Error::Dimension {
            expected: format!("K x {n}"),
            got: format!("{}x{}", z.nrows(), z.ncols()),
        });
    }
    Ok(())
}

/// Squared seminorm `‖Z‖²_{X_{t-}}`.
pub fn seminorm_sq(z: &DMatrix<f64>, psi: &PsiMatrix, form: SeminormForm) -> Result<f64> {
    check_cols(z, psi.dim())?;
    let value = match form {
        SeminormForm::Trace => (z * psi.matrix() * z.transpose()).trace(),
        SeminormForm::Jump => {
            let s = psi.state();
            let mut acc = 0.0;
            for j in psi.active_targets() {
                for i in 0..z.nrows() {
                    let d = z[(i, j)] - z[(i, s)];
                    acc += psi.rates()[j] * d * d;
                }
            }
            acc
        }
    };
    // trace form can round to a tiny negative number
    Ok(value.max(0.0))
}

/// Squared seminorm of each row of `Z` (jump form).
pub fn row_seminorms_sq(z: &DMatrix<f64>, psi: &PsiMatrix) -> DVector<f64> {
    let s = psi.state();
    let active = psi.active_targets();
    DVector::from_fn(z.nrows(), |i, _| {
        active
            .iter()
            .map(|&j| {
                let d = z[(i, j)] - z[(i, s)];
                psi.rates()[j] * d * d
            })
            .sum()
    })
}

/// Structured pseudoinverse after an invariant check of the input.
pub fn pseudoinverse(psi: &PsiMatrix) -> Result<DMatrix<f64>> {
    psi.check_invariants(1e-10 * (1.0 + psi.matrix().amax()))?;
    Ok(psi.pseudoinverse())
}

/// `Z ψ ψ⁺`, the canonical representative of `Z`.
pub fn canonicalize_z(
    z: &DMatrix<f64>,
    psi: &PsiMatrix,
    psi_plus: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_cols(z, psi.dim())?;
    if psi_plus.nrows() != psi.dim() || psi_plus.ncols() != psi.dim() {
        return Err(Error::Dimension {
            expected: format!("{0}x{0}", psi.dim()),
            got: format!("{}x{}", psi_plus.nrows(), psi_plus.ncols()),
        });
    }
    Ok(z * psi.matrix() * psi_plus)
}

/// Canonical `Z` with prescribed jump responses `Z(e_j - x) = diffs[(k, j)]`
/// for every active target `j` (other columns of `diffs` are ignored).
pub fn canonical_from_jumps(psi: &PsiMatrix, diffs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = psi.dim();
    let s = psi.state();
    let active = psi.active_targets();
    let c = 1.0 / (active.len() as f64 + 1.0);
    let mut z = DMatrix::zeros(diffs.nrows(), n);
    for k in 0..diffs.nrows() {
        let total: f64 = active.iter().map(|&j| diffs[(k, j)]).sum();
        for &j in &active {
            z[(k, j)] = diffs[(k, j)] - total * c;
        }
        if !active.is_empty() {
            z[(k, s)] = -total * c;
        }
    }
    z
}

/// Upper bound `ε_r^{3/2} N^{-3/2}` on admissible jump-tolerance parameters.
pub fn epsilon_threshold(epsilon_r: f64, num_states: usize) -> Result<f64> {
    if !(epsilon_r > 0.0 && epsilon_r <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon_r",
            reason: format!("{epsilon_r} is outside (0, 1]"),
        });
    }
    if num_states < 2 {
        return Err(Error::InvalidParameter {
            name: "num_states",
            reason: format!("a chain needs at least 2 states, got {num_states}"),
        });
    }
    Ok((epsilon_r / num_states as f64).powf(1.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JumpDriftCheck {
    pub premise_holds: bool,
    pub conclusion_holds: bool,
}

/// For a scalar `Z` row: if no jump term `(e_j* A x) Z (e_j - x)` falls below
/// `-ε‖Z‖`, then the drift term `Z ψ x` is at most `-ε‖Z‖`.
pub fn check_jump_drift_bound(
    z_row: &DMatrix<f64>,
    psi: &PsiMatrix,
    epsilon_r: f64,
    eps: f64,
) -> Result<JumpDriftCheck> {
    if z_row.nrows() != 1 {
        return Err(Error::Dimension {
            expected: "1 x N".into(),
            got: format!("{}x{}", z_row.nrows(), z_row.ncols()),
        });
    }
    let bound = epsilon_threshold(epsilon_r, psi.dim())?;
    if !(eps > 0.0 && eps < bound) {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("{eps} is outside (0, {bound})"),
        });
    }
    let norm = seminorm_sq(z_row, psi, SeminormForm::Trace)?.sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidParameter {
            name: "z",
            reason: "seminorm is zero".into(),
        });
    }
    let s = psi.state();
    let premise_holds = (0..psi.dim()).all(|j| {
        j == s || psi.rates()[j] * (z_row[(0, j)] - z_row[(0, s)]) >= -eps * norm
    });
    let drift = (z_row * psi.matrix().column(s))[(0, 0)];
    Ok(JumpDriftCheck {
        premise_holds,
        conclusion_holds: drift <= -eps * norm,
    })
}
