//! BSDE drivers `F(t, Y_{t-}, Z_t)` with declared structural flags.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::{path_rng, RateModel};
use crate::error::{Error, Result};
use crate::psi::{row_seminorms_sq, PsiMatrix};

/// State information handed to a driver at each evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DriverContext<'a> {
    pub t: f64,
    /// Index of the rate piece in force (steps never straddle a boundary).
    pub piece: usize,
    pub state: usize,
    pub psi: &'a PsiMatrix,
    /// Squared seminorm of each row of `Z`.
    pub row_norms_sq: &'a DVector<f64>,
}

impl DriverContext<'_> {
    /// `‖Z‖_{X_{t-}}` of the whole matrix.
    pub fn z_norm(&self) -> f64 {
        self.row_norms_sq.sum().sqrt()
    }

    /// `‖e_k* Z‖_{X_{t-}}`
    pub fn row_norm(&self, k: usize) -> f64 {
        self.row_norms_sq[k].sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DriverFlags {
    pub depends_on_y: bool,
    pub depends_on_z: bool,
    /// `F(t, y, 0) = 0`
    pub normalized_at_zero: bool,
    /// Component `i` depends only on `y_i` and row `i` of `Z`.
    pub row_separable: bool,
    /// Component `i` depends only on `y_i` (and on all of `Z`).
    pub y_separable: bool,
    /// `F(t, λy, λZ) = λ F(t, y, Z)` for `λ ≥ 0`.
    pub positively_homogeneous: bool,
    /// Each component is concave in `(y, Z)`.
    pub concave: bool,
}

pub trait Driver: Send + Sync {
    /// Dimension `K` of `Y`.
    fn dim(&self) -> usize;

    fn eval(&self, ctx: &DriverContext<'_>, y: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64>;

    /// Lipschitz constant `c` with respect to `‖y‖ + ‖Z‖_{X_{t-}}`.
    fn lipschitz(&self) -> f64;

    fn flags(&self) -> DriverFlags;

    fn name(&self) -> String {
        "driver".into()
    }
}

impl fmt::Debug for dyn Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Evaluates `driver` with the seminorms computed from `z`.
pub fn eval_with(
    driver: &dyn Driver,
    t: f64,
    piece: usize,
    psi: &PsiMatrix,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
) -> DVector<f64> {
    let norms = row_seminorms_sq(z, psi);
    let ctx = DriverContext {
        t,
        piece,
        state: psi.state(),
        psi,
        row_norms_sq: &norms,
    };
    driver.eval(&ctx, y, z)
}

/// `F ≡ 0`, the classical conditional expectation.
#[derive(Clone, Debug)]
pub struct ZeroDriver {
    pub k: usize,
}

impl Driver for ZeroDriver {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, _: &DriverContext<'_>, _: &DVector<f64>, _: &DMatrix<f64>) -> DVector<f64> {
        DVector::zeros(self.k)
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            depends_on_y: false,
            depends_on_z: false,
            normalized_at_zero: true,
            row_separable: true,
            y_separable: true,
            positively_homogeneous: true,
            concave: true,
        }
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

/// `e_k* F = -c ‖e_k* Z‖_{X_{t-}}`.
#[derive(Clone, Debug)]
pub struct ZNormDriver {
    pub k: usize,
    pub c: f64,
}

impl Driver for ZNormDriver {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, ctx: &DriverContext<'_>, _: &DVector<f64>, _: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.k, |i, _| -self.c * ctx.row_norm(i))
    }

    fn lipschitz(&self) -> f64 {
        self.c.abs()
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            depends_on_y: false,
            depends_on_z: self.c != 0.0,
            normalized_at_zero: true,
            row_separable: true,
            y_separable: true,
            positively_homogeneous: true,
            concave: self.c >= 0.0,
        }
    }

    fn name(&self) -> String {
        format!("znorm(c = {})", self.c)
    }
}

/// `e_k* F = -‖e_k* Z‖_{X_{t-}} - e_k* Z A_t X_{t-}`: the drift of `Y` is
/// `+‖Z‖` between jumps.
#[derive(Clone, Debug)]
pub struct ZDriftDriver {
    pub k: usize,
    /// Largest total exit rate of the model the driver runs on.
    pub max_exit_rate: f64,
}

impl ZDriftDriver {
    pub fn new(k: usize, model: &RateModel) -> Self {
        let max_exit_rate = model
            .pieces()
            .iter()
            .flat_map(|p| p.generator.diagonal().iter().map(|d| -d).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        Self { k, max_exit_rate }
    }
}

impl Driver for ZDriftDriver {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, ctx: &DriverContext<'_>, _: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        let zax = z * ctx.psi.rates();
        DVector::from_fn(self.k, |i, _| -ctx.row_norm(i) - zax[i])
    }

    fn lipschitz(&self) -> f64 {
        // |Z a| ≤ ‖Z‖ · sqrt(Σ_{j≠x} a_j) by Cauchy–Schwarz
        1.0 + self.max_exit_rate.sqrt()
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            depends_on_y: false,
            depends_on_z: true,
            normalized_at_zero: true,
            row_separable: true,
            y_separable: true,
            positively_homogeneous: true,
            concave: false,
        }
    }

    fn name(&self) -> String {
        "zdrift".into()
    }
}

/// `F(t, y, Z) = f(t, X_{t-})`, a tabulated function of the rate piece and
/// the current state only.
#[derive(Clone, Debug)]
pub struct TableDriver {
    /// `values[piece][state]` is a `K`-vector.
    pub values: Vec<Vec<DVector<f64>>>,
    pub k: usize,
}

impl TableDriver {
    pub fn new(values: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        let k = values
            .first()
            .and_then(|p| p.first())
            .map(|v| v.len())
            .ok_or(Error::InvalidParameter {
                name: "table",
                reason: "empty table".into(),
            })?;
        let n = values[0].len();
        for row in &values {
            if row.len() != n || row.iter().any(|v| v.len() != k) {
                return Err(Error::Dimension {
                    expected: format!("{n} states with {k} components"),
                    got: "ragged table".into(),
                });
            }
            if row.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "table",
                    reason: "non-finite entry".into(),
                });
            }
        }
        Ok(Self { values, k })
    }
}

impl Driver for TableDriver {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, ctx: &DriverContext<'_>, _: &DVector<f64>, _: &DMatrix<f64>) -> DVector<f64> {
        let piece = ctx.piece.min(self.values.len() - 1);
        self.values[piece][ctx.state].clone()
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn flags(&self) -> DriverFlags {
        let zero = self.values.iter().flatten().all(|v| v.iter().all(|&x| x == 0.0));
        DriverFlags {
            depends_on_y: false,
            depends_on_z: false,
            normalized_at_zero: zero,
            row_separable: true,
            y_separable: true,
            positively_homogeneous: zero,
            concave: true,
        }
    }

    fn name(&self) -> String {
        "table".into()
    }
}

type DriverFn = dyn Fn(&DriverContext<'_>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync;

/// A driver given by a closure with caller-declared flags.
#[derive(Clone)]
pub struct FnDriver {
    k: usize,
    f: Arc<DriverFn>,
    lipschitz: f64,
    flags: DriverFlags,
    name: String,
}

impl FnDriver {
    pub fn new<F>(k: usize, lipschitz: f64, flags: DriverFlags, f: F) -> Self
    where
        F: Fn(&DriverContext<'_>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            k,
            f: Arc::new(f),
            lipschitz,
            flags,
            name: "custom".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Driver for FnDriver {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, ctx: &DriverContext<'_>, y: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        (self.f)(ctx, y, z)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn flags(&self) -> DriverFlags {
        self.flags
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// One randomly drawn driver input.
#[derive(Clone, Debug)]
pub struct DriverSample {
    pub t: f64,
    pub piece: usize,
    pub psi: PsiMatrix,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

/// Draws `n` inputs with uniform times, uniform states and standard normal
/// `y` and `Z` entries.
pub fn sample_inputs(model: &RateModel, k: usize, n: usize, seed: u64) -> Vec<DriverSample> {
    let mut rng = path_rng(seed, 0);
    let num_states = model.num_states();
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..model.horizon()).max(f64::MIN_POSITIVE);
            let piece = model.piece_index(t);
            let state = rng.random_range(0..num_states);
            let rates = model.pieces()[piece].generator.column(state).into_owned();
            let psi = PsiMatrix::new(state, rates).expect("validated model");
            let y = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = DMatrix::from_fn(k, num_states, |_, _| rng.sample::<f64, _>(StandardNormal));
            DriverSample { t, piece, psi, y, z }
        })
        .collect()
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

/// Spot-checks the declared flags of `driver` on `n` sampled inputs.
pub fn check_flags(driver: &dyn Driver, model: &RateModel, n: usize, seed: u64) -> Result<()> {
    let flags = driver.flags();
    let k = driver.dim();
    let tol = 1e-10;
    let samples = sample_inputs(model, k, 2 * n, seed);
    for pair in samples.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let f = |y: &DVector<f64>, z: &DMatrix<f64>| eval_with(driver, a.t, a.piece, &a.psi, y, z);
        let base = f(&a.y, &a.z);
        if base.len() != k || base.iter().any(|v| !v.is_finite()) {
            return Err(Error::DriverFlags(format!(
                "{} returned a malformed value at t = {}",
                driver.name(),
                a.t
            )));
        }
        if !flags.depends_on_y && !close(&base, &f(&b.y, &a.z), tol) {
            return Err(Error::DriverFlags(format!("{} depends on y", driver.name())));
        }
        if !flags.depends_on_z && !close(&base, &f(&a.y, &b.z), tol) {
            return Err(Error::DriverFlags(format!("{} depends on Z", driver.name())));
        }
        if flags.normalized_at_zero {
            let at_zero = f(&a.y, &DMatrix::zeros(k, a.z.ncols()));
            if at_zero.amax() > tol {
                return Err(Error::DriverFlags(format!(
                    "{} is not zero at Z = 0 (t = {}, state {})",
                    driver.name(),
                    a.t,
                    a.psi.state()
                )));
            }
        }
        if flags.row_separable || flags.y_separable {
            for i in 0..k {
                let mut y2 = b.y.clone();
                y2[i] = a.y[i];
                let mut z2 = b.z.clone();
                z2.set_row(i, &a.z.row(i));
                if flags.row_separable && (f(&y2, &z2)[i] - base[i]).abs() > tol * (1.0 + base[i].abs()) {
                    return Err(Error::DriverFlags(format!(
                        "component {i} of {} reads other components",
                        driver.name()
                    )));
                }
                if flags.y_separable && (f(&y2, &a.z)[i] - base[i]).abs() > tol * (1.0 + base[i].abs()) {
                    return Err(Error::DriverFlags(format!(
                        "component {i} of {} reads other components of y",
                        driver.name()
                    )));
                }
            }
        }
        if flags.positively_homogeneous {
            for lambda in [0.5, 2.0] {
                let scaled = f(&(&a.y * lambda), &(&a.z * lambda));
                if !close(&scaled, &(&base * lambda), tol) {
                    return Err(Error::DriverFlags(format!(
                        "{} is not positively homogeneous",
                        driver.name()
                    )));
                }
            }
        }
        if flags.concave {
            let other = f(&b.y, &b.z);
            for lambda in [0.25, 0.5, 0.75] {
                let y = &a.y * lambda + &b.y * (1.0 - lambda);
                let z = &a.z * lambda + &b.z * (1.0 - lambda);
                let mixed = f(&y, &z);
                let chord = &base * lambda + &other * (1.0 - lambda);
                let slack = tol * (1.0 + chord.amax());
                if (0..k).any(|i| mixed[i] < chord[i] - slack) {
                    return Err(Error::DriverFlags(format!("{} is not concave", driver.name())));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> RateModel {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 1.0, -1.5, 0.5, 1.0, 0.5, -1.0]);
        RateModel::homogeneous(a, 0.5, 1.0).unwrap()
    }

    #[test]
    fn builtin_flags_hold() {
        let m = model();
        check_flags(&ZeroDriver { k: 2 }, &m, 50, 1).unwrap();
        check_flags(&ZNormDriver { k: 2, c: 0.7 }, &m, 50, 2).unwrap();
        check_flags(&ZDriftDriver::new(1, &m), &m, 50, 3).unwrap();
    }

    #[test]
    fn false_flag_is_caught() {
        let m = model();
        let flags = DriverFlags {
            depends_on_z: false,
            ..ZeroDriver { k: 1 }.flags()
        };
        let d = FnDriver::new(1, 1.0, flags, |_, _, z| DVector::from_element(1, z[(0, 0)]));
        assert!(matches!(check_flags(&d, &m, 20, 4), Err(Error::DriverFlags(_))));
    }

    #[test]
    fn convex_driver_is_not_concave() {
        let m = model();
        let d = ZNormDriver { k: 1, c: -1.0 };
        let declared = FnDriver::new(1, 1.0, DriverFlags { concave: true, ..d.flags() }, move |c, y, z| {
            d.eval(c, y, z)
        });
        assert!(check_flags(&declared, &m, 50, 5).is_err());
    }

    #[test]
    fn znorm_on_fixture() {
        let psi = PsiMatrix::new(0, DVector::from_vec(vec![-1.0, 1.0])).unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[-0.5, 0.5]);
        let f = eval_with(&ZNormDriver { k: 1, c: 2.0 }, 0.5, 0, &psi, &DVector::zeros(1), &z);
        assert!((f[0] + 2.0).abs() < 1e-15);
        let g = eval_with(&ZDriftDriver { k: 1, max_exit_rate: 1.0 }, 0.5, 0, &psi, &DVector::zeros(1), &z);
        // -‖Z‖ - Z a = -1 - (0.5 + 0.5)
        assert!((g[0] + 2.0).abs() < 1e-15);
    }
}
