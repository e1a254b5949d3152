//! BSDEs driven by finite-state continuous-time Markov chains.
//!
//! The chain `X` takes values among the unit vectors of `R^N` with generator
//! `A_t` (columns summing to zero) and compensated martingale
//! `M_t = X_t - X_0 - ∫ A_u X_{u-} du`. A BSDE with driver `F` and terminal
//! value `Q` is
//!
//! ```text
//! Y_t - ∫_]t,T] F(u, Y_{u-}, Z_u) du + ∫_]t,T] Z_u dM_u = Q.
//! ```
//!
//! For Markovian data `Y_t = u(t, X_t)` and the equation reduces to a coupled
//! backward ODE over states, which is what [`solver`] integrates.

pub mod chain;
pub mod comparison;
pub mod driver;
pub mod error;
pub mod linear;
pub mod oracle;
pub mod psi;
pub mod risk;
pub mod solver;
pub mod verify;

pub use chain::{ChainPath, Jump, RateModel, RatePiece, ValidationReport, Violation};
pub use error::{Error, Result};
pub use psi::{PsiMatrix, SeminormForm};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
