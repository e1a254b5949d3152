//! Scenario files. States are numbered from 1 here and in every output.

use std::path::Path;
use std::sync::Arc;

use chainbsde::driver::{Driver, TableDriver, ZDriftDriver, ZNormDriver, ZeroDriver};
use chainbsde::linear::LinearDriverSpec;
use chainbsde::{RateModel, RatePiece, Violation};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub chain: ChainBlock,
    pub driver: Option<DriverBlock>,
    pub terminal: Option<TerminalBlock>,
    pub driver2: Option<DriverBlock>,
    pub terminal2: Option<TerminalBlock>,
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    pub num_states: usize,
    pub epsilon_r: f64,
    #[serde(default = "first_state")]
    pub initial_state: usize,
    pub horizon: f64,
    pub pieces: Vec<PieceBlock>,
}

fn first_state() -> usize {
    1
}

fn one() -> usize {
    1
}

/// `matrix[j][i]` is the rate from state `i + 1` to state `j + 1`; columns
/// sum to zero.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceBlock {
    pub t_end: f64,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverBlock {
    Zero {
        #[serde(default = "one")]
        dim: usize,
    },
    /// Row-wise `-c ‖e_k Z‖`.
    Znorm {
        #[serde(default = "one")]
        dim: usize,
        c: f64,
    },
    /// `-‖e_k Z‖ - e_k Z A X`.
    Zdrift {
        #[serde(default = "one")]
        dim: usize,
    },
    /// `φ + β Y + α_x Z* γ`, the same on every piece; `alpha[state]` is `K × N`.
    Linear {
        alpha: Vec<Vec<Vec<f64>>>,
        beta: Vec<Vec<f64>>,
        gamma: Vec<f64>,
        phi: Vec<f64>,
    },
    /// `values[piece][state]` is the `K`-vector `F` takes there.
    Table { values: Vec<Vec<Vec<f64>>> },
}

impl DriverBlock {
    pub fn dim(&self) -> usize {
        match self {
            DriverBlock::Zero { dim } | DriverBlock::Znorm { dim, .. } | DriverBlock::Zdrift { dim } => *dim,
            DriverBlock::Linear { beta, .. } => beta.len(),
            DriverBlock::Table { values } => values.first().and_then(|p| p.first()).map_or(0, Vec::len),
        }
    }
}

/// `values[k][i]` is component `k + 1` of `g(e_{i+1})`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalBlock {
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub absorbing: Vec<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub step: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub mid: Option<f64>,
    pub comparison: Option<String>,
    #[serde(default)]
    pub properties: Vec<String>,
    pub instances: Option<usize>,
    pub samples: Option<usize>,
    pub exhaustive_samples: Option<usize>,
}

pub fn load(path: &Path) -> Result<(Scenario, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if scenario.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            scenario.schema_version
        )));
    }
    Ok((scenario, bytes))
}

/// Violation text with 1-based pieces, states and matrix entries.
pub fn describe(v: &Violation) -> String {
    match v {
        Violation::TooFewStates(n) => format!("a chain needs at least 2 states, got {n}"),
        Violation::NoPieces => "no rate pieces given".into(),
        Violation::EpsilonRange(e) => format!("epsilon_r = {e} is outside (0, 1]"),
        Violation::Shape { piece, rows, cols } => format!("piece {}: matrix is {rows}x{cols}, not N x N", piece + 1),
        Violation::NonFinite { piece, row, col } => {
            format!("piece {}: matrix entry [{}][{}] is not finite", piece + 1, row + 1, col + 1)
        }
        Violation::ColumnSum { piece, column, sum } => format!(
            "piece {}: column {} of the rate matrix sums to {sum}, not 0",
            piece + 1,
            column + 1
        ),
        Violation::RateBound {
            piece,
            from,
            to,
            rate,
            epsilon_r,
        } => format!(
            "piece {}: matrix entry [{}][{}] (rate {} -> {}) = {rate} is outside [{epsilon_r}, {}] and nonzero",
            piece + 1,
            to + 1,
            from + 1,
            from + 1,
            to + 1,
            1.0 / epsilon_r
        ),
        Violation::PieceOrder { piece, end } => {
            format!("piece {}: t_end = {end} does not increase strictly from 0", piece + 1)
        }
        Violation::Coverage { last_end, horizon } => {
            format!("pieces end at {last_end} but the horizon is {horizon}")
        }
    }
}

impl Scenario {
    /// The model as written, without validation.
    pub fn raw_model(&self) -> Result<RateModel, CliError> {
        let n = self.chain.num_states;
        let mut pieces = Vec::with_capacity(self.chain.pieces.len());
        for (p, block) in self.chain.pieces.iter().enumerate() {
            if block.matrix.len() != n {
                return Err(CliError::Config(format!(
                    "piece {}: matrix has {} rows, expected {n}",
                    p + 1,
                    block.matrix.len()
                )));
            }
            if let Some((r, row)) = block.matrix.iter().enumerate().find(|(_, row)| row.len() != n) {
                return Err(CliError::Config(format!(
                    "piece {}: matrix row {} has {} entries, expected {n}",
                    p + 1,
                    r + 1,
                    row.len()
                )));
            }
            pieces.push(RatePiece {
                end: block.t_end,
                generator: DMatrix::from_fn(n, n, |r, c| block.matrix[r][c]),
            });
        }
        Ok(RateModel::unchecked(n, pieces, self.chain.epsilon_r, self.chain.horizon))
    }

    pub fn model(&self) -> Result<Arc<RateModel>, CliError> {
        let model = self.raw_model()?;
        let report = model.validate();
        if !report.is_ok() {
            let text: Vec<String> = report.violations.iter().map(describe).collect();
            return Err(CliError::Config(format!("invalid rate matrix: {}", text.join("; "))));
        }
        Ok(Arc::new(model))
    }

    pub fn initial_state(&self) -> Result<usize, CliError> {
        state_index(self.chain.initial_state, self.chain.num_states, "chain.initial_state")
    }

    pub fn driver(&self, model: &RateModel, second: bool) -> Result<Arc<dyn Driver>, CliError> {
        let block = if second {
            self.driver2.as_ref().or(self.driver.as_ref())
        } else {
            self.driver.as_ref()
        };
        let block = block.ok_or_else(|| CliError::Config("missing [driver] block".into()))?;
        build_driver(block, model)
    }

    pub fn linear_spec(&self, model: &RateModel) -> Result<LinearDriverSpec, CliError> {
        match &self.driver {
            Some(DriverBlock::Linear { alpha, beta, gamma, phi }) => linear_spec(model, alpha, beta, gamma, phi),
            Some(_) => Err(CliError::Config("this command needs a driver with kind = \"linear\"".into())),
            None => Err(CliError::Config("missing [driver] block".into())),
        }
    }

    pub fn terminal(&self, k: usize, second: bool) -> Result<DMatrix<f64>, CliError> {
        let (block, name) = if second {
            (self.terminal2.as_ref(), "terminal2")
        } else {
            (self.terminal.as_ref(), "terminal")
        };
        let block = block.ok_or_else(|| CliError::Config(format!("missing [{name}] block")))?;
        matrix(&block.values, k, self.chain.num_states, &format!("{name}.values"))
    }

    pub fn absorbing(&self) -> Result<Vec<usize>, CliError> {
        let block = self.terminal.as_ref().ok_or_else(|| CliError::Config("missing [terminal] block".into()))?;
        block
            .absorbing
            .iter()
            .map(|&s| state_index(s, self.chain.num_states, "terminal.absorbing"))
            .collect()
    }
}

pub fn state_index(one_based: usize, n: usize, field: &str) -> Result<usize, CliError> {
    if one_based == 0 || one_based > n {
        return Err(CliError::Config(format!("{field} = {one_based} is not a state in 1..={n}")));
    }
    Ok(one_based - 1)
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, field: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("{field} must be {r} rows of {c} numbers")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], n: usize, field: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(CliError::Config(format!("{field} must have {n} entries")));
    }
    Ok(DVector::from_column_slice(v))
}

fn linear_spec(
    model: &RateModel,
    alpha: &[Vec<Vec<f64>>],
    beta: &[Vec<f64>],
    gamma: &[f64],
    phi: &[f64],
) -> Result<LinearDriverSpec, CliError> {
    let n = model.num_states();
    let k = beta.len();
    if alpha.len() != n {
        return Err(CliError::Config(format!("driver.alpha needs one {k}x{n} matrix per state")));
    }
    let alpha = alpha
        .iter()
        .enumerate()
        .map(|(i, a)| matrix(a, k, n, &format!("driver.alpha[{}]", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let beta = matrix(beta, k, k, "driver.beta")?;
    let gamma = vector(gamma, k, "driver.gamma")?;
    let phi = vector(phi, k, "driver.phi")?;
    Ok(LinearDriverSpec::constant(model, alpha, beta, gamma, phi)?)
}

fn build_driver(block: &DriverBlock, model: &RateModel) -> Result<Arc<dyn Driver>, CliError> {
    if block.dim() == 0 {
        return Err(CliError::Config("driver dimension must be at least 1".into()));
    }
    Ok(match block {
        DriverBlock::Zero { dim } => Arc::new(ZeroDriver { k: *dim }),
        DriverBlock::Znorm { dim, c } => Arc::new(ZNormDriver { k: *dim, c: *c }),
        DriverBlock::Zdrift { dim } => Arc::new(ZDriftDriver::new(*dim, model)),
        DriverBlock::Linear { alpha, beta, gamma, phi } => Arc::new(linear_spec(model, alpha, beta, gamma, phi)?),
        DriverBlock::Table { values } => {
            if values.len() != model.pieces().len() || values.iter().any(|p| p.len() != model.num_states()) {
                return Err(CliError::Config(format!(
                    "driver.values needs {} pieces of {} states",
                    model.pieces().len(),
                    model.num_states()
                )));
            }
            let values = values
                .iter()
                .map(|p| p.iter().map(|v| DVector::from_column_slice(v)).collect())
                .collect();
            Arc::new(TableDriver::new(values)?)
        }
    })
}
