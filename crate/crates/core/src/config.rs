//! JSON system descriptions: dimensions, dynamics expressions, matrices,
//! noise/domain/initial boxes, optional Jacobian-bound overrides, and the
//! experiment scenario.
//!
//! A config is pure data; [`build_model`] and [`build_scenario`] turn it
//! into the validated runtime objects.  Dynamics expressions are written
//! over `x1..xn`; scenario signals additionally see the step index `k`.

use crate::decomp::JacobianBounds;
use crate::expr::{Expr, ParseError};
use crate::interval::{IntervalError, IntervalVector};
use crate::observer::{ModelError, ModelParts, SystemModel};
use crate::sim::Scenario;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dimension `{what}` must be at least 1")]
    ZeroDimension { what: &'static str },
    #[error("{what} must have {expected} entries, got {got}")]
    WrongCount {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("matrix `{what}` must be {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    WrongMatrixShape {
        what: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix `{what}` row {row} has a different length than row 0")]
    RaggedMatrix { what: &'static str, row: usize },
    #[error("cannot parse expression {what}: {source}")]
    Expression {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    JacobianOverride(#[from] crate::decomp::DecompError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    /// State dimension `n`.
    pub n: usize,
    /// Known-input dimension `m`.
    pub m: usize,
    /// Measurement dimension `l`.
    pub l: usize,
    /// Unknown-input dimension `p`.
    pub p: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// State map `f`, one expression per state coordinate, over `x1..xn`.
    pub f: Vec<String>,
    /// Output map `g`, one expression per measurement, over `x1..xn`.
    pub g: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrices {
    /// Known-input matrix `B` (`n x m`), row-major.
    pub b: Vec<Vec<f64>>,
    /// Known-input feedthrough `D` (`l x m`), row-major.
    pub d: Vec<Vec<f64>>,
    /// Unknown-input matrix `G` (`n x p`), row-major.
    pub g: Vec<Vec<f64>>,
    /// Unknown-input feedthrough `H` (`l x p`), row-major; must have full
    /// column rank.
    pub h: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub w_lo: Vec<f64>,
    pub w_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub x0_lo: Vec<f64>,
    pub x0_hi: Vec<f64>,
}

/// Optional override for the estimated Jacobian bounds (entrywise lower and
/// upper bounds of `∂f/∂x` and `∂g/∂x` over the domain).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianOverride {
    pub f_low: Vec<Vec<f64>>,
    pub f_high: Vec<Vec<f64>>,
    pub g_low: Vec<Vec<f64>>,
    pub g_high: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Known-input signal expressions over `k, x1..xn`, one per input.
    pub u: Vec<String>,
    /// Unknown-input signal expressions over `k, x1..xn`, one per input.
    pub d: Vec<String>,
    pub horizon: usize,
    pub seed: u64,
}

/// The complete on-disk system description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dimensions: Dimensions,
    pub dynamics: Dynamics,
    pub matrices: Matrices,
    pub noise: Noise,
    pub domain: Domain,
    pub initial: Initial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian_bounds: Option<JacobianOverride>,
    pub scenario: ScenarioSection,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

fn state_vars(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn parse_all(sources: &[String], vars: &[&str], what: &str) -> Result<Vec<Expr>, ConfigError> {
    sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            Expr::parse(src, vars).map_err(|source| ConfigError::Expression {
                what: format!("{what}[{i}]"),
                source,
            })
        })
        .collect()
}

fn to_matrix(
    rows: &[Vec<f64>],
    what: &'static str,
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>, ConfigError> {
    let got_cols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != got_cols {
            return Err(ConfigError::RaggedMatrix { what, row: i });
        }
    }
    // an n x 0 matrix is legitimately written as [] or as n empty rows
    let effective_rows = if ncols == 0 && rows.is_empty() { 0 } else { rows.len() };
    if effective_rows != nrows && !(ncols == 0 && rows.is_empty()) {
        return Err(ConfigError::WrongMatrixShape {
            what,
            expected_rows: nrows,
            expected_cols: ncols,
            rows: rows.len(),
            cols: got_cols,
        });
    }
    if !rows.is_empty() && got_cols != ncols {
        return Err(ConfigError::WrongMatrixShape {
            what,
            expected_rows: nrows,
            expected_cols: ncols,
            rows: rows.len(),
            cols: got_cols,
        });
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn to_vector(v: &[f64], what: &str, len: usize) -> Result<DVector<f64>, ConfigError> {
    if v.len() != len {
        return Err(ConfigError::WrongCount {
            what: what.to_string(),
            expected: len,
            got: v.len(),
        });
    }
    Ok(DVector::from_row_slice(v))
}

fn to_box(
    lo: &[f64],
    hi: &[f64],
    what_lo: &str,
    what_hi: &str,
    len: usize,
) -> Result<IntervalVector, ConfigError> {
    Ok(IntervalVector::new(
        to_vector(lo, what_lo, len)?,
        to_vector(hi, what_hi, len)?,
    )?)
}

/// Validates the config and assembles the runtime [`SystemModel`]
/// (decompositions, gain matrices and Lipschitz constants included).
pub fn build_model(cfg: &SystemConfig) -> Result<SystemModel, ConfigError> {
    let Dimensions { n, m, l, p } = cfg.dimensions;
    for (value, what) in [(n, "n"), (l, "l"), (p, "p")] {
        if value == 0 {
            return Err(ConfigError::ZeroDimension { what });
        }
    }
    if cfg.dynamics.f.len() != n {
        return Err(ConfigError::WrongCount {
            what: "dynamics.f".to_string(),
            expected: n,
            got: cfg.dynamics.f.len(),
        });
    }
    if cfg.dynamics.g.len() != l {
        return Err(ConfigError::WrongCount {
            what: "dynamics.g".to_string(),
            expected: l,
            got: cfg.dynamics.g.len(),
        });
    }
    let names = state_vars(n);
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    let f = parse_all(&cfg.dynamics.f, &vars, "dynamics.f")?;
    let g = parse_all(&cfg.dynamics.g, &vars, "dynamics.g")?;

    let jacobian_bounds = match &cfg.jacobian_bounds {
        None => None,
        Some(jb) => Some((
            JacobianBounds::new(
                to_matrix(&jb.f_low, "jacobian_bounds.f_low", n, n)?,
                to_matrix(&jb.f_high, "jacobian_bounds.f_high", n, n)?,
            )?,
            JacobianBounds::new(
                to_matrix(&jb.g_low, "jacobian_bounds.g_low", l, n)?,
                to_matrix(&jb.g_high, "jacobian_bounds.g_high", l, n)?,
            )?,
        )),
    };

    let model = SystemModel::new(ModelParts {
        f,
        g,
        b: to_matrix(&cfg.matrices.b, "matrices.b", n, m)?,
        d: to_matrix(&cfg.matrices.d, "matrices.d", l, m)?,
        g_unknown: to_matrix(&cfg.matrices.g, "matrices.g", n, p)?,
        h_unknown: to_matrix(&cfg.matrices.h, "matrices.h", l, p)?,
        w: to_box(&cfg.noise.w_lo, &cfg.noise.w_hi, "noise.w_lo", "noise.w_hi", n)?,
        v: to_box(&cfg.noise.v_lo, &cfg.noise.v_hi, "noise.v_lo", "noise.v_hi", l)?,
        domain: to_box(&cfg.domain.lo, &cfg.domain.hi, "domain.lo", "domain.hi", n)?,
        jacobian_bounds,
        grid_points: None,
    })?;
    Ok(model)
}

/// Assembles the experiment scenario (signals, horizon, seed and the
/// initial-state box).
pub fn build_scenario(cfg: &SystemConfig) -> Result<Scenario, ConfigError> {
    let Dimensions { n, m, p, .. } = cfg.dimensions;
    if cfg.scenario.u.len() != m {
        return Err(ConfigError::WrongCount {
            what: "scenario.u".to_string(),
            expected: m,
            got: cfg.scenario.u.len(),
        });
    }
    if cfg.scenario.d.len() != p {
        return Err(ConfigError::WrongCount {
            what: "scenario.d".to_string(),
            expected: p,
            got: cfg.scenario.d.len(),
        });
    }
    let mut names = vec!["k".to_string()];
    names.extend(state_vars(n));
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    let u = parse_all(&cfg.scenario.u, &vars, "scenario.u")?;
    let d = parse_all(&cfg.scenario.d, &vars, "scenario.d")?;
    let x0 = to_box(
        &cfg.initial.x0_lo,
        &cfg.initial.x0_hi,
        "initial.x0_lo",
        "initial.x0_hi",
        n,
    )?;
    Ok(Scenario {
        u,
        d,
        horizon: cfg.scenario.horizon,
        seed: cfg.scenario.seed,
        x0,
    })
}
