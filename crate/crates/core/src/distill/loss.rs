//! Meta-losses comparing an induced update `g` with the true update `θ`, and
//! the soft-label projection.

use crate::error::{Error, Result};
use crate::nn::{self, Matrix, ModelParams};

/// Entries of projected label rows are floored here before renormalizing.
pub const LABEL_FLOOR: f64 = 1e-6;

/// `Σ_i (θ_i − g_i)²`.
pub fn param_sq_loss(theta: &[f64], g: &[f64]) -> Result<f64> {
    if theta.len() != g.len() {
        return Err(Error::Shape(format!(
            "θ has {} entries, g has {}",
            theta.len(),
            g.len()
        )));
    }
    Ok(theta.iter().zip(g).map(|(t, g)| (t - g) * (t - g)).sum())
}

/// Mean KL between the predictions of `w0 − θ` and of `w0 − g` on `client_x`.
pub fn function_kl_loss(client_x: &Matrix, w0: &ModelParams, theta: &[f64], g: &[f64]) -> Result<f64> {
    let target = nn::forward(&w0.step(theta)?, client_x)?;
    let pred = nn::forward(&w0.step(g)?, client_x)?;
    nn::kl_loss(&pred, &target)
}

/// Clamps each entry to at least [`LABEL_FLOOR`], then rescales each row to
/// sum to one.
pub fn project_simplex(y: &Matrix) -> Matrix {
    let mut out = y.clone();
    project_simplex_in_place(&mut out);
    out
}

pub(crate) fn project_simplex_in_place(y: &mut Matrix) {
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        for v in row.iter_mut() {
            *v = v.max(LABEL_FLOOR);
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Which meta-loss a fit minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    ParamSq,
    FunctionKl,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "param_sq" => Ok(Self::ParamSq),
            "function_kl" => Ok(Self::FunctionKl),
            other => Err(Error::Config(format!("unknown loss variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ParamSq => "param_sq",
            Self::FunctionKl => "function_kl",
        })
    }
}

/// A meta-loss with its fixed targets precomputed.
pub enum MetaLoss<'a> {
    ParamSq {
        theta: &'a [f64],
    },
    FunctionKl {
        x: &'a Matrix,
        w0: &'a ModelParams,
        /// Predictions of `w0 − θ` on `x`.
        target: Matrix,
    },
}

impl<'a> MetaLoss<'a> {
    pub fn param_sq(theta: &'a [f64]) -> Self {
        Self::ParamSq { theta }
    }

    pub fn function_kl(x: &'a Matrix, w0: &'a ModelParams, theta: &[f64]) -> Result<Self> {
        let target = nn::forward(&w0.step(theta)?, x)?;
        Ok(Self::FunctionKl { x, w0, target })
    }

    /// Loss value and `∂ℳ/∂g`.
    pub fn value_and_cotangent(&self, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Self::ParamSq { theta } => {
                let v = param_sq_loss(theta, g)?;
                Ok((v, theta.iter().zip(g).map(|(t, g)| -2.0 * (t - g)).collect()))
            }
            Self::FunctionKl { x, w0, target } => {
                // ℳ(g) = KL(target ‖ f(x; w0 − g)), so ∂ℳ/∂g = −∇_w KL at w0 − g
                let (v, grad) = nn::loss_and_grad(&w0.step(g)?, x, target)?;
                Ok((v, grad.into_iter().map(|d| -d).collect()))
            }
        }
    }
}
