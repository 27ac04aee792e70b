//! Discrepancy functionals between student and teacher outputs.

use serde::{Deserialize, Serialize};

use crate::diff::{softdtw_table, Tape, Var, DP_SENTINEL};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    Mse,
    Rmse,
    Mae,
    Softdtw,
    RelativeL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub id: LossId,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.01
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            id: LossId::Mse,
            gamma: default_gamma(),
        }
    }
}

impl LossSpec {
    pub fn mse() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id == LossId::Softdtw && !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("soft-DTW gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self.id {
            LossId::Mse => mse(a, b),
            LossId::Rmse => rmse(a, b),
            LossId::Mae => mae(a, b),
            LossId::RelativeL2 => relative_l2(a, b),
            LossId::Softdtw => softdtw(a, b, self.gamma),
        }
    }

    /// Record the loss on a tape. Only the differentiable training losses
    /// (mse, softdtw) are supported.
    pub fn record(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        match self.id {
            LossId::Mse => mse_on(tape, a, b),
            LossId::Softdtw => tape.softdtw(a, b, self.gamma),
            other => Err(Error::Unsupported {
                op: "loss",
                detail: format!("{other:?} as a differentiable objective"),
            }),
        }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("loss", format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    mse(a, b).map(f64::sqrt)
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `‖a - b‖₂ / ‖b‖₂`, a reported metric only.
pub fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter("relative L2 against a zero reference".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean squared difference recorded on a tape.
pub fn mse_on(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    tape.mean_square(d)
}

fn check_seq(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::shape("dtw", "empty sequence"));
    }
    Ok(())
}

/// Classic DTW with squared-Euclidean local cost.
pub fn dtw_hard(x: &[f64], y: &[f64]) -> Result<f64> {
    check_seq(x, y)?;
    let m = y.len();
    let w = m + 1;
    let mut d = vec![DP_SENTINEL; (x.len() + 1) * w];
    d[0] = 0.0;
    for i in 1..=x.len() {
        for j in 1..=m {
            let best = d[(i - 1) * w + j].min(d[i * w + j - 1]).min(d[(i - 1) * w + j - 1]);
            d[i * w + j] = (x[i - 1] - y[j - 1]).powi(2) + best;
        }
    }
    Ok(d[x.len() * w + m])
}

/// Soft-DTW with a log-sum-exp soft minimum of temperature `gamma`.
pub fn softdtw(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("soft-DTW gamma must be positive, got {gamma}")));
    }
    check_seq(x, y)?;
    let r = softdtw_table(x, y, gamma);
    Ok(r[x.len() * (y.len() + 1) + y.len()])
}
