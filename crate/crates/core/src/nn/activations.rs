use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_clamped(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Max-subtracted softmax over a slice.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `ln Σ exp(x_i)`, stable for large magnitudes.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Softmax,
    Softplus,
    Sigmoid,
}

impl Activation {
    /// Applies the activation to one output row.
    pub fn apply(self, row: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Softmax => softmax_in_place(row),
            Activation::Softplus => row.iter_mut().for_each(|x| *x = softplus(*x)),
            Activation::Sigmoid => row.iter_mut().for_each(|x| *x = sigmoid(*x)),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "linear" => Ok(Activation::Linear),
            "softmax" => Ok(Activation::Softmax),
            "softplus" => Ok(Activation::Softplus),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}
