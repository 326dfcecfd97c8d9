//! Pointwise activations: NLReLU and the comparison set.
//!
//! Every kind exposes its value and its derivative. At a kink the derivative
//! takes the value from the left, so ReLU and NLReLU report 0 at `x = 0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SELU scale.
pub const SELU_LAMBDA: f64 = 1.0507009874;
/// SELU negative-branch saturation.
pub const SELU_ALPHA: f64 = 1.6732632424;
/// Fixed slope of leaky ReLU on the negative axis.
pub const LRELU_SLOPE: f64 = 0.01;
/// Initial value of the learnable PReLU slope.
pub const PRELU_INIT: f64 = 0.25;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Nlrelu,
    Relu,
    Softplus,
    Sigmoid,
    Elu,
    Prelu,
    Lrelu,
    Selu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 8] = [
        ActivationKind::Relu,
        ActivationKind::Softplus,
        ActivationKind::Sigmoid,
        ActivationKind::Elu,
        ActivationKind::Prelu,
        ActivationKind::Lrelu,
        ActivationKind::Nlrelu,
        ActivationKind::Selu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Nlrelu => "nlrelu",
            ActivationKind::Relu => "relu",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Elu => "elu",
            ActivationKind::Prelu => "prelu",
            ActivationKind::Lrelu => "lrelu",
            ActivationKind::Selu => "selu",
        }
    }

    fn default_param(self) -> f64 {
        match self {
            ActivationKind::Elu => ELU_ALPHA,
            ActivationKind::Prelu => PRELU_INIT,
            ActivationKind::Lrelu => LRELU_SLOPE,
            _ => 0.0,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

/// An activation kind with its scalar parameter.
///
/// `param` is the ELU alpha, the leaky-ReLU slope, or the PReLU slope; the
/// other kinds ignore it. Only the PReLU slope is trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
    pub param: f64,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self {
            kind,
            param: kind.default_param(),
        }
    }

    pub fn with_param(kind: ActivationKind, param: f64) -> Self {
        Self { kind, param }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ActivationKind::Prelu
    }

    pub fn forward(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Nlrelu => nlrelu(x),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Elu => {
                if x > 0.0 {
                    x
                } else {
                    self.param * x.exp_m1()
                }
            }
            ActivationKind::Prelu | ActivationKind::Lrelu => {
                if x > 0.0 {
                    x
                } else {
                    self.param * x
                }
            }
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    /// df/dx.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Nlrelu => nlrelu_derivative(x),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Softplus => sigmoid(x),
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    self.param * x.exp()
                }
            }
            ActivationKind::Prelu | ActivationKind::Lrelu => {
                if x > 0.0 {
                    1.0
                } else {
                    self.param
                }
            }
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
        }
    }

    /// df/d(param) for the trainable PReLU slope, zero for every other kind.
    pub fn param_derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Prelu if x <= 0.0 => x,
            _ => 0.0,
        }
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.forward(v))
    }

    pub fn derivative_tensor(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.derivative(v))
    }
}

/// `ln(x + 1)` for `x > 0`, otherwise 0.
pub fn nlrelu(x: f64) -> f64 {
    if x > 0.0 {
        x.ln_1p()
    } else {
        0.0
    }
}

/// `1 / (x + 1)` for `x > 0`, otherwise 0 (including `x = 0`).
pub fn nlrelu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / (x + 1.0)
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
