//! Scalar nonlinearities and their weight-space symmetry classes.
//!
//! Every built-in activation carries a declared [`SymmetryClass`]. The class
//! decides how hidden neurons are canonicalized before clustering and which
//! compensation keeps a sign flip functionally neutral:
//!
//! - odd (+ constant): `σ(u) = 2·c0 − σ(−u)`
//! - even + linear: `σ(u) = σ(−u) + 2·c1·u`
//! - positive scaling: `a·σ(u) = (c·a)·σ(u / c)` for `c > 0`
//!
//! [`classify_activation_symmetry`] recovers the class of an arbitrary scalar
//! map numerically, so the declared classes can be checked against it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry group of a scalar activation, as far as it matters for
/// identifying hidden neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymmetryClass {
    None,
    Odd,
    OddConstant,
    EvenLinear,
    EvenLinearConstant,
    EvenLinearPosScale,
}

impl SymmetryClass {
    /// Whether a neuron's `(w, b)` sign can be flipped with some compensation.
    pub fn has_sign_symmetry(self) -> bool {
        !matches!(self, SymmetryClass::None)
    }

    pub fn is_odd(self) -> bool {
        matches!(self, SymmetryClass::Odd | SymmetryClass::OddConstant)
    }

    pub fn is_even_linear(self) -> bool {
        matches!(
            self,
            SymmetryClass::EvenLinear | SymmetryClass::EvenLinearConstant | SymmetryClass::EvenLinearPosScale
        )
    }

    pub fn has_positive_scaling(self) -> bool {
        matches!(self, SymmetryClass::EvenLinearPosScale)
    }
}

/// Built-in activation functions.
///
/// `G` is `sigmoid(4x) + softplus(x)`, an activation with no sign symmetry.
/// `Identity` is a linear map; it is useful for closed-form checks but is
/// degenerate for identification since every symmetry holds at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Gelu,
    Silu,
    Softplus,
    Sigmoid,
    Tanh,
    G,
    Identity,
}

pub const LEAKY_SLOPE: f64 = 0.01;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn sigmoid_from(x: f64, e: f64) -> f64 {
    // e = exp(-|x|)
    if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    sigmoid_from(x, (-x.abs()).exp())
}

#[inline]
fn softplus_from(x: f64, e: f64) -> f64 {
    x.max(0.0) + e.ln_1p()
}

impl Activation {
    pub const ALL: [Activation; 9] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Gelu,
        Activation::Silu,
        Activation::Softplus,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::G,
        Activation::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leakyrelu",
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::G => "g",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus_from(x, (-x.abs()).exp()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::G => {
                let e = (-x.abs()).exp();
                let e2 = e * e;
                sigmoid_from(x, e2 * e2) + softplus_from(x, e)
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        self.eval_with_deriv(x).1
    }

    /// Value and derivative in one pass. The value is bit-identical to
    /// [`Activation::eval`].
    #[inline]
    pub fn eval_with_deriv(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (x.max(0.0), 0.0)
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (LEAKY_SLOPE * x, LEAKY_SLOPE)
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
                (
                    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
                    cdf + x * pdf,
                )
            }
            Activation::Silu => {
                let s = sigmoid(x);
                (x * s, s + x * s * (1.0 - s))
            }
            Activation::Softplus => {
                let e = (-x.abs()).exp();
                (softplus_from(x, e), sigmoid_from(x, e))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::G => {
                let e = (-x.abs()).exp();
                let e2 = e * e;
                let s4 = sigmoid_from(x, e2 * e2);
                let s1 = sigmoid_from(x, e);
                (s4 + softplus_from(x, e), 4.0 * s4 * (1.0 - s4) + s1)
            }
            Activation::Identity => (x, 1.0),
        }
    }

    /// Declared symmetry class.
    pub fn symmetry(self) -> SymmetryClass {
        match self {
            Activation::Relu | Activation::LeakyRelu => SymmetryClass::EvenLinearPosScale,
            Activation::Gelu | Activation::Silu => SymmetryClass::EvenLinear,
            Activation::Softplus => SymmetryClass::EvenLinearConstant,
            Activation::Sigmoid => SymmetryClass::OddConstant,
            Activation::Tanh => SymmetryClass::Odd,
            Activation::G => SymmetryClass::None,
            Activation::Identity => SymmetryClass::Odd,
        }
    }

    /// Constant offset of the odd decomposition, `(σ(1) + σ(−1)) / 2`.
    pub fn c0(self) -> f64 {
        0.5 * (self.eval(1.0) + self.eval(-1.0))
    }

    /// Slope of the linear part of the even decomposition, `(σ(1) − σ(−1)) / 2`.
    pub fn c1(self) -> f64 {
        0.5 * (self.eval(1.0) - self.eval(-1.0))
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::Relu | Activation::LeakyRelu => &[0.0],
            _ => &[],
        }
    }

    /// Asymptotic behaviour `σ(u) ≈ slope·u + intercept` as `u → ±∞`.
    /// Exact for piecewise-linear activations on the respective side of the kink.
    pub fn asymptote(self, positive: bool) -> (f64, f64) {
        match (self, positive) {
            (Activation::Relu, true) => (1.0, 0.0),
            (Activation::Relu, false) => (0.0, 0.0),
            (Activation::LeakyRelu, true) => (1.0, 0.0),
            (Activation::LeakyRelu, false) => (LEAKY_SLOPE, 0.0),
            (Activation::Gelu | Activation::Silu | Activation::Softplus, true) => (1.0, 0.0),
            (Activation::Gelu | Activation::Silu | Activation::Softplus, false) => (0.0, 0.0),
            (Activation::Sigmoid, true) => (0.0, 1.0),
            (Activation::Sigmoid, false) => (0.0, 0.0),
            (Activation::Tanh, true) => (0.0, 1.0),
            (Activation::Tanh, false) => (0.0, -1.0),
            (Activation::G, true) => (1.0, 1.0),
            (Activation::G, false) => (0.0, 0.0),
            (Activation::Identity, _) => (1.0, 0.0),
        }
    }

    /// Whether [`Activation::asymptote`] holds exactly away from the kink.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu | Activation::Identity)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == lower)
            .or(match lower.as_str() {
                "leaky_relu" => Some(Activation::LeakyRelu),
                "swish" => Some(Activation::Silu),
                "linear" => Some(Activation::Identity),
                _ => None,
            })
            .ok_or_else(|| Error::Argument(format!("unknown activation `{s}`")))
    }
}

/// Result of numerically classifying a scalar map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryInfo {
    pub class: SymmetryClass,
    pub c0: f64,
    pub c1: f64,
}

const CLASSIFY_TOL: f64 = 1e-8;
const SCALES: [f64; 3] = [0.5, 2.0, 7.0];

/// The grid `x ∈ [−10, 10]` with step `0.01`.
pub fn symmetry_grid() -> impl Iterator<Item = f64> {
    (-1000..=1000).map(|i| i as f64 * 0.01)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CLASSIFY_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Classify a scalar map by testing the odd(+constant), even+linear and
/// positive-scaling identities on the grid `[−10, 10]`.
///
/// Affine maps satisfy both the odd and the even+linear identity; they are
/// rejected as [`Error::DegenerateActivation`].
pub fn classify_activation_symmetry<F>(f: F) -> Result<SymmetryInfo>
where
    F: Fn(f64) -> f64,
{
    let grid: Vec<f64> = symmetry_grid().collect();
    if let Some(x) = grid.iter().copied().find(|&x| !f(x).is_finite() || !f(-x).is_finite()) {
        return Err(Error::Argument(format!("activation is not finite at x = {x}")));
    }
    let c0 = 0.5 * (f(1.0) + f(-1.0));
    let c1 = 0.5 * (f(1.0) - f(-1.0));

    let odd = grid.iter().all(|&x| close(0.5 * (f(x) + f(-x)), c0));
    let even_linear = grid
        .iter()
        .filter(|x| x.abs() > 1e-9)
        .all(|&x| close((f(x) - f(-x)) / (2.0 * x), c1));
    let pos_scale = grid.iter().all(|&x| SCALES.iter().all(|&c| close(f(c * x), c * f(x))));

    let class = match (odd, even_linear) {
        (true, true) => return Err(Error::DegenerateActivation),
        (true, false) => {
            if c0.abs() <= CLASSIFY_TOL {
                SymmetryClass::Odd
            } else {
                SymmetryClass::OddConstant
            }
        }
        (false, true) => {
            if pos_scale {
                SymmetryClass::EvenLinearPosScale
            } else if f(0.0).abs() > CLASSIFY_TOL {
                SymmetryClass::EvenLinearConstant
            } else {
                SymmetryClass::EvenLinear
            }
        }
        (false, false) => SymmetryClass::None,
    };
    Ok(SymmetryInfo { class, c0, c1 })
}
