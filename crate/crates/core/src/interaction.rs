//! Range-controlled projection of both modalities and their elementwise
//! interaction into the per-frame cross features.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{concat_cols, Bound, ParamSet, Scalar, Tensor, Var};

/// Added to the row standard deviation in gauss mode.
pub const GAUSS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Tanh,
    /// Per-row standardization to zero mean and unit variance.
    Gauss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Mul,
    Sub,
    /// Plain concatenation, the non-interacting baseline.
    Concat,
}

impl InteractionKind {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Self::Concat => 2 * d,
            _ => d,
        }
    }
}

macro_rules! text_enum {
    ($ty:ty, $($variant:ident => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} `{s}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(Normalization, Tanh => "tanh", Gauss => "gauss");
text_enum!(InteractionKind, Mul => "mul", Sub => "sub", Concat => "concat");

/// An affine map `d -> d` stored as `<prefix>.w` and `<prefix>.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub prefix: String,
    pub dim: usize,
}

impl Projection {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
        }
    }

    pub fn init<S: Scalar>(&self, params: &mut ParamSet<S>, rng: &mut impl Rng) {
        let d = self.dim;
        params.insert(
            format!("{}.w", self.prefix),
            Tensor::uniform(&[d, d], 1.0 / (d as f64).sqrt(), rng),
        );
        params.insert(format!("{}.b", self.prefix), Tensor::zeros(&[d]));
    }

    pub fn apply<'g, S: Scalar>(
        &self,
        bound: &Bound<'g, S>,
        states: Var<'g, S>,
        mode: Normalization,
    ) -> Result<Var<'g, S>> {
        let w = bound.get(&format!("{}.w", self.prefix))?;
        let b = bound.get(&format!("{}.b", self.prefix))?;
        project_normalize(states, w, b, mode)
    }
}

/// `N(states · w + b)` with `N` chosen by `mode`.
pub fn project_normalize<'g, S: Scalar>(
    states: Var<'g, S>,
    w: Var<'g, S>,
    b: Var<'g, S>,
    mode: Normalization,
) -> Result<Var<'g, S>> {
    let z = states.matmul(w)?.add(b)?;
    Ok(match mode {
        Normalization::Tanh => z.tanh()?,
        Normalization::Gauss => z.row_standardize(S::of(GAUSS_EPS))?,
    })
}

pub fn interact<'g, S: Scalar>(video: Var<'g, S>, query: Var<'g, S>, kind: InteractionKind) -> Result<Var<'g, S>> {
    Ok(match kind {
        InteractionKind::Mul => video.mul(query)?,
        InteractionKind::Sub => video.sub(query)?,
        InteractionKind::Concat => {
            if video.shape() != query.shape() {
                return Err(crate::numerics::NumericsError::ShapeMismatch {
                    op: "interact",
                    left: video.shape(),
                    right: query.shape(),
                }
                .into());
            }
            concat_cols(&[video, query])?
        }
    })
}
