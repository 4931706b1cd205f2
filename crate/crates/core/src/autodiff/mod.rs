//! Minimal reverse-mode differentiable tensor engine.
//!
//! Everything the networks in this crate need and nothing more: NCHW
//! convolutions, group normalization, SiLU, nearest upsampling, channel
//! concat/split, broadcasting arithmetic and mean-square reductions, plus
//! Adam/AdamW.
//!
//! ```
//! use terrain_diffusion::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.input(Tensor::scalar(2.0), true).unwrap();
//! let x = tape.constant(Tensor::scalar(3.0)).unwrap();
//! let y = tape.mul(w, x).unwrap();
//! let loss = tape.mean_square(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! // d/dw (w·x)² = 2·x²·w = 36
//! assert_eq!(grads.wrt(w, &[1]).item(), 36.0);
//! ```

mod kernels;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

use std::str::FromStr;

pub use optim::{adam_step, adamw_step, AdamConfig, OptimizerState};
pub use params::{init, Parameter, ParameterSet};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{DType, Element, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by backward")]
    TapeConsumed,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "matmul" => OpKind::Matmul,
            "conv2d" => OpKind::Conv2d,
            "upsample2" => OpKind::Upsample2,
            "downsample2" => OpKind::Downsample2,
            "group_norm" => OpKind::GroupNorm,
            "silu" => OpKind::Silu,
            "exp" => OpKind::Exp,
            "mean_square" => OpKind::MeanSquare,
            "mean" => OpKind::Mean,
            "concat_channels" => OpKind::ConcatChannels,
            "slice_channels" => OpKind::SliceChannels,
            "scalar_affine" => OpKind::ScalarAffine,
            "reshape" => OpKind::Reshape,
            other => return Err(AutodiffError::UnknownOp(other.to_string())),
        })
    }
}

/// Attributes for [`forward_op`]; each kind reads only the fields it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct OpAttrs {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub eps: f64,
    pub scale: f64,
    pub shift: f64,
    pub start: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

impl Default for OpAttrs {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            groups: 1,
            eps: nn::GROUP_NORM_EPS,
            scale: 1.0,
            shift: 0.0,
            start: 0,
            len: 1,
            shape: Vec::new(),
        }
    }
}

/// Records `kind` applied to `inputs` on the tape.
///
/// Conv2d takes `[x, w]` or `[x, w, bias]`; group norm takes `[x, gamma, beta]`.
pub fn forward_op<T: Element>(
    tape: &mut Tape<T>,
    kind: OpKind,
    inputs: &[Var],
    attrs: &OpAttrs,
) -> Result<Var, AutodiffError> {
    let arity = |n: usize| -> Result<(), AutodiffError> {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(AutodiffError::InvalidArgument(format!(
                "{kind:?} takes {n} inputs, got {}",
                inputs.len()
            )))
        }
    };
    match kind {
        OpKind::Add => arity(2).and_then(|_| tape.add(inputs[0], inputs[1])),
        OpKind::Sub => arity(2).and_then(|_| tape.sub(inputs[0], inputs[1])),
        OpKind::Mul => arity(2).and_then(|_| tape.mul(inputs[0], inputs[1])),
        OpKind::Matmul => arity(2).and_then(|_| tape.matmul(inputs[0], inputs[1])),
        OpKind::Conv2d => match inputs {
            [x, w] => tape.conv2d(*x, *w, None, attrs.stride, attrs.pad),
            [x, w, b] => tape.conv2d(*x, *w, Some(*b), attrs.stride, attrs.pad),
            _ => Err(AutodiffError::InvalidArgument("conv2d takes 2 or 3 inputs".into())),
        },
        OpKind::Upsample2 => arity(1).and_then(|_| tape.upsample2(inputs[0])),
        OpKind::Downsample2 => arity(1).and_then(|_| tape.downsample2(inputs[0])),
        OpKind::GroupNorm => {
            arity(3).and_then(|_| tape.group_norm(inputs[0], inputs[1], inputs[2], attrs.groups, attrs.eps))
        }
        OpKind::Silu => arity(1).and_then(|_| tape.silu(inputs[0])),
        OpKind::Exp => arity(1).and_then(|_| tape.exp(inputs[0])),
        OpKind::MeanSquare => arity(1).and_then(|_| tape.mean_square(inputs[0])),
        OpKind::Mean => arity(1).and_then(|_| tape.mean(inputs[0])),
        OpKind::ConcatChannels => tape.concat_channels(inputs),
        OpKind::SliceChannels => arity(1).and_then(|_| tape.slice_channels(inputs[0], attrs.start, attrs.len)),
        OpKind::ScalarAffine => arity(1).and_then(|_| tape.scalar_affine(inputs[0], attrs.scale, attrs.shift)),
        OpKind::Reshape => arity(1).and_then(|_| tape.reshape(inputs[0], &attrs.shape)),
    }
}
