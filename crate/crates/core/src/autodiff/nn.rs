//! Layer helpers: parameter creation under a name prefix and the matching
//! tape application.

use rand::Rng;

use super::params::{init, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::{Element, Tensor};
use super::AutodiffError;

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Largest divisor of `channels` not above 8.
pub fn group_count(channels: usize) -> usize {
    (1..=channels.min(8)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

pub fn init_conv<T: Element>(
    ps: &mut ParameterSet<T>,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    let fan_in = cin * kernel * kernel;
    ps.insert(
        format!("{name}.weight"),
        init::kaiming(&[cout, cin, kernel, kernel], fan_in, rng),
        true,
    )?;
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[cout]), true)
}

/// Convolution whose weights and bias start at exactly zero.
pub fn init_zero_conv<T: Element>(
    ps: &mut ParameterSet<T>,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
) -> Result<(), AutodiffError> {
    ps.insert(format!("{name}.weight"), Tensor::zeros(&[cout, cin, kernel, kernel]), true)?;
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[cout]), true)
}

/// Applies `name.weight`/`name.bias` with "same" padding for odd kernels.
pub fn conv<T: Element>(
    tape: &mut Tape<T>,
    ps: &ParameterSet<T>,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var, AutodiffError> {
    let w = tape.param(ps, &format!("{name}.weight"))?;
    let b = tape.param(ps, &format!("{name}.bias"))?;
    let k = tape.shape(w)[2];
    tape.conv2d(x, w, Some(b), stride, k / 2)
}

pub fn init_group_norm<T: Element>(ps: &mut ParameterSet<T>, name: &str, channels: usize) -> Result<(), AutodiffError> {
    ps.insert(format!("{name}.gamma"), Tensor::ones(&[channels]), true)?;
    ps.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), true)
}

pub fn group_norm<T: Element>(
    tape: &mut Tape<T>,
    ps: &ParameterSet<T>,
    name: &str,
    x: Var,
) -> Result<Var, AutodiffError> {
    let g = tape.param(ps, &format!("{name}.gamma"))?;
    let b = tape.param(ps, &format!("{name}.beta"))?;
    let c = tape.shape(x)[1];
    tape.group_norm(x, g, b, group_count(c), GROUP_NORM_EPS)
}

pub fn init_linear<T: Element>(
    ps: &mut ParameterSet<T>,
    name: &str,
    din: usize,
    dout: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    ps.insert(format!("{name}.weight"), init::kaiming(&[din, dout], din, rng), true)?;
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[1, dout]), true)
}

/// `x[n, din] · W[din, dout] + b`.
pub fn linear<T: Element>(
    tape: &mut Tape<T>,
    ps: &ParameterSet<T>,
    name: &str,
    x: Var,
) -> Result<Var, AutodiffError> {
    let w = tape.param(ps, &format!("{name}.weight"))?;
    let b = tape.param(ps, &format!("{name}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_counts() {
        assert_eq!(group_count(1), 1);
        assert_eq!(group_count(4), 4);
        assert_eq!(group_count(8), 8);
        assert_eq!(group_count(32), 8);
        assert_eq!(group_count(12), 6);
    }
}
