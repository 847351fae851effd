//! Cumulative-exponential ordering bijection.
//!
//! `ord` maps any finite vector onto a strictly increasing one:
//! the first entry passes through and each later entry adds `exp(x_i)` to the
//! running total. Ordered priors are defined on the pre-transform coordinates,
//! so callers only need the forward map, its inverse, and the chain rule.

use crate::error::{ensure_finite, Error, Result};

/// Strictly increasing vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedVector(Vec<f64>);

/// Strictly decreasing vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseOrderedVector(Vec<f64>);

impl OrderedVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_increasing(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl ReverseOrderedVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_decreasing(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Which way an ordered parameter vector runs across classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

pub(crate) fn check_increasing(values: &[f64]) -> Result<()> {
    ensure_finite(values)?;
    match values.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(Error::NotOrdered(i + 1)),
        None => Ok(()),
    }
}

pub(crate) fn check_decreasing(values: &[f64]) -> Result<()> {
    ensure_finite(values)?;
    match values.windows(2).position(|w| w[1] >= w[0]) {
        Some(i) => Err(Error::NotOrdered(i + 1)),
        None => Ok(()),
    }
}

pub(crate) fn ord_into(x: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for (i, (&xi, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        acc = if i == 0 { xi } else { acc + xi.exp() };
        *o = acc;
    }
}

pub fn ord(x: &[f64]) -> Result<OrderedVector> {
    ensure_finite(x)?;
    let mut out = vec![0.0; x.len()];
    ord_into(x, &mut out);
    Ok(OrderedVector(out))
}

pub fn ord_inverse(lambda: &[f64]) -> Result<Vec<f64>> {
    check_increasing(lambda)?;
    Ok(lambda
        .iter()
        .enumerate()
        .map(|(i, &l)| if i == 0 { l } else { (l - lambda[i - 1]).ln() })
        .collect())
}

pub fn ord_reversed(x: &[f64]) -> Result<ReverseOrderedVector> {
    let mut v = ord(x)?.into_inner();
    v.reverse();
    Ok(ReverseOrderedVector(v))
}

pub fn ord_reversed_inverse(values: &[f64]) -> Result<Vec<f64>> {
    check_decreasing(values)?;
    let mut v = values.to_vec();
    v.reverse();
    ord_inverse(&v)
}

/// `log |det J|` of `ord` at `x`: the Jacobian is lower triangular with
/// diagonal `(1, exp(x_2), ..., exp(x_C))`.
pub fn ord_log_det_jacobian(x: &[f64]) -> f64 {
    x.iter().skip(1).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn sigmoid_ord_into(x: &[f64], direction: Direction, out: &mut [f64]) {
    ord_into(x, out);
    for o in out.iter_mut() {
        *o = sigmoid(*o);
    }
    if direction == Direction::Decreasing {
        out.reverse();
    }
}

/// Element-wise sigmoid of `ord(x)`, reversed for [`Direction::Decreasing`].
pub fn sigmoid_ord(x: &[f64], direction: Direction) -> Result<Vec<f64>> {
    ensure_finite(x)?;
    let mut out = vec![0.0; x.len()];
    sigmoid_ord_into(x, direction, &mut out);
    Ok(out)
}

/// Inverse of [`sigmoid_ord`] for values strictly inside (0, 1).
pub fn sigmoid_ord_inverse(values: &[f64], direction: Direction) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain(format!("value at position {i} outside (0, 1)")));
    }
    let logits: Vec<f64> = values.iter().map(|&v| logit(v)).collect();
    match direction {
        Direction::Increasing => ord_inverse(&logits),
        Direction::Decreasing => ord_reversed_inverse(&logits),
    }
}

/// Pulls an adjoint on `ord(x)` back onto `x`.
pub(crate) fn ord_backprop(x: &[f64], adj_lambda: &[f64], grad_x: &mut [f64]) {
    let mut suffix = 0.0;
    for j in (0..x.len()).rev() {
        suffix += adj_lambda[j];
        grad_x[j] += if j == 0 { suffix } else { suffix * x[j].exp() };
    }
}
