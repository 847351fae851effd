//! Density kernels, parameter gradients and samplers for the distribution
//! families in the model: Normal, Gamma, Dirichlet, Categorical, Beta in
//! mode/concentration form and the zero-inflated Geometric.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{ensure_finite, Error, Result};
use crate::model::Hyperparams;
use crate::simplex::{log_stick_breaking, log_stick_breaking_backprop};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beta distribution parameterized by its mode and a concentration above 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaModeConc {
    mode: f64,
    concentration: f64,
}

impl BetaModeConc {
    pub fn new(mode: f64, concentration: f64) -> Result<Self> {
        if !(mode > 0.0 && mode < 1.0) {
            return Err(Error::Domain(format!("Beta mode {mode} outside (0, 1)")));
        }
        if !(concentration > 2.0) || !concentration.is_finite() {
            return Err(Error::Domain(format!(
                "Beta concentration {concentration} must exceed 2"
            )));
        }
        Ok(Self { mode, concentration })
    }

    pub fn mode(&self) -> f64 {
        self.mode
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    /// Standard shape parameters `(alpha, beta)`, both above 1.
    pub fn shapes(&self) -> (f64, f64) {
        let k = self.concentration - 2.0;
        (self.mode * k + 1.0, (1.0 - self.mode) * k + 1.0)
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = self.shapes();
        a / (a + b)
    }
}

/// Log density and its partial derivatives with respect to two parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityGrad {
    pub value: f64,
    pub d_first: f64,
    pub d_second: f64,
}

pub fn beta_logpdf(p: f64, params: &BetaModeConc) -> Result<f64> {
    Ok(beta_logpdf_grad(p, params)?.value)
}

/// Log density with derivatives in mode (`d_first`) and concentration (`d_second`).
pub fn beta_logpdf_grad(p: f64, params: &BetaModeConc) -> Result<LogDensityGrad> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("Beta support is (0, 1), got {p}")));
    }
    let (a, b) = params.shapes();
    let (lp, l1p) = (p.ln(), (-p).ln_1p());
    let value = (a - 1.0) * lp + (b - 1.0) * l1p - ln_beta(a, b);
    let dab = digamma(a + b);
    let da = lp - digamma(a) + dab;
    let db = l1p - digamma(b) + dab;
    let k = params.concentration - 2.0;
    Ok(LogDensityGrad {
        value,
        d_first: k * (da - db),
        d_second: params.mode * da + (1.0 - params.mode) * db,
    })
}

/// Zero-inflated Geometric over counts of failures before the first success.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflGeom {
    gate: f64,
    success: f64,
}

impl ZeroInflGeom {
    pub fn new(gate: f64, success: f64) -> Result<Self> {
        if !(gate > 0.0 && gate < 1.0) {
            return Err(Error::Domain(format!("gate {gate} outside (0, 1)")));
        }
        if !(success > 0.0 && success < 1.0) {
            return Err(Error::Domain(format!("success probability {success} outside (0, 1)")));
        }
        Ok(Self { gate, success })
    }

    /// Allows the closed boundary `gate ∈ [0, 1]`, used by sampling and tests.
    pub fn with_boundary_gate(gate: f64, success: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gate) {
            return Err(Error::Domain(format!("gate {gate} outside [0, 1]")));
        }
        if !(success > 0.0 && success <= 1.0) {
            return Err(Error::Domain(format!("success probability {success} outside (0, 1]")));
        }
        Ok(Self { gate, success })
    }

    pub fn gate(&self) -> f64 {
        self.gate
    }

    pub fn success(&self) -> f64 {
        self.success
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.gate) * (1.0 - self.success) / self.success
    }
}

pub fn zig_logpmf(q: i64, params: &ZeroInflGeom) -> Result<f64> {
    Ok(zig_logpmf_grad(q, params)?.value)
}

/// Log mass with derivatives in gate (`d_first`) and success probability (`d_second`).
pub fn zig_logpmf_grad(q: i64, params: &ZeroInflGeom) -> Result<LogDensityGrad> {
    if q < 0 {
        return Err(Error::Domain(format!("count must be non-negative, got {q}")));
    }
    let (d, b) = (params.gate, params.success);
    Ok(if q == 0 {
        let m = d + (1.0 - d) * b;
        LogDensityGrad {
            value: m.ln(),
            d_first: (1.0 - b) / m,
            d_second: (1.0 - d) / m,
        }
    } else {
        let qf = q as f64;
        LogDensityGrad {
            value: (-d).ln_1p() + qf * (-b).ln_1p() + b.ln(),
            d_first: -1.0 / (1.0 - d),
            d_second: 1.0 / b - qf / (1.0 - b),
        }
    })
}

/// `ln probs[k]`; a zero entry yields negative infinity.
pub fn categorical_logpmf(k: usize, probs: &[f64]) -> Result<f64> {
    check_simplex(probs)?;
    let p = probs
        .get(k)
        .ok_or_else(|| Error::Domain(format!("class {k} out of range for {} classes", probs.len())))?;
    Ok(if *p == 0.0 { f64::NEG_INFINITY } else { p.ln() })
}

pub(crate) fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain("probabilities must be finite and non-negative".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probabilities sum to {s}")));
    }
    Ok(())
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Gamma with shape/rate parameterization.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Dirichlet log density of a simplex point given as logs.
pub fn dirichlet_logpdf_from_logs(log_x: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + log_x.iter().zip(alpha).map(|(lx, a)| (a - 1.0) * lx).sum::<f64>()
}

fn flat_dirichlet_log_norm(size: usize) -> f64 {
    ln_gamma(size as f64)
}

/// Log prior density of an unconstrained parameter vector, including the
/// log-Jacobian terms of the simplex and concentration transforms.
///
/// Ordered coordinates carry iid Normal(mu, sigma) priors directly on the
/// pre-ordering values, so no ordering Jacobian appears.
pub fn prior_logdensity(x: &[f64], hyper: &Hyperparams) -> Result<f64> {
    let mut scratch = vec![0.0; x.len()];
    prior_logdensity_grad(x, hyper, &mut scratch)
}

/// As [`prior_logdensity`], adding the gradient into `grad`.
pub fn prior_logdensity_grad(x: &[f64], hyper: &Hyperparams, grad: &mut [f64]) -> Result<f64> {
    let layout = hyper.layout();
    if x.len() != layout.dim() || grad.len() != layout.dim() {
        return Err(Error::Domain(format!(
            "expected {} unconstrained coordinates, got {}",
            layout.dim(),
            x.len()
        )));
    }
    ensure_finite(x)?;
    let c = layout.classes;
    let mut total = 0.0;

    // Class weights: Dirichlet(alpha_z).
    let mut log_x = vec![0.0; c];
    let r = layout.class_weights();
    total += log_stick_breaking(&x[r.clone()], &mut log_x);
    total += dirichlet_logpdf_from_logs(&log_x, &hyper.alpha_z);
    let adj: Vec<f64> = hyper.alpha_z.iter().map(|a| a - 1.0).collect();
    log_stick_breaking_backprop(&x[r.clone()], &adj, true, &mut grad[r]);

    // Subject and object rows: flat Dirichlet.
    for (rows, size) in [
        (layout.subject_rows().collect::<Vec<_>>(), layout.subjects),
        (layout.object_rows().collect::<Vec<_>>(), layout.objects),
    ] {
        let zeros = vec![0.0; size];
        let mut lx = vec![0.0; size];
        for r in rows {
            total += flat_dirichlet_log_norm(size) + log_stick_breaking(&x[r.clone()], &mut lx);
            log_stick_breaking_backprop(&x[r.clone()], &zeros, true, &mut grad[r]);
        }
    }

    // Ordered Normal blocks on pre-ordering coordinates.
    let (mu, sigma) = (hyper.mu, hyper.sigma);
    for r in [
        layout.predicate_mode(),
        layout.quantifier_gate(),
        layout.quantifier_success(),
    ] {
        for i in r {
            total += normal_logpdf(x[i], mu, sigma);
            grad[i] -= (x[i] - mu) / (sigma * sigma);
        }
    }

    // kappa - 2 = exp(u) ~ Gamma(k, eta), plus the log-transform Jacobian u.
    let (k, eta) = (hyper.gamma_shape, hyper.gamma_rate);
    let norm = k * eta.ln() - ln_gamma(k);
    for i in layout.predicate_concentration() {
        let e = x[i].exp();
        total += norm + k * x[i] - eta * e;
        grad[i] += k - eta * e;
    }
    Ok(total)
}

/// A distribution to draw from.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Dirichlet(Vec<f64>),
    Categorical(Vec<f64>),
    Beta(BetaModeConc),
    ZeroInflGeom(ZeroInflGeom),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Real(f64),
    Count(u64),
    Class(usize),
    Simplex(Vec<f64>),
}

fn bad<E: std::fmt::Display>(e: E) -> Error {
    Error::Domain(e.to_string())
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum: take the last positive class.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = alpha
        .iter()
        .map(|&a| Ok(Gamma::new(a, 1.0).map_err(bad)?.sample(rng)))
        .collect::<Result<Vec<f64>>>()?;
    let s: f64 = draws.iter().sum();
    if !(s > 0.0) {
        // All gammas underflowed; fall back to the largest concentration.
        let i = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        draws.iter_mut().for_each(|d| *d = 0.0);
        draws[i] = 1.0;
        return Ok(draws);
    }
    draws.iter_mut().for_each(|d| *d /= s);
    Ok(draws)
}

pub(crate) fn sample_zig<R: Rng + ?Sized>(params: &ZeroInflGeom, rng: &mut R) -> Result<u64> {
    if rng.random::<f64>() < params.gate {
        return Ok(0);
    }
    Ok(Geometric::new(params.success).map_err(bad)?.sample(rng))
}

pub fn sample_kernel<R: Rng + ?Sized>(spec: &DistSpec, rng: &mut R) -> Result<Draw> {
    Ok(match spec {
        DistSpec::Normal { mean, sd } => {
            if !(*sd > 0.0) {
                return Err(Error::Domain(format!("Normal scale {sd} must be positive")));
            }
            let z: f64 = StandardNormal.sample(rng);
            Draw::Real(mean + sd * z)
        }
        DistSpec::Gamma { shape, rate } => {
            if !(*rate > 0.0) {
                return Err(Error::Domain(format!("Gamma rate {rate} must be positive")));
            }
            Draw::Real(Gamma::new(*shape, 1.0 / rate).map_err(bad)?.sample(rng))
        }
        DistSpec::Dirichlet(alpha) => {
            if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::Domain("Dirichlet concentrations must be positive".into()));
            }
            Draw::Simplex(sample_dirichlet(alpha, rng)?)
        }
        DistSpec::Categorical(probs) => {
            check_simplex(probs)?;
            Draw::Class(sample_categorical(probs, rng))
        }
        DistSpec::Beta(params) => {
            let (a, b) = params.shapes();
            Draw::Real(rand_distr::Beta::new(a, b).map_err(bad)?.sample(rng))
        }
        DistSpec::ZeroInflGeom(params) => Draw::Count(sample_zig(params, rng)?),
    })
}
