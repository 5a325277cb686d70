//! Differential-privacy mechanisms over attribution or feature matrices.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationMatrix;
use crate::numerics::Tensor;
use crate::rng;

/// Floor applied to the RDP budget once the δ conversion term is removed.
pub const RDP_EPS_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Gaussian,
    Laplace,
    Rdp,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Gaussian, Mechanism::Laplace, Mechanism::Rdp];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Gaussian => "gaussian",
            Mechanism::Laplace => "laplace",
            Mechanism::Rdp => "rdp",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(Mechanism::Gaussian),
            "laplace" => Ok(Mechanism::Laplace),
            "rdp" | "renyi" => Ok(Mechanism::Rdp),
            _ => Err(Error::Invalid(format!("unknown mechanism {s:?}"))),
        }
    }
}

/// A calibrated mechanism. `sigma` is the per-coordinate standard deviation;
/// for Laplace `b` holds the scale and `sigma² = 2b²`.
///
/// `clip_norm` is the row L2 bound enforced before noise is added. It defaults
/// to `sensitivity`; a caller that clips at a larger radius but calibrates at
/// a smaller Δ gets proportionally less noise than a literal reading would
/// give, which [`DpSpec::literal_epsilon`] reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSpec {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub sensitivity: f64,
    pub clip_norm: f64,
    pub sigma: f64,
    pub b: f64,
    /// The ε→∞ limit: no clipping, no noise.
    #[serde(default)]
    pub no_noise: bool,
}

impl DpSpec {
    pub fn no_noise() -> Self {
        DpSpec {
            mechanism: Mechanism::Gaussian,
            epsilon: f64::INFINITY,
            delta: 0.0,
            alpha: 0.0,
            sensitivity: 0.0,
            clip_norm: f64::INFINITY,
            sigma: 0.0,
            b: 0.0,
            no_noise: true,
        }
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn with_clip_norm(mut self, clip_norm: f64) -> Result<Self> {
        if !(clip_norm > 0.0) {
            return Err(Error::Invalid(format!("clip norm must be positive, got {clip_norm}")));
        }
        self.clip_norm = clip_norm;
        Ok(self)
    }

    /// The ε that the same noise would certify if Δ were taken to be the clip
    /// radius.
    pub fn literal_epsilon(&self) -> f64 {
        if self.no_noise {
            return f64::INFINITY;
        }
        self.epsilon * self.clip_norm / self.sensitivity
    }
}

pub fn calibrate(mechanism: Mechanism, epsilon: f64, delta: f64, alpha: f64, sensitivity: f64) -> Result<DpSpec> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Invalid(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(Error::Invalid(format!("sensitivity must be positive, got {sensitivity}")));
    }
    let needs_delta = mechanism != Mechanism::Laplace;
    if needs_delta && !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    if mechanism == Mechanism::Rdp && !(alpha > 1.0) {
        return Err(Error::Invalid(format!("RDP order must exceed 1, got {alpha}")));
    }
    let (sigma, b) = match mechanism {
        Mechanism::Gaussian => ((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon, 0.0),
        Mechanism::Laplace => {
            let b = sensitivity / epsilon;
            (std::f64::consts::SQRT_2 * b, b)
        }
        Mechanism::Rdp => {
            let eps_rdp = rdp_epsilon(epsilon, delta, alpha);
            ((alpha * sensitivity * sensitivity / (2.0 * eps_rdp)).sqrt(), 0.0)
        }
    };
    Ok(DpSpec { mechanism, epsilon, delta, alpha, sensitivity, clip_norm: sensitivity, sigma, b, no_noise: false })
}

/// Rényi budget left after converting back from (ε, δ), floored.
pub fn rdp_epsilon(epsilon: f64, delta: f64, alpha: f64) -> f64 {
    (epsilon - (1.0 / delta).ln() / (alpha - 1.0)).max(RDP_EPS_FLOOR)
}

/// Rescales every row to L2 norm at most `bound`. A few ulps of slack keep the
/// operation idempotent under rounding.
pub fn clip_rows(m: &Tensor, bound: f64) -> Tensor {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_slice_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > bound * (1.0 + 8.0 * f64::EPSILON) {
            let s = bound / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Rescales every nonzero row to L2 norm exactly `target`. Zero rows stay zero.
pub fn normalize_rows(m: &Tensor, target: f64) -> Tensor {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_slice_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let s = target / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// One noise draw from the calibrated mechanism.
pub fn sample_noise(spec: &DpSpec, rng: &mut rng::Rng) -> f64 {
    if spec.no_noise {
        return 0.0;
    }
    match spec.mechanism {
        Mechanism::Laplace => {
            let a: f64 = Exp1.sample(rng);
            let c: f64 = Exp1.sample(rng);
            spec.b * (a - c)
        }
        Mechanism::Gaussian | Mechanism::Rdp => {
            let z: f64 = StandardNormal.sample(rng);
            spec.sigma * z
        }
    }
}

/// Clips rows to `spec.clip_norm`, then adds i.i.d. noise to every entry.
pub fn perturb(m: &Tensor, spec: &DpSpec, seed: u64) -> Tensor {
    if spec.no_noise {
        return m.clone();
    }
    let mut out = clip_rows(m, spec.clip_norm);
    let mut r = rng::seeded(seed);
    for v in out.data_mut() {
        *v += sample_noise(spec, &mut r);
    }
    out
}

pub fn perturb_explanations(e: &ExplanationMatrix, spec: &DpSpec, seed: u64) -> ExplanationMatrix {
    ExplanationMatrix { values: perturb(&e.values, spec, seed), perturbed: !spec.no_noise, ..e.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseEstimate {
    pub sigma2: f64,
    /// The raw difference was negative and got clamped to zero.
    pub clamped: bool,
}

/// σ̂² = Var(perturbed entries) − clean variance, clamped at zero.
pub fn estimate_noise_scale(perturbed: &Tensor, clean_variance: f64) -> NoiseEstimate {
    let raw = entry_variance(perturbed.data()) - clean_variance;
    if raw < 0.0 {
        log::warn!("noise-scale estimate clamped: observed variance below the clean estimate by {:.3e}", -raw);
        NoiseEstimate { sigma2: 0.0, clamped: true }
    } else {
        NoiseEstimate { sigma2: raw, clamped: false }
    }
}

/// Population variance over all entries.
pub fn entry_variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Relative σ error caused by believing ε is `ε(1+κ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaPropagation {
    /// |σ̂ − σ|/σ = |κ|/|1+κ|, since σ ∝ 1/ε.
    pub exact: f64,
    /// The half-κ rule of thumb.
    pub half_kappa: f64,
}

pub fn sigma_relative_error(kappa: f64) -> KappaPropagation {
    KappaPropagation { exact: kappa.abs() / (1.0 + kappa).abs(), half_kappa: kappa.abs() / 2.0 }
}
