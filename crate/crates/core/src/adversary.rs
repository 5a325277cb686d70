//! Adversary knowledge and the stratified bounds over observed/unobserved
//! endpoints.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dp::{calibrate, DpSpec, Mechanism};
use crate::error::{Error, Result};
use crate::pipeline::{attack_cell, build_instance, observed_set, shadow_denoiser, target_windows, AttackSetup, Fixture, Metrics, SignalSource};
use crate::diffusion::Denoiser;
use crate::rng;

/// What the attacker believes about the release. `mechanism: None` means the
/// mechanism is unknown, in which case a Gaussian is assumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryKnowledge {
    pub mechanism: Option<Mechanism>,
    pub epsilon_hat: f64,
    pub delta_hat: f64,
    pub alpha: f64,
    pub sensitivity: f64,
    /// Sorted ids of nodes whose signal rows the attacker sees.
    pub observed: Vec<usize>,
    pub n: usize,
    /// |ε̂ − ε|/ε when the true ε is known.
    pub kappa: Option<f64>,
}

impl AdversaryKnowledge {
    /// Full knowledge of the release and every row (the κ = 0, ρ = 1 corner).
    pub fn exact(spec: &DpSpec, n: usize) -> Self {
        Self::with_error(spec, n, 0.0, 1.0, (0..n).collect())
    }

    /// Believes ε̂ = ε(1 + sign·κ) and sees `observed`.
    pub fn with_error(spec: &DpSpec, n: usize, kappa: f64, sign: f64, mut observed: Vec<usize>) -> Self {
        observed.sort_unstable();
        observed.dedup();
        let epsilon_hat = if spec.no_noise { f64::INFINITY } else { spec.epsilon * (1.0 + sign * kappa) };
        AdversaryKnowledge {
            mechanism: if spec.no_noise { None } else { Some(spec.mechanism) },
            epsilon_hat,
            delta_hat: spec.delta,
            alpha: spec.alpha,
            sensitivity: spec.sensitivity,
            observed,
            n,
            kappa: Some(kappa),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed.iter().any(|&v| v >= self.n) {
            return Err(Error::Invalid("observed node outside the graph".into()));
        }
        if let Some(k) = self.kappa {
            if !(k >= 0.0) {
                return Err(Error::Invalid(format!("kappa must be non-negative, got {k}")));
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.observed.len() as f64 / self.n as f64
        }
    }

    pub fn observes(&self, v: usize) -> bool {
        self.observed.binary_search(&v).is_ok()
    }

    /// Per-coordinate noise variance implied by the beliefs. `None` when the
    /// belief is degenerate (ε̂ ≤ 0), which callers treat as unbounded noise.
    pub fn believed_sigma2(&self) -> Option<f64> {
        if self.epsilon_hat.is_infinite() {
            return Some(0.0);
        }
        if !(self.epsilon_hat > 0.0) {
            return None;
        }
        let mech = self.mechanism.unwrap_or(Mechanism::Gaussian);
        calibrate(mech, self.epsilon_hat, self.delta_hat, self.alpha, self.sensitivity).ok().map(|s| s.variance())
    }
}

/// Probability that a uniformly random pair has both, one or neither endpoint
/// in S, exactly for |S| = m out of n and in the n → ∞ limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionProbs {
    pub ss: f64,
    pub su: f64,
    pub uu: f64,
    pub limit_ss: f64,
    pub limit_su: f64,
    pub limit_uu: f64,
    pub observed: usize,
}

pub fn partition_probs(n: usize, rho: f64) -> Result<PartitionProbs> {
    if n < 2 {
        return Err(Error::Invalid(format!("partition probabilities need n ≥ 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!("rho must lie in [0,1], got {rho}")));
    }
    let exact = rho * n as f64;
    let m = exact.round();
    if (exact - m).abs() > 1e-9 {
        log::warn!("ρn = {exact} is not an integer; using |S| = {m}");
    }
    let (m, u, pairs) = (m, n as f64 - m, (n * (n - 1)) as f64);
    Ok(PartitionProbs {
        ss: m * (m - 1.0) / pairs,
        su: 2.0 * m * u / pairs,
        uu: u * (u - 1.0) / pairs,
        limit_ss: rho * rho,
        limit_su: 2.0 * rho * (1.0 - rho),
        limit_uu: (1.0 - rho) * (1.0 - rho),
        observed: m as usize,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

fn check_auc_order(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid(format!("AUC endpoints must lie in [0,1], got {values:?}")));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid(format!("AUC endpoints must be ordered, got {values:?}")));
    }
    Ok(())
}

/// Large-n bracket around the partition-weighted Type-II AUC.
pub fn bracket(r_one: f64, r_three: f64, rho: f64) -> Result<Bracket> {
    check_auc_order(&[r_one, r_three])?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!("rho must lie in [0,1], got {rho}")));
    }
    let gap = r_three - r_one;
    Ok(Bracket {
        lower: r_one + gap * rho * rho,
        upper: r_one + gap * (1.0 - (1.0 - rho) * (1.0 - rho)),
        width: gap * 2.0 * rho * (1.0 - rho),
    })
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Bayes AUC between two isotropic Gaussians whose means sit `delta` apart
/// under noise `sigma`: Φ₀(Δ/(σ√2)).
pub fn half_edge_auc(delta: f64, sigma: f64) -> f64 {
    if delta == 0.0 {
        return 0.5;
    }
    std_normal_cdf(delta / (sigma * std::f64::consts::SQRT_2))
}

/// Default degradation slope of the SS term per unit κ.
pub const C_DEG: f64 = 0.035;

/// AUC of the oblivious classifier with no side information.
pub const TYPE_ONE_AUC: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedBounds {
    pub upper: f64,
    pub lower: f64,
    /// Lower bound with the SU term replaced by the half-edge AUC.
    pub refined_lower: Option<f64>,
}

pub fn weighted_bounds(
    r_one: f64,
    r_half: f64,
    r_three: f64,
    probs: &PartitionProbs,
    kappa: f64,
    c_deg: f64,
    half_edge: Option<(f64, f64)>,
) -> Result<WeightedBounds> {
    check_auc_order(&[r_one, r_half, r_three])?;
    if !(kappa >= 0.0) {
        return Err(Error::Invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    let ss_term = r_three - c_deg * kappa;
    let upper = r_three * probs.ss + r_half * probs.su + r_one * probs.uu;
    let lower = (ss_term * probs.ss + r_one * (probs.su + probs.uu)).max(r_one);
    let refined_lower = half_edge.map(|(delta, sigma)| (ss_term * probs.ss + half_edge_auc(delta, sigma) * probs.su + r_one * probs.uu).max(r_one));
    Ok(WeightedBounds { upper, lower, refined_lower })
}

/// One (ρ, κ, sign, seed) cell of the Type-II grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type2Row {
    pub rho: f64,
    pub kappa: f64,
    /// "+" or "-" for ε̂ = ε(1 ± κ), "mean" for their average, "0" when κ = 0.
    pub kappa_sign: String,
    pub seed: u64,
    pub auc_full: f64,
    pub ap: f64,
    pub auc_ss: Option<f64>,
    pub auc_su: Option<f64>,
    pub auc_uu: Option<f64>,
    /// Partition-weighted AUC with the exact finite-n probabilities.
    pub auc_weighted: f64,
    pub bound_upper: f64,
    pub bound_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type2Config {
    pub fixture: Fixture,
    pub source: SignalSource,
    pub setup: AttackSetup,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub rhos: Vec<f64>,
    pub kappas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub c_deg: f64,
    /// Seed for the attacker's own shadow graphs.
    pub shadow_seed: u64,
}

fn weighted_auc(m: &Metrics, p: &PartitionProbs) -> f64 {
    let part = |prob: f64, v: Option<f64>| if prob == 0.0 { 0.0 } else { prob * v.unwrap_or(f64::NAN) };
    part(p.ss, m.auc_ss) + part(p.su, m.auc_su) + part(p.uu, m.auc_uu)
}

/// Runs the (ρ, κ) grid. Denoisers are trained once per distinct belief and
/// shared across victim seeds; every cell of a seed attacks the same release.
pub fn simulate_type2(cfg: &Type2Config) -> Result<Vec<Type2Row>> {
    if cfg.rhos.iter().chain(&cfg.kappas).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid("rho and kappa grids must lie in [0,1]".into()));
    }
    let spec = calibrate(cfg.mechanism, cfg.epsilon, cfg.delta, cfg.alpha, 1.0)?;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for &kappa in &cfg.kappas {
        if kappa == 0.0 {
            cells.push((0.0, 0.0));
        } else {
            cells.extend([(kappa, 1.0), (kappa, -1.0)]);
        }
    }
    // The κ = 0 belief also serves the oracle corner behind the bounds.
    let mut beliefs: Vec<f64> = cells.iter().map(|&(k, s)| cfg.epsilon * (1.0 + s * k)).chain([cfg.epsilon]).collect();
    beliefs.sort_by(f64::total_cmp);
    beliefs.dedup();
    let denoisers: Vec<(f64, Denoiser)> = beliefs
        .par_iter()
        .map(|&e| Ok((e, shadow_denoiser(&cfg.fixture, cfg.source, &cfg.setup, (e, Some(cfg.mechanism)), cfg.shadow_seed)?)))
        .collect::<Result<_>>()?;
    let denoiser_for = |e: f64| &denoisers.iter().find(|(b, _)| b.to_bits() == e.to_bits()).expect("trained belief").1;

    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let inst = build_instance(&cfg.fixture, cfg.source, seed)?;
        let n = inst.graph.n();
        let windows = target_windows(&inst.graph, &cfg.setup, seed)?;
        let run = |rho: f64, kappa: f64, sign: f64| -> Result<Metrics> {
            let observed = observed_set(n, rho, rng::derive(&[seed, rho.to_bits()]));
            let knowledge = AdversaryKnowledge::with_error(&spec, n, kappa, sign, observed);
            let den = denoiser_for(cfg.epsilon * (1.0 + sign * kappa));
            Ok(attack_cell(&inst.signal, &windows, &spec, &knowledge, den, cfg.setup.num_samples, cfg.source.kind(), seed)?.privx)
        };
        let oracle = run(1.0, 0.0, 0.0)?;
        let r_three = oracle.auc.max(TYPE_ONE_AUC);
        for &rho in &cfg.rhos {
            let probs = partition_probs(n, rho)?;
            let bounds = |kappa: f64| weighted_bounds(TYPE_ONE_AUC, r_three, r_three, &probs, kappa, cfg.c_deg, None);
            let mut by_kappa: Vec<Type2Row> = Vec::new();
            for &(kappa, sign) in &cells {
                let m = if rho == 1.0 && kappa == 0.0 { oracle.clone() } else { run(rho, kappa, sign)? };
                let b = bounds(kappa)?;
                let label = if kappa == 0.0 { "0" } else if sign > 0.0 { "+" } else { "-" };
                by_kappa.push(Type2Row {
                    rho,
                    kappa,
                    kappa_sign: label.into(),
                    seed,
                    auc_full: m.auc,
                    ap: m.ap,
                    auc_ss: m.auc_ss,
                    auc_su: m.auc_su,
                    auc_uu: m.auc_uu,
                    auc_weighted: weighted_auc(&m, &probs),
                    bound_upper: b.upper,
                    bound_lower: b.lower,
                });
                if sign < 0.0 {
                    let [a, b] = [&by_kappa[by_kappa.len() - 2], &by_kappa[by_kappa.len() - 1]];
                    let avg = |x: f64, y: f64| 0.5 * (x + y);
                    let avg_opt = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| 0.5 * (x + y));
                    let mean = Type2Row {
                        kappa_sign: "mean".into(),
                        auc_full: avg(a.auc_full, b.auc_full),
                        ap: avg(a.ap, b.ap),
                        auc_ss: avg_opt(a.auc_ss, b.auc_ss),
                        auc_su: avg_opt(a.auc_su, b.auc_su),
                        auc_uu: avg_opt(a.auc_uu, b.auc_uu),
                        auc_weighted: avg(a.auc_weighted, b.auc_weighted),
                        ..b.clone()
                    };
                    by_kappa.push(mean);
                }
            }
            rows.extend(by_kappa);
        }
    }
    Ok(rows)
}
