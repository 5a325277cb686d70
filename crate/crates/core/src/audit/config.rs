//! TOML experiment configuration. Every section rejects unknown keys and
//! every value is range-checked before any computation starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::C_DEG;
use crate::diffusion::DenoiserConfig;
use crate::dp::{calibrate, DpSpec, Mechanism};
use crate::error::{Error, Result};
use crate::explain::{ExplainConfig, GnnExplainerConfig, GraphLimeConfig};
use crate::gnn::{Arch, GnnHyper};
use crate::graphgen::SbmParams;
use crate::pipeline::{AttackSetup, Fixture, SignalSource};
use crate::theory::BoundKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Seed of the attacker's shadow graphs.
    #[serde(default = "default_shadow_seed")]
    pub shadow_seed: u64,
    pub graph: SbmParams,
    #[serde(default)]
    pub model: ModelSection,
    pub explain: ExplainSection,
    pub dp: DpSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub adaptive: Option<AdaptiveSection>,
    #[serde(default)]
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub fidelity: Option<FidelitySection>,
    /// PrivX − PrivF AUC margin for calling either leakage source dominant.
    #[serde(default = "default_margin")]
    pub leakage_margin: f64,
}

fn default_shadow_seed() -> u64 {
    0x5EED
}

fn default_margin() -> f64 {
    0.02
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<Arch>,
    pub hyper: GnnHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    /// Explainer names, or "features" for the raw-feature attack.
    pub sources: Vec<String>,
    #[serde(default)]
    pub gnnexplainer: GnnExplainerConfig,
    #[serde(default)]
    pub graphlime: GraphLimeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    /// `inf` releases the clean signal.
    pub epsilons: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub sensitivity: f64,
}

fn default_mechanisms() -> Vec<Mechanism> {
    vec![Mechanism::Gaussian]
}

fn default_delta() -> f64 {
    1e-5
}

fn default_alpha() -> f64 {
    10.0
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Window sizes; empty means just `k`.
    pub ks: Vec<usize>,
    pub k: usize,
    pub windows: usize,
    pub shadow_graphs: usize,
    pub num_samples: usize,
    pub train_at_belief: bool,
    pub denoiser: DenoiserConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        let s = AttackSetup::default();
        AttackSection {
            ks: Vec::new(),
            k: s.k,
            windows: s.windows,
            shadow_graphs: s.shadow_graphs,
            num_samples: s.num_samples,
            train_at_belief: s.train_at_belief,
            denoiser: s.denoiser,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    #[serde(default = "default_adaptive_source")]
    pub source: String,
    #[serde(default = "default_adaptive_mechanism")]
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub rhos: Vec<f64>,
    pub kappas: Vec<f64>,
    #[serde(default = "default_c_deg")]
    pub c_deg: f64,
}

fn default_adaptive_source() -> String {
    "gnnexplainer".into()
}

fn default_adaptive_mechanism() -> Mechanism {
    Mechanism::Gaussian
}

fn default_c_deg() -> f64 {
    C_DEG
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub kinds: Vec<BoundKind>,
    pub sigmas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_trials() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    0.03
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySection {
    #[serde(default = "default_top")]
    pub top_fraction: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Noise level at which sign survival is measured.
    #[serde(default = "one")]
    pub sigma: f64,
}

fn default_top() -> f64 {
    0.25
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn arch(&self) -> Arch {
        self.model.arch.unwrap_or(Arch::Gcn)
    }

    pub fn fixture(&self) -> Fixture {
        Fixture {
            sbm: self.graph.clone(),
            arch: self.arch(),
            gnn: self.model.hyper.clone(),
            explain: ExplainConfig { gnnexplainer: self.explain.gnnexplainer.clone(), graphlime: self.explain.graphlime.clone() },
        }
    }

    /// Signal sources in configuration order. Only valid after `validate`.
    pub fn sources(&self) -> Vec<SignalSource> {
        self.explain.sources.iter().map(|s| s.parse().expect("validated")).collect()
    }

    pub fn ks(&self) -> Vec<usize> {
        if self.attack.ks.is_empty() {
            vec![self.attack.k]
        } else {
            self.attack.ks.clone()
        }
    }

    pub fn setup(&self, k: usize) -> AttackSetup {
        let a = &self.attack;
        AttackSetup {
            k,
            windows: a.windows,
            shadow_graphs: a.shadow_graphs,
            denoiser: DenoiserConfig { k, ..a.denoiser.clone() },
            num_samples: a.num_samples,
            train_at_belief: a.train_at_belief,
        }
    }

    pub fn dp_spec(&self, mechanism: Mechanism, epsilon: f64) -> Result<DpSpec> {
        if epsilon.is_infinite() {
            return Ok(DpSpec::no_noise());
        }
        calibrate(mechanism, epsilon, self.dp.delta, self.dp.alpha, self.dp.sensitivity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return cfg_err("name must not be empty");
        }
        if self.seeds.is_empty() {
            return cfg_err("seeds must not be empty");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return cfg_err("seeds must be distinct");
        }
        self.graph.validate().map_err(|e| Error::Config(format!("graph: {e}")))?;

        let h = &self.model.hyper;
        if h.layers == 0 || h.hidden == 0 || h.epochs == 0 {
            return cfg_err("model.hyper: layers, hidden and epochs must be positive");
        }
        if !(0.0..1.0).contains(&h.dropout) || !(h.lr > 0.0) || !(h.train_fraction > 0.0 && h.train_fraction < 1.0) {
            return cfg_err("model.hyper: need dropout in [0,1), lr > 0 and train_fraction in (0,1)");
        }

        if self.explain.sources.is_empty() {
            return cfg_err("explain.sources must not be empty");
        }
        for s in &self.explain.sources {
            s.parse::<SignalSource>().map_err(|_| Error::Config(format!("explain.sources: unknown source {s:?}")))?;
        }
        let g = &self.explain.gnnexplainer;
        if g.steps == 0 || !(g.lr > 0.0) || g.size_weight < 0.0 || g.entropy_weight < 0.0 {
            return cfg_err("explain.gnnexplainer: steps and lr must be positive, weights non-negative");
        }
        let l = &self.explain.graphlime;
        if l.lambda.is_some_and(|v| !(v >= 0.0)) || !(l.lambda_factor >= 0.0) {
            return cfg_err("explain.graphlime: lambda and lambda_factor must be non-negative");
        }

        let dp = &self.dp;
        if dp.mechanisms.is_empty() || dp.epsilons.is_empty() {
            return cfg_err("dp: need at least one mechanism and one epsilon");
        }
        if dp.epsilons.iter().any(|e| !(*e > 0.0)) {
            return cfg_err("dp.epsilons must be positive (inf for no noise)");
        }
        if !(dp.delta > 0.0 && dp.delta < 1.0) || !(dp.alpha > 1.0) || !(dp.sensitivity > 0.0 && dp.sensitivity.is_finite()) {
            return cfg_err("dp: need delta in (0,1), alpha > 1 and a positive finite sensitivity");
        }

        let a = &self.attack;
        for &k in &self.ks() {
            if k < 2 || k > self.graph.n {
                return cfg_err(format!("attack: window size {k} outside 2..={}", self.graph.n));
            }
        }
        if a.windows == 0 || a.shadow_graphs == 0 || a.num_samples == 0 {
            return cfg_err("attack: windows, shadow_graphs and num_samples must be positive");
        }
        a.denoiser.validate().map_err(|e| Error::Config(format!("attack.denoiser: {e}")))?;

        if let Some(ad) = &self.adaptive {
            ad.source.parse::<SignalSource>().map_err(|_| Error::Config(format!("adaptive.source: unknown source {:?}", ad.source)))?;
            if !(ad.epsilon > 0.0 && ad.epsilon.is_finite()) {
                return cfg_err("adaptive.epsilon must be positive and finite");
            }
            if ad.rhos.is_empty() || ad.kappas.is_empty() {
                return cfg_err("adaptive: rho and kappa grids must not be empty");
            }
            if ad.rhos.iter().chain(&ad.kappas).any(|v| !(0.0..=1.0).contains(v)) {
                return cfg_err("adaptive: rho and kappa values must lie in [0,1]");
            }
            if !(ad.c_deg >= 0.0) {
                return cfg_err("adaptive.c_deg must be non-negative");
            }
        }
        if let Some(b) = &self.bounds {
            if b.kinds.is_empty() || b.sigmas.is_empty() || b.trials == 0 {
                return cfg_err("bounds: need kinds, sigmas and a positive trial count");
            }
            if b.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || !(b.tolerance >= 0.0) {
                return cfg_err("bounds: sigmas and tolerance must be finite and non-negative");
            }
            let explainers = self.sources().iter().any(|s| matches!(s, SignalSource::Explainer(_)));
            if b.kinds.iter().any(|k| *k != BoundKind::PrivF) && !explainers {
                return cfg_err("bounds: explanation bounds need an explainer among explain.sources");
            }
        }
        if let Some(f) = &self.fidelity {
            if !(f.top_fraction > 0.0 && f.top_fraction <= 1.0) || f.trials == 0 || !(f.sigma >= 0.0 && f.sigma.is_finite()) {
                return cfg_err("fidelity: need top_fraction in (0,1], positive trials and finite sigma ≥ 0");
            }
        }
        if !(self.leakage_margin >= 0.0) {
            return cfg_err("leakage_margin must be non-negative");
        }
        Ok(())
    }
}
