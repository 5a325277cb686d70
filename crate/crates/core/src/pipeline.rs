//! End-to-end wiring: victim model, released signal, shadow-trained denoiser
//! and per-window attack evaluation.
//!
//! Released rows are rescaled to L2 norm √d (unit per-coordinate RMS) before
//! clipping at that radius, so a mechanism calibrated at Δ_f = 1 adds noise of
//! a fixed size relative to the signal regardless of d.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryKnowledge;
use crate::attackers::{self, PartitionAucs};
use crate::diffusion::{reconstruct, ConditioningSignal, Denoiser, DenoiserConfig, SignalKind, TrainingWindow};
use crate::dp::{normalize_rows, perturb, DpSpec, Mechanism};
use crate::error::{Error, Result};
use crate::explain::{explain_all, ExplainConfig, ExplainerKind};
use crate::gnn::{train_gnn, Arch, GnnHyper, GnnModel};
use crate::graphgen::{generate_sbm, sample_egonet, Graph, SbmParams, Window};
use crate::numerics::Tensor;
use crate::rng;

/// Where the conditioning rows come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSource {
    Explainer(ExplainerKind),
    Features,
}

impl SignalSource {
    pub fn name(self) -> &'static str {
        match self {
            SignalSource::Explainer(k) => k.name(),
            SignalSource::Features => "features",
        }
    }

    pub fn kind(self) -> SignalKind {
        match self {
            SignalSource::Explainer(_) => SignalKind::Explanation,
            SignalSource::Features => SignalKind::Feature,
        }
    }
}

impl std::str::FromStr for SignalSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("features") {
            Ok(SignalSource::Features)
        } else {
            s.parse().map(SignalSource::Explainer)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub sbm: SbmParams,
    pub arch: Arch,
    pub gnn: GnnHyper,
    pub explain: ExplainConfig,
}

/// Clean released rows (before noise) for one graph.
pub fn clean_signal(fixture: &Fixture, graph: &Graph, model: &GnnModel, source: SignalSource, seed: u64) -> Result<Tensor> {
    let raw = match source {
        SignalSource::Features => graph.features().clone(),
        SignalSource::Explainer(kind) => explain_all(model, graph, kind, &fixture.explain, seed)?.values,
    };
    Ok(normalize_rows(&raw, (graph.d() as f64).sqrt()))
}

/// Graph, trained model and clean signal for one seed.
pub struct Instance {
    pub graph: Graph,
    pub model: GnnModel,
    pub signal: Tensor,
}

pub fn build_instance(fixture: &Fixture, source: SignalSource, seed: u64) -> Result<Instance> {
    let graph = generate_sbm(&fixture.sbm, rng::derive(&[seed, 0]))?;
    let model = train_gnn(&graph, fixture.arch, &fixture.gnn, rng::derive(&[seed, 1]))?;
    let signal = clean_signal(fixture, &graph, &model, source, rng::derive(&[seed, 2]))?;
    Ok(Instance { graph, model, signal })
}

pub fn window_signal(signal: &Tensor, w: &Window) -> Tensor {
    Tensor::from_fn(w.k(), signal.cols(), |a, j| signal.get(w.nodes[a], j))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSetup {
    pub k: usize,
    /// Target windows per instance.
    pub windows: usize,
    /// Attacker-owned graphs from the same generator.
    pub shadow_graphs: usize,
    pub denoiser: DenoiserConfig,
    /// Independent reverse chains averaged per window.
    pub num_samples: usize,
    /// Train each denoiser at the attacker's believed budget instead of the
    /// configured range.
    pub train_at_belief: bool,
}

impl Default for AttackSetup {
    fn default() -> Self {
        AttackSetup { k: 16, windows: 24, shadow_graphs: 3, denoiser: DenoiserConfig::default(), num_samples: 8, train_at_belief: true }
    }
}

impl AttackSetup {
    /// Denoiser configuration for an attacker who believes (M̂, ε̂). A
    /// degenerate belief (ε̂ ≤ 0) keeps the configured range; ε̂ = ∞ trains at
    /// its top.
    pub fn config_for_belief(&self, epsilon_hat: f64, mechanism: Option<Mechanism>) -> DenoiserConfig {
        let mut cfg = DenoiserConfig { k: self.k, ..self.denoiser.clone() };
        if self.train_at_belief && epsilon_hat > 0.0 {
            let e = if epsilon_hat.is_finite() { epsilon_hat } else { cfg.eps_max };
            cfg.eps_min = e;
            cfg.eps_max = e;
            if let Some(m) = mechanism {
                cfg.mechanisms = vec![m];
            }
        }
        cfg
    }
}

/// Trains a denoiser on windows from attacker-generated graphs. The seeds are
/// disjoint from any victim seed derived by `build_instance`.
pub fn shadow_denoiser(fixture: &Fixture, source: SignalSource, setup: &AttackSetup, belief: (f64, Option<Mechanism>), seed: u64) -> Result<Denoiser> {
    let instances: Vec<Instance> = (0..setup.shadow_graphs)
        .into_par_iter()
        .map(|g| build_instance(fixture, source, rng::derive(&[seed, 0x5AD0, g as u64])))
        .collect::<Result<_>>()?;
    let mut windows = Vec::new();
    for (g, inst) in instances.iter().enumerate() {
        for c in 0..inst.graph.n() {
            let w = sample_egonet(&inst.graph, c, setup.k, rng::derive(&[seed, g as u64, c as u64]))?;
            windows.push(TrainingWindow::new(&w, window_signal(&inst.signal, &w))?);
        }
    }
    crate::diffusion::train_denoiser(&windows, &setup.config_for_belief(belief.0, belief.1), rng::derive(&[seed, 0xD0]))
}

pub fn target_windows(graph: &Graph, setup: &AttackSetup, seed: u64) -> Result<Vec<Window>> {
    let mut centers: Vec<usize> = (0..graph.n()).collect();
    centers.shuffle(&mut rng::seeded(seed));
    centers.truncate(setup.windows.min(graph.n()));
    centers.iter().map(|&c| sample_egonet(graph, c, setup.k, rng::derive(&[seed, c as u64]))).collect()
}

/// Nodes in S: a uniform subset of size round(ρn).
pub fn observed_set(n: usize, rho: f64, seed: u64) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng::seeded(seed));
    nodes.truncate((rho * n as f64).round() as usize);
    nodes.sort_unstable();
    nodes
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub auc: f64,
    pub ap: f64,
    /// Windows that had both an edge and a non-edge.
    pub windows: usize,
    pub auc_ss: Option<f64>,
    pub auc_su: Option<f64>,
    pub auc_uu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CellOutcome {
    pub privx: Metrics,
    pub similarity: Metrics,
    pub t_star: usize,
    pub out_of_range: bool,
    pub sigma2_hat: f64,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn summarize(results: &[(f64, f64, Option<PartitionAucs>)]) -> Metrics {
    let n = results.len();
    if n == 0 {
        return Metrics { auc: f64::NAN, ap: f64::NAN, ..Default::default() };
    }
    Metrics {
        auc: results.iter().map(|r| r.0).sum::<f64>() / n as f64,
        ap: results.iter().map(|r| r.1).sum::<f64>() / n as f64,
        windows: n,
        auc_ss: mean_opt(results.iter().map(|r| r.2.and_then(|p| p.ss))),
        auc_su: mean_opt(results.iter().map(|r| r.2.and_then(|p| p.su))),
        auc_uu: mean_opt(results.iter().map(|r| r.2.and_then(|p| p.uu))),
    }
}

/// Perturbs the released rows once, then attacks every window with both the
/// diffusion reconstruction and the cosine-similarity baseline.
pub fn attack_cell(
    signal: &Tensor,
    windows: &[Window],
    spec: &DpSpec,
    knowledge: &AdversaryKnowledge,
    denoiser: &Denoiser,
    num_samples: usize,
    kind: SignalKind,
    seed: u64,
) -> Result<CellOutcome> {
    let d = signal.cols();
    let spec = if spec.no_noise { spec.clone() } else { spec.clone().with_clip_norm((d as f64).sqrt())? };
    let released = perturb(signal, &spec, rng::derive(&[seed, 0xA0]));
    let partial = knowledge.rho() < 1.0;
    let per_window: Vec<Result<Option<[(f64, f64, Option<PartitionAucs>); 2]>>> = windows
        .par_iter()
        .enumerate()
        .map(|(wi, w)| {
            let truth = &w.adj;
            let has_pos = truth.iter().any(|&a| a == 1);
            let k = w.k();
            let has_neg = (0..k).any(|i| (i + 1..k).any(|j| truth[i * k + j] == 0));
            if !(has_pos && has_neg) {
                return Ok(None);
            }
            let presence: Vec<bool> = w.nodes.iter().map(|&v| knowledge.observes(v)).collect();
            let cond = ConditioningSignal::new(window_signal(&released, w), presence.clone(), kind)?;
            let rec = reconstruct(&cond, denoiser, denoiser.schedule(), knowledge, num_samples, rng::derive(&[seed, wi as u64]))?;
            let obs = partial.then_some(presence.as_slice());
            let a = attackers::evaluate(rec.scores, truth, "privx", obs)?;
            let sim = attackers::similarity_attack(cond.values())?;
            let b = attackers::evaluate(sim, truth, "similarity", obs)?;
            Ok(Some([(a.auc, a.ap, a.partitions), (b.auc, b.ap, b.partitions)]))
        })
        .collect();
    let mut px = Vec::new();
    let mut sm = Vec::new();
    for r in per_window {
        if let Some([a, b]) = r? {
            px.push(a);
            sm.push(b);
        }
    }
    if px.is_empty() {
        return Err(Error::Precondition("no window has both edges and non-edges".into()));
    }
    let sigma2_hat = knowledge.believed_sigma2().unwrap_or(f64::INFINITY);
    let ts = crate::diffusion::effective_timestep(sigma2_hat, denoiser.schedule());
    Ok(CellOutcome { privx: summarize(&px), similarity: summarize(&sm), t_star: ts.t, out_of_range: ts.out_of_range, sigma2_hat })
}
