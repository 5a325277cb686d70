//! Per-node feature attributions: Grad, GradInput, GNNExplainer and GraphLIME.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::gnn::{argmax, GnnModel, Propagation};
use crate::graphgen::Graph;
use crate::numerics::{sigmoid, Adam, Optimizer, Tape, Tensor, Var};
use crate::rng;

pub const EXPLANATION_HEADER: &str = "GRAPHLEAK-EXPL-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerKind {
    Grad,
    GradInput,
    GnnExplainer,
    GraphLime,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 4] =
        [ExplainerKind::Grad, ExplainerKind::GradInput, ExplainerKind::GnnExplainer, ExplainerKind::GraphLime];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::Grad => "grad",
            ExplainerKind::GradInput => "gradinput",
            ExplainerKind::GnnExplainer => "gnnexplainer",
            ExplainerKind::GraphLime => "graphlime",
        }
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown explainer {s}")))
    }
}

/// n×d attributions, one row per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMatrix {
    pub values: Tensor,
    pub kind: ExplainerKind,
    pub perturbed: bool,
    /// Description of the model that produced the attributions.
    pub source: String,
    /// Nodes where GraphLIME fell back to Grad.
    #[serde(default)]
    pub fallbacks: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ExplanationManifest {
    kind: ExplainerKind,
    perturbed: bool,
    source: String,
    fallbacks: Vec<usize>,
    shape: [usize; 2],
}

impl ExplanationMatrix {
    pub fn save(&self, path: &Path) -> Result<()> {
        let m = ExplanationManifest {
            kind: self.kind,
            perturbed: self.perturbed,
            source: self.source.clone(),
            fallbacks: self.fallbacks.clone(),
            shape: self.values.shape(),
        };
        container::write(path, EXPLANATION_HEADER, &m, self.values.data())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, blob): (ExplanationManifest, Vec<f64>) = container::read(path, EXPLANATION_HEADER)?;
        let values = Tensor::new(m.shape[0], m.shape[1], blob)
            .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(Self { values, kind: m.kind, perturbed: m.perturbed, source: m.source, fallbacks: m.fallbacks })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnExplainerConfig {
    pub steps: usize,
    pub lr: f64,
    pub size_weight: f64,
    pub entropy_weight: f64,
    /// Explanation hops; `None` uses the model's layer count.
    pub hops: Option<usize>,
}

impl Default for GnnExplainerConfig {
    fn default() -> Self {
        Self { steps: 100, lr: 0.05, size_weight: 0.005, entropy_weight: 0.1, hops: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphLimeConfig {
    /// Fixed L1 weight; `None` uses `lambda_factor` times the largest
    /// unregularized coefficient.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    pub hops: Option<usize>,
}

impl Default for GraphLimeConfig {
    fn default() -> Self {
        Self { lambda: None, lambda_factor: 0.01, hops: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub gnnexplainer: GnnExplainerConfig,
    pub graphlime: GraphLimeConfig,
}

pub fn explain_grad(model: &GnnModel, graph: &Graph, v: usize) -> Result<Vec<f64>> {
    Ok(model.loss_and_grad(graph, v)?.1)
}

pub fn explain_gradinput(model: &GnnModel, graph: &Graph, v: usize) -> Result<Vec<f64>> {
    let g = explain_grad(model, graph, v)?;
    Ok(graph.features().row_slice(v).iter().zip(&g).map(|(x, g)| x * g).collect())
}

/// Induced subgraph around `v` large enough that v's L-layer output is exact:
/// nodes within L hops keep their full degree when L+1 hops are included.
fn computation_subgraph(graph: &Graph, v: usize, hops: usize) -> Result<(Graph, usize)> {
    let nodes = graph.khop(v, hops + 1);
    let local = nodes.binary_search(&v).expect("center is in its own neighbourhood");
    Ok((graph.induced(&nodes)?, local))
}

fn entropy_mean<'t>(p: Var<'t>) -> Result<Var<'t>> {
    let tape = p.tape();
    let one = tape.constant(Tensor::scalar(1.0));
    let q = one.sub(p)?;
    let h = p.mul(p.add_scalar(1e-12)?.ln()?)?.add(q.mul(q.add_scalar(1e-12)?.ln()?)?)?;
    h.mean()?.scale(-1.0)
}

/// Feature mask σ(F) ∈ [0,1]^d learned by maximising agreement of the masked
/// prediction at `v` with the model's original prediction. An edge mask over
/// the computation subgraph is optimised jointly and discarded.
pub fn explain_gnnexplainer(
    model: &GnnModel,
    graph: &Graph,
    v: usize,
    cfg: &GnnExplainerConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if v >= graph.n() {
        return Err(Error::Invalid(format!("node {v} out of range")));
    }
    let hops = cfg.hops.unwrap_or(model.layers);
    let (sub, local) = computation_subgraph(graph, v, hops)?;
    let prop = Propagation::new(model.arch, &sub);
    let target = argmax(model.predict(&sub)?.row_slice(local));
    let d = sub.d();
    let init = Normal::new(0.0, 0.1).expect("valid normal");
    let mut r = rng::seeded(seed);
    let mut masks = vec![
        Tensor::from_fn(1, d, |_, _| init.sample(&mut r)),
        Tensor::from_fn(prop.edges.len().max(1), 1, |_, _| init.sample(&mut r)),
    ];
    let has_edges = !prop.edges.is_empty();
    let mut opt = Adam::new(cfg.lr);
    for step in 0..cfg.steps {
        let tape = Tape::new();
        let params: Vec<Var<'_>> = model.params.iter().map(|p| tape.constant(p.clone())).collect();
        let fm = tape.param(masks[0].clone());
        let em = tape.param(masks[1].clone());
        let fp = fm.sigmoid()?;
        let x = tape.constant(sub.features().clone()).mul(fp)?;
        let ep = em.sigmoid()?;
        let logits = model.forward(&params, x, &prop, has_edges.then_some(ep), None)?;
        let nll = logits.gather_rows(&[local])?.log_softmax_rows()?.pick_cols(&[target])?.sum()?.scale(-1.0)?;
        let mut loss = nll
            .add(fp.sum()?.scale(cfg.size_weight)?)?
            .add(entropy_mean(fp)?.scale(cfg.entropy_weight)?)?;
        if has_edges {
            loss = loss.add(ep.sum()?.scale(cfg.size_weight)?)?.add(entropy_mean(ep)?.scale(cfg.entropy_weight)?)?;
        }
        if !loss.item().is_finite() {
            return Err(Error::Divergence(format!("GNNExplainer loss non-finite at step {step}")));
        }
        let g = tape.backward(loss)?;
        let grads = [g.wrt(fm).clone(), g.wrt(em).clone()];
        opt.step(&mut masks, &grads);
    }
    Ok(masks[0].data().iter().map(|&z| sigmoid(z)).collect())
}

/// GraphLIME output; `fallback` is set when the neighbourhood was too small
/// and Grad was returned instead.
#[derive(Clone, Debug, PartialEq)]
pub struct LimeOutput {
    pub attribution: Vec<f64>,
    pub fallback: bool,
}

pub fn explain_graphlime(model: &GnnModel, graph: &Graph, v: usize, cfg: &GraphLimeConfig) -> Result<LimeOutput> {
    if v >= graph.n() {
        return Err(Error::Invalid(format!("node {v} out of range")));
    }
    let hops = cfg.hops.unwrap_or(model.layers);
    let nodes = graph.khop(v, hops);
    if nodes.len() < 2 {
        log::warn!("GraphLIME: node {v} has fewer than 2 neighbourhood samples, falling back to Grad");
        return Ok(LimeOutput { attribution: explain_grad(model, graph, v)?, fallback: true });
    }
    let probs = model.predict(graph)?;
    let x = Tensor::from_fn(nodes.len(), graph.d(), |a, j| graph.features().get(nodes[a], j));
    let y = Tensor::from_fn(nodes.len(), probs.cols(), |a, c| probs.get(nodes[a], c));
    let attribution = hsic_lasso(&x, &y, cfg.lambda, cfg.lambda_factor);
    Ok(LimeOutput { attribution, fallback: false })
}

/// Median of nonzero pairwise distances, or `None` if every pair coincides.
fn median_bandwidth(dist: &[f64]) -> Option<f64> {
    let mut nz: Vec<f64> = dist.iter().copied().filter(|&v| v > 1e-12).collect();
    if nz.is_empty() {
        return None;
    }
    nz.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Some(nz[nz.len() / 2])
}

/// Centred Gaussian kernel over the rows of `z`, scaled to unit Frobenius
/// norm. Returns zeros when the rows carry no variation.
fn centered_kernel(z: &[Vec<f64>]) -> Vec<f64> {
    let m = z.len();
    let mut dist = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            dist.push(z[a].iter().zip(&z[b]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
        }
    }
    let Some(bw) = median_bandwidth(&dist) else { return vec![0.0; m * m] };
    let mut k = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let d2: f64 = z[a].iter().zip(&z[b]).map(|(p, q)| (p - q) * (p - q)).sum();
            k[a * m + b] = (-d2 / (2.0 * bw * bw)).exp();
        }
    }
    let row_mean: Vec<f64> = (0..m).map(|a| k[a * m..(a + 1) * m].iter().sum::<f64>() / m as f64).collect();
    let all_mean = row_mean.iter().sum::<f64>() / m as f64;
    for a in 0..m {
        for b in 0..m {
            // K is symmetric, so column means equal row means.
            k[a * m + b] += all_mean - row_mean[a] - row_mean[b];
        }
    }
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return vec![0.0; m * m];
    }
    k.iter().map(|v| v / norm).collect()
}

/// Non-negative HSIC Lasso: argmin_{φ≥0} ‖K̄_y − Σ_k φ_k K̄_k‖²_F + λ‖φ‖₁ over
/// the samples in the rows of `x` (inputs) and `y` (outputs).
pub fn hsic_lasso(x: &Tensor, y: &Tensor, lambda: Option<f64>, lambda_factor: f64) -> Vec<f64> {
    let m = x.rows();
    let d = x.cols();
    let feats: Vec<Vec<f64>> =
        (0..d).map(|k| centered_kernel(&(0..m).map(|a| vec![x.get(a, k)]).collect::<Vec<_>>())).collect();
    let target = centered_kernel(&(0..m).map(|a| y.row_slice(a).to_vec()).collect::<Vec<_>>());
    let gram = Tensor::from_fn(d, d, |k, l| feats[k].iter().zip(&feats[l]).map(|(a, b)| a * b).sum());
    let corr: Vec<f64> = feats.iter().map(|f| f.iter().zip(&target).map(|(a, b)| a * b).sum()).collect();
    let lambda = lambda.unwrap_or_else(|| {
        let free = nonneg_coordinate_descent(&gram, &corr, 0.0);
        lambda_factor * free.iter().cloned().fold(0.0, f64::max)
    });
    nonneg_coordinate_descent(&gram, &corr, lambda)
}

/// Minimises φᵀGφ − 2cᵀφ + λΣφ over φ ≥ 0 by cyclic coordinate descent.
pub fn nonneg_coordinate_descent(gram: &Tensor, corr: &[f64], lambda: f64) -> Vec<f64> {
    let d = corr.len();
    let mut phi = vec![0.0; d];
    for _ in 0..10_000 {
        let mut max_change: f64 = 0.0;
        for k in 0..d {
            let gkk = gram.get(k, k);
            if gkk <= 1e-15 {
                phi[k] = 0.0;
                continue;
            }
            let others: f64 = (0..d).filter(|&l| l != k).map(|l| gram.get(k, l) * phi[l]).sum();
            let new = ((corr[k] - others - lambda / 2.0) / gkk).max(0.0);
            max_change = max_change.max((new - phi[k]).abs());
            phi[k] = new;
        }
        if max_change < 1e-12 {
            break;
        }
    }
    phi
}

/// Explanations for every node, computed in parallel with per-node seeds.
pub fn explain_all(
    model: &GnnModel,
    graph: &Graph,
    kind: ExplainerKind,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<ExplanationMatrix> {
    let rows: Vec<Result<(Vec<f64>, bool)>> = (0..graph.n())
        .into_par_iter()
        .map(|v| match kind {
            ExplainerKind::Grad => explain_grad(model, graph, v).map(|r| (r, false)),
            ExplainerKind::GradInput => explain_gradinput(model, graph, v).map(|r| (r, false)),
            ExplainerKind::GnnExplainer => {
                explain_gnnexplainer(model, graph, v, &cfg.gnnexplainer, rng::derive(&[seed, v as u64]))
                    .map(|r| (r, false))
            }
            ExplainerKind::GraphLime => {
                explain_graphlime(model, graph, v, &cfg.graphlime).map(|o| (o.attribution, o.fallback))
            }
        })
        .collect();
    let mut data = Vec::with_capacity(graph.n() * graph.d());
    let mut fallbacks = Vec::new();
    for (v, r) in rows.into_iter().enumerate() {
        let (row, fb) = r?;
        if fb {
            fallbacks.push(v);
        }
        data.extend(row);
    }
    Ok(ExplanationMatrix {
        values: Tensor::new(graph.n(), graph.d(), data)?,
        kind,
        perturbed: false,
        source: format!("{:?} L={} hidden={} seed={}", model.arch, model.layers, model.hidden, model.meta.seed),
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_kernel_is_degenerate() {
        assert!(centered_kernel(&[vec![1.0], vec![1.0], vec![1.0]]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_kernel_rows_sum_to_zero() {
        let k = centered_kernel(&[vec![0.0], vec![1.0], vec![3.0], vec![-2.0]]);
        for a in 0..4 {
            assert!(k[a * 4..(a + 1) * 4].iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let x = Tensor::from_fn(6, 2, |i, j| ((i * 5 + j * 3) % 7) as f64);
        let y = Tensor::from_fn(6, 1, |i, _| i as f64);
        assert!(hsic_lasso(&x, &y, Some(1e9), 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn explainer_names_parse() {
        for k in ExplainerKind::ALL {
            assert_eq!(k.name().parse::<ExplainerKind>().unwrap(), k);
        }
    }
}
