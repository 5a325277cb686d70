//! Node-classification GNNs (GCN, GIN, GraphSAGE) trained full-batch.

use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::graphgen::Graph;
use crate::numerics::{Adam, Optimizer, Sgd, Tape, Tensor, Var};
use crate::rng;

pub const CHECKPOINT_HEADER: &str = "GRAPHLEAK-CKPT-1";

/// Sum aggregation multiplies input scale by roughly 1 + degree; the first GIN
/// layer starts smaller so plain gradient descent does not saturate it.
pub const GIN_INPUT_GAIN: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gin,
    Sage,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gin" => Ok(Arch::Gin),
            "sage" | "graphsage" => Ok(Arch::Sage),
            other => Err(Error::Invalid(format!("unknown architecture {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnHyper {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Share of nodes used for training; the rest is validation.
    pub train_fraction: f64,
}

impl Default for GnnHyper {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            epochs: 200,
            dropout: 0.5,
            lr: 0.01,
            optimizer: OptimizerKind::Sgd,
            train_fraction: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Loss seen by the optimizer (dropout active).
    pub loss_curve: Vec<f64>,
    /// Eval-mode training loss before each update.
    #[serde(default)]
    pub eval_loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: usize,
    pub in_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub params: Vec<Tensor>,
    pub meta: TrainMeta,
}

/// Message-passing structure of a graph for one architecture. Each directed
/// message carries a fixed weight and, when it stems from a real edge, the id
/// of that undirected edge (so explainers can mask it).
#[derive(Clone, Debug)]
pub struct Propagation {
    pub n: usize,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub weight: Vec<f64>,
    pub edge_id: Vec<Option<usize>>,
    pub edges: Vec<(usize, usize)>,
}

impl Propagation {
    pub fn new(arch: Arch, graph: &Graph) -> Self {
        let n = graph.n();
        let edges = graph.edges();
        let (mut src, mut dst, mut weight, mut edge_id) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut push = |s: usize, d: usize, w: f64, id: Option<usize>| {
            src.push(s);
            dst.push(d);
            weight.push(w);
            edge_id.push(id);
        };
        match arch {
            Arch::Gcn => {
                let dt: Vec<f64> = (0..n).map(|v| graph.degree(v) as f64 + 1.0).collect();
                for (e, &(i, j)) in edges.iter().enumerate() {
                    let w = 1.0 / (dt[i] * dt[j]).sqrt();
                    push(i, j, w, Some(e));
                    push(j, i, w, Some(e));
                }
                for v in 0..n {
                    push(v, v, 1.0 / dt[v], None);
                }
            }
            Arch::Sage => {
                for (e, &(i, j)) in edges.iter().enumerate() {
                    push(i, j, 1.0 / graph.degree(j) as f64, Some(e));
                    push(j, i, 1.0 / graph.degree(i) as f64, Some(e));
                }
            }
            Arch::Gin => {
                for (e, &(i, j)) in edges.iter().enumerate() {
                    push(i, j, 1.0, Some(e));
                    push(j, i, 1.0, Some(e));
                }
            }
        }
        Self { n, src: Rc::new(src), dst: Rc::new(dst), weight, edge_id, edges }
    }

    /// Message weights as a 1×M row, optionally scaled by a per-edge mask
    /// (E×1 column on the same tape). Self-loop messages are never masked.
    fn weights<'t>(&self, tape: &'t Tape, mask: Option<Var<'t>>) -> Result<Var<'t>> {
        let base = tape.constant(Tensor::row(self.weight.clone()));
        let Some(mask) = mask else { return Ok(base) };
        // Append a constant 1 so self-loops can index it.
        let one = tape.constant(Tensor::scalar(1.0));
        let ext = mask.t()?.concat_cols(one)?.t()?;
        let e = self.edges.len();
        let idx: Vec<usize> = self.edge_id.iter().map(|id| id.unwrap_or(e)).collect();
        base.mul(ext.gather_rows(&idx)?.t()?)
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut rng::Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
}

impl GnnModel {
    /// Randomly initialised, untrained model.
    pub fn init(arch: Arch, in_dim: usize, classes: usize, hyper: &GnnHyper, seed: u64) -> Result<Self> {
        if hyper.layers == 0 || hyper.hidden == 0 || in_dim == 0 || classes == 0 {
            return Err(Error::Invalid("layers, hidden, input and class dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&hyper.dropout) {
            return Err(Error::Invalid("dropout must be in [0,1)".into()));
        }
        let mut rng = rng::stream(seed, 1);
        let mut params = Vec::new();
        for l in 0..hyper.layers {
            let fin = if l == 0 { in_dim } else { hyper.hidden };
            let fout = if l + 1 == hyper.layers { classes } else { hyper.hidden };
            match arch {
                Arch::Gcn => {
                    params.push(glorot(fin, fout, &mut rng));
                    params.push(Tensor::zeros(1, fout));
                }
                Arch::Sage => {
                    params.push(glorot(2 * fin, fout, &mut rng));
                    params.push(Tensor::zeros(1, fout));
                }
                Arch::Gin => {
                    let gain = if l == 0 { GIN_INPUT_GAIN } else { 1.0 };
                    params.push(glorot(fin, hyper.hidden, &mut rng).map(|v| v * gain));
                    params.push(Tensor::zeros(1, hyper.hidden));
                    params.push(glorot(hyper.hidden, fout, &mut rng));
                    params.push(Tensor::zeros(1, fout));
                }
            }
        }
        Ok(Self {
            arch,
            layers: hyper.layers,
            hidden: hyper.hidden,
            in_dim,
            classes,
            dropout: hyper.dropout,
            params,
            meta: TrainMeta { epochs: 0, seed, train_accuracy: 0.0, val_accuracy: 0.0, loss_curve: Vec::new(), eval_loss_curve: Vec::new() },
        })
    }

    /// Logits (n×C). `dropout_rng` enables training-mode dropout; `edge_mask`
    /// scales each undirected edge's messages.
    pub fn forward<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        prop: &Propagation,
        edge_mask: Option<Var<'t>>,
        mut dropout_rng: Option<&mut rng::Rng>,
    ) -> Result<Var<'t>> {
        let tape = x.tape();
        if x.shape()[1] != self.in_dim {
            return Err(Error::Shape {
                op: "gnn forward",
                detail: format!("feature dim {} but model expects {}", x.shape()[1], self.in_dim),
            });
        }
        let w = prop.weights(tape, edge_mask)?;
        let agg = |h: Var<'t>| h.edge_aggregate(w, &prop.src, &prop.dst, prop.n);
        let mut h = x;
        let per_layer = if self.arch == Arch::Gin { 4 } else { 2 };
        for l in 0..self.layers {
            let p = &params[l * per_layer..(l + 1) * per_layer];
            h = match self.arch {
                Arch::Gcn => agg(h)?.matmul(p[0])?.add(p[1])?,
                Arch::Sage => h.concat_cols(agg(h)?)?.matmul(p[0])?.add(p[1])?,
                Arch::Gin => {
                    let s = h.add(agg(h)?)?;
                    s.matmul(p[0])?.add(p[1])?.relu()?.matmul(p[2])?.add(p[3])?
                }
            };
            if l + 1 < self.layers {
                h = h.relu()?;
                if let Some(r) = dropout_rng.as_deref_mut() {
                    h = dropout(h, self.dropout, r)?;
                }
            }
        }
        Ok(h)
    }

    fn param_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect()
    }

    /// Class probabilities in eval mode (no dropout).
    pub fn predict(&self, graph: &Graph) -> Result<Tensor> {
        self.predict_features(graph, graph.features())
    }

    /// Probabilities with `graph`'s structure but substitute features.
    pub fn predict_features(&self, graph: &Graph, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let params = self.param_vars(&tape, false);
        let prop = Propagation::new(self.arch, graph);
        let logits = self.forward(&params, tape.constant(x.clone()), &prop, None, None)?;
        Ok(logits.softmax_rows()?.value())
    }

    /// Cross-entropy at node `v` against its true label, and its gradient
    /// with respect to that node's feature row.
    pub fn loss_and_grad(&self, graph: &Graph, v: usize) -> Result<(f64, Vec<f64>)> {
        if v >= graph.n() {
            return Err(Error::Invalid(format!("node {v} out of range")));
        }
        let tape = Tape::new();
        let params = self.param_vars(&tape, false);
        let x = tape.param(graph.features().clone());
        let prop = Propagation::new(self.arch, graph);
        let logits = self.forward(&params, x, &prop, None, None)?;
        let loss = logits.gather_rows(&[v])?.log_softmax_rows()?.pick_cols(&[graph.labels()[v]])?.sum()?.scale(-1.0)?;
        let g = tape.backward(loss)?;
        Ok((loss.item(), g.wrt(x).row_slice(v).to_vec()))
    }

    pub fn accuracy(&self, graph: &Graph, nodes: &[usize]) -> Result<f64> {
        let probs = self.predict(graph)?;
        Ok(accuracy(&probs, graph.labels(), nodes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = CheckpointManifest {
            arch: self.arch,
            layers: self.layers,
            hidden: self.hidden,
            in_dim: self.in_dim,
            classes: self.classes,
            dropout: self.dropout,
            shapes: self.params.iter().map(Tensor::shape).collect(),
            meta: self.meta.clone(),
        };
        let blob: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        container::write(path, CHECKPOINT_HEADER, &manifest, &blob)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, blob): (CheckpointManifest, Vec<f64>) = container::read(path, CHECKPOINT_HEADER)?;
        let params = split_blob(&m.shapes, &blob).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })?;
        Ok(Self {
            arch: m.arch,
            layers: m.layers,
            hidden: m.hidden,
            in_dim: m.in_dim,
            classes: m.classes,
            dropout: m.dropout,
            params,
            meta: m.meta,
        })
    }
}

pub(crate) fn split_blob(shapes: &[[usize; 2]], blob: &[f64]) -> std::result::Result<Vec<Tensor>, String> {
    let total: usize = shapes.iter().map(|s| s[0] * s[1]).sum();
    if total != blob.len() {
        return Err(format!("manifest shapes need {total} values, blob has {}", blob.len()));
    }
    let mut pos = 0;
    Ok(shapes
        .iter()
        .map(|&[r, c]| {
            let t = Tensor::new(r, c, blob[pos..pos + r * c].to_vec()).expect("length checked");
            pos += r * c;
            t
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    arch: Arch,
    layers: usize,
    hidden: usize,
    in_dim: usize,
    classes: usize,
    dropout: f64,
    shapes: Vec<[usize; 2]>,
    meta: TrainMeta,
}

fn dropout<'t>(h: Var<'t>, p: f64, rng: &mut rng::Rng) -> Result<Var<'t>> {
    if p == 0.0 {
        return Ok(h);
    }
    let [r, c] = h.shape();
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(r, c, |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep });
    h.mul(h.tape().constant(mask))
}

pub fn accuracy(probs: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().filter(|&&v| argmax(probs.row_slice(v)) == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

/// Index of the largest entry; first wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Random train/validation split of node ids.
pub fn split_nodes(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, 2));
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1, n);
    let (mut tr, mut va) = (ids[..cut].to_vec(), ids[cut..].to_vec());
    tr.sort_unstable();
    va.sort_unstable();
    (tr, va)
}

pub fn train_gnn(graph: &Graph, arch: Arch, hyper: &GnnHyper, seed: u64) -> Result<GnnModel> {
    let mut present: Vec<usize> = graph.labels().to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Precondition("training needs at least two classes present".into()));
    }
    let (train, val) = split_nodes(graph.n(), hyper.train_fraction, seed);
    let train_labels: Vec<usize> = train.iter().map(|&v| graph.labels()[v]).collect();
    let mut model = GnnModel::init(arch, graph.d(), graph.num_classes(), hyper, seed)?;
    let prop = Propagation::new(arch, graph);
    let mut opt: Box<dyn Optimizer> = match hyper.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd { lr: hyper.lr }),
        OptimizerKind::Adam => Box::new(Adam::new(hyper.lr)),
    };
    let mut drop_rng = rng::stream(seed, 3);
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut eval_curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let tape = Tape::new();
        let params = model.param_vars(&tape, true);
        let x = tape.constant(graph.features().clone());
        if hyper.dropout > 0.0 {
            let eval = model.forward(&params, x, &prop, None, None)?;
            eval_curve.push(-eval.gather_rows(&train)?.log_softmax_rows()?.pick_cols(&train_labels)?.mean()?.item());
        }
        let logits = model.forward(&params, x, &prop, None, Some(&mut drop_rng))?;
        let loss = logits.gather_rows(&train)?.log_softmax_rows()?.pick_cols(&train_labels)?.mean()?.scale(-1.0)?;
        let lv = loss.item();
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
        }
        curve.push(lv);
        if hyper.dropout == 0.0 {
            eval_curve.push(lv);
        }
        let g = tape.backward(loss)?;
        let grads: Vec<Tensor> = params.iter().map(|&p| g.wrt(p).clone()).collect();
        opt.step(&mut model.params, &grads);
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
    }
    model.meta = TrainMeta {
        epochs: hyper.epochs,
        seed,
        train_accuracy: model.accuracy(graph, &train)?,
        val_accuracy: model.accuracy(graph, &val)?,
        loss_curve: curve,
        eval_loss_curve: eval_curve,
    };
    Ok(model)
}
