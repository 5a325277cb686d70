//! Conditional diffusion over window adjacencies.
//!
//! Adjacency is encoded as z0 = 2A − 1 off the diagonal. The denoiser is a
//! small permutation-equivariant transformer whose pair head produces a prior
//! logit g_ij for each edge; the predicted noise is the exact posterior
//! residual for a ±1 target under that prior,
//!
//!   m = tanh(g/2 + √ᾱ z/(1−ᾱ)),   ε̂ = (z − √ᾱ m)/√(1−ᾱ),
//!
//! so the network only has to learn how the conditioning signal shifts the
//! edge prior.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryKnowledge;
use crate::container;
use crate::dp::{calibrate, perturb, Mechanism};
use crate::error::{Error, Result};
use crate::graphgen::Window;
use crate::numerics::{sigmoid, Adam, Optimizer, Tape, Tensor, Var};
use crate::rng;

pub const DENOISER_HEADER: &str = "GRAPHLEAK-DDPM-1";
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    // Index 0 is the clean state; entries 1..=steps are the diffusion steps.
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * PI / 2.0;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut beta = vec![0.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        let mut sigma = vec![0.0; steps + 1];
        for t in 1..=steps {
            let target = f(t) / f0;
            beta[t] = (1.0 - target / (f(t - 1) / f0)).clamp(0.0, MAX_BETA);
            // Cumulate from the clipped betas so ᾱ_t = Π α_s holds exactly.
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
            sigma[t] = (beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t])).sqrt();
        }
        Ok(NoiseSchedule { steps, beta, alpha_bar, sigma })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

/// z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε with i.i.d. ε; returns (z_t, ε).
pub fn forward_sample(z0: &Tensor, t: usize, schedule: &NoiseSchedule, seed: u64) -> Result<(Tensor, Tensor)> {
    check_step(t, schedule)?;
    let mut r = rng::seeded(seed);
    let eps = Tensor::from_fn(z0.rows(), z0.cols(), |_, _| StandardNormal.sample(&mut r));
    Ok((mix(z0, &eps, schedule.alpha_bar(t)), eps))
}

fn check_step(t: usize, schedule: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::Invalid(format!("timestep {t} outside 1..={}", schedule.steps())));
    }
    Ok(())
}

fn mix(z0: &Tensor, eps: &Tensor, ab: f64) -> Tensor {
    z0.zip_with(eps, |a, e| ab.sqrt() * a + (1.0 - ab).sqrt() * e).expect("same shape")
}

/// Symmetric standard-normal k×k matrix with zero diagonal.
pub fn symmetric_noise(k: usize, r: &mut rng::Rng) -> Tensor {
    let mut m = Tensor::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let v: f64 = StandardNormal.sample(r);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// ±1 encoding of a window adjacency with a zero diagonal.
pub fn encode_adjacency(adj: &[u8], k: usize) -> Tensor {
    Tensor::from_fn(k, k, |i, j| if i == j { 0.0 } else { 2.0 * adj[i * k + j] as f64 - 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveTimestep {
    pub t: usize,
    /// σ̂² exceeded the noisiest step (or was unbounded) and t was set to T.
    pub out_of_range: bool,
}

/// Smallest t minimising |(1−ᾱ_t) − σ̂²|.
pub fn effective_timestep(sigma2: f64, schedule: &NoiseSchedule) -> EffectiveTimestep {
    let t_max = schedule.steps();
    if !sigma2.is_finite() || sigma2 > 1.0 - schedule.alpha_bar(t_max) {
        return EffectiveTimestep { t: t_max, out_of_range: true };
    }
    let mut best = (1, f64::INFINITY);
    for t in 1..=t_max {
        let gap = ((1.0 - schedule.alpha_bar(t)) - sigma2).abs();
        if gap < best.1 {
            best = (t, gap);
        }
    }
    EffectiveTimestep { t: best.0, out_of_range: false }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Explanation,
    Feature,
}

/// Per-node conditioning rows plus a presence channel. Unobserved rows are
/// stored as zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSignal {
    values: Tensor,
    presence: Vec<bool>,
    pub kind: SignalKind,
}

impl ConditioningSignal {
    pub fn new(mut values: Tensor, presence: Vec<bool>, kind: SignalKind) -> Result<Self> {
        if presence.len() != values.rows() {
            return Err(Error::Shape { op: "conditioning", detail: format!("{} presence flags for {} rows", presence.len(), values.rows()) });
        }
        for (i, &p) in presence.iter().enumerate() {
            if !p {
                values.row_slice_mut(i).fill(0.0);
            }
        }
        Ok(ConditioningSignal { values, presence, kind })
    }

    pub fn observed(values: Tensor, kind: SignalKind) -> Self {
        let k = values.rows();
        ConditioningSignal { values, presence: vec![true; k], kind }
    }

    pub fn k(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn presence(&self) -> &[bool] {
        &self.presence
    }

    /// k×(d+1) network input: signal rows then the presence flag.
    pub fn as_matrix(&self) -> Tensor {
        let d = self.d();
        Tensor::from_fn(self.k(), d + 1, |i, j| {
            if j < d {
                self.values.get(i, j)
            } else if self.presence[i] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let values = Tensor::from_fn(self.k(), self.d(), |a, j| self.values.get(perm[a], j));
        ConditioningSignal { values, presence: perm.iter().map(|&p| self.presence[p]).collect(), kind: self.kind }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub k: usize,
    pub steps_t: usize,
    pub time_dim: usize,
    pub layernorm: bool,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Training ε is drawn log-uniformly from this range per minibatch.
    pub eps_min: f64,
    pub eps_max: f64,
    pub mechanisms: Vec<Mechanism>,
    pub delta: f64,
    pub alpha: f64,
    pub sensitivity: f64,
    /// Row clip radius used when perturbing training signals; `None` means √d.
    pub clip_norm: Option<f64>,
    /// Probability that a minibatch sees every row; otherwise ρ ~ U(0, 1).
    pub full_observation_prob: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            layers: 2,
            hidden: 32,
            heads: 2,
            k: 16,
            steps_t: 100,
            time_dim: 16,
            layernorm: true,
            train_steps: 1500,
            batch: 8,
            lr: 2e-3,
            eps_min: 0.5,
            eps_max: 16.0,
            mechanisms: vec![Mechanism::Gaussian],
            delta: 1e-5,
            alpha: 10.0,
            sensitivity: 1.0,
            clip_norm: None,
            full_observation_prob: 0.5,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.time_dim < 2 {
            return bad("denoiser layers, hidden, heads must be positive and time_dim ≥ 2".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.k < 2 || self.steps_t < 2 {
            return bad("window size and T must be at least 2".into());
        }
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max) {
            return bad(format!("bad training ε range [{}, {}]", self.eps_min, self.eps_max));
        }
        if self.mechanisms.is_empty() || self.batch == 0 || !(self.lr > 0.0) {
            return bad("need a mechanism, a positive batch and a positive step size".into());
        }
        if !(0.0..=1.0).contains(&self.full_observation_prob) {
            return bad("full_observation_prob must lie in [0,1]".into());
        }
        Ok(())
    }

    /// Parameter shapes in the order `forward` consumes them.
    fn layout(&self, d: usize) -> Vec<[usize; 2]> {
        let h = self.hidden;
        let mut s = vec![[d + 1, h], [1, h], [1, h]];
        s.extend([[2 * self.time_dim, h], [1, h], [h, 2 * h * self.layers], [1, 2 * h * self.layers]]);
        for _ in 0..self.layers {
            s.extend([[h, h], [h, h], [h, h], [h, h], [1, self.heads], [1, self.heads]]);
            s.extend([[h, h], [h, h], [h, h], [h, h]]);
            s.extend([[h, 2 * h], [1, 2 * h], [2 * h, h], [1, h]]);
        }
        s.extend([[h, h], [h, h], [1, 1], [1, 1]]);
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub seed: u64,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub d: usize,
    pub params: Vec<Tensor>,
    pub meta: DenoiserMeta,
    schedule: NoiseSchedule,
}

#[derive(Serialize, Deserialize)]
struct DenoiserManifest {
    config: DenoiserConfig,
    d: usize,
    shapes: Vec<[usize; 2]>,
    meta: DenoiserMeta,
}

/// One training example with everything random already drawn.
#[derive(Clone, Debug)]
pub struct DenoiserExample {
    pub z_t: Tensor,
    pub eps: Tensor,
    pub cond: Tensor,
    pub t: usize,
    /// Per-coordinate variance of the release noise in `cond`.
    pub noise_var: f64,
}

struct Cursor<'a, 't> {
    p: &'a [Var<'t>],
    i: usize,
}

impl<'t> Cursor<'_, 't> {
    fn next(&mut self) -> Var<'t> {
        let v = self.p[self.i];
        self.i += 1;
        v
    }
}

fn off_diagonal(k: usize) -> Tensor {
    Tensor::from_fn(k, k, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// Cosine similarity between the first `d` columns of every pair of rows;
/// zero on the diagonal and for zero rows.
fn row_cosines(m: &Tensor, d: usize) -> Tensor {
    let k = m.rows();
    let norms: Vec<f64> = (0..k).map(|i| m.row_slice(i)[..d].iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    Tensor::from_fn(k, k, |i, j| {
        if i == j || norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            m.row_slice(i)[..d].iter().zip(&m.row_slice(j)[..d]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j])
        }
    })
}

fn sinusoidal(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..dim)
        .map(|j| {
            let f = (-(10_000f64).ln() * (j % half) as f64 / half as f64).exp();
            let a = pos * f;
            if j < half {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

/// Timestep and release-noise level side by side. The noise level enters as
/// 10·ln(1 + σ²), capped so an unbounded belief stays finite.
fn condition_embedding(t: usize, noise_var: f64, dim: usize) -> Tensor {
    let u = 10.0 * noise_var.min(1e6).ln_1p();
    let mut v = sinusoidal(t as f64, dim);
    v.extend(sinusoidal(u, dim));
    Tensor::new(1, 2 * dim, v).expect("embedding shape")
}

fn layer_norm<'t>(x: Var<'t>, on: bool) -> Result<Var<'t>> {
    if !on {
        return Ok(x);
    }
    let c = x.sub(x.row_means()?)?;
    let var = c.mul(c)?.row_means()?;
    c.div(var.add_scalar(1e-5)?.powf(0.5)?)
}

/// Multi-head attention; each `(w, m)` in `bias` adds w_head · m to the logits.
fn attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, heads: usize, bias: &[(Var<'t>, Var<'t>)]) -> Result<Var<'t>> {
    let h = q.shape()[1];
    let dh = h / heads;
    let mut out: Option<Var<'t>> = None;
    for head in 0..heads {
        let (a, b) = (head * dh, (head + 1) * dh);
        let mut logits = q.slice_cols(a, b)?.matmul(k.slice_cols(a, b)?.t()?)?.scale(1.0 / (dh as f64).sqrt())?;
        for &(w, m) in bias {
            logits = logits.add(m.mul(w.slice_cols(head, head + 1)?)?)?;
        }
        let o = logits.softmax_rows()?.matmul(v.slice_cols(a, b)?)?;
        out = Some(match out {
            None => o,
            Some(prev) => prev.concat_cols(o)?,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Predicted noise for one window. `z` must have a zero diagonal.
pub fn predict_eps<'t>(cfg: &DenoiserConfig, params: &[Var<'t>], z: Var<'t>, cond: Var<'t>, t: usize, noise_var: f64, alpha_bar: f64) -> Result<Var<'t>> {
    let tape = z.tape();
    let k = z.shape()[0];
    let hdim = cfg.hidden;
    let mut p = Cursor { p: params, i: 0 };

    let (wc, bc, wz) = (p.next(), p.next(), p.next());
    let cond_tokens = cond.matmul(wc)?.add(bc)?;
    let sim = tape.constant(row_cosines(&cond.value(), cond.shape()[1] - 1));
    let z_mean = z.row_sums()?.scale(1.0 / (k - 1) as f64)?;
    let mut h = cond_tokens.add(z_mean.matmul(wz)?)?;

    let (wt1, bt1, wt2, bt2) = (p.next(), p.next(), p.next(), p.next());
    let temb = tape.constant(condition_embedding(t, noise_var, cfg.time_dim));
    let film = temb.matmul(wt1)?.add(bt1)?.relu()?.matmul(wt2)?.add(bt2)?;

    for l in 0..cfg.layers {
        let (wq, wk, wv, wo) = (p.next(), p.next(), p.next(), p.next());
        let (zb, sb) = (p.next(), p.next());
        let x = layer_norm(h, cfg.layernorm)?;
        let a = attention(x.matmul(wq)?, x.matmul(wk)?, x.matmul(wv)?, cfg.heads, &[(zb, z), (sb, sim)])?;
        h = h.add(a.matmul(wo)?)?;

        let (cq, ck, cv, co) = (p.next(), p.next(), p.next(), p.next());
        let x = layer_norm(h, cfg.layernorm)?;
        let a = attention(x.matmul(cq)?, cond_tokens.matmul(ck)?, cond_tokens.matmul(cv)?, cfg.heads, &[])?;
        h = h.add(a.matmul(co)?)?;

        let (w1, b1, w2, b2) = (p.next(), p.next(), p.next(), p.next());
        let base = 2 * hdim * l;
        let scale = film.slice_cols(base, base + hdim)?.add_scalar(1.0)?;
        let shift = film.slice_cols(base + hdim, base + 2 * hdim)?;
        let x = layer_norm(h, cfg.layernorm)?.mul(scale)?.add(shift)?;
        h = h.add(x.matmul(w1)?.add(b1)?.relu()?.matmul(w2)?.add(b2)?)?;
    }

    let (wa, wb, gb, gs) = (p.next(), p.next(), p.next(), p.next());
    debug_assert_eq!(p.i, params.len());
    let x = layer_norm(h, cfg.layernorm)?;
    let pair = x.matmul(wa)?.matmul(x.matmul(wb)?.t()?)?;
    let g = pair.add(pair.t()?)?.scale(0.5 / (hdim as f64).sqrt())?.add(gb)?.add(sim.mul(gs)?)?;

    let ab = alpha_bar;
    let m = g.scale(0.5)?.add(z.scale(ab.sqrt() / (1.0 - ab))?)?.tanh()?;
    let eps = z.sub(m.scale(ab.sqrt())?)?.scale(1.0 / (1.0 - ab).sqrt())?;
    eps.mul(tape.constant(off_diagonal(k)))
}

/// Mean squared error over off-diagonal entries, averaged over the batch.
pub fn denoiser_loss<'t>(cfg: &DenoiserConfig, schedule: &NoiseSchedule, params: &[Var<'t>], batch: &[DenoiserExample]) -> Result<Var<'t>> {
    let tape = params[0].tape();
    let mut total: Option<Var<'t>> = None;
    for ex in batch {
        let k = ex.z_t.rows();
        let z = tape.constant(ex.z_t.clone());
        let cond = tape.constant(ex.cond.clone());
        let pred = predict_eps(cfg, params, z, cond, ex.t, ex.noise_var, schedule.alpha_bar(ex.t))?;
        let diff = pred.sub(tape.constant(ex.eps.clone()))?;
        let l = diff.mul(diff)?.sum()?.scale(1.0 / (k * (k - 1)) as f64)?;
        total = Some(match total {
            None => l,
            Some(acc) => acc.add(l)?,
        });
    }
    total.ok_or_else(|| Error::Invalid("empty batch".into()))?.scale(1.0 / batch.len() as f64)
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, d: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::cosine(config.steps_t)?;
        let mut r = rng::seeded(seed);
        let layout = config.layout(d);
        // Bias-like rows (a single row) start at zero, as does the FiLM output
        // so every layer starts with unit scale and zero shift.
        let film_out = 5;
        let params = layout
            .iter()
            .enumerate()
            .map(|(i, &[rows, cols])| {
                if rows == 1 || i == film_out {
                    Tensor::zeros(rows, cols)
                } else {
                    let std = (1.0 / rows as f64).sqrt();
                    Tensor::from_fn(rows, cols, |_, _| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        std * z
                    })
                }
            })
            .collect();
        Ok(Denoiser { config, d, params, meta: DenoiserMeta { seed, loss_curve: Vec::new() }, schedule })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Predicted noise for a concrete state, no gradients.
    pub fn eps(&self, z: &Tensor, cond: &Tensor, t: usize, noise_var: f64) -> Result<Tensor> {
        let tape = Tape::new();
        let params: Vec<_> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let out = predict_eps(&self.config, &params, tape.constant(z.clone()), tape.constant(cond.clone()), t, noise_var, self.schedule.alpha_bar(t))?;
        Ok(out.value())
    }

    pub fn loss(&self, batch: &[DenoiserExample]) -> Result<f64> {
        let tape = Tape::new();
        let params: Vec<_> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(denoiser_loss(&self.config, &self.schedule, &params, batch)?.item())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = DenoiserManifest {
            config: self.config.clone(),
            d: self.d,
            shapes: self.params.iter().map(|p| p.shape()).collect(),
            meta: self.meta.clone(),
        };
        let blob: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        container::write(path, DENOISER_HEADER, &manifest, &blob)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, blob): (DenoiserManifest, Vec<f64>) = container::read(path, DENOISER_HEADER)?;
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };
        if m.shapes != m.config.layout(m.d) {
            return Err(bad("parameter shapes do not match the configuration"));
        }
        let params = crate::gnn::split_blob(&m.shapes, &blob).map_err(|e| bad(&e))?;
        let schedule = NoiseSchedule::cosine(m.config.steps_t)?;
        Ok(Denoiser { config: m.config, d: m.d, params, meta: m.meta, schedule })
    }
}

/// A window's true structure together with its clean signal rows.
#[derive(Clone, Debug)]
pub struct TrainingWindow {
    pub adj: Vec<u8>,
    pub signal: Tensor,
}

impl TrainingWindow {
    pub fn new(window: &Window, signal: Tensor) -> Result<Self> {
        if signal.rows() != window.k() {
            return Err(Error::Shape { op: "training window", detail: format!("{} signal rows for k = {}", signal.rows(), window.k()) });
        }
        Ok(TrainingWindow { adj: window.adj.clone(), signal })
    }

    pub fn k(&self) -> usize {
        self.signal.rows()
    }
}

/// Draws one fully specified training example from a window.
pub fn sample_example(cfg: &DenoiserConfig, schedule: &NoiseSchedule, w: &TrainingWindow, epsilon: f64, mechanism: Mechanism, r: &mut rng::Rng) -> Result<DenoiserExample> {
    let k = w.k();
    let d = w.signal.cols();
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(r);
    let adj: Vec<u8> = (0..k * k).map(|i| w.adj[perm[i / k] * k + perm[i % k]]).collect();
    let signal = Tensor::from_fn(k, d, |a, j| w.signal.get(perm[a], j));

    let rho = if r.gen::<f64>() < cfg.full_observation_prob { 1.0 } else { r.gen::<f64>() };
    let presence: Vec<bool> = (0..k).map(|_| r.gen::<f64>() < rho).collect();

    let clip = cfg.clip_norm.unwrap_or((d as f64).sqrt());
    let spec = calibrate(mechanism, epsilon, cfg.delta, cfg.alpha, cfg.sensitivity)?.with_clip_norm(clip)?;
    let noisy = perturb(&signal, &spec, r.gen());
    let cond = ConditioningSignal::new(noisy, presence, SignalKind::Explanation)?.as_matrix();

    let t = r.gen_range(1..=schedule.steps());
    let z0 = encode_adjacency(&adj, k);
    let eps = symmetric_noise(k, r);
    Ok(DenoiserExample { z_t: mix(&z0, &eps, schedule.alpha_bar(t)), eps, cond, t, noise_var: spec.variance() })
}

pub fn train_denoiser(windows: &[TrainingWindow], config: &DenoiserConfig, seed: u64) -> Result<Denoiser> {
    let first = windows.first().ok_or_else(|| Error::Precondition("no training windows".into()))?;
    let (k, d) = (first.k(), first.signal.cols());
    if let Some(w) = windows.iter().find(|w| w.k() != k || w.signal.cols() != d || w.adj.len() != k * k) {
        return Err(Error::Shape { op: "train_denoiser", detail: format!("window of size {} (signal width {}) among k = {k}, d = {d}", w.k(), w.signal.cols()) });
    }
    let mut config = config.clone();
    config.k = k;
    let mut model = Denoiser::init(config.clone(), d, seed)?;
    let mut opt = Adam::new(config.lr);
    let mut r = rng::stream(seed, 1);
    let (lo, hi) = (config.eps_min.ln(), config.eps_max.ln());
    for step in 0..config.train_steps {
        let epsilon = (lo + (hi - lo) * r.gen::<f64>()).exp();
        let mech = config.mechanisms[r.gen_range(0..config.mechanisms.len())];
        let batch = (0..config.batch)
            .map(|_| sample_example(&config, &model.schedule, &windows[r.gen_range(0..windows.len())], epsilon, mech, &mut r))
            .collect::<Result<Vec<_>>>()?;
        let tape = Tape::new();
        let params: Vec<_> = model.params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = denoiser_loss(&config, &model.schedule, &params, &batch)?;
        let value = loss.item();
        if !value.is_finite() || value > 1e6 {
            return Err(Error::Divergence(format!("denoiser loss {value} at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p).clone()).collect();
        opt.step(&mut model.params, &g);
        model.meta.loss_curve.push(value);
    }
    log::debug!("denoiser trained: final loss {:?}", model.meta.loss_curve.last());
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// k×k edge scores in (0,1), symmetric with a zero diagonal.
    pub scores: Tensor,
    pub t_star: usize,
    pub out_of_range: bool,
    /// σ̂² implied by the attacker's beliefs; infinite when they are degenerate.
    pub sigma2_hat: f64,
}

/// Reverse diffusion from pure noise at the effective timestep, averaged over
/// `num_samples` independent chains.
pub fn reconstruct(signal: &ConditioningSignal, denoiser: &Denoiser, schedule: &NoiseSchedule, knowledge: &AdversaryKnowledge, num_samples: usize, seed: u64) -> Result<Reconstruction> {
    if schedule != denoiser.schedule() {
        return Err(Error::Invalid("schedule does not match the denoiser's".into()));
    }
    if signal.k() != denoiser.config.k || signal.d() != denoiser.d {
        return Err(Error::Shape { op: "reconstruct", detail: format!("signal {}×{} for a denoiser of k = {}, d = {}", signal.k(), signal.d(), denoiser.config.k, denoiser.d) });
    }
    let sigma2_hat = knowledge.believed_sigma2().unwrap_or(f64::INFINITY);
    let ts = effective_timestep(sigma2_hat, schedule);
    let k = signal.k();
    let cond = signal.as_matrix();
    let mut acc = Tensor::zeros(k, k);
    let chains = num_samples.max(1);
    for s in 0..chains {
        let mut r = rng::stream(seed, s as u64);
        let mut z = symmetric_noise(k, &mut r);
        for t in (1..=ts.t).rev() {
            let eps = denoiser.eps(&z, &cond, t, sigma2_hat)?;
            let c = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
            let inv = 1.0 / schedule.alpha(t).sqrt();
            let mut next = z.zip_with(&eps, |a, e| (a - c * e) * inv)?;
            if t > 1 {
                let eta = symmetric_noise(k, &mut r);
                let st = schedule.sigma(t);
                next = next.zip_with(&eta, |a, e| a + st * e)?;
            }
            z = next;
        }
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let v = 0.5 * (sigmoid(z.get(i, j)) + sigmoid(z.get(j, i)));
                    acc.set(i, j, acc.get(i, j) + v / chains as f64);
                }
            }
        }
    }
    Ok(Reconstruction { scores: acc, t_star: ts.t, out_of_range: ts.out_of_range, sigma2_hat })
}
