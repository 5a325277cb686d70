use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanOrientation {
    /// Class c has mean r·e_c (needs d ≥ C).
    Aligned,
    /// Two classes with means ±r·1/√d.
    Antipodal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Class-mean radius.
    pub r: f64,
    /// Per-node feature noise standard deviation.
    pub s: f64,
    pub d: usize,
    pub orientation: MeanOrientation,
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid("SBM needs n >= 2".into()));
        }
        if self.classes == 0 || self.classes > self.n {
            return Err(Error::Invalid("class count must be in 1..=n".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name}={p} outside [0,1]")));
            }
        }
        if self.r < 0.0 || self.s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Invalid("need r >= 0 and s > 0".into()));
        }
        if self.d == 0 {
            return Err(Error::Invalid("feature dimension must be positive".into()));
        }
        match self.orientation {
            MeanOrientation::Aligned if self.d < self.classes => {
                Err(Error::Invalid("aligned means need d >= C".into()))
            }
            MeanOrientation::Antipodal if self.classes != 2 => {
                Err(Error::Invalid("antipodal means need exactly 2 classes".into()))
            }
            _ => Ok(()),
        }
    }

    /// Class sizes under balanced assignment (first n mod C classes get one extra).
    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.classes).map(|c| self.n / self.classes + usize::from(c < self.n % self.classes)).collect()
    }

    /// Number of (intra, inter) unordered node pairs.
    pub fn pair_counts(&self) -> (f64, f64) {
        let intra: f64 = self.class_sizes().iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum();
        let total = (self.n * (self.n - 1)) as f64 / 2.0;
        (intra, total - intra)
    }

    /// Expected homophily: ratio of expected intra edges to expected edges.
    pub fn expected_homophily(&self) -> f64 {
        let (pi, po) = self.pair_counts();
        let (ei, eo) = (pi * self.p_in, po * self.p_out);
        ei / (ei + eo)
    }

    /// The `p_out` giving expected homophily `h` at the current `p_in`.
    pub fn solve_p_out(&self, h: f64) -> Result<f64> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Invalid(format!("target homophily {h} outside (0,1]")));
        }
        let (pi, po) = self.pair_counts();
        let p_out = pi * self.p_in * (1.0 - h) / (h * po);
        if !(0.0..=1.0).contains(&p_out) {
            return Err(Error::Invalid(format!("target h={h} needs p_out={p_out:.4}, outside [0,1]")));
        }
        Ok(p_out)
    }

    /// The `p_in` giving expected homophily `h` at the current `p_out`.
    pub fn solve_p_in(&self, h: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&h) {
            return Err(Error::Invalid(format!("target homophily {h} outside [0,1)")));
        }
        let (pi, po) = self.pair_counts();
        let p_in = h * po * self.p_out / ((1.0 - h) * pi);
        if !(0.0..=1.0).contains(&p_in) {
            return Err(Error::Invalid(format!("target h={h} needs p_in={p_in:.4}, outside [0,1]")));
        }
        Ok(p_in)
    }

    pub fn class_means(&self) -> Vec<Vec<f64>> {
        match self.orientation {
            MeanOrientation::Aligned => (0..self.classes)
                .map(|c| (0..self.d).map(|j| if j == c { self.r } else { 0.0 }).collect())
                .collect(),
            MeanOrientation::Antipodal => {
                let u = self.r / (self.d as f64).sqrt();
                vec![vec![u; self.d], vec![-u; self.d]]
            }
        }
    }
}

pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    params.validate()?;
    let n = params.n;
    let mut rng = rng::seeded(seed);
    let mut labels: Vec<usize> = params
        .class_sizes()
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat(c).take(s))
        .collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { params.p_in } else { params.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let means = params.class_means();
    let noise = Normal::new(0.0, params.s).map_err(|e| Error::Invalid(e.to_string()))?;
    let feats = Tensor::from_fn(n, params.d, |i, j| means[labels[i]][j] + noise.sample(&mut rng));
    let mut g = Graph::from_edges(n, &edges, feats, labels, params.classes)?;
    g.provenance = format!("sbm {}", serde_json::to_string(params)?);
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChungLuParams {
    pub n: usize,
    /// Power-law exponent of the degree distribution.
    pub beta: f64,
    pub mean_degree: f64,
}

impl ChungLuParams {
    /// Weights w_i = c·(i+1)^{-1/(β-1)} with c chosen so the expected mean
    /// degree, after capping edge probabilities at 1, equals the target.
    pub fn weights(&self) -> Result<Vec<f64>> {
        if !(self.beta > 1.0) {
            return Err(Error::Invalid(format!("Chung-Lu needs beta > 1, got {}", self.beta)));
        }
        if self.n < 2 || !(self.mean_degree > 0.0) {
            return Err(Error::Invalid("Chung-Lu needs n >= 2 and a positive mean degree".into()));
        }
        let n = self.n;
        let base: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-1.0 / (self.beta - 1.0))).collect();
        let expected_mean = |c: f64| {
            let total: f64 = base.iter().sum::<f64>() * c;
            let mut deg = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    deg += 2.0 * (c * base[i] * c * base[j] / total).min(1.0);
                }
            }
            deg / n as f64
        };
        let max_mean = (n - 1) as f64;
        if self.mean_degree >= max_mean {
            return Err(Error::Invalid(format!("mean degree must be below n-1 = {max_mean}")));
        }
        // Expected mean degree is continuous and non-decreasing in c.
        let (mut lo, mut hi) = (0.0, 1.0);
        while expected_mean(hi) < self.mean_degree {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Invalid("mean degree target unreachable".into()));
            }
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if expected_mean(mid) < self.mean_degree {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w: Vec<f64> = base.iter().map(|b| b * hi).collect();
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Invalid("degenerate Chung-Lu weights".into()));
        }
        Ok(w)
    }
}

/// Edge probability between nodes with weights `wi`, `wj` given total weight.
pub fn chunglu_edge_prob(wi: f64, wj: f64, total: f64) -> f64 {
    (wi * wj / total).min(1.0)
}

/// Single-class graph with unit-dimensional zero features; structure only.
pub fn generate_chunglu(params: &ChungLuParams, seed: u64) -> Result<Graph> {
    let w = params.weights()?;
    let total: f64 = w.iter().sum();
    let n = params.n;
    let mut rng = rng::seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < chunglu_edge_prob(w[i], w[j], total) {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::from_edges(n, &edges, Tensor::zeros(n, 1), vec![0; n], 1)?;
    g.provenance = format!("chunglu {}", serde_json::to_string(params)?);
    Ok(g)
}
