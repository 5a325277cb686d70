//! Closed-form fidelity, bound and divergence calculators, each with a
//! Monte-Carlo counterpart.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adversary::std_normal_cdf;
use crate::attackers::{threshold_attack, Direction};
use crate::dp::{calibrate, Mechanism};
use crate::error::{Error, Result};
use crate::gnn::{argmax, GnnModel};
use crate::graphgen::{measure_homophily, sample_egonet, Graph};
use crate::numerics::Tensor;
use crate::rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_rows(rows: &Tensor) -> Tensor {
    let mut out = rows.clone();
    for i in 0..out.rows() {
        let r = out.row_slice_mut(i);
        let n = dot(r, r).sqrt();
        if n > 0.0 {
            r.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Pr[⟨φ̂_i, φ̂_j⟩ > ⟨φ̂_i, φ̂_k⟩] for a random edge (i, j) and a uniform
/// non-neighbour k of i, on unit-normalized rows. Ties count one half.
pub fn edge_fidelity(rows: &Tensor, graph: &Graph, trials: usize, seed: u64) -> Result<f64> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Precondition("edge fidelity needs at least one edge".into()));
    }
    let n = graph.n();
    let u = unit_rows(rows);
    let mut r = rng::seeded(seed);
    let mut score = 0.0;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < trials {
        attempts += 1;
        if attempts > 100 * trials.max(1) {
            return Err(Error::Precondition("no node has a non-neighbour".into()));
        }
        let (a, b) = edges[r.gen_range(0..edges.len())];
        let (i, j) = if r.gen::<bool>() { (a, b) } else { (b, a) };
        if graph.degree(i) + 1 >= n {
            continue;
        }
        let k = loop {
            let k = r.gen_range(0..n);
            if k != i && !graph.has_edge(i, k) {
                break k;
            }
        };
        let (pos, neg) = (dot(u.row_slice(i), u.row_slice(j)), dot(u.row_slice(i), u.row_slice(k)));
        score += if pos > neg {
            1.0
        } else if pos == neg {
            0.5
        } else {
            0.0
        };
        done += 1;
    }
    Ok(score / trials as f64)
}

/// Accuracy against the true labels when every node keeps only its top
/// `top_fraction` coordinates by |φ|.
pub fn label_fidelity(model: &GnnModel, graph: &Graph, rows: &Tensor, top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Invalid(format!("top_fraction must lie in (0,1], got {top_fraction}")));
    }
    let d = graph.d();
    let keep = ((top_fraction * d as f64).ceil() as usize).clamp(1, d);
    let x = graph.features();
    let mut masked = Tensor::zeros(graph.n(), d);
    for v in 0..graph.n() {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| rows.get(v, b).abs().total_cmp(&rows.get(v, a).abs()).then(a.cmp(&b)));
        for &j in &idx[..keep] {
            masked.set(v, j, x.get(v, j));
        }
    }
    let probs = model.predict_features(graph, &masked)?;
    let hits = (0..graph.n()).filter(|&v| argmax(probs.row_slice(v)) == graph.labels()[v]).count();
    Ok(hits as f64 / graph.n() as f64)
}

/// The closed form used in the fidelity-gap argument: 2Φ₀(snr/√2) − 1.
pub fn sign_fidelity_prediction(snr: f64) -> f64 {
    2.0 * std_normal_cdf(snr / std::f64::consts::SQRT_2) - 1.0
}

/// Pr[sign(φ + σZ) = sign(φ)] for |φ|/σ = snr.
pub fn sign_survival_exact(snr: f64) -> f64 {
    std_normal_cdf(snr)
}

/// Monte-Carlo sign agreement for a positive coordinate of size `snr` under
/// unit noise; snr = 0 is the φ → 0⁺ limit.
pub fn sign_survival_mc(snr: f64, draws: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let hits = (0..draws)
        .filter(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            snr + z > 0.0
        })
        .count();
    hits as f64 / draws as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignSurvival {
    pub empirical: f64,
    pub predicted: f64,
    pub exact: f64,
    /// Fraction of coordinates with a defined sign.
    pub support: f64,
}

/// Per-coordinate sign survival of `rows` under one draw of N(0, σ²) noise,
/// over the coordinates that carry a sign. Zero attributions have none to
/// keep and are excluded.
pub fn sign_survival(rows: &Tensor, sigma: f64, seed: u64) -> SignSurvival {
    let mut r = rng::seeded(seed);
    let (mut emp, mut pred, mut exact, mut count) = (0.0, 0.0, 0.0, 0usize);
    for &v in rows.data() {
        let z: f64 = StandardNormal.sample(&mut r);
        if v == 0.0 {
            continue;
        }
        count += 1;
        if (v + sigma * z) * v.signum() > 0.0 {
            emp += 1.0;
        }
        let snr = if sigma > 0.0 { v.abs() / sigma } else { f64::INFINITY };
        pred += sign_fidelity_prediction(snr);
        exact += sign_survival_exact(snr);
    }
    let c = count.max(1) as f64;
    SignSurvival { empirical: emp / c, predicted: pred / c, exact: exact / c, support: count as f64 / rows.len().max(1) as f64 }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Chebyshev TPR bound for the inner-product attacker on explanations.
pub fn homophilic_tpr_bound(var: f64, sigma: f64, phi_bar: f64, d: usize, h: f64, gamma_e: f64) -> Result<f64> {
    let gap = h * gamma_e * phi_bar;
    if !(gap > 0.0) {
        return Err(Error::Invalid(format!("h·γ_E·φ̄ must be positive, got {gap}")));
    }
    let s2 = sigma * sigma;
    Ok(clamp01(1.0 - (4.0 * var + 8.0 * s2 * phi_bar + 4.0 * s2 * s2 * d as f64) / (gap * gap)))
}

/// Chebyshev TPR bound for the feature-only attacker; `s_x` is the RMS row
/// norm. A negative h_X uses |h_X| with the flipped threshold.
pub fn privf_tpr_bound(c_x: f64, sigma: f64, s_x: f64, d: usize, h_x: f64) -> Result<f64> {
    let s2x = s_x * s_x;
    if !(h_x.abs() > 0.0 && s2x > 0.0) {
        return Err(Error::Invalid(format!("h_X and S_x must be non-zero, got {h_x} and {s_x}")));
    }
    let s2 = sigma * sigma;
    Ok(clamp01(1.0 - 4.0 * (c_x + 2.0 * s2 * s2x + s2 * s2 * d as f64) / (h_x * h_x * s2x * s2x)))
}

/// (1 − h)|ρ⁻| − c σ², with c fitted elsewhere.
pub fn hetero_tpr_bound(h: f64, rho_xa: f64, c: f64, sigma: f64) -> f64 {
    clamp01((1.0 - h) * rho_xa.abs() - c * sigma * sigma)
}

/// Sample statistics over the edges of `graph` for the rows `rows`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// E‖φ_v‖² over nodes.
    pub phi_bar: f64,
    pub mean_edge_dot: f64,
    pub var_edge_dot: f64,
    pub homophily: f64,
    /// Mean edge inner product over φ̄: h_X when the rows are features.
    pub correlation: f64,
    /// −E[⟨φ̂_i, φ̂_j⟩ | edge, different labels]; zero without such edges.
    pub anti_correlation: f64,
}

pub fn edge_stats(rows: &Tensor, graph: &Graph) -> Result<EdgeStats> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Precondition("edge statistics need at least one edge".into()));
    }
    let phi_bar = (0..rows.rows()).map(|v| dot(rows.row_slice(v), rows.row_slice(v))).sum::<f64>() / rows.rows() as f64;
    let dots: Vec<f64> = edges.iter().map(|&(i, j)| dot(rows.row_slice(i), rows.row_slice(j))).collect();
    let m = dots.len() as f64;
    let mean = dots.iter().sum::<f64>() / m;
    let var = dots.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let u = unit_rows(rows);
    let labels = graph.labels();
    let cross: Vec<f64> = edges.iter().filter(|&&(i, j)| labels[i] != labels[j]).map(|&(i, j)| dot(u.row_slice(i), u.row_slice(j))).collect();
    let anti = if cross.is_empty() { 0.0 } else { -cross.iter().sum::<f64>() / cross.len() as f64 };
    Ok(EdgeStats {
        phi_bar,
        mean_edge_dot: mean,
        var_edge_dot: var,
        homophily: measure_homophily(graph)?,
        correlation: if phi_bar > 0.0 { mean / phi_bar } else { 0.0 },
        anti_correlation: anti,
    })
}

/// Fraction of sampled true edges the threshold attacker flags when both rows
/// get fresh N(0, σ²) noise.
pub fn mc_threshold_tpr(rows: &Tensor, graph: &Graph, sigma: f64, tau: f64, direction: Direction, trials: usize, seed: u64) -> Result<f64> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Precondition("TPR needs at least one edge".into()));
    }
    let d = rows.cols();
    let mut r = rng::seeded(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let (i, j) = edges[r.gen_range(0..edges.len())];
        let pair = Tensor::from_fn(2, d, |a, c| {
            let z: f64 = StandardNormal.sample(&mut r);
            rows.get(if a == 0 { i } else { j }, c) + sigma * z
        });
        if threshold_attack(&pair, tau, direction).get(0, 1) == 1.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Homophilic,
    PrivF,
    Hetero,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Homophilic => "homophilic",
            BoundKind::PrivF => "privf",
            BoundKind::Hetero => "hetero",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub params: BTreeMap<String, f64>,
    pub bound: f64,
    pub empirical: f64,
    pub n_trials: usize,
    /// Empirical TPR ≥ bound − tolerance.
    pub pass: bool,
    /// The fixture meets the mean condition the bound's proof relies on.
    pub assumption_holds: bool,
}

/// Evaluates the bound of `kind` at noise σ on a concrete fixture and checks
/// it against the matching threshold attack. For the heterophilic regime the
/// bound is the leading term with c = 0; see [`fit_hetero_constant`].
pub fn check_bound(kind: BoundKind, rows: &Tensor, graph: &Graph, sigma: f64, trials: usize, tolerance: f64, seed: u64) -> Result<BoundReport> {
    let st = edge_stats(rows, graph)?;
    let d = rows.cols();
    let mut params = BTreeMap::new();
    params.insert("sigma".to_string(), sigma);
    params.insert("phi_bar".to_string(), st.phi_bar);
    params.insert("d".to_string(), d as f64);
    let (bound, tau, dir, holds) = match kind {
        BoundKind::Homophilic => {
            let gamma = edge_fidelity(rows, graph, trials, rng::derive(&[seed, 1]))?;
            let gap = st.homophily * gamma * st.phi_bar;
            params.insert("h".into(), st.homophily);
            params.insert("gamma_e".into(), gamma);
            params.insert("var".into(), st.var_edge_dot);
            let b = homophilic_tpr_bound(st.var_edge_dot, sigma, st.phi_bar, d, st.homophily, gamma)?;
            (b, gap / 2.0, Direction::Above, st.mean_edge_dot >= gap)
        }
        BoundKind::PrivF => {
            let hx = st.correlation;
            params.insert("h_x".into(), hx);
            params.insert("c_x".into(), st.var_edge_dot);
            let b = privf_tpr_bound(st.var_edge_dot, sigma, st.phi_bar.sqrt(), d, hx)?;
            let dir = if hx >= 0.0 { Direction::Above } else { Direction::Below };
            (b, hx * st.phi_bar / 2.0, dir, true)
        }
        BoundKind::Hetero => {
            params.insert("h".into(), st.homophily);
            params.insert("rho_xa".into(), st.anti_correlation);
            let lead = (1.0 - st.homophily) * st.anti_correlation;
            // Edges must sit below the threshold on average for the rule to fire.
            let holds = st.anti_correlation > 0.0 && st.mean_edge_dot < -lead * st.phi_bar / 2.0;
            (hetero_tpr_bound(st.homophily, st.anti_correlation, 0.0, sigma), -lead * st.phi_bar / 2.0, Direction::Below, holds)
        }
    };
    let empirical = mc_threshold_tpr(rows, graph, sigma, tau, dir, trials, rng::derive(&[seed, 2]))?;
    Ok(BoundReport { kind, params, bound, empirical, n_trials: trials, pass: empirical >= bound - tolerance, assumption_holds: holds })
}

/// Smallest c ≥ 0 with empirical ≥ (1 − h)|ρ⁻| − cσ² at every σ > 0 of the
/// sweep. Reports with σ = 0 constrain nothing and are skipped.
pub fn fit_hetero_constant(reports: &[BoundReport]) -> f64 {
    reports
        .iter()
        .filter(|r| r.kind == BoundKind::Hetero)
        .filter_map(|r| {
            let s = r.params["sigma"];
            (s > 0.0).then(|| (r.bound - r.empirical) / (s * s))
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub sigma_c2: f64,
    /// ε at which the Gaussian mechanism's σ equals σ_c; infinite when σ_c = 0.
    pub epsilon_c: f64,
    pub unrecoverable: bool,
}

pub fn crossover(h: f64, gamma_e: f64, phi_bar: f64, delta: f64, sensitivity: f64) -> Result<Crossover> {
    if !(h >= 0.0 && gamma_e >= 0.0 && phi_bar >= 0.0 && sensitivity > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::Invalid("crossover inputs must be non-negative with δ ∈ (0,1) and Δ > 0".into()));
    }
    let sigma_c2 = h * gamma_e * phi_bar;
    if sigma_c2 == 0.0 {
        return Ok(Crossover { sigma_c2, epsilon_c: f64::INFINITY, unrecoverable: true });
    }
    // σ_G(ε) = σ_G(1)/ε, so the inversion is a ratio.
    let unit = calibrate(Mechanism::Gaussian, 1.0, delta, 2.0, sensitivity)?.sigma;
    Ok(Crossover { sigma_c2, epsilon_c: unit / sigma_c2.sqrt(), unrecoverable: false })
}

/// (E[√deg] − 1)/(σ√d), the scale of the aggregation advantage.
pub fn fidelity_gap_prediction(mean_sqrt_degree: f64, sigma: f64, d: usize) -> Result<f64> {
    if !(mean_sqrt_degree >= 0.0 && sigma > 0.0 && d > 0) {
        return Err(Error::Invalid("fidelity gap needs σ > 0, d > 0 and a non-negative mean".into()));
    }
    Ok((mean_sqrt_degree - 1.0) / (sigma * (d as f64).sqrt()))
}

pub fn mean_sqrt_degree(graph: &Graph) -> f64 {
    (0..graph.n()).map(|v| (graph.degree(v) as f64).sqrt()).sum::<f64>() / graph.n().max(1) as f64
}

/// Plug-in γ²(|N| − 1)/(2σ²d); a diagnostic with no estimator behind it.
pub fn mutual_information_gap(gamma: f64, neighbours: f64, sigma: f64, d: usize) -> f64 {
    gamma * gamma * (neighbours - 1.0) / (2.0 * sigma * sigma * d as f64)
}

/// ½(ln π − 1): KL from a Laplace to the Gaussian of equal variance, for any
/// scale.
pub fn laplace_gaussian_kl() -> f64 {
    0.5 * (std::f64::consts::PI.ln() - 1.0)
}

/// The same KL by composite Simpson integration over ±60b.
pub fn laplace_gaussian_kl_numeric(b: f64) -> f64 {
    let var = 2.0 * b * b;
    let f = |x: f64| {
        let p = (-x.abs() / b).exp() / (2.0 * b);
        if p == 0.0 {
            return 0.0;
        }
        let ln_q = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var);
        p * (p.ln() - ln_q)
    };
    // Integrate [0, L] and double; the integrand is even with a kink at 0.
    let (l, n) = (60.0 * b, 200_000usize);
    let h = l / n as f64;
    let mut s = f(0.0) + f(l);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    2.0 * s * h / 3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceGaussian {
    pub kl_per_coord: f64,
    pub kl_numeric: f64,
    pub kl_total: f64,
    pub tv_bound: f64,
    pub tpr_gap_bound: f64,
    pub vacuous: bool,
}

pub fn laplace_gaussian_analysis(d: usize, b: f64) -> Result<LaplaceGaussian> {
    if d == 0 || !(b > 0.0) {
        return Err(Error::Invalid(format!("need d ≥ 1 and b > 0, got d = {d}, b = {b}")));
    }
    let kl = laplace_gaussian_kl();
    let total = d as f64 * kl;
    let raw = (total / 2.0).sqrt();
    let tv = raw.min(1.0);
    Ok(LaplaceGaussian { kl_per_coord: kl, kl_numeric: laplace_gaussian_kl_numeric(b), kl_total: total, tv_bound: tv, tpr_gap_bound: tv, vacuous: raw >= 1.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBiasReport {
    /// (k, mean boundary fraction) per window size.
    pub fractions: Vec<(usize, f64)>,
    /// Least-squares slope of ln fraction against ln k.
    pub slope: f64,
    /// fraction(k=32)/fraction(k=128) when both sizes were sampled.
    pub ratio_32_128: Option<f64>,
    /// 4^1.8, the reference ratio for a degree exponent of 1.8.
    pub reference_ratio: f64,
}

pub fn sampling_bias_report(graph: &Graph, ks: &[usize], centers: usize, seed: u64) -> Result<SamplingBiasReport> {
    if let Some(&k) = ks.iter().find(|&&k| k > graph.n()) {
        return Err(Error::Invalid(format!("window size {k} exceeds n = {}", graph.n())));
    }
    let mut nodes: Vec<usize> = (0..graph.n()).collect();
    nodes.shuffle(&mut rng::seeded(seed));
    nodes.truncate(centers.max(1));
    let mut fractions = Vec::new();
    for &k in ks {
        let mut total = 0.0;
        for &c in &nodes {
            total += sample_egonet(graph, c, k, rng::derive(&[seed, k as u64, c as u64]))?.boundary_fraction();
        }
        fractions.push((k, total / nodes.len() as f64));
    }
    let pts: Vec<(f64, f64)> = fractions.iter().filter(|p| p.1 > 0.0).map(|&(k, f)| ((k as f64).ln(), f.ln())).collect();
    let slope = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let at = |k: usize| fractions.iter().find(|p| p.0 == k).map(|p| p.1);
    let ratio_32_128 = at(32).zip(at(128)).map(|(a, b)| a / b);
    Ok(SamplingBiasReport { fractions, slope, ratio_32_128, reference_ratio: 4f64.powf(1.8) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub gamma_e: f64,
    pub gamma_l: f64,
    pub top_fraction: f64,
    pub gamma_s: f64,
    pub homophily: f64,
    pub h_x: f64,
    pub phi_bar: f64,
    pub var_edge_dot: f64,
}

pub fn fidelity_report(model: &GnnModel, graph: &Graph, rows: &Tensor, sigma: f64, top_fraction: f64, trials: usize, seed: u64) -> Result<FidelityReport> {
    let st = edge_stats(rows, graph)?;
    Ok(FidelityReport {
        gamma_e: edge_fidelity(rows, graph, trials, rng::derive(&[seed, 1]))?,
        gamma_l: label_fidelity(model, graph, rows, top_fraction)?,
        top_fraction,
        gamma_s: sign_survival(rows, sigma, rng::derive(&[seed, 2])).empirical,
        homophily: st.homophily,
        h_x: crate::graphgen::measure_feature_correlation(graph)?,
        phi_bar: st.phi_bar,
        var_edge_dot: st.var_edge_dot,
    })
}
