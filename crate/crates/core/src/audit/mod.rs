//! Configuration-driven audit: runs the attack grid, checks the closed-form
//! bounds, runs the adaptive grid, and writes CSV tables, SVG plots and a
//! JSON report.
//!
//! Cells are keyed by (index, seed) and merged in grid order, so output files
//! depend only on the configuration.

pub mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{simulate_type2, AdversaryKnowledge, Type2Config, Type2Row};
use crate::diffusion::Denoiser;
use crate::dp::Mechanism;
use crate::error::{Error, Result};
use crate::graphgen::Window;
use crate::pipeline::{attack_cell, build_instance, shadow_denoiser, target_windows, Instance, SignalSource};
use crate::rng;
use crate::theory::{check_bound, fidelity_report, fit_hetero_constant, BoundKind, BoundReport, FidelityReport};

pub use config::ExperimentConfig;
use plot::{render_svg, Figure, Series};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One row of results.csv. Failed cells keep their key and carry the error
/// in `status` with NaN metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: usize,
    pub source: String,
    /// "privx" for explanation conditioning, "privf" for features.
    pub attack: String,
    pub arch: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub k: usize,
    pub seed: u64,
    pub t_star: usize,
    pub out_of_range: bool,
    pub windows: usize,
    pub window_hash: u64,
    pub auc: f64,
    pub ap: f64,
    pub similarity_auc: f64,
    pub similarity_ap: f64,
    pub status: String,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageClass {
    ExplainerInduced,
    Intrinsic,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageGap {
    pub explainer: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub k: usize,
    pub seed: u64,
    pub d_auc: f64,
    pub d_ap: f64,
    pub class: LeakageClass,
}

/// PrivX minus PrivF on the same windows. The AUC difference decides the
/// class: above `margin` the explainer adds leakage, below −`margin` the
/// features alone leak more.
pub fn decompose_leakage(privx: &CellResult, privf: &CellResult, margin: f64) -> Result<LeakageGap> {
    if privx.seed != privf.seed || privx.k != privf.k || privx.window_hash != privf.window_hash {
        return Err(Error::Precondition(format!(
            "leakage decomposition needs identical windows (seeds {} / {}, k {} / {})",
            privx.seed, privf.seed, privx.k, privf.k
        )));
    }
    let d_auc = privx.auc - privf.auc;
    let class = if d_auc > margin {
        LeakageClass::ExplainerInduced
    } else if d_auc < -margin {
        LeakageClass::Intrinsic
    } else {
        LeakageClass::Neither
    };
    Ok(LeakageGap {
        explainer: privx.source.clone(),
        mechanism: privx.mechanism.clone(),
        epsilon: privx.epsilon,
        k: privx.k,
        seed: privx.seed,
        d_auc,
        d_ap: privx.ap - privf.ap,
        class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityRow {
    pub source: String,
    pub seed: u64,
    pub gamma_e: f64,
    pub gamma_l: f64,
    pub top_fraction: f64,
    pub gamma_s: f64,
    pub homophily: f64,
    pub h_x: f64,
    pub phi_bar: f64,
    pub var_edge_dot: f64,
}

impl FidelityRow {
    fn new(source: &str, seed: u64, r: FidelityReport) -> Self {
        FidelityRow {
            source: source.into(),
            seed,
            gamma_e: r.gamma_e,
            gamma_l: r.gamma_l,
            top_fraction: r.top_fraction,
            gamma_s: r.gamma_s,
            homophily: r.homophily,
            h_x: r.h_x,
            phi_bar: r.phi_bar,
            var_edge_dot: r.var_edge_dot,
        }
    }
}

pub const FIDELITY_COLUMNS: [&str; 10] =
    ["source", "seed", "gamma_e", "gamma_l", "top_fraction", "gamma_s", "homophily", "h_x", "phi_bar", "var_edge_dot"];

/// One row of bounds.csv: every parameter any bound kind uses gets a column,
/// left empty where it does not apply.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub kind: &'static str,
    pub source: String,
    pub seed: u64,
    pub sigma: f64,
    pub d: Option<f64>,
    pub phi_bar: Option<f64>,
    pub h: Option<f64>,
    pub gamma_e: Option<f64>,
    pub var: Option<f64>,
    pub h_x: Option<f64>,
    pub c_x: Option<f64>,
    pub rho_xa: Option<f64>,
    pub bound: f64,
    pub empirical: f64,
    pub n_trials: usize,
    pub pass: bool,
    pub assumption_holds: bool,
}

impl BoundRow {
    fn new(source: &str, seed: u64, r: &BoundReport) -> Self {
        let p = |k: &str| r.params.get(k).copied();
        BoundRow {
            kind: r.kind.name(),
            source: source.into(),
            seed,
            sigma: r.params["sigma"],
            d: p("d"),
            phi_bar: p("phi_bar"),
            h: p("h"),
            gamma_e: p("gamma_e"),
            var: p("var"),
            h_x: p("h_x"),
            c_x: p("c_x"),
            rho_xa: p("rho_xa"),
            bound: r.bound,
            empirical: r.empirical,
            n_trials: r.n_trials,
            pass: r.pass,
            assumption_holds: r.assumption_holds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeteroFit {
    pub source: String,
    pub seed: u64,
    /// Smallest c with TPR ≥ (1 − h)|ρ⁻| − cσ² across the sweep. Fitted, not
    /// asserted.
    pub c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub gaps: Vec<LeakageGap>,
    pub fidelity: Vec<FidelityRow>,
    pub bounds: Vec<BoundRow>,
    pub hetero_fits: Vec<HeteroFit>,
    pub adaptive: Vec<Type2Row>,
    /// Stage failures outside the attack grid.
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.ok()).count()
    }

    pub fn has_failures(&self) -> bool {
        self.failed_cells() > 0 || !self.failures.is_empty()
    }
}

struct CellSpec {
    source_idx: usize,
    mechanism: Mechanism,
    epsilon: f64,
    k: usize,
    seed_idx: usize,
}

fn window_hash(windows: &[Window]) -> u64 {
    let centers: Vec<u64> = windows.iter().flat_map(|w| w.nodes.iter().map(|&v| v as u64)).collect();
    rng::derive(&centers)
}

fn failed(cell: usize, src: SignalSource, cfg: &ExperimentConfig, spec: &CellSpec, msg: String) -> CellResult {
    CellResult {
        cell,
        source: src.name().into(),
        attack: attack_name(src).into(),
        arch: arch_name(cfg),
        mechanism: spec.mechanism.name().into(),
        epsilon: spec.epsilon,
        k: spec.k,
        seed: cfg.seeds[spec.seed_idx],
        t_star: 0,
        out_of_range: false,
        windows: 0,
        window_hash: 0,
        auc: f64::NAN,
        ap: f64::NAN,
        similarity_auc: f64::NAN,
        similarity_ap: f64::NAN,
        status: format!("error: {msg}"),
    }
}

fn attack_name(src: SignalSource) -> &'static str {
    match src {
        SignalSource::Explainer(_) => "privx",
        SignalSource::Features => "privf",
    }
}

fn arch_name(cfg: &ExperimentConfig) -> String {
    format!("{:?}", cfg.arch()).to_lowercase()
}

/// Which parts of the configuration to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub attack: bool,
    pub fidelity: bool,
    pub bounds: bool,
    pub adaptive: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { attack: true, fidelity: true, bounds: true, adaptive: true };
}

/// Runs the configured grid. Stage failures are recorded per cell; only an
/// invalid configuration is an error.
pub fn run_audit(cfg: &ExperimentConfig) -> Result<AuditReport> {
    run_stages(cfg, Stages::ALL)
}

pub fn run_stages(cfg: &ExperimentConfig, stages: Stages) -> Result<AuditReport> {
    cfg.validate()?;
    let fixture = cfg.fixture();
    let sources = cfg.sources();
    let ks = cfg.ks();

    // Victim instances per (seed, source).
    let pairs: Vec<(usize, usize)> = (0..cfg.seeds.len()).flat_map(|s| (0..sources.len()).map(move |j| (s, j))).collect();
    let instances: Vec<std::result::Result<Instance, String>> = pairs
        .par_iter()
        .map(|&(s, j)| build_instance(&fixture, sources[j], cfg.seeds[s]).map_err(|e| e.to_string()))
        .collect();
    let instance = |s: usize, j: usize| &instances[s * sources.len() + j];

    // Target windows depend only on the graph, which every source shares.
    let windows: BTreeMap<(usize, usize), std::result::Result<Vec<Window>, String>> = (0..cfg.seeds.len())
        .flat_map(|s| ks.iter().map(move |&k| (s, k)))
        .map(|(s, k)| {
            let w = match instances.iter().skip(s * sources.len()).take(sources.len()).find_map(|r| r.as_ref().ok()) {
                Some(inst) => target_windows(&inst.graph, &cfg.setup(k), cfg.seeds[s]).map_err(|e| e.to_string()),
                None => Err("no instance could be built for this seed".to_string()),
            };
            ((s, k), w)
        })
        .collect();

    // One denoiser per (source, k, belief); beliefs collapse to one when the
    // configured range is used for every budget.
    let mut den_keys: Vec<(usize, usize, Option<(Mechanism, u64)>)> = Vec::new();
    for j in (0..sources.len()).filter(|_| stages.attack) {
        for &k in &ks {
            if cfg.attack.train_at_belief {
                for &m in &cfg.dp.mechanisms {
                    for &e in &cfg.dp.epsilons {
                        den_keys.push((j, k, Some((m, e.to_bits()))));
                    }
                }
            } else {
                den_keys.push((j, k, None));
            }
        }
    }
    den_keys.dedup();
    let denoisers: BTreeMap<_, std::result::Result<Denoiser, String>> = den_keys
        .par_iter()
        .map(|&key| {
            let (j, k, belief) = key;
            let belief = belief.map_or((0.0, None), |(m, e)| (f64::from_bits(e), Some(m)));
            let d = shadow_denoiser(&fixture, sources[j], &cfg.setup(k), belief, cfg.shadow_seed).map_err(|e| e.to_string());
            (key, d)
        })
        .collect();

    let mut specs = Vec::new();
    for source_idx in (0..sources.len()).filter(|_| stages.attack) {
        for &mechanism in &cfg.dp.mechanisms {
            for &epsilon in &cfg.dp.epsilons {
                for &k in &ks {
                    for seed_idx in 0..cfg.seeds.len() {
                        specs.push(CellSpec { source_idx, mechanism, epsilon, k, seed_idx });
                    }
                }
            }
        }
    }
    let cells: Vec<CellResult> = specs
        .par_iter()
        .enumerate()
        .map(|(idx, spec)| {
            let src = sources[spec.source_idx];
            let seed = cfg.seeds[spec.seed_idx];
            let run = || -> std::result::Result<CellResult, String> {
                let inst = instance(spec.seed_idx, spec.source_idx).as_ref().map_err(Clone::clone)?;
                let wins = windows[&(spec.seed_idx, spec.k)].as_ref().map_err(Clone::clone)?;
                let key = (spec.source_idx, spec.k, cfg.attack.train_at_belief.then_some((spec.mechanism, spec.epsilon.to_bits())));
                let den = denoisers[&key].as_ref().map_err(Clone::clone)?;
                let dp = cfg.dp_spec(spec.mechanism, spec.epsilon).map_err(|e| e.to_string())?;
                let knowledge = AdversaryKnowledge::exact(&dp, inst.graph.n());
                let out = attack_cell(&inst.signal, wins, &dp, &knowledge, den, cfg.attack.num_samples, src.kind(), rng::derive(&[seed, idx as u64]))
                    .map_err(|e| e.to_string())?;
                Ok(CellResult {
                    cell: idx,
                    source: src.name().into(),
                    attack: attack_name(src).into(),
                    arch: arch_name(cfg),
                    mechanism: spec.mechanism.name().into(),
                    epsilon: spec.epsilon,
                    k: spec.k,
                    seed,
                    t_star: out.t_star,
                    out_of_range: out.out_of_range,
                    windows: out.privx.windows,
                    window_hash: window_hash(wins),
                    auc: out.privx.auc,
                    ap: out.privx.ap,
                    similarity_auc: out.similarity.auc,
                    similarity_ap: out.similarity.ap,
                    status: "ok".into(),
                })
            };
            run().unwrap_or_else(|msg| {
                log::warn!("cell {idx} failed: {msg}");
                failed(idx, src, cfg, spec, msg)
            })
        })
        .collect();

    let mut failures = Vec::new();
    let gaps = leakage_gaps(&cells, cfg.leakage_margin, &mut failures);

    let mut fidelity = Vec::new();
    if let Some(f) = cfg.fidelity.as_ref().filter(|_| stages.fidelity) {
        let jobs: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(_, j)| matches!(sources[j], SignalSource::Explainer(_))).collect();
        let rows: Vec<_> = jobs
            .par_iter()
            .map(|&(s, j)| {
                let inst = instance(s, j).as_ref().map_err(Clone::clone)?;
                fidelity_report(&inst.model, &inst.graph, &inst.signal, f.sigma, f.top_fraction, f.trials, rng::derive(&[cfg.seeds[s], 0xF1]))
                    .map(|report| FidelityRow::new(sources[j].name(), cfg.seeds[s], report))
                    .map_err(|e| e.to_string())
            })
            .collect();
        for r in rows {
            match r {
                Ok(row) => fidelity.push(row),
                Err(e) => failures.push(format!("fidelity: {e}")),
            }
        }
    }

    let (bounds, hetero_fits) = match cfg.bounds.as_ref().filter(|_| stages.bounds) {
        Some(b) => run_bounds(cfg, b, &sources, &pairs, &instance, &mut failures),
        None => (Vec::new(), Vec::new()),
    };

    let adaptive = match cfg.adaptive.as_ref().filter(|_| stages.adaptive) {
        Some(ad) => {
            let t2 = Type2Config {
                fixture: fixture.clone(),
                source: ad.source.parse().expect("validated"),
                setup: cfg.setup(ks[0]),
                mechanism: ad.mechanism,
                epsilon: ad.epsilon,
                delta: cfg.dp.delta,
                alpha: cfg.dp.alpha,
                rhos: ad.rhos.clone(),
                kappas: ad.kappas.clone(),
                seeds: cfg.seeds.clone(),
                c_deg: ad.c_deg,
                shadow_seed: cfg.shadow_seed,
            };
            simulate_type2(&t2).unwrap_or_else(|e| {
                failures.push(format!("adaptive grid: {e}"));
                Vec::new()
            })
        }
        None => Vec::new(),
    };

    Ok(AuditReport { version: VERSION.into(), config: cfg.clone(), cells, gaps, fidelity, bounds, hetero_fits, adaptive, failures })
}

fn leakage_gaps(cells: &[CellResult], margin: f64, failures: &mut Vec<String>) -> Vec<LeakageGap> {
    let privf: BTreeMap<(String, u64, usize, u64), &CellResult> = cells
        .iter()
        .filter(|c| c.attack == "privf" && c.ok())
        .map(|c| ((c.mechanism.clone(), c.epsilon.to_bits(), c.k, c.seed), c))
        .collect();
    let mut out = Vec::new();
    for c in cells.iter().filter(|c| c.attack == "privx" && c.ok()) {
        if let Some(f) = privf.get(&(c.mechanism.clone(), c.epsilon.to_bits(), c.k, c.seed)) {
            match decompose_leakage(c, f, margin) {
                Ok(g) => out.push(g),
                Err(e) => failures.push(format!("leakage gap for cell {}: {e}", c.cell)),
            }
        }
    }
    out
}

fn run_bounds<'a>(
    cfg: &ExperimentConfig,
    b: &config::BoundsSection,
    sources: &[SignalSource],
    pairs: &[(usize, usize)],
    instance: &(dyn Fn(usize, usize) -> &'a std::result::Result<Instance, String> + Sync),
    failures: &mut Vec<String>,
) -> (Vec<BoundRow>, Vec<HeteroFit>) {
    // PrivF bounds run on the normalized features of any instance for the seed;
    // the explanation bounds run once per explainer source.
    let mut jobs: Vec<(BoundKind, usize, usize)> = Vec::new();
    for &kind in &b.kinds {
        for &(s, j) in pairs {
            let is_features = sources[j] == SignalSource::Features;
            let first_of_seed = pairs.iter().find(|p| p.0 == s).map(|p| p.1) == Some(j);
            match kind {
                BoundKind::PrivF if first_of_seed => jobs.push((kind, s, j)),
                BoundKind::Homophilic | BoundKind::Hetero if !is_features => jobs.push((kind, s, j)),
                _ => {}
            }
        }
    }
    let results: Vec<std::result::Result<(BoundKind, String, u64, Vec<BoundReport>), String>> = jobs
        .par_iter()
        .map(|&(kind, s, j)| {
            let inst = instance(s, j).as_ref().map_err(Clone::clone)?;
            let seed = cfg.seeds[s];
            let (label, rows) = if kind == BoundKind::PrivF {
                let d = inst.graph.d() as f64;
                ("features".to_string(), crate::dp::normalize_rows(inst.graph.features(), d.sqrt()))
            } else {
                (sources[j].name().to_string(), inst.signal.clone())
            };
            let reps = b
                .sigmas
                .iter()
                .enumerate()
                .map(|(i, &sigma)| check_bound(kind, &rows, &inst.graph, sigma, b.trials, b.tolerance, rng::derive(&[seed, 0xB0, i as u64])))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| format!("{} bound: {e}", kind.name()))?;
            Ok((kind, label, seed, reps))
        })
        .collect();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for r in results {
        match r {
            Ok((kind, label, seed, reps)) => {
                if kind == BoundKind::Hetero {
                    fits.push(HeteroFit { source: label.clone(), seed, c: fit_hetero_constant(&reps) });
                }
                rows.extend(reps.iter().map(|rep| BoundRow::new(&label, seed, rep)));
            }
            Err(e) => failures.push(e),
        }
    }
    (rows, fits)
}

pub fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

pub const RESULT_COLUMNS: [&str; 17] = [
    "cell", "source", "attack", "arch", "mechanism", "epsilon", "k", "seed", "t_star", "out_of_range", "windows", "window_hash", "auc", "ap",
    "similarity_auc", "similarity_ap", "status",
];

pub const ADAPTIVE_COLUMNS: [&str; 12] =
    ["rho", "kappa", "kappa_sign", "seed", "auc_full", "ap", "auc_ss", "auc_su", "auc_uu", "auc_weighted", "bound_upper", "bound_lower"];

pub const LEAKAGE_COLUMNS: [&str; 8] = ["explainer", "mechanism", "epsilon", "k", "seed", "d_auc", "d_ap", "class"];

pub const BOUND_COLUMNS: [&str; 17] = [
    "kind", "source", "seed", "sigma", "d", "phi_bar", "h", "gamma_e", "var", "h_x", "c_x", "rho_xa", "bound", "empirical", "n_trials", "pass",
    "assumption_holds",
];

/// Writes every table, the plots and report.json into `dir`. Returns the
/// paths written, in a fixed order.
pub fn write_outputs(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_table(&put("results.csv"), &report.cells, &RESULT_COLUMNS)?;
    write_table(&put("leakage.csv"), &report.gaps, &LEAKAGE_COLUMNS)?;
    if report.config.bounds.is_some() {
        write_table(&put("bounds.csv"), &report.bounds, &BOUND_COLUMNS)?;
    }
    if report.config.adaptive.is_some() {
        write_table(&put("adaptive_grid.csv"), &report.adaptive, &ADAPTIVE_COLUMNS)?;
    }
    if report.config.fidelity.is_some() {
        write_table(&put("fidelity.csv"), &report.fidelity, &FIDELITY_COLUMNS)?;
    }
    std::fs::write(put("report.json"), serde_json::to_string_pretty(report)?)?;
    written.extend(emit_plots(&report.cells, dir)?);
    Ok(written)
}

fn mean_ap(cells: &[&CellResult]) -> f64 {
    let v: Vec<f64> = cells.iter().filter(|c| c.ok()).map(|c| c.ap).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Seed-averaged AP series for the three figure kinds.
pub fn figures(cells: &[CellResult]) -> Vec<(&'static str, Figure)> {
    let order = |f: fn(&CellResult) -> String| {
        let mut v: Vec<String> = Vec::new();
        for c in cells {
            let key = f(c);
            if !v.contains(&key) {
                v.push(key);
            }
        }
        v
    };
    let sources = order(|c| c.source.clone());
    let mechanisms = order(|c| c.mechanism.clone());
    let mut ks: Vec<usize> = cells.iter().map(|c| c.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut eps: Vec<f64> = cells.iter().map(|c| c.epsilon).filter(|e| e.is_finite()).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let (Some(m0), Some(&k0)) = (mechanisms.first(), ks.first()) else {
        return Vec::new();
    };
    let sel = |f: &dyn Fn(&CellResult) -> bool| cells.iter().filter(|c| f(c)).collect::<Vec<_>>();
    let by_eps = |src: &str, mech: &str| -> Vec<(f64, f64)> {
        eps.iter().map(|&e| (e, mean_ap(&sel(&|c| c.source == src && c.mechanism == mech && c.k == k0 && c.epsilon == e)))).collect()
    };
    let mut figs = Vec::new();
    figs.push((
        "ap_vs_epsilon.svg",
        Figure {
            title: format!("AP vs privacy budget ({m0}, k = {k0})"),
            x_label: "epsilon".into(),
            y_label: "AP".into(),
            log_x: true,
            series: sources.iter().map(|s| Series { label: s.clone(), points: by_eps(s, m0) }).collect(),
        },
    ));
    if let Some(&e_top) = eps.last() {
        figs.push((
            "ap_vs_k.svg",
            Figure {
                title: format!("AP vs window size ({m0}, epsilon = {e_top})"),
                x_label: "k".into(),
                y_label: "AP".into(),
                log_x: false,
                series: sources
                    .iter()
                    .map(|s| Series {
                        label: s.clone(),
                        points: ks.iter().map(|&k| (k as f64, mean_ap(&sel(&|c| c.source == *s && c.mechanism == *m0 && c.k == k && c.epsilon == e_top)))).collect(),
                    })
                    .collect(),
            },
        ));
    }
    let s0 = &sources[0];
    figs.push((
        "mechanisms.svg",
        Figure {
            title: format!("AP by mechanism ({s0}, k = {k0})"),
            x_label: "epsilon".into(),
            y_label: "AP".into(),
            log_x: true,
            series: mechanisms.iter().map(|m| Series { label: m.clone(), points: by_eps(s0, m) }).collect(),
        },
    ));
    figs
}

/// Writes one SVG per figure kind that has something to draw.
pub fn emit_plots(cells: &[CellResult], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, fig) in figures(cells) {
        match render_svg(&fig) {
            Some(svg) => {
                let p = dir.join(name);
                std::fs::write(&p, svg)?;
                out.push(p);
            }
            None => log::warn!("{name}: no data, file omitted"),
        }
    }
    Ok(out)
}

/// Reads results.csv back, e.g. to redraw plots.
pub fn read_results(path: &Path) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
