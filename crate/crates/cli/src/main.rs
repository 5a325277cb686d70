use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use graphleak::adversary::AdversaryKnowledge;
use graphleak::attackers::{evaluate, similarity_attack};
use graphleak::audit::{self, ExperimentConfig, Stages};
use graphleak::diffusion::{reconstruct, ConditioningSignal, Denoiser};
use graphleak::dp::{normalize_rows, perturb_explanations, Mechanism};
use graphleak::explain::{explain_all, ExplainerKind, ExplanationMatrix};
use graphleak::gnn::{train_gnn, GnnModel};
use graphleak::graphgen::{generate_sbm, load_graph, measure_homophily, save_graph};
use graphleak::pipeline::{shadow_denoiser, target_windows, window_signal, SignalSource};
use graphleak::rng;

#[derive(Parser)]
#[command(name = "graphleak", version, about = "Structural leakage audits for DP-protected GNN explanations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; GRAPHLEAK_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a graph from the configured generator.
    Generate,
    /// Train the victim GNN on a graph.
    Train {
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Explain every node of a trained model.
    Explain {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "gnnexplainer")]
        explainer: String,
    },
    /// Release explanations through a DP mechanism.
    Perturb {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "gaussian")]
        mechanism: String,
        #[arg(long)]
        epsilon: f64,
    },
    /// Reconstruct target windows from released explanations.
    Attack {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        released: Option<PathBuf>,
        /// Attacker's believed mechanism.
        #[arg(long, default_value = "gaussian")]
        mechanism: String,
        /// Attacker's believed budget.
        #[arg(long)]
        epsilon: f64,
        /// Reuse a trained denoiser instead of training on shadow graphs.
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Check the closed-form bounds and fidelities.
    Bounds,
    /// Run the full configured grid.
    Audit,
    /// Summarize an output directory and redraw its plots.
    Report,
}

/// Exit status for a configuration problem.
const EXIT_CONFIG: u8 = 2;
/// Exit status when some grid cells failed.
const EXIT_CELLS: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| matches!(c.downcast_ref::<graphleak::Error>(), Some(graphleak::Error::Config(_))));
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}

fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var("GRAPHLEAK_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| graphleak::Error::Config(format!("GRAPHLEAK_THREADS={v:?} is not a thread count")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
}

fn load_config(g: &Global) -> anyhow::Result<ExperimentConfig> {
    let path = g.config.as_ref().ok_or_else(|| graphleak::Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn input(given: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join(default))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = &cli.global;
    if let Some(n) = threads(g.threads)? {
        if n == 0 {
            return Err(graphleak::Error::Config("thread count must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;

    match &cli.command {
        Command::Generate => {
            let cfg = load_config(g)?;
            let graph = generate_sbm(&cfg.graph, rng::derive(&[cfg.seeds[0], 0]))?;
            let path = g.out.join("graph.json");
            save_graph(&graph, &path)?;
            println!("{}: n = {}, edges = {}, homophily = {:.3}", path.display(), graph.n(), graph.num_edges(), measure_homophily(&graph)?);
        }
        Command::Train { graph } => {
            let cfg = load_config(g)?;
            let graph = load_graph(&input(graph, &g.out, "graph.json"))?;
            let model = train_gnn(&graph, cfg.arch(), &cfg.model.hyper, rng::derive(&[cfg.seeds[0], 1]))?;
            let path = g.out.join("model.bin");
            model.save(&path)?;
            println!("{}: train accuracy {:.3}, validation accuracy {:.3}", path.display(), model.meta.train_accuracy, model.meta.val_accuracy);
        }
        Command::Explain { graph, model, explainer } => {
            let cfg = load_config(g)?;
            let kind: ExplainerKind = explainer.parse()?;
            let graph = load_graph(&input(graph, &g.out, "graph.json"))?;
            let model = GnnModel::load(&input(model, &g.out, "model.bin"))?;
            let e = explain_all(&model, &graph, kind, &cfg.fixture().explain, rng::derive(&[cfg.seeds[0], 2]))?;
            let path = g.out.join("explanations.bin");
            e.save(&path)?;
            println!("{}: {} × {} {} attributions, {} fallbacks", path.display(), e.values.rows(), e.values.cols(), kind.name(), e.fallbacks.len());
        }
        Command::Perturb { input: src, mechanism, epsilon } => {
            let cfg = load_config(g)?;
            let mech: Mechanism = mechanism.parse()?;
            let e = ExplanationMatrix::load(&input(src, &g.out, "explanations.bin"))?;
            let d = e.values.cols() as f64;
            // Same release path as the audit: unit RMS rows, clipped at √d.
            let normalized = ExplanationMatrix { values: normalize_rows(&e.values, d.sqrt()), ..e };
            let spec = cfg.dp_spec(mech, *epsilon)?;
            let spec = if spec.no_noise { spec } else { spec.with_clip_norm(d.sqrt())? };
            let seed = g.seed.unwrap_or(cfg.seeds[0]);
            let released = perturb_explanations(&normalized, &spec, rng::derive(&[seed, 0xA0]));
            let path = g.out.join("released.bin");
            released.save(&path)?;
            println!("{}: {} ε = {epsilon}, per-coordinate σ = {:.4}", path.display(), mech, spec.sigma);
        }
        Command::Attack { graph, released, mechanism, epsilon, denoiser, k } => {
            let cfg = load_config(g)?;
            attack(&cfg, g, graph, released, mechanism.parse()?, *epsilon, denoiser, *k)?;
        }
        Command::Bounds => {
            let cfg = load_config(g)?;
            if cfg.bounds.is_none() && cfg.fidelity.is_none() {
                return Err(graphleak::Error::Config("config has neither [bounds] nor [fidelity]".into()).into());
            }
            let report = audit::run_stages(&cfg, Stages { attack: false, fidelity: true, bounds: true, adaptive: false })?;
            if cfg.bounds.is_some() {
                audit::write_table(&g.out.join("bounds.csv"), &report.bounds, &audit::BOUND_COLUMNS)?;
            }
            if cfg.fidelity.is_some() {
                audit::write_table(&g.out.join("fidelity.csv"), &report.fidelity, &audit::FIDELITY_COLUMNS)?;
            }
            for b in &report.bounds {
                println!("{:<10} {:<12} seed {:<3} σ {:<5} bound {:.3} empirical {:.3} {}", b.kind, b.source, b.seed, b.sigma, b.bound, b.empirical, if b.pass { "pass" } else { "FAIL" });
            }
            for f in &report.hetero_fits {
                println!("hetero fitted c = {:.3} ({} seed {})", f.c, f.source, f.seed);
            }
            return Ok(finish(&report.failures, 0));
        }
        Command::Audit => {
            let cfg = load_config(g)?;
            let report = audit::run_audit(&cfg)?;
            let files = audit::write_outputs(&report, &g.out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            return Ok(finish(&report.failures, report.failed_cells()));
        }
        Command::Report => summarize(&g.out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn finish(failures: &[String], failed_cells: usize) -> ExitCode {
    for f in failures {
        eprintln!("failure: {f}");
    }
    if failed_cells > 0 {
        eprintln!("{failed_cells} cell(s) failed; see the status column of results.csv");
    }
    if failed_cells > 0 || !failures.is_empty() {
        ExitCode::from(EXIT_CELLS)
    } else {
        ExitCode::SUCCESS
    }
}

#[derive(Serialize)]
struct WindowRow {
    window: usize,
    center: usize,
    auc: f64,
    ap: f64,
    similarity_auc: f64,
    similarity_ap: f64,
}

#[allow(clippy::too_many_arguments)]
fn attack(
    cfg: &ExperimentConfig,
    g: &Global,
    graph: &Option<PathBuf>,
    released: &Option<PathBuf>,
    mechanism: Mechanism,
    epsilon: f64,
    denoiser: &Option<PathBuf>,
    k: Option<usize>,
) -> anyhow::Result<()> {
    let graph = load_graph(&input(graph, &g.out, "graph.json"))?;
    let rel = ExplanationMatrix::load(&input(released, &g.out, "released.bin"))?;
    if !rel.perturbed {
        log::warn!("attacking explanations that were never perturbed");
    }
    if rel.values.rows() != graph.n() {
        bail!("released matrix has {} rows for a graph of {} nodes", rel.values.rows(), graph.n());
    }
    let k = k.unwrap_or(cfg.ks()[0]);
    let setup = cfg.setup(k);
    let seed = cfg.seeds[0];
    let source = SignalSource::Explainer(rel.kind);
    let den = match denoiser {
        Some(p) => Denoiser::load(p)?,
        None => {
            let den = shadow_denoiser(&cfg.fixture(), source, &setup, (epsilon, Some(mechanism)), cfg.shadow_seed)?;
            den.save(&g.out.join("denoiser.bin"))?;
            den
        }
    };
    let spec = cfg.dp_spec(mechanism, epsilon)?;
    let knowledge = AdversaryKnowledge::exact(&spec, graph.n());
    let windows = target_windows(&graph, &setup, seed)?;
    let mut rows = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let k = w.k();
        let has_pos = w.adj.iter().any(|&a| a == 1);
        let has_neg = (0..k).any(|a| (a + 1..k).any(|b| w.adj[a * k + b] == 0));
        if !(has_pos && has_neg) {
            continue;
        }
        let cond = ConditioningSignal::observed(window_signal(&rel.values, w), source.kind());
        let rec = reconstruct(&cond, &den, den.schedule(), &knowledge, setup.num_samples, rng::derive(&[seed, i as u64]))?;
        let px = evaluate(rec.scores, &w.adj, "privx", None)?;
        let sim = evaluate(similarity_attack(cond.values())?, &w.adj, "similarity", None)?;
        rows.push(WindowRow { window: i, center: w.center, auc: px.auc, ap: px.ap, similarity_auc: sim.auc, similarity_ap: sim.ap });
    }
    if rows.is_empty() {
        bail!("no window has both edges and non-edges");
    }
    let path = g.out.join("attack.csv");
    audit::write_table(&path, &rows, &["window", "center", "auc", "ap", "similarity_auc", "similarity_ap"])?;
    let mean = |f: fn(&WindowRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    println!(
        "{}: {} windows, AUC {:.3} (similarity {:.3}), AP {:.3} (similarity {:.3})",
        path.display(),
        rows.len(),
        mean(|r| r.auc),
        mean(|r| r.similarity_auc),
        mean(|r| r.ap),
        mean(|r| r.similarity_ap)
    );
    Ok(())
}

fn summarize(dir: &Path) -> anyhow::Result<()> {
    let path = dir.join("results.csv");
    let cells = audit::read_results(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut groups: Vec<((String, String, u64, usize), Vec<&audit::CellResult>)> = Vec::new();
    for c in &cells {
        let key = (c.source.clone(), c.mechanism.clone(), c.epsilon.to_bits(), c.k);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(c),
            None => groups.push((key, vec![c])),
        }
    }
    println!("{:<14} {:<9} {:>8} {:>4} {:>6} {:>7} {:>7} {:>7} {:>7}", "source", "mechanism", "epsilon", "k", "seeds", "auc", "ap", "sim_auc", "sim_ap");
    for ((source, mech, eps, k), v) in &groups {
        let ok: Vec<_> = v.iter().filter(|c| c.ok()).collect();
        let mean = |f: fn(&audit::CellResult) -> f64| ok.iter().map(|c| f(c)).sum::<f64>() / ok.len() as f64;
        println!(
            "{:<14} {:<9} {:>8} {:>4} {:>3}/{:<2} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            source,
            mech,
            f64::from_bits(*eps),
            k,
            ok.len(),
            v.len(),
            mean(|c| c.auc),
            mean(|c| c.ap),
            mean(|c| c.similarity_auc),
            mean(|c| c.similarity_ap)
        );
    }
    for p in audit::emit_plots(&cells, dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
