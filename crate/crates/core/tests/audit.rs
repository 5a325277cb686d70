use graphleak::audit::plot::{render_svg, Figure, Series};
use graphleak::audit::*;
use graphleak::Error;
use std::path::{Path, PathBuf};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn minimal() -> ExperimentConfig {
    ExperimentConfig::load(&configs().join("minimal.toml")).unwrap()
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> AuditReport {
    let report = run_audit(cfg).unwrap();
    write_outputs(&report, dir).unwrap();
    report
}

#[test]
fn minimal_grid_is_deterministic() {
    let cfg = minimal();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = run_into(&cfg, a.path());
    run_into(&cfg, b.path());
    assert_eq!(report.cells.len(), 2);
    assert!(!report.has_failures(), "{:?}", report.cells);

    let results = std::fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert_eq!(results.lines().next().unwrap(), RESULT_COLUMNS.join(","));

    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name:?} differs between runs");
    }
    assert_eq!(read_results(&a.path().join("results.csv")).unwrap(), report.cells);
}

#[test]
fn golden_plot() {
    let dir = tempfile::tempdir().unwrap();
    run_into(&minimal(), dir.path());
    let got = std::fs::read_to_string(dir.path().join("ap_vs_epsilon.svg")).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/minimal_ap_vs_epsilon.svg");
    if std::env::var_os("GRAPHLEAK_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(&golden).expect("golden file; regenerate with GRAPHLEAK_BLESS=1"));
    assert_eq!(got.matches("<polyline").count(), 1);
}

#[test]
fn shipped_configs_validate() {
    for name in ["minimal.toml", "homophilic-demo.toml", "heterophilic-demo.toml"] {
        let cfg = ExperimentConfig::load(&configs().join(name)).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

fn rejects(edit: impl Fn(&mut toml::Table)) -> bool {
    let mut t: toml::Table = std::fs::read_to_string(configs().join("minimal.toml")).unwrap().parse().unwrap();
    edit(&mut t);
    matches!(ExperimentConfig::from_toml(&toml::to_string(&t).unwrap()), Err(Error::Config(_)))
}

fn section<'a>(t: &'a mut toml::Table, name: &str) -> &'a mut toml::Table {
    t.get_mut(name).unwrap().as_table_mut().unwrap()
}

#[test]
fn invalid_configs_fail_before_running() {
    assert!(rejects(|t| {
        t.insert("seeds".into(), toml::Value::Array(vec![]));
    }));
    assert!(rejects(|t| {
        t.insert("typo".into(), 1.into());
    }));
    assert!(rejects(|t| {
        section(t, "explain").insert("sources".into(), toml::Value::Array(vec!["magic".into()]));
    }));
    assert!(rejects(|t| {
        section(t, "dp").insert("epsilons".into(), toml::Value::Array(vec![(-1.0).into()]));
    }));
    assert!(rejects(|t| {
        section(t, "dp").insert("mechanisms".into(), toml::Value::Array(vec!["cauchy".into()]));
    }));
    assert!(rejects(|t| {
        section(t, "graph").insert("p_in".into(), 1.5.into());
    }));
    assert!(rejects(|t| {
        section(t, "attack").insert("k".into(), 500.into());
    }));
    assert!(rejects(|t| {
        section(section(t, "attack"), "denoiser").insert("heads".into(), 3.into());
    }));
    assert!(rejects(|t| {
        let mut ad = toml::Table::new();
        ad.insert("epsilon".into(), 5.0.into());
        ad.insert("rhos".into(), toml::Value::Array(vec![1.2.into()]));
        ad.insert("kappas".into(), toml::Value::Array(vec![0.0.into()]));
        t.insert("adaptive".into(), ad.into());
    }));
    assert!(!rejects(|_| {}));
}

fn cell(auc: f64, hash: u64) -> CellResult {
    CellResult {
        cell: 0,
        source: "gnnexplainer".into(),
        attack: "privx".into(),
        arch: "gcn".into(),
        mechanism: "gaussian".into(),
        epsilon: 5.0,
        k: 16,
        seed: 1,
        t_star: 10,
        out_of_range: false,
        windows: 24,
        window_hash: hash,
        auc,
        ap: auc,
        similarity_auc: 0.5,
        similarity_ap: 0.5,
        status: "ok".into(),
    }
}

#[test]
fn leakage_decomposition() {
    let g = decompose_leakage(&cell(0.7, 3), &cell(0.7, 3), 1e-9).unwrap();
    assert_eq!((g.d_auc, g.d_ap, g.class), (0.0, 0.0, LeakageClass::Neither));
    assert_eq!(decompose_leakage(&cell(0.8, 3), &cell(0.7, 3), 0.05).unwrap().class, LeakageClass::ExplainerInduced);
    assert_eq!(decompose_leakage(&cell(0.6, 3), &cell(0.7, 3), 0.05).unwrap().class, LeakageClass::Intrinsic);
    assert!(decompose_leakage(&cell(0.6, 3), &cell(0.7, 4), 0.05).is_err());
}

#[test]
fn figures_average_over_seeds_and_skip_failures() {
    let mut cells = vec![cell(0.6, 1), cell(0.8, 1), cell(0.9, 1)];
    cells[1].seed = 2;
    cells[2].status = "error: boom".into();
    cells[2].ap = f64::NAN;
    let figs = figures(&cells);
    let (_, eps_fig) = figs.iter().find(|(n, _)| *n == "ap_vs_epsilon.svg").unwrap();
    assert_eq!(eps_fig.series[0].points.len(), 1);
    assert!((eps_fig.series[0].points[0].1 - 0.7).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plots(&[], dir.path()).unwrap().is_empty());
    let only_failed = vec![cells[2].clone()];
    assert!(emit_plots(&only_failed, dir.path()).unwrap().is_empty());
}

#[test]
fn two_point_series_is_one_polyline() {
    let fig = Figure {
        title: "t".into(),
        x_label: "epsilon".into(),
        y_label: "AP".into(),
        log_x: true,
        series: vec![Series { label: "a".into(), points: vec![(0.5, 0.6), (5.0, 0.7)] }],
    };
    let svg = render_svg(&fig).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("<circle").count(), 2);
    assert!(svg.contains(">epsilon<") && svg.contains(">AP<"));
}
