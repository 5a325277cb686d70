use graphleak::gnn::*;
use graphleak::graphgen::*;
use graphleak::numerics::{Tape, Tensor};

fn separable(seed: u64) -> Graph {
    let p = SbmParams { n: 128, classes: 2, p_in: 0.1, p_out: 0.01, r: 3.0, s: 0.3, d: 8, orientation: MeanOrientation::Aligned };
    generate_sbm(&p, seed).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn separable_sbm_trains_to_high_accuracy() {
    for arch in [Arch::Gcn, Arch::Gin, Arch::Sage] {
        let mut train_acc = Vec::new();
        let mut argmax_match = Vec::new();
        for seed in 0..5 {
            let g = separable(seed);
            let m = train_gnn(&g, arch, &GnnHyper::default(), seed).unwrap();
            train_acc.push(m.meta.train_accuracy);
            let (train, _) = split_nodes(g.n(), 0.6, seed);
            argmax_match.push(m.accuracy(&g, &train).unwrap());
        }
        assert!(median(train_acc) >= 0.95, "{arch:?}");
        assert!(median(argmax_match) >= 0.95, "{arch:?}");
    }
}

#[test]
fn adam_also_trains_every_backbone() {
    let hyper = GnnHyper { optimizer: OptimizerKind::Adam, ..Default::default() };
    for arch in [Arch::Gcn, Arch::Gin, Arch::Sage] {
        let accs: Vec<f64> = (0..5).map(|s| train_gnn(&separable(s), arch, &hyper, s).unwrap().meta.train_accuracy).collect();
        assert!(median(accs) >= 0.95, "{arch:?}");
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let mut accs = Vec::new();
    for seed in 0..10 {
        let g = separable(seed);
        let m = GnnModel::init(Arch::Gcn, g.d(), 2, &GnnHyper::default(), seed).unwrap();
        accs.push(m.accuracy(&g, &(0..g.n()).collect::<Vec<_>>()).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.15, "{mean}");
}

#[test]
fn training_loss_trends_down() {
    // GIN is excluded: under plain descent at the default step its loss
    // plateaus near 1e-2 with small oscillations.
    for (arch, seed) in [Arch::Gcn, Arch::Sage].into_iter().flat_map(|a| (0..5).map(move |s| (a, s))) {
        let m = train_gnn(&separable(seed), arch, &GnnHyper::default(), seed).unwrap();
        let c = &m.meta.eval_loss_curve;
        let violations = (20..c.len()).filter(|&t| c[t] > c[t - 20]).count();
        assert!(violations <= 2, "{arch:?}: {violations} windows increased");
    }
}

fn ce_at(m: &GnnModel, g: &Graph, x: &Tensor, v: usize) -> f64 {
    -m.predict_features(g, x).unwrap().get(v, g.labels()[v]).ln()
}

#[test]
fn input_gradient_matches_finite_differences() {
    let g = separable(1);
    let hyper = GnnHyper { epochs: 30, ..Default::default() };
    for arch in [Arch::Gcn, Arch::Gin, Arch::Sage] {
        let m = train_gnn(&g, arch, &hyper, 1).unwrap();
        for v in [0, 17, 90] {
            let (loss, grad) = m.loss_and_grad(&g, v).unwrap();
            assert!((loss - ce_at(&m, &g, g.features(), v)).abs() < 1e-10);
            for j in 0..g.d() {
                let h = 1e-5;
                let mut xp = g.features().clone();
                xp.set(v, j, xp.get(v, j) + h);
                let mut xm = g.features().clone();
                xm.set(v, j, xm.get(v, j) - h);
                let num = (ce_at(&m, &g, &xp, v) - ce_at(&m, &g, &xm, v)) / (2.0 * h);
                let rel = (num - grad[j]).abs() / num.abs().max(grad[j].abs()).max(1e-6);
                assert!(rel < 1e-4, "{arch:?} v={v} j={j}: {num} vs {}", grad[j]);
            }
        }
    }
}

#[test]
fn doubling_the_loss_doubles_the_gradient() {
    let g = separable(2);
    let m = train_gnn(&g, Arch::Sage, &GnnHyper { epochs: 20, ..Default::default() }, 2).unwrap();
    let (_, base) = m.loss_and_grad(&g, 5).unwrap();
    let tape = Tape::new();
    let params: Vec<_> = m.params.iter().map(|p| tape.constant(p.clone())).collect();
    let x = tape.param(g.features().clone());
    let prop = Propagation::new(m.arch, &g);
    let logits = m.forward(&params, x, &prop, None, None).unwrap();
    let loss = logits.gather_rows(&[5]).unwrap().log_softmax_rows().unwrap().pick_cols(&[g.labels()[5]]).unwrap();
    let doubled = loss.sum().unwrap().scale(-2.0).unwrap();
    let grad = tape.backward(doubled).unwrap();
    for (a, b) in grad.wrt(x).row_slice(5).iter().zip(&base) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
}

#[test]
fn trained_checkpoint_round_trip() {
    let g = separable(0);
    let m = train_gnn(&g, Arch::Gcn, &GnnHyper { epochs: 10, ..Default::default() }, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gcn.ckpt");
    m.save(&p).unwrap();
    let back = GnnModel::load(&p).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict(&g).unwrap(), m.predict(&g).unwrap());
}
