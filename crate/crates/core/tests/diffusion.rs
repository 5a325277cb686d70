use graphleak::adversary::AdversaryKnowledge;
use graphleak::diffusion::*;
use graphleak::dp::{calibrate, normalize_rows, Mechanism};
use graphleak::graphgen::{generate_sbm, sample_egonet, Graph, MeanOrientation, SbmParams};
use graphleak::numerics::{gradcheck, Tensor};
use graphleak::rng;
use proptest::prelude::*;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(200).unwrap()
}

#[test]
fn cosine_tail_is_near_pure_noise() {
    // Direct evaluation of the product of clipped betas.
    let s = schedule();
    let f = |t: f64| (((t / 200.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let mut prod = 1.0;
    for t in 1..=200 {
        prod *= 1.0 - (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999);
        assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
    }
    assert!(s.alpha_bar(200) < 0.01);
    for t in 2..=200 {
        let post = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
        assert!((s.sigma(t).powi(2) - post).abs() < 1e-12);
    }
}

#[test]
fn forward_variance_matches_schedule() {
    let s = schedule();
    let z0 = Tensor::from_fn(200, 500, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
    for t in [1, 10, 30, 50, 80, 100, 130, 160, 190, 200] {
        let (zt, eps) = forward_sample(&z0, t, &s, 40 + t as u64).unwrap();
        let ab = s.alpha_bar(t);
        let resid: Vec<f64> = zt.data().iter().zip(z0.data()).map(|(z, x)| z - ab.sqrt() * x).collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.02, "t={t}: {var} vs {}", 1.0 - ab);
        let back: f64 = resid.iter().zip(eps.data()).map(|(r, e)| (r - (1.0 - ab).sqrt() * e).abs()).fold(0.0, f64::max);
        assert!(back < 1e-12);
    }
    assert!(forward_sample(&z0, 0, &s, 0).is_err());
    assert!(forward_sample(&z0, 201, &s, 0).is_err());
}

#[test]
fn effective_timestep_is_monotone() {
    let s = schedule();
    let mut last = 0;
    for i in 0..=100 {
        let ts = effective_timestep(1.05 * i as f64 / 100.0, &s);
        assert!(ts.t >= last);
        last = ts.t;
    }
    assert_eq!(effective_timestep(f64::INFINITY, &s), EffectiveTimestep { t: 200, out_of_range: true });
    assert_eq!(effective_timestep(0.0, &s).t, 1);
    assert_eq!(effective_timestep(1.0 - s.alpha_bar(100), &s).t, 100);
}

fn tiny() -> DenoiserConfig {
    DenoiserConfig { layers: 1, hidden: 4, heads: 2, k: 4, steps_t: 10, time_dim: 2, ..Default::default() }
}

fn tiny_example(k: usize, d: usize, seed: u64) -> DenoiserExample {
    let mut r = rng::seeded(seed);
    let eps = symmetric_noise(k, &mut r);
    let z_t = symmetric_noise(k, &mut r);
    let cond = Tensor::from_fn(k, d + 1, |i, j| if j == d { 1.0 } else { ((i * 3 + j * 7) % 5) as f64 / 2.0 - 1.0 });
    DenoiserExample { z_t, eps, cond, t: 1 + seed as usize % 10, noise_var: 0.3 }
}

#[test]
fn denoiser_loss_gradcheck() {
    let cfg = tiny();
    let den = Denoiser::init(cfg.clone(), 2, 3).unwrap();
    // Perturb the zero-initialized rows so every path carries gradient.
    let mut r = rng::seeded(9);
    let params: Vec<Tensor> = den
        .params
        .iter()
        .map(|p| {
            let jitter = Tensor::from_fn(p.rows(), p.cols(), |_, _| 0.3 * (rand::Rng::gen::<f64>(&mut r) - 0.5));
            p.zip_with(&jitter, |a, b| a + b).unwrap()
        })
        .collect();
    let batch = vec![tiny_example(4, 2, 1), tiny_example(4, 2, 6)];
    let sched = den.schedule().clone();
    let report = gradcheck(|_tape, vars| denoiser_loss(&cfg, &sched, vars, &batch), &params, 1e-5, 1e-3);
    assert!(report.passed, "{report:?}");
    assert!(report.checked > 100);
}

fn mixed_example(den: &Denoiser, seed: u64) -> DenoiserExample {
    let mut ex = tiny_example(4, 2, seed);
    let ab = den.schedule().alpha_bar(ex.t);
    let z0 = Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
    ex.z_t = z0.zip_with(&ex.eps, |a, e| ab.sqrt() * a + (1.0 - ab).sqrt() * e).unwrap();
    ex
}

#[test]
fn loss_is_off_diagonal_mse() {
    let den = Denoiser::init(tiny(), 2, 0).unwrap();
    let batch: Vec<_> = (0..400).map(|s| mixed_example(&den, s)).collect();
    let per = |e: &DenoiserExample, pred: &Tensor| {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    acc += (pred.get(i, j) - e.eps.get(i, j)).powi(2);
                }
            }
        }
        acc / 12.0
    };
    let oracle: f64 = batch.iter().map(|e| per(e, &den.eps(&e.z_t, &e.cond, e.t, e.noise_var).unwrap())).sum::<f64>() / 400.0;
    assert!((den.loss(&batch).unwrap() - oracle).abs() < 1e-9);
    // A predictor of 0 pays E[ε²] = 1 per entry.
    let zero: f64 = batch.iter().map(|e| per(e, &Tensor::zeros(4, 4))).sum::<f64>() / 400.0;
    assert!((zero - 1.0).abs() < 0.05, "{zero}");
}

fn feature_windows(seed: u64, count: usize) -> Vec<TrainingWindow> {
    let params = SbmParams { n: 96, classes: 4, p_in: 0.5, p_out: 0.01, r: 3.0, s: 0.3, d: 8, orientation: MeanOrientation::Aligned };
    let g: Graph = generate_sbm(&params, seed).unwrap();
    let signal = normalize_rows(g.features(), 8f64.sqrt());
    (0..count)
        .map(|c| {
            let w = sample_egonet(&g, c, 8, rng::derive(&[seed, c as u64])).unwrap();
            let rows = Tensor::from_fn(8, 8, |a, j| signal.get(w.nodes[a], j));
            TrainingWindow::new(&w, rows).unwrap()
        })
        .collect()
}

fn held_out_batch(cfg: &DenoiserConfig, s: &NoiseSchedule) -> Vec<DenoiserExample> {
    let windows = feature_windows(777, 40);
    let mut r = rng::seeded(5);
    (0..160).map(|i| sample_example(cfg, s, &windows[i % 40], 5.0, Mechanism::Gaussian, &mut r).unwrap()).collect()
}

#[test]
fn training_beats_initialization_on_held_out_windows() {
    let cfg = DenoiserConfig { k: 8, steps_t: 50, train_steps: 1000, eps_min: 5.0, eps_max: 5.0, ..Default::default() };
    let mut ratios: Vec<f64> = (0..3u64)
        .map(|seed| {
            let train = feature_windows(seed, 96);
            let untrained = Denoiser::init(cfg.clone(), 8, seed).unwrap();
            let batch = held_out_batch(&cfg, untrained.schedule());
            let trained = train_denoiser(&train, &cfg, seed).unwrap();
            assert_eq!(trained.meta.loss_curve.len(), 1000);
            trained.loss(&batch).unwrap() / untrained.loss(&batch).unwrap()
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[1] < 0.9, "{ratios:?}");
}

#[test]
fn mismatched_windows_are_rejected() {
    let mut w = feature_windows(1, 2);
    w[1].signal = Tensor::zeros(8, 3);
    assert!(train_denoiser(&w, &DenoiserConfig::default(), 0).is_err());
    assert!(train_denoiser(&[], &DenoiserConfig::default(), 0).is_err());
}

fn small_denoiser() -> Denoiser {
    Denoiser::init(DenoiserConfig { k: 6, steps_t: 20, hidden: 8, ..Default::default() }, 3, 11).unwrap()
}

fn knowledge(eps: f64) -> AdversaryKnowledge {
    AdversaryKnowledge::exact(&calibrate(Mechanism::Gaussian, eps, 1e-5, 10.0, 1.0).unwrap(), 6)
}

#[test]
fn reconstruct_decode_contract_and_determinism() {
    let den = small_denoiser();
    let sig = ConditioningSignal::observed(Tensor::from_fn(6, 3, |i, j| (i as f64 - j as f64).sin()), SignalKind::Explanation);
    let kn = knowledge(5.0);
    let a = reconstruct(&sig, &den, den.schedule(), &kn, 3, 42).unwrap();
    let b = reconstruct(&sig, &den, den.schedule(), &kn, 3, 42).unwrap();
    assert_eq!(a, b);
    for i in 0..6 {
        assert_eq!(a.scores.get(i, i), 0.0);
        for j in 0..6 {
            assert_eq!(a.scores.get(i, j), a.scores.get(j, i));
            if i != j {
                assert!(a.scores.get(i, j) > 0.0 && a.scores.get(i, j) < 1.0);
            }
        }
    }
    assert_eq!(a.t_star, effective_timestep(kn.believed_sigma2().unwrap(), den.schedule()).t);
}

#[test]
fn reconstruct_rejects_foreign_schedule_and_shape() {
    let den = small_denoiser();
    let sig = ConditioningSignal::observed(Tensor::zeros(6, 3), SignalKind::Feature);
    let other = NoiseSchedule::cosine(21).unwrap();
    assert!(reconstruct(&sig, &den, &other, &knowledge(1.0), 1, 0).is_err());
    let wrong = ConditioningSignal::observed(Tensor::zeros(5, 3), SignalKind::Feature);
    assert!(reconstruct(&wrong, &den, den.schedule(), &knowledge(1.0), 1, 0).is_err());
}

#[test]
fn unobserved_rows_carry_no_information() {
    let den = small_denoiser();
    let kn = knowledge(2.0);
    let hidden = vec![false; 6];
    let a = ConditioningSignal::new(Tensor::from_fn(6, 3, |i, j| (i * 3 + j) as f64), hidden.clone(), SignalKind::Explanation).unwrap();
    let b = ConditioningSignal::new(Tensor::from_fn(6, 3, |i, j| -((j * 5 + i) as f64)), hidden, SignalKind::Explanation).unwrap();
    let permuted = b.permuted(&[5, 4, 3, 2, 1, 0]);
    let ra = reconstruct(&a, &den, den.schedule(), &kn, 2, 3).unwrap();
    assert_eq!(ra, reconstruct(&b, &den, den.schedule(), &kn, 2, 3).unwrap());
    assert_eq!(ra, reconstruct(&permuted, &den, den.schedule(), &kn, 2, 3).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let den = small_denoiser();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("den.bin");
    den.save(&path).unwrap();
    let back = Denoiser::load(&path).unwrap();
    assert_eq!(back, den);
    std::fs::write(&path, b"GRAPHLEAK-GNN-1\n{}").unwrap();
    assert!(Denoiser::load(&path).is_err());
}

proptest! {
    #[test]
    fn timestep_monotone_in_variance(a in 0.0f64..1.2, b in 0.0f64..1.2) {
        let s = NoiseSchedule::cosine(100).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(effective_timestep(lo, &s).t <= effective_timestep(hi, &s).t);
    }
}
