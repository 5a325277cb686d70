use graphleak::adversary::*;
use graphleak::dp::{calibrate, DpSpec, Mechanism};
use proptest::prelude::*;

/// Averages the SS/SU/UU pair counts over every subset of size m.
fn enumerate(n: usize, m: usize) -> (f64, f64, f64) {
    let (mut ss, mut su, mut uu, mut subsets) = (0u64, 0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        subsets += 1;
        for i in 0..n {
            for j in i + 1..n {
                match ((mask >> i) & 1, (mask >> j) & 1) {
                    (1, 1) => ss += 1,
                    (0, 0) => uu += 1,
                    _ => su += 1,
                }
            }
        }
    }
    let total = (subsets * (n * (n - 1) / 2) as u64) as f64;
    (ss as f64 / total, su as f64 / total, uu as f64 / total)
}

#[test]
fn partition_probs_match_enumeration() {
    for n in 2..=8 {
        for m in 0..=n {
            let p = partition_probs(n, m as f64 / n as f64).unwrap();
            let (ss, su, uu) = enumerate(n, m);
            assert!((p.ss - ss).abs() < 1e-12 && (p.su - su).abs() < 1e-12 && (p.uu - uu).abs() < 1e-12, "n={n} m={m}");
            assert!((p.ss + p.su + p.uu - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn bracket_width_example() {
    let b = bracket(0.534, 0.774, 0.5).unwrap();
    assert!((b.width - 0.12).abs() < 1e-12);
    assert!((b.upper - b.lower - b.width).abs() < 1e-12);
    for rho in [0.0, 1.0] {
        let e = bracket(0.534, 0.774, rho).unwrap();
        assert_eq!(e.lower, e.upper);
    }
    assert_eq!(bracket(0.534, 0.774, 0.0).unwrap().lower, 0.534);
    assert!((bracket(0.534, 0.774, 1.0).unwrap().upper - 0.774).abs() < 1e-15);
    assert!(bracket(0.8, 0.7, 0.5).is_err());
}

#[test]
fn weighted_bounds_hand_arithmetic() {
    let p = partition_probs(4, 0.5).unwrap();
    let w = weighted_bounds(0.5, 0.6, 0.9, &p, 0.0, C_DEG, None).unwrap();
    assert!((w.upper - (0.9 / 6.0 + 0.6 * 2.0 / 3.0 + 0.5 / 6.0)).abs() < 1e-12);
    assert!((w.lower - (0.9 / 6.0 + 0.5 * 5.0 / 6.0)).abs() < 1e-12);
    // κ lowers only the SS term.
    let k = weighted_bounds(0.5, 0.6, 0.9, &p, 1.0, C_DEG, None).unwrap();
    assert!((w.lower - k.lower - C_DEG / 6.0).abs() < 1e-12);
    assert_eq!(k.upper, w.upper);
    // Δ = 0 refines nothing beyond chance in the SU slot.
    let r = weighted_bounds(0.5, 0.6, 0.9, &p, 0.0, C_DEG, Some((0.0, 1.0))).unwrap();
    assert!((r.refined_lower.unwrap() - w.lower).abs() < 1e-12);
    assert!(weighted_bounds(0.7, 0.6, 0.9, &p, 0.0, C_DEG, None).is_err());
}

#[test]
fn half_edge_example() {
    assert!((half_edge_auc(1.0, 1.0) - std_normal_cdf(1.0 / 2f64.sqrt())).abs() < 1e-15);
    assert!((half_edge_auc(1.0, 1.0) - 0.7602).abs() < 1e-4);
}

#[test]
fn knowledge_beliefs() {
    let spec = calibrate(Mechanism::Gaussian, 2.0, 1e-5, 10.0, 1.0).unwrap();
    let k = AdversaryKnowledge::with_error(&spec, 10, 0.5, -1.0, vec![3, 1, 3]);
    assert_eq!(k.observed, vec![1, 3]);
    assert_eq!(k.epsilon_hat, 1.0);
    assert!((k.rho() - 0.2).abs() < 1e-15);
    assert!(k.observes(3) && !k.observes(2));
    let wrong = calibrate(Mechanism::Gaussian, 1.0, 1e-5, 10.0, 1.0).unwrap();
    assert!((k.believed_sigma2().unwrap() - wrong.variance()).abs() < 1e-12);
    // κ = 1 with the minus sign leaves no usable belief.
    assert_eq!(AdversaryKnowledge::with_error(&spec, 10, 1.0, -1.0, vec![]).believed_sigma2(), None);
    assert_eq!(AdversaryKnowledge::exact(&DpSpec::no_noise(), 4).believed_sigma2(), Some(0.0));
    let bad = AdversaryKnowledge { observed: vec![10], ..k.clone() };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn bracket_geometry(r1 in 0.0f64..1.0, span in 0.0f64..1.0, rho in 0.0f64..=1.0) {
        let r3 = r1 + (1.0 - r1) * span;
        let b = bracket(r1, r3, rho).unwrap();
        prop_assert!(b.lower <= b.upper + 1e-15);
        let mid = bracket(r1, r3, 0.5).unwrap();
        prop_assert!(b.width <= mid.width + 1e-15);
        prop_assert!((mid.width - (r3 - r1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_upper_endpoints(r1 in 0.0f64..0.5, r3 in 0.5f64..1.0, n in 2usize..50) {
        let rh = 0.5 * (r1 + r3);
        let one = weighted_bounds(r1, rh, r3, &partition_probs(n, 1.0).unwrap(), 0.0, C_DEG, None).unwrap();
        let zero = weighted_bounds(r1, rh, r3, &partition_probs(n, 0.0).unwrap(), 0.0, C_DEG, None).unwrap();
        prop_assert!((one.upper - r3).abs() < 1e-12);
        prop_assert!((zero.upper - r1).abs() < 1e-12);
    }
}
