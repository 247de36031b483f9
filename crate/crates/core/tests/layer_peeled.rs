use ncfscil::etf::make_etf;
use ncfscil::layer_peeled::{
    check_optimality, offclass_probability_spread, solve_incremental, solve_incremental_traced, solve_session,
    FeatureBank, LayerPeeledProblem, SessionSpec, INIT_NORM,
};
use ncfscil::linalg::{dot, norm};
use ncfscil::losses::LossKind;
use ncfscil::rng::{self, streams};
use ncfscil::Problem;
use proptest::prelude::*;

fn problem(sessions: &[&[usize]], dim: usize, seed: u64, loss: LossKind) -> Problem {
    let specs: Vec<SessionSpec> = sessions
        .iter()
        .map(|s| SessionSpec { samples_per_class: s.to_vec() })
        .collect();
    let k = specs.iter().map(SessionSpec::num_classes).sum();
    LayerPeeledProblem::new(specs, make_etf(dim, k, seed).unwrap(), loss).unwrap()
}

fn reference_problem(loss: LossKind) -> Problem {
    problem(&[&[1, 3, 8, 2, 5, 4], &[7, 1], &[2, 6]], 16, 0, loss)
}

#[test]
fn dr_converges_sublinearly_at_small_steps() {
    let p = reference_problem(LossKind::DotRegression);
    let gaps: Vec<_> = [1000, 2000, 4000]
        .iter()
        .map(|&n| check_optimality(&solve_incremental(&p, n, 0.5, 0).unwrap(), &p).unwrap())
        .collect();
    for w in gaps.windows(2) {
        let self_ratio = w[1].max_self_gap / w[0].max_self_gap;
        let cross_ratio = w[1].max_cross_gap / w[0].max_cross_gap;
        // Doubling the steps halves the self gap and shrinks the cross gap by √2.
        assert!((0.45..0.55).contains(&self_ratio), "{self_ratio}");
        assert!((0.65..0.75).contains(&cross_ratio), "{cross_ratio}");
        assert!(w[1].max_norm_gap < 1e-12);
    }
}

#[test]
fn dr_certifies_at_large_steps() {
    let p = reference_problem(LossKind::DotRegression);
    let bank = solve_incremental(&p, 5000, 1e4, 0).unwrap();
    let r = check_optimality(&bank, &p).unwrap();
    assert!(r.max_norm_gap <= 1e-4 && r.max_self_gap <= 1e-4 && r.max_cross_gap <= 1e-4, "{r:?}");
    for (_, f) in bank.iter() {
        let d: Vec<f64> = f.vector.iter().zip(p.protos().column(f.class)).map(|(a, b)| a - b).collect();
        assert!(norm(&d) <= 1e-4);
    }
}

/// DR projected gradient descent, written out for a single feature.
fn reference_dr_path(m0: &[f64], w: &[f64], lr: f64, steps: usize) -> Vec<f64> {
    let mut m = m0.to_vec();
    for _ in 0..steps {
        let c = dot(&m, w);
        for (mi, wi) in m.iter_mut().zip(w) {
            *mi += lr * (1.0 - c) * wi;
        }
        let n = norm(&m);
        if n > 1.0 {
            m.iter_mut().for_each(|v| *v /= n);
        }
    }
    m
}

#[test]
fn dr_iterates_follow_the_reference_path_on_a_great_circle() {
    let p = problem(&[&[2, 1], &[3]], 6, 9, LossKind::DotRegression);
    let (steps, lr, seed) = (300, 0.5, 4);
    let bank = solve_incremental(&p, steps, lr, seed).unwrap();
    for (t, block) in bank.sessions.iter().enumerate() {
        let mut r = rng::seeded(seed, streams::LAYER_PEELED_INIT + t as u64);
        for f in block {
            let g: Vec<f64> = rng::gaussian_vec(&mut r, 6);
            let n = norm(&g);
            let m0: Vec<f64> = g.iter().map(|v| v * INIT_NORM / n).collect();
            let w = p.protos().column(f.class);
            let want = reference_dr_path(&m0, w, lr, steps);
            for (a, b) in f.vector.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            // The iterate stays in span{m0, ŵ}.
            let e1: Vec<f64> = w.to_vec();
            let c = dot(&m0, &e1);
            let perp: Vec<f64> = m0.iter().zip(&e1).map(|(a, b)| a - c * b).collect();
            let e2: Vec<f64> = perp.iter().map(|v| v / norm(&perp)).collect();
            let (a1, a2) = (dot(&f.vector, &e1), dot(&f.vector, &e2));
            let resid: Vec<f64> = (0..6).map(|i| f.vector[i] - a1 * e1[i] - a2 * e2[i]).collect();
            assert!(norm(&resid) < 1e-12);
        }
    }
}

#[test]
fn ce_two_session_example() {
    let p = problem(&[&[4, 4, 4], &[4, 4]], 8, 0, LossKind::CrossEntropy { scale: 1.0 });
    let bank = solve_incremental(&p, 20000, 1.0, 0).unwrap();
    let r = check_optimality(&bank, &p).unwrap();
    assert!(r.max_norm_gap <= 1e-2 && r.max_self_gap <= 1e-2 && r.max_cross_gap <= 1e-2, "{r:?}");
    assert!(r.max_kkt_residual < 1e-3, "{r:?}");
    assert!(offclass_probability_spread(&bank, &p) <= 1e-6);
}

#[test]
fn offclass_probabilities_are_uniform_at_the_optimum() {
    for k in [3usize, 5, 10] {
        let p = problem(&[&vec![1; k]], k + 1, 2, LossKind::CrossEntropy { scale: 4.0 });
        let spread = offclass_probability_spread(&FeatureBank::at_prototypes(&p), &p);
        assert!(spread <= 1e-12, "K={k}: {spread}");
    }
}

#[test]
fn earlier_sessions_are_never_touched() {
    let p = reference_problem(LossKind::CrossEntropy { scale: 1.0 });
    let mut bank = FeatureBank::default();
    let mut trace = Vec::new();
    solve_session(&p, &mut bank, 0, 200, 1.0, 3, &mut trace).unwrap();
    solve_session(&p, &mut bank, 1, 200, 1.0, 3, &mut trace).unwrap();
    let before = bank.sessions.clone();
    solve_session(&p, &mut bank, 2, 500, 1.0, 3, &mut trace).unwrap();
    assert_eq!(&bank.sessions[..2], &before[..]);
    // Re-solving session 1 replaces exactly that block.
    solve_session(&p, &mut bank, 1, 200, 1.0, 3, &mut trace).unwrap();
    assert_eq!(bank.sessions.len(), 2);
    assert_eq!(bank.sessions, before);
}

#[test]
fn class_size_does_not_move_the_optimum() {
    for n in [1usize, 50] {
        let p = problem(&[&[n, 2, 2], &[3]], 8, 1, LossKind::DotRegression);
        let bank = solve_incremental(&p, 3000, 1e4, 0).unwrap();
        let r = check_optimality(&bank, &p).unwrap();
        assert!(r.max_cross_gap <= 1e-4, "n={n}: {r:?}");
        let class0: Vec<&Vec<f64>> = bank.iter().filter(|(_, f)| f.class == 0).map(|(_, f)| &f.vector).collect();
        assert_eq!(class0.len(), n);
        for v in class0 {
            let d: Vec<f64> = v.iter().zip(p.protos().column(0)).map(|(a, b)| a - b).collect();
            assert!(norm(&d) <= 1e-4);
        }
    }
}

#[test]
fn trajectory_is_nonincreasing_at_stable_steps() {
    for (loss, lr) in [(LossKind::DotRegression, 0.5), (LossKind::CrossEntropy { scale: 1.0 }, 1.0)] {
        let p = reference_problem(loss);
        let out = solve_incremental_traced(&p, 2000, lr, 0).unwrap();
        for t in 0..3 {
            let curve: Vec<f64> = out.trajectory.iter().filter(|pt| pt.session == t).map(|pt| pt.mean_loss).collect();
            assert_eq!(curve.len(), 2000 / 100 + 1);
            for w in curve.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{loss:?} session {t}: {w:?}");
            }
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let p = reference_problem(LossKind::DotRegression);
    assert!(solve_incremental(&p, 0, 0.5, 0).is_err());
    assert!(solve_incremental(&p, 10, -1.0, 0).is_err());
    let specs = vec![SessionSpec { samples_per_class: vec![1, 0] }];
    assert!(LayerPeeledProblem::new(specs, make_etf::<f64>(4, 2, 0).unwrap(), LossKind::DotRegression).is_err());
    let specs = vec![SessionSpec { samples_per_class: vec![1, 1, 1] }];
    assert!(LayerPeeledProblem::new(specs, make_etf::<f64>(4, 2, 0).unwrap(), LossKind::DotRegression).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn features_stay_in_the_unit_ball(lr in 1e-3f64..1e3, seed in any::<u64>(), ce in any::<bool>()) {
        let loss = if ce { LossKind::CrossEntropy { scale: 1.0 } } else { LossKind::DotRegression };
        let p = problem(&[&[2, 1, 3], &[1, 2]], 7, seed % 11, loss);
        let bank = solve_incremental(&p, 50, lr, seed).unwrap();
        for (_, f) in bank.iter() {
            prop_assert!(norm(&f.vector) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn solve_is_deterministic(seed in any::<u64>()) {
        let p = problem(&[&[2, 2], &[1]], 5, 3, LossKind::CrossEntropy { scale: 1.0 });
        let a = solve_incremental_traced(&p, 120, 1.0, seed).unwrap();
        let b = solve_incremental_traced(&p, 120, 1.0, seed).unwrap();
        prop_assert_eq!(a.bank, b.bank);
        prop_assert_eq!(a.trajectory, b.trajectory);
    }
}
