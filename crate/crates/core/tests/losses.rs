use ncfscil::etf::make_etf;
use ncfscil::linalg::{dot, norm};
use ncfscil::losses::{dr_loss, eval_raw, normalize, normalize_backward, LossKind};
use ncfscil::rng;
use proptest::prelude::*;

fn raw_value(kind: LossKind, mu: &[f64], e: &ncfscil::Etf, label: usize) -> f64 {
    eval_raw(kind, mu, e, label).unwrap().value
}

/// Central differences of the loss through normalization, with the relative
/// error taken over the whole gradient vector.
fn fd_relative_error(kind: LossKind, mu: &[f64], e: &ncfscil::Etf, label: usize, h: f64) -> f64 {
    let analytic = eval_raw(kind, mu, e, label).unwrap().grad_wrt_raw.unwrap();
    let at = |i: usize, t: f64| {
        let mut p = mu.to_vec();
        p[i] += t;
        raw_value(kind, &p, e, label)
    };
    let fd: Vec<f64> = (0..mu.len()).map(|i| (at(i, h) - at(i, -h)) / (2.0 * h)).collect();
    let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&fd)).max(1e-12)
}

/// `μ ~ N(0, I_d)`.
fn draw(d: usize, seed: u64) -> Vec<f64> {
    rng::gaussian_vec(&mut rng::seeded(seed, 7), d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dr_gradient_matches_finite_differences(seed in any::<u64>(), label in 0usize..10, big in any::<bool>()) {
        let (d, k) = if big { (16, 10) } else { (8, 5) };
        let e = make_etf::<f64>(d, k, seed % 17).unwrap();
        let mu = draw(d, seed);
        let err = fd_relative_error(LossKind::DotRegression, &mu, &e, label % k, 1e-5);
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn ce_gradient_matches_finite_differences(seed in any::<u64>(), label in 0usize..10, big in any::<bool>()) {
        let (d, k) = if big { (16, 10) } else { (8, 5) };
        let e = make_etf::<f64>(d, k, seed % 17).unwrap();
        let mu = draw(d, seed);
        let err = fd_relative_error(LossKind::CrossEntropy { scale: 16.0 }, &mu, &e, label % k, 1e-5);
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn raw_gradient_is_orthogonal_to_the_feature(seed in any::<u64>(), label in 0usize..5, ce in any::<bool>()) {
        let e = make_etf::<f64>(8, 5, 1).unwrap();
        let mu = draw(8, seed);
        let kind = if ce { LossKind::CrossEntropy { scale: 16.0 } } else { LossKind::DotRegression };
        let g = eval_raw(kind, &mu, &e, label).unwrap().grad_wrt_raw.unwrap();
        prop_assert!(dot(&g, &mu).abs() <= 1e-10 * norm(&g).max(1.0) * norm(&mu));
    }

    #[test]
    fn dr_closed_form(seed in any::<u64>(), label in 0usize..10) {
        let e = make_etf::<f64>(16, 10, 4).unwrap();
        let (mu_hat, _) = normalize(&draw(16, seed)).unwrap();
        let w = e.column(label);
        let c = dot(w, &mu_hat);
        let eval = dr_loss(&mu_hat, w).unwrap();
        prop_assert!((eval.value - 0.5 * (c - 1.0) * (c - 1.0)).abs() <= 1e-12);
        for (g, wi) in eval.grad_wrt_normalized.iter().zip(w) {
            prop_assert!((g + (1.0 - c) * wi).abs() <= 1e-12);
        }
    }

    #[test]
    fn dr_is_minimized_on_the_prototype(seed in any::<u64>(), label in 0usize..10) {
        let e = make_etf::<f64>(16, 10, 2).unwrap();
        let at = dr_loss(e.column(label), e.column(label)).unwrap();
        prop_assert!(at.value.abs() <= 1e-15);
        let (mu_hat, _) = normalize(&draw(16, seed)).unwrap();
        prop_assert!(dr_loss(&mu_hat, e.column(label)).unwrap().value >= at.value);
    }

    #[test]
    fn ce_is_positive(seed in any::<u64>(), label in 0usize..10, scale in 0.1f64..32.0) {
        let e = make_etf::<f64>(16, 10, 2).unwrap();
        let v = raw_value(LossKind::CrossEntropy { scale }, &draw(16, seed), &e, label);
        prop_assert!(v > 0.0);
    }
}

#[test]
fn normalize_backward_matches_finite_differences() {
    for seed in 0..20 {
        let mut r = rng::seeded(seed, 11);
        let mu: Vec<f64> = rng::gaussian_vec(&mut r, 6);
        let up: Vec<f64> = rng::gaussian_vec(&mut r, 6);
        // f(μ) = upᵀ μ̂
        let f = |m: &[f64]| dot(&up, &normalize(m).unwrap().0);
        let got = normalize_backward(&mu, &up).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut p = mu.clone();
            let mut m = mu.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((got[i] - fd).abs() <= 1e-6, "seed {seed} coord {i}: {} vs {fd}", got[i]);
        }
    }
}

#[test]
fn scale_of_the_raw_feature_does_not_change_the_loss() {
    let e = make_etf::<f64>(8, 5, 0).unwrap();
    let mu = draw(8, 3);
    let big: Vec<f64> = mu.iter().map(|v| v * 1e3).collect();
    for kind in [LossKind::DotRegression, LossKind::CrossEntropy { scale: 16.0 }] {
        let a = eval_raw(kind, &mu, &e, 2).unwrap();
        let b = eval_raw(kind, &big, &e, 2).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        // The raw gradient shrinks by the same factor the feature grew.
        let (ga, gb) = (a.grad_wrt_raw.unwrap(), b.grad_wrt_raw.unwrap());
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - 1e3 * y).abs() < 1e-10);
        }
    }
}

#[test]
fn saturated_cross_entropy_keeps_relative_precision() {
    // z = (40, 0, 0): loss = ln(1 + 2e^-40) = 2e^-40 to first order.
    let (v, g) = ncfscil::losses::softmax_cross_entropy(&[40.0f64, 0.0, 0.0], 0).unwrap();
    let want = 2.0 * (-40.0f64).exp();
    assert!((v - want).abs() <= 1e-12 * want);
    assert!((g[0] + want).abs() <= 1e-12 * want);
    let (v, _) = ncfscil::losses::softmax_cross_entropy(&[0.0f64, 40.0, 0.0], 0).unwrap();
    assert!((v - 40.0).abs() < 1e-12);
}
