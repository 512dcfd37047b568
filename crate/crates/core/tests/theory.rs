use proptest::prelude::*;
use vids_core::rng;
use vids_core::theory::{
    bin_values, certify, coverage_report, kl, l1, remark_bound, required_l, required_m,
    rounded_target, type_class_probability, xi_bound, BinnedDistribution, Partition,
};

fn bd(p: &[f64]) -> BinnedDistribution {
    BinnedDistribution::new(p.to_vec()).unwrap()
}

/// Exact `P(Bin(n, p) <= k)`.
fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    let mut log_c = 0.0;
    let mut total = 0.0;
    for i in 0..=k {
        if i > 0 {
            log_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        total += (log_c + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp();
    }
    total
}

/// All count vectors of length `k` summing to `m`.
fn compositions(k: usize, m: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![m]];
    }
    (0..=m)
        .flat_map(|c| {
            compositions(k - 1, m - c).into_iter().map(move |mut rest| {
                rest.insert(0, c);
                rest
            })
        })
        .collect()
}

#[test]
fn uniform_draws_fill_equal_bins_evenly() {
    let mut r = rng::rng_from_seed(8);
    let xs: Vec<f64> = (0..1000)
        .map(|_| rand::Rng::random::<f64>(&mut r))
        .collect();
    let p = bin_values(&xs, &Partition::equal_width(0.0, 1.0, 4).unwrap()).unwrap();
    assert!(
        p.probs().iter().all(|&q| (0.2..=0.3).contains(&q)),
        "{:?}",
        p.probs()
    );
}

#[test]
fn certify_matches_exact_binomial_oracle() {
    let u = bd(&[0.5, 0.5]);
    let per_sample: f64 = 6.0 / 16.0;
    let expected = 1.0 - (1.0 - per_sample).powi(10);
    assert!((expected - 0.9909).abs() < 1e-4);
    let rate = certify(&u, &u, 4, 10, 0.0, 10_000, &mut rng::rng_from_seed(1)).unwrap();
    assert!((rate - expected).abs() <= 0.01, "{rate} vs {expected}");
}

#[test]
fn required_environments_meet_the_guarantee() {
    let u = bd(&[0.5, 0.5]);
    let (eps, alpha) = (0.5, 0.05);
    let m = required_m(eps, 2).unwrap();
    assert_eq!(m, 4);
    let q = rounded_target(&u, m).unwrap();
    let xi = xi_bound(&q, &u, m, 2).unwrap();
    assert!((xi - 0.04).abs() < 1e-15);
    let l = required_l(xi, alpha).unwrap();
    assert_eq!(l, 74);
    let trials = 10_000u64;
    let rate = certify(
        &u,
        &u,
        m,
        l,
        eps,
        trials as usize,
        &mut rng::rng_from_seed(2),
    )
    .unwrap();
    // One-sided test of H0: true rate < 1 - α; reject at 99% when the
    // binomial tail below the observed count is at least 0.99.
    let successes = (rate * trials as f64).round() as u64;
    assert!(
        binomial_cdf(successes - 1, trials, 1.0 - alpha) >= 0.99,
        "rate {rate}"
    );
}

#[test]
fn guarantee_holds_for_skewed_targets() {
    let p = bd(&[0.5, 0.3, 0.2]);
    let p_star = bd(&[0.2, 0.3, 0.5]);
    let report = coverage_report(&p, &p_star, 1.0, 0.1, 2000, 4).unwrap();
    let row = report.raw.unwrap();
    assert!(row.success_rate >= 0.9 - 0.02, "{row:?}");
}

#[test]
fn xi_never_exceeds_the_exact_type_probability() {
    let ps: Vec<Vec<f64>> = vec![
        vec![1.0],
        vec![0.5, 0.5],
        vec![0.9, 0.1],
        vec![0.3, 0.7],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        vec![0.6, 0.3, 0.1],
        vec![0.05, 0.15, 0.8],
    ];
    let mut checked = 0;
    for probs in &ps {
        let mut fixed = probs.clone();
        let s: f64 = fixed.iter().sum();
        fixed[0] += 1.0 - s;
        let p = bd(&fixed);
        let k = p.k();
        for m in 1..=8 {
            for counts in compositions(k, m) {
                let q = bd(&counts
                    .iter()
                    .map(|&c| c as f64 / m as f64)
                    .collect::<Vec<_>>());
                let exact = type_class_probability(&q, &p, m).unwrap();
                let xi = xi_bound(&q, &p, m, k).unwrap();
                assert!(
                    xi <= exact * (1.0 + 1e-12),
                    "k={k} m={m} q={counts:?}: {xi} > {exact}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 300);
}

#[test]
fn type_probabilities_sum_to_one() {
    let p = bd(&[0.6, 0.3, 0.1]);
    for m in 1..=6 {
        let total: f64 = compositions(3, m)
            .into_iter()
            .map(|c| {
                let q = bd(&c.iter().map(|&v| v as f64 / m as f64).collect::<Vec<_>>());
                type_class_probability(&q, &p, m).unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn remark_bound_examples() {
    let l = required_l(0.04, 0.05).unwrap() as f64;
    let bound = remark_bound(0.5, 2, 0.05, 0.0);
    assert!((bound - 35.0 * 20f64.ln()).abs() < 1e-9);
    assert!(bound >= l);
    assert!(remark_bound(0.5, 2, 1.0 - 1e-12, 0.0) < 1e-9);
}

#[test]
fn remark_bound_dominates_required_l_on_a_sweep() {
    // k = 1 is excluded: the closed form assumes m = 2(k-1)/ε, which is 0 there.
    let targets = [
        vec![0.5, 0.5],
        vec![0.3, 0.7],
        vec![0.2, 0.3, 0.5],
        vec![0.1, 0.2, 0.3, 0.4],
    ];
    for t in &targets {
        let p_star = bd(t);
        let k = p_star.k();
        let p = BinnedDistribution::from_weights(&vec![1.0; k]).unwrap();
        for &eps in &[0.25, 0.5, 1.0, 1.5] {
            for &alpha in &[0.01, 0.05, 0.2] {
                let m = required_m(eps, k).unwrap();
                let q = rounded_target(&p_star, m).unwrap();
                let d = kl(&q, &p).unwrap();
                let xi = xi_bound(&q, &p, m, k).unwrap();
                if xi >= 1.0 {
                    continue;
                }
                let needed = required_l(xi, alpha).unwrap() as f64;
                let bound = remark_bound(eps, k, alpha, d);
                assert!(
                    bound >= needed,
                    "k={k} ε={eps} α={alpha}: {bound} < {needed}"
                );
            }
        }
    }
}

#[test]
fn required_l_decreases_in_xi() {
    let mut prev = u64::MAX;
    for i in 1..100 {
        let l = required_l(i as f64 / 100.0, 0.05).unwrap();
        assert!(l <= prev);
        prev = l;
    }
}

#[test]
fn certify_is_monotone_in_l_and_epsilon() {
    let p = bd(&[0.6, 0.4]);
    let p_star = bd(&[0.3, 0.7]);
    let rate = |l: u64, eps: f64| {
        certify(&p, &p_star, 6, l, eps, 3000, &mut rng::rng_from_seed(3)).unwrap()
    };
    let by_l: Vec<f64> = [1, 3, 10, 30].iter().map(|&l| rate(l, 0.4)).collect();
    assert!(by_l.windows(2).all(|w| w[0] <= w[1]), "{by_l:?}");
    let by_eps: Vec<f64> = [0.1, 0.4, 0.8, 2.0].iter().map(|&e| rate(5, e)).collect();
    assert!(by_eps.windows(2).all(|w| w[0] <= w[1]), "{by_eps:?}");
    assert_eq!(*by_eps.last().unwrap(), 1.0);
}

#[test]
fn reduced_mode_is_reported() {
    let p = bd(&[0.5, 0.5, 0.0]);
    let p_star = bd(&[0.45, 0.45, 0.1]);
    let report = coverage_report(&p, &p_star, 1.0, 0.05, 500, 1).unwrap();
    assert!(report.raw.is_none());
    let (row, eps_prime) = report.reduced.unwrap();
    assert!((eps_prime - 0.2).abs() < 1e-12);
    assert_eq!(row.k, 2);
    assert!((row.epsilon - 0.8).abs() < 1e-12);
    assert!(coverage_report(&bd(&[1.0, 0.0]), &bd(&[0.0, 1.0]), 1.0, 0.05, 10, 1).is_err());
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| {
            let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let r: f64 = p.iter().sum();
            p[0] += 1.0 - r;
            p.iter_mut().for_each(|v| *v = v.max(0.0));
            p
        })
    })
}

proptest! {
    #[test]
    fn rounded_target_is_close(p in (1usize..6).prop_flat_map(simplex), m in 1usize..50) {
        let p_star = BinnedDistribution::from_weights(&p).unwrap();
        let k = p_star.k();
        let q = rounded_target(&p_star, m).unwrap();
        prop_assert!(l1(q.probs(), p_star.probs()) <= 2.0 * (k - 1) as f64 / m as f64 + 1e-12);
        prop_assert!(q.probs().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn xi_is_at_most_one(p in simplex(3), m in 1usize..20) {
        let p = BinnedDistribution::from_weights(&p.iter().map(|v| v + 0.01).collect::<Vec<_>>()).unwrap();
        let q = rounded_target(&p, m).unwrap();
        prop_assert!(xi_bound(&q, &p, m, 3).unwrap() <= 1.0);
    }
}
