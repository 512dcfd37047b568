use vids_core::model::{ConditioningSet, Task};
use vids_core::nn::{self, check_gradients};
use vids_core::posterior::{
    self, elbo_single, elbo_sum, elbo_sum_with_noise, ElboConfig, ElboNoise, ElboObjective,
    InferenceNet, KlEstimator, NoiseSource, VariationalParams,
};
use vids_core::prior::PriorConfig;
use vids_core::rng;

fn random_set(seed: u64, k: usize, n: usize, task: Task) -> ConditioningSet {
    let mut r = rng::rng_from_seed(seed);
    let embeds: Vec<Vec<f64>> = (0..n)
        .map(|_| rng::standard_normal_vec(&mut r, k))
        .collect();
    let y = (0..n)
        .map(|i| match task {
            Task::Classification => (i % 2) as f64,
            Task::Regression => rng::standard_normal(&mut r),
        })
        .collect();
    ConditioningSet::new(embeds, y, task).unwrap()
}

fn random_h(seed: u64, k: usize) -> InferenceNet {
    let mut r = rng::rng_from_seed(seed ^ 0xabcd);
    let mut h = InferenceNet::init(k, &[6, 5], None, -0.5, &mut r).unwrap();
    // Break the zero output layer so every parameter carries gradient.
    let last = h.net().layers().len() - 1;
    for w in h.net_mut().layer_mut(last).weights_mut() {
        *w = 0.3 * rng::standard_normal(&mut r);
    }
    h
}

fn class_cfg() -> ElboConfig {
    ElboConfig::new(0.7, PriorConfig::classification()).unwrap()
}

#[test]
fn full_elbo_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let k = 2 + (seed as usize % 3);
        let n = 3 + seed as usize;
        let m = 1 + (seed as usize % 3);
        let set = random_set(seed, k, n, Task::Classification);
        let h = random_h(seed, k);
        let mut r = rng::rng_from_seed(seed + 100);
        let tests: Vec<Vec<f64>> = (0..m)
            .map(|_| rng::standard_normal_vec(&mut r, k))
            .collect();
        let cfg = class_cfg();
        let mut src = NoiseSource::from_seeds(seed, seed + 1);
        let noise: Vec<ElboNoise> = (0..m)
            .map(|_| src.draw(k + 1, &cfg.prior).unwrap())
            .collect();
        let obj = ElboObjective {
            set: &set,
            tests: &tests,
            noise: &noise,
            cfg: &cfg,
        };
        let check = check_gradients(h.net(), &obj.inputs(), &obj, 1e-5).unwrap();
        assert!(check.max_rel_error <= 1e-4, "seed {seed}: {check:?}");
        assert!(check.checked > check.skipped);
    }
}

#[test]
fn analytic_entropy_gradient_matches_finite_differences() {
    let set = random_set(9, 3, 6, Task::Regression);
    let h = random_h(9, 3);
    let tests = vec![vec![0.2, -0.4, 1.0]];
    let mut cfg = ElboConfig::new(0.5, PriorConfig::regression(-3.0, 3.0, 16).unwrap()).unwrap();
    cfg.kl = KlEstimator::AnalyticEntropy;
    let mut src = NoiseSource::from_seeds(1, 2);
    let noise = vec![src.draw(4, &cfg.prior).unwrap()];
    let obj = ElboObjective {
        set: &set,
        tests: &tests,
        noise: &noise,
        cfg: &cfg,
    };
    let check = check_gradients(h.net(), &obj.inputs(), &obj, 1e-5).unwrap();
    assert!(check.max_rel_error <= 1e-4, "{check:?}");
}

#[test]
fn elbo_falls_as_posterior_collapses() {
    let set = random_set(3, 2, 5, Task::Classification);
    let cfg = class_cfg();
    let test = vec![0.1, 0.2];
    let noise = ElboNoise {
        eps: vec![0.3, -0.2, 0.5],
        prior_draws: vec![],
    };
    let values: Vec<f64> = [0.0, -2.0, -10.0]
        .iter()
        .map(|&ls| {
            let mut raw = vec![0.1, -0.2, 0.05];
            raw.extend([ls; 3]);
            // Bypass the clamp at -10 by evaluating the term directly.
            let phi = VariationalParams::new(raw[..3].to_vec(), raw[3..].to_vec()).unwrap();
            let theta = posterior::sample_theta(&phi, &noise.eps).unwrap();
            let (ll, _) = set.log_lik_sum(&theta);
            let e = vids_core::prior::energy_from_draws(
                &vids_core::model::HeadParams::new(theta.clone()).unwrap(),
                set.embeds(),
                &test,
                &[],
                &cfg.prior,
            )
            .unwrap();
            ll - cfg.lambda * (posterior::log_q(&theta, &phi).unwrap() - e)
        })
        .collect();
    assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
}

#[test]
fn elbo_is_deterministic_under_fixed_seed() {
    let set = random_set(4, 3, 7, Task::Regression);
    let h = random_h(4, 3);
    let cfg = ElboConfig::new(0.1, PriorConfig::regression(-4.0, 4.0, 32).unwrap()).unwrap();
    let test = vec![0.5, 0.5, -1.0];
    let a = elbo_single(&h, &set, &test, &cfg, &mut NoiseSource::from_seeds(7, 8)).unwrap();
    let b = elbo_single(&h, &set, &test, &cfg, &mut NoiseSource::from_seeds(7, 8)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn elbo_sum_composition() {
    let set = random_set(5, 2, 4, Task::Classification);
    let h = random_h(5, 2);
    let cfg = class_cfg();
    let t1 = vec![0.3, -0.1];
    let t2 = vec![-1.0, 2.0];

    let single = elbo_single(&h, &set, &t1, &cfg, &mut NoiseSource::from_seeds(1, 2)).unwrap();
    let one = elbo_sum(
        &h,
        &set,
        std::slice::from_ref(&t1),
        &cfg,
        &mut NoiseSource::from_seeds(1, 2),
    )
    .unwrap();
    assert_eq!(single, one);

    let noise = NoiseSource::from_seeds(3, 4).draw(3, &cfg.prior).unwrap();
    let once = elbo_sum_with_noise(
        &h,
        &set,
        std::slice::from_ref(&t1),
        std::slice::from_ref(&noise),
        &cfg,
    )
    .unwrap();
    let twice = elbo_sum_with_noise(
        &h,
        &set,
        &[t1.clone(), t1.clone()],
        &[noise.clone(), noise.clone()],
        &cfg,
    )
    .unwrap();
    assert!((twice - 2.0 * once).abs() <= 1e-12 * once.abs().max(1.0));

    let n2 = NoiseSource::from_seeds(5, 6).draw(3, &cfg.prior).unwrap();
    let fwd = elbo_sum_with_noise(
        &h,
        &set,
        &[t1.clone(), t2.clone()],
        &[noise.clone(), n2.clone()],
        &cfg,
    )
    .unwrap();
    let rev = elbo_sum_with_noise(&h, &set, &[t2, t1], &[n2, noise], &cfg).unwrap();
    assert!((fwd - rev).abs() <= 1e-12 * fwd.abs().max(1.0));

    assert!(elbo_sum(&h, &set, &[], &cfg, &mut NoiseSource::from_seeds(0, 0)).is_err());
}

#[test]
fn inputs_are_positional() {
    let h = random_h(11, 3);
    let a = vec![0.1, 0.5, -0.3];
    let b = vec![1.2, -0.7, 0.4];
    let p1 = h.infer_phi(&a, &b).unwrap();
    let p2 = h.infer_phi(&b, &a).unwrap();
    assert_ne!(p1, p2);
    assert_eq!(h.infer_phi(&a, &b).unwrap(), p1);
    assert!(h.infer_phi(&a, &[1.0]).is_err());
}

#[test]
fn log_q_integrates_to_one() {
    let phi = VariationalParams::new(vec![0.4], vec![-0.3]).unwrap();
    let (lo, hi, n) = (-10.0, 10.0, 200_000);
    let step = (hi - lo) / n as f64;
    let integral: f64 = (0..n)
        .map(|i| {
            let t = lo + (i as f64 + 0.5) * step;
            posterior::log_q(&[t], &phi).unwrap().exp() * step
        })
        .sum();
    assert!((integral - 1.0).abs() < 0.02, "{integral}");
}

#[test]
fn monte_carlo_entropy_matches_closed_form() {
    let phi = VariationalParams::new(vec![0.0], vec![0.0]).unwrap();
    assert!((posterior::entropy(&phi) - 1.418_938_533_204_672_7).abs() < 1e-12);
    let mut r = rng::rng_from_seed(77);
    let draws = 100_000;
    let mc: f64 = (0..draws)
        .map(|_| {
            let eps = [rng::standard_normal(&mut r)];
            -posterior::log_q(&posterior::sample_theta(&phi, &eps).unwrap(), &phi).unwrap()
        })
        .sum::<f64>()
        / draws as f64;
    assert!((mc / 1.418_938_533_204_672_7 - 1.0).abs() < 0.02, "{mc}");
}

#[test]
fn gradient_ascent_on_elbo_improves_it() {
    let set = random_set(21, 2, 8, Task::Classification);
    let mut h = random_h(21, 2);
    let cfg = class_cfg();
    let tests = vec![vec![0.2, 0.1], vec![-0.5, 0.9]];
    let mut src = NoiseSource::from_seeds(1, 1);
    let noise: Vec<ElboNoise> = tests
        .iter()
        .map(|_| src.draw(3, &cfg.prior).unwrap())
        .collect();
    let obj = ElboObjective {
        set: &set,
        tests: &tests,
        noise: &noise,
        cfg: &cfg,
    };
    let (before, tape) = nn::grad(h.net(), &obj.inputs(), &obj).unwrap();
    nn::sgd_step(h.net_mut(), &tape, 1e-3, nn::Direction::Ascent).unwrap();
    let (after, _) = nn::grad(h.net(), &obj.inputs(), &obj).unwrap();
    assert!(after > before);
}
