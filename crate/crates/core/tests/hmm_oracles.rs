use lbo_core::hmm::{fit_baum_welch, forward_loglik, BaumWelchConfig, GaussianHmm, MONOTONE_SLACK};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Sums the joint density over every state path.
fn brute_force_loglik(h: &GaussianHmm, w: &[f64]) -> f64 {
    let n = h.n_states();
    let paths = n.pow(w.len() as u32);
    let mut total = 0.0;
    for code in 0..paths {
        let mut c = code;
        let mut prev = None;
        let mut p = 1.0;
        for &x in w {
            let s = c % n;
            c /= n;
            p *= match prev {
                None => h.start()[s],
                Some(q) => h.trans_row(q)[s],
            };
            p *= h.log_emission(s, x).exp();
            prev = Some(s);
        }
        total += p;
    }
    total.ln()
}

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn random_hmm(rng: &mut ChaCha8Rng, n: usize) -> GaussianHmm {
    let start = random_stochastic(rng, n);
    let trans = (0..n).flat_map(|_| random_stochastic(rng, n)).collect();
    let means = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vars = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    GaussianHmm::new(start, trans, means, vars).unwrap()
}

#[test]
fn forward_matches_two_state_three_step_enumeration() {
    let h = GaussianHmm::new(
        vec![0.6, 0.4],
        vec![0.7, 0.3, 0.2, 0.8],
        vec![-1.0, 1.5],
        vec![0.5, 2.0],
    )
    .unwrap();
    let w = [0.2, -0.7, 1.9];
    assert!((forward_loglik(&h, &w) - brute_force_loglik(&h, &w)).abs() < 1e-8);
}

proptest! {
    #[test]
    fn forward_matches_path_enumeration(seed in any::<u64>(), n in 1usize..=3, t in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hmm(&mut rng, n);
        let w: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        prop_assert!((forward_loglik(&h, &w) - brute_force_loglik(&h, &w)).abs() < 1e-8);
    }

    #[test]
    fn state_relabeling_preserves_likelihood(seed in any::<u64>(), t in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hmm(&mut rng, 3);
        let w: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for perm in [[0, 2, 1], [1, 0, 2], [2, 0, 1]] {
            prop_assert!((forward_loglik(&h, &w) - forward_loglik(&h.permuted(&perm), &w)).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_is_monotone_and_stochastic(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..300)
            .map(|i| if (i / 40) % 2 == 0 { 0.3 } else { 0.7 } + 0.05 * normal.sample(&mut rng))
            .collect();
        let cfg = BaumWelchConfig { max_iters: 30, tol: 0.0 };
        if let Ok(fit) = fit_baum_welch(&data, n, seed, &cfg) {
            for w in fit.loglik_history.windows(2) {
                prop_assert!(w[1] >= w[0] - MONOTONE_SLACK);
            }
            let m = &fit.model;
            prop_assert!((m.start().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..n {
                prop_assert!((m.trans_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            prop_assert!(m.vars().iter().all(|&v| v >= 1e-6));
        }
    }
}

#[test]
fn own_model_explains_its_windows_better_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a_noise = Normal::new(0.0, 0.05).unwrap();
    let a: Vec<f64> = (0..1500)
        .map(|i| (i as f64 * 0.4).sin() * 0.3 + 0.5 + a_noise.sample(&mut rng))
        .collect();
    let b: Vec<f64> = (0..1500).map(|_| rng.gen_range(0.0..0.3)).collect();
    let cfg = BaumWelchConfig::default();
    let own = fit_baum_welch(&a, 3, 1, &cfg).unwrap().model;
    let other = fit_baum_welch(&b, 3, 1, &cfg).unwrap().model;
    let (mut s_own, mut s_other) = (0.0, 0.0);
    for w in a.chunks_exact(16) {
        s_own += forward_loglik(&own, w);
        s_other += forward_loglik(&other, w);
    }
    assert!(s_own > s_other);
}
