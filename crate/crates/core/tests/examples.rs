#![allow(clippy::needless_range_loop)]

use ctmcmix::chain::{matrix_exponential, stationary_distribution};
use ctmcmix::cluster::{
    em_discrete, per_trail_chain, spectral_cluster, three_gram_stats, very_long_assignment, ClusterConfig,
    SpectralConfig,
};
use ctmcmix::estimators::{estimate_from_counts, estimate_jump_probs, recommend_tau_with, EstimatorConfig, TauRule};
use ctmcmix::metrics::{chain_recovery_error, clustering_error, median, recovery_error};
use ctmcmix::recover::{fit_mixture, mle_rate_matrix, FitMethod, MleConfig};
use ctmcmix::simulate::{
    count_bad_transitions, discretize, discretize_all, random_mixture, random_rate_matrix, sample_trails, stream_rng,
    GeneratorConfig,
};
use ctmcmix::{CtMixture, DiscreteChain, DiscreteTrail, DtMixture, RateMatrix, SoftAssignment, WeightedCounts};
use nalgebra::DMatrix;
use rand::Rng;

fn single(k: RateMatrix, start: &[f64]) -> CtMixture {
    let n = k.n();
    CtMixture::new(vec![k], DMatrix::from_row_slice(1, n, start)).unwrap()
}

/// Chain 0 lives on states 0..3 and chain 1 on states 3..6.
fn disjoint_mixture(seed: u64) -> CtMixture {
    let mut rng = stream_rng(seed, 0);
    let mut chains = Vec::new();
    for half in 0..2 {
        let mut k = DMatrix::zeros(6, 6);
        for y in 0..3 {
            for z in 0..3 {
                if y != z {
                    k[(3 * half + y, 3 * half + z)] = rng.random_range(0.3..1.5);
                }
            }
        }
        chains.push(RateMatrix::from_off_diagonal(k).unwrap());
    }
    let start = DMatrix::from_row_slice(2, 6, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]) / 6.0;
    CtMixture::new(chains, start).unwrap()
}

fn labelled(m: &CtMixture, r: usize, tau: f64, len: usize, seed: u64) -> (Vec<DiscreteTrail>, SoftAssignment) {
    let cont = sample_trails(m, r, (len - 1) as f64 * tau, seed).unwrap();
    let labels: Vec<usize> = cont.iter().map(|x| x.true_chain.unwrap()).collect();
    (discretize_all(&cont, tau, Some(len)).unwrap(), SoftAssignment::hard(&labels, m.l()).unwrap())
}

// simulate

#[test]
fn entry_time_into_absorber_is_exponential() {
    let a = 2.5;
    let m = single(RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-a, a, 0.0, 0.0])).unwrap(), &[1.0, 0.0]);
    let trails = sample_trails(&m, 100_000, 1e3, 1).unwrap();
    let mean = trails.iter().map(|x| x.events()[1].time).sum::<f64>() / trails.len() as f64;
    assert!((mean - 1.0 / a).abs() <= 0.02 / a, "{mean}");
}

#[test]
fn competing_exponentials_pick_by_rate() {
    let (a, b) = (0.7, 1.9);
    let k = DMatrix::from_row_slice(3, 3, &[-(a + b), a, b, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let m = single(RateMatrix::new(k).unwrap(), &[1.0, 0.0, 0.0]);
    let trails = sample_trails(&m, 100_000, 1e3, 2).unwrap();
    let freq = trails.iter().filter(|x| x.events()[1].state == 1).count() as f64 / trails.len() as f64;
    assert!((freq - a / (a + b)).abs() <= 0.01, "{freq}");
}

#[test]
fn mean_holding_time_matches_rate() {
    let k = RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-0.8, 0.8, 3.0, -3.0])).unwrap();
    let m = single(k, &[1.0, 0.0]);
    let x = &sample_trails(&m, 1, 170_000.0, 3).unwrap()[0];
    let ev = x.events();
    let holds: Vec<f64> = ev.windows(2).filter(|w| w[0].state == 0).map(|w| w[1].time - w[0].time).collect();
    assert!(holds.len() >= 100_000, "{}", holds.len());
    let mean = holds.iter().sum::<f64>() / holds.len() as f64;
    assert!((mean * 0.8 - 1.0).abs() <= 0.02, "{mean}");
}

#[test]
fn bad_transition_fraction_within_bound() {
    for (k_max, tau) in [(1.0, 0.1), (2.0, 0.2), (1.0, 0.5)] {
        let k = DMatrix::from_row_slice(
            3,
            3,
            &[-k_max, k_max / 2.0, k_max / 2.0, k_max / 2.0, -k_max, k_max / 2.0, k_max / 2.0, k_max / 2.0, -k_max],
        );
        let m = single(RateMatrix::new(k).unwrap(), &[1.0, 0.0, 0.0]);
        let intervals = 10_000;
        let x = &sample_trails(&m, 1, intervals as f64 * tau, 4).unwrap()[0];
        let bad = count_bad_transitions(x, tau, intervals + 1).unwrap();
        let frac = bad as f64 / intervals as f64;
        assert!(frac <= (k_max * tau).powi(2).min(1.0), "K_max {k_max} tau {tau}: {frac}");
    }
}

#[test]
fn start_cells_follow_start_matrix() {
    let m = random_mixture(&GeneratorConfig::new(3, 2, 5)).unwrap();
    let r = 100_000;
    let trails = sample_trails(&m, r, 0.01, 5).unwrap();
    let mut obs = [0.0; 6];
    for x in &trails {
        obs[x.true_chain.unwrap() * 3 + x.initial_state()] += 1.0;
    }
    let chi2: f64 = (0..6)
        .map(|c| {
            let e = r as f64 * m.start()[(c / 3, c % 3)];
            (obs[c] - e).powi(2) / e
        })
        .sum();
    // 0.999 quantile of chi-square with 5 degrees of freedom
    assert!(chi2 < 20.515, "{chi2}");
}

// estimators

#[test]
fn jump_probabilities_concentrate() {
    let k = DMatrix::from_row_slice(3, 3, &[-1.0, 0.3, 0.7, 0.5, -1.5, 1.0, 0.2, 0.2, -0.4]);
    let k = RateMatrix::new(k).unwrap();
    let m = single(k.clone(), &[1.0, 0.0, 0.0]);
    let x = &sample_trails(&m, 1, 250_000.0, 6).unwrap()[0];
    let ev = x.events();
    assert!(ev.len() > 100_000);
    // embedded jump chain: every jump is a transition between distinct states
    let states: Vec<usize> = ev.iter().map(|e| e.state).collect();
    let c = WeightedCounts::from_trails(&[DiscreteTrail::new(states, 1.0).unwrap()], &[1.0], 3).unwrap();
    for (y, p) in estimate_jump_probs(&c).into_iter().enumerate() {
        let p = p.unwrap();
        let truth = k.jump_probabilities(y).unwrap();
        let tv: f64 = 0.5 * (0..3).map(|z| (p[z] - truth[z]).abs()).sum::<f64>();
        assert!(tv <= 0.01, "state {y}: {tv}");
    }
}

#[test]
fn estimator_on_expected_counts() {
    for seed in 0..5 {
        let k = random_rate_matrix(4, 1.0, &[], &mut stream_rng(70 + seed, 0)).unwrap();
        let tau = 0.05 / k.max_exit_rate();
        let pi = stationary_distribution(&k).unwrap();
        let t = matrix_exponential(&k, tau).unwrap();
        let c = WeightedCounts::new(DMatrix::from_fn(4, 4, |y, z| 1e6 * pi[y] * t.prob(y, z))).unwrap();
        let est = estimate_from_counts(&c, tau, &EstimatorConfig::default()).unwrap();
        let err = chain_recovery_error(&k, &est.rate).unwrap();
        assert!(err <= 0.02, "seed {seed}: {err}");
    }
}

#[test]
fn estimator_error_shrinks_with_data() {
    let k = random_rate_matrix(3, 1.0, &[], &mut stream_rng(80, 0)).unwrap();
    let tau = recommend_tau_with(TauRule::Holding { eps_h: 0.01 }, 1.0, k.max_exit_rate()).unwrap();
    let pi = stationary_distribution(&k).unwrap();
    let m = single(k.clone(), &pi);
    let err_at = |transitions: usize| -> f64 {
        let errs: Vec<f64> = (0..10u64)
            .map(|s| {
                let x = &sample_trails(&m, 1, transitions as f64 * tau, 800 + s).unwrap()[0];
                let d = discretize(x, tau, transitions + 1).unwrap();
                let cfg = EstimatorConfig { min_count: 1.0, ..EstimatorConfig::default() };
                let est = ctmcmix::estimators::estimate_rate_matrix(&[d], &[1.0], tau, 3, &cfg).unwrap();
                chain_recovery_error(&k, &est.rate).unwrap()
            })
            .collect();
        median(&errs)
    };
    let e = [err_at(1_000), err_at(10_000), err_at(100_000)];
    assert!(e[0] >= e[1] && e[1] >= e[2], "{e:?}");
}

// cluster

#[test]
fn single_chain_em_is_pooled_count_mle() {
    let m = random_mixture(&GeneratorConfig::new(4, 1, 9)).unwrap();
    let (trails, _) = labelled(&m, 30, 0.3, 25, 9);
    let fit = em_discrete(&trails, 4, &ClusterConfig::new(1, 9), None).unwrap();
    let c = WeightedCounts::from_trails(&trails, &vec![1.0; trails.len()], 4).unwrap();
    for y in 0..4 {
        let row: f64 = (0..4).map(|z| c.get(y, z)).sum();
        if row == 0.0 {
            continue;
        }
        for z in 0..4 {
            assert!((fit.mixture.chain(0).prob(y, z) - c.get(y, z) / row).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_chains_stay_identical() {
    let t = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
    let chain = DiscreteChain::new(t, Some(0.2)).unwrap();
    let init = DtMixture::new(vec![chain.clone(), chain], DMatrix::from_element(2, 3, 1.0 / 6.0)).unwrap();
    let m = random_mixture(&GeneratorConfig::new(3, 2, 10)).unwrap();
    let (trails, _) = labelled(&m, 40, 0.2, 20, 10);
    let fit = em_discrete(&trails, 3, &ClusterConfig::new(2, 10), Some(&init)).unwrap();
    assert_eq!(fit.mixture.chain(0), fit.mixture.chain(1));
    for x in 0..trails.len() {
        assert!((fit.assignment.get(x, 0) - 0.5).abs() <= 1e-12);
    }
}

#[test]
fn disjoint_support_is_separated() {
    let m = disjoint_mixture(11);
    let (trails, gt) = labelled(&m, 200, 0.2, 50, 11);
    let em = em_discrete(&trails, 6, &ClusterConfig::new(2, 11), None).unwrap();
    assert!(clustering_error(&em.assignment, &gt).unwrap() <= 0.01);

    let (trails, gt) = labelled(&m, 60, 0.2, 100, 12);
    let ktt = spectral_cluster(&trails, 6, &SpectralConfig::new(2, 11)).unwrap();
    assert_eq!(clustering_error(&ktt.assignment, &gt).unwrap(), 0.0);
}

#[test]
fn spectral_single_chain_is_one_cluster() {
    let m = random_mixture(&GeneratorConfig::new(3, 1, 13)).unwrap();
    let (trails, _) = labelled(&m, 20, 0.2, 30, 13);
    let fit = spectral_cluster(&trails, 3, &SpectralConfig::new(1, 13)).unwrap();
    assert!(fit.assignment.labels().iter().all(|&c| c == 0));
}

#[test]
fn very_long_groups_far_apart_chains() {
    // three chains with pairwise distant transition rows
    let rows = [
        [0.9, 0.05, 0.05, 0.05, 0.9, 0.05, 0.05, 0.05, 0.9],
        [0.05, 0.9, 0.05, 0.05, 0.05, 0.9, 0.9, 0.05, 0.05],
        [0.05, 0.05, 0.9, 0.9, 0.05, 0.05, 0.05, 0.9, 0.05],
    ];
    let mut rng = stream_rng(14, 0);
    let mut trails = Vec::new();
    let mut labels = Vec::new();
    for (c, t) in rows.iter().enumerate() {
        for _ in 0..2 {
            let mut s = rng.random_range(0..3);
            let mut st = vec![s];
            for _ in 0..3000 {
                let u: f64 = rng.random();
                let row = &t[3 * s..3 * s + 3];
                s = if u < row[0] {
                    0
                } else if u < row[0] + row[1] {
                    1
                } else {
                    2
                };
                st.push(s);
            }
            trails.push(DiscreteTrail::new(st, 1.0).unwrap());
            labels.push(c);
        }
    }
    let fit = very_long_assignment(&trails, 3, 3).unwrap();
    let gt = SoftAssignment::hard(&labels, 3).unwrap();
    assert_eq!(clustering_error(&fit.assignment, &gt).unwrap(), 0.0);

    let one = very_long_assignment(&trails[..2], 3, 2).unwrap();
    assert_ne!(one.assignment.labels()[0], one.assignment.labels()[1]);
}

#[test]
fn very_long_single_group_pools_counts() {
    let m = random_mixture(&GeneratorConfig::new(3, 1, 15)).unwrap();
    let (trails, _) = labelled(&m, 4, 0.3, 200, 15);
    let fit = very_long_assignment(&trails, 3, 1).unwrap();
    let c = WeightedCounts::from_trails(&trails, &[1.0; 4], 3).unwrap();
    for y in 0..3 {
        let row: f64 = (0..3).map(|z| c.get(y, z)).sum();
        for z in 0..3 {
            assert!((fit.mixture.chain(0).prob(y, z) - c.get(y, z) / row).abs() <= 1e-12);
        }
    }
    let mut joined = Vec::new();
    for t in &trails {
        joined.extend_from_slice(t.states());
    }
    let joined = DiscreteTrail::new(joined, 0.3).unwrap();
    let direct = per_trail_chain(&joined, 3).unwrap();
    let grouped = very_long_assignment(std::slice::from_ref(&joined), 3, 1).unwrap();
    assert_eq!(&direct.chain, grouped.mixture.chain(0));
}

#[test]
fn three_grams_match_product_form() {
    let k = random_rate_matrix(3, 1.0, &[], &mut stream_rng(16, 0)).unwrap();
    let tau = 0.5;
    let pi = stationary_distribution(&k).unwrap();
    let m = single(k.clone(), &pi);
    let (trails, _) = labelled(&m, 10_000, tau, 102, 16);
    let stats = three_gram_stats(&trails, 3).unwrap();
    assert_eq!(stats.used, 1_000_000);
    let t = matrix_exponential(&k, tau).unwrap();
    let mut worst: f64 = 0.0;
    for x in 0..3 {
        for y in 0..3 {
            for z in 0..3 {
                let p = pi[x] * t.prob(x, y) * t.prob(y, z);
                worst = worst.max((stats.get(x, y, z) - p).abs());
            }
        }
    }
    assert!(worst <= 0.005, "{worst}");
}

// recover

#[test]
fn dem_recovers_disjoint_mixture() {
    let m = disjoint_mixture(17);
    let (trails, _) = labelled(&m, 200, 0.1, 100, 17);
    let method = FitMethod::Dem { cluster: ClusterConfig::new(2, 17), init: None };
    let fit = fit_mixture(&trails, 6, 2, &method, &MleConfig::default()).unwrap();
    let err = recovery_error(&m, &fit.mixture).unwrap();
    assert!(err <= 0.05, "{err}");
}

#[test]
fn single_chain_fit_is_pooled_mle() {
    let m = random_mixture(&GeneratorConfig::new(3, 1, 18)).unwrap();
    let (trails, _) = labelled(&m, 30, 0.2, 40, 18);
    let fit = fit_mixture(&trails, 3, 1, &FitMethod::Assignment(SoftAssignment::uniform(30, 1)), &MleConfig::default())
        .unwrap();
    let c = WeightedCounts::from_trails(&trails, &[1.0; 30], 3).unwrap();
    let direct = mle_rate_matrix(&c, 0.2, &MleConfig::default()).unwrap();
    assert!((fit.mixture.chain(0).matrix() - direct.rate.matrix()).abs().max() <= 1e-9);
}
