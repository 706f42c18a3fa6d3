use std::collections::BTreeMap;

use mps_core::gibbs::latents_consistent;
use mps_core::math::pearson;
use mps_core::postfit::{align_signs, crosstab_clusters};
use mps_core::{
    initial_state, log_joint_posterior, log_likelihood, run_chain, simulate_dataset, InitSpec,
    MpsConfig, ResponseMatrix, SimSpec,
};

fn small_problem(seed: u64) -> (ResponseMatrix, MpsConfig) {
    let (y, _) = simulate_dataset(&SimSpec::new(120, 30, 1, vec![0.6, 0.4], seed)).unwrap();
    let cfg = MpsConfig::new(1, 6).with_iterations(60, 30).with_seed(seed);
    (y, cfg)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn chain_is_identical_across_pool_sizes() {
    let (y, cfg) = small_problem(11);
    let run = || {
        let init = initial_state(&y, &cfg, &InitSpec::standard(cfg.truncation)).unwrap();
        run_chain(&y, &cfg, init).unwrap()
    };
    let one = in_pool(1, run);
    let four = in_pool(4, run);
    assert_eq!(one.map.state, four.map.state);
    assert_eq!(one.scalar_trace, four.scalar_trace);
}

#[test]
fn trace_and_map_invariants() {
    let (y, mut cfg) = small_problem(3);
    cfg.thin = 10;
    let init = initial_state(&y, &cfg, &InitSpec::standard(cfg.truncation)).unwrap();
    let out = run_chain(&y, &cfg, init).unwrap();

    assert_eq!(out.scalar_trace.len(), cfg.n_iter);
    for (t, row) in out.scalar_trace.iter().enumerate() {
        assert_eq!(row.iter, t);
        assert!(row.log_post.is_finite() && row.log_lik <= 0.0);
        assert!(row.alpha > 0.0 && row.occupied >= 1 && row.occupied <= cfg.truncation);
    }
    let best = out.scalar_trace[cfg.burn_in..]
        .iter()
        .map(|r| r.log_post)
        .fold(f64::MIN, f64::max);
    let map = &out.map;
    assert_eq!(map.state.log_post, best);
    assert!((log_joint_posterior(&y, &map.state, &cfg).unwrap() - best).abs() < 1e-6);
    assert!(latents_consistent(&y, &map.state));
    assert_eq!(map.occupancy.iter().sum::<usize>(), y.n_units());
    assert_eq!(out.thinned_assign.len(), cfg.n_iter / cfg.thin);
}

#[test]
fn pinned_units_never_move() {
    let (y, mut cfg) = small_problem(5);
    cfg.thin = 1;
    cfg.constraints = (0..20).map(|i| (i, 2)).collect::<BTreeMap<_, _>>();
    let init = initial_state(&y, &cfg, &InitSpec::standard(cfg.truncation)).unwrap();
    let out = run_chain(&y, &cfg, init).unwrap();
    for (_, assign) in &out.thinned_assign {
        assert!(assign[..20].iter().all(|&k| k == 2));
    }
}

#[test]
fn sign_alignment_preserves_likelihood() {
    let (y, cfg) = small_problem(8);
    let init = initial_state(&y, &cfg, &InitSpec::standard(cfg.truncation)).unwrap();
    let out = run_chain(&y, &cfg, init).unwrap();
    let state = &out.map.state;
    let occupancy = state.occupancy();
    let reference = (0..cfg.truncation).max_by_key(|&k| occupancy[k]).unwrap();
    let aligned = align_signs(state, reference).unwrap();
    let before = log_likelihood(&y, state).unwrap();
    let after = log_likelihood(&y, &aligned).unwrap();
    assert!((before - after).abs() < 1e-10);
    let b_ref = aligned.discriminations(reference);
    for k in (0..cfg.truncation).filter(|&k| occupancy[k] > 0) {
        if let Some(r) = pearson(&aligned.discriminations(k), &b_ref) {
            assert!(r >= -1e-12);
        }
    }
}

/// Fraction of units in the largest set of occupied clusters whose
/// discriminations pairwise correlate above 0.9 in absolute value.
fn coherent_share(state: &mps_core::MpsState) -> f64 {
    let occupancy = state.occupancy();
    let mut occupied: Vec<usize> = (0..state.truncation)
        .filter(|&k| occupancy[k] > 0)
        .collect();
    occupied.sort_by_key(|&k| std::cmp::Reverse(occupancy[k]));
    let mut group: Vec<usize> = Vec::new();
    for &k in &occupied {
        let fits = group.iter().all(|&g| {
            pearson(&state.discriminations(k), &state.discriminations(g))
                .is_some_and(|r| r.abs() > 0.9)
        });
        if fits {
            group.push(k);
        }
    }
    group.iter().map(|&k| occupancy[k]).sum::<usize>() as f64 / state.n_units as f64
}

#[test]
fn homogeneous_data_is_not_fragmented() {
    let (y, truth) = simulate_dataset(&SimSpec::new(200, 50, 1, vec![1.0], 17)).unwrap();
    let cfg = MpsConfig::new(1, 10)
        .with_iterations(500, 250)
        .with_seed(17);
    let init = initial_state(&y, &cfg, &InitSpec::kmeans(1)).unwrap();
    let out = run_chain(&y, &cfg, init).unwrap();
    let share = coherent_share(&out.map.state);
    assert!(share >= 0.95, "share {share}");
    let ct = crosstab_clusters(&out.map.state.assign, &truth.assign_true).unwrap();
    assert_eq!(ct.purity, 1.0);
}
