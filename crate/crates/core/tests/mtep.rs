mod common;

use common::{constant_trace, default_trace, orthogonal_channels};
use comp_energy::model::NetworkConfig;
use comp_energy::mtep::{
    self, plan_cap, plan_interval, planning_objective, subgrad_rt, PlannerParams, RtHistory,
};
use comp_energy::scenario::{generate_trace, ScenarioParams, Trace};
use comp_energy::twet::{self, TwetParams};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn history_of(trace: &Trace, upto: usize) -> RtHistory {
    let mut h = RtHistory::new(1000);
    for (t, s) in trace.slots[..upto].iter().enumerate() {
        h.push(t, s.clone());
    }
    h
}

#[test]
fn cost_series_covers_every_slot() {
    let trace = default_trace(1, 6);
    let m = mtep::run(&trace, &TwetParams::default(), &PlannerParams::default()).unwrap();
    assert_eq!(m.cost_series.len(), 6 * trace.config.interval_len);
    assert_eq!(m.violations.total(), 0);
}

#[test]
fn decisions_never_read_the_future() {
    let a = default_trace(7, 8);
    let cut = 4 * a.config.interval_len;
    let other = default_trace(8, 8);
    let mut b = a.clone();
    b.slots[cut..].clone_from_slice(&other.slots[cut..]);
    let planner = PlannerParams::default();
    let ma = mtep::run(&a, &TwetParams::default(), &planner).unwrap();
    let mb = mtep::run(&b, &TwetParams::default(), &planner).unwrap();
    assert_eq!(ma.cost_series[..cut], mb.cost_series[..cut]);
    for (x, y) in ma.battery_series.iter().zip(&mb.battery_series) {
        assert_eq!(x[..=cut], y[..=cut]);
    }
    assert_ne!(ma.cost_series[cut..], mb.cost_series[cut..]);
}

#[test]
fn zero_iterations_return_the_projected_start() {
    let trace = default_trace(2, 2);
    let cfg = &trace.config;
    let history = history_of(&trace, 5);
    let params = PlannerParams {
        iterations: 0,
        ..PlannerParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cap = plan_cap(cfg);
    let plan = plan_interval(
        &[-5.0, -5.0],
        &trace.intervals[1],
        &history,
        &params,
        1.0,
        cfg,
        1.0,
        &[-3.0, cap + 7.0],
        &mut rng,
    )
    .unwrap();
    assert_eq!(plan, vec![0.0, cap]);
}

#[test]
fn real_time_subgradient_branches() {
    let trace = default_trace(3, 1);
    let cfg = &trace.config;
    let t = cfg.interval_len as f64;
    let slot = &trace.slots[0];
    let q = [-10.0, -10.0];
    let surplus = subgrad_rt(&[1000.0, 1000.0], slot, &q, 1.0, cfg).unwrap();
    let shortage = subgrad_rt(&[0.0, 0.0], slot, &q, 1.0, cfg).unwrap();
    for i in 0..cfg.num_bs {
        assert!((surplus.subgradient[i] + slot.sell_price / t).abs() < 1e-12);
        assert!((shortage.subgradient[i] + slot.buy_price / t).abs() < 1e-12);
        assert!(shortage.crossover[i] > 0.0);
    }
}

fn sample_average(trace: &Trace, plan: &[f64], queues: &[f64], weight: f64, upto: usize) -> f64 {
    let iv = &trace.intervals[upto / trace.config.interval_len];
    trace.slots[..upto]
        .iter()
        .map(|s| planning_objective(plan, iv, s, queues, weight, &trace.config).unwrap())
        .sum::<f64>()
        / upto as f64
}

#[test]
fn planning_lowers_the_sample_objective_on_average() {
    let mut gain = 0.0;
    for seed in 0..4 {
        let trace = default_trace(20 + seed, 5);
        let cfg = &trace.config;
        let upto = 4 * cfg.interval_len;
        let history = history_of(&trace, upto);
        let iv = &trace.intervals[4];
        let queues = vec![-20.0; cfg.num_bs];
        let weight = 3.0;
        let start = iv.res_arrivals.clone();
        let scale = cfg.interval_len as f64 * 2.0 / (weight * trace.params.mean_buy_rt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_interval(
            &queues,
            iv,
            &history,
            &PlannerParams::default(),
            scale,
            cfg,
            weight,
            &start,
            &mut rng,
        )
        .unwrap();
        gain += sample_average(&trace, &start, &queues, weight, upto)
            - sample_average(&trace, &plan, &queues, weight, upto);
    }
    assert!(gain >= 0.0, "average change {gain}");
}

#[test]
fn cheap_ahead_energy_is_bought() {
    let cfg = NetworkConfig::default();
    let trace = constant_trace(
        &cfg,
        2,
        (2.0, 1.0),
        (0.05, 0.04),
        0.5,
        orthogonal_channels(&cfg),
    );
    let upto = cfg.interval_len;
    let history = history_of(&trace, upto);
    let queues = vec![-5.0; cfg.num_bs];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let zero = vec![0.0; cfg.num_bs];
    let plan = plan_interval(
        &queues,
        &trace.intervals[1],
        &history,
        &PlannerParams::default(),
        5.0,
        &cfg,
        1.0,
        &zero,
        &mut rng,
    )
    .unwrap();
    assert!(plan.iter().all(|&e| e > 0.0), "{plan:?}");
    assert!(
        sample_average(&trace, &plan, &queues, 1.0, upto)
            <= sample_average(&trace, &zero, &queues, 1.0, upto)
    );
}

#[test]
fn one_slot_intervals_with_equal_prices_match_single_timescale() {
    let cfg = NetworkConfig {
        interval_len: 1,
        ..NetworkConfig::default()
    };
    let (mut twet_total, mut mtep_total) = (0.0, 0.0);
    for seed in 0..3 {
        let params = ScenarioParams {
            seed,
            mean_buy_lt: 2.3,
            sell_ratio_lt: 0.3,
            price_rel_std: 0.0,
            ..ScenarioParams::default()
        };
        let trace = generate_trace(&cfg, &params, 60).unwrap();
        let planner = PlannerParams {
            seed,
            ..PlannerParams::default()
        };
        twet_total += twet::run(&trace, &TwetParams::default())
            .unwrap()
            .avg_cost
            .unwrap();
        mtep_total += mtep::run(&trace, &TwetParams::default(), &planner)
            .unwrap()
            .avg_cost
            .unwrap();
    }
    let rel = (mtep_total - twet_total).abs() / twet_total.abs();
    assert!(rel < 0.05, "twet {twet_total} mtep {mtep_total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn plans_stay_within_zero_and_the_cap(
        seed in any::<u64>(),
        q in -40.0f64..20.0,
        weight in 0.1f64..6.0,
        start in -10.0f64..200.0,
    ) {
        let trace = default_trace(seed, 2);
        let cfg = &trace.config;
        let history = history_of(&trace, cfg.interval_len);
        let params = PlannerParams { iterations: 10, seed, ..PlannerParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_interval(
            &vec![q; cfg.num_bs], &trace.intervals[1], &history, &params, 20.0, cfg, weight,
            &vec![start; cfg.num_bs], &mut rng,
        ).unwrap();
        for e in plan {
            prop_assert!((0.0..=plan_cap(cfg)).contains(&e));
        }
    }
}
