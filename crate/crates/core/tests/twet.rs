mod common;

use common::{constant_trace, default_trace, orthogonal_channels};
use comp_energy::model::{NetworkConfig, SlotRandomness};
use comp_energy::scenario::Trace;
use comp_energy::twet::{self, init, initial_battery, step, PriceBounds, TwetParams};
use proptest::prelude::*;

fn bounds(trace: &Trace) -> PriceBounds {
    PriceBounds::of(trace)
}

#[test]
fn huge_harvest_makes_the_slot_a_net_sale() {
    let cfg = NetworkConfig::default();
    let trace = constant_trace(
        &cfg,
        1,
        (2.0, 1.0),
        (1.5, 1.0),
        50.0,
        orthogonal_channels(&cfg),
    );
    let (mut state, _) = init(
        &cfg,
        initial_battery(&cfg),
        &TwetParams::default(),
        bounds(&trace),
    )
    .unwrap();
    let out = step(&mut state, &trace.slots[0], &cfg, 0).unwrap();
    assert!(out.cost < 0.0, "cost {}", out.cost);
    // the surplus is sold at the selling price, net of what the battery takes
    let expected: f64 = (0..cfg.num_bs)
        .map(|i| 1.0 * (cfg.circuit_power + out.audit.powers[i] - 50.0 + out.charges[i]))
        .sum();
    assert!((out.cost - expected).abs() < 1e-9);
}

#[test]
fn queues_track_battery_plus_perturbation() {
    let trace = default_trace(3, 4);
    let cfg = &trace.config;
    let (mut state, _) = init(
        cfg,
        initial_battery(cfg),
        &TwetParams::default(),
        bounds(&trace),
    )
    .unwrap();
    for (t, slot) in trace.slots.iter().enumerate() {
        step(&mut state, slot, cfg, t).unwrap();
        for (q, c) in state.virtual_queue.iter().zip(&state.battery) {
            assert_eq!(*q, c + state.perturbation);
        }
    }
}

#[test]
fn steps_are_deterministic() {
    let trace = default_trace(4, 1);
    let cfg = &trace.config;
    let (state, _) = init(
        cfg,
        vec![10.0, 20.0],
        &TwetParams::default(),
        bounds(&trace),
    )
    .unwrap();
    let (mut a, mut b) = (state.clone(), state);
    let x = step(&mut a, &trace.slots[0], cfg, 0).unwrap();
    let y = step(&mut b, &trace.slots[0], cfg, 0).unwrap();
    assert_eq!(x, y);
    assert_eq!(a, b);
}

#[test]
fn empty_trace_has_no_average() {
    let mut trace = default_trace(0, 1);
    trace.intervals.clear();
    trace.slots.clear();
    let m = twet::run(&trace, &TwetParams::default()).unwrap();
    assert_eq!(m.avg_cost, None);
    assert!(m.cost_series.is_empty());
}

#[test]
fn constant_trace_average_equals_the_repeated_slot_cost() {
    // With storage negligible nothing carries over between identical slots.
    let cfg = NetworkConfig {
        charge_min: -1e-9,
        charge_max: 1e-9,
        ..NetworkConfig::default()
    };
    let trace = constant_trace(
        &cfg,
        3,
        (2.0, 0.8),
        (1.5, 1.2),
        1.0,
        orthogonal_channels(&cfg),
    );
    let (mut state, _) = init(
        &cfg,
        initial_battery(&cfg),
        &TwetParams::default(),
        bounds(&trace),
    )
    .unwrap();
    let single = step(&mut state, &trace.slots[0], &cfg, 0).unwrap().cost;
    let avg = twet::run(&trace, &TwetParams::default())
        .unwrap()
        .avg_cost
        .unwrap();
    assert!(
        (avg - single).abs() < 1e-6 * (1.0 + single.abs()),
        "{avg} vs {single}"
    );
}

#[test]
fn mean_charge_telescopes() {
    let trace = default_trace(5, 20);
    let m = twet::run(&trace, &TwetParams::default()).unwrap();
    let cfg = &trace.config;
    let n = trace.num_slots() as f64;
    for (i, series) in m.battery_series.iter().enumerate() {
        let telescoped = (series.last().unwrap() - series[0]) / n;
        assert!((m.mean_charge[i] - telescoped).abs() < 1e-9);
        assert!(m.mean_charge[i].abs() <= (cfg.battery_max - cfg.battery_min) / n + 1e-12);
    }
}

#[test]
fn larger_weight_does_not_raise_long_run_cost() {
    let mut costs = Vec::new();
    for fraction in [0.2, 0.9] {
        let mut total = 0.0;
        for seed in 0..3 {
            let trace = default_trace(100 + seed, 40);
            let cap = twet::single_timescale_guarantees(&trace.config, PriceBounds::of(&trace))
                .weight_cap;
            let params = TwetParams {
                penalty_weight: Some(fraction * cap),
                ..TwetParams::default()
            };
            let m = twet::run(&trace, &params).unwrap();
            total += m.cost_series[100..].iter().sum::<f64>() / (m.cost_series.len() - 100) as f64;
        }
        costs.push(total / 3.0);
    }
    assert!(costs[1] <= costs[0] * 1.02, "{costs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // Battery feasibility is the controller's core guarantee: any V up to
    // the cap keeps every BS within its bounds.
    #[test]
    fn batteries_stay_in_bounds(seed in any::<u64>(), fraction in 0.0f64..=1.0) {
        let trace = default_trace(seed, 12);
        let cfg = &trace.config;
        let cap = twet::single_timescale_guarantees(cfg, PriceBounds::of(&trace)).weight_cap;
        let params = TwetParams { penalty_weight: Some(fraction * cap), ..TwetParams::default() };
        let m = twet::run(&trace, &params).unwrap();
        prop_assert_eq!(m.violations.total(), 0);
        for c in m.battery_series.iter().flatten() {
            prop_assert!((cfg.battery_min..=cfg.battery_max).contains(c));
        }
    }

    #[test]
    fn slot_costs_match_the_transaction_model(seed in any::<u64>()) {
        let trace = default_trace(seed, 1);
        let cfg = &trace.config;
        let (mut state, _) = init(cfg, initial_battery(cfg), &TwetParams::default(), PriceBounds::of(&trace)).unwrap();
        let slot: &SlotRandomness = &trace.slots[0];
        let out = step(&mut state, slot, cfg, 0).unwrap();
        let mut expected = 0.0;
        for i in 0..cfg.num_bs {
            let u = cfg.circuit_power + out.audit.powers[i] - slot.res_arrivals[i] + out.charges[i];
            expected += comp_energy::model::transaction_cost(u, slot.buy_price, slot.sell_price).unwrap();
        }
        prop_assert!((out.cost - expected).abs() < 1e-9);
    }
}
