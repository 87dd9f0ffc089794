mod common;

use common::{constant_trace, default_trace, orthogonal_channels};
use comp_energy::baselines::{heuristic_run, offline_solve, OfflineMode, OFFLINE_MAX_SLOTS};
use comp_energy::model::{transaction_cost, NetworkConfig};
use comp_energy::mtep::{self, plan_cap, PlannerParams};
use comp_energy::twet::{self, ControlError, TwetParams};

const SLACK: f64 = 1e-5;

#[test]
fn offline_lower_bounds_every_policy() {
    for seed in 0..50 {
        let trace = default_trace(seed, 6);
        let best = offline_solve(&trace, OfflineMode::TwoTimescale)
            .unwrap()
            .optimum;
        let single = offline_solve(&trace, OfflineMode::SingleTimescale)
            .unwrap()
            .optimum;
        let planner = PlannerParams {
            seed,
            ..PlannerParams::default()
        };
        let heu = heuristic_run(&trace).unwrap().avg_cost.unwrap();
        let tw = twet::run(&trace, &TwetParams::default())
            .unwrap()
            .avg_cost
            .unwrap();
        let mt = mtep::run(&trace, &TwetParams::default(), &planner)
            .unwrap()
            .avg_cost
            .unwrap();
        assert!(best <= single + SLACK, "seed {seed}: {best} vs {single}");
        for (name, cost) in [("heu", heu), ("twet", tw), ("mtep", mt)] {
            assert!(
                best <= cost + SLACK,
                "seed {seed}: offline {best} above {name} {cost}"
            );
        }
        assert!(single <= heu + SLACK && single <= tw + SLACK, "seed {seed}");
    }
}

#[test]
fn offline_schedule_is_feasible_and_reproduces_the_optimum() {
    let trace = default_trace(9, 10);
    let cfg = &trace.config;
    for mode in [OfflineMode::SingleTimescale, OfflineMode::TwoTimescale] {
        let r = offline_solve(&trace, mode).unwrap();
        assert_eq!(r.metrics.violations.total(), 0);
        for c in r.metrics.battery_series.iter().flatten() {
            assert!(*c >= cfg.battery_min - 1e-6 && *c <= cfg.battery_max + 1e-6);
        }
        for pb in r.schedule.charges.iter().flatten() {
            assert!(*pb >= cfg.charge_min - 1e-6 && *pb <= cfg.charge_max + 1e-6);
        }
        for e in r.schedule.plans.iter().flatten() {
            assert!((0.0..=plan_cap(cfg)).contains(e));
        }
        let replayed = r.metrics.avg_cost.unwrap();
        assert!(
            (replayed - r.optimum).abs() < 1e-4 * (1.0 + r.optimum.abs()),
            "{replayed} vs {}",
            r.optimum
        );
    }
}

#[test]
fn constant_prices_leave_nothing_to_shift() {
    let cfg = NetworkConfig::default();
    let trace = constant_trace(
        &cfg,
        4,
        (2.0, 1.0),
        (1.5, 1.2),
        1.0,
        orthogonal_channels(&cfg),
    );
    let off = offline_solve(&trace, OfflineMode::SingleTimescale).unwrap();
    let heu = heuristic_run(&trace).unwrap();
    assert!((off.optimum - heu.avg_cost.unwrap()).abs() < SLACK);
}

#[test]
fn heuristic_never_touches_the_battery() {
    let trace = default_trace(4, 5);
    let m = heuristic_run(&trace).unwrap();
    for series in &m.battery_series {
        assert!(series.iter().all(|&c| c == series[0]));
    }
    assert!(m.mean_charge.iter().all(|&c| c == 0.0));
}

#[test]
fn heuristic_ignores_battery_capacity() {
    let trace = default_trace(5, 4);
    let big = NetworkConfig {
        battery_max: 120.0,
        ..trace.config.clone()
    };
    let a = heuristic_run(&trace).unwrap();
    let b = heuristic_run(&trace.clone().with_config(big).unwrap()).unwrap();
    assert_eq!(a.cost_series, b.cost_series);
}

#[test]
fn heuristic_sells_a_surplus() {
    let cfg = NetworkConfig::default();
    let trace = constant_trace(
        &cfg,
        1,
        (2.0, 0.7),
        (1.5, 1.2),
        30.0,
        orthogonal_channels(&cfg),
    );
    let m = heuristic_run(&trace).unwrap();
    let cost = m.cost_series[0];
    assert!(cost < 0.0);
    // grid oracle over the only free quantity, the BS transmit power, is
    // pinned by orthogonal channels: sum of targets times noise per BS
    let gamma = cfg.sinr_targets[0];
    let powers = [2.0 * gamma, gamma];
    let expected: f64 = powers
        .iter()
        .map(|p| transaction_cost(cfg.circuit_power + p - 30.0, 2.0, 0.7).unwrap())
        .sum();
    assert!((cost - expected).abs() < 1e-5, "{cost} vs {expected}");
}

#[test]
fn long_horizons_are_refused() {
    let intervals = OFFLINE_MAX_SLOTS / NetworkConfig::default().interval_len + 1;
    let trace = default_trace(0, intervals);
    assert!(matches!(
        offline_solve(&trace, OfflineMode::TwoTimescale),
        Err(ControlError::TooLarge(_))
    ));
}
