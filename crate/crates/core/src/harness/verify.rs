//! Self-checks against independent references: the brute-force slot
//! oracle, the single-user closed form, subgradient inequalities of the
//! planning objective and feasibility of short controlled runs.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{heuristic_run, offline_solve, OfflineMode};
use crate::conic::{
    build_slot_program, is_servable, oracle_solve, solve_slot, SlotInputs, SolverOptions,
};
use crate::model::{ChannelState, ComplexMatrix, NetworkConfig, Prices};
use crate::mtep::{
    self, plan_cap, planning_objective, subgrad_lt, subgrad_rt, two_timescale_guarantees,
    PlannerParams,
};
use crate::scenario::{generate_trace, ScenarioParams};
use crate::twet::{self, PriceBounds, TwetParams};

/// Outcome of one family of checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Worst observed discrepancy or the first failure.
    pub detail: String,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.ok() { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{tag}] {}: {}/{} ({})",
            self.name, self.passed, self.total, self.detail
        )
    }
}

/// Sizes of one verification pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyPlan {
    pub oracle_instances: usize,
    pub closed_form_instances: usize,
    pub subgradient_pairs: usize,
    pub feasibility_seeds: usize,
}

impl Default for VerifyPlan {
    fn default() -> Self {
        Self {
            oracle_instances: 100,
            closed_form_instances: 50,
            subgradient_pairs: 1000,
            feasibility_seeds: 3,
        }
    }
}

pub fn run_suite(seed: u64, plan: &VerifyPlan) -> Vec<CheckResult> {
    vec![
        oracle_equivalence(seed, plan.oracle_instances),
        closed_form(seed, plan.closed_form_instances),
        subgradient_inequality(seed, plan.subgradient_pairs),
        subgradient_finite_difference(seed, plan.subgradient_pairs),
        short_run_feasibility(seed, plan.feasibility_seeds),
    ]
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_channels(rng: &mut ChaCha8Rng, cfg: &NetworkConfig) -> ChannelState {
    let n = cfg.total_antennas();
    let cols: Vec<Vec<Complex64>> = (0..cfg.num_users)
        .map(|_| (0..n).map(|_| complex_normal(rng)).collect())
        .collect();
    ChannelState::new(ComplexMatrix::from_columns(n, &cols))
}

/// A random slot problem with `I, M, K <= 2` and servable channels.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub cfg: NetworkConfig,
    pub channels: ChannelState,
    pub prices: Prices,
    pub supply: Vec<f64>,
    pub weight: f64,
    pub queues: Vec<f64>,
}

impl TinyInstance {
    pub fn inputs(&self) -> SlotInputs<'_> {
        SlotInputs::new(
            &self.cfg,
            &self.channels,
            self.prices,
            &self.supply,
            self.weight,
            &self.queues,
        )
    }
}

/// Channel draws tried before the whole instance is redrawn; some target
/// combinations (two users on one antenna with `gamma_1 * gamma_2 > 1`) can
/// never be served.
const CHANNEL_ATTEMPTS: usize = 50;

pub fn random_tiny_instance(rng: &mut ChaCha8Rng) -> TinyInstance {
    loop {
        let (ni, m, k) = (
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
        );
        let cfg = NetworkConfig {
            num_bs: ni,
            num_antennas: m,
            num_users: k,
            sinr_targets: (0..k).map(|_| rng.random_range(0.3..3.0)).collect(),
            noise_vars: (0..k).map(|_| rng.random_range(0.5..1.5)).collect(),
            ..NetworkConfig::default()
        };
        let Some(channels) = (0..CHANNEL_ATTEMPTS)
            .map(|_| random_channels(rng, &cfg))
            .find(|h| is_servable(&cfg, h))
        else {
            continue;
        };
        let buy = rng.random_range(0.5..5.0);
        return TinyInstance {
            prices: Prices::new(buy, buy * rng.random_range(0.05..1.0)).expect("valid prices"),
            supply: (0..ni).map(|_| rng.random_range(0.0..8.0)).collect(),
            weight: rng.random_range(0.1..8.0),
            queues: (0..ni).map(|_| rng.random_range(-60.0..10.0)).collect(),
            channels,
            cfg,
        };
    }
}

fn rel_gap(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

/// Conic optimum versus the brute-force oracle, 1e-4 relative.
pub fn oracle_equivalence(seed: u64, count: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    let mut worst = 0.0f64;
    let mut first_failure = None;
    for n in 0..count {
        let inst = random_tiny_instance(&mut rng);
        let inputs = inst.inputs();
        let conic = build_slot_program(&inputs)
            .and_then(|p| solve_slot(&p, &inst.cfg, SolverOptions::default()));
        let oracle = oracle_solve(&inputs, 60);
        match (conic, oracle) {
            (Ok(d), Ok(o)) => {
                let gap = rel_gap(d.objective, o);
                worst = worst.max(gap);
                if gap <= 1e-4 {
                    passed += 1;
                } else {
                    first_failure.get_or_insert(format!(
                        "instance {n}: conic {} vs oracle {o}",
                        d.objective
                    ));
                }
            }
            (c, o) => {
                first_failure.get_or_insert(format!(
                    "instance {n}: conic {:?} / oracle {:?}",
                    c.err(),
                    o.err()
                ));
            }
        }
    }
    CheckResult {
        name: "solver matches brute-force oracle",
        passed,
        total: count,
        detail: first_failure.unwrap_or_else(|| format!("worst relative gap {worst:.2e}")),
    }
}

/// One user: the least total transmit power is `gamma * sigma^2 / |h|^2`.
pub fn closed_form(seed: u64, count: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut passed = 0;
    let mut worst = 0.0f64;
    let mut first_failure = None;
    for n in 0..count {
        let (ni, m) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let gamma = rng.random_range(0.3..3.0);
        let sigma2 = rng.random_range(0.2..1.5);
        let cfg = NetworkConfig {
            num_bs: ni,
            num_antennas: m,
            num_users: 1,
            sinr_targets: vec![gamma],
            noise_vars: vec![sigma2],
            ..NetworkConfig::default()
        };
        // keep every BS share of the matched-filter power inside its cap
        let (h, expected) = loop {
            let h = random_channels(&mut rng, &cfg);
            let col = h.h.column(0);
            let norm2: f64 = col.iter().map(|c| c.norm_sqr()).sum();
            let p = gamma * sigma2 / norm2;
            let fits = (0..ni).all(|i| {
                let share: f64 = col[i * m..(i + 1) * m]
                    .iter()
                    .map(|c| c.norm_sqr())
                    .sum::<f64>()
                    / norm2;
                p * share < 0.5 * cfg.transmit_budget()
            });
            if fits {
                break (h, p);
            }
        };
        // equal prices and Q = -V leave the transmit power as the objective
        let supply = vec![cfg.circuit_power; ni];
        let queues = vec![-1.0; ni];
        let inputs = SlotInputs::new(
            &cfg,
            &h,
            Prices::new(1.0, 1.0).expect("valid"),
            &supply,
            1.0,
            &queues,
        );
        match build_slot_program(&inputs)
            .and_then(|p| solve_slot(&p, &cfg, SolverOptions::default()))
        {
            Ok(d) => {
                let gap = (d.objective - expected).abs() / expected;
                worst = worst.max(gap);
                if gap <= 1e-5 {
                    passed += 1;
                } else {
                    first_failure
                        .get_or_insert(format!("instance {n}: {} vs {expected}", d.objective));
                }
            }
            Err(e) => {
                first_failure.get_or_insert(format!("instance {n}: {e}"));
            }
        }
    }
    CheckResult {
        name: "single-user closed form",
        passed,
        total: count,
        detail: first_failure.unwrap_or_else(|| format!("worst relative gap {worst:.2e}")),
    }
}

/// A random planning point: interval, sampled slot, queues, V and plan.
struct PlanningCase {
    cfg: NetworkConfig,
    interval: crate::model::IntervalRandomness,
    sample: crate::model::SlotRandomness,
    queues: Vec<f64>,
    weight: f64,
}

impl PlanningCase {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let cfg = NetworkConfig::default();
        let params = ScenarioParams {
            seed: rng.random(),
            ..ScenarioParams::default()
        };
        let trace = generate_trace(&cfg, &params, 1).expect("default scenario is valid");
        let cap = two_timescale_guarantees(
            &cfg,
            PriceBounds {
                buy_cap: params.price_cap,
                sell_floor: params.sell_floor(),
            },
        )
        .weight_cap;
        let weight = rng.random_range(0.05..1.0) * cap;
        let gamma = mtep::two_timescale_perturbation(
            &cfg,
            weight,
            PriceBounds {
                buy_cap: params.price_cap,
                sell_floor: params.sell_floor(),
            },
        );
        let queues = (0..cfg.num_bs)
            .map(|_| rng.random_range(cfg.battery_min..=cfg.battery_max) + gamma)
            .collect();
        let slot = rng.random_range(0..cfg.interval_len);
        Self {
            interval: trace.intervals[0].clone(),
            sample: trace.slots[slot].clone(),
            queues,
            weight,
            cfg,
        }
    }

    fn objective(&self, plan: &[f64]) -> Option<f64> {
        planning_objective(
            plan,
            &self.interval,
            &self.sample,
            &self.queues,
            self.weight,
            &self.cfg,
        )
        .ok()
    }

    /// Per BS subgradient of [`Self::objective`].
    fn subgradient(&self, plan: &[f64]) -> Option<Vec<f64>> {
        let rt = subgrad_rt(plan, &self.sample, &self.queues, self.weight, &self.cfg).ok()?;
        let t = self.cfg.interval_len as f64;
        let lt = self.interval.prices();
        Some(
            plan.iter()
                .enumerate()
                .map(|(i, &e)| {
                    self.weight
                        * (subgrad_lt(e, self.interval.res_arrivals[i], lt) + t * rt.subgradient[i])
                })
                .collect(),
        )
    }
}

fn random_plan(rng: &mut ChaCha8Rng, cfg: &NetworkConfig) -> Vec<f64> {
    let cap = plan_cap(cfg);
    (0..cfg.num_bs)
        .map(|_| rng.random_range(0.0..0.5 * cap))
        .collect()
}

/// `F(E') >= F(E) + g(E).(E' - E)` with slack `1e-6 * max(1, |F(E')|)`.
pub fn subgradient_inequality(seed: u64, count: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ad);
    let mut passed = 0;
    let mut worst = 0.0f64;
    let mut first_failure = None;
    for n in 0..count {
        let case = PlanningCase::draw(&mut rng);
        let e = random_plan(&mut rng, &case.cfg);
        let e2 = random_plan(&mut rng, &case.cfg);
        let (Some(f), Some(f2), Some(g)) = (
            case.objective(&e),
            case.objective(&e2),
            case.subgradient(&e),
        ) else {
            first_failure.get_or_insert(format!("pair {n}: solver failure"));
            continue;
        };
        let linear: f64 = f + g
            .iter()
            .zip(e2.iter().zip(&e))
            .map(|(g, (b, a))| g * (b - a))
            .sum::<f64>();
        let shortfall = (linear - f2) / f2.abs().max(1.0);
        worst = worst.max(shortfall);
        if shortfall <= 1e-6 {
            passed += 1;
        } else {
            first_failure.get_or_insert(format!(
                "pair {n}: F(E') = {f2} below linearization {linear}"
            ));
        }
    }
    CheckResult {
        name: "subgradient inequality",
        passed,
        total: count,
        detail: first_failure.unwrap_or_else(|| format!("worst relative shortfall {worst:.2e}")),
    }
}

/// Step of the one-sided differences.
const FD_STEP: f64 = 0.05;

/// Central differences against the subgradient where the objective is
/// differentiable, detected by agreement of the one-sided differences.
/// Tolerance `max(1e-4, 1e-3 * |g|)`.
pub fn subgradient_finite_difference(seed: u64, count: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut passed = 0;
    let mut smooth = 0;
    let mut worst = 0.0f64;
    let mut first_failure = None;
    for n in 0..count {
        let case = PlanningCase::draw(&mut rng);
        let e = random_plan(&mut rng, &case.cfg);
        let i = rng.random_range(0..case.cfg.num_bs);
        let shifted = |d: f64| {
            let mut p = e.clone();
            p[i] += d;
            case.objective(&p)
        };
        let (Some(f), Some(up), Some(down), Some(g)) = (
            case.objective(&e),
            shifted(FD_STEP),
            shifted(-FD_STEP),
            case.subgradient(&e),
        ) else {
            first_failure.get_or_insert(format!("pair {n}: solver failure"));
            continue;
        };
        let (right, left) = ((up - f) / FD_STEP, (f - down) / FD_STEP);
        let tol = 1e-4f64.max(1e-3 * g[i].abs());
        if (right - left).abs() > tol {
            continue; // a kink lies within one step
        }
        smooth += 1;
        let central = 0.5 * (right + left);
        let err = (central - g[i]).abs();
        worst = worst.max(err / tol);
        if err <= tol {
            passed += 1;
        } else {
            first_failure.get_or_insert(format!(
                "pair {n}: difference {central} vs subgradient {}",
                g[i]
            ));
        }
    }
    // a check that never finds a smooth point proves nothing
    let total = if smooth * 2 >= count { smooth } else { count };
    CheckResult {
        name: "subgradient finite differences",
        passed,
        total,
        detail: first_failure.unwrap_or_else(|| {
            format!("{smooth} of {count} points smooth, worst error {worst:.2} x tolerance")
        }),
    }
}

/// Short default runs of every policy: no violations, batteries in bounds,
/// and the offline optimum below every online policy.
pub fn short_run_feasibility(seed: u64, seeds: usize) -> CheckResult {
    let cfg = NetworkConfig::default();
    let mut passed = 0;
    let mut first_failure = None;
    for s in 0..seeds {
        let params = ScenarioParams {
            seed: seed.wrapping_add(s as u64),
            ..ScenarioParams::default()
        };
        let outcome = (|| -> Result<(), String> {
            let trace = generate_trace(&cfg, &params, 10).map_err(|e| e.to_string())?;
            let planner = PlannerParams {
                seed: params.seed,
                ..PlannerParams::default()
            };
            let runs = [
                ("twet", twet::run(&trace, &TwetParams::default())),
                ("mtep", mtep::run(&trace, &TwetParams::default(), &planner)),
                ("heu", heuristic_run(&trace)),
            ];
            let offline =
                offline_solve(&trace, OfflineMode::TwoTimescale).map_err(|e| e.to_string())?;
            let best = offline.metrics.avg_cost.unwrap_or(f64::NAN);
            for (name, run) in runs {
                let m = run.map_err(|e| format!("{name}: {e}"))?;
                if m.violations.total() > 0 {
                    return Err(format!("{name}: {:?}", m.violations));
                }
                let in_bounds = m
                    .battery_series
                    .iter()
                    .flatten()
                    .all(|c| (cfg.battery_min..=cfg.battery_max).contains(c));
                if !in_bounds {
                    return Err(format!("{name}: battery out of bounds"));
                }
                let avg = m.avg_cost.unwrap_or(f64::NAN);
                if !(best <= avg + 1e-5) {
                    return Err(format!(
                        "{name}: average {avg} below the offline optimum {best}"
                    ));
                }
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => passed += 1,
            Err(e) => {
                first_failure.get_or_insert(format!("seed {s}: {e}"));
            }
        }
    }
    CheckResult {
        name: "short-run feasibility and dominance",
        passed,
        total: seeds,
        detail: first_failure.unwrap_or_else(|| "all runs feasible".into()),
    }
}
