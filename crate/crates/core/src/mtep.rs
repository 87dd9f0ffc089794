//! Two-timescale controller: at the start of every coarse interval an
//! ahead-of-time purchase is planned by projected stochastic subgradient
//! descent over past real-time realizations, then the slots of the interval
//! run the single-timescale controller with the plan spread evenly.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{build_slot_program, solve_slot, SlotInputs, SolverOptions};
use crate::metrics::{Recorder, RunMetrics};
use crate::model::{
    cost_unchecked, slot_cost_mtep, ControllerState, IntervalRandomness, NetworkConfig, Prices,
    SlotRandomness,
};
use crate::scenario::Trace;
use crate::twet::{
    check_initial, initial_battery, resolve_weight, step_with_supply, ControlError, Guarantees,
    PriceBounds, Result, TwetParams,
};

pub fn two_timescale_guarantees(cfg: &NetworkConfig, prices: PriceBounds) -> Guarantees {
    let t = cfg.interval_len as f64;
    let m = cfg.max_charge_magnitude();
    let room = cfg.battery_max - cfg.battery_min + t * (cfg.charge_min - cfg.charge_max);
    Guarantees {
        drift_bound: 0.5 * t * cfg.num_bs as f64 * m * m,
        weight_cap: room / (prices.buy_cap - prices.sell_floor),
    }
}

pub fn two_timescale_perturbation(cfg: &NetworkConfig, weight: f64, prices: PriceBounds) -> f64 {
    -weight * prices.buy_cap + cfg.interval_len as f64 * cfg.charge_min - cfg.battery_min
}

/// Largest ahead-of-time purchase per BS and interval: everything the BS
/// could consume and store over the interval. Without it a cheap ahead price
/// below the real-time resale price makes the plan unbounded.
pub fn plan_cap(cfg: &NetworkConfig) -> f64 {
    cfg.interval_len as f64 * (cfg.max_consumption + cfg.charge_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Subgradient iterations per interval.
    pub iterations: usize,
    /// Numerator of the `step_scale / j` stepsize; `None` picks a scale from
    /// the interval length, charge bound, V and the mean real-time price.
    pub step_scale: Option<f64>,
    /// Stored realizations required before planning; fewer keeps the start point.
    pub history_min: usize,
    pub history_capacity: usize,
    /// Seed of the stream that picks past realizations.
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            iterations: 50,
            step_scale: None,
            history_min: 5,
            history_capacity: 1000,
            seed: 0,
        }
    }
}

/// Bounded record of past real-time realizations, tagged with slot index.
#[derive(Debug, Clone)]
pub struct RtHistory {
    buf: VecDeque<(usize, SlotRandomness)>,
    capacity: usize,
}

impl RtHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, slot_index: usize, slot: SlotRandomness) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back((slot_index, slot));
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Index of the most recent stored slot.
    pub fn latest(&self) -> Option<usize> {
        self.buf.back().map(|(t, _)| *t)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&SlotRandomness> {
        if self.buf.is_empty() {
            return None;
        }
        Some(&self.buf[rng.random_range(0..self.buf.len())].1)
    }
}

/// Subgradient of the ahead-of-time cost at plan `plan` and harvest `harvest`;
/// the midpoint of the price interval at the kink.
pub fn subgrad_lt(plan: f64, harvest: f64, lt: Prices) -> f64 {
    if plan > harvest {
        lt.buy
    } else if plan < harvest {
        lt.sell
    } else {
        0.5 * (lt.buy + lt.sell)
    }
}

/// Inner real-time problem for one sampled slot at a given plan.
#[derive(Debug, Clone, PartialEq)]
pub struct RtSample {
    /// Per BS subgradient of the unweighted real-time cost with respect to the plan.
    pub subgradient: Vec<f64>,
    /// Optimal `sum_i [V*G_rt + Q_i*P_b,i]` for the sampled slot.
    pub objective: f64,
    /// Per BS consumption plus charge at the optimum (the supply level at the kink).
    pub crossover: Vec<f64>,
}

/// Relative distance from the buy/sell kink inside which the dual weights
/// decide the subgradient. Interior-point solutions stop a little off the
/// kink, and the duals agree with the one-sided prices away from it.
const KINK_BAND: f64 = 1e-4;

/// Solves the real-time problem of `sample` with supply `plan/T` and returns
/// the per BS subgradients. Away from the kink this is `-sell/T` (surplus)
/// or `-buy/T` (shortage); at the kink the solver's dual weights pick the
/// convex combination that is a true subgradient of the inner optimum.
pub fn subgrad_rt(
    plan: &[f64],
    sample: &SlotRandomness,
    queues: &[f64],
    weight: f64,
    cfg: &NetworkConfig,
) -> std::result::Result<RtSample, crate::conic::ConicError> {
    let t = cfg.interval_len as f64;
    let supply: Vec<f64> = plan.iter().map(|e| e / t).collect();
    let prices = sample.prices();
    let inputs = SlotInputs::new(cfg, &sample.channels, prices, &supply, weight, queues);
    let dec = solve_slot(&build_slot_program(&inputs)?, cfg, SolverOptions::default())?;
    let mut subgradient = Vec::with_capacity(cfg.num_bs);
    let mut crossover = Vec::with_capacity(cfg.num_bs);
    for i in 0..cfg.num_bs {
        // the program's own power variable, so the kink test sees the
        // consumption the objective was evaluated at
        let delta = cfg.circuit_power + dec.powers[i] + dec.charges[i];
        let tol = KINK_BAND * (1.0 + delta.abs());
        let g = if supply[i] > delta + tol {
            -prices.sell / t
        } else if supply[i] < delta - tol {
            -prices.buy / t
        } else {
            let w = dec.buy_weight[i];
            -(w * prices.buy + (1.0 - w) * prices.sell) / t
        };
        subgradient.push(g);
        crossover.push(delta);
    }
    Ok(RtSample {
        subgradient,
        objective: dec.objective,
        crossover,
    })
}

/// Sample objective of the planning problem: `sum_i V*G_lt(E_i) + T * inner`.
pub fn planning_objective(
    plan: &[f64],
    interval: &IntervalRandomness,
    sample: &SlotRandomness,
    queues: &[f64],
    weight: f64,
    cfg: &NetworkConfig,
) -> std::result::Result<f64, crate::conic::ConicError> {
    let lt = interval.prices();
    let ahead: f64 = plan
        .iter()
        .zip(&interval.res_arrivals)
        .map(|(e, a)| cost_unchecked(e - a, lt.buy, lt.sell))
        .sum();
    let rt = subgrad_rt(plan, sample, queues, weight, cfg)?;
    Ok(weight * ahead + cfg.interval_len as f64 * rt.objective)
}

/// Plans the ahead-of-time purchase of one interval starting from `start`.
/// Returns the average of the projected iterates.
#[allow(clippy::too_many_arguments)]
pub fn plan_interval(
    queues: &[f64],
    interval: &IntervalRandomness,
    history: &RtHistory,
    params: &PlannerParams,
    step_scale: f64,
    cfg: &NetworkConfig,
    weight: f64,
    start: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let cap = plan_cap(cfg);
    let mut plan: Vec<f64> = start.iter().map(|e| e.clamp(0.0, cap)).collect();
    if history.len() < params.history_min.max(1) || params.iterations == 0 {
        return Ok(plan);
    }
    let t = cfg.interval_len as f64;
    let lt = interval.prices();
    let mut avg = vec![0.0; plan.len()];
    for j in 1..=params.iterations {
        let sample = history.sample(rng).expect("history is nonempty");
        let rt = subgrad_rt(&plan, sample, queues, weight, cfg).map_err(|source| {
            ControlError::Solver {
                slot: history.latest().map_or(0, |s| s + 1),
                source,
            }
        })?;
        let mu = step_scale / j as f64;
        for (i, e) in plan.iter_mut().enumerate() {
            let g = weight * (subgrad_lt(*e, interval.res_arrivals[i], lt) + t * rt.subgradient[i]);
            *e = (*e - mu * g).clamp(0.0, cap);
        }
        for (a, e) in avg.iter_mut().zip(&plan) {
            *a += e;
        }
    }
    Ok(avg
        .into_iter()
        .map(|a| a / params.iterations as f64)
        .collect())
}

pub fn run(trace: &Trace, twet: &TwetParams, planner: &PlannerParams) -> Result<RunMetrics> {
    let cfg = &trace.config;
    cfg.validate()?;
    let bounds = PriceBounds::of(trace);
    let g = two_timescale_guarantees(cfg, bounds);
    let weight = resolve_weight(twet.penalty_weight, g.weight_cap, twet.strict_cap)?;
    let gamma = twet
        .perturbation
        .unwrap_or_else(|| two_timescale_perturbation(cfg, weight, bounds));
    let battery = initial_battery(cfg);
    check_initial(cfg, &battery)?;
    let mut state = ControllerState::new(battery, gamma, weight);

    let t = cfg.interval_len;
    let step_scale = planner.step_scale.unwrap_or_else(|| {
        t as f64 * cfg.max_charge_magnitude()
            / (weight.max(f64::MIN_POSITIVE) * trace.params.mean_buy_rt)
    });
    let mut history = RtHistory::new(planner.history_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(planner.seed);
    let mut rec = Recorder::new(&state.battery);
    let mut previous: Option<Vec<f64>> = None;

    for (n, interval) in trace.intervals.iter().enumerate() {
        let start = previous
            .clone()
            .unwrap_or_else(|| interval.res_arrivals.clone());
        let plan = plan_interval(
            &state.virtual_queue,
            interval,
            &history,
            planner,
            step_scale,
            cfg,
            weight,
            &start,
            &mut rng,
        )?;
        state.plan = plan.clone();
        let supply: Vec<f64> = plan.iter().map(|e| e / t as f64).collect();
        let lt = interval.prices();
        for slot_index in n * t..(n + 1) * t {
            let slot = &trace.slots[slot_index];
            let out = step_with_supply(&mut state, slot, &supply, cfg, slot_index)?;
            let mut cost = 0.0;
            for i in 0..cfg.num_bs {
                cost += slot_cost_mtep(
                    plan[i],
                    interval.res_arrivals[i],
                    lt,
                    slot.prices(),
                    cfg.circuit_power + out.audit.powers[i],
                    out.charges[i],
                    t,
                )?;
            }
            rec.record(cost, &state.battery, &out.charges, &out.audit);
            history.push(slot_index, slot.clone());
        }
        previous = Some(plan);
    }
    Ok(rec.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lt_subgradient_cases() {
        let lt = Prices::new(1.5, 1.35).unwrap();
        assert_eq!(subgrad_lt(10.0, 8.0, lt), 1.5);
        assert_eq!(subgrad_lt(8.0, 10.0, lt), 1.35);
        assert_eq!(subgrad_lt(9.0, 9.0, lt), 0.5 * (1.5 + 1.35));
    }

    #[test]
    fn default_constants() {
        let cfg = NetworkConfig::default();
        let b = PriceBounds {
            buy_cap: 6.9,
            sell_floor: 0.0,
        };
        let g = two_timescale_guarantees(&cfg, b);
        assert_eq!(g.drift_bound, 20.0);
        assert!((g.weight_cap - 40.0 / 6.9).abs() < 1e-12);
        assert_eq!(two_timescale_perturbation(&cfg, 0.0, b), -10.0);
    }

    #[test]
    fn history_is_bounded_and_ordered() {
        let cfg = NetworkConfig::default();
        let slot = SlotRandomness {
            buy_price: 1.0,
            sell_price: 0.5,
            channels: crate::model::ChannelState::new(crate::model::ComplexMatrix::zeros(4, 3)),
            res_arrivals: vec![0.0; cfg.num_bs],
        };
        let mut h = RtHistory::new(3);
        assert!(h.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_none());
        for t in 0..5 {
            h.push(t, slot.clone());
        }
        assert_eq!(h.len(), 3);
        assert_eq!(h.latest(), Some(4));
    }
}
