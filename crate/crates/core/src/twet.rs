//! Single-timescale online controller: each slot solves the drift-plus-penalty
//! problem, trades with the grid in both directions and moves the batteries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{build_slot_program, solve_slot, ConicError, SlotInputs, SolverOptions};
use crate::metrics::{audit_slot, Recorder, RunMetrics, SlotAudit};
use crate::model::{
    cost_unchecked, Beamformers, ControllerState, ModelError, NetworkConfig, SlotRandomness,
};
use crate::scenario::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("slot {slot}: {source}")]
    Solver { slot: usize, source: ConicError },
    #[error("slot {slot}: battery left its bounds ({source}); check V and the queue perturbation")]
    Battery { slot: usize, source: ModelError },
    #[error("penalty weight {weight} exceeds the feasibility cap {cap}")]
    WeightAboveCap { weight: f64, cap: f64 },
    #[error("invalid controller input: {0}")]
    Input(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, ControlError>;

/// Worst-case price extremes the controller may rely on: the buy-price cap
/// and the lowest possible sell price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub buy_cap: f64,
    pub sell_floor: f64,
}

impl PriceBounds {
    pub fn of(trace: &Trace) -> Self {
        Self {
            buy_cap: trace.params.price_cap,
            sell_floor: trace.params.sell_floor(),
        }
    }
}

/// Performance and feasibility constants of a controller configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guarantees {
    /// Constant of the drift bound; the cost gap is at most this over V.
    pub drift_bound: f64,
    /// Largest V for which the batteries provably stay within bounds.
    pub weight_cap: f64,
}

pub fn single_timescale_guarantees(cfg: &NetworkConfig, prices: PriceBounds) -> Guarantees {
    let m = cfg.max_charge_magnitude();
    let room = cfg.battery_max - cfg.battery_min + cfg.charge_min - cfg.charge_max;
    Guarantees {
        drift_bound: 0.5 * cfg.num_bs as f64 * m * m,
        weight_cap: room / (prices.buy_cap - prices.sell_floor),
    }
}

/// Queue perturbation that keeps the batteries feasible for any V up to the cap.
pub fn single_timescale_perturbation(cfg: &NetworkConfig, weight: f64, prices: PriceBounds) -> f64 {
    -weight * prices.buy_cap + cfg.charge_min - cfg.battery_min
}

/// Starting battery level shared by every policy: empty.
pub fn initial_battery(cfg: &NetworkConfig) -> Vec<f64> {
    vec![cfg.battery_min; cfg.num_bs]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwetParams {
    /// Penalty weight V; `None` uses `DEFAULT_WEIGHT_FRACTION` of the cap.
    pub penalty_weight: Option<f64>,
    /// Queue perturbation; `None` derives it from V and the price cap.
    pub perturbation: Option<f64>,
    /// Reject a V above the feasibility cap instead of running anyway.
    pub strict_cap: bool,
}

pub const DEFAULT_WEIGHT_FRACTION: f64 = 0.9;

impl Default for TwetParams {
    fn default() -> Self {
        Self {
            penalty_weight: None,
            perturbation: None,
            strict_cap: true,
        }
    }
}

/// Resolves V against its cap, honouring strict mode.
pub(crate) fn resolve_weight(requested: Option<f64>, cap: f64, strict: bool) -> Result<f64> {
    let weight = match requested {
        Some(v) => v,
        None if cap.is_finite() => DEFAULT_WEIGHT_FRACTION * cap,
        None => {
            return Err(ControlError::Input(
                "no finite weight cap; set V explicitly".into(),
            ))
        }
    };
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(ControlError::Input(format!(
            "penalty weight {weight} must be finite and >= 0"
        )));
    }
    if strict && weight > cap {
        return Err(ControlError::WeightAboveCap { weight, cap });
    }
    Ok(weight)
}

pub(crate) fn check_initial(cfg: &NetworkConfig, battery: &[f64]) -> Result<()> {
    if battery.len() != cfg.num_bs {
        return Err(ControlError::Input(
            "one initial battery level per BS".into(),
        ));
    }
    if let Some(c) = battery
        .iter()
        .find(|&&c| !(cfg.battery_min..=cfg.battery_max).contains(&c))
    {
        return Err(ControlError::Input(format!(
            "initial battery {c} outside bounds"
        )));
    }
    Ok(())
}

/// Builds the controller state: `Q_i = C_i + perturbation`.
pub fn init(
    cfg: &NetworkConfig,
    battery: Vec<f64>,
    params: &TwetParams,
    prices: PriceBounds,
) -> Result<(ControllerState, Guarantees)> {
    cfg.validate()?;
    check_initial(cfg, &battery)?;
    let g = single_timescale_guarantees(cfg, prices);
    let weight = resolve_weight(params.penalty_weight, g.weight_cap, params.strict_cap)?;
    let gamma = params
        .perturbation
        .unwrap_or_else(|| single_timescale_perturbation(cfg, weight, prices));
    Ok((ControllerState::new(battery, gamma, weight), g))
}

/// Result of one controlled slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub beamformers: Beamformers,
    pub charges: Vec<f64>,
    /// Grid transaction cost of the slot, summed over BSs (no V weighting).
    pub cost: f64,
    pub audit: SlotAudit,
}

/// Solves one slot with energy `supply` available per BS and advances the
/// state. `slot_index` only labels errors.
pub fn step_with_supply(
    state: &mut ControllerState,
    slot: &SlotRandomness,
    supply: &[f64],
    cfg: &NetworkConfig,
    slot_index: usize,
) -> Result<SlotOutcome> {
    let prices = slot.prices();
    let inputs = SlotInputs::new(
        cfg,
        &slot.channels,
        prices,
        supply,
        state.penalty_weight,
        &state.virtual_queue,
    );
    let solver = |source| ControlError::Solver {
        slot: slot_index,
        source,
    };
    let program = build_slot_program(&inputs).map_err(solver)?;
    let decision = solve_slot(&program, cfg, SolverOptions::default()).map_err(solver)?;
    let audit = audit_slot(cfg, &slot.channels, &decision.beamformers)?;
    let cost = (0..cfg.num_bs)
        .map(|i| {
            let u = cfg.circuit_power + audit.powers[i] - supply[i] + decision.charges[i];
            cost_unchecked(u, prices.buy, prices.sell)
        })
        .sum();
    state
        .apply_charges(&decision.charges, cfg)
        .map_err(|source| ControlError::Battery {
            slot: slot_index,
            source,
        })?;
    Ok(SlotOutcome {
        beamformers: decision.beamformers,
        charges: decision.charges,
        cost,
        audit,
    })
}

/// One TWET slot: the harvested energy is the supply.
pub fn step(
    state: &mut ControllerState,
    slot: &SlotRandomness,
    cfg: &NetworkConfig,
    slot_index: usize,
) -> Result<SlotOutcome> {
    step_with_supply(state, slot, &slot.res_arrivals, cfg, slot_index)
}

pub fn run(trace: &Trace, params: &TwetParams) -> Result<RunMetrics> {
    let cfg = &trace.config;
    let (mut state, _) = init(cfg, initial_battery(cfg), params, PriceBounds::of(trace))?;
    let mut rec = Recorder::new(&state.battery);
    for (t, slot) in trace.slots.iter().enumerate() {
        let out = step(&mut state, slot, cfg, t)?;
        rec.record(out.cost, &state.battery, &out.charges, &out.audit);
    }
    Ok(rec.finish())
}
