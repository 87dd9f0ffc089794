//! Comparison policies: a myopic controller without storage and the
//! clairvoyant full-horizon optimum.

use serde::{Deserialize, Serialize};

use crate::conic::{
    add_slot_block, build_slot_program, solve, solve_slot, Affine, ConicError, ProgramBuilder,
    SlotBlock, SlotInputs, SolveStatus, SolverOptions, Supply,
};
use crate::metrics::{audit_slot, Recorder, RunMetrics};
use crate::model::{battery_step, cost_unchecked, slot_cost_mtep, Beamformers};
use crate::mtep::plan_cap;
use crate::scenario::Trace;
use crate::twet::{initial_battery, ControlError, Result};

/// Largest horizon the joint offline program accepts.
pub const OFFLINE_MAX_SLOTS: usize = 500;

/// Per slot: minimize the instantaneous cost with the battery idle,
/// buying everything not harvested at real-time prices.
pub fn heuristic_run(trace: &Trace) -> Result<RunMetrics> {
    let cfg = &trace.config;
    cfg.validate()?;
    let battery = initial_battery(cfg);
    let zeros = vec![0.0; cfg.num_bs];
    let mut rec = Recorder::new(&battery);
    for (t, slot) in trace.slots.iter().enumerate() {
        let prices = slot.prices();
        let mut inputs =
            SlotInputs::new(cfg, &slot.channels, prices, &slot.res_arrivals, 1.0, &zeros);
        inputs.charge_limits = Some((0.0, 0.0));
        let solver = |source| ControlError::Solver { slot: t, source };
        let dec = solve_slot(
            &build_slot_program(&inputs).map_err(solver)?,
            cfg,
            SolverOptions::default(),
        )
        .map_err(solver)?;
        let audit = audit_slot(cfg, &slot.channels, &dec.beamformers)?;
        let cost = (0..cfg.num_bs)
            .map(|i| {
                let u = cfg.circuit_power + audit.powers[i] - slot.res_arrivals[i];
                cost_unchecked(u, prices.buy, prices.sell)
            })
            .sum();
        rec.record(cost, &battery, &zeros, &audit);
    }
    Ok(rec.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfflineMode {
    /// Real-time trading only; harvests arrive per slot.
    SingleTimescale,
    /// Ahead-of-time purchases per interval plus real-time trading.
    TwoTimescale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSchedule {
    pub beamformers: Vec<Beamformers>,
    /// Per slot, per BS.
    pub charges: Vec<Vec<f64>>,
    /// Per interval, per BS; empty in single-timescale mode.
    pub plans: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineResult {
    /// Program optimum divided by the number of slots.
    pub optimum: f64,
    /// Re-evaluation of the schedule through the model functions.
    pub metrics: RunMetrics,
    pub schedule: OfflineSchedule,
}

/// Jointly optimizes every slot of the trace (and every interval plan in
/// two-timescale mode) with the battery levels chained across slots. The
/// terminal level is free.
pub fn offline_solve(trace: &Trace, mode: OfflineMode) -> Result<OfflineResult> {
    let cfg = &trace.config;
    cfg.validate()?;
    let slots = trace.num_slots();
    if slots > OFFLINE_MAX_SLOTS {
        return Err(ControlError::TooLarge(format!(
            "offline horizon {slots} slots exceeds {OFFLINE_MAX_SLOTS}"
        )));
    }
    let (ni, t_len) = (cfg.num_bs, cfg.interval_len);
    let c0 = initial_battery(cfg);
    let mut b = ProgramBuilder::new();

    let plans: Vec<Vec<usize>> = match mode {
        OfflineMode::SingleTimescale => Vec::new(),
        OfflineMode::TwoTimescale => trace
            .intervals
            .iter()
            .enumerate()
            .map(|(n, iv)| {
                let e: Vec<usize> = b.add_vars(format!("E[{n}]"), ni).collect();
                let s: Vec<usize> = b.add_vars(format!("slt[{n}]"), ni).collect();
                let lt = iv.prices();
                for i in 0..ni {
                    b.nonneg(Affine::var(e[i], 1.0));
                    b.nonneg(Affine::var(e[i], -1.0).plus(plan_cap(cfg)));
                    for price in [lt.buy, lt.sell] {
                        // s >= price * (E - A)
                        b.nonneg(
                            Affine::var(s[i], 1.0)
                                .term(e[i], -price)
                                .plus(price * iv.res_arrivals[i]),
                        );
                    }
                    b.add_objective(s[i], 1.0);
                }
                e
            })
            .collect(),
    };

    let mut blocks: Vec<SlotBlock> = Vec::with_capacity(slots);
    let mut level: Vec<Affine> = c0.iter().map(|&c| Affine::constant(c)).collect();
    for (t, slot) in trace.slots.iter().enumerate() {
        let supply: Vec<Supply> = (0..ni)
            .map(|i| match mode {
                OfflineMode::SingleTimescale => Supply::fixed(slot.res_arrivals[i]),
                OfflineMode::TwoTimescale => Supply {
                    fixed: 0.0,
                    var: Some((plans[t / t_len][i], 1.0 / t_len as f64)),
                },
            })
            .collect();
        let block = add_slot_block(
            &mut b,
            &format!("t{t}."),
            cfg,
            &slot.channels,
            slot.prices(),
            &supply,
            1.0,
            (cfg.charge_min, cfg.charge_max),
        );
        let next: Vec<usize> = b.add_vars(format!("C[{}]", t + 1), ni).collect();
        for i in 0..ni {
            b.add_objective(block.cost[i], 1.0);
            // C[t+1] = C[t] + P_b[t], inside the battery range
            let mut chain = Affine::var(next[i], 1.0).term(block.charge[i], -1.0);
            for &(j, c) in &level[i].terms {
                chain = chain.term(j, -c);
            }
            b.equal_zero(chain.plus(-level[i].constant));
            b.nonneg(Affine::var(next[i], 1.0).plus(-cfg.battery_min));
            b.nonneg(Affine::var(next[i], -1.0).plus(cfg.battery_max));
            level[i] = Affine::var(next[i], 1.0);
        }
        blocks.push(block);
    }

    let program = b.build();
    let sol = solve(&program, SolverOptions::default())
        .map_err(|source| ControlError::Solver { slot: 0, source })?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(ControlError::Solver {
                slot: 0,
                source: ConicError::Infeasible,
            })
        }
        SolveStatus::NumericalLimit => {
            return Err(ControlError::Solver {
                slot: 0,
                source: ConicError::NumericalLimit {
                    primal: sol.residuals.primal,
                    dual: sol.residuals.dual,
                    gap: sol.residuals.gap,
                },
            })
        }
    }

    let schedule = OfflineSchedule {
        beamformers: blocks
            .iter()
            .map(|blk| blk.beamformers(cfg, &sol.x))
            .collect(),
        charges: blocks
            .iter()
            .map(|blk| blk.charge.iter().map(|&j| sol.x[j]).collect())
            .collect(),
        plans: plans
            .iter()
            .map(|e| e.iter().map(|&j| sol.x[j].max(0.0)).collect())
            .collect(),
    };
    let metrics = evaluate_schedule(trace, mode, &schedule, &c0)?;
    Ok(OfflineResult {
        optimum: if slots > 0 {
            sol.objective / slots as f64
        } else {
            0.0
        },
        metrics,
        schedule,
    })
}

/// Replays a schedule through the model: battery steps are checked and the
/// costs recomputed from the delivered transmit powers.
fn evaluate_schedule(
    trace: &Trace,
    mode: OfflineMode,
    s: &OfflineSchedule,
    c0: &[f64],
) -> Result<RunMetrics> {
    let cfg = &trace.config;
    let t_len = cfg.interval_len;
    let mut battery = c0.to_vec();
    let mut rec = Recorder::new(&battery);
    for (t, slot) in trace.slots.iter().enumerate() {
        let audit = audit_slot(cfg, &slot.channels, &s.beamformers[t])?;
        let charges = &s.charges[t];
        for (c, &pb) in battery.iter_mut().zip(charges) {
            *c = battery_step(*c, pb, cfg)
                .map_err(|source| ControlError::Battery { slot: t, source })?;
        }
        let rt = slot.prices();
        let mut cost = 0.0;
        for i in 0..cfg.num_bs {
            let consumption = cfg.circuit_power + audit.powers[i];
            cost += match mode {
                OfflineMode::SingleTimescale => cost_unchecked(
                    consumption - slot.res_arrivals[i] + charges[i],
                    rt.buy,
                    rt.sell,
                ),
                OfflineMode::TwoTimescale => {
                    let iv = &trace.intervals[t / t_len];
                    slot_cost_mtep(
                        s.plans[t / t_len][i],
                        iv.res_arrivals[i],
                        iv.prices(),
                        rt,
                        consumption,
                        charges[i],
                        t_len,
                    )?
                }
            };
        }
        rec.record(cost, &battery, charges, &audit);
    }
    Ok(rec.finish())
}
