//! Per-run bookkeeping shared by every controller.

use serde::{Deserialize, Serialize};

use crate::model::{
    bs_power, sinr, Beamformers, ChannelState, ModelError, NetworkConfig, FEASIBILITY_TOL,
};

/// Relative slack on delivered SINR before a slot counts as a violation.
pub const SINR_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub battery: usize,
    pub sinr: usize,
    pub power_cap: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.battery + self.sinr + self.power_cap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean of `cost_series`; `None` for an empty run.
    pub avg_cost: Option<f64>,
    pub cost_series: Vec<f64>,
    /// Per BS: the level before the first slot followed by the level after each slot.
    pub battery_series: Vec<Vec<f64>>,
    /// Per BS mean battery move over the run.
    pub mean_charge: Vec<f64>,
    pub violations: Violations,
    pub wall_time_s: f64,
}

/// Delivered transmit powers plus SINR and power-cap audit of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotAudit {
    pub powers: Vec<f64>,
    pub sinr_violations: usize,
    pub cap_violations: usize,
}

pub fn audit_slot(
    cfg: &NetworkConfig,
    channels: &ChannelState,
    w: &Beamformers,
) -> Result<SlotAudit, ModelError> {
    let powers = (0..cfg.num_bs)
        .map(|i| bs_power(w, i, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let cap_violations = powers
        .iter()
        .filter(|&&p| cfg.circuit_power + p > cfg.max_consumption + FEASIBILITY_TOL)
        .count();
    let mut sinr_violations = 0;
    for k in 0..cfg.num_users {
        let s = sinr(channels, w, k, cfg.noise_vars[k])?;
        if s < cfg.sinr_targets[k] * (1.0 - SINR_REL_TOL) {
            sinr_violations += 1;
        }
    }
    Ok(SlotAudit {
        powers,
        sinr_violations,
        cap_violations,
    })
}

/// Accumulates a run slot by slot.
#[derive(Debug, Clone)]
pub struct Recorder {
    costs: Vec<f64>,
    battery: Vec<Vec<f64>>,
    charge_sums: Vec<f64>,
    violations: Violations,
    started: std::time::Instant,
}

impl Recorder {
    pub fn new(initial_battery: &[f64]) -> Self {
        Self {
            costs: Vec::new(),
            battery: initial_battery.iter().map(|&c| vec![c]).collect(),
            charge_sums: vec![0.0; initial_battery.len()],
            violations: Violations::default(),
            started: std::time::Instant::now(),
        }
    }

    pub fn record(&mut self, cost: f64, battery: &[f64], charges: &[f64], audit: &SlotAudit) {
        self.costs.push(cost);
        for (series, &c) in self.battery.iter_mut().zip(battery) {
            series.push(c);
        }
        for (s, &pb) in self.charge_sums.iter_mut().zip(charges) {
            *s += pb;
        }
        self.violations.sinr += audit.sinr_violations;
        self.violations.power_cap += audit.cap_violations;
    }

    pub fn finish(self) -> RunMetrics {
        let n = self.costs.len();
        let avg_cost = (n > 0).then(|| self.costs.iter().sum::<f64>() / n as f64);
        let mean_charge = self
            .charge_sums
            .iter()
            .map(|s| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        RunMetrics {
            avg_cost,
            cost_series: self.costs,
            battery_series: self.battery,
            mean_charge,
            violations: self.violations,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }
}
