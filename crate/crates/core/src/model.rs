//! Domain types and closed-form physics/cost functions for a smart-grid
//! powered CoMP downlink.
//!
//! All energies are expressed in kWh per slot; transmit power enters the
//! energy balance directly in the same unit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack used when checking battery and power-cap bounds against
/// values produced by an interior-point solver.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("price ordering violated: buy {buy} < sell {sell}")]
    PriceOrder { buy: f64, sell: f64 },
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("BS {bs}: consumption {consumption} exceeds cap {cap} by {margin}")]
    PowerCap {
        bs: usize,
        consumption: f64,
        cap: f64,
        margin: f64,
    },
    #[error("battery level {level} outside [{min}, {max}]")]
    BatteryBounds { level: f64, min: f64, max: f64 },
    #[error("charge {charge} outside [{min}, {max}]")]
    ChargeBounds { charge: f64, min: f64, max: f64 },
    #[error("interval length must be at least 1")]
    IntervalLength,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Static problem data shared by every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_bs: usize,
    pub num_antennas: usize,
    pub num_users: usize,
    /// Linear SINR target per user.
    pub sinr_targets: Vec<f64>,
    pub noise_vars: Vec<f64>,
    pub circuit_power: f64,
    /// Per-BS cap on total consumption (circuit + transmit).
    pub max_consumption: f64,
    pub battery_min: f64,
    pub battery_max: f64,
    /// Largest discharge per slot (negative).
    pub charge_min: f64,
    /// Largest charge per slot (positive).
    pub charge_max: f64,
    /// Slots per coarse interval.
    pub interval_len: usize,
}

impl Default for NetworkConfig {
    /// Two BSs with two antennas each serving three users at 5 dB.
    fn default() -> Self {
        let k = 3;
        Self {
            num_bs: 2,
            num_antennas: 2,
            num_users: k,
            sinr_targets: vec![db_to_linear(5.0); k],
            noise_vars: vec![1.0; k],
            circuit_power: 1.0,
            max_consumption: 10.0,
            battery_min: 0.0,
            battery_max: 60.0,
            charge_min: -2.0,
            charge_max: 2.0,
            interval_len: 5,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl NetworkConfig {
    /// Total number of transmit antennas, i.e. rows of `H` and `W`.
    pub fn total_antennas(&self) -> usize {
        self.num_bs * self.num_antennas
    }

    /// Transmit-power budget per BS after the circuit power is paid.
    pub fn transmit_budget(&self) -> f64 {
        self.max_consumption - self.circuit_power
    }

    /// Largest single-slot battery move in either direction.
    pub fn max_charge_magnitude(&self) -> f64 {
        self.charge_max.max(-self.charge_min)
    }

    pub fn with_sinr_db(mut self, db: f64) -> Self {
        self.sinr_targets = vec![db_to_linear(db); self.num_users];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.num_bs == 0 || self.num_antennas == 0 {
            return bad("need at least one BS and one antenna");
        }
        if self.sinr_targets.len() != self.num_users || self.noise_vars.len() != self.num_users {
            return bad("per-user vectors must have num_users entries");
        }
        if self
            .sinr_targets
            .iter()
            .any(|g| !(g.is_finite() && *g > 0.0))
        {
            return bad("SINR targets must be positive");
        }
        if self.noise_vars.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("noise variances must be positive");
        }
        if !(self.battery_min <= self.battery_max) {
            return bad("battery_min must not exceed battery_max");
        }
        if !(self.charge_min < 0.0 && self.charge_max > 0.0) {
            return bad("charge bounds must straddle zero");
        }
        if !(self.circuit_power > 0.0) {
            return bad("circuit power must be positive");
        }
        if !(self.max_consumption > self.circuit_power) {
            return bad("max_consumption must exceed circuit power");
        }
        if self.interval_len == 0 {
            return Err(ModelError::IntervalLength);
        }
        Ok(())
    }
}

/// Dense complex matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Builds a matrix from its columns; every column must have the same length.
    pub fn from_columns(rows: usize, columns: &[Vec<Complex64>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (k, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows, "column {k} has wrong length");
            m.column_mut(k).copy_from_slice(col);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn column_mut(&mut self, k: usize) -> &mut [Complex64] {
        &mut self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.rows + row]
    }

    pub fn set(&mut self, row: usize, col: usize, v: Complex64) {
        self.data[col * self.rows + row] = v;
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(ModelError::Shape {
                expected_rows: rows,
                expected_cols: cols,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// `h^H w` for two equally long complex vectors.
pub fn inner(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

/// Channel matrix `H`; column `k` stacks the per-BS channel vectors of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: ComplexMatrix,
}

impl ChannelState {
    pub fn new(h: ComplexMatrix) -> Self {
        Self { h }
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        self.h.check_shape(cfg.total_antennas(), cfg.num_users)
    }
}

/// Beamforming matrix `W`; column `k` is the cooperative beamformer of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformers {
    pub w: ComplexMatrix,
}

impl Beamformers {
    pub fn new(w: ComplexMatrix) -> Self {
        Self { w }
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        Self::new(ComplexMatrix::zeros(cfg.total_antennas(), cfg.num_users))
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        self.w.check_shape(cfg.total_antennas(), cfg.num_users)
    }
}

/// One buy/sell price pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub buy: f64,
    pub sell: f64,
}

impl Prices {
    pub fn new(buy: f64, sell: f64) -> Result<Self> {
        let p = Self { buy, sell };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.buy >= self.sell && self.sell >= 0.0) {
            return Err(ModelError::PriceOrder {
                buy: self.buy,
                sell: self.sell,
            });
        }
        Ok(())
    }
}

/// Fast-timescale randomness of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRandomness {
    pub buy_price: f64,
    pub sell_price: f64,
    pub channels: ChannelState,
    /// Renewable arrivals per BS, spread evenly over the slots of an interval.
    pub res_arrivals: Vec<f64>,
}

impl SlotRandomness {
    pub fn prices(&self) -> Prices {
        Prices {
            buy: self.buy_price,
            sell: self.sell_price,
        }
    }
}

/// Slow-timescale randomness of one coarse interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRandomness {
    pub buy_price_lt: f64,
    pub sell_price_lt: f64,
    /// Renewable arrivals per BS over the whole interval.
    pub res_arrivals: Vec<f64>,
}

impl IntervalRandomness {
    pub fn prices(&self) -> Prices {
        Prices {
            buy: self.buy_price_lt,
            sell: self.sell_price_lt,
        }
    }
}

/// Per-BS controller state carried across slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub battery: Vec<f64>,
    pub virtual_queue: Vec<f64>,
    pub perturbation: f64,
    pub penalty_weight: f64,
    /// Ahead-of-time purchase plan for the current interval (two-timescale only).
    pub plan: Vec<f64>,
}

impl ControllerState {
    pub fn new(battery: Vec<f64>, perturbation: f64, penalty_weight: f64) -> Self {
        let virtual_queue = battery.iter().map(|c| c + perturbation).collect();
        let n = battery.len();
        Self {
            battery,
            virtual_queue,
            perturbation,
            penalty_weight,
            plan: vec![0.0; n],
        }
    }

    /// Applies one slot of battery moves and refreshes the virtual queues.
    pub fn apply_charges(&mut self, charges: &[f64], cfg: &NetworkConfig) -> Result<()> {
        let next = self
            .battery
            .iter()
            .zip(charges)
            .map(|(&c, &pb)| battery_step(c, pb, cfg))
            .collect::<Result<Vec<_>>>()?;
        self.battery = next;
        for (q, c) in self.virtual_queue.iter_mut().zip(&self.battery) {
            *q = c + self.perturbation;
        }
        Ok(())
    }
}

/// Grid transaction cost of a net draw `u` (positive: buy at `buy`,
/// negative: sell at `sell`). Returns `max(buy*u, sell*u)`.
pub fn transaction_cost(net_draw: f64, buy: f64, sell: f64) -> Result<f64> {
    Prices::new(buy, sell)?;
    Ok(cost_unchecked(net_draw, buy, sell))
}

#[inline]
pub(crate) fn cost_unchecked(net_draw: f64, buy: f64, sell: f64) -> f64 {
    (buy * net_draw).max(sell * net_draw)
}

/// Transmit power of BS `i` (zero-based): `sum_k w_k^H B_i w_k`.
pub fn bs_power(w: &Beamformers, i: usize, cfg: &NetworkConfig) -> Result<f64> {
    w.check(cfg)?;
    if i >= cfg.num_bs {
        return Err(ModelError::Index {
            index: i,
            len: cfg.num_bs,
        });
    }
    let m = cfg.num_antennas;
    Ok((0..cfg.num_users)
        .map(|k| {
            w.w.column(k)[i * m..(i + 1) * m]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
        })
        .sum())
}

/// Circuit plus transmit power of BS `i`; errors when above the cap.
pub fn total_consumption(w: &Beamformers, i: usize, cfg: &NetworkConfig) -> Result<f64> {
    let consumption = cfg.circuit_power + bs_power(w, i, cfg)?;
    if consumption > cfg.max_consumption + FEASIBILITY_TOL {
        return Err(ModelError::PowerCap {
            bs: i,
            consumption,
            cap: cfg.max_consumption,
            margin: consumption - cfg.max_consumption,
        });
    }
    Ok(consumption)
}

/// SINR of user `k` under beamformers `w`.
pub fn sinr(h: &ChannelState, w: &Beamformers, k: usize, noise_var: f64) -> Result<f64> {
    let (rows, cols) = (h.h.rows(), h.h.cols());
    w.w.check_shape(rows, cols)?;
    if k >= cols {
        return Err(ModelError::Index {
            index: k,
            len: cols,
        });
    }
    let hk = h.h.column(k);
    let signal = inner(hk, w.w.column(k)).norm_sqr();
    let interference: f64 = (0..cols)
        .filter(|&l| l != k)
        .map(|l| inner(hk, w.w.column(l)).norm_sqr())
        .sum();
    Ok(signal / (interference + noise_var))
}

/// Advances one battery by `charge`. Never clamps: a result outside the
/// configured bounds (beyond [`FEASIBILITY_TOL`]) is an error.
pub fn battery_step(level: f64, charge: f64, cfg: &NetworkConfig) -> Result<f64> {
    if charge < cfg.charge_min - FEASIBILITY_TOL || charge > cfg.charge_max + FEASIBILITY_TOL {
        return Err(ModelError::ChargeBounds {
            charge,
            min: cfg.charge_min,
            max: cfg.charge_max,
        });
    }
    let next = level + charge;
    if next < cfg.battery_min - FEASIBILITY_TOL || next > cfg.battery_max + FEASIBILITY_TOL {
        return Err(ModelError::BatteryBounds {
            level: next,
            min: cfg.battery_min,
            max: cfg.battery_max,
        });
    }
    Ok(next)
}

/// Ahead-of-time leg: `max(buy*(E-A), sell*(E-A))` over one interval.
pub fn ahead_cost(plan: f64, harvest: f64, lt: Prices) -> Result<f64> {
    lt.check()?;
    Ok(cost_unchecked(plan - harvest, lt.buy, lt.sell))
}

/// Real-time leg with the plan spread evenly: net draw `P_g - E/T + P_b`.
pub fn realtime_cost(
    plan: f64,
    consumption: f64,
    charge: f64,
    rt: Prices,
    interval_len: usize,
) -> Result<f64> {
    rt.check()?;
    if interval_len == 0 {
        return Err(ModelError::IntervalLength);
    }
    let u = consumption - plan / interval_len as f64 + charge;
    Ok(cost_unchecked(u, rt.buy, rt.sell))
}

/// Per-slot cost of one BS in two-timescale mode: the ahead-of-time charge
/// amortized over the interval plus the real-time charge.
#[allow(clippy::too_many_arguments)]
pub fn slot_cost_mtep(
    plan: f64,
    harvest: f64,
    lt: Prices,
    rt: Prices,
    consumption: f64,
    charge: f64,
    interval_len: usize,
) -> Result<f64> {
    if interval_len == 0 {
        return Err(ModelError::IntervalLength);
    }
    let lt_leg = ahead_cost(plan, harvest, lt)? / interval_len as f64;
    Ok(lt_leg + realtime_cost(plan, consumption, charge, rt, interval_len)?)
}
