#![allow(dead_code)]

use comp_energy::model::{
    ChannelState, ComplexMatrix, IntervalRandomness, NetworkConfig, SlotRandomness,
};
use comp_energy::scenario::{generate_trace, ScenarioParams, Trace};
use num_complex::Complex64;

pub fn default_trace(seed: u64, intervals: usize) -> Trace {
    let params = ScenarioParams {
        seed,
        ..ScenarioParams::default()
    };
    generate_trace(&NetworkConfig::default(), &params, intervals).expect("default scenario")
}

/// Channels where user k hears only antenna k of BS 0 with unit gain, so
/// every target is met by power `gamma * sigma^2` on that antenna.
pub fn orthogonal_channels(cfg: &NetworkConfig) -> ChannelState {
    let n = cfg.total_antennas();
    let cols: Vec<Vec<Complex64>> = (0..cfg.num_users)
        .map(|k| {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            col[k % n] = Complex64::new(1.0, 0.0);
            col
        })
        .collect();
    ChannelState::new(ComplexMatrix::from_columns(n, &cols))
}

/// One slot repeated: fixed prices, harvest and channels everywhere.
pub fn constant_trace(
    cfg: &NetworkConfig,
    intervals: usize,
    rt: (f64, f64),
    lt: (f64, f64),
    harvest_per_slot: f64,
    channels: ChannelState,
) -> Trace {
    let t = cfg.interval_len;
    let slot = SlotRandomness {
        buy_price: rt.0,
        sell_price: rt.1,
        channels,
        res_arrivals: vec![harvest_per_slot; cfg.num_bs],
    };
    let params = ScenarioParams {
        mean_buy_rt: rt.0,
        mean_buy_lt: lt.0.min(rt.0),
        price_rel_std: 0.0,
        res_rel_std: 0.0,
        res_rate: harvest_per_slot,
        price_cap: 3.0 * rt.0,
        ..ScenarioParams::default()
    };
    let trace = Trace {
        config: cfg.clone(),
        params,
        intervals: vec![
            IntervalRandomness {
                buy_price_lt: lt.0,
                sell_price_lt: lt.1,
                res_arrivals: vec![harvest_per_slot * t as f64; cfg.num_bs],
            };
            intervals
        ],
        slots: vec![slot; intervals * t],
    };
    trace.validate().expect("constructed trace is consistent");
    trace
}
