//! Reproducible stochastic traces of prices, channels and renewable arrivals.
//!
//! A [`Trace`] holds `N` coarse intervals and `N*T` slots drawn from a
//! seeded ChaCha stream, so every algorithm can be replayed on identical
//! randomness. Traces serialize to a versioned JSON document.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::conic::is_servable;
use crate::model::{
    ChannelState, ComplexMatrix, IntervalRandomness, ModelError, NetworkConfig, SlotRandomness,
};

pub const TRACE_VERSION: u32 = 1;

const LAYOUT_NOTE: &str = "H_re[k][r] / H_im[k][r]: column k is user k; row r = i*M + m \
(BS-major stacking of antenna m at BS i). res[i] is the renewable energy of BS i over the \
whole interval; single-timescale slots receive res[i]/T each.";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed trace: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trace version {found} not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("inconsistent trace: {0}")]
    Inconsistent(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub mean_buy_rt: f64,
    pub mean_buy_lt: f64,
    pub sell_ratio_rt: f64,
    pub sell_ratio_lt: f64,
    pub price_rel_std: f64,
    /// Mean renewable arrival per BS per slot.
    pub res_rate: f64,
    pub res_rel_std: f64,
    /// Truncation level of every buying price; the controllers use it as the
    /// worst-case price.
    pub price_cap: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            mean_buy_rt: 2.3,
            mean_buy_lt: 1.5,
            sell_ratio_rt: 0.3,
            sell_ratio_lt: 0.9,
            price_rel_std: 0.75,
            res_rate: 1.6,
            res_rel_std: 0.25,
            price_cap: 3.0 * 2.3,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScenarioError::InvalidParams(m.to_string()));
        if !(self.mean_buy_rt > 0.0 && self.mean_buy_lt > 0.0) {
            return bad("mean prices must be positive");
        }
        if self.mean_buy_lt > self.mean_buy_rt {
            return bad("ahead-of-time mean price must not exceed the real-time mean");
        }
        for r in [self.sell_ratio_rt, self.sell_ratio_lt] {
            if !(r > 0.0 && r <= 1.0) {
                return bad("sell ratios must lie in (0, 1]");
            }
        }
        if !(self.price_rel_std >= 0.0 && self.res_rel_std >= 0.0) {
            return bad("relative deviations must be nonnegative");
        }
        if !(self.res_rate >= 0.0) {
            return bad("harvest rate must be nonnegative");
        }
        if !(self.price_cap.is_finite() && self.price_cap > self.mean_buy_rt) {
            return bad("price cap must be finite and above the real-time mean");
        }
        Ok(())
    }

    /// Lowest selling price the generator can produce. Folded normals reach
    /// down to zero, so this is zero whenever prices vary.
    pub fn sell_floor(&self) -> f64 {
        if self.price_rel_std == 0.0 {
            (self.mean_buy_rt * self.sell_ratio_rt).min(self.mean_buy_lt * self.sell_ratio_lt)
        } else {
            0.0
        }
    }
}

/// Mean of `|X|` for `X ~ N(mu, (rel_std*mu)^2)`, divided by `mu`.
fn folded_mean_factor(rel_std: f64) -> f64 {
    if rel_std == 0.0 {
        return 1.0;
    }
    let inv = 1.0 / rel_std;
    // 1 - 2*Phi(-1/r) = 1 - erfc(1/(r*sqrt 2))
    rel_std * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * inv * inv).exp() + 1.0
        - erfc(inv / std::f64::consts::SQRT_2)
}

/// Draws `min(|X|, cap)` where `X ~ N(mu, (rel_std*mu)^2)` and `mu` is
/// calibrated so that the untruncated folded mean equals `mean`.
pub fn draw_folded_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    rel_std: f64,
    cap: f64,
) -> Result<f64> {
    if !(mean > 0.0) {
        return Err(ScenarioError::InvalidParams(format!(
            "folded normal mean {mean} must be positive"
        )));
    }
    if !(rel_std >= 0.0 && cap > 0.0) {
        return Err(ScenarioError::InvalidParams(
            "rel_std must be >= 0 and cap > 0".into(),
        ));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(folded_from_standard(z, mean, rel_std, cap))
}

fn folded_from_standard(z: f64, mean: f64, rel_std: f64, cap: f64) -> f64 {
    if rel_std == 0.0 {
        return mean.min(cap);
    }
    let mu = mean / folded_mean_factor(rel_std);
    (mu + rel_std * mu * z).abs().min(cap)
}

/// I.i.d. `CN(0, 1)` channel entries.
pub fn draw_channels<R: Rng + ?Sized>(rng: &mut R, cfg: &NetworkConfig) -> ChannelState {
    let part = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let rows = cfg.total_antennas();
    let mut h = ComplexMatrix::zeros(rows, cfg.num_users);
    for k in 0..cfg.num_users {
        for z in h.column_mut(k) {
            *z = Complex64::new(part.sample(rng), part.sample(rng));
        }
    }
    ChannelState::new(h)
}

/// Materialized randomness for one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: NetworkConfig,
    pub params: ScenarioParams,
    pub intervals: Vec<IntervalRandomness>,
    pub slots: Vec<SlotRandomness>,
}

impl Trace {
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn interval_of(&self, slot: usize) -> usize {
        slot / self.config.interval_len
    }

    /// Replaces the network configuration, keeping the drawn randomness.
    /// Dimensions must not change.
    pub fn with_config(mut self, cfg: NetworkConfig) -> Result<Self> {
        if cfg.total_antennas() != self.config.total_antennas()
            || cfg.num_users != self.config.num_users
            || cfg.interval_len != self.config.interval_len
        {
            return Err(ScenarioError::Inconsistent(
                "configuration changes trace dimensions".into(),
            ));
        }
        self.config = cfg;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let t = self.config.interval_len;
        if self.slots.len() != self.intervals.len() * t {
            return Err(ScenarioError::Inconsistent(format!(
                "{} slots for {} intervals of length {t}",
                self.slots.len(),
                self.intervals.len()
            )));
        }
        for iv in &self.intervals {
            iv.prices().check()?;
            if iv.res_arrivals.len() != self.config.num_bs {
                return Err(ScenarioError::Inconsistent(
                    "interval harvest length".into(),
                ));
            }
        }
        for s in &self.slots {
            s.prices().check()?;
            s.channels.check(&self.config)?;
            if !s.channels.h.is_finite() {
                return Err(ScenarioError::Inconsistent(
                    "non-finite channel entry".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TraceFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ScenarioError::Inconsistent("missing version field".into()))?;
        if found != TRACE_VERSION as u64 {
            return Err(ScenarioError::Version {
                found,
                expected: TRACE_VERSION,
            });
        }
        let file: TraceFile = serde_json::from_value(raw)?;
        let trace = file.into_trace()?;
        trace.validate()?;
        Ok(trace)
    }

    /// SHA-256 of the serialized trace, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

pub fn save_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<()> {
    sink.write_all(trace.to_json()?.as_bytes())?;
    sink.flush()?;
    Ok(())
}

pub fn load_trace<R: Read>(mut source: R) -> Result<Trace> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    Trace::from_json(&text)
}

/// Draws `num_intervals` intervals and the slots inside them.
pub fn generate_trace(
    cfg: &NetworkConfig,
    params: &ScenarioParams,
    num_intervals: usize,
) -> Result<Trace> {
    cfg.validate()?;
    params.validate()?;
    if num_intervals == 0 {
        return Err(ScenarioError::InvalidParams(
            "need at least one interval".into(),
        ));
    }
    let t = cfg.interval_len;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // Replacement channels come from their own stream so that a rejection
    // never shifts the main draw sequence.
    let mut redraw = ChaCha8Rng::seed_from_u64(params.seed);
    redraw.set_stream(1);
    let cap = params.price_cap;
    let mut intervals = Vec::with_capacity(num_intervals);
    let mut slots = Vec::with_capacity(num_intervals * t);
    for _ in 0..num_intervals {
        let alpha_lt = draw_folded_normal(&mut rng, params.mean_buy_lt, params.price_rel_std, cap)?;
        let res: Vec<f64> = (0..cfg.num_bs)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if params.res_rate == 0.0 {
                    0.0
                } else {
                    folded_from_standard(
                        z,
                        t as f64 * params.res_rate,
                        params.res_rel_std,
                        f64::INFINITY,
                    )
                }
            })
            .collect();
        let per_slot: Vec<f64> = res.iter().map(|a| a / t as f64).collect();
        intervals.push(IntervalRandomness {
            buy_price_lt: alpha_lt,
            sell_price_lt: params.sell_ratio_lt * alpha_lt,
            res_arrivals: res,
        });
        for _ in 0..t {
            let alpha_rt =
                draw_folded_normal(&mut rng, params.mean_buy_rt, params.price_rel_std, cap)?;
            slots.push(SlotRandomness {
                buy_price: alpha_rt,
                sell_price: params.sell_ratio_rt * alpha_rt,
                channels: servable_channels(draw_channels(&mut rng, cfg), &mut redraw, cfg)?,
                res_arrivals: per_slot.clone(),
            });
        }
    }
    Ok(Trace {
        config: cfg.clone(),
        params: params.clone(),
        intervals,
        slots,
    })
}

const MAX_REDRAWS: usize = 10_000;

/// Keeps `first` if the SINR targets can be met within the power caps,
/// otherwise redraws until they can.
fn servable_channels(
    first: ChannelState,
    redraw: &mut ChaCha8Rng,
    cfg: &NetworkConfig,
) -> Result<ChannelState> {
    let mut h = first;
    for _ in 0..MAX_REDRAWS {
        if is_servable(cfg, &h) {
            return Ok(h);
        }
        h = draw_channels(redraw, cfg);
    }
    Err(ScenarioError::InvalidParams(format!(
        "no servable channel found in {MAX_REDRAWS} draws; SINR targets too high for the power cap"
    )))
}

#[derive(Serialize, Deserialize)]
struct IntervalRecord {
    alpha_lt: f64,
    beta_lt: f64,
    res: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SlotRecord {
    alpha_rt: f64,
    beta_rt: f64,
    H_re: Vec<Vec<f64>>,
    H_im: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    version: u32,
    layout: String,
    config: NetworkConfig,
    params: ScenarioParams,
    intervals: Vec<IntervalRecord>,
    slots: Vec<SlotRecord>,
}

impl From<&Trace> for TraceFile {
    fn from(trace: &Trace) -> Self {
        let intervals = trace
            .intervals
            .iter()
            .map(|iv| IntervalRecord {
                alpha_lt: iv.buy_price_lt,
                beta_lt: iv.sell_price_lt,
                res: iv.res_arrivals.clone(),
            })
            .collect();
        let slots = trace
            .slots
            .iter()
            .map(|s| {
                let h = &s.channels.h;
                let cols = 0..h.cols();
                SlotRecord {
                    alpha_rt: s.buy_price,
                    beta_rt: s.sell_price,
                    H_re: cols
                        .clone()
                        .map(|k| h.column(k).iter().map(|z| z.re).collect())
                        .collect(),
                    H_im: cols
                        .map(|k| h.column(k).iter().map(|z| z.im).collect())
                        .collect(),
                }
            })
            .collect();
        Self {
            version: TRACE_VERSION,
            layout: LAYOUT_NOTE.to_string(),
            config: trace.config.clone(),
            params: trace.params.clone(),
            intervals,
            slots,
        }
    }
}

impl TraceFile {
    fn into_trace(self) -> Result<Trace> {
        let cfg = self.config;
        cfg.validate()?;
        let t = cfg.interval_len;
        let rows = cfg.total_antennas();
        if self.slots.len() != self.intervals.len() * t {
            return Err(ScenarioError::Inconsistent(
                "slot count does not match intervals".into(),
            ));
        }
        let mut slots = Vec::with_capacity(self.slots.len());
        for (idx, rec) in self.slots.into_iter().enumerate() {
            if rec.H_re.len() != cfg.num_users || rec.H_im.len() != cfg.num_users {
                return Err(ScenarioError::Inconsistent(format!(
                    "slot {idx}: wrong number of channel columns"
                )));
            }
            let mut h = ComplexMatrix::zeros(rows, cfg.num_users);
            for (k, (re, im)) in rec.H_re.iter().zip(&rec.H_im).enumerate() {
                if re.len() != rows || im.len() != rows {
                    return Err(ScenarioError::Inconsistent(format!(
                        "slot {idx}: wrong channel column length"
                    )));
                }
                for (r, (a, b)) in re.iter().zip(im).enumerate() {
                    h.set(r, k, Complex64::new(*a, *b));
                }
            }
            let res = &self.intervals[idx / t].res;
            slots.push(SlotRandomness {
                buy_price: rec.alpha_rt,
                sell_price: rec.beta_rt,
                channels: ChannelState::new(h),
                res_arrivals: res.iter().map(|a| a / t as f64).collect(),
            });
        }
        let intervals = self
            .intervals
            .into_iter()
            .map(|r| IntervalRandomness {
                buy_price_lt: r.alpha_lt,
                sell_price_lt: r.beta_lt,
                res_arrivals: r.res,
            })
            .collect();
        Ok(Trace {
            config: cfg,
            params: self.params,
            intervals,
            slots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NetworkConfig {
        NetworkConfig::default()
    }

    #[test]
    fn degenerate_folded_normal_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(
                draw_folded_normal(&mut rng, 1.6, 0.0, f64::INFINITY).unwrap(),
                1.6
            );
        }
    }

    #[test]
    fn folded_normal_respects_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            assert!(draw_folded_normal(&mut rng, 2.3, 0.5, 2.3).unwrap() <= 2.3);
        }
    }

    #[test]
    fn folded_normal_rejects_bad_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(draw_folded_normal(&mut rng, 0.0, 0.2, 1.0).is_err());
        assert!(draw_folded_normal(&mut rng, -1.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn folded_normal_monte_carlo_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        for rel in [0.25, 0.5, 1.0] {
            let sum: f64 = (0..n)
                .map(|_| draw_folded_normal(&mut rng, 1.6, rel, f64::INFINITY).unwrap())
                .sum();
            let mean = sum / n as f64;
            assert!((mean - 1.6).abs() < 0.016, "rel_std {rel}: mean {mean}");
        }
    }

    #[test]
    fn channel_moments() {
        let cfg = NetworkConfig {
            num_users: 1000,
            sinr_targets: vec![1.0; 1000],
            noise_vars: vec![1.0; 1000],
            num_bs: 10,
            num_antennas: 100,
            ..NetworkConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = draw_channels(&mut rng, &cfg).h;
        let n = (h.rows() * h.cols()) as f64;
        let power = h.frobenius_sq() / n;
        assert!((power - 1.0).abs() < 0.01, "E|h|^2 = {power}");
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 0..h.cols() {
            sum += h.column(k).iter().sum::<Complex64>();
        }
        // each part has variance 1/2, so the mean has std sqrt(1/(2n))
        let band = 3.0 * (0.5 / n).sqrt();
        assert!((sum.re / n).abs() < band && (sum.im / n).abs() < band);

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let small = NetworkConfig::default();
        assert_eq!(draw_channels(&mut a, &small), draw_channels(&mut b, &small));
    }

    #[test]
    fn trace_shape_and_ratios() {
        let trace = generate_trace(&small_cfg(), &ScenarioParams::default(), 1).unwrap();
        assert_eq!(trace.intervals.len(), 1);
        assert_eq!(trace.slots.len(), 5);

        let trace = generate_trace(&small_cfg(), &ScenarioParams::default(), 40).unwrap();
        for iv in &trace.intervals {
            assert_eq!(iv.sell_price_lt, 0.9 * iv.buy_price_lt);
            assert!(iv.sell_price_lt > 0.0);
        }
        for s in &trace.slots {
            assert_eq!(s.sell_price, 0.3 * s.buy_price);
            assert!(s.buy_price <= ScenarioParams::default().price_cap);
        }
        assert!(generate_trace(&small_cfg(), &ScenarioParams::default(), 0).is_err());
    }

    #[test]
    fn slots_are_servable_and_prices_ignore_rejections() {
        let params = ScenarioParams {
            seed: 3,
            ..Default::default()
        };
        let hard = small_cfg().with_sinr_db(9.0);
        let a = generate_trace(&hard, &params, 20).unwrap();
        let b = generate_trace(&small_cfg().with_sinr_db(1.0), &params, 20).unwrap();
        assert!(a.slots.iter().all(|s| is_servable(&hard, &s.channels)));
        // rejections at the higher target must not shift any other draw
        let prices = |t: &Trace| t.slots.iter().map(|s| s.buy_price).collect::<Vec<_>>();
        assert_eq!(prices(&a), prices(&b));
        assert_eq!(a.intervals, b.intervals);
        assert!(a
            .slots
            .iter()
            .zip(&b.slots)
            .any(|(x, y)| x.channels != y.channels));
    }

    #[test]
    fn sample_means_converge() {
        let params = ScenarioParams::default();
        let trace = generate_trace(&small_cfg(), &params, 4000).unwrap();
        let rt: Vec<f64> = trace.slots.iter().map(|s| s.buy_price).collect();
        let lt: Vec<f64> = trace.intervals.iter().map(|i| i.buy_price_lt).collect();
        let res: Vec<f64> = trace
            .intervals
            .iter()
            .map(|i| i.res_arrivals[0] / 5.0)
            .collect();
        for (xs, target) in [(rt, 2.3), (lt, 1.5), (res, 1.6)] {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(
                (mean - target).abs() < 3.0 * se,
                "mean {mean} vs {target} (se {se})"
            );
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let trace = generate_trace(
            &small_cfg(),
            &ScenarioParams {
                seed: 17,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        save_trace(&trace, &mut buf).unwrap();
        let back = load_trace(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.to_json().unwrap().as_bytes(), buf.as_slice());

        let again = generate_trace(
            &small_cfg(),
            &ScenarioParams {
                seed: 17,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(again.checksum().unwrap(), trace.checksum().unwrap());
    }

    #[test]
    fn truncated_and_versioned_inputs_fail() {
        let trace = generate_trace(&small_cfg(), &ScenarioParams::default(), 1).unwrap();
        let text = trace.to_json().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            Trace::from_json(cut),
            Err(ScenarioError::Parse(_))
        ));

        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            Trace::from_json(&bumped),
            Err(ScenarioError::Version { found: 7, .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(ScenarioParams::default().validate().is_ok());
        let p = ScenarioParams {
            mean_buy_lt: 3.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = ScenarioParams {
            sell_ratio_rt: 1.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = ScenarioParams {
            price_cap: 2.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
