//! Brute-force reference solver for tiny slot problems, independent of the
//! conic formulation.
//!
//! For fixed transmit powers the charge of each BS is found exactly by
//! enumerating the breakpoints of its piecewise-linear objective. The
//! transmit powers are searched along the Pareto frontier of achievable
//! per-BS powers, traced by weighted sum-power minimization solved with the
//! uplink-downlink duality fixed point.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::slot::SlotInputs;
use super::ConicError;
use crate::model::{Beamformers, ChannelState, ComplexMatrix, NetworkConfig};

const FIXED_POINT_ITERS: usize = 20_000;
const COARSE_POINTS: usize = 128;
const LOGIT_RANGE: f64 = 15.0;

/// Beamformers minimizing a weighted sum of per-BS transmit powers while
/// meeting every SINR target with equality.
#[derive(Debug, Clone, PartialEq)]
pub struct MinPower {
    pub beamformers: Beamformers,
    pub powers: Vec<f64>,
}

/// Minimizes `sum_i weight_i * P_x,i` subject to the SINR targets (no
/// power caps). Returns `None` when the targets cannot be met.
pub fn weighted_min_power(
    cfg: &NetworkConfig,
    channels: &ChannelState,
    bs_weights: &[f64],
) -> Option<MinPower> {
    let (n, k, m) = (cfg.total_antennas(), cfg.num_users, cfg.num_antennas);
    if k == 0 {
        return Some(MinPower {
            beamformers: Beamformers::zeros(cfg),
            powers: vec![0.0; cfg.num_bs],
        });
    }
    let hs: Vec<DVector<Complex64>> = (0..k)
        .map(|u| DVector::from_column_slice(channels.h.column(u)))
        .collect();
    let diag = DMatrix::<Complex64>::from_diagonal(&DVector::from_fn(n, |r, _| {
        Complex64::new(bs_weights[r / m], 0.0)
    }));

    let covariance = |nu: &[f64]| {
        let mut s = diag.clone();
        for (h, &v) in hs.iter().zip(nu) {
            s += (h * h.adjoint()) * Complex64::new(v, 0.0);
        }
        s
    };

    let mut nu = vec![0.0; k];
    let mut converged = false;
    for _ in 0..FIXED_POINT_ITERS {
        let inv = covariance(&nu).cholesky()?.inverse();
        let next: Vec<f64> = (0..k)
            .map(|u| {
                let quad = (hs[u].adjoint() * &inv * &hs[u])[(0, 0)].re;
                1.0 / ((1.0 + 1.0 / cfg.sinr_targets[u]) * quad)
            })
            .collect();
        let change = next
            .iter()
            .zip(&nu)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
            .fold(0.0f64, f64::max);
        nu = next;
        if nu.iter().any(|v| !v.is_finite() || *v > 1e14) {
            return None;
        }
        if change < 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }

    let inv = covariance(&nu).cholesky()?.inverse();
    let dirs: Vec<DVector<Complex64>> = hs
        .iter()
        .map(|h| {
            let d = &inv * h;
            let norm = d.norm();
            d / Complex64::new(norm, 0.0)
        })
        .collect();
    let gain = |u: usize, l: usize| (hs[u].adjoint() * &dirs[l])[(0, 0)].norm_sqr();
    let system = DMatrix::<f64>::from_fn(k, k, |u, l| {
        if u == l {
            gain(u, u) / cfg.sinr_targets[u]
        } else {
            -gain(u, l)
        }
    });
    let noise = DVector::<f64>::from_column_slice(&cfg.noise_vars);
    let q = system.lu().solve(&noise)?;
    if q.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut w = ComplexMatrix::zeros(n, k);
    for u in 0..k {
        let scale = Complex64::new(q[u].sqrt(), 0.0);
        for (r, z) in dirs[u].iter().enumerate() {
            w.set(r, u, z * scale);
        }
    }
    let beamformers = Beamformers::new(w);
    let powers = (0..cfg.num_bs)
        .map(|i| crate::model::bs_power(&beamformers, i, cfg).unwrap_or(f64::INFINITY))
        .collect();
    Some(MinPower {
        beamformers,
        powers,
    })
}

/// Objective of the slot problem for fixed per-BS transmit powers, with the
/// charges chosen optimally. Infinite when a power exceeds its cap.
fn objective_for_powers(inputs: &SlotInputs, powers: &[f64]) -> f64 {
    let cfg = inputs.cfg;
    let (lo, hi) = inputs.limits();
    let mut total = 0.0;
    for (i, &p) in powers.iter().enumerate() {
        if p > cfg.transmit_budget() * (1.0 + 1e-12) {
            return f64::INFINITY;
        }
        // breakpoints: both ends and the charge making the net draw zero
        let kink = (inputs.supply[i] - cfg.circuit_power - p).clamp(lo, hi);
        total += [lo, hi, kink]
            .iter()
            .map(|&pb| inputs.bs_objective(i, p, pb))
            .fold(f64::INFINITY, f64::min);
    }
    total
}

fn objective_at_logit(inputs: &SlotInputs, s: f64) -> f64 {
    let w1 = 1.0 / (1.0 + (-s).exp());
    match weighted_min_power(inputs.cfg, inputs.channels, &[w1, 1.0 - w1]) {
        Some(mp) => objective_for_powers(inputs, &mp.powers),
        None => f64::INFINITY,
    }
}

/// Reference optimum of the slot problem for `I, M, K <= 2`.
///
/// Two-BS instances scan a fixed grid of Pareto weights and then run
/// `grid_density` golden-section refinements around the best grid point.
/// Every candidate is feasible, so the result never undercuts the true
/// optimum, and a larger `grid_density` only adds candidates.
pub fn oracle_solve(inputs: &SlotInputs, grid_density: usize) -> Result<f64, ConicError> {
    let cfg = inputs.cfg;
    if cfg.num_bs > 2 || cfg.num_antennas > 2 || cfg.num_users > 2 {
        return Err(ConicError::Guard(format!(
            "oracle limited to I, M, K <= 2 (got {}, {}, {})",
            cfg.num_bs, cfg.num_antennas, cfg.num_users
        )));
    }
    cfg.validate()?;
    inputs.channels.check(cfg)?;
    inputs.prices.check()?;

    let best = if cfg.num_bs == 1 {
        match weighted_min_power(cfg, inputs.channels, &[1.0]) {
            Some(mp) => objective_for_powers(inputs, &mp.powers),
            None => f64::INFINITY,
        }
    } else {
        let step = 2.0 * LOGIT_RANGE / COARSE_POINTS as f64;
        let grid: Vec<(f64, f64)> = (0..=COARSE_POINTS)
            .map(|j| {
                let s = -LOGIT_RANGE + step * j as f64;
                (s, objective_at_logit(inputs, s))
            })
            .collect();
        let (arg, mut best) = grid.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (j, &(_, v))| if v < acc.1 { (j, v) } else { acc },
        );
        if best.is_finite() {
            let (mut a, mut b) = (
                grid[arg.saturating_sub(1)].0,
                grid[(arg + 1).min(COARSE_POINTS)].0,
            );
            let ratio = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - ratio * (b - a);
            let mut d = a + ratio * (b - a);
            let (mut fc, mut fd) = (objective_at_logit(inputs, c), objective_at_logit(inputs, d));
            for _ in 0..grid_density {
                best = best.min(fc).min(fd);
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - ratio * (b - a);
                    fc = objective_at_logit(inputs, c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + ratio * (b - a);
                    fd = objective_at_logit(inputs, d);
                }
            }
            if grid_density > 0 {
                best = best.min(fc).min(fd);
            }
        }
        best
    };
    if best.is_finite() {
        Ok(best)
    } else {
        Err(ConicError::Infeasible)
    }
}
