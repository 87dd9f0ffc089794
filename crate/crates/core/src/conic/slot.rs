use std::ops::Range;

use num_complex::Complex64;

use super::program::{
    solve, Affine, ConicProgram, ConicSolution, ProgramBuilder, SolveStatus, SolverOptions,
};
use super::ConicError;
use crate::model::{Beamformers, ChannelState, ComplexMatrix, NetworkConfig, Prices};

/// Real linear maps from the stacked vector `[Re w; Im w]` to
/// `Re{h^H w}` and `Im{h^H w}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbedding {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl RealEmbedding {
    pub fn apply(&self, w: &[f64]) -> (f64, f64) {
        let dot = |a: &[f64]| a.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        (dot(&self.re), dot(&self.im))
    }

    fn re_expr(&self, offset: usize, scale: f64) -> Affine {
        let mut e = Affine::default();
        for (j, c) in self.re.iter().enumerate() {
            e = e.term(offset + j, scale * c);
        }
        e
    }

    fn im_expr(&self, offset: usize, scale: f64) -> Affine {
        let mut e = Affine::default();
        for (j, c) in self.im.iter().enumerate() {
            e = e.term(offset + j, scale * c);
        }
        e
    }
}

/// `Re = hr'wr + hi'wi`, `Im = hr'wi - hi'wr`.
pub fn embed_complex(h: &[Complex64]) -> RealEmbedding {
    let n = h.len();
    let mut re = vec![0.0; 2 * n];
    let mut im = vec![0.0; 2 * n];
    for (r, z) in h.iter().enumerate() {
        re[r] = z.re;
        re[n + r] = z.im;
        im[r] = -z.im;
        im[n + r] = z.re;
    }
    RealEmbedding { re, im }
}

/// Relative tightening of the SINR targets and power caps inside the
/// program, so that solutions within solver tolerance still pass the exact
/// checks of the model.
const TARGET_MARGIN: f64 = 1e-7;

/// Energy supplied to a BS in one slot: `fixed + scale * x[var]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supply {
    pub fixed: f64,
    pub var: Option<(usize, f64)>,
}

impl Supply {
    pub fn fixed(a: f64) -> Self {
        Self {
            fixed: a,
            var: None,
        }
    }
}

/// Variable and row indices of one slot inside a larger program.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBlock {
    /// Per user: `2*M*I` reals, `[Re w_k; Im w_k]`.
    pub users: Vec<Range<usize>>,
    pub charge: Vec<usize>,
    pub power: Vec<usize>,
    pub cost: Vec<usize>,
    pub buy_rows: Vec<usize>,
    pub sell_rows: Vec<usize>,
}

/// Appends the constraints of one slot. The cost epigraph variables satisfy
/// `cost_i >= weight * price * u_i` for both prices, with
/// `u_i = P_c + p_i - a_i + P_b,i`; the caller decides the objective.
#[allow(clippy::too_many_arguments)]
pub fn add_slot_block(
    b: &mut ProgramBuilder,
    tag: &str,
    cfg: &NetworkConfig,
    channels: &ChannelState,
    prices: Prices,
    supply: &[Supply],
    weight: f64,
    charge_limits: (f64, f64),
) -> SlotBlock {
    let (ni, m, k) = (cfg.num_bs, cfg.num_antennas, cfg.num_users);
    let n = ni * m;
    let users: Vec<Range<usize>> = (0..k)
        .map(|u| b.add_vars(format!("{tag}w[{u}]"), 2 * n))
        .collect();
    let charge: Vec<usize> = b.add_vars(format!("{tag}pb"), ni).collect();
    let power: Vec<usize> = b.add_vars(format!("{tag}p"), ni).collect();
    let cost: Vec<usize> = b.add_vars(format!("{tag}s"), ni).collect();

    let embeds: Vec<RealEmbedding> = (0..k)
        .map(|u| embed_complex(channels.h.column(u)))
        .collect();

    // Im{h_k^H w_k} = 0
    for u in 0..k {
        b.equal_zero(embeds[u].im_expr(users[u].start, 1.0));
    }

    // charge bounds and cost epigraphs
    let (lo, hi) = charge_limits;
    let mut buy_rows = Vec::with_capacity(ni);
    let mut sell_rows = Vec::with_capacity(ni);
    for i in 0..ni {
        b.nonneg(Affine::var(charge[i], -1.0).plus(hi));
        b.nonneg(Affine::var(charge[i], 1.0).plus(-lo));
        for (price, rows) in [(prices.buy, &mut buy_rows), (prices.sell, &mut sell_rows)] {
            // cost_i - weight*price*(P_c + p_i - a_i + P_b,i) >= 0
            let c = weight * price;
            let mut e = Affine::var(cost[i], 1.0)
                .term(power[i], -c)
                .term(charge[i], -c)
                .plus(-c * (cfg.circuit_power - supply[i].fixed));
            if let Some((var, scale)) = supply[i].var {
                e = e.term(var, c * scale);
            }
            rows.push(b.num_rows());
            b.nonneg(e);
        }
    }

    // ||(h_k^H w_l)_{l != k}, sigma_k|| <= Re{h_k^H w_k} / sqrt(gamma_k)
    for u in 0..k {
        let mut exprs = vec![embeds[u].re_expr(
            users[u].start,
            1.0 / (cfg.sinr_targets[u] * (1.0 + TARGET_MARGIN)).sqrt(),
        )];
        for l in (0..k).filter(|&l| l != u) {
            exprs.push(embeds[u].re_expr(users[l].start, 1.0));
            exprs.push(embeds[u].im_expr(users[l].start, 1.0));
        }
        exprs.push(Affine::constant(cfg.noise_vars[u].sqrt()));
        b.second_order(exprs);
    }

    // rotated-cone power epigraph ||(2 W_i, p_i - 1)|| <= p_i + 1, and the cap ||W_i|| <= sqrt(budget)
    let bs_entries = |i: usize| -> Vec<usize> {
        users
            .iter()
            .flat_map(|r| {
                let base = r.start;
                (i * m..(i + 1) * m).flat_map(move |row| [base + row, base + n + row])
            })
            .collect()
    };
    for i in 0..ni {
        let entries = bs_entries(i);
        let mut exprs = vec![Affine::var(power[i], 1.0).plus(1.0)];
        exprs.extend(entries.iter().map(|&j| Affine::var(j, 2.0)));
        exprs.push(Affine::var(power[i], 1.0).plus(-1.0));
        b.second_order(exprs);
        if !entries.is_empty() {
            let mut cap = vec![Affine::constant(
                (cfg.transmit_budget() * (1.0 - TARGET_MARGIN)).sqrt(),
            )];
            cap.extend(entries.iter().map(|&j| Affine::var(j, 1.0)));
            b.second_order(cap);
        }
    }

    SlotBlock {
        users,
        charge,
        power,
        cost,
        buy_rows,
        sell_rows,
    }
}

/// Inputs of the per-slot drift-plus-penalty problem
/// `min sum_i [weight * G(u_i) + queue_i * P_b,i]`.
#[derive(Debug, Clone, Copy)]
pub struct SlotInputs<'a> {
    pub cfg: &'a NetworkConfig,
    pub channels: &'a ChannelState,
    pub prices: Prices,
    /// Energy available per BS this slot (harvest, or planned purchase / T).
    pub supply: &'a [f64],
    pub weight: f64,
    pub queues: &'a [f64],
    /// Overrides the configured charge bounds, e.g. `(0, 0)` for no storage.
    pub charge_limits: Option<(f64, f64)>,
}

impl<'a> SlotInputs<'a> {
    pub fn new(
        cfg: &'a NetworkConfig,
        channels: &'a ChannelState,
        prices: Prices,
        supply: &'a [f64],
        weight: f64,
        queues: &'a [f64],
    ) -> Self {
        Self {
            cfg,
            channels,
            prices,
            supply,
            weight,
            queues,
            charge_limits: None,
        }
    }

    pub fn limits(&self) -> (f64, f64) {
        self.charge_limits
            .unwrap_or((self.cfg.charge_min, self.cfg.charge_max))
    }

    /// Objective contribution of one BS for given transmit power and charge.
    pub fn bs_objective(&self, i: usize, power: f64, charge: f64) -> f64 {
        let u = self.cfg.circuit_power + power - self.supply[i] + charge;
        self.weight * crate::model::cost_unchecked(u, self.prices.buy, self.prices.sell)
            + self.queues[i] * charge
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotProgram {
    pub program: ConicProgram,
    pub block: SlotBlock,
}

pub fn build_slot_program(inputs: &SlotInputs) -> Result<SlotProgram, ConicError> {
    let cfg = inputs.cfg;
    cfg.validate()?;
    inputs.channels.check(cfg)?;
    inputs.prices.check()?;
    if inputs.supply.len() != cfg.num_bs || inputs.queues.len() != cfg.num_bs {
        return Err(ConicError::Malformed(
            "supply and queues need one entry per BS".into(),
        ));
    }
    if !inputs
        .queues
        .iter()
        .chain(inputs.supply)
        .all(|v| v.is_finite())
        || !inputs.weight.is_finite()
    {
        return Err(ConicError::Malformed(
            "non-finite queue, supply or weight".into(),
        ));
    }
    let mut b = ProgramBuilder::new();
    let supply: Vec<Supply> = inputs.supply.iter().map(|&a| Supply::fixed(a)).collect();
    let block = add_slot_block(
        &mut b,
        "",
        cfg,
        inputs.channels,
        inputs.prices,
        &supply,
        inputs.weight,
        inputs.limits(),
    );
    for i in 0..cfg.num_bs {
        b.add_objective(block.cost[i], 1.0);
        b.add_objective(block.charge[i], inputs.queues[i]);
    }
    Ok(SlotProgram {
        program: b.build(),
        block,
    })
}

/// Decoded optimum of a slot program.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    pub beamformers: Beamformers,
    pub charges: Vec<f64>,
    /// Power epigraph values `p_i` (equal to the transmit power at the optimum).
    pub powers: Vec<f64>,
    pub objective: f64,
    /// Dual weight on the buying branch of each BS's cost epigraph; the
    /// selling branch carries `1 - buy_weight`.
    pub buy_weight: Vec<f64>,
    pub solution: ConicSolution,
}

impl SlotBlock {
    pub fn beamformers(&self, cfg: &NetworkConfig, x: &[f64]) -> Beamformers {
        let n = cfg.total_antennas();
        let mut w = ComplexMatrix::zeros(n, cfg.num_users);
        for (u, r) in self.users.iter().enumerate() {
            let v = &x[r.clone()];
            for row in 0..n {
                w.set(row, u, Complex64::new(v[row], v[n + row]));
            }
        }
        Beamformers::new(w)
    }
}

pub fn solve_slot(
    prog: &SlotProgram,
    cfg: &NetworkConfig,
    opts: SolverOptions,
) -> Result<SlotDecision, ConicError> {
    let sol = solve(&prog.program, opts)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(ConicError::Infeasible),
        SolveStatus::NumericalLimit => {
            return Err(ConicError::NumericalLimit {
                primal: sol.residuals.primal,
                dual: sol.residuals.dual,
                gap: sol.residuals.gap,
            })
        }
    }
    let blk = &prog.block;
    let buy_weight = blk
        .buy_rows
        .iter()
        .zip(&blk.sell_rows)
        .map(|(&rb, &rs)| {
            let (zb, zs) = (sol.z[rb].max(0.0), sol.z[rs].max(0.0));
            if zb + zs > 0.0 {
                zb / (zb + zs)
            } else {
                0.5
            }
        })
        .collect();
    Ok(SlotDecision {
        beamformers: blk.beamformers(cfg, &sol.x),
        charges: blk.charge.iter().map(|&j| sol.x[j]).collect(),
        powers: blk.power.iter().map(|&j| sol.x[j]).collect(),
        objective: sol.objective,
        buy_weight,
        solution: sol,
    })
}

/// Whether some beamformers meet every SINR target within the per-BS caps.
/// Numerical trouble counts as not servable.
pub fn is_servable(cfg: &NetworkConfig, channels: &ChannelState) -> bool {
    let zeros = vec![0.0; cfg.num_bs];
    let prices = Prices {
        buy: 0.0,
        sell: 0.0,
    };
    let mut inputs = SlotInputs::new(cfg, channels, prices, &zeros, 0.0, &zeros);
    inputs.charge_limits = Some((0.0, 0.0));
    build_slot_program(&inputs)
        .and_then(|p| solve_slot(&p, cfg, SolverOptions::default()))
        .is_ok()
}
