//! Energies, spacetime norms, local-energy norms, the L^8 partition and the
//! closed-form bound of the main theorem.
//!
//! Time integrals use the trapezoid rule over snapshot times; space integrals
//! use node sums. Both are positive quadratures, so Hölder-type inequalities
//! between the discrete norms hold exactly.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolve::Trajectory;
use crate::field::{gradient, lebesgue_norm, lebesgue_pow, partial};
use crate::grid::{japanese, node_max, node_sum, ScalarField, StateSlice};
use crate::metric::{pair_index, sample_metric, MetricSample, MetricSpec};

/// `-(1/(2 g^00)) g^ij d_i u d_j u + u_t^2/2 + u^6/6` at every node.
pub fn energy_density(state: &StateSlice, metric: &MetricSample) -> ScalarField {
    let grid = *state.grid();
    let g = gradient(&state.u);
    let (u, ut) = (state.u.values(), state.ut.values());
    let flat = metric.is_flat();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let grad_sq = if flat {
                let (a, b, c) = (g[0].values()[idx], g[1].values()[idx], g[2].values()[idx]);
                0.5 * (a * a + b * b + c * c)
            } else {
                let mut q = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        q += metric.gij[pair_index(i, j)].at(idx) * g[i].values()[idx] * g[j].values()[idx];
                    }
                }
                -q / (2.0 * metric.g00.at(idx))
            };
            let u2 = u[idx] * u[idx];
            grad_sq + 0.5 * ut[idx] * ut[idx] + u2 * u2 * u2 / 6.0
        })
        .collect();
    ScalarField::from_values(grid, values).expect("finite state gives finite energy")
}

pub fn total_energy(state: &StateSlice, metric: &MetricSample) -> f64 {
    let e = energy_density(state, metric);
    let v = e.values();
    node_sum(state.grid(), |i| v[i]) * state.grid().cell_volume()
}

/// Trapezoid weights for a strictly increasing time list.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let h = times[k] - times[k - 1];
        w[k - 1] += 0.5 * h;
        w[k] += 0.5 * h;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub q: f64,
    pub r: f64,
}

impl MixedNormSpec {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        let ok = |p: f64| p >= 1.0 || p == f64::INFINITY;
        if !ok(q) || !ok(r) {
            return Err(invalid(format!("mixed norm exponents must be >= 1, got ({q}, {r})")));
        }
        Ok(Self { q, r })
    }

    pub fn name(&self) -> String {
        let show = |p: f64| if p.is_infinite() { "inf".to_string() } else { format!("{p}") };
        format!("L{}_t L{}_x", show(self.q), show(self.r))
    }
}

/// `L^q_t` norm of the sampled series `values(t_k)` (trapezoid in time).
pub fn time_norm(times: &[f64], values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    let w = trapezoid_weights(times);
    w.iter()
        .zip(values)
        .map(|(w, v)| w * v.abs().powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}

/// `|| ||f(t)||_{L^r_x} ||_{L^q_t}` over explicit `(t, f(t))` samples.
pub fn mixed_norm_of(times: &[f64], fields: &[&ScalarField], spec: MixedNormSpec) -> Result<f64> {
    if times.len() != fields.len() {
        return Err(invalid("times and fields differ in length"));
    }
    if times.len() < 2 {
        return Err(invalid("a spacetime norm needs at least two snapshots"));
    }
    let spatial: Vec<f64> = fields
        .iter()
        .map(|f| lebesgue_norm(f, spec.r))
        .collect::<Result<_>>()?;
    Ok(time_norm(times, &spatial, spec.q))
}

/// `L^q_t L^r_x` norm of `u` over the trajectory.
pub fn mixed_norm(traj: &Trajectory, spec: MixedNormSpec) -> Result<f64> {
    let fields: Vec<&ScalarField> = traj.slices.iter().map(|s| &s.u).collect();
    mixed_norm_of(&traj.times, &fields, spec)
}

/// Both sides of `||u||_{L^5 L^10} <= ||u||_{L^8 L^8}^{2/5} ||u||_{L^4 L^12}^{3/5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterpolationCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl InterpolationCheck {
    /// `lhs <= rhs` up to relative floating-point slack.
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + slack)
    }
}

pub fn strichartz_interpolation(times: &[f64], fields: &[&ScalarField]) -> Result<InterpolationCheck> {
    let n = |q, r| mixed_norm_of(times, fields, MixedNormSpec { q, r });
    Ok(InterpolationCheck {
        lhs: n(5.0, 10.0)?,
        rhs: n(8.0, 8.0)?.powf(0.4) * n(4.0, 12.0)?.powf(0.6),
    })
}

/// `||N||_{L^8} <= ||N||_{L^inf}^{1/2} ||N||_{L^4}^{1/2}` over spacetime.
pub fn linf_l4_interpolation(times: &[f64], fields: &[&ScalarField]) -> Result<InterpolationCheck> {
    let n = |p| mixed_norm_of(times, fields, MixedNormSpec { q: p, r: p });
    Ok(InterpolationCheck {
        lhs: n(8.0)?,
        rhs: n(f64::INFINITY)?.sqrt() * n(4.0)?.sqrt(),
    })
}

fn spacetime_weighted_sum<F>(traj: &Trajectory, per_slice: F) -> f64
where
    F: Fn(&StateSlice) -> f64 + Sync + Send,
{
    let w = trapezoid_weights(&traj.times);
    let vals: Vec<f64> = traj.slices.par_iter().map(per_slice).collect();
    w.iter().zip(&vals).map(|(w, v)| w * v).sum()
}

/// `LE^1` norm: `(int int |d_{t,x} u|^2 <r>^{-1-g} + u^2 <r>^{-3-g} [+ u^6 <r>^{-1}])^{1/2}`.
pub fn le1_norm(traj: &Trajectory, gamma: f64, include_sextic: bool) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    if traj.is_empty() {
        return Ok(0.0);
    }
    let sq = spacetime_weighted_sum(traj, |s| {
        let grid = *s.grid();
        let g = gradient(&s.u);
        let (u, ut) = (s.u.values(), s.ut.values());
        node_sum(&grid, |idx| {
            let jr = japanese(grid.radius(idx));
            let d2 = ut[idx] * ut[idx]
                + g[0].values()[idx].powi(2)
                + g[1].values()[idx].powi(2)
                + g[2].values()[idx].powi(2);
            let u2 = u[idx] * u[idx];
            let mut v = d2 * jr.powf(-1.0 - gamma) + u2 * jr.powf(-3.0 - gamma);
            if include_sextic {
                v += u2 * u2 * u2 / jr;
            }
            v
        }) * grid.cell_volume()
    });
    Ok(sq.sqrt())
}

/// `LE^*` norm `(int int <r> |F|^2)^{1/2}` of sampled sources.
pub fn le_star_norm_of(times: &[f64], fields: &[&ScalarField]) -> Result<f64> {
    if times.len() != fields.len() {
        return Err(invalid("times and fields differ in length"));
    }
    let w = trapezoid_weights(times);
    let vals: Vec<f64> = fields
        .par_iter()
        .map(|f| {
            let grid = *f.grid();
            let v = f.values();
            node_sum(&grid, |idx| japanese(grid.radius(idx)) * v[idx] * v[idx]) * grid.cell_volume()
        })
        .collect();
    Ok(w.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>().sqrt())
}

/// `LE^*` norm of the `u` component of a trajectory holding a source `F`.
pub fn le_star_norm(f_traj: &Trajectory) -> Result<f64> {
    let fields: Vec<&ScalarField> = f_traj.slices.iter().map(|s| &s.u).collect();
    le_star_norm_of(&f_traj.times, &fields)
}

/// `(||u||_{LE^1}^2 + E(T2)) / E(T1)` with the sextic term included.
pub fn iled_ratio(traj: &Trajectory, gamma: f64) -> Result<f64> {
    iled_ratio_with(traj, gamma, true)
}

/// As [`iled_ratio`]; linear runs pass `sextic = false`, matching the
/// quadratic energy their diagnostics record.
pub fn iled_ratio_with(traj: &Trajectory, gamma: f64, sextic: bool) -> Result<f64> {
    let (Some(first), Some(last)) = (traj.scalars.first(), traj.scalars.last()) else {
        return Err(invalid("empty trajectory"));
    };
    if first.energy == 0.0 {
        if traj.slices.iter().all(|s| s.u.max_abs() == 0.0 && s.ut.max_abs() == 0.0) {
            return Ok(0.0);
        }
        return Err(Error::ZeroInitialEnergy);
    }
    let le = le1_norm(traj, gamma, sextic)?;
    Ok((le * le + last.energy) / first.energy)
}

/// Spatial multi-indices `(a, b, c)` with `a + b + c <= n`, each listed once.
pub fn spatial_multi_indices(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=n {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

fn apply_multi_index(f: &ScalarField, alpha: [usize; 3]) -> ScalarField {
    let mut out = f.clone();
    for (axis, &k) in alpha.iter().enumerate() {
        for _ in 0..k {
            out = partial(&out, axis);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighOrderEnergy {
    pub order: usize,
    pub times: Vec<f64>,
    /// `sum_{|a| <= N} 1/2 ||d_{t,x} d^a u(t)||^2` per snapshot.
    pub energies: Vec<f64>,
    /// `sup_t E_N(t) / E_N(T1)`; zero when `E_N(T1) = 0`.
    pub ratio: f64,
}

/// Higher-order energy over spatial multi-indices `|a| <= order`.
///
/// `d_t d^a u` is `d^a u_t` of the stored slice, which is exact for the
/// first-order system the solver integrates.
pub fn high_order_energy(traj: &Trajectory, order: usize) -> Result<HighOrderEnergy> {
    if order > 2 {
        return Err(invalid(format!("high-order energy supports N <= 2, got {order}")));
    }
    let alphas = spatial_multi_indices(order);
    let energies: Vec<f64> = traj
        .slices
        .par_iter()
        .map(|s| {
            alphas
                .iter()
                .map(|&a| {
                    let du = apply_multi_index(&s.u, a);
                    let dut = apply_multi_index(&s.ut, a);
                    let g = gradient(&du);
                    0.5 * (lebesgue_pow(&dut, 2.0) + g.iter().map(|c| lebesgue_pow(c, 2.0)).sum::<f64>())
                })
                .sum()
        })
        .collect();
    let base = energies.first().copied().unwrap_or(0.0);
    let ratio = if base == 0.0 {
        0.0
    } else {
        energies.iter().fold(0.0_f64, |m, &e| m.max(e)) / base
    };
    Ok(HighOrderEnergy {
        order,
        times: traj.times.clone(),
        energies,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionResult {
    /// Interior cut points `t_1 < ... < t_{M-1}`.
    pub endpoints: Vec<f64>,
    pub per_interval_l8: Vec<f64>,
    #[serde(rename = "M")]
    pub m: usize,
    /// Total `L^8_{t,x}` norm `B`.
    pub total_l8: f64,
}

/// Split the time range into intervals of `L^8_{t,x}` norm at most `eta`.
pub fn partition_by_l8(linear_traj: &Trajectory, eta: f64) -> Result<PartitionResult> {
    let l8: Vec<f64> = linear_traj.slices.iter().map(|s| lebesgue_pow(&s.u, 8.0)).collect();
    partition_series(&linear_traj.times, &l8, eta)
}

/// As [`partition_by_l8`], from the series `||v(t_k)||_{L^8}^8`.
pub fn partition_series(times: &[f64], l8_pow: &[f64], eta: f64) -> Result<PartitionResult> {
    if !(eta > 0.0) {
        return Err(invalid("eta must be positive"));
    }
    partition_by_level(times, l8_pow, eta.powi(8))
}

/// As [`partition_series`] with the level `eta^8` given directly.
pub fn partition_by_level(times: &[f64], l8_pow: &[f64], level: f64) -> Result<PartitionResult> {
    if !(level > 0.0) {
        return Err(invalid("level must be positive"));
    }
    if times.len() != l8_pow.len() || times.len() < 2 {
        return Err(invalid("need at least two matching samples"));
    }
    // cumulative F(t_k) by the trapezoid rule
    let mut cum = vec![0.0; times.len()];
    for k in 1..times.len() {
        cum[k] = cum[k - 1] + 0.5 * (times[k] - times[k - 1]) * (l8_pow[k] + l8_pow[k - 1]);
    }
    let total = *cum.last().unwrap();
    let ratio = total / level;
    let m = if (ratio - ratio.round()).abs() <= 1e-12 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    }
    .max(1.0) as usize;

    let mut endpoints = Vec::with_capacity(m.saturating_sub(1));
    for k in 1..m {
        let y = k as f64 * level;
        let i = cum.partition_point(|&c| c < y).clamp(1, cum.len() - 1);
        // F is quadratic on each step: F0 + h (g0 s + (g1 - g0) s^2 / 2)
        let h = times[i] - times[i - 1];
        let (g0, g1) = (l8_pow[i - 1], l8_pow[i]);
        let d = (y - cum[i - 1]) / h;
        let disc = (g0 * g0 + 2.0 * (g1 - g0) * d).max(0.0);
        let denom = g0 + disc.sqrt();
        let s = if denom > 0.0 { (2.0 * d / denom).clamp(0.0, 1.0) } else { 0.0 };
        endpoints.push(times[i - 1] + s * h);
    }

    // measure each interval with the exact integral of the piecewise-linear
    // interpolant of ||v||^8
    let interp = |t: f64| {
        let i = times.partition_point(|&s| s < t).clamp(1, times.len() - 1);
        let s = (t - times[i - 1]) / (times[i] - times[i - 1]);
        l8_pow[i - 1] + s * (l8_pow[i] - l8_pow[i - 1])
    };
    let integral = |a: f64, b: f64| {
        let mut knots = vec![a];
        knots.extend(times.iter().copied().filter(|&t| t > a && t < b));
        knots.push(b);
        knots.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (interp(w[0]) + interp(w[1]))).sum::<f64>()
    };
    let mut bounds = vec![times[0]];
    bounds.extend(&endpoints);
    bounds.push(*times.last().unwrap());
    let per_interval_l8 = bounds
        .windows(2)
        .map(|w| integral(w[0], w[1]).max(0.0).powf(0.125))
        .collect();
    Ok(PartitionResult {
        endpoints,
        per_interval_l8,
        m,
        total_l8: total.powf(0.125),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub value: f64,
    pub log_bound: f64,
    /// `E^{85/6} E^{13/14}` combined as `E^{634/42}`.
    pub e_power_634_42: f64,
}

pub const LOG_OVERFLOW: f64 = 700.0;

/// `C E^{4/7} A exp(C E^{85/6} E^{13/14} A^{11})`, evaluated in log space.
pub fn theorem_bound(inputs: BoundInputs) -> Result<BoundReport> {
    let log_bound = theorem_log_bound(inputs)?;
    let combined = inputs.e.powf(634.0 / 42.0);
    if log_bound > LOG_OVERFLOW || log_bound.is_nan() {
        return Err(Error::Overflow { log_bound });
    }
    Ok(BoundReport {
        value: log_bound.exp(),
        log_bound,
        e_power_634_42: combined,
    })
}

/// `ln C + (4/7) ln E + ln A + C E^{85/6} E^{13/14} A^{11}`, finite where the bound
/// itself overflows; `-inf` at `E = 0`.
pub fn theorem_log_bound(inputs: BoundInputs) -> Result<f64> {
    let BoundInputs { e, a, c } = inputs;
    if !(e >= 0.0 && a > 0.0 && c > 0.0) || !(e.is_finite() && a.is_finite() && c.is_finite()) {
        return Err(invalid(format!("bound needs E >= 0, A > 0, C > 0, got ({e}, {a}, {c})")));
    }
    if e == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let exponent = c * e.powf(85.0 / 6.0) * e.powf(13.0 / 14.0) * a.powi(11);
    Ok(c.ln() + 4.0 / 7.0 * e.ln() + a.ln() + exponent)
}

/// One row of the norms report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRow {
    pub name: String,
    pub q: f64,
    pub r: f64,
    pub value: f64,
    pub t_min: f64,
    pub t_max: f64,
}

pub fn norms_csv(rows: &[NormRow]) -> String {
    let mut out = String::from("name,q,r,value,t_min,t_max\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.name, r.q, r.r, r.value, r.t_min, r.t_max).unwrap();
    }
    out
}

/// The spacetime norms quoted in the scattering argument.
pub fn standard_norms(traj: &Trajectory) -> Result<Vec<NormRow>> {
    let specs = [
        (8.0, 8.0),
        (4.0, 12.0),
        (5.0, 10.0),
        (27.0, 162.0 / 25.0),
        (1.0, 2.0),
        (f64::INFINITY, 6.0),
        (f64::INFINITY, f64::INFINITY),
    ];
    specs
        .iter()
        .map(|&(q, r)| {
            let spec = MixedNormSpec::new(q, r)?;
            Ok(NormRow {
                name: spec.name(),
                q,
                r,
                value: mixed_norm(traj, spec)?,
                t_min: traj.t_min(),
                t_max: traj.t_max(),
            })
        })
        .collect()
}

/// Largest pointwise `|e_curved - e_flat| / |grad u|^2` over nodes where
/// the gradient is non-negligible.
pub fn energy_perturbation_ratio(state: &StateSlice, spec: &MetricSpec) -> Result<f64> {
    let grid = *state.grid();
    let curved = energy_density(state, &sample_metric(spec, &grid, state.t)?);
    let flat = energy_density(state, &sample_metric(&MetricSpec::flat(), &grid, state.t)?);
    let g = gradient(&state.u);
    let gmax = g.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
    let floor = 1e-12 * gmax * gmax;
    Ok(node_max(&grid, |idx| {
        let q: f64 = g.iter().map(|c| c.values()[idx].powi(2)).sum();
        if q > floor {
            (curved.values()[idx] - flat.values()[idx]).abs() / q
        } else {
            0.0
        }
    }))
}
