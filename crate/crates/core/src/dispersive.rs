//! Pointwise decay of the linear flow, the remote-past Duhamel term, and
//! pure-quadrature oracles for the two scalar integral lemmas behind the
//! decay estimates.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::evolve::{check_wrap, duhamel_integral, propagate_linear, rhs, SimConfig, Trajectory};
use crate::field::{gradient, inhomogeneous_sobolev_norm, partial, sobolev_l1_norm};
use crate::grid::{japanese, ScalarField, StateSlice};
use crate::metric::{sample_metric, MetricSpec};
use crate::norms::{linf_l4_interpolation, mixed_norm_of, InterpolationCheck, MixedNormSpec};
use crate::quadrature::integrate_pieces;

/// `|value(t)| ~ c <t - s>^p`, fitted by least squares in log-log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub s: f64,
    pub times: Vec<f64>,
    pub samples: Vec<f64>,
    pub p: f64,
    pub c: f64,
    /// RMS misfit of `ln |value|`.
    pub residual: f64,
    /// `||f||_{H^5} + ||g||_{H^4}` of the data.
    pub data_sobolev: f64,
    /// `||f||_{W^{4,1}} + ||g||_{W^{3,1}}` of the data.
    pub data_w41: f64,
}

impl DecayFit {
    pub fn fit(s: f64, times: &[f64], samples: &[f64]) -> Result<Self> {
        if times.len() < 4 || times.len() != samples.len() {
            return Err(invalid("a decay fit needs at least four samples"));
        }
        let xs: Vec<f64> = times.iter().map(|t| japanese(t - s).ln()).collect();
        let ys: Vec<f64> = samples.iter().map(|v| v.abs().ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let p = sxy / sxx;
        let b = my - p * mx;
        let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - b - p * x).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            s,
            times: times.to_vec(),
            samples: samples.to_vec(),
            p,
            c: b.exp(),
            residual,
            data_sobolev: 0.0,
            data_w41: 0.0,
        })
    }

    /// `t,sup_value,product_with_t`, the product taken with `t - s`.
    pub fn csv(&self) -> String {
        let mut out = String::from("t,sup_value,product_with_t\n");
        for (t, v) in self.times.iter().zip(&self.samples) {
            writeln!(out, "{t},{v},{}", v * (t - self.s)).unwrap();
        }
        out
    }
}

fn check_times(s: f64, times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t <= s) {
        return Err(invalid("sample times must increase strictly and exceed s"));
    }
    Ok(())
}

/// Linear propagation from `s` through each of `times` in order.
fn propagate_through<F>(data: &StateSlice, s: f64, times: &[f64], spec: &MetricSpec, sim: &SimConfig, mut f: F) -> Result<()>
where
    F: FnMut(&StateSlice) -> Result<()>,
{
    check_times(s, times)?;
    let grid = *data.grid();
    if !sim.allow_wrap {
        check_wrap(data.support_radius(0.0), times.last().copied().unwrap_or(s) - s, &grid)?;
    }
    // the wrap budget was checked once against the data support
    let seg = SimConfig {
        allow_wrap: true,
        ..*sim
    };
    let mut state = data.clone();
    state.t = s;
    for &t in times {
        state = propagate_linear(&state, state.t, t, spec, &seg)?;
        f(&state)?;
    }
    Ok(())
}

/// Sup over every derivative of total order `k` (space and mixed space-time).
pub fn derivative_sup(state: &StateSlice, spec: &MetricSpec, k: usize) -> Result<f64> {
    let grid = *state.grid();
    Ok(match k {
        0 => state.u.max_abs(),
        1 => gradient(&state.u)
            .iter()
            .map(ScalarField::max_abs)
            .fold(state.ut.max_abs(), f64::max),
        2 => {
            let metric = sample_metric(spec, &grid, state.t)?;
            let mut m = rhs(state, &metric, false)?.max_abs();
            let g = gradient(&state.u);
            for i in 0..3 {
                m = m.max(partial(&state.ut, i).max_abs());
                for j in i..3 {
                    m = m.max(partial(&g[i], j).max_abs());
                }
            }
            m
        }
        _ => return Err(invalid("derivative order must be 0, 1 or 2")),
    })
}

/// `||d^k S(t, s)(f, g)||_{L^inf}` at each time, fitted against `<t - s>`.
pub fn dispersive_decay_fit(
    data: &StateSlice,
    spec: &MetricSpec,
    s: f64,
    times: &[f64],
    k: usize,
    sim: &SimConfig,
) -> Result<DecayFit> {
    if k > 2 {
        return Err(invalid("derivative order must be 0, 1 or 2"));
    }
    let mut samples = Vec::with_capacity(times.len());
    propagate_through(data, s, times, spec, sim, |st| {
        samples.push(derivative_sup(st, spec, k)?);
        Ok(())
    })?;
    let mut fit = DecayFit::fit(s, times, &samples)?;
    fit.data_sobolev = inhomogeneous_sobolev_norm(&data.u, 5.0) + inhomogeneous_sobolev_norm(&data.ut, 4.0);
    fit.data_w41 = sobolev_l1_norm(&data.u, 4) + sobolev_l1_norm(&data.ut, 3);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InteriorRegion {
    /// `|x| <= t/2`.
    Cone,
    /// The node at the origin only.
    Origin,
}

/// Sup of `|u|` over the interior region at each time, from data at `s = 0`.
pub fn interior_decay_experiment(data: &StateSlice, spec: &MetricSpec, times: &[f64], sim: &SimConfig) -> Result<DecayFit> {
    interior_decay_in(data, spec, times, sim, InteriorRegion::Cone)
}

pub fn interior_decay_in(
    data: &StateSlice,
    spec: &MetricSpec,
    times: &[f64],
    sim: &SimConfig,
    region: InteriorRegion,
) -> Result<DecayFit> {
    let grid = *data.grid();
    let mut samples = Vec::with_capacity(times.len());
    propagate_through(data, 0.0, times, spec, sim, |st| {
        let u = st.u.values();
        let v = match region {
            InteriorRegion::Cone => (0..u.len())
                .filter(|&i| grid.radius(i) <= 0.5 * st.t)
                .fold(0.0_f64, |m, i| m.max(u[i].abs())),
            InteriorRegion::Origin => {
                let c = grid.n() / 2;
                st.u.get(c, c, c).abs()
            }
        };
        samples.push(v);
        Ok(())
    })?;
    DecayFit::fit(0.0, times, &samples)
}

/// Random `(tau, y)` pairs on stored snapshot times and grid nodes within
/// `radius_fraction` of the half extent.
pub fn sample_points(traj: &Trajectory, count: usize, radius_fraction: f64, seed: u64) -> Result<Vec<(f64, [f64; 3])>> {
    let grid = *traj.grid().ok_or_else(|| invalid("empty trajectory"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = radius_fraction * grid.half_extent();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = traj.times[rng.gen_range(0..traj.len())];
        let idx = rng.gen_range(0..grid.len());
        if grid.radius(idx) <= limit {
            out.push((t, grid.position(idx)));
        }
    }
    Ok(out)
}

/// `max |d_a(h^{ab} d_b phi)|(tau, y) <tau - s> <y>^{3+delta}` over the samples,
/// with analytic metric derivatives and discrete derivatives of `phi`.
/// Sample times snap to the nearest snapshot, points to the nearest node.
pub fn source_decay_check(traj: &Trajectory, spec: &MetricSpec, samples: &[(f64, [f64; 3])]) -> Result<f64> {
    if spec.is_flat() || samples.is_empty() {
        return Ok(0.0);
    }
    let grid = *traj.grid().ok_or_else(|| invalid("empty trajectory"))?;
    let s = traj.t_min();
    let nearest = |t: f64| {
        (0..traj.len())
            .min_by(|&a, &b| (traj.times[a] - t).abs().total_cmp(&(traj.times[b] - t).abs()))
            .unwrap()
    };
    let node = |x: [f64; 3]| {
        let k = |c: f64| ((c / grid.dx()).round() as i64 + grid.n() as i64 / 2).clamp(0, grid.n() as i64 - 1) as usize;
        grid.index(k(x[0]), k(x[1]), k(x[2]))
    };
    let mut by_slice: Vec<Vec<usize>> = vec![Vec::new(); traj.len()];
    for (i, &(t, x)) in samples.iter().enumerate() {
        by_slice[nearest(t)].push(node(x));
        let _ = i;
    }
    let mut worst = 0.0_f64;
    for (k, nodes) in by_slice.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let st = &traj.slices[k];
        let tau = traj.times[k];
        let metric = sample_metric(spec, &grid, tau)?;
        let utt = rhs(st, &metric, false)?;
        let g = gradient(&st.u);
        let lap: Vec<ScalarField> = (0..3).map(|i| partial(&g[i], i)).collect();
        for &idx in nodes {
            let y = grid.position(idx);
            let jet = spec.amplitude_jet(tau, y);
            let a = jet.value();
            let at = jet.derivative(&[1, 0, 0, 0]);
            let grad_a = [
                jet.derivative(&[0, 1, 0, 0]),
                jet.derivative(&[0, 0, 1, 0]),
                jet.derivative(&[0, 0, 0, 1]),
            ];
            let mut v = at * st.ut.values()[idx] + a * utt.values()[idx];
            for i in 0..3 {
                v += grad_a[i] * g[i].values()[idx] + a * lap[i].values()[idx];
            }
            let r = grid.radius(idx);
            worst = worst.max(v.abs() * japanese(tau - s) * japanese(r).powf(3.0 + spec.delta));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemotePast {
    pub l_inf: f64,
    pub l4: f64,
    pub l8: f64,
    pub interpolation: InterpolationCheck,
}

/// Norms over `[t0, t0 + W]` of `int_{t_min}^{t0 - T} S(t, tau)(0, u^5(tau)) dtau`.
pub fn remote_past_term(
    traj: &Trajectory,
    spec: &MetricSpec,
    t0: f64,
    window: f64,
    eval_window: f64,
    sim: &SimConfig,
) -> Result<RemotePast> {
    let start = traj.t_min();
    if !(t0 - window > start) {
        return Err(invalid(format!("t0 - T = {} must exceed the trajectory start", t0 - window)));
    }
    let step = sim.snapshot_dt;
    let count = (eval_window / step).round().max(1.0) as usize;
    let evals: Vec<f64> = (0..=count).map(|k| t0 + k as f64 * step).collect();
    let out = duhamel_integral(traj, spec, [start, t0 - window], &evals, sim)?;
    let fields: Vec<&ScalarField> = out.slices.iter().map(|s| &s.u).collect();
    let norm = |p: f64| mixed_norm_of(&out.times, &fields, MixedNormSpec { q: p, r: p });
    Ok(RemotePast {
        l_inf: norm(f64::INFINITY)?,
        l4: norm(4.0)?,
        l8: norm(8.0)?,
        interpolation: linf_l4_interpolation(&out.times, &fields)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelIntegral {
    pub value: f64,
    /// Quadrature error estimate plus the analytic tail bound.
    pub error_bound: f64,
    pub cutoff: f64,
}

/// `int_0^inf <tau>^{-1} <sign a + tau>^{-1-delta} dtau`, absolute tolerance 1e-8.
pub fn kernel_integral_oracle(a: f64, delta: f64, sign: i32) -> Result<f64> {
    Ok(kernel_integral(a, delta, sign)?.value)
}

pub fn kernel_integral(a: f64, delta: f64, sign: i32) -> Result<KernelIntegral> {
    if !(a >= 0.0) || !(delta > 0.0 && delta <= 1.0) || !(sign == 1 || sign == -1) {
        return Err(invalid("need a >= 0, 0 < delta <= 1, sign = +-1"));
    }
    let sa = sign as f64 * a;
    let f = |tau: f64| 1.0 / (japanese(tau) * japanese(sa + tau).powf(1.0 + delta));
    // for tau >= 2a + 1: <tau>^{-1} <= 1/tau and <tau - a> >= tau/2, so the
    // tail past L is at most 2^{1+delta} L^{-1-delta} / (1 + delta)
    let tail_tol: f64 = 1e-10;
    let tail = |l: f64| 2f64.powf(1.0 + delta) * l.powf(-1.0 - delta) / (1.0 + delta);
    let l = (2.0 * a + 1.0).max((2f64.powf(1.0 + delta) / ((1.0 + delta) * tail_tol)).powf(1.0 / (1.0 + delta)));
    let mut breaks = vec![0.0];
    let mut b = 1.0;
    while b < l {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(l);
    if sign < 0 && a > 0.0 {
        for x in [a - 1.0, a, a + 1.0] {
            if x > 0.0 && x < l {
                breaks.push(x);
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let q = integrate_pieces(f, &breaks, 1e-9);
    Ok(KernelIntegral {
        value: q.value,
        error_bound: q.error + tail(l),
        cutoff: l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderTail {
    /// `sup_r J(r) <T>^{1-delta}`.
    pub value: f64,
    pub sup: f64,
    pub argmax_r: f64,
    /// `t - argmax_r`, the centre of the dominant peak in `s`.
    pub argmax_s: f64,
}

/// `J(r) = int_0^{t0 - T} ds / (<t - s> <t - s - r>)`.
pub fn holder_tail_integral(t: f64, t0: f64, window: f64, r: f64) -> f64 {
    let upper = t0 - window;
    if upper <= 0.0 {
        return 0.0;
    }
    let f = |s: f64| 1.0 / (japanese(t - s) * japanese(t - s - r));
    let mut breaks = vec![0.0, upper];
    let peak = t - r;
    for d in [-10.0, -1.0, 0.0, 1.0, 10.0] {
        let x = peak + d;
        if x > 0.0 && x < upper {
            breaks.push(x);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // values scale like log(T)/t, so the tolerance follows 1/t
    integrate_pieces(f, &breaks, 1e-10 / japanese(t)).value
}

/// `count` evenly spaced radii covering `[0, 2t]`.
pub fn default_r_grid(t: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|k| 2.0 * t * k as f64 / (count - 1) as f64).collect()
}

/// Sup of `J(r)` over `r_grid`, refined by golden-section search around the
/// best grid point, times `<T>^{1-delta}`.
pub fn holder_tail_oracle(t: f64, t0: f64, window: f64, delta: f64, r_grid: &[f64]) -> Result<HolderTail> {
    if !(t > t0 && t0 > window && window > 0.0) {
        return Err(invalid("need t > t0 > T > 0"));
    }
    if !(delta > 0.0 && delta < 1.0) || r_grid.len() < 2 {
        return Err(invalid("need 0 < delta < 1 and at least two radii"));
    }
    let j = |r: f64| holder_tail_integral(t, t0, window, r);
    let vals: Vec<f64> = r_grid.iter().map(|&r| j(r)).collect();
    let best = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let mut lo = r_grid[best.saturating_sub(1)];
    let mut hi = r_grid[(best + 1).min(r_grid.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (j(x1), j(x2));
    for _ in 0..60 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = j(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = j(x1);
        }
    }
    let (mut r_best, mut sup) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    if vals[best] > sup {
        r_best = r_grid[best];
        sup = vals[best];
    }
    Ok(HolderTail {
        value: sup * japanese(window).powf(1.0 - delta),
        sup,
        argmax_r: r_best,
        argmax_s: t - r_best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InitialData;
    use crate::evolve::evolve;
    use crate::grid::Grid3;

    #[test]
    fn fit_recovers_power_law() {
        let t = [2.0, 4.0, 8.0, 16.0];
        let v: Vec<f64> = t.iter().map(|&t| 3.0 * japanese(t).powf(-1.3)).collect();
        let f = DecayFit::fit(0.0, &t, &v).unwrap();
        assert!((f.p + 1.3).abs() < 1e-12);
        assert!((f.c - 3.0).abs() < 1e-10);
        assert!(f.residual < 1e-12);
        assert!(DecayFit::fit(0.0, &t[..3], &v[..3]).is_err());
        assert!(f.csv().starts_with("t,sup_value,product_with_t\n"));
    }

    #[test]
    fn kernel_closed_form() {
        // delta = 1, a = 0: int_0^inf (1 + tau^2)^{-3/2} = 1
        let k = kernel_integral(0.0, 1.0, 1).unwrap();
        assert!((k.value - 1.0).abs() < 1e-8, "{}", k.value);
        assert!(k.error_bound < 1e-8);
        // both signs agree at a = 0
        let a = kernel_integral_oracle(0.0, 0.1, 1).unwrap();
        let b = kernel_integral_oracle(0.0, 0.1, -1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn kernel_decreases_in_a() {
        let vals: Vec<f64> = [0.0, 1.0, 10.0, 100.0]
            .iter()
            .map(|&a| kernel_integral_oracle(a, 0.1, 1).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn tail_vanishes_on_empty_interval() {
        assert_eq!(holder_tail_integral(10.0, 4.0, 4.0, 3.0), 0.0);
        let small = holder_tail_oracle(10.0, 4.0, 4.0 - 1e-6, 0.2, &default_r_grid(10.0, 50)).unwrap();
        assert!(small.sup < 1e-6);
    }

    #[test]
    fn tail_peak_is_interior() {
        let h = holder_tail_oracle(400.0, 200.0, 100.0, 0.2, &default_r_grid(400.0, 801)).unwrap();
        assert!(h.argmax_s > 0.0 && h.argmax_s < 100.0, "{h:?}");
        // grid refinement leaves the sup unchanged
        let h2 = holder_tail_oracle(400.0, 200.0, 100.0, 0.2, &default_r_grid(400.0, 1601)).unwrap();
        assert!((h.sup - h2.sup).abs() < 1e-3 * h.sup);
    }

    #[test]
    fn decay_fit_is_linear_in_amplitude() {
        let g = Grid3::new(32, 0.3).unwrap();
        let d = InitialData::Bump {
            amplitude: 0.5,
            radius: 1.5,
            center: [0.0; 3],
            velocity: 0.0,
        };
        let sim = SimConfig {
            snapshot_dt: 0.5,
            ..SimConfig::default()
        };
        let ts = [0.5, 1.0, 2.0, 2.5];
        let a = dispersive_decay_fit(&d.sample(&g).unwrap(), &MetricSpec::flat(), 0.0, &ts, 0, &sim).unwrap();
        let b = dispersive_decay_fit(&d.scaled(2.0).sample(&g).unwrap(), &MetricSpec::flat(), 0.0, &ts, 0, &sim).unwrap();
        assert!((b.c / a.c - 2.0).abs() < 1e-9);
        assert!((b.p - a.p).abs() < 1e-9);
        for k in [1, 2] {
            let f = dispersive_decay_fit(&d.sample(&g).unwrap(), &MetricSpec::flat(), 0.0, &ts, k, &sim).unwrap();
            assert!(f.samples.iter().all(|v| v.is_finite() && *v > 0.0));
        }
        assert!(dispersive_decay_fit(&d.sample(&g).unwrap(), &MetricSpec::flat(), 0.0, &[0.5, 1.0, 8.0, 9.0], 0, &sim).is_err());
    }

    #[test]
    fn origin_sup_bounded_by_cone_sup() {
        let g = Grid3::new(32, 0.3).unwrap();
        let d = InitialData::Bump {
            amplitude: 0.5,
            radius: 1.5,
            center: [0.0; 3],
            velocity: 0.0,
        };
        let sim = SimConfig {
            snapshot_dt: 0.5,
            ..SimConfig::default()
        };
        let ts = [0.5, 1.0, 2.0, 2.5];
        let st = d.sample(&g).unwrap();
        let cone = interior_decay_in(&st, &MetricSpec::flat(), &ts, &sim, InteriorRegion::Cone).unwrap();
        let origin = interior_decay_in(&st, &MetricSpec::flat(), &ts, &sim, InteriorRegion::Origin).unwrap();
        for (o, c) in origin.samples.iter().zip(&cone.samples) {
            assert!(o <= c);
        }
    }

    #[test]
    fn source_check_scales_with_epsilon() {
        let g = Grid3::new(32, 0.3).unwrap();
        let d = InitialData::default().sample(&g).unwrap();
        let sim = SimConfig {
            t_end: 1.0,
            snapshot_dt: 0.5,
            nonlinear: false,
            ..SimConfig::default()
        };
        let flat = evolve(&d, &MetricSpec::flat(), &sim).unwrap();
        let pts = sample_points(&flat, 200, 0.8, 7).unwrap();
        assert_eq!(source_decay_check(&flat, &MetricSpec::flat(), &pts).unwrap(), 0.0);
        let ratio = |eps: f64| {
            let spec = MetricSpec::static_bump(eps);
            let tr = evolve(&d, &spec, &sim).unwrap();
            source_decay_check(&tr, &spec, &pts).unwrap()
        };
        let (r1, r2) = (ratio(0.01), ratio(0.02));
        assert!(r1 > 0.0);
        assert!((r2 / r1 - 2.0).abs() < 0.1, "{r1} {r2}");
    }

    #[test]
    fn remote_past_zero_and_holder() {
        let g = Grid3::new(32, 0.3).unwrap();
        let sim = SimConfig {
            t_end: 2.0,
            snapshot_dt: 0.25,
            allow_wrap: true,
            ..SimConfig::default()
        };
        let z = evolve(&StateSlice::zeros(g, 0.0), &MetricSpec::flat(), &sim).unwrap();
        let r = remote_past_term(&z, &MetricSpec::flat(), 1.5, 0.5, 0.5, &sim).unwrap();
        assert_eq!((r.l_inf, r.l4, r.l8), (0.0, 0.0, 0.0));
        let d = InitialData::Bump {
            amplitude: 0.8,
            radius: 2.0,
            center: [0.0; 3],
            velocity: 0.0,
        };
        let tr = evolve(&d.sample(&g).unwrap(), &MetricSpec::flat(), &sim).unwrap();
        let r = remote_past_term(&tr, &MetricSpec::flat(), 1.5, 0.5, 0.5, &sim).unwrap();
        assert!(r.l8 > 0.0 && r.interpolation.holds(1e-12));
        assert!(r.interpolation.lhs < r.interpolation.rhs);
        assert!(remote_past_term(&tr, &MetricSpec::flat(), 0.5, 0.5, 0.5, &sim).is_err());
    }
}
