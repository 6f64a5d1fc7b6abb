//! Method-of-lines solver for `P u = u^5` and the linear propagator `S(t, s)`.
//!
//! With `g^0j = 0` the equation is solved as the first-order system
//!
//! ```text
//! u_t  = v
//! v_t  = [u^5 - d_i(g^ij d_j u) - (d_t g^00) v] / g^00
//! ```
//!
//! using classical RK4 and central differences in conservative form. Step
//! `k` always sits at `t_start + k dt`, so a run split at any snapshot and
//! resumed reproduces the unbroken run bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{lebesgue_norm, lebesgue_pow, partial_into};
use crate::grid::{Grid3, ScalarField, StateSlice};
use crate::metric::{sample_metric, Coefficient, MetricSample, MetricSpec};
use crate::norms::total_energy;
use crate::snapshot;

/// Norm above which a run is declared unstable.
pub const BLOWUP_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Courant factor; `dt <= cfl * dx / max wave speed`.
    pub cfl: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub snapshot_dt: f64,
    pub nonlinear: bool,
    /// Duhamel node spacing; `None` means `snapshot_dt`.
    pub duhamel_tau_dt: Option<f64>,
    /// Accept waves crossing the periodic boundary (torus semantics).
    pub allow_wrap: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cfl: 0.3,
            t_start: 0.0,
            t_end: 10.0,
            snapshot_dt: 0.5,
            nonlinear: true,
            duhamel_tau_dt: None,
            allow_wrap: false,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(invalid(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        if !(self.t_end >= self.t_start) || !self.t_end.is_finite() {
            return Err(invalid("t_end must not precede t_start"));
        }
        if !(self.snapshot_dt > 0.0) {
            return Err(invalid("snapshot_dt must be positive"));
        }
        if let Some(h) = self.duhamel_tau_dt {
            if !(h > 0.0) {
                return Err(invalid("duhamel_tau_dt must be positive"));
            }
        }
        Ok(())
    }

    /// Time step: the largest `snapshot_dt / k` not exceeding the CFL limit.
    pub fn dt(&self, spec: &MetricSpec, grid: &Grid3) -> Result<f64> {
        self.check()?;
        let raw = self.cfl * grid.dx() / spec.speed_bound();
        Ok(self.snapshot_dt / self.steps_per_snapshot_raw(raw) as f64)
    }

    pub fn steps_per_snapshot(&self, spec: &MetricSpec, grid: &Grid3) -> Result<usize> {
        self.check()?;
        Ok(self.steps_per_snapshot_raw(self.cfl * grid.dx() / spec.speed_bound()))
    }

    fn steps_per_snapshot_raw(&self, raw: f64) -> usize {
        ((self.snapshot_dt / raw) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    /// Duhamel quadrature spacing; defaults to `snapshot_dt` so every node
    /// is a stored snapshot.
    pub fn tau_dt(&self) -> f64 {
        self.duhamel_tau_dt.unwrap_or(self.snapshot_dt)
    }

    pub fn snapshot_count(&self) -> Result<usize> {
        let ratio = (self.t_end - self.t_start) / self.snapshot_dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(format!(
                "run length {} is not a multiple of snapshot_dt {}",
                self.t_end - self.t_start,
                self.snapshot_dt
            )));
        }
        Ok(k as usize)
    }
}

/// Waves travel at most `1.2` units per unit time for every admissible family.
pub fn check_wrap(support: f64, duration: f64, grid: &Grid3) -> Result<()> {
    let required = support + 1.2 * duration;
    if required > grid.half_extent() {
        return Err(Error::WrapExclusion {
            required,
            half_extent: grid.half_extent(),
        });
    }
    Ok(())
}

const SUPPORT_TOL: f64 = 1e-12;
/// Cut for states taken mid-run, which carry the scheme's small forerunner
/// tails ahead of the light cone.
const EVOLVED_SUPPORT_TOL: f64 = 1e-8;

/// Scalars recorded at every snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: u64,
    pub t: f64,
    pub energy: f64,
    pub l2: f64,
    pub l6: f64,
    pub linf: f64,
}

impl Diagnostics {
    pub fn measure(state: &StateSlice, metric: &MetricSample, step: u64) -> Self {
        Self::measure_flow(state, metric, step, true)
    }

    /// `energy` is the one the flow conserves: without the `u^6/6` term
    /// for the linear flow.
    pub fn measure_flow(state: &StateSlice, metric: &MetricSample, step: u64, nonlinear: bool) -> Self {
        let mut energy = total_energy(state, metric);
        if !nonlinear {
            energy -= lebesgue_pow(&state.u, 6.0) / 6.0;
        }
        Self {
            step,
            t: state.t,
            energy,
            l2: lebesgue_norm(&state.u, 2.0).unwrap(),
            l6: lebesgue_norm(&state.u, 6.0).unwrap(),
            linf: state.u.max_abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub slices: Vec<StateSlice>,
    pub times: Vec<f64>,
    pub scalars: Vec<Diagnostics>,
    pub spec: MetricSpec,
}

impl Trajectory {
    /// Wrap externally built slices, measuring diagnostics under `spec`.
    pub fn from_slices(slices: Vec<StateSlice>, spec: &MetricSpec) -> Result<Self> {
        let mut scalars = Vec::with_capacity(slices.len());
        for (k, s) in slices.iter().enumerate() {
            let metric = sample_metric(spec, s.grid(), s.t)?;
            scalars.push(Diagnostics::measure(s, &metric, k as u64));
        }
        let traj = Self {
            times: slices.iter().map(|s| s.t).collect(),
            slices,
            scalars,
            spec: *spec,
        };
        traj.check()?;
        Ok(traj)
    }

    fn check(&self) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("trajectory times must increase strictly"));
        }
        if let Some(first) = self.slices.first() {
            if self.slices.iter().any(|s| s.grid() != first.grid()) {
                return Err(Error::GridMismatch("slices on different grids".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn grid(&self) -> Option<&Grid3> {
        self.slices.first().map(|s| s.grid())
    }

    pub fn t_min(&self) -> f64 {
        self.times.first().copied().unwrap_or(f64::NAN)
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NAN)
    }

    /// Index of the snapshot at time `t`, within `1e-9` relative slack.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        let k = self.times.partition_point(|&s| s < t - tol);
        (k < self.times.len() && (self.times[k] - t).abs() <= tol).then_some(k)
    }

    pub fn slice_at(&self, t: f64) -> Option<&StateSlice> {
        self.index_of(t).map(|k| &self.slices[k])
    }

    /// Snapshots with `a <= t <= b`.
    pub fn window(&self, a: f64, b: f64) -> Result<Trajectory> {
        let lo = self.index_of(a).ok_or(Error::Misaligned { t: a })?;
        let hi = self.index_of(b).ok_or(Error::Misaligned { t: b })?;
        Ok(Trajectory {
            slices: self.slices[lo..=hi].to_vec(),
            times: self.times[lo..=hi].to_vec(),
            scalars: self.scalars[lo..=hi].to_vec(),
            spec: self.spec,
        })
    }

    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("step,t,energy,l2,l6,linf\n");
        for d in &self.scalars {
            writeln!(out, "{},{},{},{},{},{}", d.step, d.t, d.energy, d.l2, d.l6, d.linf).unwrap();
        }
        out
    }

    /// Write `snap_{step:08}.afwl` files plus `manifest.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (s, d) in self.slices.iter().zip(&self.scalars) {
            snapshot::write_state(&snapshot_path(dir, d.step), s)?;
        }
        fs::write(dir.join("manifest.csv"), self.manifest_csv())?;
        Ok(())
    }

    /// Read a directory written by [`Trajectory::save`].
    pub fn load(dir: &Path, spec: &MetricSpec) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.csv"))?;
        let mut slices = Vec::new();
        let mut scalars = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("manifest line {}: `{line}`", line_no + 1));
            if cols.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
            let d = Diagnostics {
                step: cols[0].parse().map_err(|_| bad())?,
                t: num(1)?,
                energy: num(2)?,
                l2: num(3)?,
                l6: num(4)?,
                linf: num(5)?,
            };
            slices.push(snapshot::read_state(&snapshot_path(dir, d.step))?);
            scalars.push(d);
        }
        let traj = Self {
            times: slices.iter().map(|s| s.t).collect(),
            slices,
            scalars,
            spec: *spec,
        };
        traj.check()?;
        Ok(traj)
    }
}

pub fn snapshot_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("snap_{step:08}.afwl"))
}

/// Step index encoded in a snapshot file name.
pub fn step_from_path(path: &Path) -> Result<u64> {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("snap_"))
        .and_then(|n| n.strip_suffix(".afwl"))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("not a snapshot file name: {}", path.display())))
}

/// Work buffers for one right-hand-side evaluation.
struct RhsScratch {
    grads: [Vec<f64>; 3],
    flux: Vec<f64>,
    div_part: Vec<f64>,
}

impl RhsScratch {
    fn new(len: usize) -> Self {
        Self {
            grads: std::array::from_fn(|_| vec![0.0; len]),
            flux: vec![0.0; len],
            div_part: vec![0.0; len],
        }
    }
}

fn rhs_into(u: &[f64], ut: &[f64], metric: &MetricSample, nonlinear: bool, scratch: &mut RhsScratch, out: &mut [f64]) {
    let grid = metric.grid;
    let slab = grid.slab();
    out.par_iter_mut().for_each(|v| *v = 0.0);
    let flat = metric.is_flat();
    for j in 0..3 {
        partial_into(u, &grid, j, &mut scratch.grads[j]);
    }
    // out accumulates d_i(g^ij d_j u)
    for i in 0..3 {
        let flux: &[f64] = if flat {
            &scratch.grads[i]
        } else {
            let grads = &scratch.grads;
            let coeffs: Vec<(&Coefficient, &Vec<f64>)> = (0..3)
                .map(|j| (&metric.gij[crate::metric::pair_index(i, j)], &grads[j]))
                .filter(|(c, _)| !matches!(c, Coefficient::Constant(v) if *v == 0.0))
                .collect();
            scratch.flux.par_chunks_mut(slab).enumerate().for_each(|(s, f)| {
                let base = s * slab;
                for (q, v) in f.iter_mut().enumerate() {
                    let idx = base + q;
                    *v = coeffs.iter().map(|(c, g)| c.at(idx) * g[idx]).sum();
                }
            });
            &scratch.flux
        };
        partial_into(flux, &grid, i, &mut scratch.div_part);
        out.par_iter_mut().zip(&scratch.div_part).for_each(|(o, d)| *o += d);
    }
    let quintic = |x: f64| {
        if nonlinear {
            let x2 = x * x;
            x2 * x2 * x
        } else {
            0.0
        }
    };
    if flat {
        out.par_iter_mut().zip(u).for_each(|(o, &x)| *o -= quintic(x));
    } else {
        out.par_chunks_mut(slab).enumerate().for_each(|(s, o)| {
            let base = s * slab;
            for (q, v) in o.iter_mut().enumerate() {
                let idx = base + q;
                let div = *v;
                *v = (quintic(u[idx]) - div - metric.dt_g00.at(idx) * ut[idx]) / metric.g00.at(idx);
            }
        });
    }
}

/// `u_tt` of the state under `metric`; `nonlinear = false` drops `u^5`.
pub fn rhs(state: &StateSlice, metric: &MetricSample, nonlinear: bool) -> Result<ScalarField> {
    if state.grid() != &metric.grid {
        return Err(Error::GridMismatch("metric sampled on another grid".into()));
    }
    let grid = *state.grid();
    let mut out = vec![0.0; grid.len()];
    let mut scratch = RhsScratch::new(grid.len());
    rhs_into(state.u.values(), state.ut.values(), metric, nonlinear, &mut scratch, &mut out);
    ScalarField::from_values(grid, out)
}

/// RK4 integrator with reusable buffers and a metric cache.
struct Stepper {
    spec: MetricSpec,
    grid: Grid3,
    nonlinear: bool,
    fixed_metric: Option<MetricSample>,
    cache: Vec<(u64, MetricSample)>,
    scratch: RhsScratch,
    stage_u: Vec<f64>,
    stage_v: Vec<f64>,
    acc_u: Vec<f64>,
    acc_v: Vec<f64>,
    accel: Vec<f64>,
}

impl Stepper {
    fn new(spec: &MetricSpec, grid: &Grid3, nonlinear: bool) -> Result<Self> {
        let len = grid.len();
        let fixed_metric = if spec.is_static() {
            Some(sample_metric(spec, grid, 0.0)?)
        } else {
            None
        };
        Ok(Self {
            spec: *spec,
            grid: *grid,
            nonlinear,
            fixed_metric,
            cache: Vec::new(),
            scratch: RhsScratch::new(len),
            stage_u: vec![0.0; len],
            stage_v: vec![0.0; len],
            acc_u: vec![0.0; len],
            acc_v: vec![0.0; len],
            accel: vec![0.0; len],
        })
    }

    fn metric_at(&mut self, t: f64) -> Result<MetricSample> {
        if let Some(m) = &self.fixed_metric {
            let mut m = m.clone();
            m.t = t;
            return Ok(m);
        }
        let key = t.to_bits();
        if let Some((_, m)) = self.cache.iter().find(|(k, _)| *k == key) {
            return Ok(m.clone());
        }
        let m = sample_metric(&self.spec, &self.grid, t)?;
        if self.cache.len() >= 3 {
            self.cache.remove(0);
        }
        self.cache.push((key, m.clone()));
        Ok(m)
    }

    /// One classical RK4 step from `t` to `t + dt`, in place.
    fn step(&mut self, u: &mut [f64], ut: &mut [f64], t: f64, dt: f64) -> Result<()> {
        let half = 0.5 * dt;
        let m0 = self.metric_at(t)?;
        let mh = self.metric_at(t + half)?;
        let m1 = self.metric_at(t + dt)?;
        let nl = self.nonlinear;

        // stage 1: k1 = (v, a(u, v))
        rhs_into(u, ut, &m0, nl, &mut self.scratch, &mut self.accel);
        self.acc_u.par_iter_mut().zip(&*ut).for_each(|(a, &v)| *a = v);
        self.acc_v.par_iter_mut().zip(&self.accel).for_each(|(a, &k)| *a = k);
        self.stage_v.par_iter_mut().zip(&*ut).for_each(|(s, &v)| *s = v);

        // stages 2..4: the stage velocity is the next k_u, so update in place
        for (h, m, w) in [(half, &mh, 2.0), (half, &mh, 2.0), (dt, &m1, 1.0)] {
            self.stage_u
                .par_iter_mut()
                .zip(&mut self.stage_v)
                .zip(&*u)
                .zip(&*ut)
                .zip(&self.accel)
                .for_each(|((((su, sv), &x), &v), &k)| {
                    *su = x + h * *sv;
                    *sv = v + h * k;
                });
            rhs_into(&self.stage_u, &self.stage_v, m, nl, &mut self.scratch, &mut self.accel);
            self.acc_u.par_iter_mut().zip(&self.stage_v).for_each(|(a, &v)| *a += w * v);
            self.acc_v.par_iter_mut().zip(&self.accel).for_each(|(a, &k)| *a += w * k);
        }

        let w = dt / 6.0;
        u.par_iter_mut().zip(&self.acc_u).for_each(|(x, &a)| *x += w * a);
        ut.par_iter_mut().zip(&self.acc_v).for_each(|(x, &a)| *x += w * a);
        Ok(())
    }
}

fn blowup_check(u: &[f64], ut: &[f64], step: usize, t: f64) -> Result<()> {
    let norm = u
        .par_iter()
        .chain(ut.par_iter())
        .map(|v| if v.is_finite() { v.abs() } else { f64::INFINITY })
        .reduce(|| 0.0, f64::max);
    if norm > BLOWUP_NORM {
        return Err(Error::Instability { step, t, norm });
    }
    Ok(())
}

/// Evolve `initial` (sitting at step `start_step`) to `config.t_end`, calling
/// `observe` at every snapshot including the first.
pub fn evolve_observed<F>(
    initial: &StateSlice,
    start_step: u64,
    spec: &MetricSpec,
    config: &SimConfig,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(&StateSlice, &Diagnostics) -> Result<()>,
{
    config.check()?;
    let grid = *initial.grid();
    let dt = config.dt(spec, &grid)?;
    let per_snap = config.steps_per_snapshot(spec, &grid)? as u64;
    let total_steps = config.snapshot_count()? as u64 * per_snap;
    if start_step % per_snap != 0 || start_step > total_steps {
        return Err(Error::Misaligned { t: initial.t });
    }
    let time_of = |step: u64| config.t_start + step as f64 * dt;
    if !config.allow_wrap {
        let remaining = config.t_end - time_of(start_step);
        let tol = if start_step == 0 { SUPPORT_TOL } else { EVOLVED_SUPPORT_TOL };
        check_wrap(initial.support_radius(tol), remaining, &grid)?;
    }

    let mut stepper = Stepper::new(spec, &grid, config.nonlinear)?;
    let mut u = initial.u.values().to_vec();
    let mut ut = initial.ut.values().to_vec();
    let emit = |u: &[f64], ut: &[f64], step: u64, stepper: &mut Stepper, observe: &mut F| -> Result<()> {
        let t = time_of(step);
        let state = StateSlice::new(
            ScalarField::from_values(grid, u.to_vec())?,
            ScalarField::from_values(grid, ut.to_vec())?,
            t,
        )?;
        let metric = stepper.metric_at(t)?;
        let d = Diagnostics::measure_flow(&state, &metric, step, config.nonlinear);
        observe(&state, &d)
    };
    emit(&u, &ut, start_step, &mut stepper, &mut observe)?;
    for step in start_step..total_steps {
        stepper.step(&mut u, &mut ut, time_of(step), dt)?;
        blowup_check(&u, &ut, step as usize + 1, time_of(step + 1))?;
        if (step + 1) % per_snap == 0 {
            emit(&u, &ut, step + 1, &mut stepper, &mut observe)?;
        }
    }
    Ok(())
}

/// Evolve from `t_start` to `t_end`, keeping every snapshot.
pub fn evolve(initial: &StateSlice, spec: &MetricSpec, config: &SimConfig) -> Result<Trajectory> {
    let mut start = initial.clone();
    start.t = config.t_start;
    evolve_from(&start, 0, spec, config)
}

/// Continue a run from a stored snapshot at `start_step`.
pub fn evolve_from(initial: &StateSlice, start_step: u64, spec: &MetricSpec, config: &SimConfig) -> Result<Trajectory> {
    let mut slices = Vec::new();
    let mut scalars = Vec::new();
    evolve_observed(initial, start_step, spec, config, |s, d| {
        slices.push(s.clone());
        scalars.push(*d);
        Ok(())
    })?;
    Ok(Trajectory {
        times: slices.iter().map(|s| s.t).collect(),
        slices,
        scalars,
        spec: *spec,
    })
}

/// Resume a stored run from one of its snapshot files.
pub fn resume(checkpoint: &Path, spec: &MetricSpec, config: &SimConfig) -> Result<Trajectory> {
    let step = step_from_path(checkpoint)?;
    let state = snapshot::read_state(checkpoint)?;
    let dt = config.dt(spec, state.grid())?;
    let expected = config.t_start + step as f64 * dt;
    if expected.to_bits() != state.t.to_bits() {
        return Err(Error::Misaligned { t: state.t });
    }
    evolve_from(&state, step, spec, config)
}

/// Steps and step size used to go from `s` to `t`: the configured `dt` when it
/// divides `t - s`, otherwise the next smaller step that does.
fn linear_steps(s: f64, t: f64, dt: f64) -> (u64, f64) {
    let span = t - s;
    let k = (span / dt).round();
    if k >= 1.0 && (k * dt - span).abs() <= 1e-9 * span.abs().max(1.0) {
        (k as u64, dt)
    } else {
        let k = (span / dt).ceil().max(1.0);
        (k as u64, span / k)
    }
}

/// `S(t, s)(f, g)`: linear evolution of `data` (read as Cauchy data at `s`).
pub fn propagate_linear(data: &StateSlice, s: f64, t: f64, spec: &MetricSpec, config: &SimConfig) -> Result<StateSlice> {
    if t < s {
        return Err(invalid(format!("propagation needs t >= s, got s = {s}, t = {t}")));
    }
    let mut out = data.clone();
    out.t = s;
    if t == s {
        return Ok(out);
    }
    let grid = *data.grid();
    if !config.allow_wrap {
        let tol = if s > config.t_start { EVOLVED_SUPPORT_TOL } else { SUPPORT_TOL };
        check_wrap(data.support_radius(tol), t - s, &grid)?;
    }
    let dt = config.dt(spec, &grid)?;
    let (steps, h) = linear_steps(s, t, dt);
    let mut stepper = Stepper::new(spec, &grid, false)?;
    let mut u = out.u.into_values();
    let mut ut = out.ut.into_values();
    for k in 0..steps {
        stepper.step(&mut u, &mut ut, s + k as f64 * h, h)?;
        blowup_check(&u, &ut, k as usize + 1, s + (k + 1) as f64 * h)?;
    }
    StateSlice::new(ScalarField::from_values(grid, u)?, ScalarField::from_values(grid, ut)?, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DuhamelMode {
    /// Propagate every quadrature node separately and sum in node order.
    Direct,
    /// Carry one accumulator forward, injecting weighted impulses at nodes.
    #[default]
    Streaming,
}

/// Velocity impulse of the source `u^5` at time `tau`: `u^5 / g^00`.
pub fn duhamel_source(state: &StateSlice, spec: &MetricSpec) -> Result<ScalarField> {
    let metric = sample_metric(spec, state.grid(), state.t)?;
    let u = state.u.values();
    let values = (0..u.len())
        .into_par_iter()
        .map(|idx| {
            let x2 = u[idx] * u[idx];
            x2 * x2 * u[idx] / metric.g00.at(idx)
        })
        .collect();
    ScalarField::from_values(*state.grid(), values)
}

/// `int_a^b S(t, tau)(0, u^5(tau)) dtau` at each of `eval_times`.
pub fn duhamel_integral(
    source: &Trajectory,
    spec: &MetricSpec,
    tau_range: [f64; 2],
    eval_times: &[f64],
    config: &SimConfig,
) -> Result<Trajectory> {
    duhamel_integral_with(source, spec, tau_range, eval_times, config, DuhamelMode::Streaming)
}

pub fn duhamel_integral_with(
    source: &Trajectory,
    spec: &MetricSpec,
    tau_range: [f64; 2],
    eval_times: &[f64],
    config: &SimConfig,
    mode: DuhamelMode,
) -> Result<Trajectory> {
    let [a, b] = tau_range;
    let grid = *source.grid().ok_or_else(|| invalid("empty source trajectory"))?;
    if !(a <= b) {
        return Err(invalid("tau range must satisfy a <= b"));
    }
    if a < source.t_min() - 1e-9 || b > source.t_max() + 1e-9 {
        return Err(invalid(format!(
            "tau range [{a}, {b}] leaves the source range [{}, {}]",
            source.t_min(),
            source.t_max()
        )));
    }
    if eval_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("eval_times must increase strictly"));
    }
    if eval_times.first().is_some_and(|&t| t < b - 1e-12) {
        return Err(invalid("eval_times must not precede the end of the tau range"));
    }
    let h = config.tau_dt();
    let (nodes, weights) = trapezoid_nodes(a, b, h)?;
    let mut sources = Vec::with_capacity(nodes.len());
    for &tau in &nodes {
        let state = source.slice_at(tau).ok_or(Error::Misaligned { t: tau })?;
        sources.push(duhamel_source(state, spec)?);
    }
    // finite speed bounds every piece by its own source support; checking the
    // accumulated state instead would count the scheme's forerunner tails
    if !config.allow_wrap {
        let t_last = eval_times.last().copied().unwrap_or(b);
        for (&tau, f) in nodes.iter().zip(&sources) {
            let tol = if tau > config.t_start { EVOLVED_SUPPORT_TOL } else { SUPPORT_TOL };
            check_wrap(f.support_radius(tol), t_last - tau, &grid)?;
        }
    }
    let config = &SimConfig { allow_wrap: true, ..*config };

    let results = match mode {
        DuhamelMode::Streaming => {
            let mut out = Vec::with_capacity(eval_times.len());
            let mut acc = StateSlice::zeros(grid, nodes[0]);
            for (k, (&tau, f)) in nodes.iter().zip(&sources).enumerate() {
                if k > 0 {
                    acc = propagate_linear(&acc, nodes[k - 1], tau, spec, config)?;
                }
                acc.ut.axpy(weights[k], f);
            }
            let mut t_prev = *nodes.last().unwrap();
            for &t in eval_times {
                acc = propagate_linear(&acc, t_prev, t, spec, config)?;
                t_prev = t;
                out.push(acc.clone());
            }
            out
        }
        DuhamelMode::Direct => {
            let mut out: Vec<StateSlice> = eval_times.iter().map(|&t| StateSlice::zeros(grid, t)).collect();
            for ((&tau, f), &w) in nodes.iter().zip(&sources).zip(&weights) {
                let mut cur = StateSlice::new(ScalarField::zeros(grid), f.scaled(w), tau)?;
                let mut t_prev = tau;
                for (slot, &t) in out.iter_mut().zip(eval_times) {
                    cur = propagate_linear(&cur, t_prev, t, spec, config)?;
                    t_prev = t;
                    slot.u.axpy(1.0, &cur.u);
                    slot.ut.axpy(1.0, &cur.ut);
                }
            }
            out
        }
    };
    let mut scalars = Vec::with_capacity(results.len());
    for (k, s) in results.iter().enumerate() {
        let metric = sample_metric(spec, &grid, s.t)?;
        scalars.push(Diagnostics::measure_flow(s, &metric, k as u64, false));
    }
    Ok(Trajectory {
        times: eval_times.to_vec(),
        slices: results,
        scalars,
        spec: *spec,
    })
}

/// Trapezoid nodes `a, a + h, ..., b` and weights; `b - a` must be a multiple of `h`.
pub fn trapezoid_nodes(a: f64, b: f64, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if b == a {
        return Ok((vec![a], vec![0.0]));
    }
    let ratio = (b - a) / h;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Misaligned { t: b });
    }
    let m = m as usize;
    let nodes: Vec<f64> = (0..=m).map(|k| if k == m { b } else { a + k as f64 * h }).collect();
    let mut weights = vec![h; m + 1];
    weights[0] = 0.5 * h;
    weights[m] = 0.5 * h;
    Ok((nodes, weights))
}
