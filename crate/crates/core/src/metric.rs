//! Closed-form metric perturbations `g = m + h` and their hypothesis checks.
//!
//! Both bump families are isotropic:
//!
//! ```text
//! h^00(t,x) = h^ii(t,x) = eps * P(|x|^2) * m(t),   h^0j = h^ij (i != j) = 0
//! P(s) = (1 + s / rho^2)^{-(3 + delta)/2}
//! m(t) = 1 for StaticBump, (1 + cos(omega t)) / 2 for TimeModulatedBump
//! ```
//!
//! so `g^00 = -1 + h^00` and `g^ij = (1 + h^00) delta^ij`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{japanese, Grid3, ScalarField};
use crate::jet::{Jet, ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Flat,
    StaticBump,
    TimeModulatedBump,
}

impl std::str::FromStr for MetricFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "static_bump" => Ok(Self::StaticBump),
            "time_modulated_bump" => Ok(Self::TimeModulatedBump),
            other => Err(Error::Config(format!("unknown metric family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    pub family: MetricFamily,
    pub epsilon: f64,
    pub gamma: f64,
    /// Short-range exponent; the profile decays like `<x>^{-3-delta}`.
    pub delta: f64,
    pub bump_radius: f64,
    /// Angular frequency of the time modulation.
    pub modulation_freq: f64,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            family: MetricFamily::Flat,
            epsilon: 0.05,
            gamma: 0.5,
            delta: 0.1,
            bump_radius: 1.0,
            modulation_freq: 0.5,
        }
    }
}

/// Perturbation components at one spacetime point. Off-diagonal spatial and
/// mixed components vanish identically for every family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub h00: f64,
    pub hij: [[f64; 3]; 3],
    pub h0j: [f64; 3],
}

impl Perturbation {
    /// Full symmetric `h^{ab}`, `a, b = 0..4`.
    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = self.h00;
        for i in 0..3 {
            m[0][i + 1] = self.h0j[i];
            m[i + 1][0] = self.h0j[i];
            for j in 0..3 {
                m[i + 1][j + 1] = self.hij[i][j];
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix()
            .iter()
            .flatten()
            .fold(0.0_f64, |a, &b| a.max(b.abs()))
    }
}

impl MetricSpec {
    pub fn flat() -> Self {
        Self {
            family: MetricFamily::Flat,
            epsilon: 0.0,
            ..Self::default()
        }
    }

    pub fn static_bump(epsilon: f64) -> Self {
        Self {
            family: MetricFamily::StaticBump,
            epsilon,
            ..Self::default()
        }
    }

    pub fn time_modulated(epsilon: f64, modulation_freq: f64) -> Self {
        Self {
            family: MetricFamily::TimeModulatedBump,
            epsilon,
            modulation_freq,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !self.epsilon.is_finite() {
            return Err(invalid("epsilon must be finite"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        // delta <= 0 is accepted so deliberately long-range profiles can be
        // fed to the validator as negative controls
        if !(self.delta > -3.0) {
            return Err(invalid(format!("profile must decay: delta > -3, got {}", self.delta)));
        }
        if !(self.bump_radius > 0.0) {
            return Err(invalid("bump_radius must be positive"));
        }
        if !(self.modulation_freq >= 0.0 && self.modulation_freq.is_finite()) {
            return Err(invalid("modulation_freq must be non-negative"));
        }
        Ok(())
    }

    pub fn is_flat(&self) -> bool {
        self.family == MetricFamily::Flat || self.epsilon == 0.0
    }

    pub fn is_static(&self) -> bool {
        self.family != MetricFamily::TimeModulatedBump || self.is_flat()
    }

    fn exponent(&self) -> f64 {
        (3.0 + self.delta) / 2.0
    }

    /// Spatial profile `P(s)` and `dP/ds` at `s = |x|^2`.
    pub fn profile(&self, s: f64) -> (f64, f64) {
        let rho2 = self.bump_radius * self.bump_radius;
        let q = self.exponent();
        let base = 1.0 + s / rho2;
        let p = base.powf(-q);
        (p, -q / rho2 * p / base)
    }

    /// Time modulation `m(t)` and `m'(t)`.
    pub fn modulation(&self, t: f64) -> (f64, f64) {
        match self.family {
            MetricFamily::TimeModulatedBump => {
                let w = self.modulation_freq;
                (0.5 * (1.0 + (w * t).cos()), -0.5 * w * (w * t).sin())
            }
            _ => (1.0, 0.0),
        }
    }

    /// Common amplitude `a(t, x)` of `h^00` and `h^ii`.
    pub fn amplitude(&self, t: f64, x: [f64; 3]) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let s = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        self.epsilon * self.profile(s).0 * self.modulation(t).0
    }

    pub fn perturbation(&self, t: f64, x: [f64; 3]) -> Perturbation {
        let a = self.amplitude(t, x);
        Perturbation {
            h00: a,
            hij: [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]],
            h0j: [0.0; 3],
        }
    }

    /// Amplitude as a Taylor jet about `(t, x)`, exact to order 5.
    pub fn amplitude_jet(&self, t: f64, x: [f64; 3]) -> Jet {
        if self.is_flat() {
            return Jet::constant(0.0);
        }
        let xs: Vec<Jet> = (0..3).map(|i| Jet::variable(i + 1, x[i])).collect();
        let s = &(&(&xs[0] * &xs[0]) + &(&xs[1] * &xs[1])) + &(&xs[2] * &xs[2]);
        let rho2 = self.bump_radius * self.bump_radius;
        let q = self.exponent();
        let base = 1.0 + s.value() / rho2;
        // d^k/ds^k (1 + s/rho^2)^{-q} = (-q)(-q-1)...(-q-k+1) rho^{-2k} base^{-q-k}
        let mut pd = [0.0; ORDER + 1];
        let mut falling = 1.0;
        for (k, d) in pd.iter_mut().enumerate() {
            *d = falling * rho2.powi(-(k as i32)) * base.powf(-q - k as f64);
            falling *= -q - k as f64;
        }
        let profile = s.compose(&pd);
        let amp = match self.family {
            MetricFamily::TimeModulatedBump => {
                let w = self.modulation_freq;
                let tj = Jet::variable(0, t).scale(w);
                let ph = w * t;
                // d^k cos = cos(ph + k pi/2)
                let mut cd = [0.0; ORDER + 1];
                for (k, d) in cd.iter_mut().enumerate() {
                    *d = (ph + k as f64 * std::f64::consts::FRAC_PI_2).cos();
                }
                let c = tj.compose(&cd);
                let m = &Jet::constant(0.5) + &c.scale(0.5);
                &profile * &m
            }
            _ => profile,
        };
        amp.scale(self.epsilon)
    }

    /// Upper bound of the coordinate wave speed `sqrt(max eig g^ij / |g^00|)`
    /// over all of spacetime.
    pub fn speed_bound(&self) -> f64 {
        if self.is_flat() {
            return 1.0;
        }
        // amplitude ranges over [min(eps, 0), max(eps, 0)]; the speed
        // sqrt((1 + a)/(1 - a)) grows with a
        let a = self.epsilon.max(0.0);
        ((1.0 + a) / (1.0 - a)).sqrt()
    }
}

/// A metric coefficient on the grid: either uniform or a shared node field.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Constant(f64),
    Field(Arc<ScalarField>),
}

impl Coefficient {
    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Field(f) => f.values()[idx],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }

    pub fn to_field(&self, grid: Grid3) -> ScalarField {
        match self {
            Coefficient::Constant(c) => ScalarField::constant(grid, *c),
            Coefficient::Field(f) => (**f).clone(),
        }
    }
}

/// Pair order used for the symmetric spatial components.
pub const SPATIAL_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    SPATIAL_PAIRS.iter().position(|&p| p == (a, b)).unwrap()
}

/// Inverse metric and first derivatives sampled on a grid at one time.
#[derive(Debug, Clone)]
pub struct MetricSample {
    pub grid: Grid3,
    pub t: f64,
    pub g00: Coefficient,
    pub dt_g00: Coefficient,
    /// `g^ij` in `SPATIAL_PAIRS` order.
    pub gij: [Coefficient; 6],
    /// `dk_gij[k][p] = d_k g^{ij}` for pair `p`.
    pub dk_gij: [[Coefficient; 6]; 3],
}

impl MetricSample {
    pub fn flat(grid: Grid3, t: f64) -> Self {
        let zero = || Coefficient::Constant(0.0);
        let gij = std::array::from_fn(|p| {
            let (i, j) = SPATIAL_PAIRS[p];
            Coefficient::Constant(if i == j { 1.0 } else { 0.0 })
        });
        Self {
            grid,
            t,
            g00: Coefficient::Constant(-1.0),
            dt_g00: zero(),
            gij,
            dk_gij: std::array::from_fn(|_| std::array::from_fn(|_| zero())),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.g00, Coefficient::Constant(c) if c == -1.0)
            && self.gij.iter().enumerate().all(|(p, c)| {
                let (i, j) = SPATIAL_PAIRS[p];
                matches!(c, Coefficient::Constant(v) if *v == if i == j { 1.0 } else { 0.0 })
            })
            && self.dt_g00.is_constant()
    }

    #[inline]
    pub fn gij_at(&self, i: usize, j: usize, idx: usize) -> f64 {
        self.gij[pair_index(i, j)].at(idx)
    }
}

/// Closed-form `g^{ab}` and first derivatives on every node.
pub fn sample_metric(spec: &MetricSpec, grid: &Grid3, t: f64) -> Result<MetricSample> {
    spec.check()?;
    if spec.is_flat() {
        return Ok(MetricSample::flat(*grid, t));
    }
    let (m, dm) = spec.modulation(t);
    let eps = spec.epsilon;
    let len = grid.len();
    let mut amp = vec![0.0; len];
    let mut damp_dt = vec![0.0; len];
    let mut grads: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
    let slab = grid.slab();
    {
        let [gx, gy, gz] = &mut grads;
        amp.par_chunks_mut(slab)
            .zip(damp_dt.par_chunks_mut(slab))
            .zip(gx.par_chunks_mut(slab))
            .zip(gy.par_chunks_mut(slab))
            .zip(gz.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(i, ((((a, at), ax), ay), az))| {
                let x = grid.coord(i);
                for jk in 0..slab {
                    let y = grid.coord(jk / grid.n());
                    let z = grid.coord(jk % grid.n());
                    let (p, dp) = spec.profile(x * x + y * y + z * z);
                    a[jk] = eps * p * m;
                    at[jk] = eps * p * dm;
                    let radial = eps * dp * m * 2.0;
                    ax[jk] = radial * x;
                    ay[jk] = radial * y;
                    az[jk] = radial * z;
                }
            });
    }
    // g^00 = -1 + a must stay negative and g^ij = (1 + a) I positive definite
    if let Some(node) = amp.iter().position(|&a| a >= 1.0 || a <= -1.0) {
        return Err(Error::NonLorentzian {
            node,
            g00: -1.0 + amp[node],
            min_eig: 1.0 + amp[node],
        });
    }
    let g00: Vec<f64> = amp.iter().map(|a| -1.0 + a).collect();
    let gdiag: Vec<f64> = amp.iter().map(|a| 1.0 + a).collect();
    let wrap = |v: Vec<f64>| Coefficient::Field(Arc::new(ScalarField::from_values(*grid, v).unwrap()));
    let diag = wrap(gdiag);
    let gij = std::array::from_fn(|p| {
        let (i, j) = SPATIAL_PAIRS[p];
        if i == j {
            diag.clone()
        } else {
            Coefficient::Constant(0.0)
        }
    });
    let [gx, gy, gz] = grads;
    let grad_fields = [wrap(gx), wrap(gy), wrap(gz)];
    let dk_gij = std::array::from_fn(|k| {
        std::array::from_fn(|p| {
            let (i, j) = SPATIAL_PAIRS[p];
            if i == j {
                grad_fields[k].clone()
            } else {
                Coefficient::Constant(0.0)
            }
        })
    });
    let dt_g00 = if spec.is_static() {
        Coefficient::Constant(0.0)
    } else {
        wrap(damp_dt)
    };
    Ok(MetricSample {
        grid: *grid,
        t,
        g00: wrap(g00),
        dt_g00,
        gij,
        dk_gij,
    })
}

/// `h^{ab} Lbar_a Lbar_b` for the incoming null field
/// `Lbar = (x^i/|x|) d_i - d_t`, whose lowered components are `(1, x/|x|)`.
pub fn incoming_null_contraction(spec: &MetricSpec, t: f64, x: [f64; 3]) -> Result<f64> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    let h = spec.perturbation(t, x);
    let xh = [x[0] / r, x[1] / r, x[2] / r];
    let mut acc = h.h00;
    for i in 0..3 {
        acc += 2.0 * h.h0j[i] * xh[i];
        for j in 0..3 {
            acc += h.hij[i][j] * xh[i] * xh[j];
        }
    }
    Ok(acc)
}

/// Where the validator samples spacetime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub r_min: f64,
    pub r_max: f64,
    pub t_max: f64,
    /// Fraction of samples placed within 10% of the outgoing light cone `t = |x|`.
    pub cone_fraction: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: 1e3,
            t_max: 1e3,
            cone_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionRatio {
    pub worst_ratio: f64,
    pub at_t: f64,
    pub at_x: [f64; 3],
}

impl ConditionRatio {
    fn new() -> Self {
        Self {
            worst_ratio: 0.0,
            at_t: 0.0,
            at_x: [0.0; 3],
        }
    }

    fn update(&mut self, ratio: f64, t: f64, x: [f64; 3]) {
        if ratio > self.worst_ratio || ratio.is_nan() {
            self.worst_ratio = ratio;
            self.at_t = t;
            self.at_x = x;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `|h| <= eps <t-|x|>^{1/2} / (<x>^gamma <t+|x|>^{1/2})`
    pub hyp_a: ConditionRatio,
    /// `|h^{Lbar Lbar}| <= eps <t-|x|> / (<x>^gamma <t+|x|>)`
    pub hyp_b: ConditionRatio,
    /// `|d^J h| <= eps <x>^{-1-gamma}` for `1 <= |J| <= 5`
    pub hyp_c: ConditionRatio,
    /// `|h| <= <x>^{-3-delta}`
    pub hyp_d: ConditionRatio,
    pub sample_count: usize,
    pub sample_box: SampleBox,
    pub seed: u64,
    pub pass: bool,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Randomly shifted Halton points in `[0, 1)^5`.
fn halton_points(count: usize, seed: u64) -> Vec<[f64; 5]> {
    const BASES: [u64; 5] = [2, 3, 5, 7, 11];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 5] = std::array::from_fn(|_| rng.gen::<f64>());
    (1..=count as u64)
        .map(|i| std::array::from_fn(|d| (radical_inverse(i, BASES[d]) + shift[d]).fract()))
        .collect()
}

/// Check the four decay hypotheses at quasi-random spacetime points.
///
/// `|h|` is the largest absolute component. For the short-range bound a
/// non-positive `delta` is checked against `<x>^{-3}`, the weakest bound
/// the hypothesis allows.
pub fn validate_assumptions(spec: &MetricSpec, n_samples: usize, rng_seed: u64) -> Result<ValidationReport> {
    validate_in_box(spec, n_samples, rng_seed, SampleBox::default())
}

pub fn validate_in_box(
    spec: &MetricSpec,
    n_samples: usize,
    rng_seed: u64,
    sample_box: SampleBox,
) -> Result<ValidationReport> {
    spec.check()?;
    if n_samples < 1000 {
        return Err(invalid(format!("need at least 1000 samples, got {n_samples}")));
    }
    let eps = spec.epsilon.abs();
    let gamma = spec.gamma;
    let delta_d = spec.delta.max(0.0);
    let log_lo = sample_box.r_min.ln();
    let log_hi = sample_box.r_max.ln();

    let points: Vec<(f64, [f64; 3])> = halton_points(n_samples, rng_seed)
        .into_iter()
        .map(|u| {
            let r = (log_lo + (log_hi - log_lo) * u[0]).exp();
            let cos_th = 2.0 * u[1] - 1.0;
            let sin_th = (1.0 - cos_th * cos_th).max(0.0).sqrt();
            let ph = 2.0 * std::f64::consts::PI * u[2];
            let x = [r * sin_th * ph.cos(), r * sin_th * ph.sin(), r * cos_th];
            let t = if u[4] < sample_box.cone_fraction {
                (r * (1.0 + 0.2 * (u[3] - 0.5))).min(sample_box.t_max)
            } else {
                sample_box.t_max * (2.0 * u[3] - 1.0)
            };
            (t, x)
        })
        .collect();

    let per_point: Vec<[(f64, f64, [f64; 3]); 4]> = points
        .par_iter()
        .map(|&(t, x)| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let h = spec.perturbation(t, x).max_abs();
            let bx = japanese(r);
            let a_rhs = eps * japanese(t - r).sqrt() / (bx.powf(gamma) * japanese(t + r).sqrt());
            let b_rhs = eps * japanese(t - r) / (bx.powf(gamma) * japanese(t + r));
            let hll = incoming_null_contraction(spec, t, x).map(f64::abs).unwrap_or(0.0);
            let jet = spec.amplitude_jet(t, x);
            let c_lhs = jet
                .derivatives()
                .skip(1)
                .fold(0.0_f64, |m, (_, d)| m.max(d.abs()));
            let c_rhs = eps * bx.powf(-1.0 - gamma);
            let d_rhs = bx.powf(-3.0 - delta_d);
            [
                (ratio(h, a_rhs), t, x),
                (ratio(hll, b_rhs), t, x),
                (ratio(c_lhs, c_rhs), t, x),
                (ratio(h, d_rhs), t, x),
            ]
        })
        .collect();

    let mut worst = [ConditionRatio::new(); 4];
    for row in &per_point {
        for (w, &(r, t, x)) in worst.iter_mut().zip(row) {
            w.update(r, t, x);
        }
    }
    let pass = worst.iter().all(|w| w.worst_ratio <= 1.0);
    Ok(ValidationReport {
        hyp_a: worst[0],
        hyp_b: worst[1],
        hyp_c: worst[2],
        hyp_d: worst[3],
        sample_count: n_samples,
        sample_box,
        seed: rng_seed,
        pass,
    })
}
