//! Discrete differential operators and single-time norms.
//!
//! Derivatives are second-order central differences with periodic wrap.
//! Norms use the node-sum rule `sum |f|^p dx^3`. Fractional and negative
//! Sobolev orders are Fourier multipliers with the zero mode dropped.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fft::{signed_index, Fft3};
use crate::grid::{node_max, node_sum, Grid3, ScalarField};

/// Central difference of `f` along `axis` (0 = x, 1 = y, 2 = z).
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = *f.grid();
    let mut out = ScalarField::zeros(grid);
    partial_into(f.values(), &grid, axis, out.values_mut());
    out
}

/// Central difference writing into a caller-owned buffer.
pub(crate) fn partial_into(src: &[f64], grid: &Grid3, axis: usize, dst: &mut [f64]) {
    let n = grid.n();
    let inv = 0.5 / grid.dx();
    let slab = grid.slab();
    dst.par_chunks_mut(slab).enumerate().for_each(|(i, out)| match axis {
        0 => {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            let (p, m) = (&src[ip * slab..(ip + 1) * slab], &src[im * slab..(im + 1) * slab]);
            for jk in 0..slab {
                out[jk] = (p[jk] - m[jk]) * inv;
            }
        }
        1 => {
            let s = &src[i * slab..(i + 1) * slab];
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                for k in 0..n {
                    out[j * n + k] = (s[jp * n + k] - s[jm * n + k]) * inv;
                }
            }
        }
        2 => {
            let s = &src[i * slab..(i + 1) * slab];
            for j in 0..n {
                let row = &s[j * n..(j + 1) * n];
                let o = &mut out[j * n..(j + 1) * n];
                o[0] = (row[1] - row[n - 1]) * inv;
                for k in 1..n - 1 {
                    o[k] = (row[k + 1] - row[k - 1]) * inv;
                }
                o[n - 1] = (row[0] - row[n - 2]) * inv;
            }
        }
        _ => panic!("axis {axis} out of range"),
    });
}

/// `[d/dx, d/dy, d/dz] f` by periodic central differences.
pub fn gradient(f: &ScalarField) -> [ScalarField; 3] {
    [partial(f, 0), partial(f, 1), partial(f, 2)]
}

/// `(sum |f|^p dx^3)^{1/p}`, or `max |f|` for `p = inf`.
pub fn lebesgue_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if p.is_infinite() && p > 0.0 {
        return Ok(f.max_abs());
    }
    if !(p >= 1.0) {
        return Err(invalid(format!("Lebesgue exponent must be >= 1, got {p}")));
    }
    Ok(lebesgue_pow(f, p).powf(1.0 / p))
}

/// `sum |f|^p dx^3` without the root.
pub(crate) fn lebesgue_pow(f: &ScalarField, p: f64) -> f64 {
    let vol = f.grid().cell_volume();
    let v = f.values();
    let s = if p == 2.0 {
        node_sum(f.grid(), |i| v[i] * v[i])
    } else if p.fract() == 0.0 && p <= 16.0 {
        let k = p as i32;
        node_sum(f.grid(), |i| v[i].abs().powi(k))
    } else {
        node_sum(f.grid(), |i| v[i].abs().powf(p))
    };
    s * vol
}

pub(crate) fn spectrum(f: &ScalarField) -> Vec<Complex64> {
    let grid = f.grid();
    let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Fft3::new(grid.n()).forward(&mut buf);
    buf
}

/// Squared physical frequency `|xi|^2` of every FFT bin.
pub(crate) fn frequency_sq(grid: &Grid3) -> impl Fn(usize) -> f64 + Sync + '_ {
    let n = grid.n();
    let w = 2.0 * std::f64::consts::PI / (n as f64 * grid.dx());
    move |idx: usize| {
        let (a, b, c) = grid.unravel(idx);
        let (ka, kb, kc) = (
            signed_index(a, n) as f64 * w,
            signed_index(b, n) as f64 * w,
            signed_index(c, n) as f64 * w,
        );
        ka * ka + kb * kb + kc * kc
    }
}

/// Homogeneous `H^s` seminorm `|| |xi|^s f^ ||_{L^2}` for `-1 <= s <= 5`.
///
/// The zero mode is excluded, so the mean of `f` never contributes.
pub fn sobolev_norm(f: &ScalarField, s: f64) -> Result<f64> {
    if !(-1.0..=5.0).contains(&s) {
        return Err(invalid(format!("Sobolev order must lie in [-1, 5], got {s}")));
    }
    let grid = *f.grid();
    let spec = spectrum(f);
    let xi2 = frequency_sq(&grid);
    let total = node_sum(&grid, |idx| {
        if idx == 0 {
            return 0.0;
        }
        spec[idx].norm_sqr() * xi2(idx).powf(s)
    });
    Ok((total * grid.cell_volume() / grid.len() as f64).sqrt())
}

/// Inhomogeneous `H^s` norm `|| <xi>^s f^ ||_{L^2}`, zero mode included.
pub fn inhomogeneous_sobolev_norm(f: &ScalarField, s: f64) -> f64 {
    let grid = *f.grid();
    let spec = spectrum(f);
    let xi2 = frequency_sq(&grid);
    let total = node_sum(&grid, |idx| spec[idx].norm_sqr() * (1.0 + xi2(idx)).powf(s));
    (total * grid.cell_volume() / grid.len() as f64).sqrt()
}

/// `W^{k,1}` norm: node sums of `|d^alpha f|` over all spatial multi-indices
/// `|alpha| <= k`, each derivative taken by repeated central differences.
pub fn sobolev_l1_norm(f: &ScalarField, k: usize) -> f64 {
    let vol = f.grid().cell_volume();
    let l1 = |g: &ScalarField| node_sum(g.grid(), |i| g.values()[i].abs()) * vol;
    // level holds d^alpha f for all ordered alpha with non-decreasing axes
    let mut level: Vec<(usize, ScalarField)> = vec![(0, f.clone())];
    let mut total = l1(f);
    for _ in 0..k {
        let mut next = Vec::new();
        for (min_axis, g) in &level {
            for axis in *min_axis..3 {
                let d = partial(g, axis);
                total += l1(&d);
                next.push((axis, d));
            }
        }
        level = next;
    }
    total
}

/// Rotation field `Omega_a f = (x cross grad f)_a`, `axis` in 1..=3.
pub fn rotation_derivative(f: &ScalarField, axis: usize) -> Result<ScalarField> {
    if !(1..=3).contains(&axis) {
        return Err(invalid(format!("rotation axis must be 1, 2 or 3, got {axis}")));
    }
    let grid = *f.grid();
    // (x cross grad)_a = x_b d_c - x_c d_b with (a, b, c) cyclic
    let (b, c) = match axis {
        1 => (1, 2),
        2 => (2, 0),
        _ => (0, 1),
    };
    let db = partial(f, b);
    let dc = partial(f, c);
    let mut out = ScalarField::zeros(grid);
    out.values_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, v)| {
            let x = grid.position(idx);
            *v = x[b] * dc.values()[idx] - x[c] * db.values()[idx];
        });
    Ok(out)
}

/// Radial derivative `(x/|x|) . grad f`, zero at the origin.
pub fn radial_derivative(f: &ScalarField) -> ScalarField {
    let grid = *f.grid();
    let [gx, gy, gz] = gradient(f);
    let mut out = ScalarField::zeros(grid);
    out.values_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, v)| {
            let [x, y, z] = grid.position(idx);
            let r = (x * x + y * y + z * z).sqrt();
            *v = if r > 0.0 {
                (x * gx.values()[idx] + y * gy.values()[idx] + z * gz.values()[idx]) / r
            } else {
                0.0
            };
        });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusNorms {
    /// `sup |f|` over nodes with `R < |x| < R + 1`.
    pub sup_on_annulus: f64,
    /// `sum_{j <= 1, |alpha| <= 2} || d_r^j Omega^alpha f ||_{L^2}` over `R - 1 < |x| < R + 2`.
    pub sum_l2_terms: f64,
}

impl AnnulusNorms {
    /// Smallest `C` with `sup <= C R^{-1} sum`.
    pub fn fitted_constant(&self, radius: f64) -> f64 {
        if self.sum_l2_terms == 0.0 {
            0.0
        } else {
            self.sup_on_annulus * radius / self.sum_l2_terms
        }
    }
}

/// Both sides of the annular Sobolev inequality at radius `radius`.
pub fn annulus_norms(f: &ScalarField, radius: f64) -> Result<AnnulusNorms> {
    let grid = *f.grid();
    let l = grid.half_extent();
    if !(radius > 0.0 && radius + 2.0 < l) {
        return Err(Error::AnnulusOutOfDomain {
            radius,
            half_extent: l,
        });
    }
    let in_sup = |idx: usize| {
        let r = grid.radius(idx);
        r > radius && r < radius + 1.0
    };
    let in_shell = |idx: usize| {
        let r = grid.radius(idx);
        r > radius - 1.0 && r < radius + 2.0
    };
    let sup = node_max(&grid, |idx| {
        if in_sup(idx) {
            f.values()[idx].abs()
        } else {
            0.0
        }
    });

    let mut terms = vec![f.clone()];
    for a in 1..=3 {
        terms.push(rotation_derivative(f, a)?);
    }
    for a in 1..=3 {
        for b in 1..=3 {
            let inner = terms[b].clone();
            terms.push(rotation_derivative(&inner, a)?);
        }
    }
    let vol = grid.cell_volume();
    let shell_l2 = |g: &ScalarField| {
        let v = g.values();
        (node_sum(&grid, |idx| if in_shell(idx) { v[idx] * v[idx] } else { 0.0 }) * vol).sqrt()
    };
    let mut sum = 0.0;
    for g in &terms {
        sum += shell_l2(g);
        sum += shell_l2(&radial_derivative(g));
    }
    Ok(AnnulusNorms {
        sup_on_annulus: sup,
        sum_l2_terms: sum,
    })
}
