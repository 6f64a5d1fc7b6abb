//! Uniform periodic grids, scalar fields and Cauchy-data slices.
//!
//! Nodes are stored row-major with the x index slowest: the value at
//! `(i, j, k)` lives at `(i * n + j) * n + k` and sits at
//! `(-L + i dx, -L + j dx, -L + k dx)` with `L = n dx / 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    n: usize,
    dx: f64,
}

impl Grid3 {
    pub fn new(n: usize, dx: f64) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(invalid(format!("grid needs an even n >= 16, got {n}")));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(invalid(format!("grid spacing must be positive, got {dx}")));
        }
        Ok(Self { n, dx })
    }

    /// Grid without the `n >= 16` floor, for tiny brute-force oracles.
    #[doc(hidden)]
    pub fn new_unchecked(n: usize, dx: f64) -> Self {
        Self { n, dx }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn half_extent(&self) -> f64 {
        self.n as f64 * self.dx / 2.0
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Volume element of the node-sum quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dx * self.dx
    }

    pub fn volume(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    /// Nodes per x-slab; the unit of parallel work.
    pub fn slab(&self) -> usize {
        self.n * self.n
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.half_extent() + k as f64 * self.dx
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        let i = idx / (self.n * self.n);
        (i, j, k)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.unravel(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let [x, y, z] = self.position(idx);
        (x * x + y * y + z * z).sqrt()
    }
}

/// Sum `f(idx)` over all nodes with a fixed reduction tree: one partial per
/// x-slab, then a sequential fold over slabs. Results are bit-identical
/// regardless of the thread count.
pub fn node_sum<F>(grid: &Grid3, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let slab = grid.slab();
    let partials: Vec<f64> = (0..grid.n())
        .into_par_iter()
        .map(|i| {
            let base = i * slab;
            let mut acc = 0.0;
            for idx in base..base + slab {
                acc += f(idx);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Maximum of `f(idx)` over all nodes.
pub fn node_max<F>(grid: &Grid3, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let slab = grid.slab();
    (0..grid.n())
        .into_par_iter()
        .map(|i| {
            let base = i * slab;
            (base..base + slab).map(&f).fold(0.0_f64, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid3, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at node {pos}")));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f(x, y, z)` at every node.
    pub fn from_fn<F>(grid: Grid3, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let mut values = vec![0.0; grid.len()];
        values
            .par_chunks_mut(grid.slab())
            .enumerate()
            .for_each(|(i, slab)| {
                let x = grid.coord(i);
                for (jk, v) in slab.iter_mut().enumerate() {
                    let y = grid.coord(jk / grid.n());
                    let z = grid.coord(jk % grid.n());
                    *v = f([x, y, z]);
                }
            });
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Pointwise map into a new field.
    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map<F>(&self, other: &ScalarField, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        self.values
            .par_iter_mut()
            .zip(other.values.par_iter())
            .for_each(|(a, &b)| *a += c * b);
    }

    pub fn sum(&self) -> f64 {
        node_sum(&self.grid, |idx| self.values[idx])
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        node_max(&self.grid, |idx| self.values[idx].abs())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Radius of the smallest origin-centred ball holding every node with
    /// `|f| > rel_tol * max|f|`. Zero for the zero field.
    pub fn support_radius(&self, rel_tol: f64) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let cut = rel_tol * peak;
        node_max(&self.grid, |idx| {
            if self.values[idx].abs() > cut {
                self.grid.radius(idx)
            } else {
                0.0
            }
        })
    }
}

/// Cauchy data `(u, u_t)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSlice {
    pub u: ScalarField,
    pub ut: ScalarField,
    pub t: f64,
}

impl StateSlice {
    pub fn new(u: ScalarField, ut: ScalarField, t: f64) -> Result<Self> {
        if u.grid() != ut.grid() {
            return Err(Error::GridMismatch("u and u_t differ".into()));
        }
        Ok(Self { u, ut, t })
    }

    pub fn zeros(grid: Grid3, t: f64) -> Self {
        Self {
            u: ScalarField::zeros(grid),
            ut: ScalarField::zeros(grid),
            t,
        }
    }

    pub fn grid(&self) -> &Grid3 {
        self.u.grid()
    }

    pub fn support_radius(&self, rel_tol: f64) -> f64 {
        self.u.support_radius(rel_tol).max(self.ut.support_radius(rel_tol))
    }

    /// `a * self + b * other`, keeping `self.t`.
    pub fn combine(&self, a: f64, other: &StateSlice, b: f64) -> StateSlice {
        StateSlice {
            u: self.u.zip_map(&other.u, |x, y| a * x + b * y),
            ut: self.ut.zip_map(&other.ut, |x, y| a * x + b * y),
            t: self.t,
        }
    }
}

/// Japanese bracket `(1 + s^2)^{1/2}`.
pub fn japanese(s: f64) -> f64 {
    (1.0 + s * s).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid3::new(15, 0.1).is_err());
        assert!(Grid3::new(8, 0.1).is_err());
        assert!(Grid3::new(16, 0.0).is_err());
        assert!(Grid3::new(16, 0.1).is_ok());
    }

    #[test]
    fn coordinates_follow_layout() {
        let g = Grid3::new(16, 0.5).unwrap();
        assert_eq!(g.half_extent(), 4.0);
        assert_eq!(g.coord(0), -4.0);
        assert_eq!(g.coord(8), 0.0);
        let idx = g.index(3, 5, 7);
        assert_eq!(g.unravel(idx), (3, 5, 7));
        assert_eq!(g.position(idx), [-2.5, -1.5, -0.5]);
    }

    #[test]
    fn node_sum_is_order_stable() {
        let g = Grid3::new(16, 0.3).unwrap();
        let f = ScalarField::from_fn(g, |[x, y, z]| (x * 1.3).sin() + y * z);
        let a = f.sum();
        let b = f.sum();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn support_radius_of_ball() {
        let g = Grid3::new(32, 0.25).unwrap();
        let f = ScalarField::from_fn(g, |[x, y, z]| {
            if x * x + y * y + z * z < 1.0 {
                1.0
            } else {
                0.0
            }
        });
        let r = f.support_radius(1e-12);
        assert!(r < 1.0 && r > 1.0 - g.dx());
        assert_eq!(ScalarField::zeros(g).support_radius(1e-12), 0.0);
    }

    #[test]
    fn from_values_rejects_nan() {
        let g = Grid3::new(16, 1.0).unwrap();
        let mut v = vec![0.0; g.len()];
        v[3] = f64::NAN;
        assert!(ScalarField::from_values(g, v).is_err());
    }
}
