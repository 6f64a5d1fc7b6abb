//! Three-dimensional complex FFT on cubic row-major arrays, built from
//! one-dimensional `rustfft` plans applied axis by axis.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalised forward transform, `X_k = sum_j x_j e^{-2 pi i jk/n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.forward);
    }

    /// Inverse transform including the `1/n^3` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inverse);
        let scale = 1.0 / (self.n * self.n * self.n) as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn apply(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n, "buffer is not n^3");

        // z lines are contiguous
        data.par_chunks_mut(n).for_each_init(
            || vec![Complex64::default(); plan.get_inplace_scratch_len()],
            |scratch, line| plan.process_with_scratch(line, scratch),
        );

        // y lines: stride n inside each x-slab
        data.par_chunks_mut(n * n).for_each_init(
            || {
                (
                    vec![Complex64::default(); n],
                    vec![Complex64::default(); plan.get_inplace_scratch_len()],
                )
            },
            |(line, scratch), slab| {
                for k in 0..n {
                    for j in 0..n {
                        line[j] = slab[j * n + k];
                    }
                    plan.process_with_scratch(line, scratch);
                    for j in 0..n {
                        slab[j * n + k] = line[j];
                    }
                }
            },
        );

        // x lines: stride n^2; gather one (j, k) column set per task
        let slab = n * n;
        let columns: Vec<Vec<Complex64>> = (0..slab)
            .into_par_iter()
            .map_init(
                || vec![Complex64::default(); plan.get_inplace_scratch_len()],
                |scratch, jk| {
                    let mut line: Vec<Complex64> = (0..n).map(|i| data[i * slab + jk]).collect();
                    plan.process_with_scratch(&mut line, scratch);
                    line
                },
            )
            .collect();
        data.par_chunks_mut(slab).enumerate().for_each(|(i, s)| {
            for (jk, v) in s.iter_mut().enumerate() {
                *v = columns[jk][i];
            }
        });
    }
}

/// Signed integer frequency index of FFT bin `k` on an `n`-point axis.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); n * n * n];
        let w = -2.0 * std::f64::consts::PI / n as f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut acc = Complex64::default();
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                let ph = w * ((a * i + b * j + c * k) % n) as f64;
                                acc += data[(i * n + j) * n + k] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(a * n + b) * n + c] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let n = 6;
        let data: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let expected = naive_dft(&data, n);
        let mut got = data.clone();
        Fft3::new(n).forward(&mut got);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let n = 8;
        let data: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i as f64).sqrt(), -(i as f64) * 0.5))
            .collect();
        let fft = Fft3::new(n);
        let mut buf = data.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&data) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn signed_indices() {
        assert_eq!(signed_index(0, 8), 0);
        assert_eq!(signed_index(3, 8), 3);
        assert_eq!(signed_index(4, 8), -4);
        assert_eq!(signed_index(7, 8), -1);
    }
}
