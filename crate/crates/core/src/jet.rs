//! Truncated Taylor series in the four spacetime variables `(t, x, y, z)`.
//!
//! A `Jet` stores the coefficients `c_a` of `f(p + d) = sum c_a d^a` for all
//! multi-indices with `|a| <= ORDER`, so `d^a f(p) = a! c_a`. Arithmetic is
//! exact polynomial arithmetic with truncation.

use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

pub const ORDER: usize = 5;
pub const VARS: usize = 4;

struct Table {
    exps: Vec<[u8; VARS]>,
    /// `(i, j, k)` with `exps[i] + exps[j] = exps[k]` and total degree in range
    products: Vec<(u16, u16, u16)>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut exps = Vec::new();
        for deg in 0..=ORDER {
            for a in (0..=deg).rev() {
                for b in (0..=deg - a).rev() {
                    for c in (0..=deg - a - b).rev() {
                        let d = deg - a - b - c;
                        exps.push([a as u8, b as u8, c as u8, d as u8]);
                    }
                }
            }
        }
        let lookup = |e: [u8; VARS]| exps.iter().position(|x| *x == e);
        let mut products = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];
                if s.iter().map(|&v| v as usize).sum::<usize>() <= ORDER {
                    let k = lookup(s).expect("monomial in table");
                    products.push((i as u16, j as u16, k as u16));
                }
            }
        }
        Table { exps, products }
    })
}

/// Multi-indices `a` with `|a| <= ORDER`, in the coefficient order of `Jet`.
pub fn multi_indices() -> &'static [[u8; VARS]] {
    &table().exps
}

pub fn factorial_weight(a: &[u8; VARS]) -> f64 {
    a.iter()
        .map(|&k| (1..=k as u64).product::<u64>() as f64)
        .product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn constant(c: f64) -> Self {
        let mut coeffs = vec![0.0; table().exps.len()];
        coeffs[0] = c;
        Self { coeffs }
    }

    /// The coordinate function `var` expanded about the value `at`.
    pub fn variable(var: usize, at: f64) -> Self {
        let mut j = Self::constant(at);
        j.coeffs[1 + var] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `d^a f` at the expansion point.
    pub fn derivative(&self, a: &[u8; VARS]) -> f64 {
        let idx = table()
            .exps
            .iter()
            .position(|e| e == a)
            .expect("multi-index beyond jet order");
        self.coeffs[idx] * factorial_weight(a)
    }

    /// All derivatives `d^a f` paired with their multi-indices.
    pub fn derivatives(&self) -> impl Iterator<Item = (&'static [u8; VARS], f64)> + '_ {
        table()
            .exps
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| (a, c * factorial_weight(a)))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `f(self)` given `derivs[k] = f^{(k)}(self.value())` for `k = 0..=ORDER`.
    pub fn compose(&self, derivs: &[f64; ORDER + 1]) -> Self {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut out = Self::constant(derivs[0]);
        let mut power = Self::constant(1.0);
        let mut fact = 1.0;
        for (k, d) in derivs.iter().enumerate().skip(1) {
            power = &power * &h;
            fact *= k as f64;
            for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                *o += d / fact * p;
            }
        }
        out
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for &(i, j, k) in &table().products {
            coeffs[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet { coeffs }
    }
}
