//! Initial data builders: compactly supported bumps (in position or in
//! velocity), Gaussians, outgoing radial pulses and single Fourier modes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid3, ScalarField, StateSlice};

/// `exp(1 - 1/(1 - s^2))` for `|s| < 1`, else 0. Equals 1 at `s = 0`.
pub fn bump_profile(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

/// Derivative of [`bump_profile`].
pub fn bump_profile_prime(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        bump_profile(s) * (-2.0 * s / (q * q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// `u0 = amplitude * bump(|x - center| / radius)`, `u1 = velocity * u0`.
    Bump {
        amplitude: f64,
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
        #[serde(default)]
        velocity: f64,
    },
    /// `u0 = 0`, `u1 = amplitude * bump(|x - center| / radius)`.
    VelocityBump {
        amplitude: f64,
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// Radial wave `f(r - t) / r` at `t = 0` with `f(s) = amplitude * s * bump((s - shell) / width)`.
    OutgoingShell {
        amplitude: f64,
        shell: f64,
        width: f64,
    },
    /// `u0 = amplitude * exp(-|x - center|^2 / width^2)`, `u1 = 0`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `u0 = amplitude * cos(2 pi m . x / (n dx))`, `u1 = 0`.
    Mode { amplitude: f64, wavenumber: [i32; 3] },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Bump {
            amplitude: 0.5,
            radius: 2.0,
            center: [0.0; 3],
            velocity: 0.0,
        }
    }
}

impl InitialData {
    /// Radius outside which the data vanishes identically (infinite for modes).
    pub fn support_radius(&self) -> f64 {
        match *self {
            InitialData::Zero => 0.0,
            InitialData::Bump { radius, center, .. } => {
                radius + (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt()
            }
            InitialData::VelocityBump { radius, center, .. } => {
                radius + (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt()
            }
            InitialData::OutgoingShell { shell, width, .. } => shell + width,
            // below 1e-16 of the peak
            InitialData::Gaussian { width, center, .. } => {
                width * 36.9f64.sqrt() + (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt()
            }
            InitialData::Mode { .. } => f64::INFINITY,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = *self;
        match &mut out {
            InitialData::Zero => {}
            InitialData::Bump { amplitude, .. }
            | InitialData::VelocityBump { amplitude, .. }
            | InitialData::OutgoingShell { amplitude, .. }
            | InitialData::Gaussian { amplitude, .. }
            | InitialData::Mode { amplitude, .. } => *amplitude *= c,
        }
        out
    }

    pub fn sample(&self, grid: &Grid3) -> Result<StateSlice> {
        let zero = || ScalarField::zeros(*grid);
        let (u, ut) = match *self {
            InitialData::Zero => (zero(), zero()),
            InitialData::Bump {
                amplitude,
                radius,
                center,
                velocity,
            } => {
                if !(radius > 0.0) {
                    return Err(invalid("bump radius must be positive"));
                }
                let u = ScalarField::from_fn(*grid, |x| {
                    let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                    amplitude * bump_profile((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / radius)
                });
                let ut = u.scaled(velocity);
                (u, ut)
            }
            InitialData::VelocityBump {
                amplitude,
                radius,
                center,
            } => {
                let g = InitialData::Bump {
                    amplitude,
                    radius,
                    center,
                    velocity: 0.0,
                }
                .sample(grid)?;
                (zero(), g.u)
            }
            InitialData::OutgoingShell { amplitude, shell, width } => {
                if !(width > 0.0 && shell > width) {
                    return Err(invalid("outgoing shell needs 0 < width < shell"));
                }
                // u = f(r)/r, u_t = -f'(r)/r
                let f = |s: f64| amplitude * s * bump_profile((s - shell) / width);
                let fp = |s: f64| {
                    let z = (s - shell) / width;
                    amplitude * (bump_profile(z) + s * bump_profile_prime(z) / width)
                };
                let radius = |x: [f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                let u = ScalarField::from_fn(*grid, |x| {
                    let r = radius(x);
                    if r == 0.0 {
                        0.0
                    } else {
                        f(r) / r
                    }
                });
                let ut = ScalarField::from_fn(*grid, |x| {
                    let r = radius(x);
                    if r == 0.0 {
                        0.0
                    } else {
                        -fp(r) / r
                    }
                });
                (u, ut)
            }
            InitialData::Gaussian { amplitude, width, center } => {
                if !(width > 0.0) {
                    return Err(invalid("gaussian width must be positive"));
                }
                let u = ScalarField::from_fn(*grid, |x| {
                    let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2);
                    amplitude * (-d2 / (width * width)).exp()
                });
                (u, zero())
            }
            InitialData::Mode { amplitude, wavenumber } => {
                let k = 2.0 * std::f64::consts::PI / (grid.n() as f64 * grid.dx());
                let u = ScalarField::from_fn(*grid, |x| {
                    let ph = k * (wavenumber[0] as f64 * x[0] + wavenumber[1] as f64 * x[1] + wavenumber[2] as f64 * x[2]);
                    amplitude * ph.cos()
                });
                (u, zero())
            }
        };
        StateSlice::new(u, ut, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shape() {
        assert_eq!(bump_profile(0.0), 1.0);
        assert_eq!(bump_profile(1.0), 0.0);
        assert_eq!(bump_profile(-1.5), 0.0);
        // s = 0.5: exp(1 - 4/3)
        assert!((bump_profile(0.5) - (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        let h = 1e-6;
        for s in [-0.7, 0.2, 0.9] {
            let fd = (bump_profile(s + h) - bump_profile(s - h)) / (2.0 * h);
            assert!((fd - bump_profile_prime(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn bump_is_compact() {
        let g = Grid3::new(32, 0.25).unwrap();
        let d = InitialData::Bump {
            amplitude: 1.0,
            radius: 1.5,
            center: [0.0; 3],
            velocity: 0.0,
        };
        let s = d.sample(&g).unwrap();
        assert_eq!(s.u.get(16, 16, 16), 1.0);
        assert!(s.u.support_radius(0.0) <= 1.5);
        assert_eq!(d.support_radius(), 1.5);
    }

    #[test]
    fn shell_is_outgoing() {
        // (d_t + d_r)(r u) = 0 for f(r - t)
        let g = Grid3::new(32, 0.25).unwrap();
        let d = InitialData::OutgoingShell {
            amplitude: 1.0,
            shell: 2.0,
            width: 1.0,
        };
        let s = d.sample(&g).unwrap();
        let idx = g.index(16 + 10, 16, 16);
        let r = g.radius(idx);
        let h = 1e-5;
        let f = |s: f64| s * bump_profile(s - 2.0);
        let dr_ru = (f(r + h) - f(r - h)) / (2.0 * h);
        assert!((r * s.ut.values()[idx] + dr_ru).abs() < 1e-8);
    }

    #[test]
    fn velocity_bump_and_gaussian() {
        let g = Grid3::new(32, 0.25).unwrap();
        let v = InitialData::VelocityBump {
            amplitude: 2.0,
            radius: 1.0,
            center: [0.5, 0.0, 0.0],
        };
        let s = v.sample(&g).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        assert_eq!(s.ut.get(18, 16, 16), 2.0);
        assert_eq!(v.support_radius(), 1.5);

        let w = InitialData::Gaussian {
            amplitude: 1.0,
            width: 0.5,
            center: [0.0; 3],
        };
        let s = w.sample(&g).unwrap();
        // two grid steps out, d = 0.5: exp(-0.25 / 0.25)
        assert!((s.u.get(18, 16, 16) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(s.ut.max_abs(), 0.0);
        assert!((w.scaled(3.0).sample(&g).unwrap().u.get(16, 16, 16) - 3.0).abs() < 1e-15);
    }
}
