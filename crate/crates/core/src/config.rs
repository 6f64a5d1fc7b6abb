//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/bump"
//!
//! [metric]
//! family = "static_bump"
//! epsilon = 0.05
//!
//! [grid]
//! n = 64
//! dx = 0.25
//!
//! [sim]
//! t_end = 10.0
//! snapshot_dt = 0.5
//!
//! [data]
//! kind = "bump"
//! amplitude = 0.5
//! radius = 2.0
//!
//! [experiment.morawetz]
//! radius = 4.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::InitialData;
use crate::error::{Error, Result};
use crate::evolve::SimConfig;
use crate::grid::Grid3;
use crate::metric::MetricSpec;
use crate::morawetz::MorawetzConfig;
use crate::norms::BoundInputs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub dx: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 64, dx: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub a: f64,
    pub delta: f64,
    pub sign: i32,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            a: 10.0,
            delta: 0.1,
            sign: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailParams {
    pub t: f64,
    pub t0: f64,
    #[serde(rename = "T")]
    pub window: f64,
    pub delta: f64,
    /// Radii sampled evenly over `[0, 2t]`.
    pub r_count: usize,
}

impl Default for TailParams {
    fn default() -> Self {
        Self {
            t: 400.0,
            t0: 200.0,
            window: 100.0,
            delta: 0.2,
            r_count: 801,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stored trajectory to analyse instead of simulating afresh.
    pub trajectory: Option<PathBuf>,
    pub morawetz: MorawetzConfig,
    /// Search interval of the quiet-time scan; defaults to the whole run.
    pub interval: Option<[f64; 2]>,
    /// `t0` of the remote-past term; defaults to the run midpoint.
    pub t0: Option<f64>,
    pub eta: f64,
    /// Weight exponent `gamma` of the local energy norms.
    pub gamma: f64,
    pub high_order: usize,
    pub dyadic_ts: Vec<f64>,
    pub derivative_order: usize,
    pub interior: bool,
    pub source_samples: usize,
    pub validation_samples: usize,
    pub bound: BoundInputs,
    pub kernel: KernelParams,
    pub tail: TailParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trajectory: None,
            morawetz: MorawetzConfig::default(),
            interval: None,
            t0: None,
            eta: 0.1,
            gamma: 0.5,
            high_order: 2,
            dyadic_ts: vec![1.0, 2.0, 4.0, 8.0],
            derivative_order: 0,
            interior: false,
            source_samples: 2000,
            validation_samples: 4096,
            bound: BoundInputs { e: 1.0, a: 1.0, c: 1.0 },
            kernel: KernelParams::default(),
            tail: TailParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub metric: MetricSpec,
    pub grid: GridConfig,
    pub sim: SimConfig,
    pub data: InitialData,
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metric: MetricSpec::default(),
            grid: GridConfig::default(),
            sim: SimConfig::default(),
            data: InitialData::default(),
            experiment: ExperimentConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Run every section through its own invariants.
    pub fn check(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.metric.check().map_err(wrap)?;
        self.grid().map_err(wrap)?;
        self.sim.check().map_err(wrap)?;
        self.sim.snapshot_count().map_err(wrap)?;
        if self.experiment.dyadic_ts.len() < 4 {
            return Err(Error::Config("experiment.dyadic_ts needs at least four times".into()));
        }
        if self.experiment.derivative_order > 2 {
            return Err(Error::Config("experiment.derivative_order must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid3> {
        Grid3::new(self.grid.n, self.grid.dx)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            r#"
            seed = 3
            output_dir = "x"
            [metric]
            family = "time_modulated_bump"
            epsilon = 0.02
            [grid]
            n = 32
            dx = 0.5
            [sim]
            t_end = 4.0
            nonlinear = false
            [data]
            kind = "outgoing_shell"
            amplitude = 0.3
            shell = 3.0
            width = 1.0
            [experiment]
            eta = 0.5
            [experiment.bound]
            E = 2.0
            A = 1.0
            C = 1.0
            [experiment.morawetz]
            radius = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.n, 32);
        assert!(!c.sim.nonlinear);
        assert_eq!(c.experiment.bound.e, 2.0);
        assert_eq!(c.experiment.morawetz.radius, 2.0);
        assert!(matches!(c.data, InitialData::OutgoingShell { .. }));
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[grid]\nn = 15\ndx = 0.5",
            "[sim]\nt_end = 1.0\nsnapshot_dt = 0.3",
            "[metric]\nfamily = \"wormhole\"",
            "unknown = 1",
            "[experiment]\ndyadic_ts = [1.0, 2.0]",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
