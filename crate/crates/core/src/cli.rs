//! Command-line front end: one subcommand per experiment, artifacts plus a
//! `run.json` record in the output directory.
//!
//! Exit status 0 on success, 1 for configuration and usage errors, 2 for
//! numerical failures (a `error.json` record is written next to the other
//! artifacts).

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::dispersive::{
    default_r_grid, dispersive_decay_fit, holder_tail_oracle, interior_decay_experiment, kernel_integral,
    remote_past_term, sample_points, source_decay_check,
};
use crate::error::{Error, Result};
use crate::evolve::{evolve, resume, SimConfig, Trajectory};
use crate::grid::ScalarField;
use crate::metric::validate_assumptions;
use crate::morawetz::{averaged_morawetz, ledger, potential_bound, quiet_time_search};
use crate::norms::{
    high_order_energy, iled_ratio_with, le1_norm, norms_csv, partition_by_l8, standard_norms, strichartz_interpolation,
    theorem_bound, BoundInputs,
};

pub const LOCK_FILE: &str = ".afwave.lock";

#[derive(Debug, Parser)]
#[command(name = "afwave", version, about = "Defocusing quintic wave lab on asymptotically flat metrics")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides OUTPUT_DIR and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve the configured data and store snapshots plus the manifest.
    Simulate,
    /// Continue a stored run from one of its snapshot files.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    ValidateMetric,
    Norms,
    Iled,
    Morawetz,
    Quiet,
    RemotePast,
    Dispersive,
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
    Partition,
    Bound {
        #[arg(long = "E")]
        e: Option<f64>,
        #[arg(long = "A")]
        a: Option<f64>,
        #[arg(long = "C")]
        c: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Oracle {
    Kernel {
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        sign: Option<i32>,
    },
    Tail {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long = "T")]
        window: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Resume { .. } => "resume",
            Command::ValidateMetric => "validate-metric",
            Command::Norms => "norms",
            Command::Iled => "iled",
            Command::Morawetz => "morawetz",
            Command::Quiet => "quiet",
            Command::RemotePast => "remote-past",
            Command::Dispersive => "dispersive",
            Command::Oracle { which: Oracle::Kernel { .. } } => "oracle kernel",
            Command::Oracle { which: Oracle::Tail { .. } } => "oracle tail",
            Command::Partition => "partition",
            Command::Bound { .. } => "bound",
        }
    }
}

/// One emitted file with its columns and units, echoed into `run.json`.
#[derive(Debug, Clone)]
struct Artifact {
    file: String,
    units: Value,
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is locked by another run ({})",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// `--out`, then `OUTPUT_DIR`, then the config value.
pub fn resolve_output_dir(cli_out: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    match std::env::var_os("OUTPUT_DIR") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output_dir.clone(),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn trajectory(cfg: &RunConfig, nonlinear: bool) -> Result<Trajectory> {
    if let Some(dir) = &cfg.experiment.trajectory {
        return Trajectory::load(dir, &cfg.metric);
    }
    let grid = cfg.grid()?;
    let sim = SimConfig { nonlinear, ..cfg.sim };
    evolve(&cfg.data.sample(&grid)?, &cfg.metric, &sim)
}

fn manifest_units() -> Value {
    json!({"step": "count", "t": "time", "energy": "energy", "l2": "L2 norm of u", "l6": "L6 norm of u", "linf": "sup of |u|"})
}

fn store(traj: &Trajectory, out: &Path, arts: &mut Vec<Artifact>) -> Result<()> {
    traj.save(out)?;
    arts.push(Artifact {
        file: "manifest.csv".into(),
        units: manifest_units(),
    });
    arts.push(Artifact {
        file: "snap_*.afwl".into(),
        units: json!({"format": "AFWL v1 state snapshot"}),
    });
    Ok(())
}

/// Run one subcommand; returns the artifacts written.
fn dispatch(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<Vec<Artifact>> {
    let mut arts = Vec::new();
    let ex = &cfg.experiment;
    match &cli.command {
        Command::Simulate => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            store(&traj, out, &mut arts)?;
            let last = traj.scalars.last().unwrap();
            println!("simulated {} snapshots to t = {}, energy {}", traj.len(), last.t, last.energy);
        }
        Command::Resume { checkpoint } => {
            let traj = resume(checkpoint, &cfg.metric, &cfg.sim)?;
            store(&traj, out, &mut arts)?;
            println!("resumed from t = {} to t = {}", traj.t_min(), traj.t_max());
        }
        Command::ValidateMetric => {
            let report = validate_assumptions(&cfg.metric, ex.validation_samples, cfg.seed)?;
            write_json(&out.join("validation.json"), &to_value(&report))?;
            arts.push(Artifact {
                file: "validation.json".into(),
                units: json!({"hyp_*": "dimensionless ratios"}),
            });
            println!("metric assumptions {}", if report.pass { "hold" } else { "FAIL" });
        }
        Command::Norms => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            let rows = standard_norms(&traj)?;
            fs::write(out.join("norms.csv"), norms_csv(&rows))?;
            let fields: Vec<&ScalarField> = traj.slices.iter().map(|s| &s.u).collect();
            let interp = strichartz_interpolation(&traj.times, &fields)?;
            write_json(&out.join("interpolation.json"), &to_value(&interp))?;
            arts.push(Artifact {
                file: "norms.csv".into(),
                units: json!({"name": "norm label", "q": "time exponent", "r": "space exponent", "value": "norm", "t_min": "time", "t_max": "time"}),
            });
            arts.push(Artifact {
                file: "interpolation.json".into(),
                units: json!({"lhs": "L5 L10 norm", "rhs": "L8L8^(2/5) L4L12^(3/5)"}),
            });
            println!("{} norms; interpolation lhs {} rhs {}", rows.len(), interp.lhs, interp.rhs);
        }
        Command::Iled => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            let ratio = iled_ratio_with(&traj, ex.gamma, cfg.sim.nonlinear)?;
            let le1 = le1_norm(&traj, ex.gamma, cfg.sim.nonlinear)?;
            let hoe = high_order_energy(&traj, ex.high_order)?;
            write_json(
                &out.join("iled.json"),
                &json!({"ratio": ratio, "le1": le1, "gamma": ex.gamma, "high_order": to_value(&hoe)}),
            )?;
            arts.push(Artifact {
                file: "iled.json".into(),
                units: json!({"ratio": "dimensionless", "le1": "LE1 norm", "high_order.energies": "energy"}),
            });
            println!("iled ratio {ratio}");
        }
        Command::Morawetz => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            let r = ex.morawetz.radius;
            let l = ledger(&traj, &cfg.metric, r)?;
            fs::write(out.join("morawetz.csv"), l.csv())?;
            let energy = traj.scalars[0].energy;
            let averaged = match averaged_morawetz(&traj, &cfg.metric, &ex.morawetz) {
                Ok(a) => to_value(&a),
                Err(e) => json!({"error": e.to_string()}),
            };
            write_json(
                &out.join("morawetz.json"),
                &json!({
                    "radius": r,
                    "potential_bound": potential_bound(&l, energy, r),
                    "residual_integral": l.residual_integral(),
                    "fd_order": l.fd_order,
                    "averaged": averaged,
                }),
            )?;
            arts.push(Artifact {
                file: "morawetz.csv".into(),
                units: json!({"t": "time", "M_R": "energy^2 x length", "dM_numeric": "energy^2", "main_density": "energy^2", "boundary": "energy^2", "residual": "energy^2"}),
            });
            arts.push(Artifact {
                file: "morawetz.json".into(),
                units: json!({"potential_bound": "max|M_R| / (E^2 R)", "averaged.lhs": "energy^2"}),
            });
            println!("morawetz ledger at R = {r}: {} rows", l.times.len());
        }
        Command::Quiet => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            let interval = ex.interval.unwrap_or([traj.t_min(), traj.t_max()]);
            let q = quiet_time_search(&traj, &cfg.metric, interval, &ex.morawetz, &cfg.sim)?;
            fs::write(out.join("quiet.jsonl"), q.json_lines())?;
            arts.push(Artifact {
                file: "quiet.jsonl".into(),
                units: json!({"t0": "time", "duhamel_l8": "L8 spacetime norm"}),
            });
            println!("quiet time t0 = {} with L8 {}", q.t0, q.duhamel_l8);
        }
        Command::RemotePast => {
            let traj = trajectory(cfg, cfg.sim.nonlinear)?;
            let t0 = ex.t0.unwrap_or(0.5 * (traj.t_min() + traj.t_max()));
            let r = remote_past_term(&traj, &cfg.metric, t0, ex.morawetz.recent_past, ex.morawetz.eval_window, &cfg.sim)?;
            write_json(
                &out.join("remote_past.json"),
                &json!({"t0": t0, "T": ex.morawetz.recent_past, "W": ex.morawetz.eval_window, "result": to_value(&r)}),
            )?;
            arts.push(Artifact {
                file: "remote_past.json".into(),
                units: json!({"l_inf": "sup norm", "l4": "L4 spacetime norm", "l8": "L8 spacetime norm"}),
            });
            println!("remote past L8 {} <= {}", r.l8, r.interpolation.rhs);
        }
        Command::Dispersive => {
            let grid = cfg.grid()?;
            let data = cfg.data.sample(&grid)?;
            let fit = if ex.interior {
                interior_decay_experiment(&data, &cfg.metric, &ex.dyadic_ts, &cfg.sim)?
            } else {
                dispersive_decay_fit(&data, &cfg.metric, 0.0, &ex.dyadic_ts, ex.derivative_order, &cfg.sim)?
            };
            fs::write(out.join("dispersive_fit.csv"), fit.csv())?;
            let source = if cfg.metric.is_flat() || ex.source_samples == 0 {
                Value::Null
            } else {
                let traj = trajectory(cfg, false)?;
                let pts = sample_points(&traj, ex.source_samples, 0.8, cfg.seed)?;
                json!(source_decay_check(&traj, &cfg.metric, &pts)?)
            };
            write_json(
                &out.join("dispersive.json"),
                &json!({"fit": to_value(&fit), "interior": ex.interior, "derivative_order": ex.derivative_order, "source_decay_ratio": source}),
            )?;
            arts.push(Artifact {
                file: "dispersive_fit.csv".into(),
                units: json!({"t": "time", "sup_value": "sup norm", "product_with_t": "sup norm x time"}),
            });
            arts.push(Artifact {
                file: "dispersive.json".into(),
                units: json!({"fit.p": "exponent", "fit.c": "sup norm"}),
            });
            println!("fitted exponent p = {} (c = {})", fit.p, fit.c);
        }
        Command::Oracle { which } => {
            let record = match *which {
                Oracle::Kernel { a, delta, sign } => {
                    let k = ex.kernel;
                    let (a, delta, sign) = (a.unwrap_or(k.a), delta.unwrap_or(k.delta), sign.unwrap_or(k.sign));
                    let v = kernel_integral(a, delta, sign)?;
                    json!({"params": {"a": a, "delta": delta, "sign": sign}, "value": v.value, "error_bound": v.error_bound})
                }
                Oracle::Tail { t, t0, window, delta } => {
                    let p = ex.tail;
                    let (t, t0, w, d) = (t.unwrap_or(p.t), t0.unwrap_or(p.t0), window.unwrap_or(p.window), delta.unwrap_or(p.delta));
                    let h = holder_tail_oracle(t, t0, w, d, &default_r_grid(t, p.r_count))?;
                    json!({"params": {"t": t, "t0": t0, "T": w, "delta": d}, "value": h.value, "sup": h.sup, "argmax_r": h.argmax_r})
                }
            };
            println!("{record}");
            write_json(&out.join("oracle.json"), &record)?;
            arts.push(Artifact {
                file: "oracle.json".into(),
                units: json!({"value": "dimensionless"}),
            });
        }
        Command::Partition => {
            let traj = trajectory(cfg, false)?;
            let p = partition_by_l8(&traj, ex.eta)?;
            write_json(&out.join("partition.json"), &json!({"eta": ex.eta, "result": to_value(&p)}))?;
            arts.push(Artifact {
                file: "partition.json".into(),
                units: json!({"endpoints": "time", "per_interval_l8": "L8 spacetime norm", "M": "count"}),
            });
            println!("partition into M = {} intervals", p.m);
        }
        Command::Bound { e, a, c } => {
            let b = ex.bound;
            let inputs = BoundInputs {
                e: e.unwrap_or(b.e),
                a: a.unwrap_or(b.a),
                c: c.unwrap_or(b.c),
            };
            let r = theorem_bound(inputs)?;
            println!("{}", r.value);
            println!("log_bound={}", r.log_bound);
            write_json(&out.join("bound.json"), &json!({"inputs": to_value(&inputs), "report": to_value(&r)}))?;
            arts.push(Artifact {
                file: "bound.json".into(),
                units: json!({"value": "dimensionless", "log_bound": "natural log of value"}),
            });
        }
    }
    Ok(arts)
}

/// Load the config, take the output lock, run, and write `run.json`.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = resolve_output_dir(cli.out.as_deref(), &cfg);
    cfg.output_dir = out.clone();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // a second initialisation in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(&out)?;
    let _lock = Lock::acquire(&out)?;
    let result = dispatch(cli, &cfg, &out);
    let mut record = json!({
        "subcommand": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": to_value(&cfg),
    });
    match &result {
        Ok(arts) => {
            record["status"] = json!("ok");
            record["artifacts"] = arts.iter().map(|a| json!({"file": a.file, "units": a.units})).collect();
        }
        Err(e) => {
            record["status"] = json!("error");
            record["error"] = json!(e.to_string());
            if e.is_numerical() {
                write_json(&out.join("error.json"), &json!({"kind": "numerical", "detail": format!("{e:?}"), "message": e.to_string()}))?;
            }
        }
    }
    write_json(&out.join("run.json"), &record)?;
    result.map(|_| out)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Parse `args`, run, and map the outcome to an exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
