//! Scan for a quiet time and evaluate the remote-past Duhamel term there.
use afwave::data::InitialData;
use afwave::dispersive::remote_past_term;
use afwave::evolve::{evolve, SimConfig};
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;
use afwave::morawetz::{quiet_time_search, MorawetzConfig};

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(56, 0.5)?;
    let spec = MetricSpec::flat();
    let data = InitialData::Bump { amplitude: 1.0, radius: 2.0, center: [0.0; 3], velocity: 0.0 }.sample(&grid)?;
    let sim = SimConfig { t_end: 8.0, snapshot_dt: 0.25, ..SimConfig::default() };
    let traj = evolve(&data, &spec, &sim)?;

    let cfg = MorawetzConfig { recent_past: 1.0, eval_window: 1.0, stride: Some(1.0), ..MorawetzConfig::default() };
    let q = quiet_time_search(&traj, &spec, [0.0, 7.0], &cfg, &sim)?;
    print!("{}", q.json_lines());

    let rp = remote_past_term(&traj, &spec, q.t0.max(3.0), 1.0, 1.0, &sim)?;
    println!(
        "remote past: Linf {:.3e} L4 {:.3e} L8 {:.3e} (bound {:.3e})",
        rp.l_inf, rp.l4, rp.l8, rp.interpolation.rhs
    );
    Ok(())
}
