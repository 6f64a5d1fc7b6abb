//! Evolve a small bump in a static metric perturbation and print the energy record.
use afwave::data::InitialData;
use afwave::evolve::{evolve, SimConfig};
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(32, 0.5)?;
    let spec = MetricSpec::static_bump(0.05);
    let data = InitialData::Bump { amplitude: 0.5, radius: 2.0, center: [0.0; 3], velocity: 0.0 }.sample(&grid)?;
    let sim = SimConfig { t_end: 4.0, snapshot_dt: 0.5, ..SimConfig::default() };
    let traj = evolve(&data, &spec, &sim)?;
    print!("{}", traj.manifest_csv());
    let (e0, e1) = (traj.scalars[0].energy, traj.scalars.last().unwrap().energy);
    println!("relative energy drift {:.3e}", (e1 - e0).abs() / e0);
    Ok(())
}
