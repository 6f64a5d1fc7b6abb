//! Morawetz potential, its time-derivative ledger and the averaged estimate.
use afwave::data::InitialData;
use afwave::evolve::{evolve, SimConfig};
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;
use afwave::morawetz::{averaged_morawetz, ledger, potential_bound, MorawetzConfig};

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(52, 0.25)?;
    let spec = MetricSpec::flat();
    let data = InitialData::Bump { amplitude: 0.5, radius: 1.5, center: [0.0; 3], velocity: 0.0 }.sample(&grid)?;
    let sim = SimConfig { t_end: 4.0, snapshot_dt: 0.125, ..SimConfig::default() };
    let traj = evolve(&data, &spec, &sim)?;
    let energy = traj.scalars[0].energy;

    let l = ledger(&traj, &spec, 2.0)?;
    print!("{}", l.csv());
    println!("int |residual| {:.3e}, observed order {:?}", l.residual_integral(), l.fd_order);
    println!("max |M_R| / (E^2 R) = {:.4}", potential_bound(&l, energy, 2.0));

    let cfg = MorawetzConfig { r0: 0.5, j: 2.0, ..MorawetzConfig::default() };
    let avg = averaged_morawetz(&traj, &spec, &cfg)?;
    println!("averaged lhs {:.4e}, lhs J / (T E^2) = {:.4}", avg.lhs, avg.rhs_fit);
    Ok(())
}
