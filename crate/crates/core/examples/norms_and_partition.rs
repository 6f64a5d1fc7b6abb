//! Mixed norms of a nonlinear run and the L^8 partition of its linear part.
use afwave::data::InitialData;
use afwave::evolve::{evolve, SimConfig};
use afwave::grid::{Grid3, ScalarField};
use afwave::metric::MetricSpec;
use afwave::norms::{norms_csv, partition_by_l8, standard_norms, strichartz_interpolation};

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(48, 0.5)?;
    let data = InitialData::Bump { amplitude: 0.8, radius: 2.0, center: [0.0; 3], velocity: 0.0 }.sample(&grid)?;
    let spec = MetricSpec::flat();
    let sim = SimConfig { t_end: 6.0, snapshot_dt: 0.25, ..SimConfig::default() };
    let traj = evolve(&data, &spec, &sim)?;
    print!("{}", norms_csv(&standard_norms(&traj)?));

    let fields: Vec<&ScalarField> = traj.slices.iter().map(|s| &s.u).collect();
    let c = strichartz_interpolation(&traj.times, &fields)?;
    println!("L5L10 {:.4e} <= {:.4e}", c.lhs, c.rhs);

    let linear = evolve(&data, &spec, &SimConfig { nonlinear: false, ..sim })?;
    let p = partition_by_l8(&linear, 0.5 * partition_by_l8(&linear, 1e9)?.total_l8)?;
    println!("B {:.4e} M {} cuts {:?}", p.total_l8, p.m, p.endpoints);
    Ok(())
}
