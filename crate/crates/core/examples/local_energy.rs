//! Local energy norms, the ILED ratio across metric amplitudes and the first-order energy.
use afwave::data::InitialData;
use afwave::evolve::{evolve, SimConfig};
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;
use afwave::norms::{high_order_energy, iled_ratio, le1_norm};

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(48, 0.5)?;
    let data = InitialData::Gaussian { amplitude: 0.5, width: 1.5, center: [0.0; 3] }.sample(&grid)?;
    let sim = SimConfig { t_end: 6.0, snapshot_dt: 0.5, allow_wrap: true, ..SimConfig::default() };
    for eps in [0.0, 0.02, 0.05] {
        let traj = evolve(&data, &MetricSpec::static_bump(eps), &sim)?;
        let hoe = high_order_energy(&traj, 1)?;
        println!(
            "eps {eps:<4}  LE1 {:.4}  LE1 with u^6 {:.4}  ILED ratio {:.4}  sup E_1 / E_1(0) {:.4}",
            le1_norm(&traj, 0.5, false)?,
            le1_norm(&traj, 0.5, true)?,
            iled_ratio(&traj, 0.5)?,
            hoe.ratio
        );
    }
    Ok(())
}
