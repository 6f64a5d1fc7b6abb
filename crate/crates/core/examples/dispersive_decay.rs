//! Fit the decay exponent of the free evolution sup norm, flat and curved.
use afwave::data::InitialData;
use afwave::dispersive::dispersive_decay_fit;
use afwave::evolve::SimConfig;
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;

fn main() -> afwave::Result<()> {
    let grid = Grid3::new(64, 0.5)?;
    // velocity data: Kirchhoff gives sup |u| = G(0) / 2t exactly once t >= radius
    let data = InitialData::VelocityBump { amplitude: 1.0, radius: 2.0, center: [0.0; 3] }.sample(&grid)?;
    let sim = SimConfig { snapshot_dt: 0.5, ..SimConfig::default() };
    let fit = dispersive_decay_fit(&data, &MetricSpec::flat(), 0.0, &[2.0, 4.0, 6.0, 8.0], 0, &sim)?;
    print!("{}", fit.csv());
    println!("flat p = {:.3}, c = {:.3}", fit.p, fit.c);
    let bumped = dispersive_decay_fit(&data, &MetricSpec::static_bump(0.05), 0.0, &[2.0, 4.0, 6.0, 8.0], 0, &sim)?;
    println!("static bump p = {:.3}", bumped.p);
    Ok(())
}
