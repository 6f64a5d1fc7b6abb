//! Save a run, resume from a mid-run snapshot and compare the final states.
use afwave::data::InitialData;
use afwave::evolve::{evolve, resume, snapshot_path, SimConfig};
use afwave::grid::Grid3;
use afwave::metric::MetricSpec;

fn main() -> afwave::Result<()> {
    let dir = std::env::temp_dir().join(format!("afwave-resume-{}", std::process::id()));
    let grid = Grid3::new(32, 0.5)?;
    let spec = MetricSpec::time_modulated(0.05, 0.5);
    let data = InitialData::Bump { amplitude: 0.5, radius: 2.0, center: [0.0; 3], velocity: 0.0 }.sample(&grid)?;
    let sim = SimConfig { t_end: 3.0, snapshot_dt: 0.5, allow_wrap: true, ..SimConfig::default() };
    let full = evolve(&data, &spec, &sim)?;
    full.save(&dir)?;

    let mid = full.scalars[full.len() / 2].step;
    let rest = resume(&snapshot_path(&dir, mid), &spec, &sim)?;
    let (a, b) = (full.slices.last().unwrap(), rest.slices.last().unwrap());
    let same = a.u.values() == b.u.values() && a.ut.values() == b.ut.values();
    println!("resumed from step {mid}: final state bit-identical = {same}");
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
