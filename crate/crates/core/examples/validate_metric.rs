//! Check the decay hypotheses for each metric family.
use afwave::metric::{validate_assumptions, MetricSpec};

fn main() -> afwave::Result<()> {
    for spec in [MetricSpec::flat(), MetricSpec::static_bump(0.05), MetricSpec::time_modulated(0.05, 0.5)] {
        let r = validate_assumptions(&spec, 2000, 1)?;
        println!(
            "{:?}: a {:.3} b {:.3} c {:.3} d {:.3} pass {}",
            spec.family, r.hyp_a.worst_ratio, r.hyp_b.worst_ratio, r.hyp_c.worst_ratio, r.hyp_d.worst_ratio, r.pass
        );
    }
    Ok(())
}
