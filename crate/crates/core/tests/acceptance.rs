//! Acceptance run: every criterion prints one PASS/FAIL line.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::time::Instant;

use afwave::data::InitialData;
use afwave::dispersive::{
    default_r_grid, dispersive_decay_fit, holder_tail_oracle, interior_decay_experiment, kernel_integral_oracle,
    remote_past_term,
};
use afwave::evolve::{duhamel_integral, evolve, propagate_linear, SimConfig, Trajectory};
use afwave::field::gradient;
use afwave::grid::{japanese, Grid3, ScalarField, StateSlice};
use afwave::metric::{sample_metric, MetricSample, MetricSpec};
use afwave::morawetz::{
    averaged_morawetz, cutoff, main_density, morawetz_potential, potential_series, quiet_time_search, MorawetzConfig,
};
use afwave::norms::{
    energy_density, iled_ratio, linf_l4_interpolation, partition_by_l8, partition_by_level, strichartz_interpolation,
    theorem_bound, theorem_log_bound, BoundInputs, InterpolationCheck,
};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn bump(amplitude: f64, radius: f64) -> InitialData {
    InitialData::Bump {
        amplitude,
        radius,
        center: [0.0; 3],
        velocity: 0.0,
    }
}

fn l2(f: &ScalarField) -> f64 {
    afwave::field::lebesgue_norm(f, 2.0).unwrap()
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// Interpolation checks gathered from every trajectory the run produces.
#[derive(Default)]
struct Holder {
    checks: Vec<(String, InterpolationCheck)>,
}

impl Holder {
    fn record(&mut self, name: &str, traj: &Trajectory) {
        let fields: Vec<&ScalarField> = traj.slices.iter().map(|s| &s.u).collect();
        self.checks
            .push((format!("{name} L5L10"), strichartz_interpolation(&traj.times, &fields).unwrap()));
        self.checks
            .push((format!("{name} L8"), linf_l4_interpolation(&traj.times, &fields).unwrap()));
    }
}

fn max_drift(traj: &Trajectory) -> f64 {
    let e0 = traj.scalars[0].energy;
    traj.scalars
        .iter()
        .map(|d| (d.energy - e0).abs() / e0)
        .fold(0.0, f64::max)
}

fn energy_conservation(h: &mut Holder) -> Outcome {
    let start = Instant::now();
    let grid = Grid3::new(64, 0.25).unwrap();
    let data = bump(0.36, 2.0).sample(&grid).unwrap();
    let spec = MetricSpec::flat();
    let sim = SimConfig {
        cfl: 0.07,
        t_end: 20.0,
        snapshot_dt: 0.5,
        allow_wrap: true,
        ..SimConfig::default()
    };
    let nonlinear = evolve(&data, &spec, &sim).unwrap();
    let linear = evolve(&data, &spec, &SimConfig { nonlinear: false, ..sim }).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (dn, dl) = (max_drift(&nonlinear), max_drift(&linear));
    h.record("energy/nonlinear", &nonlinear);
    h.record("energy/linear", &linear);
    (
        dn <= 1e-4 && dl <= 1e-6 && secs <= 600.0,
        format!(
            "E = {:.4}, nonlinear drift {dn:.2e} (<= 1e-4), linear drift {dl:.2e} (<= 1e-6), {secs:.0} s",
            nonlinear.scalars[0].energy
        ),
    )
}

fn solver_convergence() -> Outcome {
    let data = InitialData::Gaussian {
        amplitude: 0.5,
        width: 2.0,
        center: [0.0; 3],
    };
    let sim = SimConfig {
        t_end: 2.0,
        snapshot_dt: 2.0,
        allow_wrap: true,
        ..SimConfig::default()
    };
    let finals: Vec<StateSlice> = [(32, 0.5), (64, 0.25), (128, 0.125)]
        .iter()
        .map(|&(n, dx)| {
            let grid = Grid3::new(n, dx).unwrap();
            let traj = evolve(&data.sample(&grid).unwrap(), &MetricSpec::flat(), &sim).unwrap();
            traj.slices.last().unwrap().clone()
        })
        .collect();
    let coarse = *finals[0].grid();
    // restrict to the coarse nodes, which the finer grids contain
    let restrict = |s: &StateSlice, stride: usize| {
        let values = (0..coarse.len())
            .map(|idx| {
                let (i, j, k) = coarse.unravel(idx);
                s.u.get(stride * i, stride * j, stride * k)
            })
            .collect();
        ScalarField::from_values(coarse, values).unwrap()
    };
    let (c, m, f) = (finals[0].u.clone(), restrict(&finals[1], 2), restrict(&finals[2], 4));
    let e1 = l2(&c.zip_map(&m, |a, b| a - b));
    let e2 = l2(&m.zip_map(&f, |a, b| a - b));
    let order = (e1 / e2).log2();
    (
        order >= 1.8,
        format!("L2 differences {e1:.3e}, {e2:.3e}, order {order:.3} (>= 1.8)"),
    )
}

fn duhamel_identity(h: &mut Holder) -> Outcome {
    let grid = Grid3::new(64, 0.25).unwrap();
    let spec = MetricSpec::flat();
    let data = bump(0.5, 2.0).sample(&grid).unwrap();
    let mut sim = SimConfig {
        cfl: 0.1,
        t_end: 5.0,
        snapshot_dt: 0.25,
        allow_wrap: true,
        ..SimConfig::default()
    };
    let dt = sim.dt(&spec, &grid).unwrap();
    sim.duhamel_tau_dt = Some(10.0 * dt);
    let traj = evolve(&data, &spec, &sim).unwrap();
    h.record("duhamel", &traj);
    let u = &traj.slices.last().unwrap().u;
    let free = propagate_linear(&data, 0.0, 5.0, &spec, &sim).unwrap();
    let forced = duhamel_integral(&traj, &spec, [0.0, 5.0], &[5.0], &sim).unwrap();
    let residual = u.zip_map(&free.u, |a, b| a - b).zip_map(&forced.slices[0].u, |a, b| a - b);
    let rel = l2(&residual) / l2(u);
    (
        rel <= 1e-3,
        format!("tau_dt = 10 dt = {:.4}, residual {rel:.3e} of ||u(5)|| (<= 1e-3)", 10.0 * dt),
    )
}

fn interpolation(h: &Holder) -> Outcome {
    let slack = 1e-12;
    let bad: Vec<&str> = h
        .checks
        .iter()
        .filter(|(_, c)| !c.holds(slack))
        .map(|(n, _)| n.as_str())
        .collect();
    let tightest = h
        .checks
        .iter()
        .map(|(_, c)| c.lhs / c.rhs)
        .fold(0.0, f64::max);
    (
        bad.is_empty() && !h.checks.is_empty(),
        format!(
            "{} checks, largest lhs/rhs {tightest:.6}, violations {bad:?}",
            h.checks.len()
        ),
    )
}

fn partition() -> Outcome {
    let grid = Grid3::new(48, 0.5).unwrap();
    let sim = SimConfig {
        t_end: 6.0,
        snapshot_dt: 0.25,
        nonlinear: false,
        ..SimConfig::default()
    };
    let linear = evolve(&bump(0.8, 2.0).sample(&grid).unwrap(), &MetricSpec::flat(), &sim).unwrap();
    let total = partition_by_l8(&linear, 1e9).unwrap().total_l8;
    let mut ok = true;
    let mut counts = Vec::new();
    for frac in [0.45, 0.6, 0.8, 1.0, 1.5] {
        let eta = frac * total;
        let p = partition_by_l8(&linear, eta).unwrap();
        let bound = (total.powi(8) / eta.powi(8)).ceil().max(1.0) as usize;
        ok &= p.per_interval_l8.iter().all(|&v| v <= 1.01 * eta) && p.m <= bound;
        counts.push((p.m, bound));
    }
    let times: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
    let synthetic = partition_by_level(&times, &vec![1.0; times.len()], 2.5).unwrap();
    let exact = synthetic.endpoints == [2.5, 5.0, 7.5];
    (
        ok && exact,
        format!(
            "B = {total:.4e}, (M, ceil(B^8/eta^8)) {counts:?}, synthetic endpoints {:?}",
            synthetic.endpoints
        ),
    )
}

/// O(n^6) double sums straight from the definitions.
fn brute_morawetz(state: &StateSlice, metric: &MetricSample, radius: f64) -> (f64, f64) {
    let g = *state.grid();
    let e = energy_density(state, metric);
    let grad = gradient(&state.u);
    let (u, ut) = (state.u.values(), state.ut.values());
    let pos: Vec<[f64; 3]> = (0..g.len()).map(|i| g.position(i)).collect();
    let mut m = 0.0;
    let mut main = 0.0;
    for x in 0..g.len() {
        let p = [0, 1, 2].map(|i| grad[i].values()[x] * ut[x]);
        let gnorm = (0..3).map(|i| grad[i].values()[x].powi(2)).sum::<f64>().sqrt();
        let target = 0.5 * (ut[x].abs() - gnorm).powi(2) + u[x].powi(6) / 6.0;
        for y in 0..g.len() {
            let z = [pos[x][0] - pos[y][0], pos[x][1] - pos[y][1], pos[x][2] - pos[y][2]];
            let phi = cutoff(z, radius);
            if phi == 0.0 {
                continue;
            }
            m += e.values()[y] * phi * (z[0] * p[0] + z[1] * p[1] + z[2] * p[2] + ut[x] * u[x]);
            main += e.values()[y] * phi * target;
        }
    }
    let v2 = g.cell_volume().powi(2);
    (m * v2, main * v2)
}

fn random_state(grid: &Grid3, rng: &mut ChaCha8Rng) -> StateSlice {
    let mut lump = || {
        let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let (a, w) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.7..2.0));
        move |x: [f64; 3]| {
            let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
            a * (-r2 / (w * w)).exp()
        }
    };
    let (f, g) = (lump(), lump());
    StateSlice::new(ScalarField::from_fn(*grid, f), ScalarField::from_fn(*grid, g), 0.0).unwrap()
}

fn morawetz_oracle() -> Outcome {
    let grid = Grid3::new(16, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    let mut min_main = f64::MAX;
    for spec in [MetricSpec::flat(), MetricSpec::static_bump(0.05)] {
        let metric = sample_metric(&spec, &grid, 0.0).unwrap();
        for (k, radius) in [1.3, 2.5, 3.7].into_iter().enumerate() {
            let state = random_state(&grid, &mut rng);
            let (mb, db) = brute_morawetz(&state, &metric, radius);
            let m = morawetz_potential(&state, &metric, radius).unwrap();
            let d = main_density(&state, &metric, radius).unwrap();
            worst = worst.max((m - mb).abs() / mb.abs()).max((d - db).abs() / db.abs());
            min_main = min_main.min(d).min(db);
            if k == 0 {
                for _ in 0..20 {
                    let s = random_state(&grid, &mut rng);
                    min_main = min_main.min(main_density(&s, &metric, radius).unwrap());
                }
            }
        }
    }
    (
        worst <= 1e-10 && min_main >= 0.0,
        format!("worst relative mismatch {worst:.2e} (<= 1e-10), smallest main_density {min_main:.3e} (>= 0)"),
    )
}

fn morawetz_scaling() -> Outcome {
    let grid = Grid3::new(108, 0.35).unwrap();
    let data = bump(0.5, 1.0).sample(&grid).unwrap();
    let sim = SimConfig {
        t_end: 14.5,
        snapshot_dt: 0.25,
        ..SimConfig::default()
    };
    let mut cs = Vec::new();
    let mut avg = Vec::new();
    for spec in [MetricSpec::flat(), MetricSpec::static_bump(0.05)] {
        let traj = evolve(&data, &spec, &sim).unwrap();
        let energy = traj.scalars[0].energy;
        for radius in [4.0, 8.0] {
            let m = potential_series(&traj, &spec, radius).unwrap();
            let peak = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            cs.push(peak / (energy * energy * radius));
        }
        if spec.is_flat() {
            for j in [2.0, 3.0] {
                let cfg = MorawetzConfig {
                    r0: 0.7,
                    j,
                    ..MorawetzConfig::default()
                };
                avg.push(averaged_morawetz(&traj, &spec, &cfg).unwrap().rhs_fit);
            }
        }
    }
    let (sc, sa) = (spread(&cs), spread(&avg));
    (
        sc <= 2.0 && sa <= 2.0,
        format!("c over (flat, bump) x (R = 4, 8) {cs:.4?} spread {sc:.3}; averaged constant J = 2, 3 {avg:.4?} spread {sa:.3} (both <= 2)"),
    )
}

fn iled() -> Outcome {
    let grid = Grid3::new(166, 0.4).unwrap();
    // smooth data: a sharp-edged bump leaves a slow grid-dispersion wake near the
    // origin that dominates the weighted tail
    let data = InitialData::Gaussian {
        amplitude: 0.5,
        width: 1.5,
        center: [0.0; 3],
    }
    .sample(&grid)
    .unwrap();
    let sim = SimConfig {
        t_end: 20.0,
        snapshot_dt: 0.5,
        ..SimConfig::default()
    };
    let gamma = 0.5;
    let mut at_t2 = Vec::new();
    let mut doubling = Vec::new();
    for eps in [0.0, 0.02, 0.05] {
        let traj = evolve(&data, &MetricSpec::static_bump(eps), &sim).unwrap();
        let short = iled_ratio(&traj.window(0.0, 10.0).unwrap(), gamma).unwrap();
        let long = iled_ratio(&traj, gamma).unwrap();
        at_t2.push(long);
        doubling.push((long - short).abs() / short);
    }
    let eps_var = spread(&at_t2) - 1.0;
    let t_var = doubling.iter().cloned().fold(0.0, f64::max);
    let finite = at_t2.iter().all(|v| v.is_finite());
    (
        finite && eps_var <= 0.25 && t_var <= 0.10,
        format!(
            "ratios at T2 = 20 over eps 0, 0.02, 0.05: {at_t2:.4?} (variation {eps_var:.3} <= 0.25); T2 10 -> 20 change {doubling:.4?} (<= 0.10)"
        ),
    )
}

fn dispersive_decay() -> Outcome {
    let start = Instant::now();
    let grid = Grid3::new(160, 0.3).unwrap();
    let data = InitialData::VelocityBump {
        amplitude: 0.5,
        radius: 2.0,
        center: [0.0; 3],
    }
    .sample(&grid)
    .unwrap();
    let sim = SimConfig {
        snapshot_dt: 0.25,
        ..SimConfig::default()
    };
    let ts = [2.0, 4.0, 8.0, 16.0];
    let flat = dispersive_decay_fit(&data, &MetricSpec::flat(), 0.0, &ts, 0, &sim).unwrap();
    let interior = interior_decay_experiment(&data, &MetricSpec::flat(), &ts, &sim).unwrap();
    let bumped = dispersive_decay_fit(&data, &MetricSpec::static_bump(0.05), 0.0, &ts, 0, &sim).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let near = |p: f64| (p + 1.0).abs() <= 0.15;
    (
        near(flat.p) && near(interior.p) && bumped.p <= -0.85 && secs <= 1800.0,
        format!(
            "flat p {:.3}, interior cone p {:.3} (both -1 +- 0.15), static bump p {:.3} (<= -0.85), {secs:.0} s",
            flat.p, interior.p, bumped.p
        ),
    )
}

fn scalar_oracles() -> Outcome {
    let start = Instant::now();
    let mut detail = String::new();
    let mut ok = true;
    for sign in [1, -1] {
        let products: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&a| kernel_integral_oracle(a, 0.1, sign).unwrap() * japanese(a))
            .collect();
        let s = spread(&products);
        ok &= products.iter().all(|p| p.is_finite()) && s <= 5.0;
        detail += &format!("kernel sign {sign:+}: I<a> {products:.3?} spread {s:.2}; ");
    }
    let tails: Vec<f64> = [10.0, 1e2, 1e3, 1e4]
        .iter()
        .map(|&w: &f64| {
            let (t, t0) = (4.0 * w, 2.0 * w);
            let h = holder_tail_oracle(t, t0, w, 0.2, &default_r_grid(t, 801)).unwrap();
            h.sup * japanese(w).powf(0.8)
        })
        .collect();
    let s = spread(&tails);
    ok &= s <= 5.0;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 60.0;
    detail += &format!("tail sup<T>^0.8 {tails:.3?} spread {s:.2} (all <= 5); {secs:.1} s");
    (ok, detail)
}

fn quiet_time(h: &mut Holder) -> Outcome {
    let grid = Grid3::new(112, 0.35).unwrap();
    let spec = MetricSpec::flat();
    let sim = SimConfig {
        t_end: 12.0,
        snapshot_dt: 0.25,
        ..SimConfig::default()
    };
    let traj = evolve(&bump(1.0, 2.0).sample(&grid).unwrap(), &spec, &sim).unwrap();
    h.record("quiet", &traj);
    let cfg = MorawetzConfig {
        recent_past: 1.0,
        eval_window: 1.0,
        stride: Some(0.5),
        ..MorawetzConfig::default()
    };
    let q = quiet_time_search(&traj, &spec, [0.0, 11.0], &cfg, &sim).unwrap();
    let quarter = (q.candidates.len() / 4).max(1);
    let early = q.candidates[..quarter].iter().map(|c| c.1).fold(0.0, f64::max);
    let late = q.candidates[q.candidates.len() - quarter..]
        .iter()
        .map(|c| c.1)
        .fold(0.0, f64::max);

    // far-past Duhamel pieces feed the Hölder check of criterion 4
    for t0 in [4.0, 8.0] {
        let rp = remote_past_term(&traj, &spec, t0, 2.0, 1.0, &sim).unwrap();
        h.checks.push((format!("N_far t0 = {t0}"), rp.interpolation));
    }
    (
        late <= 0.1 * early,
        format!(
            "{} candidates, early max {early:.3e}, late max {late:.3e}, ratio {:.2e} (<= 0.1)",
            q.candidates.len(),
            late / early
        ),
    )
}

/// `ln 2` and `2^{2/21}` in fixed point with `digits` decimals.
fn bound_log_oracle() -> f64 {
    let digits = 60u32;
    let scale = BigUint::from(10u32).pow(digits);
    let mut ln2 = BigUint::from(0u32);
    let mut k = 1u32;
    loop {
        let term = &scale / (BigUint::from(k) << k as usize);
        if term == BigUint::from(0u32) {
            break;
        }
        ln2 += term;
        k += 1;
    }
    // E^{85/6} E^{13/14} = 2^{634/42} = 2^15 2^{2/21}
    let root = (BigUint::from(4u32) * scale.pow(21)).nth_root(21);
    let log = ln2 * 4u32 / 7u32 + (root << 15);
    let shifted = log / BigUint::from(10u32).pow(digits - 20);
    u128::try_from(&shifted).unwrap() as f64 / 1e20
}

fn bound_evaluator() -> Outcome {
    let b = |e, a, c| theorem_bound(BoundInputs { e, a, c }).unwrap();
    let unit = b(1.0, 1.0, 1.0).value;
    let unit_err = (unit - std::f64::consts::E).abs();
    let mut monotone = true;
    let base = [0.6, 0.8, 1.2];
    for arg in 0..3 {
        let mut prev = f64::NEG_INFINITY;
        for v in [0.5, 0.75, 1.0, 1.1, 1.25] {
            let mut x = base;
            x[arg] = v;
            let l = b(x[0], x[1], x[2]).log_bound;
            monotone &= l > prev;
            prev = l;
        }
    }
    let oracle = bound_log_oracle();
    let log = theorem_log_bound(BoundInputs { e: 2.0, a: 1.0, c: 1.0 }).unwrap();
    let rel = (log - oracle).abs() / oracle;
    (
        unit_err <= 1e-12 && monotone && rel <= 1e-10,
        format!(
            "bound(1,1,1) - e = {unit_err:.1e}, monotone {monotone}, log bound(2,1,1) {log:.10} vs oracle {oracle:.10} (rel {rel:.1e})"
        ),
    )
}

const NAMES: [&str; 12] = [
    "energy conservation",
    "solver convergence",
    "Duhamel identity",
    "interpolation identities",
    "partition algorithm",
    "Morawetz oracle equivalence",
    "Morawetz scaling",
    "ILED ratio",
    "dispersive decay",
    "scalar lemma oracles",
    "quiet-time trend",
    "bound evaluator",
];

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().map_or(true, |o| o.contains(&k));
    let mut holder = Holder::default();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    // criterion 4 consumes the trajectories produced by 1, 3 and 11
    for k in [1, 2, 3, 5, 6, 7, 8, 9, 10, 11, 12, 4] {
        if !wanted(k) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match k {
            1 => energy_conservation(&mut holder),
            2 => solver_convergence(),
            3 => duhamel_identity(&mut holder),
            4 => interpolation(&holder),
            5 => partition(),
            6 => morawetz_oracle(),
            7 => morawetz_scaling(),
            8 => iled(),
            9 => dispersive_decay(),
            10 => scalar_oracles(),
            11 => quiet_time(&mut holder),
            _ => bound_evaluator(),
        }))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        eprintln!("criterion {k} finished in {:.1} s", start.elapsed().as_secs_f64());
        results.push((k, out));
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, (pass, detail)) in &results {
        println!(
            "criterion {k:2} [{}]: {} | {detail}",
            NAMES[k - 1],
            if *pass { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
