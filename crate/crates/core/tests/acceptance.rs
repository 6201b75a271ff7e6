//! One pass/fail line per acceptance criterion. Every criterion is checked
//! and reported before the test fails on any of them.

mod common;

use common::{active_jacobian_gap, modal_sweep, pu_gap, rh_sweep, scenario};
use gridform_core::agents::run_in_memory;
use gridform_core::model::{CommGraph, EdgeSpec, WeightKind};
use gridform_core::sim::{analyze, run, Channel};
use gridform_core::stability::projection;

const SCENARIOS: [&str; 8] = [
    "table1_symmetric",
    "fig1_unequal_energy",
    "scenario1_droop_active",
    "scenario1_droop_active_base",
    "scenario2_vsm_reactive",
    "scenario2_vsm_reactive_base",
    "scenario3_hetero_both",
    "scenario3_hetero_both_base",
];

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn frequency_restoration() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for name in SCENARIOS {
        let sc = scenario(name, &[]);
        let m = run(&sc).unwrap().metrics;
        let worst = m.windows.iter().map(|w| w.terminal_deviation).fold(0.0f64, f64::max);
        let ok = m.completed && m.restored && m.wall_time_s < 30.0 && sc.dt == 1e-3 && sc.duration == 120.0;
        pass &= ok;
        notes.push(format!("{name} dev {worst:.1e} rad/s in {:.2} s", m.wall_time_s));
    }
    outcome(pass, notes.join("; "))
}

fn fig1_replication() -> Outcome {
    let sc = scenario("fig1_unequal_energy", &[]);
    let r = run(&sc).unwrap();
    let sharing = r.metrics.power_sharing_rel;
    let spread = r.trace.spread(Channel::FreqEnergy);
    let settled = 20.0;
    let after: Vec<(f64, f64)> = r.trace.samples.iter().zip(&spread).filter(|(s, _)| s.t >= settled).map(|(s, &x)| (s.t, x)).collect();
    let monotone = after.windows(2).all(|w| w[1].1 > w[0].1);
    let at = |t: f64| after.iter().find(|(s, _)| *s >= t).map(|p| p.1).unwrap();
    let (mid, end) = (at(60.0), after.last().unwrap().1);
    let growing = end > 1.5 * mid && mid > 0.0;
    outcome(
        sharing < 0.01 && monotone && growing,
        format!("sharing spread {:.2e} of mean; m·ΔE spread increasing from {settled} s: {monotone}; {mid:.3e} at 60 s, {end:.3e} at end", sharing),
    )
}

fn proposed_vs_base() -> Outcome {
    let cases: [(&str, &[Channel]); 3] = [
        ("scenario1_droop_active", &[Channel::FreqEnergy]),
        ("scenario2_vsm_reactive", &[Channel::VoltEnergy]),
        ("scenario3_hetero_both", &[Channel::FreqEnergy, Channel::VoltEnergy]),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, channels) in cases {
        let prop = run(&scenario(name, &[])).unwrap().metrics;
        let base = run(&scenario(&format!("{name}_base"), &[])).unwrap().metrics;
        for &ch in channels {
            let pick = |m: &gridform_core::sim::Metrics| if ch == Channel::FreqEnergy { m.reserve_freq.ratio } else { m.reserve_volt.ratio };
            let (p, b) = (pick(&prop), pick(&base));
            let label = if ch == Channel::FreqEnergy { "mΔE" } else { "nΔF" };
            pass &= p < 0.01 && b > 0.10;
            notes.push(format!("{name} {label} proposed {p:.2e} base {b:.2e}"));
        }
    }
    outcome(pass, notes.join("; "))
}

fn stability_certification() -> Outcome {
    let sc = scenario("table1_symmetric", &[]);
    let a = analyze(&sc).unwrap();
    let rep = a.report.as_ref().unwrap();
    let max_re = rep.freq_spectrum.max_real.max(rep.volt_spectrum.max_real);
    let nominal = a.bounds_ok && rep.rh_pass && max_re < -1e-6;
    let mut detail = format!("bounds {} RH {} max Re {max_re:.3e}", a.bounds_ok, rep.rh_pass);
    let crossing = match a.ki_crossing {
        None => {
            detail.push_str("; no k_i crossing found up to 10⁴·max(k_i, 1/γ_e)");
            false
        }
        Some(k) => {
            let over = analyze(&scenario("table1_symmetric", &[&format!("inverters.*.k_i={}", 1.05 * k)])).unwrap();
            let r = over.report.unwrap();
            let re = r.freq_spectrum.max_real.max(r.volt_spectrum.max_real);
            detail.push_str(&format!("; crossing k_i {k:.4e}, above it RH {} max Re {re:.3e}", r.rh_pass));
            !r.rh_pass && re > 0.0
        }
    };
    outcome(nominal && crossing, detail)
}

fn routh_hurwitz_oracle() -> Outcome {
    let s = rh_sweep(5, 10_000);
    outcome(
        s.disagreements.is_empty(),
        format!("{} checked, {} in boundary band, {} disagreements", s.checked, s.skipped, s.disagreements.len()),
    )
}

fn linearization_fidelity() -> Outcome {
    let fd = active_jacobian_gap(6, 20);
    let modal = modal_sweep(7, 40);
    outcome(fd <= 1e-6 && modal <= 1e-8, format!("L_P vs FD {fd:.2e}; modal vs assembled {modal:.2e}"))
}

fn distributed_equivalence() -> Outcome {
    let sc = scenario("scenario1_droop_active", &[]);
    let mono = run(&sc).unwrap();
    let dist = run_in_memory(&sc).unwrap();
    let gap = pu_gap(&sc, &mono.trace, &dist.trace);
    let delayed = run_in_memory(&scenario("scenario1_droop_active", &["agents.delay_ms=50"])).unwrap();
    let worst = delayed.metrics.windows.iter().map(|w| w.terminal_deviation).fold(0.0f64, f64::max);
    outcome(
        dist.metrics.completed && gap < 1e-6 && delayed.metrics.completed && delayed.metrics.restored,
        format!("in-memory gap {gap:.2e} pu; 50 ms delay dev {worst:.2e} rad/s"),
    )
}

fn integrator_order() -> Outcome {
    let ev = r#"events=[{"kind":"load_pickup_ramp","t":0.0,"bus":"a","p":6e5,"q":2e5,"duration":1.0,"ramp":"load"}]"#;
    let finals: Vec<Vec<f64>> = [8e-3, 4e-3, 2e-3]
        .iter()
        .map(|dt| {
            let sc = scenario("table1_symmetric", &[ev, "sim.duration=2", &format!("sim.dt={dt}")]);
            let r = run(&sc).unwrap();
            let scale: Vec<f64> = sc.inverters.iter().flat_map(|p| [p.omega_nom, p.v_nom, p.s_max, p.s_max]).collect();
            r.trace.last().unwrap().rows.iter().flat_map(|r| [r.omega, r.v, r.p, r.q]).zip(scale).map(|(x, s)| x / s).collect()
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (coarse, fine) = (diff(&finals[0], &finals[1]), diff(&finals[1], &finals[2]));
    let order = (coarse / fine).log2();
    outcome(order >= 3.5, format!("observed order {order:.2} (differences {coarse:.2e}, {fine:.2e})"))
}

fn projection_identities() -> Outcome {
    let mut worst = 0.0f64;
    for n in 2..=12 {
        let p = projection::<f64>(n).unwrap();
        let r = &p.r;
        for i in 0..n - 1 {
            worst = worst.max((0..n).map(|j| r[(i, j)]).sum::<f64>().abs());
            for k in 0..n - 1 {
                let dot: f64 = (0..n).map(|j| r[(i, j)] * r[(k, j)]).sum();
                worst = worst.max((dot - if i == k { 1.0 } else { 0.0 }).abs());
            }
        }
        for i in 0..n {
            for j in 0..n {
                let rtr: f64 = (0..n - 1).map(|k| r[(k, i)] * r[(k, j)]).sum();
                worst = worst.max((rtr - (if i == j { 1.0 } else { 0.0 }) + 1.0 / n as f64).abs());
            }
        }
        let ids: Vec<u32> = (1..=n as u32).collect();
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let w = 0.3 + ((i * 7 + j * 3) % 5) as f64;
                EdgeSpec { i: ids[i], j: ids[j], a: w, b: 2.0 * w, e: 0.5 * w, f: 0.05 * w }
            })
            .collect();
        let g = CommGraph::new(ids, &edges).unwrap();
        for kind in [WeightKind::A, WeightKind::B, WeightKind::E, WeightKind::F] {
            worst = worst.max(g.laplacian(kind).row_sums().iter().fold(0.0f64, |m, s| m.max(s.abs())));
        }
    }
    outcome(worst <= 1e-12, format!("largest residual {worst:.1e} over N = 2..12"))
}

/// Reactive channel with the voltage integrator leak removed; printed for
/// reference only.
fn leak_free_diagnostic() -> String {
    ["scenario2_vsm_reactive", "scenario3_hetero_both"]
        .iter()
        .map(|name| {
            let m = run(&scenario(name, &["inverters.*.xi=0"])).unwrap().metrics;
            format!("{name} nΔF ratio {:.2e}", m.reserve_volt.ratio)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn acceptance() {
    let checks: [Check; 9] = [
        ("frequency restoration", frequency_restoration),
        ("unequal energy under plain DAPI", fig1_replication),
        ("proposed vs base reserve consensus", proposed_vs_base),
        ("stability certification", stability_certification),
        ("Routh-Hurwitz oracle", routh_hurwitz_oracle),
        ("linearization fidelity", linearization_fidelity),
        ("distributed equivalence", distributed_equivalence),
        ("integrator order", integrator_order),
        ("projection and Laplacian identities", projection_identities),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in checks.iter().enumerate() {
        let o = check();
        println!("criterion {} {}: {} ({})", k + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
        if !o.pass {
            failed.push(k + 1);
        }
    }
    println!("info: xi = 0: {}", leak_free_diagnostic());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
