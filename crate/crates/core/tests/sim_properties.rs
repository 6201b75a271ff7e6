mod common;

use common::scenario;
use gridform_core::sim::{run, Trace};

/// Final ω, V, P and Q of every inverter.
fn final_state(trace: &Trace) -> Vec<f64> {
    trace.last().unwrap().rows.iter().flat_map(|r| [r.omega, r.v, r.p, r.q]).collect()
}

fn max_diff(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter().zip(b).zip(scale).map(|((x, y), s)| (x - y).abs() / s).fold(0.0, f64::max)
}

#[test]
fn equilibrium_without_events_stays_flat() {
    let sc = scenario("table1_symmetric", &["events=[]", "sim.duration=5"]);
    let r = run(&sc).unwrap();
    assert!(r.metrics.completed);
    let first = &r.trace.samples[0];
    for s in &r.trace.samples {
        for (a, b) in s.rows.iter().zip(&first.rows) {
            assert!((a.omega - b.omega).abs() < 1e-9, "t={} ω drift {}", s.t, a.omega - b.omega);
            assert!((a.v - b.v).abs() < 1e-7);
            assert!((a.p - b.p).abs() < 1e-3 && (a.q - b.q).abs() < 1e-3);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let sc = scenario("scenario1_droop_active", &["sim.duration=10", "events.0.t=1", "events.0.duration=3", "events.1.t=6"]);
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}

#[test]
fn symmetric_disturbance_gives_identical_trajectories() {
    let ev = r#"events=[{"kind":"load_step","t":0.5,"bus":"a","p":3e5,"q":1e5},{"kind":"load_step","t":0.5,"bus":"b","p":3e5,"q":1e5},{"kind":"load_step","t":0.5,"bus":"c","p":3e5,"q":1e5}]"#;
    let sc = scenario("table1_symmetric", &[ev, "sim.duration=5"]);
    let r = run(&sc).unwrap();
    let p = &sc.inverters[0];
    let mut moved = 0.0f64;
    for s in &r.trace.samples {
        let r0 = &s.rows[0];
        moved = moved.max((r0.p - p.p_set).abs());
        for r in &s.rows[1..] {
            assert!((r.omega - r0.omega).abs() <= 1e-9 * p.omega_nom);
            assert!((r.v - r0.v).abs() <= 1e-9 * p.v_nom);
            assert!((r.p - r0.p).abs() <= 1e-9 * p.s_max && (r.q - r0.q).abs() <= 1e-9 * p.s_max);
        }
    }
    assert!(moved > 1e4, "disturbance had no effect");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let ev = r#"events=[{"kind":"load_pickup_ramp","t":0.0,"bus":"a","p":6e5,"q":2e5,"duration":1.0,"ramp":"load"}]"#;
    let finals: Vec<Vec<f64>> = [8e-3, 4e-3, 2e-3]
        .iter()
        .map(|dt| {
            let sc = scenario("table1_symmetric", &[ev, "sim.duration=2", &format!("sim.dt={dt}")]);
            let r = run(&sc).unwrap();
            assert!(r.metrics.completed);
            final_state(&r.trace)
        })
        .collect();
    let sc = scenario("table1_symmetric", &[]);
    let scale: Vec<f64> = sc.inverters.iter().flat_map(|p| [p.omega_nom, p.v_nom, p.s_max, p.s_max]).collect();
    let coarse = max_diff(&finals[0], &finals[1], &scale);
    let fine = max_diff(&finals[1], &finals[2], &scale);
    let order = (coarse / fine).log2();
    assert!(order >= 3.5, "observed order {order:.3} ({coarse:e}, {fine:e})");
}

#[test]
fn steady_state_matches_prediction() {
    let sc = scenario("table1_symmetric", &["sim.duration=100"]);
    let r = run(&sc).unwrap();
    let s = r.metrics.steady_state.expect("homogeneous scenario");
    assert!(s.rel_error < 1e-6, "{s:?}");
    assert!(s.omega_bar_predicted.abs() > 1e-3);
}
