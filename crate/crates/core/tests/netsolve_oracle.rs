mod common;

use common::{active_jacobian_gap, random_case, random_sources, Case, V_NOM};
use gridform_core::netsolve::{solve_injections, BindingSpec, LineSpec, LoadSpec};
use gridform_core::stability::{linearize_power, OperatingPoint};
use nalgebra::{Complex, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Independent nodal solve on the unreduced network. Unknowns are every bus
/// voltage followed by every source current; each source contributes
/// `V_bus + z·I = E`.
fn oracle(case: &Case, sources: &[(f64, f64)], load_scale: f64) -> Vec<(f64, f64)> {
    let n = case.buses.len();
    let k = case.bindings.len();
    let idx = |b: &str| case.buses.iter().position(|x| x == b).unwrap();
    let mut a = DMatrix::<Complex<f64>>::zeros(n + k, n + k);
    let mut rhs = DVector::<Complex<f64>>::zeros(n + k);
    for l in &case.lines {
        let y = Complex::new(1.0, 0.0) / Complex::new(l.r, l.x);
        let (i, j) = (idx(&l.from), idx(&l.to));
        a[(i, i)] += y;
        a[(j, j)] += y;
        a[(i, j)] -= y;
        a[(j, i)] -= y;
    }
    for ld in &case.loads {
        let i = idx(&ld.bus);
        a[(i, i)] += Complex::new(ld.p, -ld.q) * (load_scale / (V_NOM * V_NOM));
    }
    let mut e = Vec::new();
    for (s, (b, &(v, d))) in case.bindings.iter().zip(sources).enumerate() {
        let i = idx(&b.bus);
        a[(i, n + s)] -= Complex::new(1.0, 0.0);
        a[(n + s, i)] = Complex::new(1.0, 0.0);
        a[(n + s, n + s)] = Complex::new(b.r, b.x);
        let es = Complex::from_polar(v, d);
        rhs[n + s] = es;
        e.push(es);
    }
    let x = a.lu().solve(&rhs).expect("oracle system singular");
    (0..k)
        .map(|s| {
            let sp = e[s] * x[n + s].conj();
            (sp.re, sp.im)
        })
        .collect()
}

fn assert_close(got: &[(f64, f64)], want: &[(f64, f64)], rel: f64) {
    let scale = want.iter().map(|&(p, q)| p.hypot(q)).fold(0.0f64, f64::max);
    for (g, w) in got.iter().zip(want) {
        assert!((g.0 - w.0).abs() <= rel * scale && (g.1 - w.1).abs() <= rel * scale, "{g:?} vs {w:?}");
    }
}

#[test]
fn three_inverter_network_matches_nodal_oracle() {
    let b = |s: &str| s.to_string();
    let case = Case {
        buses: vec![b("a"), b("b"), b("c")],
        lines: vec![
            LineSpec { from: b("a"), to: b("b"), r: 0.0123, x: 0.0369 },
            LineSpec { from: b("b"), to: b("c"), r: 0.0123, x: 0.0369 },
            LineSpec { from: b("c"), to: b("a"), r: 0.0123, x: 0.0369 },
        ],
        loads: vec![
            LoadSpec { bus: b("a"), p: 1.2e6, q: 0.6e6 },
            LoadSpec { bus: b("b"), p: 1.2e6, q: 0.6e6 },
            LoadSpec { bus: b("c"), p: 1.2e6, q: 0.6e6 },
        ],
        bindings: (1..=3)
            .map(|i| BindingSpec { inverter: i, bus: ["a", "b", "c"][i as usize - 1].into(), r: 0.0006144, x: 0.006144 })
            .collect(),
    };
    let src = [(V_NOM, 0.0), (1.01 * V_NOM, -0.02), (0.99 * V_NOM, 0.015)];
    assert_close(&solve_injections(&case.net(), &src).unwrap(), &oracle(&case, &src, 1.0), 1e-9);
}

#[test]
fn random_networks_match_nodal_oracle() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..100 {
        let case = random_case(&mut rng, false);
        let src = random_sources(&mut rng, case.bindings.len());
        assert_close(&solve_injections(&case.net(), &src).unwrap(), &oracle(&case, &src, 1.0), 1e-9);
    }
}

#[test]
fn doubled_loads_match_oracle() {
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..20 {
        let case = random_case(&mut rng, false);
        let src = random_sources(&mut rng, case.bindings.len());
        let net = case.net();
        let doubled: Vec<_> = net.loads().iter().map(|y| y * 2.0).collect();
        let got = net.reduce_with(&doubled).unwrap().injections(&src).unwrap();
        assert_close(&got, &oracle(&case, &src, 2.0), 1e-9);
    }
}

#[test]
fn active_power_jacobian_matches_finite_differences() {
    let gap = active_jacobian_gap(9, 20);
    assert!(gap <= 1e-6, "gap {gap:e}");
}

#[test]
fn reactive_matrix_symmetric_for_pure_susceptance() {
    let mut rng = StdRng::seed_from_u64(10);
    for _ in 0..20 {
        let case = random_case(&mut rng, true);
        let red = case.net().reduce().unwrap();
        let k = case.bindings.len();
        let op = OperatingPoint { v: vec![V_NOM; k], delta: vec![0.0; k], converged: true };
        let lq = linearize_power(&red, &op).unwrap().l_q;
        let scale = lq.max_abs();
        for i in 0..k {
            for j in 0..k {
                assert!((lq[(i, j)] - lq[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
    }
}
