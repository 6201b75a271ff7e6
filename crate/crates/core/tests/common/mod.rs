//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use gridform_core::config;
use gridform_core::linalg::Matrix;
use gridform_core::model::{CommGraph, EdgeSpec, WeightKind};
use gridform_core::netsolve::{BindingSpec, LineSpec, LoadSpec, PhasorNetwork};
use gridform_core::sim::{Scenario, Trace};
use gridform_core::stability::{
    assemble_freq, assemble_volt, freq_char_poly, linearize_power, projection, routh_hurwitz, volt_char_poly, FreqGains, LinearizedSystem,
    OperatingPoint, VoltGains,
};
use nalgebra::{Complex, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"));
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::from_config(&config::load(&path, &ov).unwrap()).unwrap()
}

/// Largest per-unit difference over P, Q, ω and V.
pub fn pu_gap(sc: &Scenario, a: &Trace, b: &Trace) -> f64 {
    assert_eq!(a.samples.len(), b.samples.len());
    let mut gap = 0.0f64;
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert!((sa.t - sb.t).abs() < 1e-9);
        for ((ra, rb), p) in sa.rows.iter().zip(&sb.rows).zip(&sc.inverters) {
            gap = gap
                .max((ra.p - rb.p).abs() / p.s_max)
                .max((ra.q - rb.q).abs() / p.s_max)
                .max((ra.omega - rb.omega).abs() / p.omega_nom)
                .max((ra.v - rb.v).abs() / p.v_nom);
        }
    }
    gap
}

pub const V_NOM: f64 = 391.918;

pub struct Case {
    pub buses: Vec<String>,
    pub lines: Vec<LineSpec<f64>>,
    pub loads: Vec<LoadSpec<f64>>,
    pub bindings: Vec<BindingSpec<f64>>,
}

impl Case {
    pub fn net(&self) -> PhasorNetwork<f64> {
        PhasorNetwork::new(self.buses.clone(), V_NOM, &self.lines, &self.loads, &self.bindings).unwrap()
    }
}

pub fn random_case(rng: &mut StdRng, pure_susceptance: bool) -> Case {
    let nb = rng.gen_range(2..8);
    let buses: Vec<String> = (0..nb).map(|k| format!("b{k}")).collect();
    let r = |rng: &mut StdRng| if pure_susceptance { 0.0 } else { rng.gen_range(0.001..0.05) };
    let mut lines = Vec::new();
    for k in 1..nb {
        let j = rng.gen_range(0..k);
        lines.push(LineSpec { from: buses[j].clone(), to: buses[k].clone(), r: r(rng), x: rng.gen_range(0.005..0.1) });
    }
    for _ in 0..rng.gen_range(0..3) {
        let (a, b) = (rng.gen_range(0..nb), rng.gen_range(0..nb));
        if a != b {
            lines.push(LineSpec { from: buses[a].clone(), to: buses[b].clone(), r: r(rng), x: rng.gen_range(0.005..0.1) });
        }
    }
    let mut loads = Vec::new();
    for bus in &buses {
        if rng.gen_bool(0.7) {
            let p = if pure_susceptance { 0.0 } else { rng.gen_range(1e5..2e6) };
            loads.push(LoadSpec { bus: bus.clone(), p, q: rng.gen_range(5e4..1e6) });
        }
    }
    let ns = rng.gen_range(2..5);
    let bindings = (0..ns)
        .map(|s| BindingSpec {
            inverter: s as u32 + 1,
            bus: buses[rng.gen_range(0..nb)].clone(),
            r: r(rng),
            x: rng.gen_range(0.005..0.05),
        })
        .collect();
    Case { buses, lines, loads, bindings }
}

pub fn random_sources(rng: &mut StdRng, k: usize) -> Vec<(f64, f64)> {
    (0..k).map(|_| (V_NOM * rng.gen_range(0.95..1.05), rng.gen_range(-0.1..0.1))).collect()
}

/// Largest `|L_P − FD|` over `max|L_P|` across `count` random networks,
/// using central differences of the plant solver in the source angles.
pub fn active_jacobian_gap(seed: u64, count: usize) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let case = random_case(&mut rng, false);
        let red = case.net().reduce().unwrap();
        let src = random_sources(&mut rng, case.bindings.len());
        let op = OperatingPoint { v: src.iter().map(|s| s.0).collect(), delta: src.iter().map(|s| s.1).collect(), converged: true };
        let lin = linearize_power(&red, &op).unwrap();
        let k = src.len();
        let h = 1e-6;
        let scale = lin.l_p.max_abs();
        for j in 0..k {
            let shifted = |d: f64| {
                let mut s = src.clone();
                s[j].1 += d;
                red.injections(&s).unwrap()
            };
            let (up, dn) = (shifted(h), shifted(-h));
            for i in 0..k {
                let fd = (up[i].0 - dn[i].0) / (2.0 * h);
                worst = worst.max((fd - lin.l_p[(i, j)]).abs() / scale);
            }
        }
    }
    worst
}

/// Eigenvalues from nalgebra's Schur form, each refined by inverse
/// iteration with a Rayleigh-style shift update.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = a.nrows();
    let ac = a.map(|v| Complex::new(v, 0.0));
    a.complex_eigenvalues()
        .iter()
        .map(|&z0| {
            let mut z = z0;
            let mut x = DVector::from_fn(n, |k, _| Complex::new(1.0 + k as f64 * 0.1, 0.3));
            for _ in 0..8 {
                let shifted = &ac - DMatrix::identity(n, n) * z;
                let Some(y) = shifted.lu().solve(&x) else { break };
                let step = x.dotc(&x) / x.dotc(&y);
                if !step.is_finite() {
                    break;
                }
                z += step;
                x = y.unscale(y.norm());
                if step.norm() <= 1e-15 * z.norm().max(1.0) {
                    break;
                }
            }
            z
        })
        .collect()
}

/// Roots of `c[0] xⁿ + … + c[n]` as companion-matrix eigenvalues.
pub fn companion_roots(c: &[f64]) -> Vec<Complex<f64>> {
    let n = c.len() - 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    eigenvalues(&m)
}

pub fn random_poly(rng: &mut StdRng, deg: usize) -> Vec<f64> {
    if rng.gen_bool(0.5) {
        // Arbitrary coefficients spanning several decades, occasionally negative.
        (0..=deg)
            .map(|k| {
                let mag = 10f64.powf(rng.gen_range(-2.0..2.0));
                if k > 0 && rng.gen_bool(0.1) {
                    -mag
                } else {
                    mag
                }
            })
            .collect()
    } else {
        // Expanded from roots clustered around the imaginary axis.
        let mut poly = vec![Complex::new(rng.gen_range(0.1..3.0), 0.0)];
        let mut left = deg;
        while left > 0 {
            let re = rng.gen_range(-2.0..0.5);
            let roots = if left >= 2 && rng.gen_bool(0.6) {
                let im = rng.gen_range(0.1..3.0);
                vec![Complex::new(re, im), Complex::new(re, -im)]
            } else {
                vec![Complex::new(re, 0.0)]
            };
            for r in roots {
                let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
                for (k, &a) in poly.iter().enumerate() {
                    next[k] += a;
                    next[k + 1] -= a * r;
                }
                poly = next;
                left -= 1;
            }
        }
        poly.iter().map(|z| z.re).collect()
    }
}

pub struct RhSweep {
    pub checked: usize,
    pub skipped: usize,
    pub disagreements: Vec<(Vec<f64>, f64)>,
}

/// Alternating cubics and quartics; polynomials whose largest root real
/// part lies within `1e-10·max(1, |root|)` of the axis are skipped.
pub fn rh_sweep(seed: u64, count: usize) -> RhSweep {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = RhSweep { checked: 0, skipped: 0, disagreements: Vec::new() };
    for trial in 0..count {
        let deg = if trial % 2 == 0 { 3 } else { 4 };
        let c = random_poly(&mut rng, deg);
        let roots = companion_roots(&c);
        let max_re = roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
        let scale = roots.iter().map(|r| r.norm()).fold(1.0f64, f64::max);
        if max_re.abs() <= 1e-10 * scale {
            out.skipped += 1;
            continue;
        }
        out.checked += 1;
        let v = routh_hurwitz(&c).unwrap();
        if v.stable != (max_re < 0.0) || v.zero_roots != 0 {
            out.disagreements.push((c, max_re));
        }
    }
    out
}

pub fn random_graph(rng: &mut StdRng, n: usize) -> CommGraph<f64> {
    let ids: Vec<u32> = (1..=n as u32).collect();
    let mut edges = Vec::new();
    let mut link = |i: usize, j: usize, w: f64| edges.push(EdgeSpec { i: ids[i], j: ids[j], a: w, b: w, e: 0.0, f: 0.0 });
    for k in 1..n {
        let j = rng.gen_range(0..k);
        link(j, k, rng.gen_range(0.3..2.0));
    }
    for i in 0..n {
        for j in i + 2..n {
            if rng.gen_bool(0.3) {
                link(i, j, rng.gen_range(0.3..2.0));
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    edges.retain(|e| seen.insert((e.i.min(e.j), e.i.max(e.j))));
    CommGraph::new(ids.clone(), &edges).unwrap()
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Pairs each modal root with its nearest unused assembled eigenvalue and
/// returns the largest distance relative to `max(1, |root|)`.
pub fn spectra_gap(modal: &[Complex<f64>], assembled: &[Complex<f64>]) -> f64 {
    assert_eq!(modal.len(), assembled.len());
    let mut pool = assembled.to_vec();
    let mut worst = 0.0f64;
    for &r in modal {
        let (k, d) = pool
            .iter()
            .enumerate()
            .map(|(k, z)| (k, (z - r).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        worst = worst.max(d / r.norm().max(1.0));
        pool.swap_remove(k);
    }
    worst
}

/// Homogeneous system whose power matrices are polynomials in one random
/// Laplacian `L`: `L_P = αL + βL²`, `L_Q = c₀I + c₁L`.
pub struct ModalCase {
    pub sys: LinearizedSystem<f64>,
    pub l: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub c0: f64,
    pub c1: f64,
}

pub fn random_system(rng: &mut StdRng, n: usize) -> ModalCase {
    let l = to_na(&random_graph(rng, n).laplacian(WeightKind::A));
    let (alpha, beta) = (rng.gen_range(0.5e6..3e6), rng.gen_range(0.0..2e5));
    let (c0, c1) = (rng.gen_range(1e3..2e4), rng.gen_range(5e3..5e4));
    let (ge, gf) = (rng.gen_range(0.1..5.0), rng.gen_range(0.01..1.0));
    let lp = &l * alpha + &l * &l * beta;
    let lq = DMatrix::identity(n, n) * c0 + &l * c1;
    let sys = LinearizedSystem {
        l_p: from_na(&lp),
        l_q: from_na(&lq),
        l_a: from_na(&l),
        l_b: from_na(&l),
        l_e: from_na(&(&l * ge)),
        l_f: from_na(&(&l * gf)),
        freq: FreqGains { k_i: rng.gen_range(0.02..0.2), m_omega: rng.gen_range(0.05..0.5), m: 2.36e-6, gamma_e: ge },
        volt: VoltGains { kappa_i: rng.gen_range(0.02..0.2), tau_v: rng.gen_range(0.05..0.3), n: 8e-6, q_set: 6e5, beta: 0.1, gamma_f: gf },
    };
    ModalCase { sys, l, alpha, beta, c0, c1 }
}

impl ModalCase {
    /// Nonzero Laplacian eigenvalues, ascending.
    pub fn modes(&self) -> Vec<f64> {
        let mut mu: Vec<f64> = self.l.symmetric_eigenvalues().iter().copied().collect();
        mu.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mu.remove(0);
        mu
    }

    /// Relative gap between modal polynomial roots and assembled
    /// eigenvalues, frequency and voltage channels together.
    pub fn gap(&self) -> f64 {
        let n = self.l.nrows();
        let proj = projection::<f64>(n).unwrap();
        let mut freq = Vec::new();
        let mut volt = Vec::new();
        for m in self.modes() {
            freq.extend(companion_roots(&freq_char_poly(m, self.alpha * m + self.beta * m * m, &self.sys.freq).unwrap()));
            volt.extend(companion_roots(&volt_char_poly(m, self.c0 + self.c1 * m, &self.sys.volt).unwrap()));
        }
        let af = eigenvalues(&to_na(&assemble_freq(&self.sys, &proj).unwrap()));
        let av = eigenvalues(&to_na(&assemble_volt(&self.sys, &proj).unwrap()));
        spectra_gap(&freq, &af).max(spectra_gap(&volt, &av))
    }

    pub fn max_real(&self) -> f64 {
        let proj = projection::<f64>(self.l.nrows()).unwrap();
        let af = eigenvalues(&to_na(&assemble_freq(&self.sys, &proj).unwrap()));
        let av = eigenvalues(&to_na(&assemble_volt(&self.sys, &proj).unwrap()));
        af.iter().chain(&av).map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest modal-versus-assembled gap over `trials` systems of size 2 to 8.
pub fn modal_sweep(seed: u64, trials: usize) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..trials).map(|t| random_system(&mut rng, 2 + t % 7).gap()).fold(0.0, f64::max)
}
