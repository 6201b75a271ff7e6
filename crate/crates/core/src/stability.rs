//! Small-signal certification in the consensus disagreement space.
//!
//! States are projected with an orthonormal basis `R` of `1⊥`, which
//! removes the agreement direction (common phase drift, common consensus
//! offset, common energy ramp). Under homogeneous gains and commuting
//! projected Laplacians each disagreement mode obeys a scalar polynomial:
//!
//! ```text
//! frequency:  k·m_ω λ⁴ + (k + m_ω λ_a) λ³ + (λ_a + m k λ_p + 1) λ² + m λ_a λ_p λ + m γ_e λ_a λ_p
//! voltage:    κ·τ_V λ³ + κ(1 + n λ_q) λ² + (β + λ_b λ_q / Q*) λ + n γ_f λ_b λ_q
//! ```
//!
//! The same systems are also assembled as full `4(N−1)` and `3(N−1)` state
//! matrices and solved numerically, which is how heterogeneous or
//! non-commuting cases are still characterized.

use num_complex::Complex;
use serde::Serialize;

use crate::linalg::{eigenvalues, poly_roots, symmetric_eigen, LinalgError, Matrix};
use crate::netsolve::{phasor, Reduced};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StabilityError {
    #[error("projection needs at least two inverters, got {0}")]
    TooSmall(usize),
    #[error("modal eigenvalue {name} = {value} must be positive")]
    NonPositiveMode { name: &'static str, value: f64 },
    #[error("leading coefficient must be positive")]
    Leading,
    #[error("polynomial degree {0} unsupported (cubic or quartic expected)")]
    Degree(usize),
    #[error("operating point is not a converged steady state")]
    NotConverged,
    #[error("Laplacians do not commute or are not symmetric (residual {0:e}); modal analysis refused")]
    NotSimultaneous(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Orthonormal disagreement basis `R` and disagreement transform `Π`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair<T> {
    pub r: Matrix<T>,
    pub pi: Matrix<T>,
}

/// Helmert basis: row `k` (1-based) is `(1, …, 1, −k, 0, …, 0)/√(k(k+1))`
/// with `k` leading ones.
pub fn projection<T: Scalar>(n: usize) -> Result<ProjectionPair<T>, StabilityError> {
    if n < 2 {
        return Err(StabilityError::TooSmall(n));
    }
    let r = Matrix::from_fn(n - 1, n, |row, col| {
        let k = row + 1;
        let s = T::one() / T::c((k * (k + 1)) as f64).sqrt();
        if col < k {
            s
        } else if col == k {
            -T::c(k as f64) * s
        } else {
            T::zero()
        }
    });
    let inv_n = T::one() / T::c(n as f64);
    let pi = Matrix::from_fn(n, n, |i, j| if i == j { T::one() - inv_n } else { -inv_n });
    Ok(ProjectionPair { r, pi })
}

impl<T: Scalar> ProjectionPair<T> {
    /// `R·L·Rᵀ`.
    pub fn perp(&self, l: &Matrix<T>) -> Matrix<T> {
        self.r.congruence(l)
    }
}

/// Converged source operating point: magnitudes and angles per inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint<T> {
    pub v: Vec<T>,
    pub delta: Vec<T>,
    pub converged: bool,
}

/// Power-flow sensitivities at an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLinearization<T> {
    /// `∂P/∂δ`.
    pub l_p: Matrix<T>,
    /// `[V̄]Y + [Y V̄]` with `Y = −Im(Y_red)`.
    pub l_q: Matrix<T>,
    /// Largest absolute row sum of `l_p`, relative to its largest entry.
    pub l_p_row_sum: T,
    /// Same diagnostic for `l_q`.
    pub l_q_row_sum: T,
}

/// Linearizes the reduced network at `op`.
pub fn linearize_power<T: Scalar>(red: &Reduced<T>, op: &OperatingPoint<T>) -> Result<PowerLinearization<T>, StabilityError> {
    let k = red.sources();
    let finite = op.v.iter().chain(&op.delta).all(|x| x.is_finite());
    if !op.converged || !finite || op.v.len() != k || op.delta.len() != k {
        return Err(StabilityError::NotConverged);
    }
    let e: Vec<Complex<T>> = op.v.iter().zip(&op.delta).map(|(&v, &d)| phasor(v, d)).collect();
    let cur = red.currents(&e);
    let j = Complex::new(T::zero(), T::one());
    let l_p = Matrix::from_fn(k, k, |a, b| {
        let mut s = e[a] * (red.y(a, b) * j * e[b]).conj();
        if a == b {
            s += j * e[a] * cur[a].conj();
        }
        s.re
    });
    let y = Matrix::from_fn(k, k, |a, b| -red.y(a, b).im);
    let yv = y.mul_vec(&op.v);
    let l_q = Matrix::from_fn(k, k, |a, b| {
        let mut x = op.v[a] * y[(a, b)];
        if a == b {
            x += yv[a];
        }
        x
    });
    let diag = |m: &Matrix<T>| {
        let scale = m.max_abs().max(T::min_positive_value());
        m.row_sums().into_iter().map(|s| s.abs()).fold(T::zero(), T::max) / scale
    };
    Ok(PowerLinearization {
        l_p_row_sum: diag(&l_p),
        l_q_row_sum: diag(&l_q),
        l_p,
        l_q,
    })
}

/// Homogeneous gains entering the frequency polynomial (SI).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreqGains<T> {
    pub k_i: T,
    pub m_omega: T,
    pub m: T,
    pub gamma_e: T,
}

/// Homogeneous gains entering the voltage polynomial (SI).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoltGains<T> {
    pub kappa_i: T,
    pub tau_v: T,
    pub n: T,
    pub q_set: T,
    pub beta: T,
    pub gamma_f: T,
}

fn positive_mode<T: Scalar>(name: &'static str, value: T) -> Result<(), StabilityError> {
    if value > T::zero() {
        Ok(())
    } else {
        Err(StabilityError::NonPositiveMode {
            name,
            value: value.as_f64(),
        })
    }
}

/// Quartic `(α₀ … α₄)`, highest power first.
pub fn freq_char_poly<T: Scalar>(lambda_a: T, lambda_p: T, g: &FreqGains<T>) -> Result<[T; 5], StabilityError> {
    positive_mode("lambda_a", lambda_a)?;
    positive_mode("lambda_p", lambda_p)?;
    Ok([
        g.k_i * g.m_omega,
        g.k_i + g.m_omega * lambda_a,
        lambda_a + g.m * g.k_i * lambda_p + T::one(),
        g.m * lambda_a * lambda_p,
        g.m * g.gamma_e * lambda_a * lambda_p,
    ])
}

/// Cubic `(α₀ … α₃)`, highest power first.
pub fn volt_char_poly<T: Scalar>(lambda_b: T, lambda_q: T, g: &VoltGains<T>) -> Result<[T; 4], StabilityError> {
    positive_mode("lambda_b", lambda_b)?;
    positive_mode("lambda_q", lambda_q)?;
    Ok([
        g.kappa_i * g.tau_v,
        g.kappa_i * (T::one() + g.n * lambda_q),
        g.beta + lambda_b * lambda_q / g.q_set,
        g.n * g.gamma_f * lambda_b * lambda_q,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum RhCondition {
    /// Coefficient `α_index` is not strictly positive.
    Positivity { index: usize },
    /// Cubic/quartic `α₁α₂ > α₀α₃`.
    Second,
    /// Quartic `α₁α₂ > α₁²α₄/α₃ + α₀α₃`.
    Third,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RhVerdict {
    pub stable: bool,
    pub violated: Option<RhCondition>,
    /// Degree of the polynomial actually tested.
    pub degree: usize,
    /// Trailing zero coefficients removed (structural roots at the origin).
    pub zero_roots: usize,
}

/// Routh–Hurwitz test for a cubic or quartic given highest power first.
///
/// Trailing zero coefficients are factored out as roots at the origin and
/// the remaining lower-degree polynomial is tested; `stable` then refers to
/// the non-structural roots.
pub fn routh_hurwitz<T: Scalar>(coeffs: &[T]) -> Result<RhVerdict, StabilityError> {
    let deg = coeffs.len().saturating_sub(1);
    if !(deg == 3 || deg == 4) {
        return Err(StabilityError::Degree(deg));
    }
    if !(coeffs[0] > T::zero()) {
        return Err(StabilityError::Leading);
    }
    let trailing = coeffs.iter().rev().take_while(|&&c| c == T::zero()).count();
    let a = &coeffs[..coeffs.len() - trailing];
    let degree = a.len() - 1;
    let verdict = |violated: Option<RhCondition>| RhVerdict {
        stable: violated.is_none(),
        violated,
        degree,
        zero_roots: trailing,
    };
    if let Some(index) = a.iter().position(|&c| !(c > T::zero())) {
        return Ok(verdict(Some(RhCondition::Positivity { index })));
    }
    let violated = match degree {
        0..=2 => None,
        3 => (!(a[1] * a[2] > a[0] * a[3])).then_some(RhCondition::Second),
        _ => {
            if !(a[1] * a[2] > a[0] * a[3]) {
                Some(RhCondition::Second)
            } else if !(a[1] * a[2] > a[1] * a[1] * a[4] / a[3] + a[0] * a[3]) {
                Some(RhCondition::Third)
            } else {
                None
            }
        }
    };
    Ok(verdict(violated))
}

/// One sufficient-condition bound: `ok ⟺ value ≤ limit` (or `≥` for lower bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound<T> {
    pub value: T,
    pub limit: T,
    pub margin: T,
    pub ok: bool,
}

impl<T: Scalar> Bound<T> {
    fn upper(value: T, limit: T) -> Self {
        Self {
            value,
            limit,
            margin: limit - value,
            ok: value <= limit,
        }
    }

    fn lower(value: T, limit: T) -> Self {
        Self {
            value,
            limit,
            margin: value - limit,
            ok: value >= limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainBounds<T> {
    /// `k_i ≤ 1/γ_e`.
    pub k_i: Bound<T>,
    /// `m_ω ≤ 1/γ_e`.
    pub m_omega: Bound<T>,
    /// `1/Q* ≥ n·τ_V·γ_f`.
    pub reactive: Bound<T>,
}

impl<T: Scalar> GainBounds<T> {
    pub fn all_ok(&self) -> bool {
        self.k_i.ok && self.m_omega.ok && self.reactive.ok
    }
}

/// Sufficient gain bounds; a zero `γ` gives an infinite limit.
pub fn gain_bounds<T: Scalar>(k_i: T, m_omega: T, gamma_e: T, gamma_f: T, n: T, tau_v: T, q_set: T) -> GainBounds<T> {
    let inv = |g: T| if g > T::zero() { T::one() / g } else { T::infinity() };
    GainBounds {
        k_i: Bound::upper(k_i, inv(gamma_e)),
        m_omega: Bound::upper(m_omega, inv(gamma_e)),
        reactive: Bound::lower(T::one() / q_set, n * tau_v * gamma_f),
    }
}

/// Homogeneous linearized closed loop in full (unprojected) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem<T> {
    pub l_p: Matrix<T>,
    pub l_q: Matrix<T>,
    pub l_a: Matrix<T>,
    pub l_b: Matrix<T>,
    pub l_e: Matrix<T>,
    pub l_f: Matrix<T>,
    pub freq: FreqGains<T>,
    pub volt: VoltGains<T>,
}

/// Disagreement-space state matrix over `(δ, Δω, Ω, ΔE)`.
pub fn assemble_freq<T: Scalar>(sys: &LinearizedSystem<T>, proj: &ProjectionPair<T>) -> Result<Matrix<T>, StabilityError> {
    let n = check_dims(sys, proj)?;
    let lp = proj.perp(&sys.l_p);
    let la = proj.perp(&sys.l_a);
    let le = proj.perp(&sys.l_e);
    let g = &sys.freq;
    let d = n - 1;
    let eye = Matrix::identity(d);
    let mut a = Matrix::zeros(4 * d, 4 * d);
    a.set_block(0, d, &eye);
    a.set_block(d, 0, &lp.scale(-g.m / g.m_omega));
    a.set_block(d, d, &eye.scale(-T::one() / g.m_omega));
    a.set_block(d, 2 * d, &eye.scale(T::one() / g.m_omega));
    a.set_block(2 * d, d, &eye.scale(-T::one() / g.k_i));
    a.set_block(2 * d, 2 * d, &la.scale(-T::one() / g.k_i));
    a.set_block(2 * d, 3 * d, &le.scale(-g.m / g.k_i));
    a.set_block(3 * d, 0, &lp);
    Ok(a)
}

/// Disagreement-space state matrix over `(ΔV, e, ΔF)`.
pub fn assemble_volt<T: Scalar>(sys: &LinearizedSystem<T>, proj: &ProjectionPair<T>) -> Result<Matrix<T>, StabilityError> {
    let n = check_dims(sys, proj)?;
    let lq = proj.perp(&sys.l_q);
    let lb = proj.perp(&sys.l_b);
    let lf = proj.perp(&sys.l_f);
    let g = &sys.volt;
    let d = n - 1;
    let eye = Matrix::identity(d);
    let mut a = Matrix::zeros(3 * d, 3 * d);
    a.set_block(0, 0, &eye.add(&lq.scale(g.n)).scale(-T::one() / g.tau_v));
    a.set_block(0, d, &eye.scale(T::one() / g.tau_v));
    let coupling = eye.scale(g.beta).add(&lb.matmul(&lq).scale(T::one() / g.q_set));
    a.set_block(d, 0, &coupling.scale(-T::one() / g.kappa_i));
    a.set_block(d, 2 * d, &lf.scale(-g.n / g.kappa_i));
    a.set_block(2 * d, 0, &lq);
    Ok(a)
}

fn check_dims<T: Scalar>(sys: &LinearizedSystem<T>, proj: &ProjectionPair<T>) -> Result<usize, StabilityError> {
    let n = proj.r.cols();
    for m in [&sys.l_p, &sys.l_q, &sys.l_a, &sys.l_b, &sys.l_e, &sys.l_f] {
        if m.rows() != n || m.cols() != n {
            return Err(LinalgError::Dimension {
                expected: n,
                got: m.rows(),
            }
            .into());
        }
    }
    Ok(n)
}

/// Numeric spectra of the assembled frequency and voltage systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra<T> {
    pub freq: Vec<Complex<T>>,
    pub volt: Vec<Complex<T>>,
}

pub fn assemble_and_eig<T: Scalar>(sys: &LinearizedSystem<T>, proj: &ProjectionPair<T>) -> Result<Spectra<T>, StabilityError> {
    Ok(Spectra {
        freq: eigenvalues(&assemble_freq(sys, proj)?)?,
        volt: eigenvalues(&assemble_volt(sys, proj)?)?,
    })
}

/// Normalized commutator `‖AB − BA‖_F / (‖A‖_F‖B‖_F)` plus asymmetry.
pub fn commutation_residual<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let denom = (a.frobenius_norm() * b.frobenius_norm()).max(T::min_positive_value());
    let comm = a.matmul(b).sub(&b.matmul(a)).frobenius_norm() / denom;
    let asym = |m: &Matrix<T>| m.sub(&m.transpose()).frobenius_norm() / m.frobenius_norm().max(T::min_positive_value());
    comm.max(asym(a)).max(asym(b))
}

/// Joint eigenvalue pairs `(λ_A, λ_B)` of two commuting symmetric matrices.
pub fn modal_pairs<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, tol: T) -> Result<Vec<(T, T)>, StabilityError> {
    let res = commutation_residual(a, b);
    if !(res < tol) {
        return Err(StabilityError::NotSimultaneous(res.as_f64()));
    }
    // A generic combination separates joint eigenspaces.
    let phi = T::c(0.754_877_666_246_692_7) * a.frobenius_norm() / b.frobenius_norm().max(T::min_positive_value());
    let (_, v) = symmetric_eigen(&a.add(&b.scale(phi)))?;
    let n = a.rows();
    let rayleigh = |m: &Matrix<T>, k: usize| {
        let col: Vec<T> = (0..n).map(|r| v[(r, k)]).collect();
        let mc = m.mul_vec(&col);
        col.iter().zip(&mc).map(|(x, y)| *x * *y).sum::<T>()
    };
    Ok((0..n).map(|k| (rayleigh(a, k), rayleigh(b, k))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport<T> {
    /// `(λ_a, λ_p)` or `(λ_b, λ_q)`.
    pub lambda: [T; 2],
    pub coeffs: Vec<T>,
    pub rh: RhVerdict,
    /// Polynomial roots as `[re, im]`.
    pub roots: Vec<[T; 2]>,
    /// All non-structural roots strictly in the left half-plane.
    pub roots_stable: bool,
}

fn mode_report<T: Scalar>(lambda: [T; 2], coeffs: &[T]) -> Result<ModeReport<T>, StabilityError> {
    let rh = routh_hurwitz(coeffs)?;
    let roots = poly_roots(&coeffs[..coeffs.len() - rh.zero_roots])?;
    let roots_stable = roots.iter().all(|r| r.re < T::zero());
    Ok(ModeReport {
        lambda,
        coeffs: coeffs.to_vec(),
        rh,
        roots: roots.iter().map(|r| [r.re, r.im]).collect(),
        roots_stable,
    })
}

/// Spectrum summary for one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSpectrum<T> {
    pub eigenvalues: Vec<[T; 2]>,
    /// Eigenvalues at the origin expected from a decoupled energy integrator.
    pub structural_zeros: usize,
    /// Largest real part after removing the structural zeros.
    pub max_real: T,
}

fn channel_spectrum<T: Scalar>(eigs: &[Complex<T>], structural: usize) -> ChannelSpectrum<T> {
    let mut idx: Vec<usize> = (0..eigs.len()).collect();
    idx.sort_by(|&i, &j| eigs[i].norm().partial_cmp(&eigs[j].norm()).unwrap_or(std::cmp::Ordering::Equal));
    let kept = &idx[structural.min(idx.len())..];
    let max_real = kept.iter().map(|&i| eigs[i].re).fold(T::neg_infinity(), T::max);
    ChannelSpectrum {
        eigenvalues: eigs.iter().map(|z| [z.re, z.im]).collect(),
        structural_zeros: structural,
        max_real,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyChannels {
    pub active: bool,
    pub reactive: bool,
}

/// Full certification outcome for a homogeneous system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    pub inverters: usize,
    pub gamma_e: T,
    pub gamma_f: T,
    pub energy_channels: EnergyChannels,
    pub freq_gains: FreqGains<T>,
    pub volt_gains: VoltGains<T>,
    pub gain_bounds: GainBounds<T>,
    /// Commutation residuals used to enable modal analysis.
    pub commutation: [T; 2],
    pub freq_modes: Vec<ModeReport<T>>,
    pub volt_modes: Vec<ModeReport<T>>,
    pub freq_spectrum: ChannelSpectrum<T>,
    pub volt_spectrum: ChannelSpectrum<T>,
    pub notes: Vec<String>,
    pub rh_pass: bool,
    pub spectrum_stable: bool,
}

/// Modal-enablement tolerance on the normalized commutator.
pub const COMMUTE_TOL: f64 = 1e-6;

/// Runs the full certification: gain bounds, modal Routh–Hurwitz (when the
/// projected Laplacians commute) and assembled spectra.
pub fn certify<T: Scalar>(sys: &LinearizedSystem<T>) -> Result<StabilityReport<T>, StabilityError> {
    let n = sys.l_a.rows();
    let proj = projection::<T>(n)?;
    let ge = sys.freq.gamma_e;
    let gf = sys.volt.gamma_f;
    let mut notes = Vec::new();
    let bounds = gain_bounds(sys.freq.k_i, sys.freq.m_omega, ge, gf, sys.volt.n, sys.volt.tau_v, sys.volt.q_set);

    let (lp, la) = (proj.perp(&sys.l_p), proj.perp(&sys.l_a));
    let (lq, lb) = (proj.perp(&sys.l_q), proj.perp(&sys.l_b));
    let tol = T::c(COMMUTE_TOL);
    let res_f = commutation_residual(&la, &lp);
    let res_v = commutation_residual(&lb, &lq);

    let mut freq_modes = Vec::new();
    match modal_pairs(&la, &lp, tol) {
        Ok(pairs) => {
            for (a, p) in pairs {
                freq_modes.push(mode_report([a, p], &freq_char_poly(a, p, &sys.freq)?)?);
            }
        }
        Err(e) => notes.push(format!("frequency modes: {e}")),
    }
    let mut volt_modes = Vec::new();
    match modal_pairs(&lb, &lq, tol) {
        Ok(pairs) => {
            for (b, q) in pairs {
                volt_modes.push(mode_report([b, q], &volt_char_poly(b, q, &sys.volt)?)?);
            }
        }
        Err(e) => notes.push(format!("voltage modes: {e}")),
    }
    if ge == T::zero() {
        notes.push("active energy channel absent (gamma_e = 0)".into());
    }
    if gf == T::zero() {
        notes.push("reactive energy channel absent (gamma_f = 0)".into());
    }

    let spectra = assemble_and_eig(sys, &proj)?;
    let zeros = |g: T| if g == T::zero() { n - 1 } else { 0 };
    let freq_spectrum = channel_spectrum(&spectra.freq, zeros(ge));
    let volt_spectrum = channel_spectrum(&spectra.volt, zeros(gf));

    let modal_ok = !freq_modes.is_empty() && !volt_modes.is_empty();
    let rh_pass = modal_ok && freq_modes.iter().chain(&volt_modes).all(|m| m.rh.stable);
    let spectrum_stable = freq_spectrum.max_real < T::zero() && volt_spectrum.max_real < T::zero();
    Ok(StabilityReport {
        inverters: n,
        gamma_e: ge,
        gamma_f: gf,
        energy_channels: EnergyChannels {
            active: ge > T::zero(),
            reactive: gf > T::zero(),
        },
        freq_gains: sys.freq,
        volt_gains: sys.volt,
        gain_bounds: bounds,
        commutation: [res_f, res_v],
        freq_modes,
        volt_modes,
        freq_spectrum,
        volt_spectrum,
        notes,
        rh_pass,
        spectrum_stable,
    })
}

/// Smallest `k_i` in `(k_lo, k_hi]` at which some frequency mode fails
/// Routh–Hurwitz, located on a geometric grid and refined by bisection.
/// `None` when every grid point is stable.
pub fn find_ki_crossing<T: Scalar>(modes: &[(T, T)], gains: &FreqGains<T>, k_lo: T, k_hi: T) -> Result<Option<T>, StabilityError> {
    let unstable = |k: T| -> Result<bool, StabilityError> {
        let g = FreqGains { k_i: k, ..*gains };
        for &(a, p) in modes {
            if !routh_hurwitz(&freq_char_poly(a, p, &g)?)?.stable {
                return Ok(true);
            }
        }
        Ok(false)
    };
    const GRID: usize = 400;
    let ratio = (k_hi / k_lo).ln() / T::c(GRID as f64);
    let mut prev = k_lo;
    for s in 1..=GRID {
        let k = k_lo * (ratio * T::c(s as f64)).exp();
        if unstable(k)? {
            let (mut lo, mut hi) = (prev, k);
            for _ in 0..100 {
                let mid = T::c(0.5) * (lo + hi);
                if unstable(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(hi));
        }
        prev = k;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roots_stable(c: &[f64]) -> bool {
        poly_roots(c).unwrap().iter().all(|r| r.re < 0.0)
    }

    #[test]
    fn projection_small_cases() {
        let p = projection::<f64>(2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((p.r[(0, 0)] - h).abs() < 1e-15 && (p.r[(0, 1)] + h).abs() < 1e-15);
        assert_eq!(p.pi.to_rows(), vec![vec![0.5, -0.5], vec![-0.5, 0.5]]);
        let p3 = projection::<f64>(3).unwrap();
        assert!((p3.pi[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p3.pi[(0, 1)] + 1.0 / 3.0).abs() < 1e-15);
        assert!(projection::<f64>(1).is_err());
    }

    #[test]
    fn routh_hurwitz_examples() {
        let v = routh_hurwitz(&[1.0, 2.0, 3.0, 1.0, 0.5]).unwrap();
        assert!(v.stable && roots_stable(&[1.0, 2.0, 3.0, 1.0, 0.5]));
        let v = routh_hurwitz(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.violated, Some(RhCondition::Second));
        let v = routh_hurwitz(&[1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.violated, Some(RhCondition::Positivity { index: 1 }));
        let v = routh_hurwitz(&[1.0, 2.0, 3.0, 1.0, 0.0]).unwrap();
        assert!(v.stable && v.zero_roots == 1 && v.degree == 3);
        assert!(routh_hurwitz(&[1.0, 2.0]).is_err());
        assert!(routh_hurwitz(&[-1.0, 2.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn frequency_polynomial_example() {
        let g = FreqGains::<f64> { k_i: 0.05, m_omega: 0.5, m: 0.015625, gamma_e: 0.5 };
        let c = freq_char_poly(3.0f64, 10.0, &g).unwrap();
        let want = [0.025, 0.05 + 1.5, 3.0 + 0.015625 * 0.05 * 10.0 + 1.0, 0.015625 * 30.0, 0.015625 * 0.5 * 30.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(routh_hurwitz(&c).unwrap().stable && roots_stable(&c));
        let c0 = freq_char_poly(3.0, 10.0, &FreqGains { gamma_e: 0.0, ..g }).unwrap();
        assert_eq!(c0[4], 0.0);
        assert!(freq_char_poly(0.0, 10.0, &g).is_err());
    }

    #[test]
    fn voltage_polynomial_structure() {
        let g = VoltGains { kappa_i: 0.05, tau_v: 0.1, n: 2e-5, q_set: 6e5, beta: 0.1, gamma_f: 0.05 };
        let c = volt_char_poly(3.0, 5.0, &g).unwrap();
        assert_eq!(routh_hurwitz(&c).unwrap().stable, roots_stable(&c));
        let c2 = volt_char_poly(3.0, 5.0, &VoltGains { beta: 0.2, ..g }).unwrap();
        assert_eq!((c[0], c[1], c[3]), (c2[0], c2[1], c2[3]));
        assert!((c2[2] - c[2] - 0.1).abs() < 1e-15);
        assert_eq!(volt_char_poly(3.0, 5.0, &VoltGains { gamma_f: 0.0, ..g }).unwrap()[3], 0.0);
    }

    #[test]
    fn gain_bound_examples() {
        let b = gain_bounds(0.05f64, 0.1, 0.5, 0.05, 2e-5, 0.1, 6e5);
        assert!(b.all_ok());
        assert!((b.k_i.limit - 2.0).abs() < 1e-15 && (b.k_i.margin - 1.95).abs() < 1e-12);
        assert!(!gain_bounds(2.5, 0.1, 0.5, 0.05, 2e-5, 0.1, 6e5).k_i.ok);
        let z = gain_bounds(100.0f64, 100.0, 0.0, 0.0, 2e-5, 0.1, 6e5);
        assert!(z.all_ok() && z.k_i.limit.is_infinite());
    }

    #[test]
    fn crossing_on_weak_coupling() {
        // m·λ_p below γ_e: the third condition fails for large k_i.
        let g = FreqGains::<f64> { k_i: 0.05, m_omega: 0.5, m: 0.015625, gamma_e: 0.5 };
        let k = find_ki_crossing(&[(3.0, 10.0)], &g, 0.05, 1e4).unwrap().unwrap();
        let below = freq_char_poly(3.0, 10.0, &FreqGains { k_i: 0.99 * k, ..g }).unwrap();
        let above = freq_char_poly(3.0, 10.0, &FreqGains { k_i: 1.01 * k, ..g }).unwrap();
        assert!(roots_stable(&below) && !roots_stable(&above));
        // Strong coupling: no crossing at any k_i.
        let strong = find_ki_crossing(&[(3.0, 1e4)], &g, 0.05, 1e4).unwrap();
        assert!(strong.is_none());
    }
}
