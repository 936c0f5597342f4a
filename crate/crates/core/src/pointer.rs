//! Inverse design: jump operators `d̂` with a prescribed dark state, and the
//! laser configurations that realize them through sideband couplings.
//!
//! A drive of Rabi frequency `Ω` on the `k`-th red sideband contributes
//! `(Ω/2)(iη)^k f̂_k(n̂) â^k` to the coupling `D̂`; a blue sideband contributes
//! `(Ω/2)(iη)^k (â†)^k f̂_k(n̂)`; a carrier contributes `(Ω/2) f̂_0(n̂)` (the
//! identity when `η = 0`). The vibronic Hamiltonian is then
//! `Â₂₁ ⊗ D̂ + Â₁₂ ⊗ D̂†`, and `D̂ = g e^{iθ} d̂` with `g` the first red
//! sideband strength.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, fk_values, laguerre_table, FockSpace, Ket, Operator, I, ONE, ZERO};
use crate::liouvillian::{Generator, LindbladChannel};
use crate::linalg;

/// Relative singular-value threshold for the nullity of `d̂`.
pub const NULLITY_TOLERANCE: f64 = 1e-10;

/// Condition number above which the Rabi system is declared singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `h(m)/|Ω_x|` at or below this counts as a zero of the carrier profile.
pub const FIRST_ZERO_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sideband {
    Carrier,
    Red(usize),
    Blue(usize),
}

impl Sideband {
    pub fn order(&self) -> usize {
        match *self {
            Sideband::Carrier => 0,
            Sideband::Red(k) | Sideband::Blue(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserDrive {
    /// Complex Rabi frequency (rate units).
    pub rabi: C64,
    pub sideband: Sideband,
    /// Lamb-Dicke projection onto the trap axis.
    pub eta: f64,
    #[serde(default)]
    pub label: String,
}

impl LaserDrive {
    pub fn new(rabi: C64, sideband: Sideband, eta: f64, label: impl Into<String>) -> Result<Self> {
        let drive = Self {
            rabi,
            sideband,
            eta,
            label: label.into(),
        };
        drive.validate()?;
        Ok(drive)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rabi.re.is_finite() || !self.rabi.im.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "drive '{}' has a non-finite Rabi frequency",
                self.label
            )));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!(
                "drive '{}': Lamb-Dicke parameter {} outside [0, 1)",
                self.label, self.eta
            )));
        }
        if self.sideband.order() > 0 && self.eta == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sideband drive '{}' needs a positive Lamb-Dicke parameter",
                self.label
            )));
        }
        Ok(())
    }

    /// This drive's contribution to `D̂`.
    pub fn coupling_term(&self, space: FockSpace) -> Result<Operator> {
        self.validate()?;
        let dim = space.dim();
        let k = self.sideband.order();
        let f: Vec<f64> = if self.eta == 0.0 {
            vec![1.0; dim]
        } else {
            fk_values(dim, k, self.eta)?
        };
        let pref = self.rabi * 0.5 * (I * self.eta).powu(k as u32);
        let mut m = Array2::<C64>::zeros((dim, dim));
        match self.sideband {
            Sideband::Carrier => {
                for n in 0..dim {
                    m[[n, n]] = pref * f[n];
                }
            }
            Sideband::Red(_) => {
                // ⟨n| f_k â^k |n+k⟩ = f_k(n) √((n+k)!/n!)
                for n in 0..dim.saturating_sub(k) {
                    m[[n, n + k]] = pref * f[n] * ladder_factor(n, k);
                }
            }
            Sideband::Blue(_) => {
                for n in 0..dim.saturating_sub(k) {
                    m[[n + k, n]] = pref * f[n] * ladder_factor(n, k);
                }
            }
        }
        Ok(Operator::from_matrix_unchecked(m))
    }
}

fn ladder_factor(n: usize, k: usize) -> f64 {
    (1..=k).map(|j| ((n + j) as f64).sqrt()).product()
}

/// Total coupling `D̂ = Σ_drives` of the sideband terms.
pub fn assemble_coupling(space: FockSpace, drives: &[LaserDrive]) -> Result<Operator> {
    let mut total = Operator::zeros(space.dim());
    for d in drives {
        total = &total + &d.coupling_term(space)?;
    }
    Ok(total)
}

/// Complex amplitude `(Ω/2)(iη)` of the strongest first-red-sideband drive;
/// its modulus is `g`. With several red beams their sum can nearly cancel by
/// design, so the sum is not a usable scale.
pub fn coupling_phasor(drives: &[LaserDrive]) -> Result<C64> {
    let z = drives
        .iter()
        .filter(|d| d.sideband == Sideband::Red(1))
        .map(|d| d.rabi * 0.5 * I * d.eta)
        .fold(C64::from(0.0), |best, z| if z.norm() > best.norm() { z } else { best });
    if !(z.norm() > 0.0) {
        return Err(Error::InconsistentScale(
            "no first-red-sideband coupling to fix g".into(),
        ));
    }
    Ok(z)
}

/// Real coupling scale `g`.
pub fn coupling_scale(drives: &[LaserDrive]) -> Result<f64> {
    Ok(coupling_phasor(drives)?.norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarkStateReport {
    pub residual: f64,
    /// `residual / σ_max(d̂)`.
    pub relative_residual: f64,
    pub null_dim: usize,
}

pub fn verify_dark_state(d: &Operator, psi: &Ket) -> Result<DarkStateReport> {
    check_dim(d.dim(), psi.dim())?;
    let v = d.apply(psi.amplitudes())?;
    let residual = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let s = d.singular_values()?;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let null_dim = s.iter().filter(|&&x| x <= NULLITY_TOLERANCE * smax).count();
    Ok(DarkStateReport {
        residual,
        relative_residual: if smax > 0.0 { residual / smax } else { residual },
        null_dim: if smax > 0.0 { null_dim } else { d.dim() },
    })
}

/// Diagonal profiles of `d̂ = ĝ(n̂)â + ĥ(n̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GhProfile {
    pub g: Vec<C64>,
    pub h: Vec<C64>,
    pub d: Operator,
}

fn check_amplitudes(target: &[C64]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::InvalidParameter("empty target".into()));
    }
    if let Some(index) = target.iter().position(|c| c.norm() == 0.0) {
        return Err(Error::ZeroAmplitude { index });
    }
    Ok(())
}

/// `g(m) = −h(m)c_m/(√(m+1) c_{m+1})` for `m < N`. Above the target's top level
/// `g(m) = 1`; any nonzero value keeps the dark state unique as long as `h`
/// has no further zeros, which is checked through the nullity of `d̂`.
pub fn gh_profile(space: FockSpace, target: &[C64], h: &[f64]) -> Result<GhProfile> {
    check_amplitudes(target)?;
    let dim = space.dim();
    let n = target.len() - 1;
    if n >= dim {
        return Err(Error::InvalidParameter(format!(
            "target has {} levels but the space only {dim}",
            n + 1
        )));
    }
    check_dim(dim, h.len())?;
    let scale = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tiny = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if let Some(m) = (0..n).find(|&m| h[m].abs() <= tiny) {
        return Err(Error::BadHProfile(format!("premature zero h({m}) = {:.3e}", h[m])));
    }
    if h[n].abs() > tiny {
        return Err(Error::BadHProfile(format!(
            "h(N) must vanish at N = {n}, got {:.3e}",
            h[n]
        )));
    }
    let mut g = vec![ONE; dim];
    for m in 0..n {
        g[m] = -h[m] * target[m] / (((m + 1) as f64).sqrt() * target[m + 1]);
    }
    let mut hc: Vec<C64> = h.iter().map(|&v| C64::from(v)).collect();
    hc[n] = ZERO;
    let d = &(&Operator::diagonal(&g) * &Operator::annihilation(space)) + &Operator::diagonal(&hc);
    let report = verify_dark_state(&d, &Ket::from_amplitudes(space, target)?)?;
    if report.null_dim != 1 {
        return Err(Error::BadHProfile(format!(
            "d̂ has a {}-dimensional null space; h(m) has further zeros above N",
            report.null_dim
        )));
    }
    Ok(GhProfile { g, h: hc, d })
}

/// Two carrier lasers: `Ω_x` along the trap axis, `Ω_y` orthogonal to it.
#[derive(Clone, Debug, PartialEq)]
pub struct CarrierPair {
    pub eta_x: f64,
    pub n: usize,
    /// `Ω_y/Ω_x = −e^{−η_x²/2} L_N(η_x²)`.
    pub ratio: f64,
}

impl CarrierPair {
    /// `h(m)` per unit `Ω_x`, with `h(N)` set to exactly zero.
    pub fn profile(&self, dim: usize) -> Vec<f64> {
        let x = self.eta_x * self.eta_x;
        let dw = (-x / 2.0).exp();
        let lag = laguerre_table(dim.max(self.n + 1) - 1, 0.0, x);
        let mut h: Vec<f64> = (0..dim).map(|m| dw * lag[m] + self.ratio).collect();
        if self.n < dim {
            h[self.n] = 0.0;
        }
        h
    }
}

pub fn carrier_pair(eta_x: f64, n: usize) -> Result<CarrierPair> {
    if n == 0 {
        return Err(Error::InvalidParameter("carrier pair needs N ≥ 1".into()));
    }
    if !(0.0..1.0).contains(&eta_x) {
        return Err(Error::InvalidParameter(format!(
            "η_x = {eta_x} outside [0, 1)"
        )));
    }
    let x = eta_x * eta_x;
    let dw = (-x / 2.0).exp();
    let lag = laguerre_table(n, 0.0, x);
    let ratio = -dw * lag[n];
    for m in 0..n {
        let value = dw * lag[m] + ratio;
        if value <= FIRST_ZERO_TOLERANCE {
            return Err(Error::FirstZeroViolation { n, m, value });
        }
    }
    Ok(CarrierPair { eta_x, n, ratio })
}

/// `θ_n` equally spaced over `[0°, 60°]`, `η_n = η_max cos θ_n`.
pub fn default_etas(eta_max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![eta_max];
    }
    (0..count)
        .map(|j| {
            let theta = (60.0f64).to_radians() * j as f64 / (count - 1) as f64;
            eta_max * theta.cos()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RabiSolution {
    pub rabi: Vec<C64>,
    pub condition: f64,
    /// Max-norm residual of the linear system at the solution.
    pub residual: f64,
}

fn rabi_matrix(etas: &[f64], n: usize) -> Result<Array2<C64>> {
    let mut a = Array2::<C64>::zeros((n, n));
    for (col, &eta) in etas.iter().enumerate() {
        let f1 = fk_values(n, 1, eta)?;
        for m in 0..n {
            a[[m, col]] = C64::from(eta * f1[m]);
        }
    }
    Ok(a)
}

fn rabi_rhs(target: &[C64], h: &[f64], n: usize) -> Array1<C64> {
    (0..n)
        .map(|m| I * h[m] * target[m] / (((m + 1) as f64).sqrt() * target[m + 1]))
        .collect()
}

/// Red-sideband Rabi frequencies `Ω_1..Ω_N` such that
/// `Σ_n η_n Ω_n f_1^{(η_n)}(m) = i h(m)c_m/(√(m+1)c_{m+1})` for `m < N`.
pub fn solve_rabi_system(target: &[C64], h: &[f64], etas: &[f64]) -> Result<RabiSolution> {
    check_amplitudes(target)?;
    let n = target.len() - 1;
    if n == 0 {
        return Err(Error::InvalidParameter("Rabi system needs N ≥ 1".into()));
    }
    check_dim(n, etas.len())?;
    if h.len() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: h.len(),
        });
    }
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidParameter(format!("η = {e} outside (0, 1)")));
    }
    let a = rabi_matrix(etas, n)?;
    let b = rabi_rhs(target, h, n);
    let s = linalg::singular_values(&a)?;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularSystem { condition });
    }
    let x = linalg::solve(&a, &b)?;
    let residual = (&a.dot(&x) - &b).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    Ok(RabiSolution {
        rabi: x.to_vec(),
        condition,
        residual,
    })
}

#[derive(Clone, Debug)]
pub struct EngineeredDissipator {
    /// Jump operator whose null space is the target.
    pub d: Operator,
    /// `Γ_eng` in rate units.
    pub gamma_eng: f64,
    /// Coupling scale `g`; `None` for abstract dissipators.
    pub g: Option<f64>,
    /// Excited-state decay rate `Γ` used to convert `g` into `Γ_eng`.
    pub gamma: Option<f64>,
    pub drives: Vec<LaserDrive>,
    pub target: Ket,
    /// Condition number of the Rabi system, for multi-laser designs.
    pub condition: Option<f64>,
}

impl EngineeredDissipator {
    /// Abstract dissipator with `d̂` scaled to unit largest singular value.
    pub fn abstract_operator(d: Operator, gamma_eng: f64, target: Ket) -> Result<Self> {
        check_rate(gamma_eng)?;
        check_dim(d.dim(), target.dim())?;
        let norm = d.norm2()?;
        let d = if norm > 0.0 { d.scaled(C64::from(1.0 / norm)) } else { d };
        Ok(Self {
            d,
            gamma_eng,
            g: None,
            gamma: None,
            drives: Vec::new(),
            target,
            condition: None,
        })
    }

    /// Drive-realized dissipator: `d̂ = D̂ / g_c` with `g_c` from [`coupling_phasor`], `Γ_eng = 4g²/Γ`.
    pub fn from_drives(space: FockSpace, drives: Vec<LaserDrive>, gamma: f64, target: Ket) -> Result<Self> {
        let d = realized_operator(space, &drives)?;
        Self::with_design(d, space, drives, gamma, target)
    }

    fn with_design(d: Operator, space: FockSpace, drives: Vec<LaserDrive>, gamma: f64, target: Ket) -> Result<Self> {
        check_rate(gamma)?;
        if gamma == 0.0 {
            return Err(Error::InvalidParameter("Γ must be positive".into()));
        }
        check_dim(space.dim(), target.dim())?;
        check_dim(space.dim(), d.dim())?;
        let g = coupling_scale(&drives)?;
        Ok(Self {
            d,
            gamma_eng: 4.0 * g * g / gamma,
            g: Some(g),
            gamma: Some(gamma),
            drives,
            target,
            condition: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    /// `D̂` assembled from the drives.
    pub fn coupling(&self) -> Result<Option<Operator>> {
        if self.drives.is_empty() {
            return Ok(None);
        }
        Ok(Some(assemble_coupling(FockSpace::new(self.dim())?, &self.drives)?))
    }

    /// The operator the lasers actually produce, normalized like `d`; the
    /// abstract `d` when there are no drives.
    pub fn realized_d(&self) -> Result<Operator> {
        if self.drives.is_empty() {
            return Ok(self.d.clone());
        }
        realized_operator(FockSpace::new(self.dim())?, &self.drives)
    }

    pub fn verify(&self) -> Result<DarkStateReport> {
        verify_dark_state(&self.d, &self.target)
    }

    /// `{(Γ_eng, d̂)}` alone.
    pub fn generator(&self) -> Result<Generator> {
        Generator::new(self.dim()).with_channel(LindbladChannel::new(self.gamma_eng, self.d.clone())?)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::NegativeRate { what: "engineered decay", rate });
    }
    Ok(())
}

fn realized_operator(space: FockSpace, drives: &[LaserDrive]) -> Result<Operator> {
    let z = coupling_phasor(drives)?;
    Ok(assemble_coupling(space, drives)?.scaled(ONE / z))
}

/// Three lasers protecting `c₀|0⟩ + c₁|1⟩`: a first red sideband `Ω₁`, a
/// carrier `Ω_x = −(iΩ₁/η)(c₁/c₀)` along the trap axis, and an orthogonal
/// carrier `Ω_y = iΩ₁e^{−η²/2}(c₁/c₀)(1−η²)/η`.
pub fn qubit_drive(space: FockSpace, c0: C64, c1: C64, eta: f64, omega1: f64, gamma: f64) -> Result<EngineeredDissipator> {
    check_amplitudes(&[c0, c1])?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("η = {eta} outside (0, 1)")));
    }
    if !(omega1 > 0.0) {
        return Err(Error::InvalidParameter(format!("Ω₁ = {omega1} must be positive")));
    }
    let ratio = c1 / c0;
    let omega_x = -I * omega1 / eta * ratio;
    let omega_y = I * omega1 * (-eta * eta / 2.0).exp() * ratio * (1.0 - eta * eta) / eta;
    let drives = vec![
        LaserDrive::new(C64::from(omega1), Sideband::Red(1), eta, "red sideband")?,
        LaserDrive::new(omega_x, Sideband::Carrier, eta, "carrier x")?,
        LaserDrive::new(omega_y, Sideband::Carrier, 0.0, "carrier y")?,
    ];
    let target = Ket::from_amplitudes(space, &[c0, c1])?;
    EngineeredDissipator::from_drives(space, drives, gamma, target)
}

/// `N + 2` lasers for a finite superposition `Σ_{n≤N} c_n|n⟩`: `N` first red
/// sidebands at the given `η_n`, plus a carrier pair fixing `h(N) = 0`. Rabi
/// frequencies are rescaled so the strongest red sideband has `|Ω| = omega1`.
pub fn superposition_drive(
    space: FockSpace,
    target: &[C64],
    eta_x: f64,
    etas: &[f64],
    omega1: f64,
    gamma: f64,
) -> Result<EngineeredDissipator> {
    check_amplitudes(target)?;
    let n = target.len() - 1;
    if n == 0 {
        return Err(Error::InvalidParameter(
            "a single-level target needs no engineering beyond d̂ = â".into(),
        ));
    }
    if !(omega1 > 0.0) {
        return Err(Error::InvalidParameter(format!("Ω₁ = {omega1} must be positive")));
    }
    let pair = carrier_pair(eta_x, n)?;
    let h = pair.profile(space.dim());
    // validates h and uniqueness of the dark state
    gh_profile(space, target, &h)?;
    let sol = solve_rabi_system(target, &h, etas)?;
    let biggest = sol.rabi.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if biggest == 0.0 {
        return Err(Error::InconsistentScale("all red-sideband Rabi frequencies vanish".into()));
    }
    let s = omega1 / biggest;
    let mut drives = Vec::with_capacity(n + 2);
    for (j, (om, &eta)) in sol.rabi.iter().zip(etas).enumerate() {
        drives.push(LaserDrive::new(om * s, Sideband::Red(1), eta, format!("red sideband {}", j + 1))?);
    }
    drives.push(LaserDrive::new(C64::from(s), Sideband::Carrier, eta_x, "carrier x")?);
    drives.push(LaserDrive::new(C64::from(s * pair.ratio), Sideband::Carrier, 0.0, "carrier y")?);
    let ket = Ket::from_amplitudes(space, target)?;
    let mut diss = EngineeredDissipator::from_drives(space, drives, gamma, ket)?;
    diss.condition = Some(sol.condition);
    Ok(diss)
}

/// `d̂ = e^{iπn̂}â + iα`, dark on `(|α⟩ + i|−α⟩)/√2`. No laser realization.
pub fn cat_dissipator(space: FockSpace, alpha: C64, gamma_eng: f64) -> Result<EngineeredDissipator> {
    let target = Ket::cat_plus(space, alpha)?;
    let d = &(&Operator::parity(space) * &Operator::annihilation(space))
        + &Operator::identity(space).scaled(I * alpha);
    check_rate(gamma_eng)?;
    Ok(EngineeredDissipator {
        d,
        gamma_eng,
        g: None,
        gamma: None,
        drives: Vec::new(),
        target,
        condition: None,
    })
}

/// `d̂ = â + tanh(r)â†` with a red sideband `Ω₁` and a blue sideband `χΩ₁`.
/// The lasers reproduce `d̂` only to leading order in `η` (the `f̂_1` factors
/// differ between the two sidebands); see [`EngineeredDissipator::realized_d`].
pub fn squeeze_dissipator(space: FockSpace, r: f64, omega1: f64, eta: f64, gamma: f64) -> Result<EngineeredDissipator> {
    let target = Ket::squeezed_vacuum(space, r)?;
    if !(omega1 > 0.0) {
        return Err(Error::InvalidParameter(format!("Ω₁ = {omega1} must be positive")));
    }
    let chi = r.tanh();
    let a = Operator::annihilation(space);
    let d = &a + &a.adjoint().scaled(C64::from(chi));
    let drives = vec![
        LaserDrive::new(C64::from(omega1), Sideband::Red(1), eta, "red sideband")?,
        LaserDrive::new(C64::from(chi * omega1), Sideband::Blue(1), eta, "blue sideband")?,
    ];
    EngineeredDissipator::with_design(d, space, drives, gamma, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{cat_unitary, max_abs};
    use crate::liouvillian::{fidelity, DensityMatrix, NULL_SPACE_TOLERANCE};
    use proptest::prelude::*;

    fn sp(d: usize) -> FockSpace {
        FockSpace::new(d).unwrap()
    }

    fn r2() -> C64 {
        C64::from(1.0 / 2f64.sqrt())
    }

    /// `Σ_n ⟨n+k| e^{iη x̂} |n⟩` pattern, i.e. the sideband terms as matrix
    /// elements of the exact exponential.
    fn exp_element(space: FockSpace, eta: f64, row: usize, col: usize) -> C64 {
        let u = Operator::exp_i_hermitian(&Operator::position(space), eta).unwrap();
        u.matrix()[[row, col]]
    }

    #[test]
    fn sideband_terms_are_exponential_matrix_elements() {
        // large space so that truncation of the exponential is irrelevant
        let big = sp(60);
        let small = sp(8);
        let eta = 0.3;
        for (sb, k) in [(Sideband::Red(2), 2usize), (Sideband::Blue(1), 1), (Sideband::Carrier, 0)] {
            let drive = LaserDrive::new(C64::new(2.0, 0.0), sb, eta, "").unwrap();
            let term = drive.coupling_term(small).unwrap();
            for n in 0..small.dim() - k {
                let (row, col) = match sb {
                    Sideband::Red(_) => (n, n + k),
                    _ => (n + k, n),
                };
                let want = exp_element(big, eta, row, col);
                assert!((term.matrix()[[row, col]] - want).norm() < 1e-12, "{sb:?} n={n}");
            }
        }
    }

    #[test]
    fn drive_validation() {
        assert!(LaserDrive::new(ONE, Sideband::Red(1), 0.0, "").is_err());
        assert!(LaserDrive::new(ONE, Sideband::Carrier, 1.0, "").is_err());
        assert!(LaserDrive::new(ONE, Sideband::Carrier, 0.0, "").is_ok());
        let carrier = LaserDrive::new(C64::from(4.0), Sideband::Carrier, 0.0, "").unwrap();
        let t = carrier.coupling_term(sp(3)).unwrap();
        assert!(max_abs(&(t.matrix() - Operator::identity(sp(3)).scaled(C64::from(2.0)).matrix())) == 0.0);
    }

    #[test]
    fn scale_needs_red_sideband() {
        let carrier = LaserDrive::new(ONE, Sideband::Carrier, 0.1, "").unwrap();
        assert!(matches!(coupling_scale(&[carrier]), Err(Error::InconsistentScale(_))));
    }

    #[test]
    fn dark_state_trivia() {
        let a = Operator::annihilation(sp(5));
        let r0 = verify_dark_state(&a, &Ket::basis(sp(5), 0).unwrap()).unwrap();
        assert_eq!((r0.residual, r0.null_dim), (0.0, 1));
        let r1 = verify_dark_state(&a, &Ket::basis(sp(5), 1).unwrap()).unwrap();
        assert!((r1.residual - 1.0).abs() < 1e-15);
        assert!(verify_dark_state(&a, &Ket::basis(sp(4), 0).unwrap()).is_err());
    }

    #[test]
    fn gh_profile_for_qubit_target() {
        let mut h = vec![0.0; 10];
        h[0] = 1.0;
        let p = gh_profile(sp(10), &[r2(), r2()], &h).unwrap();
        assert!((p.g[0] + 1.0).norm() < 1e-15);
        let t = Ket::from_amplitudes(sp(10), &[r2(), r2()]).unwrap();
        let rep = verify_dark_state(&p.d, &t).unwrap();
        assert!(rep.residual <= 1e-10);
        assert_eq!(rep.null_dim, 1);
    }

    #[test]
    fn gh_profile_vacuum_gives_plain_lowering() {
        let p = gh_profile(sp(6), &[ONE], &[0.0; 6]).unwrap();
        assert_eq!(p.d, Operator::annihilation(sp(6)));
    }

    #[test]
    fn gh_profile_errors() {
        let mut h = vec![1.0; 8];
        h[2] = 0.0;
        assert!(matches!(
            gh_profile(sp(8), &[r2(), ZERO, r2()], &h),
            Err(Error::ZeroAmplitude { index: 1 })
        ));
        // h(N) ≠ 0
        assert!(matches!(gh_profile(sp(8), &[r2(), r2()], &h), Err(Error::BadHProfile(_))));
        // premature zero
        let mut h = vec![1.0; 8];
        h[0] = 0.0;
        h[2] = 0.0;
        assert!(matches!(
            gh_profile(sp(8), &[ONE, ONE, ONE], &h),
            Err(Error::BadHProfile(_))
        ));
        // further zeros above N leave the dark state unique: row N pins x_{N+1} = 0
        let mut h = vec![1.0; 8];
        h[1] = 0.0;
        h[4] = 0.0;
        assert!(gh_profile(sp(8), &[r2(), r2()], &h).is_ok());
    }

    #[test]
    fn carrier_pair_examples() {
        let p = carrier_pair(0.2, 1).unwrap();
        let dw = (-0.02f64).exp();
        assert!((p.ratio + dw * 0.96).abs() < 1e-15);
        let h = p.profile(5);
        assert!(h[0] > 0.0 && h[1] == 0.0);
        assert!((h[0] - dw * 0.04).abs() < 1e-15);

        let p = carrier_pair(0.3, 3).unwrap();
        let h = p.profile(6);
        assert!(h[..3].iter().all(|&v| v > 0.0));
        assert_eq!(h[3], 0.0);

        assert!(matches!(carrier_pair(0.0, 2), Err(Error::FirstZeroViolation { m: 0, .. })));
        assert!(matches!(carrier_pair(1e-7, 2), Err(Error::FirstZeroViolation { .. })));
    }

    #[test]
    fn carrier_pair_large_eta_rejected() {
        // L_m(x) stops decreasing once x is large enough that the first zero
        // of h moves below N
        let mut found = false;
        for n in 2..12 {
            if matches!(carrier_pair(0.99, n), Err(Error::FirstZeroViolation { .. })) {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn qubit_ratios() {
        let d = qubit_drive(sp(20), r2(), r2(), 0.2, 1.0, 4.0).unwrap();
        let ox = d.drives[1].rabi;
        let oy = d.drives[2].rabi;
        assert!((ox - C64::new(0.0, -5.0)).norm() < 1e-12);
        let expect = (-0.02f64).exp() * 0.96 / 0.2;
        assert!((oy - C64::new(0.0, expect)).norm() < 1e-12);
        assert!((oy.im - 4.7050).abs() < 5e-5);
        let rep = d.verify().unwrap();
        assert!(rep.relative_residual <= 1e-12, "{rep:?}");
        assert_eq!(rep.null_dim, 1);
    }

    #[test]
    fn qubit_engineered_rate() {
        // Γ = 4 MHz, Ω₁ = 2 MHz, η = 0.2
        let d = qubit_drive(sp(20), r2(), r2(), 0.2, 2.0, 4.0).unwrap();
        assert!((d.gamma_eng - 0.04).abs() < 1e-15);
        assert!((d.gamma_eng - 0.2f64.powi(2) * 4.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn qubit_zero_amplitude() {
        assert!(matches!(
            qubit_drive(sp(10), ONE, ZERO, 0.2, 1.0, 1.0),
            Err(Error::ZeroAmplitude { index: 1 })
        ));
    }

    #[test]
    fn qubit_drive_matches_gh_ratio() {
        let c0 = C64::new(0.6, 0.0);
        let c1 = C64::new(0.0, 0.8);
        let diss = qubit_drive(sp(12), c0, c1, 0.15, 1.0, 1.0).unwrap();
        let m = diss.d.matrix();
        // g(0)/h(0) = −c₀/c₁ regardless of the h scale
        assert!((m[[0, 1]] / m[[0, 0]] + c0 / c1).norm() < 1e-12);
    }

    #[test]
    fn rabi_single_equation_closed_form() {
        let h = [1.0, 0.0];
        let sol = solve_rabi_system(&[r2(), r2()], &h, &[0.2]).unwrap();
        // η f_1(0) Ω = i, f_1(0) = e^{−η²/2}
        let want = I / (0.2 * (-0.02f64).exp());
        assert!((sol.rabi[0] - want).norm() < 1e-12);
    }

    #[test]
    fn rabi_matrix_matches_series() {
        let etas = [0.1, 0.15, 0.2];
        let a = rabi_matrix(&etas, 3).unwrap();
        let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
        for (col, &eta) in etas.iter().enumerate() {
            for m in 0..3 {
                let series: f64 = (0..=m)
                    .map(|l| {
                        (-1f64).powi(l as i32) * eta.powi(2 * l as i32) * fact(m)
                            / (fact(l) * fact(l + 1) * fact(m - l))
                    })
                    .sum();
                let want = (-eta * eta / 2.0).exp() * eta * series;
                assert!((a[[m, col]].re - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn phase_state_design() {
        let space = sp(20);
        let target = Ket::phase_state(space, 3, 0.7).unwrap();
        let amps: Vec<C64> = target.amplitudes().iter().take(4).cloned().collect();
        let diss = superposition_drive(space, &amps, 0.3, &[0.1, 0.15, 0.2], 1.0, 1.0).unwrap();
        assert_eq!(diss.drives.len(), 5);
        let rep = diss.verify().unwrap();
        assert!(rep.relative_residual <= 1e-8, "{rep:?}");
        assert_eq!(rep.null_dim, 1);
        let biggest = diss.drives[..3].iter().fold(0.0f64, |m, d| m.max(d.rabi.norm()));
        assert!((biggest - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_eta_is_singular() {
        let h = carrier_pair(0.3, 2).unwrap().profile(10);
        let r = solve_rabi_system(&[ONE, ONE, ONE], &h, &[0.2, 0.2]);
        assert!(matches!(r, Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn default_eta_geometry() {
        let e = default_etas(0.2, 3);
        assert!((e[0] - 0.2).abs() < 1e-15);
        assert!((e[1] - 0.2 * 30f64.to_radians().cos()).abs() < 1e-15);
        assert!((e[2] - 0.1).abs() < 1e-15);
        assert_eq!(default_etas(0.2, 1), vec![0.2]);
    }

    #[test]
    fn cat_operator() {
        let space = sp(40);
        let alpha = C64::from(3f64.sqrt());
        let diss = cat_dissipator(space, alpha, 1.0).unwrap();
        let rep = diss.verify().unwrap();
        assert!(rep.residual <= 1e-7, "{rep:?}");
        assert!(diss.drives.is_empty());
        // 𝒯â𝒯† built on a much larger space and projected onto the first 40
        // levels; d̂ itself is an exact projection
        let big = sp(120);
        let u = cat_unitary(big, alpha).unwrap();
        let conj = u.compose(&Operator::annihilation(big)).unwrap().compose(&u.adjoint()).unwrap();
        let diff = &conj.matrix().slice(ndarray::s![..40, ..40]) - diss.d.matrix();
        let err = diff.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(err <= 1e-7, "{err:.3e}");

        let zero = cat_dissipator(sp(10), ZERO, 1.0).unwrap();
        assert_eq!(verify_dark_state(&zero.d, &Ket::basis(sp(10), 0).unwrap()).unwrap().residual, 0.0);
    }

    #[test]
    fn squeeze_operator() {
        let chi = 0.6f64.tanh();
        assert!((chi - 0.53705).abs() < 5e-6);
        let diss = squeeze_dissipator(sp(80), 0.6, 1.0, 0.1, 1.0).unwrap();
        assert!((diss.drives[1].rabi.re / diss.drives[0].rabi.re - chi).abs() < 1e-15);
        assert!(diss.verify().unwrap().residual <= 1e-8);
        let r0 = squeeze_dissipator(sp(10), 0.0, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(r0.d, Operator::annihilation(sp(10)));
    }

    #[test]
    fn squeeze_lasers_match_to_leading_order() {
        let space = sp(30);
        let diss = squeeze_dissipator(space, 0.6, 1.0, 0.05, 1.0).unwrap();
        let real = diss.realized_d().unwrap();
        let lo = |op: &Operator| op.matrix().slice(ndarray::s![..10, ..10]).to_owned();
        let err = (lo(&real) - lo(&diss.d)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        // O(η² n) mismatch from f̂_1
        assert!(err < 0.05 * 0.05 * 10.0 * 2.0, "{err}");
        assert!(err > 0.0);
    }

    #[test]
    fn uniqueness_of_steady_states() {
        let space = sp(12);
        let q = qubit_drive(space, r2(), r2(), 0.2, 1.0, 1.0).unwrap();
        let s = squeeze_dissipator(sp(30), 0.3, 1.0, 0.1, 1.0).unwrap();
        let c = cat_dissipator(sp(30), C64::from(1.5), 1.0).unwrap();
        let mut h = vec![1.0; 12];
        h[2] = 0.0;
        let gh = gh_profile(space, &[ONE, ONE, ONE], &h).unwrap();
        let gh = EngineeredDissipator::abstract_operator(gh.d, 1.0, Ket::from_amplitudes(space, &[ONE, ONE, ONE]).unwrap()).unwrap();
        for diss in [&q, &s, &c, &gh] {
            let ss = diss.generator().unwrap().steady_states(NULL_SPACE_TOLERANCE).unwrap();
            assert_eq!(ss.multiplicity, 1);
            let f = fidelity(&DensityMatrix::pure(&diss.target), ss.unique().unwrap()).unwrap();
            assert!(f >= 1.0 - 1e-6, "{f}");
        }
    }

    #[test]
    fn round_trip_for_drive_realized() {
        let q = qubit_drive(sp(15), C64::new(0.3, 0.1), C64::new(-0.5, 0.7), 0.25, 1.3, 2.0).unwrap();
        let again = assemble_coupling(sp(15), &q.drives).unwrap();
        let z = coupling_phasor(&q.drives).unwrap();
        assert!(max_abs(&(again.scaled(ONE / z).matrix() - q.d.matrix())) < 1e-14);
        assert!((z.norm() - q.g.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn linear_system_consistency() {
        let target = [C64::new(0.5, 0.1), C64::new(-0.3, 0.4), C64::new(0.2, -0.6), C64::new(0.7, 0.2)];
        let h = carrier_pair(0.3, 3).unwrap().profile(10);
        let etas = default_etas(0.2, 3);
        let sol = solve_rabi_system(&target, &h, &etas).unwrap();
        let b = rabi_rhs(&target, &h, 3);
        let scale = b.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(sol.residual <= 1e-10 * sol.condition * scale);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_four_level_targets(re in proptest::collection::vec(0.2f64..1.0, 4),
                                     ph in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 4)) {
            let amps: Vec<C64> = re.iter().zip(&ph).map(|(r, p)| C64::from_polar(*r, *p)).collect();
            let space = sp(16);
            let h = carrier_pair(0.3, 3).unwrap().profile(16);
            let p = gh_profile(space, &amps, &h).unwrap();
            let rep = verify_dark_state(&p.d, &Ket::from_amplitudes(space, &amps).unwrap()).unwrap();
            prop_assert!(rep.residual <= 1e-10);
            prop_assert_eq!(rep.null_dim, 1);
        }

        #[test]
        fn phase_covariance(phi in 0.0f64..std::f64::consts::TAU) {
            let space = sp(16);
            let amps = [C64::new(0.5, 0.2), C64::new(0.3, -0.4), C64::new(0.6, 0.1)];
            let rot: Vec<C64> = amps.iter().map(|c| c * C64::from_polar(1.0, phi)).collect();
            let a = superposition_drive(space, &amps, 0.3, &[0.2, 0.12], 1.0, 1.0).unwrap();
            let b = superposition_drive(space, &rot, 0.3, &[0.2, 0.12], 1.0, 1.0).unwrap();
            for (x, y) in a.drives.iter().zip(&b.drives) {
                prop_assert!((x.rabi - y.rabi).norm() < 1e-12);
            }
            let ra = a.verify().unwrap().residual;
            let rb = b.verify().unwrap().residual;
            prop_assert!((ra - rb).abs() < 1e-12);
        }
    }
}
