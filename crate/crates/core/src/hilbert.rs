//! Truncated Fock-space algebra for one vibrational mode.
//!
//! Everything here lives on a [`FockSpace`] of dimension `D`, i.e. the levels
//! `|0⟩ … |D−1⟩`. Ladder operators are the exact truncations of the infinite
//! matrices; states built from analytic amplitude formulas are renormalized on
//! the retained levels and remember how much probability mass was cut off.

use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest tail probability a state constructor may discard before it refuses.
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "Fock space dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Truncation used when a scenario does not fix one: `max(20, ⌈8⟨n̂⟩ + 10⌉)`.
    pub fn default_dim(mean_photons: f64) -> usize {
        let d = (8.0 * mean_photons.max(0.0) + 10.0).ceil() as usize;
        d.max(20)
    }
}

/// Dense square complex matrix acting on a Fock space or on the joint
/// electronic ⊗ motional space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: Array2<C64>,
}

impl Operator {
    pub fn from_matrix(mat: Array2<C64>) -> Result<Self> {
        let (r, c) = mat.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: c,
            });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter(
                "operator has non-finite entries".into(),
            ));
        }
        Ok(Self { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: Array2<C64>) -> Self {
        Self { mat }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(space: FockSpace) -> Self {
        Self {
            mat: Array2::eye(space.dim),
        }
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self {
            mat: Array2::from_diag(&Array1::from(values.to_vec())),
        }
    }

    pub fn annihilation(space: FockSpace) -> Self {
        let d = space.dim;
        let mut mat = Array2::zeros((d, d));
        for n in 1..d {
            mat[[n - 1, n]] = C64::from((n as f64).sqrt());
        }
        Self { mat }
    }

    pub fn creation(space: FockSpace) -> Self {
        Self::annihilation(space).adjoint()
    }

    pub fn number(space: FockSpace) -> Self {
        let n: Vec<C64> = (0..space.dim).map(|n| C64::from(n as f64)).collect();
        Self::diagonal(&n)
    }

    /// Position quadrature `â + â†`.
    pub fn position(space: FockSpace) -> Self {
        let a = Self::annihilation(space);
        let ad = a.adjoint();
        &a + &ad
    }

    /// `e^{iπn̂}`.
    pub fn parity(space: FockSpace) -> Self {
        let p: Vec<C64> = (0..space.dim)
            .map(|n| if n % 2 == 0 { ONE } else { -ONE })
            .collect();
        Self::diagonal(&p)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.t().mapv(|z| z.conj()),
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            mat: self.mat.mapv(|z| z * s),
        }
    }

    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        check_dim(self.dim(), rhs.dim())?;
        Ok(Self {
            mat: self.mat.dot(&rhs.mat),
        })
    }

    pub fn apply(&self, psi: &Array1<C64>) -> Result<Array1<C64>> {
        check_dim(self.dim(), psi.len())?;
        Ok(self.mat.dot(psi))
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Operator) -> Operator {
        Operator {
            mat: kron(&self.mat, &rhs.mat),
        }
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }

    /// `‖A − A†‖_max`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        worst
    }

    pub fn singular_values(&self) -> Result<Array1<f64>> {
        linalg::singular_values(&self.mat)
    }

    /// Spectral norm (largest singular value).
    pub fn norm2(&self) -> Result<f64> {
        Ok(self.singular_values()?.iter().cloned().fold(0.0, f64::max))
    }

    /// Numerical nullity: singular values at or below `rel_tol · σ_max`.
    pub fn nullity(&self, rel_tol: f64) -> Result<usize> {
        let s = self.singular_values()?;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        if smax == 0.0 {
            return Ok(self.dim());
        }
        Ok(s.iter().filter(|&&v| v <= rel_tol * smax).count())
    }

    /// `e^{i t H}` for Hermitian `H`, by eigendecomposition. Unitary to rounding.
    pub fn exp_i_hermitian(h: &Operator, t: f64) -> Result<Operator> {
        let herm = hermitize(&h.mat);
        let (vals, vecs) = linalg::eigh(&herm)?;
        let phases: Array1<C64> = vals.mapv(|v| C64::from_polar(1.0, t * v));
        let scaled = &vecs * &phases.view().insert_axis(ndarray::Axis(0));
        let vh = vecs.t().mapv(|z| z.conj());
        Ok(Operator {
            mat: scaled.dot(&vh),
        })
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            mat: self.mat.dot(&rhs.mat),
        }
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, s: C64) -> Operator {
        self.scaled(s)
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub(crate) fn hermitize(m: &Array2<C64>) -> Array2<C64> {
    (m + &dagger(m)).mapv(|z| z * 0.5)
}

pub(crate) fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Generalized Laguerre polynomials `L_n^{(α)}(x)` for `n = 0..=n_max`, by the
/// three-term recurrence.
pub fn laguerre_table(n_max: usize, alpha: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max == 0 {
        return out;
    }
    out.push(1.0 + alpha - x);
    for n in 1..n_max {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0 + alpha - x) * out[n] - (nf + alpha) * out[n - 1]) / (nf + 1.0);
        out.push(next);
    }
    out
}

pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    laguerre_table(n, alpha, x)[n]
}

/// Eigenvalues `f_k(n)` of `f̂_k(n̂)` for `n = 0..dim`:
/// `f_k(n) = e^{−η²/2} · n!/(n+k)! · L_n^{(k)}(η²)`.
pub fn fk_values(dim: usize, k: usize, eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Lamb-Dicke parameter must be positive, got {eta}"
        )));
    }
    let x = eta * eta;
    let lag = laguerre_table(dim.saturating_sub(1), k as f64, x);
    let dw = (-x / 2.0).exp();
    Ok((0..dim)
        .map(|n| {
            // n!/(n+k)! as a product of k reciprocals
            let ratio: f64 = (1..=k).map(|j| 1.0 / (n + j) as f64).product();
            dw * ratio * lag[n]
        })
        .collect())
}

/// Diagonal operator `f̂_k(â†â)` of the sideband expansion.
pub fn fk_operator(space: FockSpace, k: usize, eta: f64) -> Result<Operator> {
    let vals: Vec<C64> = fk_values(space.dim, k, eta)?
        .into_iter()
        .map(C64::from)
        .collect();
    Ok(Operator::diagonal(&vals))
}

/// Displacement `exp(βâ† − β*â)` computed on the truncated space.
pub fn displacement(space: FockSpace, beta: C64) -> Result<Operator> {
    let a = Operator::annihilation(space);
    let ad = a.adjoint();
    // generator = −i(βâ† − β*â) is Hermitian
    let gen = &(&ad * beta) - &(&a * beta.conj());
    let herm = &gen * (-I);
    Operator::exp_i_hermitian(&herm, 1.0)
}

fn coherent_tail(dim: usize, alpha: C64) -> (Vec<C64>, f64) {
    let mut amps = Vec::with_capacity(dim);
    let mut c = C64::from((-alpha.norm_sqr() / 2.0).exp());
    amps.push(c);
    for n in 1..dim {
        c = c * alpha / (n as f64).sqrt();
        amps.push(c);
    }
    let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    (amps, (1.0 - kept).max(0.0))
}

fn check_tail(discarded: f64) -> Result<()> {
    if discarded > TRUNCATION_TOLERANCE {
        return Err(Error::Truncation {
            discarded,
            tolerance: TRUNCATION_TOLERANCE,
        });
    }
    Ok(())
}

/// The unitary `exp[iπn̂(n̂−1)/2]·D(−iα)` that maps the vacuum onto
/// `(|α⟩ + i|−α⟩)/√2` (up to a global phase) and conjugates `â` into
/// `e^{iπn̂}â + iα`.
pub fn cat_unitary(space: FockSpace, alpha: C64) -> Result<Operator> {
    let (_, tail) = coherent_tail(space.dim, alpha);
    check_tail(tail)?;
    let phases: Vec<C64> = (0..space.dim)
        .map(|n| {
            if (n * n.saturating_sub(1) / 2) % 2 == 0 {
                ONE
            } else {
                -ONE
            }
        })
        .collect();
    let disp = displacement(space, -I * alpha)?;
    Ok(&Operator::diagonal(&phases) * &disp)
}

/// Normalized state vector on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amps: Array1<C64>,
    discarded: f64,
}

impl Ket {
    /// Normalizes arbitrary amplitudes. Entries beyond the truncation count as
    /// discarded mass.
    pub fn from_amplitudes(space: FockSpace, amps: &[C64]) -> Result<Self> {
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        let total: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if total == 0.0 {
            return Err(Error::InvalidParameter("all amplitudes vanish".into()));
        }
        let kept: f64 = amps.iter().take(space.dim).map(|z| z.norm_sqr()).sum();
        let discarded = 1.0 - kept / total;
        check_tail(discarded)?;
        let mut v = Array1::zeros(space.dim);
        for (n, z) in amps.iter().take(space.dim).enumerate() {
            v[n] = *z;
        }
        Self::normalized(v, discarded)
    }

    fn normalized(v: Array1<C64>, discarded: f64) -> Result<Self> {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidParameter(
                "state vanishes on the truncated space".into(),
            ));
        }
        Ok(Self {
            amps: v.mapv(|z| z / norm),
            discarded: discarded.max(0.0),
        })
    }

    pub fn basis(space: FockSpace, n: usize) -> Result<Self> {
        if n >= space.dim {
            return Err(Error::InvalidParameter(format!(
                "level {n} outside a space of dimension {}",
                space.dim
            )));
        }
        let mut v = Array1::zeros(space.dim);
        v[n] = ONE;
        Ok(Self {
            amps: v,
            discarded: 0.0,
        })
    }

    pub fn coherent(space: FockSpace, alpha: C64) -> Result<Self> {
        let (amps, tail) = coherent_tail(space.dim, alpha);
        check_tail(tail)?;
        Self::normalized(Array1::from(amps), tail)
    }

    /// `(|α⟩ + i|−α⟩)/‖·‖`.
    pub fn cat_plus(space: FockSpace, alpha: C64) -> Result<Self> {
        let (amps, tail) = coherent_tail(space.dim, alpha);
        check_tail(tail)?;
        let v: Array1<C64> = amps
            .iter()
            .enumerate()
            .map(|(n, c)| {
                let sign = if n % 2 == 0 { ONE } else { -ONE };
                c * (ONE + I * sign)
            })
            .collect();
        Self::normalized(v, tail)
    }

    /// Squeezed vacuum `S(r)|0⟩`, annihilated by `â + tanh(r)â†`.
    pub fn squeezed_vacuum(space: FockSpace, r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "squeezing factor must be non-negative, got {r}"
            )));
        }
        let chi = r.tanh();
        let mut v = Array1::zeros(space.dim);
        let mut c = (1.0 - chi * chi).powf(0.25);
        v[0] = C64::from(c);
        let mut m = 1;
        while 2 * m < space.dim {
            let mf = m as f64;
            c *= -chi * ((2.0 * mf - 1.0) / (2.0 * mf)).sqrt();
            v[2 * m] = C64::from(c);
            m += 1;
        }
        let kept: f64 = v.iter().map(|z: &C64| z.norm_sqr()).sum();
        let tail = (1.0 - kept).max(0.0);
        check_tail(tail)?;
        Self::normalized(v, tail)
    }

    /// `(1/√(N+1)) Σ_{n=0}^{N} e^{inφ}|n⟩`.
    pub fn phase_state(space: FockSpace, n_max: usize, phi: f64) -> Result<Self> {
        if n_max >= space.dim {
            return Err(Error::InvalidParameter(format!(
                "phase state order {n_max} needs a space larger than {}",
                space.dim
            )));
        }
        let amps: Vec<C64> = (0..=n_max)
            .map(|n| C64::from_polar(1.0, n as f64 * phi))
            .collect();
        Self::from_amplitudes(space, &amps)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn space(&self) -> FockSpace {
        FockSpace { dim: self.dim() }
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amps
    }

    /// Probability mass cut off by the truncation before renormalizing.
    pub fn discarded_mass(&self) -> f64 {
        self.discarded
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        let v = op.apply(&self.amps)?;
        Ok(self.amps.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn projector(&self) -> Array2<C64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(i, j)| self.amps[i] * self.amps[j].conj())
    }

    pub fn with_global_phase(&self, phase: f64) -> Ket {
        Ket {
            amps: self.amps.mapv(|z| z * C64::from_polar(1.0, phase)),
            discarded: self.discarded,
        }
    }
}
