//! Lindblad generators, their vectorized superoperators, steady states,
//! spectral gaps, and density-matrix propagation.
//!
//! Vectorization is row-major: `vec(ρ)[i·D + j] = ρ_ij`, so that
//! `vec(AρB) = (A ⊗ Bᵀ) vec(ρ)`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, dagger, hermitize, max_abs, Ket, Operator, ZERO};
use crate::linalg;
use crate::ode::{DormandPrince, StepStats, Tolerances};

/// Largest Fock dimension for which the `D²×D²` superoperator is assembled.
pub const SUPEROPERATOR_SIZE_GUARD: usize = 128;

/// Relative null-cluster threshold (against `‖M‖_F`).
pub const NULL_SPACE_TOLERANCE: f64 = 1e-10;

/// Hermiticity and unit-trace tolerance for validated density matrices.
pub const DENSITY_TOLERANCE: f64 = 1e-10;

/// Most negative eigenvalue accepted by [`DensityMatrix::new`].
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// A rate paired with a jump operator.
#[derive(Clone, Debug)]
pub struct LindbladChannel {
    rate: f64,
    jump: Operator,
    jump_dag: Array2<C64>,
    // ĉ†ĉ
    loss: Array2<C64>,
}

impl LindbladChannel {
    pub fn new(rate: f64, jump: Operator) -> Result<Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::NegativeRate {
                what: "Lindblad channel",
                rate,
            });
        }
        let jump_dag = dagger(jump.matrix());
        let loss = jump_dag.dot(jump.matrix());
        Ok(Self {
            rate,
            jump,
            jump_dag,
            loss,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn jump(&self) -> &Operator {
        &self.jump
    }

    fn rescaled(&self, s: f64) -> Self {
        Self {
            rate: self.rate * s,
            ..self.clone()
        }
    }
}

/// Right-hand side `−i[Ĥ, ρ] + Σ_i (γ_i/2)(2ĉ_iρĉ_i† − ĉ_i†ĉ_iρ − ρĉ_i†ĉ_i)`,
/// with `Ĥ` in rate units.
#[derive(Clone, Debug)]
pub struct Generator {
    dim: usize,
    hamiltonian: Option<Operator>,
    channels: Vec<LindbladChannel>,
}

impl Generator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hamiltonian: None,
            channels: Vec::new(),
        }
    }

    pub fn with_hamiltonian(mut self, h: Operator) -> Result<Self> {
        check_dim(self.dim, h.dim())?;
        self.hamiltonian = Some(h);
        Ok(self)
    }

    pub fn with_channel(mut self, ch: LindbladChannel) -> Result<Self> {
        self.push(ch)?;
        Ok(self)
    }

    pub fn with_channels(mut self, chs: impl IntoIterator<Item = LindbladChannel>) -> Result<Self> {
        for ch in chs {
            self.push(ch)?;
        }
        Ok(self)
    }

    pub fn push(&mut self, ch: LindbladChannel) -> Result<()> {
        check_dim(self.dim, ch.jump.dim())?;
        self.channels.push(ch);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> Option<&Operator> {
        self.hamiltonian.as_ref()
    }

    pub fn channels(&self) -> &[LindbladChannel] {
        &self.channels
    }

    /// Every rate and the Hamiltonian multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            hamiltonian: self.hamiltonian.as_ref().map(|h| h.scaled(C64::from(s))),
            channels: self.channels.iter().map(|c| c.rescaled(s)).collect(),
        }
    }

    pub fn apply(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        check_dim(self.dim, rho.nrows())?;
        check_dim(self.dim, rho.ncols())?;
        let mut out = Array2::zeros((self.dim, self.dim));
        if let Some(h) = &self.hamiltonian {
            let hr = h.matrix().dot(rho);
            let rh = rho.dot(h.matrix());
            out.zip_mut_with(&(&hr - &rh), |o, &v| *o += C64::new(v.im, -v.re));
        }
        for ch in &self.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let jump = ch.jump.matrix().dot(rho).dot(&ch.jump_dag);
            let anti = ch.loss.dot(rho) + rho.dot(&ch.loss);
            let g = ch.rate;
            out.zip_mut_with(&jump, |o, &v| *o += v * g);
            out.zip_mut_with(&anti, |o, &v| *o -= v * (0.5 * g));
        }
        Ok(out)
    }

    pub fn superoperator(&self) -> Result<Array2<C64>> {
        self.superoperator_guarded(SUPEROPERATOR_SIZE_GUARD)
    }

    pub fn superoperator_guarded(&self, limit: usize) -> Result<Array2<C64>> {
        if self.dim > limit {
            return Err(Error::SizeGuardExceeded {
                dim: self.dim,
                limit,
            });
        }
        let d = self.dim;
        let n = d * d;
        let mut m = Array2::<C64>::zeros((n, n));
        // A ρ  -> A ⊗ I ;  ρ B -> I ⊗ Bᵀ
        let add_left = |m: &mut Array2<C64>, a: &Array2<C64>, s: C64| {
            for i in 0..d {
                for k in 0..d {
                    let v = a[[i, k]] * s;
                    if v == ZERO {
                        continue;
                    }
                    for j in 0..d {
                        m[[i * d + j, k * d + j]] += v;
                    }
                }
            }
        };
        let add_right = |m: &mut Array2<C64>, b: &Array2<C64>, s: C64| {
            for l in 0..d {
                for j in 0..d {
                    let v = b[[l, j]] * s;
                    if v == ZERO {
                        continue;
                    }
                    for i in 0..d {
                        m[[i * d + j, i * d + l]] += v;
                    }
                }
            }
        };
        if let Some(h) = &self.hamiltonian {
            add_left(&mut m, h.matrix(), C64::new(0.0, -1.0));
            add_right(&mut m, h.matrix(), C64::new(0.0, 1.0));
        }
        for ch in &self.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let c = ch.jump.matrix();
            let g = ch.rate;
            for i in 0..d {
                for k in 0..d {
                    let cik = c[[i, k]] * g;
                    if cik == ZERO {
                        continue;
                    }
                    for j in 0..d {
                        for l in 0..d {
                            // (c ρ c†)_ij = Σ c_ik ρ_kl conj(c_jl)
                            let cjl = c[[j, l]];
                            if cjl != ZERO {
                                m[[i * d + j, k * d + l]] += cik * cjl.conj();
                            }
                        }
                    }
                }
            }
            add_left(&mut m, &ch.loss, C64::from(-0.5 * g));
            add_right(&mut m, &ch.loss, C64::from(-0.5 * g));
        }
        Ok(m)
    }

    /// Null space of the superoperator, each basis element Hermitized and
    /// trace-normalized. Multiplicity above one is reported, not rejected.
    pub fn steady_states(&self, rel_tol: f64) -> Result<SteadyStates> {
        let m = self.superoperator()?;
        let fro = frobenius(&m);
        let d = self.dim;
        if fro == 0.0 {
            let states = (0..d)
                .map(|k| {
                    let mut p = Array2::zeros((d, d));
                    p[[k, k]] = C64::from(1.0);
                    DensityMatrix::from_matrix_unchecked(p)
                })
                .collect();
            return Ok(SteadyStates {
                states,
                multiplicity: d * d,
                smallest_nonnull: 0.0,
                norm: 0.0,
            });
        }
        let (s, vt) = linalg::svd_right(&m)?;
        let threshold = rel_tol * fro;
        let multiplicity = s.iter().filter(|&&v| v <= threshold).count();
        let smallest_nonnull = s
            .iter()
            .cloned()
            .filter(|&v| v > threshold)
            .fold(f64::INFINITY, f64::min);
        let n = d * d;
        let mut states = Vec::with_capacity(multiplicity);
        for r in (n - multiplicity)..n {
            let v: Array1<C64> = vt.row(r).mapv(|z| z.conj());
            let x = v.into_shape_with_order((d, d)).expect("square reshape");
            if let Some(rho) = normalized_hermitian_part(&x) {
                states.push(rho);
            }
        }
        Ok(SteadyStates {
            states,
            multiplicity,
            smallest_nonnull: if smallest_nonnull.is_finite() {
                smallest_nonnull
            } else {
                0.0
            },
            norm: fro,
        })
    }

    /// All superoperator eigenvalues.
    pub fn spectrum(&self) -> Result<Array1<C64>> {
        let m = self.superoperator()?;
        linalg::eigvals(&m)
    }

    /// `−max Re λ` over eigenvalues outside the null cluster; zero when the
    /// whole spectrum is null.
    pub fn spectral_gap(&self) -> Result<f64> {
        let m = self.superoperator()?;
        let fro = frobenius(&m);
        if fro == 0.0 {
            return Ok(0.0);
        }
        let ev = linalg::eigvals(&m)?;
        let threshold = NULL_SPACE_TOLERANCE * fro;
        let top = ev
            .iter()
            .filter(|z| z.norm() > threshold)
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(if top.is_finite() { (-top).max(0.0) } else { 0.0 })
    }

    pub fn propagate(&self, rho0: &DensityMatrix, grid: &[f64], opts: &PropagationOptions) -> Result<Trajectory> {
        check_dim(self.dim, rho0.dim())?;
        validate_grid(grid)?;
        let mut traj = Trajectory::with_capacity(grid.len());
        let integrator = DormandPrince::new(opts.tol);
        let stats = integrator.integrate(
            |_, rho: &Array2<C64>| self.apply(rho),
            rho0.matrix().clone(),
            grid,
            |_, t, rho| {
                let checked = audit_output(rho, t, opts)?;
                traj.push(t, checked);
                Ok(())
            },
        )?;
        traj.stats = stats;
        Ok(traj)
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidParameter("time grid must start at 0".into()));
    }
    Ok(())
}

/// Hermitizes an output state and enforces the trace and positivity bounds.
pub(crate) fn audit_output(rho: &Array2<C64>, t: f64, opts: &PropagationOptions) -> Result<(DensityMatrix, f64, f64)> {
    let h = hermitize(rho);
    let tr: C64 = h.diag().iter().sum();
    let drift = (tr - C64::from(1.0)).norm();
    if drift > opts.trace_tol {
        return Err(Error::TraceDrift { t, drift });
    }
    let min_eig = linalg::eigvalsh(&h)?.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -opts.positivity_tol {
        return Err(Error::PositivityViolation {
            t,
            what: "minimum eigenvalue",
            value: min_eig,
        });
    }
    Ok((DensityMatrix::from_matrix_unchecked(h), drift, min_eig))
}

fn normalized_hermitian_part(x: &Array2<C64>) -> Option<DensityMatrix> {
    let herm = hermitize(x);
    let anti = (x - &dagger(x)).mapv(|z| z * C64::new(0.0, -0.5));
    let th: C64 = herm.diag().iter().sum();
    let ta: C64 = anti.diag().iter().sum();
    let (m, tr) = if th.norm() >= ta.norm() { (herm, th) } else { (anti, ta) };
    if tr.norm() < 1e-12 {
        return None;
    }
    let scaled = m.mapv(|z| z / tr);
    Some(DensityMatrix::from_matrix_unchecked(hermitize(&scaled)))
}

pub(crate) fn frobenius(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct SteadyStates {
    /// Hermitian, unit-trace basis of the null space. Only guaranteed to be
    /// positive when the multiplicity is one.
    pub states: Vec<DensityMatrix>,
    pub multiplicity: usize,
    /// Smallest singular value above the null threshold.
    pub smallest_nonnull: f64,
    /// Frobenius norm of the superoperator.
    pub norm: f64,
}

impl SteadyStates {
    pub fn is_degenerate(&self) -> bool {
        self.multiplicity > 1
    }

    pub fn unique(&self) -> Option<&DensityMatrix> {
        if self.multiplicity == 1 {
            self.states.first()
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
pub struct PropagationOptions {
    pub tol: Tolerances,
    pub trace_tol: f64,
    pub positivity_tol: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            trace_tol: 1e-7,
            positivity_tol: 1e-6,
        }
    }
}

/// Worst-case invariant excursions over a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Audit {
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
}

impl Default for Audit {
    fn default() -> Self {
        Self {
            max_trace_drift: 0.0,
            min_eigenvalue: f64::INFINITY,
        }
    }
}

impl Audit {
    pub(crate) fn record(&mut self, drift: f64, min_eig: f64) {
        self.max_trace_drift = self.max_trace_drift.max(drift);
        self.min_eigenvalue = self.min_eigenvalue.min(min_eig);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub trace_drift: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub audit: Audit,
    pub stats: StepStats,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            trace_drift: Vec::with_capacity(n),
            min_eigenvalues: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    fn push(&mut self, t: f64, (rho, drift, min_eig): (DensityMatrix, f64, f64)) {
        self.times.push(t);
        self.states.push(rho);
        self.trace_drift.push(drift);
        self.min_eigenvalues.push(min_eig);
        self.audit.record(drift, min_eig);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&DensityMatrix> {
        self.states.last()
    }

    /// `F(t) = Tr{ρ(0)ρ(t)}` along the trajectory.
    pub fn fidelity_series(&self) -> Result<Vec<f64>> {
        let Some(first) = self.states.first() else {
            return Ok(Vec::new());
        };
        self.states.iter().map(|r| fidelity(first, r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: Array2<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(mat: Array2<C64>) -> Result<Self> {
        let (r, c) = mat.dim();
        check_dim(r, c)?;
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NotDensityMatrix("non-finite entries".into()));
        }
        let herm_err = max_abs(&(&mat - &dagger(&mat)));
        if herm_err > DENSITY_TOLERANCE {
            return Err(Error::NotDensityMatrix(format!(
                "Hermiticity error {herm_err:.3e}"
            )));
        }
        let tr: C64 = mat.diag().iter().sum();
        if (tr - C64::from(1.0)).norm() > DENSITY_TOLERANCE {
            return Err(Error::NotDensityMatrix(format!("trace {tr}")));
        }
        let min_eig = linalg::eigvalsh(&hermitize(&mat))?
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -POSITIVITY_TOLERANCE {
            return Err(Error::NotDensityMatrix(format!(
                "minimum eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: Array2<C64>) -> Self {
        Self { mat }
    }

    pub fn pure(psi: &Ket) -> Self {
        Self {
            mat: psi.projector(),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: Array2::eye(dim).mapv(|z: C64| z / dim as f64),
        }
    }

    /// Truncated thermal state with `p_n ∝ (N/(N+1))^n`.
    pub fn thermal(dim: usize, n_thermal: f64) -> Result<Self> {
        if !(n_thermal >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "thermal occupation must be non-negative, got {n_thermal}"
            )));
        }
        let q = n_thermal / (n_thermal + 1.0);
        let weights: Vec<f64> = (0..dim).map(|n| q.powi(n as i32)).collect();
        let z: f64 = weights.iter().sum();
        let mut mat = Array2::zeros((dim, dim));
        for (n, w) in weights.iter().enumerate() {
            mat[[n, n]] = C64::from(w / z);
        }
        Ok(Self { mat })
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

    pub fn trace(&self) -> C64 {
        self.mat.diag().iter().sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(linalg::eigvalsh(&hermitize(&self.mat))?
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min))
    }

    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        check_dim(self.dim(), op.dim())?;
        Ok(trace_product(op.matrix(), &self.mat))
    }

    pub fn populations(&self) -> Vec<f64> {
        self.mat.diag().iter().map(|z| z.re).collect()
    }

    pub fn fidelity(&self, other: &DensityMatrix) -> Result<f64> {
        fidelity(self, other)
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let diff = hermitize(&(&self.mat - &other.mat));
        Ok(0.5 * linalg::eigvalsh(&diff)?.iter().map(|v| v.abs()).sum::<f64>())
    }
}

fn trace_product(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += a[[i, j]] * b[[j, i]];
        }
    }
    acc
}

/// `Tr[ρ_ref ρ_t]`.
pub fn fidelity(rho_ref: &DensityMatrix, rho_t: &DensityMatrix) -> Result<f64> {
    check_dim(rho_ref.dim(), rho_t.dim())?;
    let tr = trace_product(&rho_ref.mat, &rho_t.mat);
    if tr.im.abs() > 1e-10 {
        return Err(Error::ImaginaryResidue(tr.im));
    }
    Ok(tr.re)
}
