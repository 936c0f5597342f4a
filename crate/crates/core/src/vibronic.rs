//! Two-level ⊗ motion dynamics with spontaneous-emission recoil, motional
//! environments, and the adiabatically reduced motional model.
//!
//! Electronic index 1 (ground) comes first in joint matrices: the joint state
//! is `[[ρ₁₁, ρ₁₂], [ρ₂₁, ρ₂₂]]` and the interaction Hamiltonian
//! `Â₂₁ ⊗ D̂ + Â₁₂ ⊗ D̂†` has `D̂` in its lower-left block. Rates are in
//! whatever unit the caller uses consistently (the runner uses `Γ = 1`).

use ndarray::{s, Array2, Array3, Axis};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, dagger, hermitize, max_abs, FockSpace, Operator, ONE};
use crate::liouvillian::{audit_output, validate_grid, Audit, DensityMatrix, Generator, LindbladChannel, PropagationOptions};
use crate::linalg;
use crate::ode::{DormandPrince, StepStats};
use crate::pointer::{assemble_coupling, coupling_phasor, EngineeredDissipator, LaserDrive};

/// Gauss–Legendre nodes used by default; the convergence guard doubles this.
pub const DEFAULT_NODES: usize = 16;

/// Largest change allowed when the number of quadrature nodes is doubled.
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;

/// Emission pattern `W(s)` over `s = cos θ ∈ [−1, 1]`, normalized to `∫W = 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularDistribution {
    /// `(3/8)(1 + s²)`.
    #[default]
    Dipole,
    /// `1/2`.
    Isotropic,
    /// Piecewise-linear table, renormalized to unit integral.
    Tabulated { s: Vec<f64>, w: Vec<f64> },
}

impl AngularDistribution {
    pub fn validate(&self) -> Result<()> {
        if let AngularDistribution::Tabulated { s, w } = self {
            if s.len() < 2 || s.len() != w.len() {
                return Err(Error::InvalidParameter(
                    "tabulated W needs at least two (s, w) pairs of equal length".into(),
                ));
            }
            if s.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::InvalidParameter("tabulated s must be increasing".into()));
            }
            if (s[0] + 1.0).abs() > 1e-12 || (s[s.len() - 1] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter("tabulated s must span [−1, 1]".into()));
            }
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParameter("tabulated W must be non-negative".into()));
            }
            if self.table_integral() <= 0.0 {
                return Err(Error::InvalidParameter("tabulated W integrates to zero".into()));
            }
        }
        Ok(())
    }

    fn table_integral(&self) -> f64 {
        match self {
            AngularDistribution::Tabulated { s, w } => s
                .windows(2)
                .zip(w.windows(2))
                .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
                .sum(),
            _ => 1.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            AngularDistribution::Dipole => 0.375 * (1.0 + x * x),
            AngularDistribution::Isotropic => 0.5,
            AngularDistribution::Tabulated { s, w } => {
                let k = s.partition_point(|v| *v <= x).clamp(1, s.len() - 1);
                let t = (x - s[k - 1]) / (s[k] - s[k - 1]);
                ((1.0 - t) * w[k - 1] + t * w[k]) / self.table_integral()
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 0 { 0.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Quadrature of `ρ ↦ ∫ds W(s) e^{iηsx̂} ρ e^{−iηsx̂}`.
#[derive(Clone, Debug)]
pub struct RecoilKernel {
    eta: f64,
    nodes: Vec<f64>,
    /// Gauss weight × `W`, renormalized to sum to one.
    weights: Vec<f64>,
    unitaries: Vec<Array2<C64>>,
    dim: usize,
}

impl RecoilKernel {
    /// Kernel with `n` nodes and no convergence check.
    pub fn with_nodes(space: FockSpace, eta: f64, dist: &AngularDistribution, n: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("recoil η = {eta} outside [0, 1)")));
        }
        dist.validate()?;
        let dim = space.dim();
        if eta == 0.0 {
            return Ok(Self {
                eta,
                nodes: vec![0.0],
                weights: vec![1.0],
                unitaries: vec![Array2::eye(dim)],
                dim,
            });
        }
        let (nodes, gw) = gauss_legendre(n);
        let mut weights: Vec<f64> = nodes.iter().zip(&gw).map(|(x, w)| w * dist.density(*x)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("angular distribution vanishes at every node".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let (lam, vecs) = linalg::eigh(Operator::position(space).matrix())?;
        let vd = dagger(&vecs);
        let unitaries = nodes
            .iter()
            .map(|&x| {
                let mut scaled = vecs.clone();
                for (mut col, l) in scaled.columns_mut().into_iter().zip(lam.iter()) {
                    let ph = C64::from_polar(1.0, eta * x * l);
                    col.mapv_inplace(|z| z * ph);
                }
                scaled.dot(&vd)
            })
            .collect();
        Ok(Self {
            eta,
            nodes,
            weights,
            unitaries,
            dim,
        })
    }

    /// Default node count, verified against twice as many nodes on probe
    /// states (vacuum, a mid-space Fock state, and a 0–1 coherence).
    pub fn new(space: FockSpace, eta: f64, dist: &AngularDistribution) -> Result<Self> {
        let k = Self::with_nodes(space, eta, dist, DEFAULT_NODES)?;
        if eta == 0.0 {
            return Ok(k);
        }
        let k2 = Self::with_nodes(space, eta, dist, 2 * DEFAULT_NODES)?;
        let d = space.dim();
        let mut change: f64 = 0.0;
        for probe in probes(d) {
            let diff = k.apply(&probe)? - k2.apply(&probe)?;
            change = change.max(max_abs(&diff));
        }
        if change > QUADRATURE_TOLERANCE {
            return Err(Error::QuadratureNotConverged { change });
        }
        Ok(k)
    }

    pub fn identity(space: FockSpace) -> Self {
        Self::with_nodes(space, 0.0, &AngularDistribution::Isotropic, 1).expect("η = 0 kernel")
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_identity(&self) -> bool {
        self.eta == 0.0
    }

    /// `(weight, e^{iηs_q x̂})` pairs.
    pub fn terms(&self) -> impl Iterator<Item = (f64, &Array2<C64>)> {
        self.weights.iter().cloned().zip(self.unitaries.iter())
    }

    pub fn apply(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        check_dim(self.dim, rho.nrows())?;
        check_dim(self.dim, rho.ncols())?;
        if self.is_identity() {
            return Ok(rho.clone());
        }
        let mut out = Array2::<C64>::zeros(rho.raw_dim());
        for (w, u) in self.terms() {
            let t = u.dot(rho).dot(&dagger(u));
            out.scaled_add(C64::from(w), &t);
        }
        Ok(out)
    }
}

fn probes(d: usize) -> Vec<Array2<C64>> {
    let mut v = Vec::new();
    let mut p = Array2::zeros((d, d));
    p[[0, 0]] = ONE;
    v.push(p);
    let mut p = Array2::zeros((d, d));
    p[[d / 2, d / 2]] = ONE;
    v.push(p);
    let mut p = Array2::zeros((d, d));
    p[[0, 1]] = ONE;
    v.push(p);
    v
}

/// `Σ_q w_q U_q ρ U_q†`.
pub fn recoil_map(rho: &Array2<C64>, kernel: &RecoilKernel) -> Result<Array2<C64>> {
    kernel.apply(rho)
}

/// Motional environment `ℒ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    #[default]
    None,
    /// Thermal bath of occupation `n_thermal` coupled at `gamma`.
    Thermal { gamma: f64, n_thermal: f64 },
    /// Infinite-temperature fluctuating field with opaque rate `Λ = μ²D/ℏ²`.
    RandomField { lambda: f64 },
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, rate: f64| {
            if !rate.is_finite() || rate < 0.0 {
                Err(Error::NegativeRate { what, rate })
            } else {
                Ok(())
            }
        };
        match *self {
            Environment::None => Ok(()),
            Environment::Thermal { gamma, n_thermal } => {
                bad("thermal coupling γ", gamma)?;
                bad("thermal occupation N_T", n_thermal)
            }
            Environment::RandomField { lambda } => bad("random-field rate Λ", lambda),
        }
    }

    /// Rate of `d⟨n̂⟩/dt` far from the ground state: `γN_T` or `2Λ`.
    pub fn heating_rate(&self) -> f64 {
        match *self {
            Environment::None => 0.0,
            Environment::Thermal { gamma, n_thermal } => gamma * n_thermal,
            Environment::RandomField { lambda } => 2.0 * lambda,
        }
    }

    /// Multiplies every rate by `s` (unit conversion).
    pub fn rescaled(&self, s: f64) -> Self {
        match *self {
            Environment::None => Environment::None,
            Environment::Thermal { gamma, n_thermal } => Environment::Thermal {
                gamma: gamma * s,
                n_thermal,
            },
            Environment::RandomField { lambda } => Environment::RandomField { lambda: lambda * s },
        }
    }

    pub fn channels(&self, space: FockSpace) -> Result<Vec<LindbladChannel>> {
        self.validate()?;
        let a = Operator::annihilation(space);
        let mut out = Vec::new();
        match *self {
            Environment::None => {}
            Environment::Thermal { gamma, n_thermal } => {
                out.push(LindbladChannel::new(gamma * (n_thermal + 1.0), a.clone())?);
                if n_thermal > 0.0 {
                    out.push(LindbladChannel::new(gamma * n_thermal, a.adjoint())?);
                }
            }
            Environment::RandomField { lambda } => {
                out.push(LindbladChannel::new(2.0 * lambda, a.clone())?);
                out.push(LindbladChannel::new(2.0 * lambda, a.adjoint())?);
            }
        }
        Ok(out)
    }

    pub fn generator(&self, space: FockSpace) -> Result<Generator> {
        Generator::new(space.dim()).with_channels(self.channels(space)?)
    }
}

/// Electronic-block density operator; `ρ₂₁ = ρ₁₂†` is implied.
#[derive(Clone, Debug, PartialEq)]
pub struct VibronicState {
    pub rho11: Array2<C64>,
    pub rho12: Array2<C64>,
    pub rho22: Array2<C64>,
}

impl VibronicState {
    /// Electronic ground state ⊗ motional state.
    pub fn ground(rho: &DensityMatrix) -> Self {
        let d = rho.dim();
        Self {
            rho11: rho.matrix().clone(),
            rho12: Array2::zeros((d, d)),
            rho22: Array2::zeros((d, d)),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            rho11: Array2::zeros((dim, dim)),
            rho12: Array2::zeros((dim, dim)),
            rho22: Array2::zeros((dim, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho11.nrows()
    }

    pub fn rho21(&self) -> Array2<C64> {
        dagger(&self.rho12)
    }

    pub fn trace(&self) -> C64 {
        self.rho11.diag().iter().sum::<C64>() + self.rho22.diag().iter().sum::<C64>()
    }

    pub fn excited_population(&self) -> f64 {
        self.rho22.diag().iter().map(|z| z.re).sum()
    }

    /// Motional reduced state `ρ₁₁ + ρ₂₂`.
    pub fn motional(&self) -> Array2<C64> {
        &self.rho11 + &self.rho22
    }

    pub fn joint(&self) -> Array2<C64> {
        let d = self.dim();
        let mut m = Array2::zeros((2 * d, 2 * d));
        m.slice_mut(s![..d, ..d]).assign(&self.rho11);
        m.slice_mut(s![..d, d..]).assign(&self.rho12);
        m.slice_mut(s![d.., ..d]).assign(&self.rho21());
        m.slice_mut(s![d.., d..]).assign(&self.rho22);
        m
    }

    pub fn from_joint(m: &Array2<C64>) -> Result<Self> {
        let n = m.nrows();
        if !n.is_multiple_of(2) || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: 2 * (n / 2),
                found: n,
            });
        }
        let d = n / 2;
        Ok(Self {
            rho11: m.slice(s![..d, ..d]).to_owned(),
            rho12: m.slice(s![..d, d..]).to_owned(),
            rho22: m.slice(s![d.., d..]).to_owned(),
        })
    }

    fn pack(&self) -> Array3<C64> {
        let d = self.dim();
        let mut y = Array3::zeros((3, d, d));
        y.index_axis_mut(Axis(0), 0).assign(&self.rho11);
        y.index_axis_mut(Axis(0), 1).assign(&self.rho12);
        y.index_axis_mut(Axis(0), 2).assign(&self.rho22);
        y
    }

    fn unpack(y: &Array3<C64>) -> Self {
        Self {
            rho11: y.index_axis(Axis(0), 0).to_owned(),
            rho12: y.index_axis(Axis(0), 1).to_owned(),
            rho22: y.index_axis(Axis(0), 2).to_owned(),
        }
    }
}

/// `Â₂₁ ⊗ D̂ + Â₁₂ ⊗ D̂†` for the coupling assembled from `drives`; fails with
/// `InconsistentScale` when the drives define no `g`.
pub fn interaction_hamiltonian(drives: &[LaserDrive], space: FockSpace) -> Result<Operator> {
    coupling_phasor(drives)?;
    Ok(joint_hamiltonian(&assemble_coupling(space, drives)?))
}

fn joint_hamiltonian(coupling: &Operator) -> Operator {
    let d = coupling.dim();
    let mut m = Array2::zeros((2 * d, 2 * d));
    m.slice_mut(s![d.., ..d]).assign(coupling.matrix());
    m.slice_mut(s![..d, d..]).assign(&dagger(coupling.matrix()));
    Operator::from_matrix_unchecked(m)
}

/// `ℒX = Σ γ(ĉXĉ† − ½{ĉ†ĉ, X})`, applied to any block including coherences.
fn env_apply(env: &Generator, x: &Array2<C64>) -> Result<Array2<C64>> {
    if env.channels().is_empty() && env.hamiltonian().is_none() {
        return Ok(Array2::zeros(x.raw_dim()));
    }
    env.apply(x)
}

/// Full vibronic model with excited-state decay `Γ`.
#[derive(Clone, Debug)]
pub struct VibronicModel {
    coupling: Operator,
    coupling_dag: Array2<C64>,
    gamma: f64,
    kernel: RecoilKernel,
    env: Generator,
}

impl VibronicModel {
    pub fn new(coupling: Operator, gamma: f64, kernel: RecoilKernel, env: &Environment) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("Γ = {gamma} must be positive")));
        }
        let space = FockSpace::new(coupling.dim())?;
        check_dim(coupling.dim(), kernel.dim())?;
        let coupling_dag = dagger(coupling.matrix());
        Ok(Self {
            coupling,
            coupling_dag,
            gamma,
            kernel,
            env: env.generator(space)?,
        })
    }

    pub fn from_drives(space: FockSpace, drives: &[LaserDrive], gamma: f64, kernel: RecoilKernel, env: &Environment) -> Result<Self> {
        coupling_phasor(drives)?;
        Self::new(assemble_coupling(space, drives)?, gamma, kernel, env)
    }

    pub fn dim(&self) -> usize {
        self.coupling.dim()
    }

    pub fn coupling(&self) -> &Operator {
        &self.coupling
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn hamiltonian(&self) -> Operator {
        joint_hamiltonian(&self.coupling)
    }

    /// Block right-hand side.
    pub fn rhs(&self, st: &VibronicState) -> Result<VibronicState> {
        check_dim(self.dim(), st.dim())?;
        let d = self.coupling.matrix();
        let dd = &self.coupling_dag;
        let i = C64::new(0.0, 1.0);
        let r21 = st.rho21();
        let g = self.gamma;

        let mut d11 = (dd.dot(&r21) - st.rho12.dot(d)).mapv(|z| -i * z);
        d11.scaled_add(C64::from(g), &self.kernel.apply(&st.rho22)?);
        d11 += &env_apply(&self.env, &st.rho11)?;

        let mut d22 = (d.dot(&st.rho12) - r21.dot(dd)).mapv(|z| -i * z);
        d22.scaled_add(C64::from(-g), &st.rho22);
        d22 += &env_apply(&self.env, &st.rho22)?;

        let mut d12 = (dd.dot(&st.rho22) - st.rho11.dot(dd)).mapv(|z| -i * z);
        d12.scaled_add(C64::from(-0.5 * g), &st.rho12);
        d12 += &env_apply(&self.env, &st.rho12)?;

        Ok(VibronicState {
            rho11: d11,
            rho12: d12,
            rho22: d22,
        })
    }

    /// The same dynamics as a Lindblad generator on the joint `2D` space:
    /// jumps `√(Γw_q) Â₁₂ ⊗ U_q` and `1 ⊗ ĉ` for each environment channel.
    pub fn joint_generator(&self) -> Result<Generator> {
        let dim = self.dim();
        let mut lower = Array2::<C64>::zeros((2, 2));
        lower[[0, 1]] = ONE;
        let lower = Operator::from_matrix_unchecked(lower);
        let id2 = Operator::identity(FockSpace::new(2)?);
        let mut gen = Generator::new(2 * dim).with_hamiltonian(self.hamiltonian())?;
        for (w, u) in self.kernel.terms() {
            let jump = lower.kron(&Operator::from_matrix_unchecked(u.clone()));
            gen.push(LindbladChannel::new(self.gamma * w, jump)?)?;
        }
        for ch in self.env.channels() {
            gen.push(LindbladChannel::new(ch.rate(), id2.kron(ch.jump()))?)?;
        }
        Ok(gen)
    }

    pub fn propagate(&self, initial: &VibronicState, grid: &[f64], opts: &PropagationOptions) -> Result<VibronicTrajectory> {
        check_dim(self.dim(), initial.dim())?;
        validate_grid(grid)?;
        let mut traj = VibronicTrajectory::default();
        let stats = DormandPrince::new(opts.tol).integrate(
            |_, y: &Array3<C64>| Ok(self.rhs(&VibronicState::unpack(y))?.pack()),
            initial.pack(),
            grid,
            |_, t, y| {
                let st = VibronicState::unpack(y);
                let (_, drift, min_eig) = audit_output(&st.joint(), t, opts)?;
                traj.times.push(t);
                traj.excited.push(st.excited_population());
                traj.motional.push(DensityMatrix::from_matrix_unchecked(hermitize(&st.motional())));
                traj.trace_drift.push(drift);
                traj.min_eigenvalues.push(min_eig);
                traj.audit.record(drift, min_eig);
                traj.last = Some(st);
                Ok(())
            },
        )?;
        traj.stats = stats;
        Ok(traj)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VibronicTrajectory {
    pub times: Vec<f64>,
    /// `Tr_el ρ(t)`.
    pub motional: Vec<DensityMatrix>,
    /// `Tr ρ₂₂(t)`.
    pub excited: Vec<f64>,
    pub trace_drift: Vec<f64>,
    /// Of the joint `2D×2D` state.
    pub min_eigenvalues: Vec<f64>,
    pub audit: Audit,
    pub stats: StepStats,
    pub last: Option<VibronicState>,
}

/// Leading adiabatic coherence `−(2i/Γ)(D̂†ρ₂₂ − ρ₁₁D̂†)`.
pub fn adiabatic_rho12(st: &VibronicState, coupling: &Operator, gamma: f64) -> Result<Array2<C64>> {
    check_dim(st.dim(), coupling.dim())?;
    let dd = dagger(coupling.matrix());
    let x = dd.dot(&st.rho22) - st.rho11.dot(&dd);
    let f = C64::new(0.0, -2.0 / gamma);
    Ok(x.mapv(|z| z * f))
}

/// Adiabatically reduced motional model:
/// `Γ_eng[recoil(d̂ρd̂†) − ½{d̂†d̂, ρ}] + ℒρ`, i.e. the engineered dissipator with
/// the recoil correction `−Γ(ρ₂₂ − ρ̄₂₂)` closed by `ρ₂₂ ≈ (4g²/Γ²) d̂ρd̂†`.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    d: Operator,
    gamma_eng: f64,
    kernel: RecoilKernel,
    generator: Generator,
}

impl ReducedModel {
    pub fn new(d: Operator, gamma_eng: f64, kernel: RecoilKernel, env: &Environment) -> Result<Self> {
        let space = FockSpace::new(d.dim())?;
        check_dim(d.dim(), kernel.dim())?;
        let mut generator = Generator::new(d.dim());
        if kernel.is_identity() {
            generator.push(LindbladChannel::new(gamma_eng, d.clone())?)?;
        } else {
            for (w, u) in kernel.terms() {
                let jump = Operator::from_matrix_unchecked(u.dot(d.matrix()));
                generator.push(LindbladChannel::new(gamma_eng * w, jump)?)?;
            }
        }
        for ch in env.channels(space)? {
            generator.push(ch)?;
        }
        Ok(Self {
            d,
            gamma_eng,
            kernel,
            generator,
        })
    }

    /// Uses the operator the lasers realize, when there are lasers.
    pub fn from_dissipator(diss: &EngineeredDissipator, kernel: RecoilKernel, env: &Environment) -> Result<Self> {
        Self::new(diss.realized_d()?, diss.gamma_eng, kernel, env)
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn d(&self) -> &Operator {
        &self.d
    }

    pub fn gamma_eng(&self) -> f64 {
        self.gamma_eng
    }

    pub fn rhs(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        self.generator.apply(rho)
    }

    /// `(Γ_eng/2)(2d̂ρd̂† − d̂†d̂ρ − ρd̂†d̂)`.
    pub fn engineered_term(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let dm = self.d.matrix();
        let dd = dagger(dm);
        let k = dd.dot(dm);
        let mut out = dm.dot(rho).dot(&dd).mapv(|z| z * self.gamma_eng);
        out.scaled_add(C64::from(-0.5 * self.gamma_eng), &(k.dot(rho) + rho.dot(&k)));
        Ok(out)
    }

    /// `−Γ(ρ₂₂ − ρ̄₂₂) = Γ_eng[recoil(d̂ρd̂†) − d̂ρd̂†]`.
    pub fn recoil_term(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let dm = self.d.matrix();
        let sigma = dm.dot(rho).dot(&dagger(dm));
        let moved = self.kernel.apply(&sigma)?;
        Ok((moved - sigma).mapv(|z| z * self.gamma_eng))
    }

    /// Effective recoil rate relative to the engineered rate `Γ_eng/2`:
    /// `‖R(ρ)‖ / ((Γ_eng/2)‖2x̂σx̂ − x̂²σ − σx̂²‖)` with `σ = d̂ρd̂†`. For small `η`
    /// the recoil term is `η²⟨s²⟩(Γ_eng/2)(2x̂σx̂ − x̂²σ − σx̂²)`, so this
    /// tends to `η²⟨s²⟩`, i.e. `2η²/5` for the dipole pattern.
    pub fn recoil_rate_ratio(&self, rho: &Array2<C64>) -> Result<f64> {
        let r = self.recoil_term(rho)?;
        let dm = self.d.matrix();
        let sigma = dm.dot(rho).dot(&dagger(dm));
        let x = Operator::position(FockSpace::new(self.d.dim())?).into_matrix();
        let x2 = x.dot(&x);
        let diff = x.dot(&sigma).dot(&x).mapv(|z| z * 2.0) - x2.dot(&sigma) - sigma.dot(&x2);
        let denom = 0.5 * self.gamma_eng * frob(&diff);
        Ok(frob(&r) / denom)
    }

    /// Plain norm ratio `‖R(ρ)‖ / ‖(Γ_eng/2)(2d̂ρd̂† − …)‖`; reported alongside
    /// the rate ratio but ill-conditioned near a dark steady state.
    pub fn recoil_norm_ratio(&self, rho: &Array2<C64>) -> Result<f64> {
        Ok(frob(&self.recoil_term(rho)?) / frob(&self.engineered_term(rho)?))
    }
}

fn frob(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Reduced-model right-hand side for a one-off evaluation.
pub fn reduced_rhs(rho: &DensityMatrix, diss: &EngineeredDissipator, kernel: &RecoilKernel, env: &Environment) -> Result<Array2<C64>> {
    ReducedModel::from_dissipator(diss, kernel.clone(), env)?.rhs(rho.matrix())
}

/// Full-model right-hand side for a one-off evaluation.
pub fn vibronic_rhs(st: &VibronicState, coupling: &Operator, gamma: f64, kernel: &RecoilKernel, env: &Environment) -> Result<VibronicState> {
    VibronicModel::new(coupling.clone(), gamma, kernel.clone(), env)?.rhs(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Ket;
    use crate::invariants::{random_density_matrix, random_operator};
    use crate::liouvillian::NULL_SPACE_TOLERANCE;
    use crate::pointer::{qubit_drive, LaserDrive, Sideband};
    use proptest::prelude::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn sp(d: usize) -> FockSpace {
        FockSpace::new(d).unwrap()
    }

    fn r2() -> C64 {
        C64::from(1.0 / 2f64.sqrt())
    }

    fn tr(m: &Array2<C64>) -> C64 {
        m.diag().iter().sum()
    }

    #[test]
    fn gauss_legendre_rules() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact for degree 31
        let m30: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(30)).sum();
        assert!((m30 - 2.0 / 31.0).abs() < 1e-14);
        let (x3, w3) = gauss_legendre(3);
        assert!((x3[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((w3[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn angular_normalization() {
        let (x, w) = gauss_legendre(16);
        for dist in [
            AngularDistribution::Dipole,
            AngularDistribution::Isotropic,
            AngularDistribution::Tabulated {
                s: vec![-1.0, 0.0, 1.0],
                w: vec![2.0, 1.0, 2.0],
            },
        ] {
            let integral: f64 = if matches!(dist, AngularDistribution::Tabulated { .. }) {
                // the interpolant is piecewise linear: trapezoid on its knots is exact
                [-1.0, 0.0, 1.0].windows(2).map(|p: &[f64]| 0.5 * (p[1] - p[0]) * (dist.density(p[0]) + dist.density(p[1]))).sum()
            } else {
                x.iter().zip(&w).map(|(s, q)| q * dist.density(*s)).sum()
            };
            assert!((integral - 1.0).abs() < 1e-14, "{dist:?}: {integral}");
        }
        let second: f64 = x.iter().zip(&w).map(|(s, q)| q * s * s * 0.375 * (1.0 + s * s)).sum();
        assert!((second - 0.4).abs() < 1e-14);
        assert!(AngularDistribution::Tabulated { s: vec![0.0, 1.0], w: vec![1.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn recoil_identity_at_zero_eta() {
        let mut rng = StdRng::seed_from_u64(1);
        let rho = random_density_matrix(&mut rng, 6);
        let k = RecoilKernel::new(sp(6), 0.0, &AngularDistribution::Dipole).unwrap();
        assert_eq!(recoil_map(rho.matrix(), &k).unwrap(), *rho.matrix());
    }

    #[test]
    fn recoil_heats_vacuum() {
        let space = sp(30);
        let eta = 0.25;
        let k = RecoilKernel::new(space, eta, &AngularDistribution::Dipole).unwrap();
        let vac = DensityMatrix::pure(&Ket::basis(space, 0).unwrap());
        let out = recoil_map(vac.matrix(), &k).unwrap();
        assert!((tr(&out) - ONE).norm() < 1e-12);
        let n = Operator::number(space);
        let mean = tr(&n.matrix().dot(&out)).re;
        // ⟨0|e^{-iηsx} n e^{iηsx}|0⟩ = η²s² exactly
        assert!((mean - eta * eta * 0.4).abs() < 1e-12, "{mean}");
    }

    #[test]
    fn recoil_is_positive_trace_preserving() {
        let mut rng = StdRng::seed_from_u64(2);
        let k = RecoilKernel::new(sp(12), 0.3, &AngularDistribution::Dipole).unwrap();
        for _ in 0..10 {
            let rho = random_density_matrix(&mut rng, 12);
            let out = k.apply(rho.matrix()).unwrap();
            assert!((tr(&out) - ONE).norm() < 1e-10);
            assert!(DensityMatrix::new(hermitize(&out)).is_ok());
        }
    }

    #[test]
    fn recoil_populations_change_at_second_order() {
        let mut rng = StdRng::seed_from_u64(4);
        let rho = random_density_matrix(&mut rng, 10);
        let mut last = f64::INFINITY;
        for eta in [0.1, 0.05, 0.025] {
            let k = RecoilKernel::new(sp(10), eta, &AngularDistribution::Dipole).unwrap();
            let out = k.apply(rho.matrix()).unwrap();
            let change = out
                .diag()
                .iter()
                .zip(rho.matrix().diag())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
            if last.is_finite() {
                let ratio = last / change;
                assert!((3.5..4.5).contains(&ratio), "{ratio}");
            }
            last = change;
        }
    }

    #[test]
    fn quadrature_guard_trips_on_rough_tables() {
        let rough = AngularDistribution::Tabulated {
            s: vec![-1.0, -0.1, 0.1, 1.0],
            w: vec![0.0, 0.0, 5.0, 0.0],
        };
        let r = RecoilKernel::new(sp(30), 0.9, &rough);
        assert!(matches!(r, Err(Error::QuadratureNotConverged { .. })));
    }

    #[test]
    fn environment_channel_sets() {
        let space = sp(6);
        assert!(Environment::None.channels(space).unwrap().is_empty());
        let t0 = Environment::Thermal { gamma: 0.3, n_thermal: 0.0 }.channels(space).unwrap();
        assert_eq!(t0.len(), 1);
        assert_eq!(t0[0].rate(), 0.3);
        let t = Environment::Thermal { gamma: 0.3, n_thermal: 2.0 }.channels(space).unwrap();
        assert!((t[0].rate() - 0.9).abs() < 1e-15 && (t[1].rate() - 0.6).abs() < 1e-15);
        assert!(matches!(
            Environment::Thermal { gamma: -1.0, n_thermal: 1.0 }.channels(space),
            Err(Error::NegativeRate { .. })
        ));
        assert!(Environment::RandomField { lambda: -0.1 }.channels(space).is_err());
    }

    #[test]
    fn random_field_heating_rate() {
        let space = sp(20);
        let lambda = 0.37;
        let gen = Environment::RandomField { lambda }.generator(space).unwrap();
        let n = Operator::number(space);
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..5 {
            // states well inside the truncation
            let amps: Vec<C64> = (0..8).map(|_| C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.0)).collect();
            let rho = DensityMatrix::pure(&Ket::from_amplitudes(space, &amps).unwrap());
            let rate = tr(&n.matrix().dot(&gen.apply(rho.matrix()).unwrap())).re;
            assert!((rate - 2.0 * lambda).abs() < 1e-12);
        }
    }

    fn qubit_model(d: usize, omega1: f64, eta: f64, recoil: f64, env: &Environment) -> (VibronicModel, EngineeredDissipator) {
        let space = sp(d);
        let diss = qubit_drive(space, r2(), r2(), eta, omega1, 1.0).unwrap();
        let k = RecoilKernel::new(space, recoil, &AngularDistribution::Dipole).unwrap();
        let m = VibronicModel::from_drives(space, &diss.drives, 1.0, k, env).unwrap();
        (m, diss)
    }

    #[test]
    fn interaction_hamiltonian_shape() {
        let space = sp(6);
        let drive = LaserDrive::new(C64::from(0.5), Sideband::Red(1), 0.2, "").unwrap();
        let h = interaction_hamiltonian(std::slice::from_ref(&drive), space).unwrap();
        assert!(h.hermiticity_error() < 1e-12);
        let m = h.matrix();
        assert!(max_abs(&m.slice(s![..6, ..6]).to_owned()) == 0.0);
        let lower = m.slice(s![6.., ..6]).to_owned();
        assert!(max_abs(&(&lower - drive.coupling_term(space).unwrap().matrix())) == 0.0);
        let carrier = LaserDrive::new(ONE, Sideband::Carrier, 0.0, "").unwrap();
        assert!(matches!(interaction_hamiltonian(&[carrier], space), Err(Error::InconsistentScale(_))));
    }

    #[test]
    fn qubit_lasers_match_abstract_profile() {
        let (m, diss) = qubit_model(10, 0.5, 0.2, 0.0, &Environment::None);
        let z = coupling_phasor(&diss.drives).unwrap();
        let scaled = m.coupling().scaled(ONE / z);
        assert!(max_abs(&(scaled.matrix() - diss.d.matrix())) < 1e-14);
    }

    #[test]
    fn zero_coupling_is_static() {
        let space = sp(4);
        let m = VibronicModel::new(Operator::zeros(4), 1.0, RecoilKernel::identity(space), &Environment::None).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let st = VibronicState::ground(&random_density_matrix(&mut rng, 4));
        let out = m.rhs(&st).unwrap();
        assert!(max_abs(&out.rho11) == 0.0 && max_abs(&out.rho12) == 0.0 && max_abs(&out.rho22) == 0.0);
    }

    #[test]
    fn spontaneous_emission_bookkeeping() {
        let space = sp(5);
        let k = RecoilKernel::new(space, 0.2, &AngularDistribution::Dipole).unwrap();
        let m = VibronicModel::new(Operator::zeros(5), 2.0, k, &Environment::None).unwrap();
        let mut rng = StdRng::seed_from_u64(10);
        let mut st = VibronicState::zeros(5);
        st.rho22 = random_density_matrix(&mut rng, 5).into_matrix();
        let out = m.rhs(&st).unwrap();
        assert!((tr(&out.rho22) + C64::from(2.0)).norm() < 1e-12);
        assert!(out.trace().norm() < 1e-12);
    }

    #[test]
    fn block_rhs_matches_joint_generator() {
        let env = Environment::Thermal { gamma: 0.05, n_thermal: 1.5 };
        let (m, _) = qubit_model(6, 0.5, 0.2, 0.25, &env);
        let gen = m.joint_generator().unwrap();
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..5 {
            let joint = random_density_matrix(&mut rng, 12);
            let st = VibronicState::from_joint(joint.matrix()).unwrap();
            let a = m.rhs(&st).unwrap().joint();
            let b = gen.apply(joint.matrix()).unwrap();
            assert!(max_abs(&(&a - &b)) < 1e-12);
        }
    }

    #[test]
    fn adiabatic_coherence_two_level_steady_state() {
        // η = 0 carrier only: a driven two-level atom for every motional level
        let space = sp(2);
        let g = 0.3;
        let carrier = Operator::identity(space).scaled(C64::from(g));
        let m = VibronicModel::new(carrier.clone(), 1.0, RecoilKernel::identity(space), &Environment::None).unwrap();
        let gen = m.joint_generator().unwrap();
        // restrict to motional |0⟩ by starting there: the motional label is conserved
        let ss = gen.steady_states(NULL_SPACE_TOLERANCE).unwrap();
        assert!(ss.is_degenerate());
        let mut start = VibronicState::zeros(2);
        start.rho11[[0, 0]] = ONE;
        let t_end = 40.0;
        let traj = m
            .propagate(&start, &[0.0, t_end], &PropagationOptions::default())
            .unwrap();
        let st = traj.last.unwrap();
        let p2 = st.rho22[[0, 0]].re;
        assert!((p2 - g * g / (2.0 * g * g + 0.25)).abs() < 1e-8, "{p2}");
        let adi = adiabatic_rho12(&st, &carrier, 1.0).unwrap();
        assert!(max_abs(&(&adi - &st.rho12)) < 1e-8);
        assert!(adiabatic_rho12(&VibronicState::zeros(2), &carrier, 1.0).unwrap().iter().all(|z| *z == crate::hilbert::ZERO));
    }

    #[test]
    fn reduced_model_is_plain_decay_for_lowering() {
        let space = sp(8);
        let a = Operator::annihilation(space);
        let red = ReducedModel::new(a.clone(), 0.7, RecoilKernel::identity(space), &Environment::None).unwrap();
        let plain = Generator::new(8).with_channel(LindbladChannel::new(0.7, a).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        let rho = random_density_matrix(&mut rng, 8);
        assert!(max_abs(&(red.rhs(rho.matrix()).unwrap() - plain.apply(rho.matrix()).unwrap())) < 1e-14);
    }

    #[test]
    fn reduced_model_decomposes_into_engineered_plus_recoil() {
        let space = sp(10);
        let mut rng = StdRng::seed_from_u64(14);
        let d = random_operator(&mut rng, 10);
        let k = RecoilKernel::new(space, 0.25, &AngularDistribution::Dipole).unwrap();
        let red = ReducedModel::new(d, 0.3, k, &Environment::None).unwrap();
        let rho = random_density_matrix(&mut rng, 10);
        let sum = red.engineered_term(rho.matrix()).unwrap() + red.recoil_term(rho.matrix()).unwrap();
        assert!(max_abs(&(sum - red.rhs(rho.matrix()).unwrap())) < 1e-12);
    }

    #[test]
    fn recoil_rate_tends_to_second_moment() {
        let space = sp(30);
        let mut rng = StdRng::seed_from_u64(15);
        let amps: Vec<C64> = (0..4).map(|_| C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.3)).collect();
        let rho = DensityMatrix::pure(&Ket::from_amplitudes(space, &amps).unwrap());
        for eta in [0.05, 0.1] {
            let k = RecoilKernel::new(space, eta, &AngularDistribution::Dipole).unwrap();
            let red = ReducedModel::new(Operator::annihilation(space), 1.0, k, &Environment::None).unwrap();
            let ratio = red.recoil_rate_ratio(rho.matrix()).unwrap();
            let want = 0.4 * eta * eta;
            assert!((ratio / want - 1.0).abs() < 5.0 * eta * eta, "η={eta}: {ratio} vs {want}");
        }
    }

    #[test]
    fn short_full_propagation_keeps_invariants() {
        let env = Environment::Thermal { gamma: 0.002, n_thermal: 1.0 };
        let (m, diss) = qubit_model(8, 0.5, 0.2, 0.25, &env);
        let start = VibronicState::ground(&DensityMatrix::pure(&diss.target));
        let grid: Vec<f64> = (0..=5).map(|k| 4.0 * k as f64).collect();
        let traj = m.propagate(&start, &grid, &PropagationOptions::default()).unwrap();
        assert!(traj.audit.max_trace_drift < 1e-7);
        assert!(traj.audit.min_eigenvalue > -1e-6);
        let g = diss.g.unwrap();
        assert!(traj.excited.iter().all(|p| *p <= 8.0 * g * g));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rhs_preserves_trace_and_hermiticity(seed in any::<u64>()) {
            let mut rng = StdRng::seed_from_u64(seed);
            let space = sp(5);
            let coupling = random_operator(&mut rng, 5);
            let k = RecoilKernel::new(space, 0.2, &AngularDistribution::Dipole).unwrap();
            let env = Environment::Thermal { gamma: 0.1, n_thermal: 0.5 };
            let m = VibronicModel::new(coupling.clone(), 1.0, k.clone(), &env).unwrap();
            let joint = random_density_matrix(&mut rng, 10);
            let st = VibronicState::from_joint(joint.matrix()).unwrap();
            let out = m.rhs(&st).unwrap().joint();
            prop_assert!(tr(&out).norm() < 1e-10);
            prop_assert!(max_abs(&(&out - &dagger(&out))) < 1e-10);

            let red = ReducedModel::new(coupling, 0.4, k, &env).unwrap();
            let rho = random_density_matrix(&mut rng, 5);
            let r = red.rhs(rho.matrix()).unwrap();
            prop_assert!(tr(&r).norm() < 1e-10);
            prop_assert!(max_abs(&(&r - &dagger(&r))) < 1e-10);
        }
    }
}
