//! Declarative scenarios: parsing, validation, the design → steady state →
//! propagation pipeline, and the report / time-series artifacts.
//!
//! Scenario files give rates in MHz and times in μs. Internally every rate is
//! divided by the excited-state decay rate `Γ`, so the simulation runs with
//! `Γ = 1` and time `τ = Γt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::hilbert::{FockSpace, Ket, Operator};
use crate::liouvillian::{fidelity, Audit, DensityMatrix, Generator, PropagationOptions, Trajectory, NULL_SPACE_TOLERANCE};
use crate::pointer::{
    cat_dissipator, default_etas, qubit_drive, squeeze_dissipator, superposition_drive, EngineeredDissipator, LaserDrive,
    Sideband,
};
use crate::vibronic::{AngularDistribution, Environment, RecoilKernel, ReducedModel, VibronicModel, VibronicState, VibronicTrajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Start from the target and watch it survive.
    #[default]
    Protect,
    /// Start from the motional ground state and watch the target form.
    Prepare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Qubit { c0: C64, c1: C64 },
    Phase { n: usize, phi: f64 },
    Cat { alpha: C64 },
    Squeezed { r: f64 },
    Amplitudes { amplitudes: Vec<C64> },
}

impl TargetSpec {
    fn mean_photons(&self) -> f64 {
        match self {
            TargetSpec::Qubit { c0, c1 } => c1.norm_sqr() / (c0.norm_sqr() + c1.norm_sqr()),
            TargetSpec::Phase { n, .. } => *n as f64 / 2.0,
            TargetSpec::Cat { alpha } => alpha.norm_sqr(),
            TargetSpec::Squeezed { r } => r.sinh().powi(2),
            TargetSpec::Amplitudes { amplitudes } => {
                let total: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
                amplitudes.iter().enumerate().map(|(n, z)| n as f64 * z.norm_sqr()).sum::<f64>() / total.max(f64::MIN_POSITIVE)
            }
        }
    }

    fn amplitudes(&self) -> Option<Vec<C64>> {
        match self {
            TargetSpec::Qubit { c0, c1 } => Some(vec![*c0, *c1]),
            TargetSpec::Phase { n, phi } => Some((0..=*n).map(|k| C64::from_polar(1.0, k as f64 * phi)).collect()),
            TargetSpec::Amplitudes { amplitudes } => Some(amplitudes.clone()),
            _ => None,
        }
    }

    pub fn ket(&self, space: FockSpace) -> Result<Ket> {
        match self {
            TargetSpec::Cat { alpha } => Ket::cat_plus(space, *alpha),
            TargetSpec::Squeezed { r } => Ket::squeezed_vacuum(space, *r),
            TargetSpec::Phase { n, phi } => Ket::phase_state(space, *n, *phi),
            other => Ket::from_amplitudes(space, &other.amplitudes().expect("amplitude target")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKeyword {
    /// Inverse design from the target.
    Auto,
    /// No engineered reservoir: environment only.
    None,
}

/// A laser as written in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDrive {
    pub rabi_mhz: C64,
    pub sideband: Sideband,
    pub eta: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriveSpec {
    Keyword(DriveKeyword),
    Explicit(Vec<FileDrive>),
}

impl Default for DriveSpec {
    fn default() -> Self {
        DriveSpec::Keyword(DriveKeyword::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physical {
    /// Excited-state decay rate Γ.
    pub gamma_mhz: f64,
    /// Trap frequency; documentation only (resolved sidebands are assumed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_mhz: Option<f64>,
    pub eta: f64,
    pub omega1_mhz: f64,
    /// Carrier Lamb-Dicke parameter for multi-laser designs; defaults to `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_x: Option<f64>,
    /// Red-sideband projections for multi-laser designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    /// Engineered rate for operator-level designs (cat); defaults to η²Ω₁²/Γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_eng_mhz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    #[default]
    None,
    Thermal { gamma_mhz: f64, n_thermal: f64 },
    RandomField { lambda_mhz: f64 },
}

impl EnvironmentSpec {
    /// In units of Γ.
    fn internal(&self, gamma_mhz: f64) -> Environment {
        match *self {
            EnvironmentSpec::None => Environment::None,
            EnvironmentSpec::Thermal { gamma_mhz: g, n_thermal } => Environment::Thermal {
                gamma: g / gamma_mhz,
                n_thermal,
            },
            EnvironmentSpec::RandomField { lambda_mhz } => Environment::RandomField {
                lambda: lambda_mhz / gamma_mhz,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Full,
    Reduced,
    Both,
}

impl ModelChoice {
    fn full(self) -> bool {
        matches!(self, ModelChoice::Full | ModelChoice::Both)
    }

    fn reduced(self) -> bool {
        matches!(self, ModelChoice::Reduced | ModelChoice::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub t_max_us: f64,
    pub points: usize,
}

impl Grid {
    /// Output times in μs.
    pub fn times_us(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![0.0];
        }
        let last = (self.points - 1) as f64;
        (0..self.points).map(|k| self.t_max_us * k as f64 / last).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoilSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Defaults to the physical `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub distribution: AngularDistribution,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Target,
    Vacuum,
    Fock { n: usize },
    Coherent { alpha: C64 },
    Cat { alpha: C64 },
    Amplitudes { amplitudes: Vec<C64> },
    /// Normalized on construction.
    Thermal { n_thermal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Report,
    Timeseries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub target: TargetSpec,
    #[serde(default)]
    pub drives: DriveSpec,
    pub physical: Physical,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelChoice>,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recoil: Option<RecoilSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
    /// Defaults filled in by [`parse_scenario`]; ignored on input.
    #[serde(default, skip_deserializing)]
    pub defaults_applied: Vec<String>,
}

/// Ceiling for the automatic truncation search.
const MAX_DEFAULT_DIM: usize = 120;

fn default_outputs() -> Vec<Output> {
    vec![Output::Report, Output::Timeseries]
}

impl Scenario {
    pub fn model(&self) -> ModelChoice {
        self.model.unwrap_or(ModelChoice::Both)
    }

    pub fn truncation(&self) -> usize {
        self.truncation.unwrap_or(20)
    }

    pub fn recoil(&self) -> RecoilSpec {
        self.recoil.clone().unwrap_or(RecoilSpec {
            enabled: true,
            eta: Some(self.physical.eta),
            distribution: AngularDistribution::Dipole,
        })
    }

    pub fn initial(&self) -> InitialState {
        self.initial.clone().unwrap_or(InitialState::Target)
    }

    fn target_ket(&self, dim: usize) -> Result<Ket> {
        self.target.ket(FockSpace::new(dim)?)
    }

    fn is_cat(&self) -> bool {
        matches!(self.target, TargetSpec::Cat { .. })
    }

    fn has_lasers(&self) -> bool {
        match &self.drives {
            DriveSpec::Keyword(DriveKeyword::None) => false,
            DriveSpec::Keyword(DriveKeyword::Auto) => !self.is_cat(),
            DriveSpec::Explicit(list) => !list.is_empty(),
        }
    }

    /// Replaces the truncation (command-line override) and revalidates.
    pub fn with_truncation(mut self, dim: usize) -> Result<Self> {
        self.truncation = Some(dim);
        self.defaults_applied.retain(|d| !d.starts_with("truncation"));
        self.defaults_applied.push(format!("truncation = {dim} (override)"));
        self.validate()?;
        Ok(self)
    }

    fn apply_defaults(&mut self) {
        let mut notes = Vec::new();
        if self.truncation.is_none() {
            let mut d = FockSpace::default_dim(self.target.mean_photons());
            let formula = d;
            // the formula undershoots for long-tailed targets (squeezed vacuum)
            while d < MAX_DEFAULT_DIM && matches!(self.target_ket(d), Err(Error::Truncation { .. })) {
                d += 1;
            }
            self.truncation = Some(d);
            if d == formula {
                notes.push(format!("truncation = {d}"));
            } else {
                notes.push(format!("truncation = {d} (raised from {formula} to hold the target)"));
            }
        }
        if self.model.is_none() {
            let m = if self.has_lasers() { ModelChoice::Both } else { ModelChoice::Reduced };
            self.model = Some(m);
            notes.push(format!("model = {}", serde_json::to_string(&m).unwrap_or_default().trim_matches('"')));
        }
        if self.recoil.is_none() {
            self.recoil = Some(RecoilSpec {
                enabled: true,
                eta: Some(self.physical.eta),
                distribution: AngularDistribution::Dipole,
            });
            notes.push(format!("recoil = dipole W(s), η = {}", self.physical.eta));
        } else if let Some(r) = self.recoil.as_mut() {
            if r.eta.is_none() {
                r.eta = Some(self.physical.eta);
                notes.push(format!("recoil η = {}", self.physical.eta));
            }
        }
        if self.initial.is_none() {
            let init = match self.mode {
                Mode::Protect => InitialState::Target,
                Mode::Prepare => InitialState::Vacuum,
            };
            notes.push(format!("initial = {:?}", init).to_lowercase());
            self.initial = Some(init);
        }
        self.defaults_applied.extend(notes);
    }

    pub fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return v(format!("name '{}' must be non-empty and use only [A-Za-z0-9_-]", self.name));
        }
        let p = &self.physical;
        if !(p.gamma_mhz > 0.0 && p.gamma_mhz.is_finite()) {
            return v(format!("physical.gamma_mhz must be positive, got {}", p.gamma_mhz));
        }
        if !(p.omega1_mhz > 0.0 && p.omega1_mhz.is_finite()) {
            return v(format!("physical.omega1_mhz must be positive, got {}", p.omega1_mhz));
        }
        if !(p.eta > 0.0 && p.eta < 1.0) {
            return v(format!("physical.eta must lie in (0, 1), got {}", p.eta));
        }
        if let Some(g) = p.gamma_eng_mhz {
            if !(g > 0.0 && g.is_finite()) {
                return v(format!("physical.gamma_eng_mhz must be positive, got {g}"));
            }
        }
        if let Some(nu) = p.nu_mhz {
            if !(nu > 0.0) {
                return v(format!("physical.nu_mhz must be positive, got {nu}"));
            }
        }
        match self.environment {
            EnvironmentSpec::None => {}
            EnvironmentSpec::Thermal { gamma_mhz, n_thermal } => {
                if !(gamma_mhz >= 0.0 && gamma_mhz.is_finite()) {
                    return v(format!("environment.gamma_mhz must be non-negative, got {gamma_mhz}"));
                }
                if !(n_thermal >= 0.0 && n_thermal.is_finite()) {
                    return v(format!("environment.n_thermal must be non-negative, got {n_thermal}"));
                }
            }
            EnvironmentSpec::RandomField { lambda_mhz } => {
                if !(lambda_mhz >= 0.0 && lambda_mhz.is_finite()) {
                    return v(format!("environment.lambda_mhz must be non-negative, got {lambda_mhz}"));
                }
            }
        }
        if !(self.grid.t_max_us > 0.0 && self.grid.t_max_us.is_finite()) {
            return v(format!("grid.t_max_us must be positive, got {}", self.grid.t_max_us));
        }
        if self.grid.points == 0 {
            return v("grid.points must be at least 1".into());
        }
        let dim = self.truncation();
        if dim < 2 {
            return v(format!("truncation must be at least 2, got {dim}"));
        }
        if let Some(amps) = self.target.amplitudes() {
            if amps.len() > dim {
                return v(format!("target has {} levels but truncation is {dim}", amps.len()));
            }
        }
        if let TargetSpec::Squeezed { r } = self.target {
            if !(r >= 0.0) {
                return v(format!("target.r must be non-negative, got {r}"));
            }
        }
        let model = self.model();
        if model.full() && self.is_cat() {
            return v(
                "cat targets cannot use the full vibronic model: realizing this operator with a finite number \
                 of laser beams is an open problem; use model = reduced"
                    .into(),
            );
        }
        if model.full() && !self.has_lasers() {
            return v("model = full/both needs laser drives (explicit or auto-designable)".into());
        }
        if let DriveSpec::Explicit(list) = &self.drives {
            for (k, d) in list.iter().enumerate() {
                if !(0.0..1.0).contains(&d.eta) || (d.sideband != Sideband::Carrier && d.eta == 0.0) {
                    return v(format!("drives[{k}].eta = {} is not valid for {:?}", d.eta, d.sideband));
                }
            }
        }
        if let Some(r) = &self.recoil {
            if let Some(eta) = r.eta {
                if !(0.0..1.0).contains(&eta) {
                    return v(format!("recoil.eta must lie in [0, 1), got {eta}"));
                }
            }
            r.distribution.validate().map_err(|e| Error::Validation(format!("recoil.distribution: {e}")))?;
        }
        Ok(())
    }
}

/// Parses and validates a JSON scenario, filling in defaults (listed in
/// `defaults_applied`).
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse {
            path: if path == "." { origin.to_string() } else { format!("{origin}:{path}") },
            message: e.into_inner().to_string(),
        }
    })?;
    s.apply_defaults();
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text, &path.display().to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct DriveRow {
    pub label: String,
    pub sideband: Sideband,
    pub eta: f64,
    pub rabi_mhz: C64,
    /// `Ω_n / Ω_ref` with the first red sideband as reference.
    pub ratio: C64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipatorSummary {
    pub drives: Vec<DriveRow>,
    pub gamma_eng_mhz: f64,
    pub gamma_eng_over_gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_over_gamma: Option<f64>,
    pub dark_residual: f64,
    pub dark_relative_residual: f64,
    pub null_dim: usize,
    /// Residual of the laser-assembled operator on the target.
    pub realized_relative_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadySummary {
    pub target_fidelity: f64,
    pub multiplicity: usize,
    pub spectral_gap_mhz: f64,
    pub smallest_nonnull_singular_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeseries: Option<String>,
    pub final_fidelity: f64,
    pub final_target_fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_excited_population: Option<f64>,
    pub audit: AuditSummary,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AuditSummary {
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
}

impl From<Audit> for AuditSummary {
    fn from(a: Audit) -> Self {
        Self {
            max_trace_drift: a.max_trace_drift,
            min_eigenvalue: a.min_eigenvalue,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub max_trace_distance: f64,
    pub g_over_gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub truncation: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dissipator: Option<DissipatorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_state: Option<SteadySummary>,
    pub models: Vec<ModelSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    pub audit: AuditSummary,
}

/// Fidelity time series in file units.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub t_us: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub target_fidelity: Vec<f64>,
    /// `Tr ρ₂₂`, full model only.
    pub excited: Option<Vec<f64>>,
    pub trace_drift: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.t_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_us.is_empty()
    }

    /// Comma-separated, fixed `{:.12e}` formatting, newline-terminated rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,fidelity,target_fidelity");
        if self.excited.is_some() {
            out.push_str(",excited_population");
        }
        out.push_str(",trace_drift,min_eigenvalue\n");
        for k in 0..self.len() {
            let _ = write!(out, "{:.12e},{:.12e},{:.12e}", self.t_us[k], self.fidelity[k], self.target_fidelity[k]);
            if let Some(e) = &self.excited {
                let _ = write!(out, ",{:.12e}", e[k]);
            }
            let _ = writeln!(out, ",{:.12e},{:.12e}", self.trace_drift[k], self.min_eigenvalue[k]);
        }
        out
    }
}

pub fn emit_timeseries(series: &TimeSeries, path: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    fs::write(path, series.to_csv())?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Artifacts go to `out_dir/<scenario name>/`; nothing is written if `None`.
    pub out_dir: Option<PathBuf>,
}

/// Everything a run produced, including in-memory trajectories.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub dissipator: Option<EngineeredDissipator>,
    pub reduced: Option<Trajectory>,
    pub full: Option<VibronicTrajectory>,
    pub reduced_series: Option<TimeSeries>,
    pub full_series: Option<TimeSeries>,
}

/// Converted quantities shared by the pipeline stages.
struct Setup {
    space: FockSpace,
    target: Ket,
    env: Environment,
    kernel: RecoilKernel,
}

fn setup(s: &Scenario) -> Result<Setup> {
    let space = FockSpace::new(s.truncation())?;
    let target = s.target.ket(space)?;
    let env = s.environment.internal(s.physical.gamma_mhz);
    let r = s.recoil();
    let eta = if r.enabled { r.eta.unwrap_or(s.physical.eta) } else { 0.0 };
    let kernel = RecoilKernel::new(space, eta, &r.distribution)?;
    Ok(Setup { space, target, env, kernel })
}

/// Inverse design (or explicit drives) in units of Γ. `None` when the
/// scenario has no engineered reservoir.
pub fn design(s: &Scenario) -> Result<Option<EngineeredDissipator>> {
    let space = FockSpace::new(s.truncation())?;
    let p = &s.physical;
    let omega1 = p.omega1_mhz / p.gamma_mhz;
    let default_eng = p.eta * p.eta * omega1 * omega1;
    match &s.drives {
        DriveSpec::Keyword(DriveKeyword::None) => Ok(None),
        DriveSpec::Explicit(list) if list.is_empty() => Ok(None),
        DriveSpec::Explicit(list) => {
            let drives = list
                .iter()
                .map(|d| LaserDrive::new(d.rabi_mhz / p.gamma_mhz, d.sideband, d.eta, d.label.clone()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(EngineeredDissipator::from_drives(space, drives, 1.0, s.target.ket(space)?)?))
        }
        DriveSpec::Keyword(DriveKeyword::Auto) => {
            let diss = match &s.target {
                TargetSpec::Qubit { c0, c1 } => qubit_drive(space, *c0, *c1, p.eta, omega1, 1.0)?,
                TargetSpec::Squeezed { r } => squeeze_dissipator(space, *r, omega1, p.eta, 1.0)?,
                TargetSpec::Cat { alpha } => {
                    let rate = p.gamma_eng_mhz.map(|g| g / p.gamma_mhz).unwrap_or(default_eng);
                    cat_dissipator(space, *alpha, rate)?
                }
                other => {
                    let amps = other.amplitudes().expect("amplitude target");
                    let n = amps.len() - 1;
                    if n == 0 {
                        let rate = p.gamma_eng_mhz.map(|g| g / p.gamma_mhz).unwrap_or(default_eng);
                        let a = Operator::annihilation(space);
                        EngineeredDissipator::abstract_operator(a, rate, Ket::from_amplitudes(space, &amps)?)?
                    } else {
                        let etas = p.etas.clone().unwrap_or_else(|| default_etas(p.eta, n));
                        superposition_drive(space, &amps, p.eta_x.unwrap_or(p.eta), &etas, omega1, 1.0)?
                    }
                }
            };
            Ok(Some(diss))
        }
    }
}

fn summarize(diss: &EngineeredDissipator, gamma_mhz: f64) -> Result<DissipatorSummary> {
    let reference = diss
        .drives
        .iter()
        .find(|d| d.sideband == Sideband::Red(1))
        .map(|d| d.rabi)
        .unwrap_or(C64::new(1.0, 0.0));
    let drives = diss
        .drives
        .iter()
        .map(|d| DriveRow {
            label: d.label.clone(),
            sideband: d.sideband,
            eta: d.eta,
            rabi_mhz: d.rabi * gamma_mhz,
            ratio: d.rabi / reference,
        })
        .collect();
    let rep = diss.verify()?;
    let realized = crate::pointer::verify_dark_state(&diss.realized_d()?, &diss.target)?;
    Ok(DissipatorSummary {
        drives,
        gamma_eng_mhz: diss.gamma_eng * gamma_mhz,
        gamma_eng_over_gamma: diss.gamma_eng,
        g_over_gamma: diss.g,
        dark_residual: rep.residual,
        dark_relative_residual: rep.relative_residual,
        null_dim: rep.null_dim,
        realized_relative_residual: realized.relative_residual,
        condition_number: diss.condition,
    })
}

fn reduced_generator(diss: Option<&EngineeredDissipator>, st: &Setup) -> Result<Generator> {
    match diss {
        Some(d) => Ok(ReducedModel::from_dissipator(d, st.kernel.clone(), &st.env)?.generator().clone()),
        None => st.env.generator(st.space),
    }
}

fn initial_state(s: &Scenario, st: &Setup) -> Result<DensityMatrix> {
    let space = st.space;
    let ket = match s.initial() {
        InitialState::Target => st.target.clone(),
        InitialState::Vacuum => Ket::basis(space, 0)?,
        InitialState::Fock { n } => Ket::basis(space, n)?,
        InitialState::Coherent { alpha } => Ket::coherent(space, alpha)?,
        InitialState::Cat { alpha } => Ket::cat_plus(space, alpha)?,
        InitialState::Amplitudes { amplitudes } => Ket::from_amplitudes(space, &amplitudes)?,
        InitialState::Thermal { n_thermal } => return DensityMatrix::thermal(space.dim(), n_thermal),
    };
    Ok(DensityMatrix::pure(&ket))
}

fn steady(diss: Option<&EngineeredDissipator>, st: &Setup, gamma_mhz: f64) -> Result<SteadySummary> {
    let gen = reduced_generator(diss, st)?;
    let ss = gen.steady_states(NULL_SPACE_TOLERANCE)?;
    let target = DensityMatrix::pure(&st.target);
    let f = match ss.unique() {
        Some(rho) => fidelity(&target, rho)?,
        // report the best basis element when degenerate
        None => ss
            .states
            .iter()
            .map(|r| fidelity(&target, r))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(SteadySummary {
        target_fidelity: f,
        multiplicity: ss.multiplicity,
        spectral_gap_mhz: gen.spectral_gap()? * gamma_mhz,
        smallest_nonnull_singular_value: ss.smallest_nonnull,
    })
}

/// Design and steady state only.
pub fn steady_scenario(s: &Scenario) -> Result<(Option<DissipatorSummary>, SteadySummary)> {
    let diss = design(s).stage("design")?;
    let st = setup(s).stage("setup")?;
    let summary = diss.as_ref().map(|d| summarize(d, s.physical.gamma_mhz)).transpose().stage("design")?;
    let steady = steady(diss.as_ref(), &st, s.physical.gamma_mhz).stage("steady_state")?;
    Ok((summary, steady))
}

fn series_from(times_us: &[f64], states: &[DensityMatrix], target: &DensityMatrix, drift: &[f64], min_eig: &[f64], excited: Option<&[f64]>) -> Result<TimeSeries> {
    let first = &states[0];
    Ok(TimeSeries {
        t_us: times_us.to_vec(),
        fidelity: states.iter().map(|r| fidelity(first, r)).collect::<Result<_>>()?,
        target_fidelity: states.iter().map(|r| fidelity(target, r)).collect::<Result<_>>()?,
        excited: excited.map(|e| e.to_vec()),
        trace_drift: drift.to_vec(),
        min_eigenvalue: min_eig.to_vec(),
    })
}

pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let gamma_mhz = s.physical.gamma_mhz;
    let diss = design(s).stage("design")?;
    let st = setup(s).stage("setup")?;
    let summary = diss.as_ref().map(|d| summarize(d, gamma_mhz)).transpose().stage("design")?;
    let steady_summary = steady(diss.as_ref(), &st, gamma_mhz).stage("steady_state")?;

    let rho0 = initial_state(s, &st).stage("initial_state")?;
    let target_rho = DensityMatrix::pure(&st.target);
    let times_us = s.grid.times_us();
    let grid: Vec<f64> = times_us.iter().map(|t| t * gamma_mhz).collect();
    let popts = PropagationOptions::default();
    let model = s.model();

    let dir = opts.out_dir.as_ref().map(|d| d.join(&s.name));
    if let Some(d) = &dir {
        fs::create_dir_all(d).stage("write")?;
    }
    let want_series = s.outputs.contains(&Output::Timeseries);
    let mut models = Vec::new();
    let mut audit = Audit::default();

    let mut reduced = None;
    let mut reduced_series = None;
    if model.reduced() {
        let gen = reduced_generator(diss.as_ref(), &st).stage("propagate_reduced")?;
        let traj = gen.propagate(&rho0, &grid, &popts).stage("propagate_reduced")?;
        let series = series_from(&times_us, &traj.states, &target_rho, &traj.trace_drift, &traj.min_eigenvalues, None)
            .stage("propagate_reduced")?;
        let file = write_series(dir.as_deref(), want_series, "timeseries_reduced.csv", &series)?;
        audit.record(traj.audit.max_trace_drift, traj.audit.min_eigenvalue);
        models.push(ModelSummary {
            model: "reduced".into(),
            timeseries: file,
            final_fidelity: *series.fidelity.last().expect("nonempty"),
            final_target_fidelity: *series.target_fidelity.last().expect("nonempty"),
            max_excited_population: None,
            audit: traj.audit.into(),
            steps: traj.stats.accepted,
        });
        reduced = Some(traj);
        reduced_series = Some(series);
    }

    let mut full = None;
    let mut full_series = None;
    if model.full() {
        let d = diss.as_ref().ok_or_else(|| Error::Validation("full model needs drives".into()))?;
        let vm = VibronicModel::from_drives(st.space, &d.drives, 1.0, st.kernel.clone(), &st.env).stage("propagate_full")?;
        let traj = vm
            .propagate(&VibronicState::ground(&rho0), &grid, &popts)
            .stage("propagate_full")?;
        let series = series_from(&times_us, &traj.motional, &target_rho, &traj.trace_drift, &traj.min_eigenvalues, Some(&traj.excited))
            .stage("propagate_full")?;
        let file = write_series(dir.as_deref(), want_series, "timeseries_full.csv", &series)?;
        audit.record(traj.audit.max_trace_drift, traj.audit.min_eigenvalue);
        models.push(ModelSummary {
            model: "full".into(),
            timeseries: file,
            final_fidelity: *series.fidelity.last().expect("nonempty"),
            final_target_fidelity: *series.target_fidelity.last().expect("nonempty"),
            max_excited_population: Some(traj.excited.iter().cloned().fold(0.0, f64::max)),
            audit: traj.audit.into(),
            steps: traj.stats.accepted,
        });
        full = Some(traj);
        full_series = Some(series);
    }

    let comparison = match (&reduced, &full, &diss) {
        (Some(r), Some(f), Some(d)) => {
            let mut worst: f64 = 0.0;
            for (a, b) in r.states.iter().zip(&f.motional) {
                worst = worst.max(a.trace_distance(b).stage("compare")?);
            }
            Some(Comparison {
                max_trace_distance: worst,
                g_over_gamma: d.g.unwrap_or(0.0),
            })
        }
        _ => None,
    };

    let report = Report {
        scenario: s.clone(),
        truncation: st.space.dim(),
        dissipator: summary,
        steady_state: Some(steady_summary),
        models,
        comparison,
        audit: audit.into(),
    };
    if let Some(d) = &dir {
        if s.outputs.contains(&Output::Report) {
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.into())).stage("write")?;
            fs::write(d.join("report.json"), text + "\n").stage("write")?;
        }
    }
    Ok(Outcome {
        report,
        dissipator: diss,
        reduced,
        full,
        reduced_series,
        full_series,
    })
}

fn write_series(dir: Option<&Path>, want: bool, name: &str, series: &TimeSeries) -> Result<Option<String>> {
    match dir {
        Some(d) if want => {
            emit_timeseries(series, &d.join(name)).stage("write")?;
            Ok(Some(name.to_string()))
        }
        _ => Ok(None),
    }
}
