//! Seeded random instances for invariant checks.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::Error;
use crate::hilbert::{dagger, hermitize, max_abs, FockSpace, Operator};
use crate::liouvillian::{DensityMatrix, Generator, LindbladChannel, PropagationOptions, POSITIVITY_TOLERANCE};
use crate::vibronic::{vibronic_rhs, AngularDistribution, Environment, RecoilKernel, ReducedModel, VibronicState};

fn random_matrix<R: Rng>(rng: &mut R, dim: usize) -> Array2<C64> {
    Array2::from_shape_fn((dim, dim), |_| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// `AA†/Tr(AA†)` for a random complex `A`; full rank almost surely.
pub fn random_density_matrix<R: Rng>(rng: &mut R, dim: usize) -> DensityMatrix {
    let a = random_matrix(rng, dim);
    let m = hermitize(&a.dot(&dagger(&a)));
    let tr: C64 = m.diag().iter().sum();
    DensityMatrix::new(m.mapv(|z| z / tr.re)).expect("AA† is a density matrix")
}

pub fn random_operator<R: Rng>(rng: &mut R, dim: usize) -> Operator {
    Operator::from_matrix(random_matrix(rng, dim)).expect("finite square matrix")
}

pub fn random_hermitian<R: Rng>(rng: &mut R, dim: usize) -> Operator {
    Operator::from_matrix(hermitize(&random_matrix(rng, dim))).expect("finite square matrix")
}

/// Generator with `channels` random jumps (rates in `[0.1, 1)`) and an
/// optional random Hamiltonian.
pub fn random_generator<R: Rng>(rng: &mut R, dim: usize, channels: usize, hamiltonian: bool) -> Generator {
    let mut gen = Generator::new(dim);
    if hamiltonian {
        gen = gen.with_hamiltonian(random_hermitian(rng, dim)).expect("matching dims");
    }
    for _ in 0..channels {
        let rate = rng.gen_range(0.1..1.0);
        let ch = LindbladChannel::new(rate, random_operator(rng, dim)).expect("positive rate");
        gen.push(ch).expect("matching dims");
    }
    gen
}

/// Default seed of the invariant suite.
pub const SUITE_SEED: u64 = 0x5eed_1e55;
pub const SUITE_INSTANCES: usize = 100;
pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    GeneratorTrace,
    GeneratorHermiticity,
    PositivityFloor,
    Determinism,
    VibronicTrace,
    VibronicHermiticity,
    ReducedTrace,
    ReducedHermiticity,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::GeneratorTrace,
        Check::GeneratorHermiticity,
        Check::PositivityFloor,
        Check::Determinism,
        Check::VibronicTrace,
        Check::VibronicHermiticity,
        Check::ReducedTrace,
        Check::ReducedHermiticity,
    ];
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub instance: usize,
    pub check: Check,
    pub value: f64,
    pub detail: String,
}

/// Worst value of each check over the suite.
#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub check: Check,
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckSummary>,
    pub violations: Vec<Violation>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn tolerance(check: Check) -> f64 {
    match check {
        Check::GeneratorTrace | Check::VibronicTrace | Check::ReducedTrace => TRACE_TOLERANCE,
        Check::GeneratorHermiticity | Check::VibronicHermiticity | Check::ReducedHermiticity => HERMITICITY_TOLERANCE,
        // floor: min eigenvalue ≥ −tol
        Check::PositivityFloor => POSITIVITY_TOLERANCE,
        Check::Determinism => 0.0,
    }
}

fn trace(m: &Array2<C64>) -> C64 {
    m.diag().iter().sum()
}

fn herm_error(m: &Array2<C64>) -> f64 {
    max_abs(&(m - &dagger(m)))
}

fn random_environment<R: Rng>(rng: &mut R) -> Environment {
    match rng.gen_range(0..3) {
        0 => Environment::None,
        1 => Environment::Thermal {
            gamma: rng.gen_range(0.01..0.5),
            n_thermal: rng.gen_range(0.0..3.0),
        },
        _ => Environment::RandomField {
            lambda: rng.gen_range(0.01..0.5),
        },
    }
}

struct Recorder {
    instance: usize,
    worst: Vec<f64>,
    violations: Vec<Violation>,
}

impl Recorder {
    /// `value` is an excursion measured against `tolerance(check)`, larger is worse.
    fn check(&mut self, check: Check, value: f64, detail: impl FnOnce() -> String) {
        let k = Check::ALL.iter().position(|c| *c == check).expect("listed");
        self.worst[k] = self.worst[k].max(value);
        if !(value <= tolerance(check)) {
            self.violations.push(Violation {
                instance: self.instance,
                check,
                value,
                detail: detail(),
            });
        }
    }

    fn error(&mut self, check: Check, e: Error) {
        self.check(check, f64::INFINITY, || e.to_string());
    }
}

/// Randomized generator/state instances: trace and Hermiticity preservation
/// of the generator and of both vibronic right-hand sides, the positivity
/// floor along short propagations, and bitwise reproducibility.
pub fn run_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rec = Recorder {
        instance: 0,
        worst: vec![0.0; Check::ALL.len()],
        violations: Vec::new(),
    };
    let opts = PropagationOptions {
        positivity_tol: POSITIVITY_TOLERANCE,
        ..PropagationOptions::default()
    };
    let grid = [0.0, 0.25, 0.5, 1.0];
    for k in 0..instances {
        rec.instance = k;
        let dim = rng.gen_range(2..=6);
        let channels = rng.gen_range(1..=3);
        let with_h = rng.gen_bool(0.5);
        let gen = random_generator(&mut rng, dim, channels, with_h);
        let rho = random_density_matrix(&mut rng, dim);

        match gen.apply(rho.matrix()) {
            Ok(l) => {
                rec.check(Check::GeneratorTrace, trace(&l).norm(), || format!("dim {dim}"));
                rec.check(Check::GeneratorHermiticity, herm_error(&l), || format!("dim {dim}"));
            }
            Err(e) => rec.error(Check::GeneratorTrace, e),
        }

        let first = gen.propagate(&rho, &grid, &opts);
        match &first {
            Ok(traj) => rec.check(Check::PositivityFloor, -traj.audit.min_eigenvalue, || {
                format!("min eigenvalue {:.3e}", traj.audit.min_eigenvalue)
            }),
            Err(e) => rec.check(Check::PositivityFloor, f64::INFINITY, || e.to_string()),
        }
        if let (Ok(a), Ok(b)) = (&first, &gen.propagate(&rho, &grid, &opts)) {
            let same = a.states.iter().zip(&b.states).all(|(x, y)| x.matrix() == y.matrix());
            rec.check(Check::Determinism, if same { 0.0 } else { 1.0 }, || "reruns differ".into());
        }

        let space = FockSpace::new(dim).expect("dim ≥ 2");
        let eta = rng.gen_range(0.05..0.4);
        let env = random_environment(&mut rng);
        let kernel = match RecoilKernel::new(space, eta, &AngularDistribution::Dipole) {
            Ok(kernel) => kernel,
            Err(e) => {
                rec.error(Check::VibronicTrace, e);
                continue;
            }
        };

        let joint = random_density_matrix(&mut rng, 2 * dim);
        let coupling = random_operator(&mut rng, dim);
        let gamma = rng.gen_range(0.5..2.0);
        let vib = VibronicState::from_joint(joint.matrix())
            .and_then(|st| vibronic_rhs(&st, &coupling, gamma, &kernel, &env));
        match vib {
            Ok(dst) => {
                rec.check(Check::VibronicTrace, dst.trace().norm(), || format!("dim {dim}, η = {eta:.3}"));
                rec.check(Check::VibronicHermiticity, herm_error(&dst.joint()), || format!("dim {dim}"));
            }
            Err(e) => rec.error(Check::VibronicTrace, e),
        }

        let d = random_operator(&mut rng, dim);
        let reduced = ReducedModel::new(d, rng.gen_range(0.05..1.0), kernel, &env).and_then(|m| m.rhs(rho.matrix()));
        match reduced {
            Ok(l) => {
                rec.check(Check::ReducedTrace, trace(&l).norm(), || format!("dim {dim}, η = {eta:.3}"));
                rec.check(Check::ReducedHermiticity, herm_error(&l), || format!("dim {dim}"));
            }
            Err(e) => rec.error(Check::ReducedTrace, e),
        }
    }
    SuiteReport {
        seed,
        instances,
        checks: Check::ALL
            .iter()
            .zip(&rec.worst)
            .map(|(c, w)| CheckSummary {
                check: *c,
                worst: *w,
                tolerance: tolerance(*c),
            })
            .collect(),
        violations: rec.violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_clean_and_reproducible() {
        let a = run_suite(SUITE_SEED, 12);
        assert!(a.passed(), "{:?}", a.violations);
        let b = run_suite(SUITE_SEED, 12);
        let worst = |r: &SuiteReport| r.checks.iter().map(|c| c.worst).collect::<Vec<_>>();
        assert_eq!(worst(&a), worst(&b));
    }

    #[test]
    fn recorder_flags_excursions() {
        let mut rec = Recorder {
            instance: 3,
            worst: vec![0.0; Check::ALL.len()],
            violations: Vec::new(),
        };
        rec.check(Check::GeneratorTrace, 1e-12, String::new);
        rec.check(Check::GeneratorTrace, 1e-6, || "bad".into());
        rec.check(Check::PositivityFloor, f64::NAN, String::new);
        assert_eq!(rec.violations.len(), 2);
        assert_eq!(rec.violations[0].instance, 3);
    }

    #[test]
    fn random_states_are_valid() {
        let mut rng = StdRng::seed_from_u64(1);
        for dim in 2..6 {
            let rho = random_density_matrix(&mut rng, dim);
            assert!(rho.min_eigenvalue().unwrap() > 0.0);
            assert!((rho.trace() - C64::from(1.0)).norm() < 1e-12);
        }
    }
}
