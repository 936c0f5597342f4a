//! Adaptive Dormand–Prince 5(4) integration of complex array ODEs.

use ndarray::{Array, Dimension, Zip};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Embedded Runge–Kutta integrator with per-step error control. Output times
/// are hit exactly; the step proposal carries over between output intervals.
#[derive(Clone, Debug)]
pub struct DormandPrince {
    pub tol: Tolerances,
    pub max_steps: usize,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_steps: 10_000_000,
        }
    }
}

fn lincomb<D: Dimension>(y: &Array<C64, D>, h: f64, terms: &[(f64, &Array<C64, D>)]) -> Array<C64, D> {
    let mut out = y.clone();
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        let s = h * c;
        Zip::from(&mut out).and(*k).for_each(|o, &kv| *o += kv * s);
    }
    out
}

impl DormandPrince {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn error_norm<D: Dimension>(&self, err: &Array<C64, D>, y0: &Array<C64, D>, y1: &Array<C64, D>) -> f64 {
        let mut acc = 0.0;
        Zip::from(err).and(y0).and(y1).for_each(|e, a, b| {
            let sc = self.tol.atol + self.tol.rtol * a.norm().max(b.norm());
            let r = e.norm() / sc;
            acc += r * r;
        });
        (acc / err.len().max(1) as f64).sqrt()
    }

    fn initial_step<D, F>(&self, f: &mut F, t0: f64, y0: &Array<C64, D>, f0: &Array<C64, D>, span: f64) -> Result<f64>
    where
        D: Dimension,
        F: FnMut(f64, &Array<C64, D>) -> Result<Array<C64, D>>,
    {
        let zero = Array::zeros(y0.raw_dim());
        let d0 = self.error_norm(y0, y0, y0);
        let d1 = self.error_norm(f0, y0, y0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let y1 = lincomb(y0, h0, &[(1.0, f0)]);
        let f1 = f(t0 + h0, &y1)?;
        let df = lincomb(&f1, -1.0, &[(1.0, f0)]);
        let d2 = self.error_norm(&df, y0, &zero) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }

    /// Integrates `dy/dt = f(t, y)` from `grid[0]` and calls `observe` at every
    /// grid time (including the first).
    pub fn integrate<D, F, O>(&self, mut f: F, y0: Array<C64, D>, grid: &[f64], mut observe: O) -> Result<StepStats>
    where
        D: Dimension,
        F: FnMut(f64, &Array<C64, D>) -> Result<Array<C64, D>>,
        O: FnMut(usize, f64, &Array<C64, D>) -> Result<()>,
    {
        let mut stats = StepStats::default();
        if grid.is_empty() {
            return Ok(stats);
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "time grid must be strictly increasing".into(),
            ));
        }
        let mut t = grid[0];
        let mut y = y0;
        observe(0, t, &y)?;
        if grid.len() == 1 {
            return Ok(stats);
        }
        let span = grid[grid.len() - 1] - t;
        let mut k1 = f(t, &y)?;
        stats.evaluations += 1;
        let mut h = self.initial_step(&mut f, t, &y, &k1, span)?;
        stats.evaluations += 1;

        for (idx, &t_out) in grid.iter().enumerate().skip(1) {
            while t < t_out {
                if stats.accepted + stats.rejected >= self.max_steps {
                    return Err(Error::IntegratorFailure {
                        t,
                        reason: format!("exceeded {} steps", self.max_steps),
                    });
                }
                let remaining = t_out - t;
                let last = h >= remaining;
                let step = if last { remaining } else { h };
                let h_min = 1e-14 * t.abs().max(1.0);
                if step < h_min && !last {
                    return Err(Error::IntegratorFailure {
                        t,
                        reason: format!("step size underflow (h = {step:.3e})"),
                    });
                }

                let k2 = f(t + C2 * step, &lincomb(&y, step, &[(A21, &k1)]))?;
                let k3 = f(t + C3 * step, &lincomb(&y, step, &[(A31, &k1), (A32, &k2)]))?;
                let k4 = f(
                    t + C4 * step,
                    &lincomb(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
                )?;
                let k5 = f(
                    t + C5 * step,
                    &lincomb(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
                )?;
                let k6 = f(
                    t + step,
                    &lincomb(
                        &y,
                        step,
                        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                    ),
                )?;
                let y_new = lincomb(
                    &y,
                    step,
                    &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
                );
                let k7 = f(t + step, &y_new)?;
                stats.evaluations += 6;

                let zero = Array::zeros(y.raw_dim());
                let err_vec = lincomb(
                    &zero,
                    step,
                    &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
                );
                let err = self.error_norm(&err_vec, &y, &y_new);
                if !err.is_finite() {
                    return Err(Error::IntegratorFailure {
                        t,
                        reason: "non-finite error estimate".into(),
                    });
                }

                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                if err <= 1.0 {
                    stats.accepted += 1;
                    t = if last { t_out } else { t + step };
                    y = y_new;
                    k1 = k7;
                    // a short final step says nothing about the natural step size
                    if !last || step >= h {
                        h = step * factor;
                    }
                } else {
                    stats.rejected += 1;
                    h = step * factor.min(1.0);
                }
            }
            observe(idx, t, &y)?;
        }
        Ok(stats)
    }
}
