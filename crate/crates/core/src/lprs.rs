//! Exact limit-cycle prediction for relay feedback under MRFT.
//!
//! The steady output of a strictly proper plant driven by the ±h relay
//! square wave is the odd-harmonic Fourier series
//!
//! ```text
//! y(t, ω) = (4h/π) Σ_k A((2k-1)ω) sin((2k-1)ωt + φ((2k-1)ω)) / (2k-1)
//! ```
//!
//! with the time origin at the `-h → +h` relay transition. The series is
//! truncated adaptively against an analytic tail bound. From it come the
//! output amplitude `a_y(ω) = max_t |y|`, the switch-instant value
//! `y(π/ω, ω)`, and the complex function
//!
//! ```text
//! Φ(ω) = -sqrt(a_y² - y(π/ω)²) + j y(π/ω)
//! ```
//!
//! whose harmonic-balance root against the MRFT describing function gives the
//! exact oscillation. The operational switching condition, validated against
//! time-domain simulation and frozen here, is `y(π/ω, ω) = β a_y(ω)`; the
//! first-harmonic reduction of this condition is precisely the DF phase rule
//! `arg W(jΩ) = -π + arcsin β`, which [`df_predict`] implements as the
//! approximate baseline.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::detect::LimitCycle;
use crate::plant::{PlantError, TimeDelayLti};
use crate::relay::MrftConfig;

#[derive(Debug, Error)]
pub enum LprsError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("series tail bound not met within {k_max} harmonics (needed about {needed})")]
    SeriesNotConverged { k_max: usize, needed: usize },
    #[error("no limit cycle: switching condition has no root in [{lo_rad_s:.3e}, {hi_rad_s:.3e}] rad/s")]
    NoLimitCycle { lo_rad_s: f64, hi_rad_s: f64 },
}

/// Solver controls. The defaults implement the frozen numerical policy:
/// logarithmic 200-point scan over `[1e-3, 1e3]/ΣT`, bisection to 1e-9
/// relative, 2048-sample amplitude search with golden-section refinement,
/// series tolerance 1e-8 with a 1e5-harmonic cap.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub scan_points: usize,
    pub scan_span_decades: f64,
    pub omega_rel_tol: f64,
    pub series_eps: f64,
    pub coarse_eps: f64,
    pub amplitude_samples: usize,
    pub coarse_samples: usize,
    pub bisect_samples: usize,
    pub max_harmonics: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scan_points: 200,
            scan_span_decades: 3.0,
            omega_rel_tol: 1e-9,
            series_eps: 1e-8,
            coarse_eps: 1e-4,
            amplitude_samples: 2048,
            coarse_samples: 256,
            bisect_samples: 1024,
            max_harmonics: 100_000,
        }
    }
}

/// The periodic solution at one frequency: amplitude, switch-instant output
/// value, Φ, and the truncation bookkeeping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeriodicSolution {
    /// Angular frequency of the driving square wave, rad/s.
    pub omega: f64,
    /// Output amplitude `a_y = max_t |y(t, ω)|`.
    pub a_y: f64,
    /// Output value at the switch instant, `y(π/ω, ω)`.
    pub y_switch: f64,
    /// `Φ(ω) = -sqrt(a_y² - y_switch²) + j y_switch`.
    pub phi: (f64, f64),
    pub harmonics_used: usize,
    /// Upper bound on the neglected tail, relative to the fundamental.
    pub truncation_rel: f64,
}

impl PeriodicSolution {
    pub fn phi_complex(&self) -> Complex64 {
        Complex64::new(self.phi.0, self.phi.1)
    }
}

/// Truncated odd-harmonic series, stored as per-harmonic `(a, b)` with
/// `y(t) = Σ a_m sin(mωt) + b_m cos(mωt)`, m odd.
#[derive(Debug, Clone)]
pub(crate) struct HarmonicSeries {
    omega: f64,
    terms: Vec<(f64, f64)>,
    truncation_rel: f64,
}

impl HarmonicSeries {
    /// Builds the series for the plant driven by a ±h square wave at `omega`,
    /// truncated once the analytic tail bound drops below `eps` relative to
    /// the fundamental.
    pub(crate) fn build(
        plant: &TimeDelayLti,
        h: f64,
        omega: f64,
        eps: f64,
        max_harmonics: usize,
    ) -> Result<Self, LprsError> {
        let prefactor = 4.0 * h / PI;
        let rho = plant.relative_degree() as f64;

        // Tail bound: for odd m >= big_m,
        //   A(mω) <= C(big_m) / m^ρ,
        //   Σ_{odd m >= big_m} (4h/π) A(mω)/m
        //     <= (4h/π) C(big_m) (big_m^-(ρ+1) + big_m^-ρ / (2ρ)).
        let c_of = |big_m: f64| -> f64 {
            let mut c = plant.gain().abs();
            for &t in plant.num_tcs() {
                c *= t * omega + 1.0 / big_m;
            }
            for &t in plant.den_tcs() {
                c /= t * omega;
            }
            c / omega.powi(plant.integrators() as i32)
        };
        let tail = |big_m: f64| -> f64 {
            prefactor * c_of(big_m) * (big_m.powf(-(rho + 1.0)) + big_m.powf(-rho) / (2.0 * rho))
        };

        let (a1, p1) = plant.magnitude_phase(omega)?;
        let scale = prefactor * a1;
        let budget = eps * scale;

        // Cheap feasibility check before summing a hopeless series.
        let m_cap = (2 * max_harmonics - 1) as f64;
        if tail(m_cap) > budget {
            let mut needed = m_cap;
            let mut probe = 1.0f64;
            while probe < 1e12 {
                if tail(probe) <= budget {
                    needed = probe;
                    break;
                }
                probe *= 2.0;
            }
            return Err(LprsError::SeriesNotConverged {
                k_max: max_harmonics,
                needed: ((needed + 1.0) / 2.0) as usize,
            });
        }

        let mut terms = Vec::with_capacity(64);
        let c1 = prefactor * a1;
        terms.push((c1 * p1.cos(), c1 * p1.sin()));
        let truncation_rel;
        let mut k = 1usize;
        loop {
            let next_m = (2 * k + 1) as f64;
            let t = tail(next_m);
            if t <= budget {
                truncation_rel = t / scale;
                break;
            }
            if k >= max_harmonics {
                return Err(LprsError::SeriesNotConverged {
                    k_max: max_harmonics,
                    needed: k + 1,
                });
            }
            let (am, pm) = plant.magnitude_phase(next_m * omega)?;
            let cm = prefactor * am / next_m;
            terms.push((cm * pm.cos(), cm * pm.sin()));
            k += 1;
        }

        Ok(Self {
            omega,
            terms,
            truncation_rel,
        })
    }

    pub(crate) fn harmonics(&self) -> usize {
        self.terms.len()
    }

    pub(crate) fn truncation_rel(&self) -> f64 {
        self.truncation_rel
    }

    /// Series for the same plant with `extra_delay` added: each harmonic is
    /// rotated by `-m ω τ`, magnitudes (and thus the truncation) unchanged.
    pub(crate) fn delayed(&self, extra_delay: f64) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (i, &(a, b)) in self.terms.iter().enumerate() {
            let m = (2 * i + 1) as f64;
            let theta = m * self.omega * extra_delay;
            let (s, c) = theta.sin_cos();
            terms.push((a * c + b * s, b * c - a * s));
        }
        Self {
            omega: self.omega,
            terms,
            truncation_rel: self.truncation_rel,
        }
    }

    pub(crate) fn eval(&self, t: f64) -> f64 {
        let mut y = 0.0;
        for (i, &(a, b)) in self.terms.iter().enumerate() {
            let m = (2 * i + 1) as f64;
            let (s, c) = (m * self.omega * t).sin_cos();
            y += a * s + b * c;
        }
        y
    }

    /// `y(π/ω)`: with odd harmonics, `sin(mπ + φ) = -sin φ`, so the switch
    /// value is just `-Σ b_m`.
    pub(crate) fn y_switch(&self) -> f64 {
        -self.terms.iter().map(|&(_, b)| b).sum::<f64>()
    }

    /// `max_t |y(t)|` by dense sampling over one period, optionally refined
    /// by golden-section search around the best sample.
    pub(crate) fn max_abs(&self, samples: usize, refine: bool) -> f64 {
        let s = samples;
        let mut sin_tab = Vec::with_capacity(s);
        let mut cos_tab = Vec::with_capacity(s);
        for j in 0..s {
            let (sv, cv) = (2.0 * PI * j as f64 / s as f64).sin_cos();
            sin_tab.push(sv);
            cos_tab.push(cv);
        }
        let mut acc = vec![0.0f64; s];
        for (i, &(a, b)) in self.terms.iter().enumerate() {
            let m = 2 * i + 1;
            let step = m % s;
            let mut idx = 0usize;
            for v in acc.iter_mut() {
                *v += a * sin_tab[idx] + b * cos_tab[idx];
                idx += step;
                if idx >= s {
                    idx -= s;
                }
            }
        }
        let mut best_j = 0;
        let mut best = 0.0f64;
        for (j, &v) in acc.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                best_j = j;
            }
        }
        if !refine {
            return best;
        }
        let period = 2.0 * PI / self.omega;
        let dt = period / s as f64;
        let (t_lo, t_hi) = (
            (best_j as f64 - 1.0) * dt,
            (best_j as f64 + 1.0) * dt,
        );
        let (_, peak) = golden_max(|t| self.eval(t).abs(), t_lo, t_hi, 80);
        peak.max(best)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Steady periodic plant output under the ±h relay square wave, evaluated at
/// time `t` (the wave switches `-h → +h` at `t = 0`). Periodic in `t`.
pub fn periodic_output(
    plant: &TimeDelayLti,
    h: f64,
    omega: f64,
    t: f64,
) -> Result<f64, LprsError> {
    let opts = SolverOptions::default();
    let series = HarmonicSeries::build(plant, h, omega, opts.series_eps, opts.max_harmonics)?;
    Ok(series.eval(t))
}

/// Output amplitude `a_y(ω) = max_t |y(t, ω)|`.
pub fn output_amplitude(plant: &TimeDelayLti, h: f64, omega: f64) -> Result<f64, LprsError> {
    Ok(periodic_solution(plant, h, omega)?.a_y)
}

/// Full periodic solution at `omega`: amplitude, switch value, Φ.
pub fn periodic_solution(
    plant: &TimeDelayLti,
    h: f64,
    omega: f64,
) -> Result<PeriodicSolution, LprsError> {
    let opts = SolverOptions::default();
    let series = HarmonicSeries::build(plant, h, omega, opts.series_eps, opts.max_harmonics)?;
    let a_y = series.max_abs(opts.amplitude_samples, true);
    let y_switch = series.y_switch();
    debug_assert!(a_y >= y_switch.abs() * (1.0 - 1e-9));
    let re = -(a_y * a_y - y_switch * y_switch).max(0.0).sqrt();
    Ok(PeriodicSolution {
        omega,
        a_y,
        y_switch,
        phi: (re, y_switch),
        harmonics_used: series.harmonics(),
        truncation_rel: series.truncation_rel(),
    })
}

/// `Φ(ω)` for the plant at relay amplitude `h`.
pub fn phi(plant: &TimeDelayLti, h: f64, omega: f64) -> Result<Complex64, LprsError> {
    Ok(periodic_solution(plant, h, omega)?.phi_complex())
}

fn scan_grid(plant: &TimeDelayLti, opts: &SolverOptions) -> (f64, f64, Vec<f64>) {
    let sum_t = plant.time_scale_sum();
    let t_char = if sum_t > 0.0 { sum_t } else { 1.0 };
    let lo = 10f64.powf(-opts.scan_span_decades) / t_char;
    let hi = 10f64.powf(opts.scan_span_decades) / t_char;
    let n = opts.scan_points.max(2);
    let ratio = (hi / lo).ln();
    let grid = (0..n)
        .map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect();
    (lo, hi, grid)
}

/// Switching-condition residual `g(ω) = y(π/ω, ω) - β a_y(ω)` at unit relay
/// amplitude. The sign convention is frozen against time-domain simulation.
fn switching_residual(
    plant: &TimeDelayLti,
    beta: f64,
    omega: f64,
    eps: f64,
    samples: usize,
    max_harmonics: usize,
) -> Result<(f64, f64), LprsError> {
    let series = HarmonicSeries::build(plant, 1.0, omega, eps, max_harmonics)?;
    let a_y = series.max_abs(samples, false);
    Ok((series.y_switch() - beta * a_y, a_y))
}

/// Exact MRFT limit cycles: all roots of the switching condition in the scan
/// range, principal (nearest the DF prediction in log-frequency) first.
pub fn solve_limit_cycle_all(
    plant: &TimeDelayLti,
    cfg: &MrftConfig,
) -> Result<Vec<LimitCycle>, LprsError> {
    solve_limit_cycle_impl(plant, cfg, &SolverOptions::default(), usize::MAX)
}

/// Principal MRFT limit cycle (nearest the DF prediction). Only the
/// principal bracket is refined, which keeps repeated solves cheap.
pub fn solve_limit_cycle(plant: &TimeDelayLti, cfg: &MrftConfig) -> Result<LimitCycle, LprsError> {
    solve_limit_cycle_with(plant, cfg, &SolverOptions::default())
}

/// Principal limit cycle under explicit solver options.
pub fn solve_limit_cycle_with(
    plant: &TimeDelayLti,
    cfg: &MrftConfig,
    opts: &SolverOptions,
) -> Result<LimitCycle, LprsError> {
    Ok(solve_limit_cycle_impl(plant, cfg, opts, 1)?[0])
}

fn solve_limit_cycle_impl(
    plant: &TimeDelayLti,
    cfg: &MrftConfig,
    opts: &SolverOptions,
    max_roots: usize,
) -> Result<Vec<LimitCycle>, LprsError> {
    let beta = cfg.beta();
    let (lo, hi, grid) = scan_grid(plant, opts);

    // Coarse scan; points where the series cannot converge (far below the
    // plant bandwidth) are skipped.
    let mut evals: Vec<(f64, f64)> = Vec::with_capacity(grid.len());
    for &omega in &grid {
        match switching_residual(
            plant,
            beta,
            omega,
            opts.coarse_eps,
            opts.coarse_samples,
            opts.max_harmonics,
        ) {
            Ok((g, _)) => evals.push((omega, g)),
            Err(LprsError::SeriesNotConverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }

    let mut brackets: Vec<(f64, f64)> = Vec::new();
    for w in evals.windows(2) {
        let (w0, g0) = w[0];
        let (w1, g1) = w[1];
        if g0 == 0.0 || g0.signum() != g1.signum() {
            brackets.push((w0, w1));
        }
    }
    if brackets.is_empty() {
        return Err(LprsError::NoLimitCycle {
            lo_rad_s: lo,
            hi_rad_s: hi,
        });
    }

    // DF anchor for principal selection; may legitimately be absent.
    let df_omega = df_predict(plant, cfg)
        .ok()
        .map(|c| 2.0 * PI * c.freq_hz);
    let anchor_distance = |omega: f64| -> f64 {
        match df_omega {
            Some(w_df) => (omega / w_df).ln().abs(),
            None => omega,
        }
    };
    brackets.sort_by(|a, b| {
        let da = anchor_distance((a.0 * a.1).sqrt());
        let db = anchor_distance((b.0 * b.1).sqrt());
        da.partial_cmp(&db).expect("finite distances")
    });

    let full = |omega: f64| -> Result<(f64, f64), LprsError> {
        switching_residual(
            plant,
            beta,
            omega,
            opts.series_eps,
            opts.bisect_samples,
            opts.max_harmonics,
        )
    };

    let mut roots: Vec<(f64, f64)> = Vec::new(); // (omega, residual_rel)
    for &(mut wl, mut wh) in &brackets {
        if roots.len() >= max_roots {
            break;
        }
        let (mut gl, _) = match full(wl) {
            Ok(v) => v,
            Err(LprsError::SeriesNotConverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (gh, _) = match full(wh) {
            Ok(v) => v,
            Err(LprsError::SeriesNotConverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        if gl == 0.0 {
            roots.push((wl, 0.0));
            continue;
        }
        if gl.signum() == gh.signum() {
            continue; // coarse-scan artifact
        }
        while wh - wl > opts.omega_rel_tol * wl {
            let mid = 0.5 * (wl + wh);
            let (gm, _) = full(mid)?;
            if gm == 0.0 {
                wl = mid;
                wh = mid;
                break;
            }
            if gm.signum() == gl.signum() {
                wl = mid;
                gl = gm;
            } else {
                wh = mid;
            }
        }
        let omega = 0.5 * (wl + wh);
        let (g, a_y) = full(omega)?;
        roots.push((omega, (g / a_y).abs()));
    }
    if roots.is_empty() {
        return Err(LprsError::NoLimitCycle {
            lo_rad_s: lo,
            hi_rad_s: hi,
        });
    }

    roots.sort_by(|a, b| {
        anchor_distance(a.0)
            .partial_cmp(&anchor_distance(b.0))
            .expect("finite distances")
    });

    let mut cycles = Vec::with_capacity(roots.len());
    for (omega, residual) in roots {
        let series =
            HarmonicSeries::build(plant, 1.0, omega, opts.series_eps, opts.max_harmonics)?;
        let a_y = series.max_abs(opts.amplitude_samples, true);
        cycles.push(LimitCycle {
            freq_hz: omega / (2.0 * PI),
            amplitude: cfg.h() * a_y,
            period_spread: 0.0,
            cycles: 0,
            residual: Some(residual),
        });
    }
    Ok(cycles)
}

/// Describing-function baseline: `Ω_df` solves
/// `arg W(jω) = -π + arcsin β` on the unwrapped phase, and the predicted
/// amplitude is `(4h/π) |W(jΩ_df)|`. Approximate by construction.
pub fn df_predict(plant: &TimeDelayLti, cfg: &MrftConfig) -> Result<LimitCycle, LprsError> {
    let opts = SolverOptions::default();
    let (lo, hi, grid) = scan_grid(plant, &opts);
    let target = -PI + cfg.beta().asin();
    let phase_err = |omega: f64| -> f64 {
        let (_, ph) = plant
            .magnitude_phase(omega)
            .expect("scan frequencies are positive");
        ph - target
    };

    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for &omega in &grid {
        let v = phase_err(omega);
        if let Some((po, pv)) = prev {
            if pv == 0.0 || pv.signum() != v.signum() {
                bracket = Some((po, pv, omega));
                break;
            }
        }
        prev = Some((omega, v));
    }
    let (mut wl, mut vl, mut wh) = match bracket {
        Some(b) => b,
        None => {
            return Err(LprsError::NoLimitCycle {
                lo_rad_s: lo,
                hi_rad_s: hi,
            })
        }
    };
    while wh - wl > 1e-12 * wl {
        let mid = 0.5 * (wl + wh);
        let vm = phase_err(mid);
        if vm == 0.0 {
            wl = mid;
            wh = mid;
            break;
        }
        if vm.signum() == vl.signum() {
            wl = mid;
            vl = vm;
        } else {
            wh = mid;
        }
    }
    let omega = 0.5 * (wl + wh);
    let (mag, _) = plant.magnitude_phase(omega)?;
    Ok(LimitCycle {
        freq_hz: omega / (2.0 * PI),
        amplitude: 4.0 * cfg.h() / PI * mag,
        period_spread: 0.0,
        cycles: 0,
        residual: None,
    })
}
