//! Parameter identification from measured MRFT oscillations.
//!
//! The primary route intersects two scaled manifold slices: each of two tests
//! (different β) pins the set of (T_d, τ) consistent with its measured
//! frequency at the known T_p; the intersection of the two curves is the
//! estimate. Every candidate is verified by an exact re-solve and the one
//! with the smallest combined frequency residual wins.
//!
//! The single-test route additionally matches the measured amplitude on the
//! unit-gain manifold; it exists to quantify how much worse
//! amplitude-based identification behaves under measurement noise.
//!
//! Monte-Carlo sensitivity wraps either route with multiplicative Gaussian
//! perturbations of the observed quantities, one independent RNG stream per
//! draw, so statistics are reproducible under a fixed seed and independent
//! of the parallel schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lprs::{solve_limit_cycle_with, LprsError, SolverOptions};
use crate::manifold::{scale_manifold, Manifold, ManifoldError, SliceCurve};
use crate::plant::SoiptdParams;
use crate::relay::MrftConfig;

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("observation/manifold mismatch: {0}")]
    Mismatch(String),
    #[error("scaled manifold slices do not intersect (closest |Δτ| = {min_gap:?} s at T_d = {closest_td:?} s)")]
    NoIntersection {
        closest_td: Option<f64>,
        min_gap: Option<f64>,
    },
    #[error("all {candidates} intersection candidates violate the prior bounds")]
    NoFeasibleEstimate { candidates: usize },
    #[error("measured amplitude has no match on the unit-gain manifold slice")]
    NoAmplitudeMatch,
    #[error("Monte-Carlo statistics unreliable: {failures} of {total} draws failed")]
    UnreliableStatistics { failures: usize, total: usize },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Solver(#[from] LprsError),
}

/// One MRFT measurement: test parameters and the observed limit cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestObservation {
    pub beta: f64,
    pub relay_amplitude: f64,
    pub freq_hz: f64,
    /// Measured oscillation amplitude; required only by the single-test
    /// route.
    pub amplitude: Option<f64>,
}

impl TestObservation {
    fn validate(&self) -> Result<(), IdentError> {
        if !(self.beta.abs() < 1.0) {
            return Err(IdentError::InvalidParameter(format!(
                "beta must satisfy |beta| < 1, got {}",
                self.beta
            )));
        }
        if !(self.relay_amplitude > 0.0) {
            return Err(IdentError::InvalidParameter(format!(
                "relay amplitude must be positive, got {}",
                self.relay_amplitude
            )));
        }
        if !(self.freq_hz > 0.0) || !self.freq_hz.is_finite() {
            return Err(IdentError::InvalidParameter(format!(
                "measured frequency must be positive, got {}",
                self.freq_hz
            )));
        }
        Ok(())
    }
}

/// Prior knowledge: the propulsion time constant is treated as exact (bench
/// measured), the unknowns are boxed by inequality constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorKnowledge {
    pub tp: f64,
    pub td_bounds: (f64, f64),
    pub tau_bounds: (f64, f64),
}

impl PriorKnowledge {
    /// Known T_p with unconstrained (non-negative) unknowns.
    pub fn known_tp(tp: f64) -> Result<Self, IdentError> {
        Self::new(tp, (0.0, f64::INFINITY), (0.0, f64::INFINITY))
    }

    pub fn new(
        tp: f64,
        td_bounds: (f64, f64),
        tau_bounds: (f64, f64),
    ) -> Result<Self, IdentError> {
        if !(tp > 0.0) || !tp.is_finite() {
            return Err(IdentError::InvalidParameter(format!(
                "known T_p must be positive, got {tp}"
            )));
        }
        for (name, (lo, hi)) in [("T_d", td_bounds), ("tau", tau_bounds)] {
            if !(lo < hi) || !(lo >= 0.0) {
                return Err(IdentError::InvalidParameter(format!(
                    "{name} bounds need 0 <= lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            tp,
            td_bounds,
            tau_bounds,
        })
    }

    fn admits(&self, td: f64, tau: f64) -> bool {
        td >= self.td_bounds.0
            && td <= self.td_bounds.1
            && tau >= self.tau_bounds.0
            && tau <= self.tau_bounds.1
    }
}

/// An intersection candidate with its verification residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub td: f64,
    pub tau: f64,
    /// Signed frequency residual per test, Hz, from the exact re-solve.
    pub residuals_hz: Vec<f64>,
    /// Sum of |residual| / measured frequency (plus the relative amplitude
    /// residual on the single-test route).
    pub combined_rel_residual: f64,
}

/// Monte-Carlo statistics over the successful draws.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McStats {
    pub mean_td: f64,
    pub std_td: f64,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub draws: usize,
    pub failures: usize,
}

/// Identification output: accepted estimate, its residuals, the full
/// candidate list, and optional Monte-Carlo statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentResult {
    pub td: f64,
    pub tau: f64,
    pub residuals_hz: Vec<f64>,
    pub candidates: Vec<Candidate>,
    pub stats: Option<McStats>,
}

/// A fully specified identification task.
#[derive(Debug, Clone)]
pub enum IdentProblem<'a> {
    TwoFreq {
        obs: [TestObservation; 2],
        manifolds: [&'a Manifold; 2],
    },
    SingleTest {
        obs: TestObservation,
        manifold: &'a Manifold,
        /// Known static gain of the plant, in the SOIPTD convention where
        /// the transfer-function numerator is `K·T_d`.
        known_gain: f64,
    },
}

/// Piecewise-linear view of a slice curve in (ln T_d, value) coordinates,
/// with gaps where cells are infeasible.
struct GappyCurve {
    x: Vec<f64>,
    y: Vec<Option<f64>>,
}

impl GappyCurve {
    fn from_slice(curve: &SliceCurve) -> Self {
        Self {
            x: curve.td.clone(),
            y: curve.tau.clone(),
        }
    }

    fn eval(&self, x: f64) -> Option<f64> {
        if self.x.is_empty() {
            return None;
        }
        let pos = self.x.partition_point(|&v| v < x);
        if pos == 0 {
            return if self.x[0] == x { self.y[0] } else { None };
        }
        if pos == self.x.len() {
            let last = self.x.len() - 1;
            return if self.x[last] == x { self.y[last] } else { None };
        }
        let (x0, x1) = (self.x[pos - 1], self.x[pos]);
        match (self.y[pos - 1], self.y[pos]) {
            (Some(y0), Some(y1)) => {
                let w = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
                Some((1.0 - w) * y0 + w * y1)
            }
            _ => None,
        }
    }
}

fn check_pairing(obs: &TestObservation, man: &Manifold) -> Result<(), IdentError> {
    obs.validate()?;
    if (man.beta - obs.beta).abs() > 1e-12 {
        return Err(IdentError::Mismatch(format!(
            "observation beta {} vs manifold beta {}",
            obs.beta, man.beta
        )));
    }
    Ok(())
}

/// Exact re-solve of the unit-gain hypothesis plant at one β; returns the
/// predicted frequency (Hz) and amplitude at unit relay amplitude.
fn resolve_hypothesis(
    tp: f64,
    td: f64,
    tau: f64,
    beta: f64,
) -> Result<(f64, f64), IdentError> {
    let plant = SoiptdParams::new(1.0, tp, td, tau)
        .map_err(|e| IdentError::InvalidParameter(e.to_string()))?
        .to_plant();
    let cfg = MrftConfig::new(beta, 1.0).map_err(|e| IdentError::InvalidParameter(e.to_string()))?;
    let cycle = solve_limit_cycle_with(&plant, &cfg, &SolverOptions::default())?;
    Ok((cycle.freq_hz, cycle.amplitude))
}

/// Two-frequency identification: intersect the two scaled UFM slices at the
/// known T_p, verify every crossing by exact re-solve at both β, and accept
/// the candidate with the smallest combined relative frequency residual
/// inside the prior bounds.
pub fn identify_two_freq(
    obs: &[TestObservation; 2],
    manifolds: &[&Manifold; 2],
    prior: &PriorKnowledge,
) -> Result<IdentResult, IdentError> {
    for (o, m) in obs.iter().zip(manifolds) {
        check_pairing(o, m)?;
    }
    if (obs[0].beta - obs[1].beta).abs() < 1e-12 {
        return Err(IdentError::InvalidParameter(
            "the two observations must use different beta values".into(),
        ));
    }

    let mut curves = Vec::with_capacity(2);
    for (o, m) in obs.iter().zip(manifolds) {
        let scaled = scale_manifold(m, o.freq_hz)?;
        let slice = scaled.slice_at_tp(prior.tp)?;
        curves.push(GappyCurve::from_slice(&slice));
    }
    let (c1, c2) = (&curves[0], &curves[1]);

    // Merged abscissa over the overlap of the two scaled T_d axes.
    let mut xs: Vec<f64> = c1.x.iter().chain(c2.x.iter()).cloned().collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    xs.dedup();

    let mut diffs: Vec<(f64, f64)> = Vec::new();
    for &x in &xs {
        if let (Some(t1), Some(t2)) = (c1.eval(x), c2.eval(x)) {
            diffs.push((x, t1 - t2));
        }
    }
    if diffs.is_empty() {
        return Err(IdentError::NoIntersection {
            closest_td: None,
            min_gap: None,
        });
    }

    let mut crossings: Vec<(f64, f64)> = Vec::new(); // (td, tau)
    let mut closest = (diffs[0].0, diffs[0].1.abs());
    for w in diffs.windows(2) {
        let (x0, d0) = w[0];
        let (x1, d1) = w[1];
        if d1.abs() < closest.1 {
            closest = (x1, d1.abs());
        }
        if d0 == 0.0 {
            if let Some(t) = c1.eval(x0) {
                crossings.push((x0, t));
            }
            continue;
        }
        if d0.signum() != d1.signum() {
            // Linear zero in ln T_d.
            let w0 = d0 / (d0 - d1);
            let x = (x0.ln() + w0 * (x1.ln() - x0.ln())).exp();
            if let (Some(t1), Some(t2)) = (c1.eval(x), c2.eval(x)) {
                crossings.push((x, 0.5 * (t1 + t2)));
            }
        }
    }
    if crossings.is_empty() {
        return Err(IdentError::NoIntersection {
            closest_td: Some(closest.0),
            min_gap: Some(closest.1),
        });
    }

    let mut candidates = Vec::new();
    let mut any_rejected = 0usize;
    for (td, tau) in crossings {
        let tau = if tau < 0.0 && tau > -1e-12 { 0.0 } else { tau };
        if !prior.admits(td, tau) {
            any_rejected += 1;
            continue;
        }
        let mut residuals = Vec::with_capacity(2);
        let mut combined = 0.0;
        let mut ok = true;
        for o in obs.iter() {
            match resolve_hypothesis(prior.tp, td, tau, o.beta) {
                Ok((freq, _)) => {
                    let r = freq - o.freq_hz;
                    combined += r.abs() / o.freq_hz;
                    residuals.push(r);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            any_rejected += 1;
            continue;
        }
        candidates.push(Candidate {
            td,
            tau,
            residuals_hz: residuals,
            combined_rel_residual: combined,
        });
    }
    if candidates.is_empty() {
        return Err(IdentError::NoFeasibleEstimate {
            candidates: any_rejected,
        });
    }
    candidates.sort_by(|a, b| {
        a.combined_rel_residual
            .partial_cmp(&b.combined_rel_residual)
            .expect("finite residuals")
    });
    let best = candidates[0].clone();
    Ok(IdentResult {
        td: best.td,
        tau: best.tau,
        residuals_hz: best.residuals_hz,
        candidates,
        stats: None,
    })
}

/// Single-test identification from frequency plus amplitude: the measured
/// amplitude is matched against the unit-gain manifold along the slice.
///
/// With the manifold scaled by `γ = 1/Ω` (its amplitudes carry one factor of
/// γ), the amplitude predicted for a hypothesis cell is
/// `K·h·γ·amp_scaled`, homogeneous of degree one in the static gain and the
/// relay amplitude and of degree `n_i + 1` in the time scale (one factor
/// from the time scaling, one because the unit-gain normalization fixes the
/// SOIPTD `K` rather than the assembled static gain `K·T_d`).
pub fn identify_single_test(
    obs: &TestObservation,
    manifold: &Manifold,
    known_gain: f64,
    prior: &PriorKnowledge,
) -> Result<IdentResult, IdentError> {
    check_pairing(obs, manifold)?;
    if !(known_gain > 0.0) || !known_gain.is_finite() {
        return Err(IdentError::InvalidParameter(format!(
            "known gain must be positive, got {known_gain}"
        )));
    }
    let a_meas = match obs.amplitude {
        Some(a) if a.is_finite() && a >= 0.0 => a,
        Some(a) => {
            return Err(IdentError::InvalidParameter(format!(
                "measured amplitude must be non-negative, got {a}"
            )))
        }
        None => {
            return Err(IdentError::InvalidParameter(
                "single-test identification needs a measured amplitude".into(),
            ))
        }
    };

    let gamma = manifold.freq_hz / obs.freq_hz;
    let scaled = scale_manifold(manifold, obs.freq_hz)?;
    let slice = scaled.slice_at_tp(prior.tp)?;
    let h = obs.relay_amplitude;

    // Predicted-minus-measured amplitude along the slice.
    let mut mismatch: Vec<(f64, f64, f64)> = Vec::new(); // (td, tau, f)
    for ((td, tau), amp) in slice
        .td
        .iter()
        .zip(&slice.tau)
        .map(|(td, tau)| (*td, *tau))
        .zip(&slice.amp)
    {
        if let (Some(tau), Some(amp)) = (tau, amp) {
            mismatch.push((td, tau, known_gain * h * gamma * amp - a_meas));
        }
    }
    if mismatch.len() < 2 {
        return Err(IdentError::NoAmplitudeMatch);
    }

    let mut crossings: Vec<(f64, f64)> = Vec::new();
    for w in mismatch.windows(2) {
        let (x0, t0, f0) = w[0];
        let (x1, t1, f1) = w[1];
        if f0 == 0.0 {
            crossings.push((x0, t0));
            continue;
        }
        if f0.signum() != f1.signum() {
            let w0 = f0 / (f0 - f1);
            let x = (x0.ln() + w0 * (x1.ln() - x0.ln())).exp();
            let tau = t0 + (t1 - t0) * w0;
            crossings.push((x, tau));
        }
    }
    if let Some(&(x, t, f)) = mismatch.last() {
        if f == 0.0 {
            crossings.push((x, t));
        }
    }
    if crossings.is_empty() {
        return Err(IdentError::NoAmplitudeMatch);
    }

    let mut candidates = Vec::new();
    let mut rejected = 0usize;
    for (td, tau) in crossings {
        let tau = if tau < 0.0 && tau > -1e-12 { 0.0 } else { tau };
        if !prior.admits(td, tau) {
            rejected += 1;
            continue;
        }
        match resolve_hypothesis(prior.tp, td, tau, obs.beta) {
            Ok((freq, amp_unit)) => {
                let freq_res = freq - obs.freq_hz;
                let amp_pred = known_gain * h * amp_unit;
                let amp_res_rel = if a_meas > 0.0 {
                    (amp_pred - a_meas).abs() / a_meas
                } else {
                    amp_pred.abs()
                };
                candidates.push(Candidate {
                    td,
                    tau,
                    residuals_hz: vec![freq_res],
                    combined_rel_residual: freq_res.abs() / obs.freq_hz + amp_res_rel,
                });
            }
            Err(_) => rejected += 1,
        }
    }
    if candidates.is_empty() {
        return Err(IdentError::NoFeasibleEstimate {
            candidates: rejected,
        });
    }
    candidates.sort_by(|a, b| {
        a.combined_rel_residual
            .partial_cmp(&b.combined_rel_residual)
            .expect("finite residuals")
    });
    let best = candidates[0].clone();
    Ok(IdentResult {
        td: best.td,
        tau: best.tau,
        residuals_hz: best.residuals_hz,
        candidates,
        stats: None,
    })
}

/// Runs the identification task once, without perturbations.
pub fn identify(problem: &IdentProblem<'_>, prior: &PriorKnowledge) -> Result<IdentResult, IdentError> {
    match problem {
        IdentProblem::TwoFreq { obs, manifolds } => identify_two_freq(obs, manifolds, prior),
        IdentProblem::SingleTest {
            obs,
            manifold,
            known_gain,
        } => identify_single_test(obs, manifold, *known_gain, prior),
    }
}

fn perturbed<'a>(
    problem: &IdentProblem<'a>,
    sigma_rel: f64,
    seed: u64,
    draw: u64,
) -> IdentProblem<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw + 1);
    let mut jitter = |x: f64| -> f64 {
        let xi: f64 = StandardNormal.sample(&mut rng);
        x * (1.0 + sigma_rel * xi)
    };
    match problem {
        IdentProblem::TwoFreq { obs, manifolds } => {
            let mut obs = *obs;
            for o in obs.iter_mut() {
                o.freq_hz = jitter(o.freq_hz);
            }
            IdentProblem::TwoFreq {
                obs,
                manifolds: *manifolds,
            }
        }
        IdentProblem::SingleTest {
            obs,
            manifold,
            known_gain,
        } => {
            let mut obs = *obs;
            obs.freq_hz = jitter(obs.freq_hz);
            obs.amplitude = obs.amplitude.map(&mut jitter);
            IdentProblem::SingleTest {
                obs,
                manifold,
                known_gain: *known_gain,
            }
        }
    }
}

/// Monte-Carlo sensitivity: `n` identifications under independent
/// multiplicative Gaussian perturbations `(1 + σ ξ)` of every observed
/// quantity. Draws run in parallel on per-draw RNG substreams; failed draws
/// are excluded from the statistics and counted.
///
/// The returned point estimate is the unperturbed identification; `stats`
/// carries the per-parameter mean and sample standard deviation.
pub fn monte_carlo(
    problem: &IdentProblem<'_>,
    prior: &PriorKnowledge,
    sigma_rel: f64,
    n: usize,
    seed: u64,
) -> Result<IdentResult, IdentError> {
    if n < 2 {
        return Err(IdentError::InvalidParameter(format!(
            "Monte-Carlo needs at least 2 draws, got {n}"
        )));
    }
    if !(sigma_rel >= 0.0) || !sigma_rel.is_finite() {
        return Err(IdentError::InvalidParameter(format!(
            "noise level must be non-negative, got {sigma_rel}"
        )));
    }

    let mut point = identify(problem, prior)?;

    let outcomes: Vec<Option<(f64, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|draw| {
            let p = perturbed(problem, sigma_rel, seed, draw);
            match identify(&p, prior) {
                Ok(r) => Some((r.td, r.tau)),
                Err(_) => None,
            }
        })
        .collect();

    let successes: Vec<(f64, f64)> = outcomes.iter().flatten().cloned().collect();
    let failures = n - successes.len();
    if failures * 2 > n {
        return Err(IdentError::UnreliableStatistics { failures, total: n });
    }

    let m = successes.len() as f64;
    let mean_td = successes.iter().map(|s| s.0).sum::<f64>() / m;
    let mean_tau = successes.iter().map(|s| s.1).sum::<f64>() / m;
    let var = |f: &dyn Fn(&(f64, f64)) -> f64, mean: f64| -> f64 {
        if successes.len() < 2 {
            0.0
        } else {
            successes.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / (m - 1.0)
        }
    };
    let std_td = var(&|s| s.0, mean_td).sqrt();
    let std_tau = var(&|s| s.1, mean_tau).sqrt();

    point.stats = Some(McStats {
        mean_td,
        std_td,
        mean_tau,
        std_tau,
        draws: n,
        failures,
    });
    Ok(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{generate_ufm, AxisSpec, GenOptions, GridSpec};

    fn grid() -> GridSpec {
        GridSpec {
            tp: AxisSpec {
                min: 0.05,
                max: 0.2,
                count: 5,
            },
            td: AxisSpec {
                min: 0.3,
                max: 1.6,
                count: 10,
            },
        }
    }

    #[test]
    fn prior_validation() {
        assert!(PriorKnowledge::known_tp(0.1).is_ok());
        assert!(PriorKnowledge::known_tp(0.0).is_err());
        assert!(PriorKnowledge::new(0.1, (0.5, 0.4), (0.0, 1.0)).is_err());
    }

    #[test]
    fn mismatched_beta_rejected() {
        let (man, _) = generate_ufm(-0.5, &grid(), &GenOptions::default()).unwrap();
        let obs = TestObservation {
            beta: -0.7,
            relay_amplitude: 1.0,
            freq_hz: 1.0,
            amplitude: None,
        };
        let prior = PriorKnowledge::known_tp(0.1).unwrap();
        let err = identify_two_freq(&[obs, obs], &[&man, &man], &prior).unwrap_err();
        assert!(matches!(err, IdentError::Mismatch(_)));
    }

    #[test]
    fn equal_betas_rejected() {
        let (man, _) = generate_ufm(-0.5, &grid(), &GenOptions::default()).unwrap();
        let obs = TestObservation {
            beta: -0.5,
            relay_amplitude: 1.0,
            freq_hz: 1.0,
            amplitude: None,
        };
        let prior = PriorKnowledge::known_tp(0.1).unwrap();
        assert!(matches!(
            identify_two_freq(&[obs, obs], &[&man, &man], &prior),
            Err(IdentError::InvalidParameter(_))
        ));
    }

    #[test]
    fn zero_amplitude_has_no_match() {
        let (man, _) = generate_ufm(-0.5, &grid(), &GenOptions::default()).unwrap();
        let obs = TestObservation {
            beta: -0.5,
            relay_amplitude: 1.0,
            freq_hz: 1.0,
            amplitude: Some(0.0),
        };
        let prior = PriorKnowledge::known_tp(0.1).unwrap();
        let err = identify_single_test(&obs, &man, 1.0, &prior).unwrap_err();
        assert!(matches!(err, IdentError::NoAmplitudeMatch));
    }
}
