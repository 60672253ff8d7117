//! Least-squares fitting of first-order-plus-dead-time step responses.
//!
//! Bench propulsion tests apply a step command at `t = 0` and record the
//! thrust; the model `k (1 - e^{-(t-τ_p)/T_p}) · 1(t ≥ τ_p)` is fitted by a
//! grid search over the dead time on the sample grid, a golden-section
//! search over the lag, and a closed-form gain per candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no step detected in the record")]
    NoStepDetected,
}

/// Fitted first-order-plus-dead-time parameters and the fit quality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepFit {
    pub gain: f64,
    pub time_constant: f64,
    pub dead_time: f64,
    pub rms_residual: f64,
}

/// One force/time record; time is seconds relative to the step command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub t: f64,
    pub f: f64,
}

fn model_basis(t: &[f64], dead_time: f64, time_constant: f64, out: &mut [f64]) {
    for (phi, &ti) in out.iter_mut().zip(t) {
        *phi = if ti >= dead_time {
            1.0 - (-(ti - dead_time) / time_constant).exp()
        } else {
            0.0
        };
    }
}

/// Sum of squared residuals with the gain solved in closed form.
fn sse_with_gain(f: &[f64], basis: &[f64]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &phi) in f.iter().zip(basis) {
        num += y * phi;
        den += phi * phi;
    }
    let gain = if den > 0.0 { num / den } else { 0.0 };
    let mut sse = 0.0;
    for (&y, &phi) in f.iter().zip(basis) {
        let r = y - gain * phi;
        sse += r * r;
    }
    (gain, sse)
}

/// Fits the step-response model to a force record.
///
/// `samples` must be time-sorted with a pre-step baseline (t < 0 allowed)
/// and a settled post-step region. The dead time is searched over the
/// non-negative sample times; for each candidate the lag is minimized by
/// golden-section search on a logarithmic scale and the gain follows in
/// closed form.
pub fn fit_step_response(samples: &[StepSample]) -> Result<StepFit, FitError> {
    if samples.len() < 8 {
        return Err(FitError::InvalidParameter(format!(
            "need at least 8 samples, got {}",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(FitError::InvalidParameter(
            "samples must be strictly increasing in time".into(),
        ));
    }

    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let f: Vec<f64> = samples.iter().map(|s| s.f).collect();
    let n = t.len();

    // Step presence: the settled tail must rise clearly above the baseline
    // scatter.
    let head = &f[..(n / 5).max(2)];
    let tail = &f[n - (n / 5).max(2)..];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let head_mean = mean(head);
    let tail_mean = mean(tail);
    let head_std = {
        let m = head_mean;
        (head.iter().map(|v| (v - m).powi(2)).sum::<f64>() / head.len() as f64).sqrt()
    };
    let magnitude = (tail_mean - head_mean).abs();
    let floor = 1e-9 * f.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if magnitude <= (5.0 * head_std).max(floor) || magnitude == 0.0 {
        return Err(FitError::NoStepDetected);
    }

    let span = t[n - 1] - t[0];
    let first_nonneg = t.partition_point(|&v| v < 0.0);
    if first_nonneg >= n {
        return Err(FitError::NoStepDetected);
    }

    // Dead-time candidates: sample times in the first half of the post-step
    // window. A coarse pass locates the basin, a fine pass resolves it to
    // the sample grid.
    let last_candidate =
        t.partition_point(|&v| v <= t[first_nonneg] + 0.5 * (t[n - 1] - t[first_nonneg]));
    let candidates: Vec<usize> = (first_nonneg..last_candidate).collect();
    if candidates.is_empty() {
        return Err(FitError::NoStepDetected);
    }

    let mut basis = vec![0.0; n];
    let mut evaluate = |dead_time: f64| -> (f64, f64, f64) {
        // Golden-section over ln T_p.
        let (lo, hi) = ((span * 1e-4).ln(), span.ln());
        let inv_phi = 0.618_033_988_749_894_9_f64;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let sse_at = |x: f64, basis: &mut [f64]| -> f64 {
            model_basis(&t, dead_time, x.exp(), basis);
            sse_with_gain(&f, basis).1
        };
        let mut fc = sse_at(c, &mut basis);
        let mut fd = sse_at(d, &mut basis);
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = sse_at(c, &mut basis);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = sse_at(d, &mut basis);
            }
        }
        let tc = (0.5 * (a + b)).exp();
        model_basis(&t, dead_time, tc, &mut basis);
        let (gain, sse) = sse_with_gain(&f, &basis);
        (gain, tc, sse)
    };

    // Coarse pass over every 8th candidate, then the full grid near the best.
    let coarse_step = 8usize;
    let mut best: Option<(usize, f64, f64, f64)> = None; // (idx, gain, T_p, sse)
    let mut consider = |idx: usize, best: &mut Option<(usize, f64, f64, f64)>| {
        let (gain, tc, sse) = evaluate(t[idx]);
        if best.map_or(true, |b| sse < b.3) {
            *best = Some((idx, gain, tc, sse));
        }
    };
    for &idx in candidates.iter().step_by(coarse_step) {
        consider(idx, &mut best);
    }
    let coarse_best = best.expect("at least one candidate").0;
    let lo = coarse_best.saturating_sub(coarse_step).max(candidates[0]);
    let hi = (coarse_best + coarse_step).min(*candidates.last().expect("nonempty"));
    for idx in lo..=hi {
        consider(idx, &mut best);
    }

    let (idx, gain, time_constant, sse) = best.expect("candidates were evaluated");
    Ok(StepFit {
        gain,
        time_constant,
        dead_time: t[idx],
        rms_residual: (sse / n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(k: f64, tp: f64, tau: f64, dt: f64, t_end: f64, noise: f64, seed: u64) -> Vec<StepSample> {
        // xorshift noise, deterministic and dependency-free
        let mut state = seed.max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            // rough N(0,1) from sum of uniforms
            let mut acc = 0.0;
            for _ in 0..12 {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                acc += (state >> 11) as f64 / (1u64 << 53) as f64;
            }
            acc - 6.0
        };
        let mut out = Vec::new();
        let mut t = -0.2 * t_end;
        while t <= t_end {
            let clean = if t >= tau {
                k * (1.0 - (-(t - tau) / tp).exp())
            } else {
                0.0
            };
            out.push(StepSample {
                t,
                f: clean + noise * k * next(),
            });
            t += dt;
        }
        out
    }

    #[test]
    fn noise_free_recovery_is_exact() {
        let data = synth(1.0, 0.0422, 0.017, 1e-4, 0.5, 0.0, 7);
        let fit = fit_step_response(&data).unwrap();
        assert!((fit.gain - 1.0).abs() < 5e-3);
        assert!((fit.time_constant - 0.0422).abs() < 5e-3 * 0.0422);
        assert!((fit.dead_time - 0.017).abs() < 5e-3 * 0.017);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn noisy_recovery_within_tolerance() {
        let data = synth(1.0, 0.0499, 0.0203, 1e-4, 0.5, 0.01, 42);
        let fit = fit_step_response(&data).unwrap();
        assert!((fit.gain - 1.0).abs() < 0.03);
        assert!((fit.time_constant - 0.0499).abs() < 0.03 * 0.0499);
        assert!((fit.dead_time - 0.0203).abs() < 0.03 * 0.0203);
    }

    #[test]
    fn constant_signal_is_no_step() {
        let data: Vec<StepSample> = (0..200)
            .map(|i| StepSample {
                t: i as f64 * 1e-3 - 0.05,
                f: 0.25,
            })
            .collect();
        assert!(matches!(
            fit_step_response(&data),
            Err(FitError::NoStepDetected)
        ));
    }
}
