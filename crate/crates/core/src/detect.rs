//! Limit-cycle detection on recorded MRFT trajectories.
//!
//! Switch instants of the relay command are refined by linearly
//! interpolating the error across the firing threshold; the cycle frequency
//! is the reciprocal of the mean of the trailing full periods, accepted only
//! when the relative period spread is small.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relay::MrftConfig;
use crate::siglog::SignalLog;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no relay switching in the log")]
    NoOscillation,
    #[error("oscillation not converged: {0}")]
    NotConverged(String),
}

/// Detection/acceptance thresholds.
#[derive(Debug, Clone)]
pub struct DetectOptions {
    /// Trailing full periods averaged for frequency and amplitude.
    pub trailing_periods: usize,
    /// Maximum relative spread of the trailing periods.
    pub max_period_spread: f64,
    /// Minimum number of relay switches in the log.
    pub min_switches: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            trailing_periods: 5,
            max_period_spread: 5e-3,
            min_switches: 12,
        }
    }
}

/// A detected or predicted steady oscillation. Frequencies are in Hz; the
/// amplitude is the error-signal half peak-to-peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Relative spread of the periods that entered the estimate (zero for
    /// solver predictions).
    pub period_spread: f64,
    /// Number of steady periods behind the estimate (zero for solver
    /// predictions).
    pub cycles: usize,
    /// Relative residual of the switching condition, for solver predictions.
    pub residual: Option<f64>,
}

/// Measures the steady oscillation in `log`.
///
/// The MRFT configuration is needed to reconstruct the switching thresholds
/// from the running error peaks when interpolating switch instants.
pub fn detect_limit_cycle(
    log: &SignalLog,
    cfg: &MrftConfig,
    opts: &DetectOptions,
) -> Result<LimitCycle, DetectError> {
    let u = log.u();
    let e = log.e();
    let dt = log.dt();

    // Indices where the command changed between sample k-1 and k.
    let mut switches = Vec::new();
    for k in 1..u.len() {
        if u[k] != u[k - 1] {
            switches.push(k);
        }
    }
    if switches.is_empty() {
        return Err(DetectError::NoOscillation);
    }
    if switches.len() < opts.min_switches {
        return Err(DetectError::NotConverged(format!(
            "only {} switches, need {}",
            switches.len(),
            opts.min_switches
        )));
    }

    // Refined instants of the -h -> +h transitions (one per full period).
    let mut rising = Vec::new();
    for (s, &k) in switches.iter().enumerate() {
        if u[k] <= u[k - 1] {
            continue;
        }
        let seg_start = if s == 0 { 0 } else { switches[s - 1] };
        let e_min = e[seg_start..k].iter().cloned().fold(f64::INFINITY, f64::min);
        let threshold = -cfg.beta() * e_min;
        let (e0, e1) = (e[k - 1], e[k]);
        let frac = if (e1 - e0).abs() > 0.0 && (threshold - e0) * (threshold - e1) <= 0.0 {
            ((threshold - e0) / (e1 - e0)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        rising.push((k as f64 - 1.0 + frac) * dt);
    }

    // Transient discard: keep instants in the second half of the record.
    let cutoff = 0.5 * log.duration();
    let steady: Vec<f64> = rising.into_iter().filter(|&t| t >= cutoff).collect();
    let needed = opts.trailing_periods + 1;
    if steady.len() < needed {
        return Err(DetectError::NotConverged(format!(
            "{} steady cycle marks after transient discard, need {}",
            steady.len(),
            needed
        )));
    }

    let marks = &steady[steady.len() - needed..];
    let periods: Vec<f64> = marks.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = periods.iter().sum::<f64>() / periods.len() as f64;
    let spread = (periods.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - periods.iter().cloned().fold(f64::INFINITY, f64::min))
        / mean;
    if spread >= opts.max_period_spread {
        return Err(DetectError::NotConverged(format!(
            "relative period spread {spread:.3e} exceeds {:.3e}",
            opts.max_period_spread
        )));
    }

    // Amplitude: mean over the trailing periods of (max e - min e)/2.
    let mut amp_sum = 0.0;
    for w in marks.windows(2) {
        let i0 = (w[0] / dt).ceil() as usize;
        let i1 = ((w[1] / dt).floor() as usize).min(e.len() - 1);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &e[i0..=i1] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        amp_sum += 0.5 * (hi - lo);
    }
    let amplitude = amp_sum / periods.len() as f64;

    Ok(LimitCycle {
        freq_hz: 1.0 / mean,
        amplitude,
        period_spread: spread,
        cycles: periods.len(),
        residual: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Synthetic log: e = sin(2πt), u the matching ±1 square wave.
    fn synthetic_log(periods: usize, dt: f64) -> SignalLog {
        let steps = (periods as f64 / dt) as usize;
        let mut e = Vec::with_capacity(steps);
        let mut u = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = k as f64 * dt;
            let phase = (2.0 * std::f64::consts::PI * t).sin();
            e.push(phase);
            u.push(if phase >= 0.0 { 1.0 } else { -1.0 });
        }
        SignalLog::from_samples(dt, e, u, None)
    }

    #[test]
    fn exact_square_wave_gives_unit_frequency() {
        let log = synthetic_log(20, 1e-3);
        let cfg = MrftConfig::new(0.0, 1.0).unwrap();
        let cycle = detect_limit_cycle(&log, &cfg, &DetectOptions::default()).unwrap();
        assert!((cycle.freq_hz - 1.0).abs() < 1e-6, "got {}", cycle.freq_hz);
        assert!((cycle.amplitude - 1.0).abs() < 1e-4);
        assert_eq!(cycle.cycles, 5);
    }

    #[test]
    fn truncated_log_not_converged() {
        let log = synthetic_log(3, 1e-3);
        let cfg = MrftConfig::new(0.0, 1.0).unwrap();
        assert!(matches!(
            detect_limit_cycle(&log, &cfg, &DetectOptions::default()),
            Err(DetectError::NotConverged(_))
        ));
    }

    #[test]
    fn constant_command_is_no_oscillation() {
        let log = SignalLog::from_samples(1e-3, vec![0.0; 100], vec![1.0; 100], None);
        let cfg = MrftConfig::new(0.0, 1.0).unwrap();
        assert!(matches!(
            detect_limit_cycle(&log, &cfg, &DetectOptions::default()),
            Err(DetectError::NoOscillation)
        ));
    }
}
