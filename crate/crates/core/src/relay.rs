//! The modified relay feedback test (MRFT) switching law.
//!
//! The relay output is `±h`; switching thresholds are proportional to the
//! running error peaks, `b1 = -β e_min` for the `-h → +h` transition and
//! `-b2 = -β e_max` for the `+h → -h` transition. With β < 0 the thresholds
//! anticipate the zero crossing, exciting a limit cycle at a phase below
//! -180°; β = 0 degenerates to the ideal relay.
//!
//! Thresholds are evaluated as directional crossings of the sampled error
//! (previous sample on the approach side), not as bare level conditions: the
//! level form alone re-triggers immediately after a switch, because right
//! after the `-h → +h` transition the error still sits below the `+h → -h`
//! threshold.

use serde::{Deserialize, Serialize};

use crate::sim::SimError;

/// MRFT test parameters: phase parameter β (|β| < 1) and relay amplitude h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrftConfig {
    beta: f64,
    h: f64,
}

impl MrftConfig {
    pub fn new(beta: f64, h: f64) -> Result<Self, SimError> {
        if !(beta.abs() < 1.0) {
            return Err(SimError::InvalidParameter(format!(
                "beta must satisfy |beta| < 1, got {beta}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(SimError::InvalidParameter(format!(
                "relay amplitude must be positive, got {h}"
            )));
        }
        Ok(Self { beta, h })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Mutable state of the relay: last output, running error peaks since the
/// last two switches, and the previous error sample for crossing detection.
#[derive(Debug, Clone, Copy)]
pub struct MrftState {
    output_positive: bool,
    e_max: f64,
    e_min: f64,
    e_prev: Option<f64>,
}

impl Default for MrftState {
    /// Startup per the bootstrap convention: output +h with zero recorded
    /// peaks, so both thresholds degenerate to plain zero crossings until the
    /// first oscillation peaks are seen.
    fn default() -> Self {
        Self {
            output_positive: true,
            e_max: 0.0,
            e_min: 0.0,
            e_prev: None,
        }
    }
}

impl MrftState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Relay output for the current state, scaled by `h`.
    pub fn output(&self, cfg: &MrftConfig) -> f64 {
        if self.output_positive {
            cfg.h
        } else {
            -cfg.h
        }
    }

    /// Running maximum error since the relay last switched to +h.
    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    /// Running minimum error since the relay last switched to -h.
    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    /// Feeds one error sample and returns the relay command `±h`.
    ///
    /// Total function: never fails, holds the previous output when no
    /// threshold crossing fires. A transition fires when the error reaches
    /// the threshold (inclusive) having approached from the other side;
    /// sitting exactly on the threshold holds the previous output.
    pub fn update(&mut self, cfg: &MrftConfig, e: f64) -> f64 {
        let e_prev = self.e_prev.replace(e);

        if let Some(prev) = e_prev {
            if self.output_positive {
                // Track the positive peak; switch to -h when the error falls
                // to -b2 = -β e_max from above.
                self.e_max = self.e_max.max(e);
                let th = -cfg.beta * self.e_max;
                if prev >= th && e <= th && (prev > th || e < th) {
                    self.output_positive = false;
                    self.e_min = e;
                }
            } else {
                // Track the negative peak; switch to +h when the error rises
                // to b1 = -β e_min from below.
                self.e_min = self.e_min.min(e);
                let th = -cfg.beta * self.e_min;
                if prev <= th && e >= th && (prev < th || e > th) {
                    self.output_positive = true;
                    self.e_max = e;
                }
            }
        } else if self.output_positive {
            self.e_max = self.e_max.max(e);
        } else {
            self.e_min = self.e_min.min(e);
        }
        self.output(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(beta: f64) -> MrftConfig {
        MrftConfig::new(beta, 1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MrftConfig::new(-0.7, 1.0).is_ok());
        assert!(MrftConfig::new(1.0, 1.0).is_err());
        assert!(MrftConfig::new(-1.3, 1.0).is_err());
        assert!(MrftConfig::new(0.0, 0.0).is_err());
        assert!(MrftConfig::new(0.0, -2.0).is_err());
    }

    #[test]
    fn beta_zero_is_ideal_relay_with_hold() {
        let c = cfg(0.0);
        let mut s = MrftState::new();
        assert_eq!(s.update(&c, 0.5), 1.0);
        assert_eq!(s.update(&c, -0.1), -1.0); // falls through zero
        assert_eq!(s.update(&c, -0.4), -1.0);
        assert_eq!(s.update(&c, 0.0), 1.0); // rises back to zero
        assert_eq!(s.update(&c, 0.0), 1.0); // holds at exactly zero
    }

    #[test]
    fn rising_error_crosses_b1() {
        // Eq-form check: β=-0.5, e_min=-1, u(t-)=-h. b1 = -β e_min = -0.5:
        // the error rising to -0.5 flips the relay to +h.
        let c = cfg(-0.5);
        let mut s = MrftState::new();
        // Drive one positive then negative half-cycle to set the peaks.
        for &e in &[0.5, 1.0, 0.6, -0.8, -1.0] {
            s.update(&c, e);
        }
        assert_eq!(s.output(&c), -1.0);
        assert_eq!(s.e_min(), -1.0);
        assert_eq!(s.update(&c, -0.5), 1.0);
    }

    #[test]
    fn positive_branch_holds_before_peak() {
        // With u=+h and the error rising, the relay must hold +h; the
        // -b2 = -β e_max threshold only counts on the way down.
        let c = cfg(-0.5);
        let mut s = MrftState::new();
        for &e in &[0.5, 1.0, 0.6, -0.8, -1.0, -0.5] {
            s.update(&c, e);
        }
        assert_eq!(s.output(&c), 1.0);
        assert_eq!(s.update(&c, 0.3), 1.0);
        assert_eq!(s.update(&c, 0.9), 1.0); // rising through 0.5: hold
        assert_eq!(s.update(&c, 0.45), -1.0); // falling through -b2 = -β e_max
    }

    #[test]
    fn switches_alternate() {
        let c = cfg(-0.7);
        let mut s = MrftState::new();
        let mut last = s.output(&c);
        let mut flips = 0;
        for i in 0..10_000 {
            let t = i as f64 * 1e-3;
            let e = (6.0 * t).sin();
            let u = s.update(&c, e);
            if u != last {
                assert_eq!(u, -last, "relay must alternate strictly");
                flips += 1;
                last = u;
            }
        }
        assert!(flips > 4);
    }
}
