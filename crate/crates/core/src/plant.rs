//! Linear time-delay plants and the scaling operations used throughout the
//! identification pipeline.
//!
//! A [`TimeDelayLti`] is a strictly proper transfer function
//!
//! ```text
//!             ∏_i (T_Ni s + 1)
//! W(s) = K ─────────────────────── e^(-τ s)
//!           s^n ∏_j (T_Dj s + 1)
//! ```
//!
//! with static gain `K`, `n` integrators, real numerator/denominator time
//! constants and a transport delay. The UAV models handled here are all
//! second-order-plus-integrator-plus-time-delay (SOIPTD) instances of this
//! form; [`SoiptdParams`], [`AttitudeParams`] and [`AltitudeParams`] map
//! physical parameters onto it.
//!
//! Angular frequency is rad/s everywhere inside the library; frequencies in
//! Hz appear only at user-facing interfaces.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frequency must be positive, got {0}")]
    InvalidFrequency(f64),
    #[error("zero drag coefficient: aerodynamic time constant is undefined")]
    DegenerateDrag,
}

/// Strictly proper LTI plant with transport delay.
///
/// Immutable after construction; all methods are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDelayLti {
    gain: f64,
    integrators: u32,
    num_tcs: Vec<f64>,
    den_tcs: Vec<f64>,
    delay: f64,
}

impl TimeDelayLti {
    pub fn new(
        gain: f64,
        integrators: u32,
        num_tcs: Vec<f64>,
        den_tcs: Vec<f64>,
        delay: f64,
    ) -> Result<Self, PlantError> {
        if gain == 0.0 || !gain.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "static gain must be finite and nonzero, got {gain}"
            )));
        }
        for &t in num_tcs.iter().chain(den_tcs.iter()) {
            if !(t > 0.0) || !t.is_finite() {
                return Err(PlantError::InvalidParameter(format!(
                    "time constants must be finite and positive, got {t}"
                )));
            }
        }
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "delay must be finite and non-negative, got {delay}"
            )));
        }
        if integrators as usize + den_tcs.len() <= num_tcs.len() {
            return Err(PlantError::InvalidParameter(
                "plant must be strictly proper (integrators + poles > zeros)".into(),
            ));
        }
        Ok(Self {
            gain,
            integrators,
            num_tcs,
            den_tcs,
            delay,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn integrators(&self) -> u32 {
        self.integrators
    }

    pub fn num_tcs(&self) -> &[f64] {
        &self.num_tcs
    }

    pub fn den_tcs(&self) -> &[f64] {
        &self.den_tcs
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// Pole excess `n + |T_D| - |T_N|`; at least 1 by construction.
    pub fn relative_degree(&self) -> u32 {
        self.integrators + self.den_tcs.len() as u32 - self.num_tcs.len() as u32
    }

    /// Sum of all time constants and the delay, used as the characteristic
    /// time scale when bracketing frequency searches.
    pub fn time_scale_sum(&self) -> f64 {
        self.num_tcs.iter().sum::<f64>() + self.den_tcs.iter().sum::<f64>() + self.delay
    }

    /// Magnitude and analytically unwrapped phase of `W(jω)`.
    ///
    /// The phase is the closed-form sum of arctangent, integrator and delay
    /// terms, so values below -π (reached at MRFT operating points with
    /// β < 0) are representable without wrapping.
    pub fn magnitude_phase(&self, omega: f64) -> Result<(f64, f64), PlantError> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(PlantError::InvalidFrequency(omega));
        }
        let mut mag = self.gain.abs();
        let mut phase = if self.gain < 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        };
        for &t in &self.num_tcs {
            let x = t * omega;
            mag *= (x * x + 1.0).sqrt();
            phase += x.atan();
        }
        for &t in &self.den_tcs {
            let x = t * omega;
            mag /= (x * x + 1.0).sqrt();
            phase -= x.atan();
        }
        let ni = self.integrators as f64;
        mag /= omega.powf(ni);
        phase -= ni * FRAC_PI_2;
        phase -= self.delay * omega;
        Ok((mag, phase))
    }

    /// Frequency response `W(jω)` assembled from the product-form magnitude
    /// and phase.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64, PlantError> {
        let (mag, phase) = self.magnitude_phase(omega)?;
        Ok(Complex64::from_polar(mag, phase))
    }

    /// Multiplies the static gain by `alpha`, leaving every time parameter
    /// untouched.
    pub fn gain_scale(&self, alpha: f64) -> Result<Self, PlantError> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "gain scale must be finite and nonzero, got {alpha}"
            )));
        }
        let mut scaled = self.clone();
        scaled.gain *= alpha;
        Ok(scaled)
    }

    /// Multiplies every time constant and the delay by `gamma`, leaving the
    /// static gain and integrator count untouched.
    pub fn time_scale(&self, gamma: f64) -> Result<Self, PlantError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "time scale must be finite and positive, got {gamma}"
            )));
        }
        let mut scaled = self.clone();
        for t in scaled.num_tcs.iter_mut().chain(scaled.den_tcs.iter_mut()) {
            *t *= gamma;
        }
        scaled.delay *= gamma;
        Ok(scaled)
    }
}

/// SOIPTD parameters in the `K T_d e^(-τs) / (s (T_p s + 1)(T_d s + 1))`
/// convention: `K` is the static gain, `T_p` the propulsion and `T_d` the
/// aerodynamic time constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoiptdParams {
    pub k: f64,
    pub tp: f64,
    pub td: f64,
    pub tau: f64,
}

impl SoiptdParams {
    pub fn new(k: f64, tp: f64, td: f64, tau: f64) -> Result<Self, PlantError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "SOIPTD gain must be positive, got {k}"
            )));
        }
        if !(tp > 0.0) || !(td > 0.0) || !tp.is_finite() || !td.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "SOIPTD time constants must be positive, got T_p={tp}, T_d={td}"
            )));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "SOIPTD delay must be non-negative, got {tau}"
            )));
        }
        Ok(Self { k, tp, td, tau })
    }

    /// Realizes the SOIPTD transfer function as a [`TimeDelayLti`].
    ///
    /// The `K·T_d` numerator is folded into the plant's static gain at this
    /// point, so that `time_scale` keeps the static gain invariant (the
    /// homogeneity lemmas are stated for that convention) while `gain_scale`
    /// touches only the gain.
    pub fn to_plant(self) -> TimeDelayLti {
        TimeDelayLti::new(
            self.k * self.td,
            1,
            Vec::new(),
            vec![self.tp, self.td],
            self.tau,
        )
        .expect("validated SOIPTD parameters always form a proper plant")
    }
}

/// Builds the SOIPTD plant for validated parameters.
pub fn soiptd(params: SoiptdParams) -> TimeDelayLti {
    params.to_plant()
}

/// Physical parameters of the decoupled rotational loop: inertia `J_x`,
/// rotational drag `B_x`, actuator moment gain `k_M`, propulsion lag `T_p`
/// and the propulsion / IMU delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeParams {
    pub jx: f64,
    pub bx: f64,
    pub km: f64,
    pub tp: f64,
    pub tau_p: f64,
    pub tau_imu: f64,
}

impl AttitudeParams {
    /// Maps the rotational dynamics onto the SOIPTD structure:
    /// `T_d = J_x/B_x`, `τ = τ_p + τ_imu`, `K = k_M/J_x`.
    pub fn to_soiptd(&self) -> Result<SoiptdParams, PlantError> {
        for (name, v) in [
            ("J_x", self.jx),
            ("k_M", self.km),
            ("T_p", self.tp),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.bx == 0.0 {
            return Err(PlantError::DegenerateDrag);
        }
        if !(self.bx > 0.0) || !self.bx.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "B_x must be positive, got {}",
                self.bx
            )));
        }
        for (name, v) in [("tau_p", self.tau_p), ("tau_imu", self.tau_imu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        SoiptdParams::new(
            self.km / self.jx,
            self.tp,
            self.jx / self.bx,
            self.tau_p + self.tau_imu,
        )
    }
}

/// Builds the SOIPTD plant of the rotational loop.
pub fn attitude_plant(params: &AttitudeParams) -> Result<TimeDelayLti, PlantError> {
    Ok(params.to_soiptd()?.to_plant())
}

/// Physical parameters of the altitude loop: mass `m`, thrust gain `k_F`,
/// propeller count `μ_n`, vertical drag `D_z`, propulsion lag `T_p` and the
/// propulsion / position-sensor delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltitudeParams {
    pub mass: f64,
    pub kf: f64,
    pub mu_n: f64,
    pub dz: f64,
    pub tp: f64,
    pub tau_p: f64,
    pub tau_pos: f64,
}

impl AltitudeParams {
    /// Maps the altitude dynamics onto the SOIPTD structure:
    /// `T_d = 1/D_z`, `τ = τ_p + τ_pos`, `K = μ_n k_F/m`.
    pub fn to_soiptd(&self) -> Result<SoiptdParams, PlantError> {
        for (name, v) in [
            ("mass", self.mass),
            ("k_F", self.kf),
            ("mu_n", self.mu_n),
            ("T_p", self.tp),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.dz == 0.0 {
            return Err(PlantError::DegenerateDrag);
        }
        if !(self.dz > 0.0) || !self.dz.is_finite() {
            return Err(PlantError::InvalidParameter(format!(
                "D_z must be positive, got {}",
                self.dz
            )));
        }
        for (name, v) in [("tau_p", self.tau_p), ("tau_pos", self.tau_pos)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        SoiptdParams::new(
            self.mu_n * self.kf / self.mass,
            self.tp,
            1.0 / self.dz,
            self.tau_p + self.tau_pos,
        )
    }
}

/// Builds the SOIPTD plant of the altitude loop.
pub fn altitude_plant(params: &AltitudeParams) -> Result<TimeDelayLti, PlantError> {
    Ok(params.to_soiptd()?.to_plant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn pure_integrator_response() {
        let p = TimeDelayLti::new(1.0, 1, vec![], vec![], 0.0).unwrap();
        let w = p.freq_response(1.0).unwrap();
        assert_relative_eq!(w.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(w.im, -1.0, epsilon = 1e-15);
        let (mag, phase) = p.magnitude_phase(1.0).unwrap();
        assert_relative_eq!(mag, 1.0);
        assert_relative_eq!(phase, -PI / 2.0);
    }

    #[test]
    fn soiptd_layout() {
        let p = SoiptdParams::new(1.0, 0.1, 0.7042, 0.06).unwrap().to_plant();
        assert_eq!(p.integrators(), 1);
        assert_eq!(p.num_tcs(), &[] as &[f64]);
        assert_eq!(p.den_tcs(), &[0.1, 0.7042]);
        assert_relative_eq!(p.gain(), 0.7042);
        assert_relative_eq!(p.delay(), 0.06);
    }

    #[test]
    fn soiptd_zero_delay_is_valid() {
        let p = SoiptdParams::new(1.0, 0.1, 0.7, 0.0).unwrap().to_plant();
        assert_eq!(p.delay(), 0.0);
    }

    #[test]
    fn soiptd_rejects_nonpositive_time_constant() {
        assert!(matches!(
            SoiptdParams::new(1.0, -0.1, 0.7, 0.06),
            Err(PlantError::InvalidParameter(_))
        ));
        assert!(matches!(
            SoiptdParams::new(1.0, 0.1, 0.0, 0.06),
            Err(PlantError::InvalidParameter(_))
        ));
    }

    #[test]
    fn rejects_improper_plant() {
        assert!(TimeDelayLti::new(1.0, 0, vec![1.0], vec![2.0], 0.0).is_err());
        assert!(TimeDelayLti::new(1.0, 1, vec![1.0], vec![2.0], 0.0).is_ok());
    }

    #[test]
    fn invalid_frequency_rejected() {
        let p = SoiptdParams::new(1.0, 0.1, 0.7, 0.06).unwrap().to_plant();
        assert!(matches!(
            p.freq_response(0.0),
            Err(PlantError::InvalidFrequency(_))
        ));
        assert!(matches!(
            p.freq_response(-3.0),
            Err(PlantError::InvalidFrequency(_))
        ));
    }

    #[test]
    fn gain_scale_is_linear_and_phase_invariant() {
        let p = SoiptdParams::new(0.7, 0.08, 1.3, 0.04).unwrap().to_plant();
        let alpha = 3.7;
        let q = p.gain_scale(alpha).unwrap();
        for &omega in &[0.3, 1.0, 4.5, 20.0] {
            let wp = p.freq_response(omega).unwrap();
            let wq = q.freq_response(omega).unwrap();
            assert_relative_eq!(wq.re, alpha * wp.re, max_relative = 1e-14);
            assert_relative_eq!(wq.im, alpha * wp.im, max_relative = 1e-14);
            let (_, php) = p.magnitude_phase(omega).unwrap();
            let (_, phq) = q.magnitude_phase(omega).unwrap();
            assert_relative_eq!(php, phq, epsilon = 1e-14);
        }
    }

    #[test]
    fn time_scale_identity_and_composition() {
        let p = SoiptdParams::new(1.0, 0.1, 0.7042, 0.06).unwrap().to_plant();
        assert_eq!(p.time_scale(1.0).unwrap(), p);

        let a = 1.7;
        let b = 0.4;
        let ab = p.time_scale(a).unwrap().time_scale(b).unwrap();
        let direct = p.time_scale(a * b).unwrap();
        for (x, y) in ab.den_tcs().iter().zip(direct.den_tcs()) {
            assert_relative_eq!(x, y, max_relative = 1e-15);
        }
        assert_relative_eq!(ab.delay(), direct.delay(), max_relative = 1e-15);
        assert_eq!(ab.gain(), direct.gain());
    }

    #[test]
    fn time_scale_by_two() {
        let p = SoiptdParams::new(1.0, 0.1, 0.7042, 0.06).unwrap().to_plant();
        let q = p.time_scale(2.0).unwrap();
        assert_relative_eq!(q.den_tcs()[0], 0.2);
        assert_relative_eq!(q.den_tcs()[1], 1.4084);
        assert_relative_eq!(q.delay(), 0.12);
        assert_eq!(q.gain(), p.gain());
    }

    #[test]
    fn frequency_scaling_identity() {
        // |W_γ(jω/γ)| = γ^n |W(jω)| with identical phase.
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let k = 0.1 + 5.0 * next();
            let ni = 1 + (next() * 2.0) as u32;
            let tn = if next() < 0.5 {
                vec![0.01 + next()]
            } else {
                vec![]
            };
            let td = vec![0.02 + next(), 0.1 + 2.0 * next()];
            let tau = 0.2 * next();
            let p = TimeDelayLti::new(k, ni, tn, td, tau).unwrap();
            let gamma = 0.1 * (10.0f64 / 0.1).powf(next());
            let q = p.time_scale(gamma).unwrap();
            let omega = 0.2 + 8.0 * next();
            let (mp, php) = p.magnitude_phase(omega).unwrap();
            let (mq, phq) = q.magnitude_phase(omega / gamma).unwrap();
            assert_relative_eq!(mq, gamma.powi(ni as i32) * mp, max_relative = 1e-11);
            assert_relative_eq!(phq, php, epsilon = 1e-11);
        }
    }

    #[test]
    fn attitude_mapping() {
        let p = AttitudeParams {
            jx: 1.0,
            bx: 1.42,
            km: 0.14,
            tp: 0.1,
            tau_p: 0.06,
            tau_imu: 0.0,
        };
        let s = p.to_soiptd().unwrap();
        assert_relative_eq!(s.td, 1.0 / 1.42, max_relative = 1e-15);
        assert_relative_eq!(s.tau, 0.06);
        assert_relative_eq!(s.k, 0.14);

        let with_imu = AttitudeParams {
            tau_imu: 0.015,
            ..p
        };
        assert_relative_eq!(with_imu.to_soiptd().unwrap().tau, 0.075);

        let ratio = AttitudeParams {
            jx: 2.0,
            bx: 1.0,
            ..p
        };
        assert_relative_eq!(ratio.to_soiptd().unwrap().td, 2.0);
    }

    #[test]
    fn attitude_degenerate_drag() {
        let p = AttitudeParams {
            jx: 1.0,
            bx: 0.0,
            km: 0.14,
            tp: 0.1,
            tau_p: 0.06,
            tau_imu: 0.0,
        };
        assert!(matches!(p.to_soiptd(), Err(PlantError::DegenerateDrag)));
    }

    #[test]
    fn altitude_mapping() {
        let p = AltitudeParams {
            mass: 1.0,
            kf: 1.0,
            mu_n: 6.0,
            dz: 1.0,
            tp: 0.05,
            tau_p: 0.02,
            tau_pos: 0.03,
        };
        let s = p.to_soiptd().unwrap();
        assert_relative_eq!(s.td, 1.0);
        assert_relative_eq!(s.tau, 0.05);
        assert_relative_eq!(s.k, 6.0);

        let half_drag = AltitudeParams { dz: 0.5, ..p };
        assert_relative_eq!(half_drag.to_soiptd().unwrap().td, 2.0);

        // An extra position-sensor delay adds to the total delay exactly.
        let extra = AltitudeParams {
            tau_pos: p.tau_pos + 0.02,
            ..p
        };
        assert_relative_eq!(
            extra.to_soiptd().unwrap().tau - s.tau,
            0.02,
            max_relative = 1e-12
        );

        let degenerate = AltitudeParams { dz: 0.0, ..p };
        assert!(matches!(
            degenerate.to_soiptd(),
            Err(PlantError::DegenerateDrag)
        ));
    }
}
