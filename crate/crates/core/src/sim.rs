//! Fixed-step closed-loop simulation of a time-delay plant under MRFT.
//!
//! The plant's rational part is realized in controllable canonical form and
//! integrated with a classical 4th-order Runge-Kutta step; the relay command
//! is piecewise constant over a step, and the transport delay is a command
//! ring buffer of `round(τ/dt)` samples (quantization bias below `dt/2`).

use std::collections::VecDeque;

use thiserror::Error;

use crate::plant::TimeDelayLti;
use crate::relay::{MrftConfig, MrftState};
use crate::siglog::SignalLog;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("simulation diverged at t = {t:.6} s (|y| = {y:.3e} exceeded {limit:.3e})")]
    Diverged { t: f64, y: f64, limit: f64 },
}

/// Simulation controls. `dt` and `duration` are mandatory; the helpers
/// [`suggested_dt`] and [`suggested_duration`] pick values that resolve the
/// plant's fastest time constant and hold at least a dozen limit-cycle
/// periods.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    pub duration: f64,
    /// Output magnitude treated as divergence.
    pub divergence_limit: f64,
    /// Initial state of the canonical realization (defaults to rest).
    pub initial_state: Option<Vec<f64>>,
}

impl SimOptions {
    pub fn new(dt: f64, duration: f64) -> Self {
        Self {
            dt,
            duration,
            divergence_limit: 1e9,
            initial_state: None,
        }
    }
}

/// Default step: the fastest time parameter divided by 50, floored at 10 µs.
pub fn suggested_dt(plant: &TimeDelayLti) -> f64 {
    let mut fastest = f64::INFINITY;
    for &t in plant.num_tcs().iter().chain(plant.den_tcs().iter()) {
        fastest = fastest.min(t);
    }
    if plant.delay() > 0.0 {
        fastest = fastest.min(plant.delay());
    }
    if !fastest.is_finite() {
        fastest = plant.time_scale_sum().max(1.0);
    }
    (fastest / 50.0).max(1e-5)
}

/// Duration holding `periods` cycles of an oscillation around `freq_hz`.
pub fn duration_for_periods(freq_hz: f64, periods: f64) -> f64 {
    periods / freq_hz
}

/// State-space realization (controllable canonical form) of the rational
/// part of a plant. The delay is handled outside via the command buffer.
#[derive(Debug, Clone)]
pub(crate) struct CanonicalForm {
    /// Monic denominator coefficients `a_0 .. a_{n-1}` (of `s^0 .. s^{n-1}`).
    den: Vec<f64>,
    /// Output row: `y = Σ c_k x_{k+1}`.
    out: Vec<f64>,
}

impl CanonicalForm {
    pub(crate) fn from_plant(plant: &TimeDelayLti) -> Self {
        // Denominator polynomial s^n_i * Π (T_Dj s + 1), lowest power first.
        let mut den = vec![1.0];
        for &t in plant.den_tcs() {
            den = poly_mul(&den, &[1.0, t]);
        }
        let mut shifted = vec![0.0; plant.integrators() as usize];
        shifted.extend_from_slice(&den);
        let lead = *shifted.last().expect("nonempty polynomial");
        let n = shifted.len() - 1;
        let den_monic: Vec<f64> = shifted[..n].iter().map(|c| c / lead).collect();

        // Numerator polynomial K * Π (T_Ni s + 1), scaled by the same lead.
        let mut num = vec![plant.gain()];
        for &t in plant.num_tcs() {
            num = poly_mul(&num, &[1.0, t]);
        }
        let mut out = vec![0.0; n];
        for (k, c) in num.iter().enumerate() {
            out[k] = c / lead;
        }
        Self {
            den: den_monic,
            out,
        }
    }

    pub(crate) fn order(&self) -> usize {
        self.den.len()
    }

    pub(crate) fn output(&self, x: &[f64]) -> f64 {
        self.out.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let n = x.len();
        for i in 0..n - 1 {
            dx[i] = x[i + 1];
        }
        let mut last = u;
        for (a, v) in self.den.iter().zip(x) {
            last -= a * v;
        }
        dx[n - 1] = last;
    }

    /// One RK4 step with the input held constant.
    pub(crate) fn step(&self, x: &mut [f64], u: f64, dt: f64, scratch: &mut Rk4Scratch) {
        let n = x.len();
        let Rk4Scratch { k1, k2, k3, k4, xt } = scratch;
        self.derivative(x, u, k1);
        for i in 0..n {
            xt[i] = x[i] + 0.5 * dt * k1[i];
        }
        self.derivative(xt, u, k2);
        for i in 0..n {
            xt[i] = x[i] + 0.5 * dt * k2[i];
        }
        self.derivative(xt, u, k3);
        for i in 0..n {
            xt[i] = x[i] + dt * k3[i];
        }
        self.derivative(xt, u, k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xt: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            xt: vec![0.0; n],
        }
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Runs the closed loop (zero reference, `e = -y`) and returns the sampled
/// trajectory.
pub fn simulate_mrft(
    plant: &TimeDelayLti,
    cfg: &MrftConfig,
    opts: &SimOptions,
) -> Result<SignalLog, SimError> {
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(SimError::InvalidParameter(format!(
            "dt must be positive, got {}",
            opts.dt
        )));
    }
    if !(opts.duration > 0.0) || !opts.duration.is_finite() {
        return Err(SimError::InvalidParameter(format!(
            "duration must be positive, got {}",
            opts.duration
        )));
    }

    let form = CanonicalForm::from_plant(plant);
    let n = form.order();
    let mut x = match &opts.initial_state {
        Some(x0) => {
            if x0.len() != n {
                return Err(SimError::InvalidParameter(format!(
                    "initial state has {} entries, realization order is {n}",
                    x0.len()
                )));
            }
            x0.clone()
        }
        None => vec![0.0; n],
    };
    let mut scratch = Rk4Scratch::new(n);

    let steps = (opts.duration / opts.dt).round() as usize;
    let delay_steps = (plant.delay() / opts.dt).round() as usize;
    let mut relay = MrftState::new();
    // Command history before t = 0 equals the initial relay output.
    let mut buffer: VecDeque<f64> = std::iter::repeat(relay.output(cfg))
        .take(delay_steps)
        .collect();

    let mut e_log = Vec::with_capacity(steps);
    let mut u_log = Vec::with_capacity(steps);
    let mut y_log = Vec::with_capacity(steps);

    for k in 0..steps {
        let y = form.output(&x);
        if !y.is_finite() || y.abs() > opts.divergence_limit {
            return Err(SimError::Diverged {
                t: k as f64 * opts.dt,
                y,
                limit: opts.divergence_limit,
            });
        }
        let e = -y;
        let u = relay.update(cfg, e);
        let u_delayed = if delay_steps == 0 {
            u
        } else {
            buffer.push_back(u);
            buffer.pop_front().expect("buffer holds delay_steps entries")
        };
        e_log.push(e);
        u_log.push(u);
        y_log.push(y);
        form.step(&mut x, u_delayed, opts.dt, &mut scratch);
    }

    Ok(SignalLog::from_samples(opts.dt, e_log, u_log, Some(y_log)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::SoiptdParams;
    use approx::assert_relative_eq;

    fn eq26_plant() -> TimeDelayLti {
        SoiptdParams::new(0.14 * 1.42, 0.1, 1.0 / 1.42, 0.06)
            .unwrap()
            .to_plant()
    }

    #[test]
    fn canonical_form_matches_frequency_response() {
        // Steady-state sine response of the realization must match the
        // closed-form W(jω) (delay handled separately, so compare without it).
        let plant = SoiptdParams::new(1.3, 0.08, 0.9, 0.0).unwrap().to_plant();
        let form = CanonicalForm::from_plant(&plant);
        let n = form.order();
        let omega = 3.0;
        let dt = 1e-4;
        let mut x = vec![0.0; n];
        let mut scratch = Rk4Scratch::new(n);
        // Integrate long enough for the stable part to settle.
        let steps = (400.0 / omega / dt) as usize;
        let mut samples = Vec::new();
        for k in 0..steps {
            let t = k as f64 * dt;
            form.step(&mut x, (omega * t).sin(), dt, &mut scratch);
            if k >= steps - (2.0 * std::f64::consts::PI / omega / dt) as usize {
                samples.push(form.output(&x));
            }
        }
        // Remove the integrator's arbitrary constant before comparing.
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let amp = samples
            .iter()
            .map(|y| (y - mean).abs())
            .fold(0.0f64, f64::max);
        let expected = plant.freq_response(omega).unwrap().norm();
        assert_relative_eq!(amp, expected, max_relative = 1e-3);
    }

    #[test]
    fn rejects_bad_steps() {
        let plant = eq26_plant();
        let cfg = MrftConfig::new(-0.7, 1.0).unwrap();
        assert!(matches!(
            simulate_mrft(&plant, &cfg, &SimOptions::new(0.0, 1.0)),
            Err(SimError::InvalidParameter(_))
        ));
        assert!(matches!(
            simulate_mrft(&plant, &cfg, &SimOptions::new(1e-3, -1.0)),
            Err(SimError::InvalidParameter(_))
        ));
    }

    #[test]
    fn relay_output_is_two_valued_and_alternating() {
        let plant = eq26_plant();
        let cfg = MrftConfig::new(-0.7, 2.5).unwrap();
        let opts = SimOptions::new(suggested_dt(&plant), 20.0);
        let log = simulate_mrft(&plant, &cfg, &opts).unwrap();
        let mut last = log.u()[0];
        assert_eq!(last.abs(), 2.5);
        let mut switches = 0;
        for &u in log.u() {
            assert!(u == 2.5 || u == -2.5);
            if u != last {
                assert_eq!(u, -last);
                switches += 1;
                last = u;
            }
        }
        assert!(switches >= 12, "expected a sustained oscillation");
    }

    #[test]
    fn divergence_guard_fires() {
        // An unstable "plant" is emulated by a huge gain and a tiny limit.
        let plant = eq26_plant().gain_scale(1e12).unwrap();
        let cfg = MrftConfig::new(-0.7, 1.0).unwrap();
        let mut opts = SimOptions::new(1e-3, 50.0);
        opts.divergence_limit = 1.0;
        assert!(matches!(
            simulate_mrft(&plant, &cfg, &opts),
            Err(SimError::Diverged { .. })
        ));
    }
}
