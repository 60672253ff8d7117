//! Validation of the exact limit-cycle machinery against independent
//! references: a square-wave-driven open-loop time simulation for the
//! periodic output, the closed-loop simulator for the solved cycles, and the
//! benchmark SOIPTD plant whose test frequencies are known.

use std::f64::consts::PI;

use relay_ident::plant::{SoiptdParams, TimeDelayLti};
use relay_ident::{
    detect_limit_cycle, df_predict, output_amplitude, periodic_output, simulate_mrft,
    solve_limit_cycle, solve_limit_cycle_all, DetectOptions, MrftConfig, SimOptions,
};

/// Benchmark plant: K·T_d = 0.14, T_p = 0.1 s, T_d = 1/1.42 s, τ = 0.06 s.
/// Under MRFT it oscillates at 1.022 Hz (β = -0.7) and 0.708 Hz (β = -0.4).
fn benchmark_plant() -> TimeDelayLti {
    SoiptdParams::new(0.14 * 1.42, 0.1, 1.0 / 1.42, 0.06)
        .unwrap()
        .to_plant()
}

/// Open-loop oracle: integrates the SOIPTD cascade driven by an exact ±h
/// square wave (switch times known analytically, delay applied to the input
/// phase) until periodic steady state. Deliberately independent of the
/// library's canonical-form realization and delay buffer.
struct SquareWaveOracle {
    /// Output samples over the final period, mean-removed.
    samples: Vec<f64>,
    dt: f64,
}

impl SquareWaveOracle {
    fn run(k0: f64, tp: f64, td: f64, tau: f64, h: f64, omega: f64) -> Self {
        let period = 2.0 * PI / omega;
        let n_per_period = 8192usize;
        let dt = period / n_per_period as f64;
        let periods = 80usize;

        // Cascade states: propulsion lag, aerodynamic lag, integrator.
        let (mut x1, mut x2, mut x3) = (0.0f64, 0.0f64, 0.0f64);
        // Square wave switching -h -> +h at t = 0, delayed by tau.
        let input = |t: f64| -> f64 {
            let phase = (t - tau).rem_euclid(period);
            if phase < 0.5 * period {
                h
            } else {
                -h
            }
        };
        let deriv = |x1: f64, x2: f64, x3: f64, u: f64| -> (f64, f64, f64) {
            let dx1 = (k0 * u - x1) / tp;
            let dx2 = (x1 - x2) / td;
            let _ = x3;
            (dx1, dx2, x2)
        };

        let total = periods * n_per_period;
        let mut tail = vec![0.0f64; n_per_period];
        for step in 0..total {
            let t = step as f64 * dt;
            // Input is constant over [t, t+dt) because switch instants are
            // integer multiples of period/2 and dt divides the half-period
            // (tau shifts the phase identically for all RK stages).
            let u = input(t + 0.5 * dt);
            let (k1a, k1b, k1c) = deriv(x1, x2, x3, u);
            let (k2a, k2b, k2c) = deriv(x1 + 0.5 * dt * k1a, x2 + 0.5 * dt * k1b, x3 + 0.5 * dt * k1c, u);
            let (k3a, k3b, k3c) = deriv(x1 + 0.5 * dt * k2a, x2 + 0.5 * dt * k2b, x3 + 0.5 * dt * k2c, u);
            let (k4a, k4b, k4c) = deriv(x1 + dt * k3a, x2 + dt * k3b, x3 + dt * k3c, u);
            x1 += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            x2 += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            x3 += dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
            if step >= total - n_per_period {
                tail[step - (total - n_per_period)] = x3;
            }
        }
        // The integrator carries an arbitrary constant; remove the mean.
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        for v in tail.iter_mut() {
            *v -= mean;
        }
        Self { samples: tail, dt }
    }

    fn at(&self, t: f64) -> f64 {
        let period = self.dt * self.samples.len() as f64;
        let pos = t.rem_euclid(period) / self.dt;
        let i = pos.floor() as usize % self.samples.len();
        let j = (i + 1) % self.samples.len();
        let frac = pos - pos.floor();
        self.samples[i] * (1.0 - frac) + self.samples[j] * frac
    }

    fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

#[test]
fn periodic_output_matches_square_wave_simulation() {
    let plant = benchmark_plant();
    let omega = 2.0 * PI * 1.022;
    let oracle = SquareWaveOracle::run(0.14, 0.1, 1.0 / 1.42, 0.06, 1.0, omega);
    let a_y = output_amplitude(&plant, 1.0, omega).unwrap();
    assert!((oracle.peak() - a_y).abs() <= 3e-3 * a_y);

    let period = 2.0 * PI / omega;
    for i in 0..32 {
        let t = i as f64 / 32.0 * period;
        let y_series = periodic_output(&plant, 1.0, omega, t).unwrap();
        let y_sim = oracle.at(t);
        assert!(
            (y_series - y_sim).abs() <= 3e-3 * a_y,
            "t = {t:.4}: series {y_series:.6e} vs simulation {y_sim:.6e} (a_y {a_y:.6e})"
        );
    }
}

#[test]
fn benchmark_frequencies_from_solver() {
    let plant = benchmark_plant();
    for (beta, expected) in [(-0.7, 1.022), (-0.4, 0.708)] {
        let cfg = MrftConfig::new(beta, 1.0).unwrap();
        let cycle = solve_limit_cycle(&plant, &cfg).unwrap();
        assert!(
            (cycle.freq_hz - expected).abs() <= 0.005 * expected,
            "beta {beta}: solver gave {} Hz, expected {expected} Hz",
            cycle.freq_hz
        );
    }
}

#[test]
fn benchmark_frequencies_from_simulation() {
    let plant = benchmark_plant();
    for (beta, expected) in [(-0.7, 1.022), (-0.4, 0.708)] {
        let cfg = MrftConfig::new(beta, 1.0).unwrap();
        let opts = SimOptions::new(1.2e-3, 30.0 / expected);
        let log = simulate_mrft(&plant, &cfg, &opts).unwrap();
        let cycle = detect_limit_cycle(&log, &cfg, &DetectOptions::default()).unwrap();
        assert!(
            (cycle.freq_hz - expected).abs() <= 0.01 * expected,
            "beta {beta}: simulation gave {} Hz, expected {expected} Hz",
            cycle.freq_hz
        );
    }
}

#[test]
fn solver_and_simulation_agree() {
    let plant = benchmark_plant();
    for beta in [-0.7, -0.4] {
        let cfg = MrftConfig::new(beta, 1.0).unwrap();
        let solved = solve_limit_cycle(&plant, &cfg).unwrap();
        let opts = SimOptions::new(6e-4, 40.0 / solved.freq_hz);
        let log = simulate_mrft(&plant, &cfg, &opts).unwrap();
        let detected = detect_limit_cycle(&log, &cfg, &DetectOptions::default()).unwrap();
        let df = (solved.freq_hz - detected.freq_hz).abs() / solved.freq_hz;
        let da = (solved.amplitude - detected.amplitude).abs() / solved.amplitude;
        assert!(df < 5e-3, "beta {beta}: frequency mismatch {df:.2e}");
        assert!(da < 2e-2, "beta {beta}: amplitude mismatch {da:.2e}");
    }
}

#[test]
fn gain_and_h_scaling_leave_simulated_frequency() {
    let plant = benchmark_plant();
    let cfg = MrftConfig::new(-0.7, 1.0).unwrap();
    let opts = SimOptions::new(1.2e-3, 30.0);
    let base = detect_limit_cycle(
        &simulate_mrft(&plant, &cfg, &opts).unwrap(),
        &cfg,
        &DetectOptions::default(),
    )
    .unwrap();

    let scaled = plant.gain_scale(10.0).unwrap();
    let cycle = detect_limit_cycle(
        &simulate_mrft(&scaled, &cfg, &opts).unwrap(),
        &cfg,
        &DetectOptions::default(),
    )
    .unwrap();
    assert!((cycle.freq_hz - base.freq_hz).abs() < 0.01 * base.freq_hz);
    assert!((cycle.amplitude - 10.0 * base.amplitude).abs() < 0.02 * 10.0 * base.amplitude);
}

#[test]
fn df_prediction_is_near_but_not_exact() {
    let plant = benchmark_plant();
    let cfg = MrftConfig::new(-0.7, 1.0).unwrap();
    let exact = solve_limit_cycle(&plant, &cfg).unwrap();
    let df = df_predict(&plant, &cfg).unwrap();
    let gap = (df.freq_hz - exact.freq_hz).abs() / exact.freq_hz;
    assert!(gap < 0.2, "DF is a coarse approximation, gap {gap:.3}");
    assert!(gap > 1e-4, "DF should differ measurably from the exact solve");
}

#[test]
fn all_roots_contains_principal_first() {
    let plant = benchmark_plant();
    let cfg = MrftConfig::new(-0.7, 1.0).unwrap();
    let all = solve_limit_cycle_all(&plant, &cfg).unwrap();
    let principal = solve_limit_cycle(&plant, &cfg).unwrap();
    assert!(!all.is_empty());
    assert!((all[0].freq_hz - principal.freq_hz).abs() < 1e-9 * principal.freq_hz);
    let df = df_predict(&plant, &cfg).unwrap();
    for c in &all[1..] {
        assert!(
            (c.freq_hz / df.freq_hz).ln().abs() >= (all[0].freq_hz / df.freq_hz).ln().abs()
        );
    }
}
