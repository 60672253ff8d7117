use std::time::Instant;

use relay_ident::identify::{
    identify_single_test, identify_two_freq, monte_carlo, IdentProblem, PriorKnowledge,
    TestObservation,
};
use relay_ident::manifold::{generate_ufm, AxisSpec, GenOptions, GridSpec};
use relay_ident::plant::SoiptdParams;
use relay_ident::{solve_limit_cycle, MrftConfig};

fn main() {
    let grid = GridSpec {
        tp: AxisSpec { min: 0.005, max: 0.5, count: 30 },
        td: AxisSpec { min: 0.05, max: 20.0, count: 60 },
    };
    let t0 = Instant::now();
    let (m04, s04) = generate_ufm(-0.4, &grid, &GenOptions::default()).unwrap();
    println!("manifold beta=-0.4: {:?} feasible={} infeasible={} failures={}",
        t0.elapsed(), s04.feasible, s04.infeasible, s04.failures.len());
    let t0 = Instant::now();
    let (m07, s07) = generate_ufm(-0.7, &grid, &GenOptions::default()).unwrap();
    println!("manifold beta=-0.7: {:?} feasible={} infeasible={} failures={}",
        t0.elapsed(), s07.feasible, s07.infeasible, s07.failures.len());

    // Ground truth plant and exact observations
    let k = 0.14 * 1.42;
    let (tp, td, tau) = (0.1, 1.0 / 1.42, 0.06);
    let plant = SoiptdParams::new(k, tp, td, tau).unwrap().to_plant();
    let c04 = solve_limit_cycle(&plant, &MrftConfig::new(-0.4, 1.0).unwrap()).unwrap();
    let c07 = solve_limit_cycle(&plant, &MrftConfig::new(-0.7, 1.0).unwrap()).unwrap();
    println!("obs: f(-0.4)={:.6} Hz  f(-0.7)={:.6} Hz a(-0.7)={:.6}", c04.freq_hz, c07.freq_hz, c07.amplitude);

    let obs = [
        TestObservation { beta: -0.4, relay_amplitude: 1.0, freq_hz: c04.freq_hz, amplitude: None },
        TestObservation { beta: -0.7, relay_amplitude: 1.0, freq_hz: c07.freq_hz, amplitude: Some(c07.amplitude * k) },
    ];
    let prior = PriorKnowledge::known_tp(tp).unwrap();

    let t0 = Instant::now();
    let two = identify_two_freq(&obs, &[&m04, &m07], &prior).unwrap();
    println!("two-freq noise-free: td={:.6} (true {:.6}, err {:.3}%) tau={:.6} (true {:.6}, err {:.3}%)  [{:?}]",
        two.td, td, (two.td/td - 1.0)*100.0, two.tau, tau, (two.tau/tau - 1.0)*100.0, t0.elapsed());

    // Single test at beta=-0.7 with amplitude; measured amplitude must be the
    // physical plant's amplitude: solve_limit_cycle already includes gain K.
    let single_obs = TestObservation {
        beta: -0.7, relay_amplitude: 1.0, freq_hz: c07.freq_hz, amplitude: Some(c07.amplitude),
    };
    let t0 = Instant::now();
    match identify_single_test(&single_obs, &m07, k, &prior) {
        Ok(one) => println!("single noise-free: td={:.6} (err {:.3}%) tau={:.6} (err {:.3}%) [{:?}]",
            one.td, (one.td/td-1.0)*100.0, one.tau, (one.tau/tau-1.0)*100.0, t0.elapsed()),
        Err(e) => println!("single noise-free FAILED: {e}"),
    }

    // Monte Carlo: two-frequency
    let t0 = Instant::now();
    let problem = IdentProblem::TwoFreq { obs, manifolds: [&m04, &m07] };
    match monte_carlo(&problem, &prior, 0.03, 1000, 42) {
        Ok(r) => {
            let s = r.stats.unwrap();
            println!("MC two-freq: mean_td={:.4} std_td={:.4} mean_tau={:.4} std_tau={:.4} failures={} [{:?}]",
                s.mean_td, s.std_td, s.mean_tau, s.std_tau, s.failures, t0.elapsed());
        }
        Err(e) => println!("MC two-freq FAILED: {e}"),
    }

    // Monte Carlo: single-test
    let t0 = Instant::now();
    let problem = IdentProblem::SingleTest { obs: single_obs, manifold: &m07, known_gain: k };
    match monte_carlo(&problem, &prior, 0.03, 1000, 42) {
        Ok(r) => {
            let s = r.stats.unwrap();
            println!("MC single: mean_td={:.4} std_td={:.4} mean_tau={:.4} std_tau={:.4} failures={} [{:?}]",
                s.mean_td, s.std_td, s.mean_tau, s.std_tau, s.failures, t0.elapsed());
        }
        Err(e) => println!("MC single FAILED: {e}"),
    }
}
