//! Unit frequency / unit gain manifolds for the SOIPTD family.
//!
//! A manifold grids the normalized parameter plane (T_p, T_d) at unit static
//! gain and solves, per cell, for the delay τ that puts the MRFT limit cycle
//! exactly at 1 Hz; the accompanying amplitude table (the unit gain manifold)
//! holds the oscillation amplitude at unit relay amplitude. Any measured test
//! frequency is reached from the 1 Hz normalization by time scaling, so a
//! single precomputed grid serves the whole parameter space.
//!
//! Cells where even the delay-free plant oscillates below 1 Hz are
//! infeasible and stored as explicit gaps, never extrapolated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use thiserror::Error;

use crate::lprs::{solve_limit_cycle_with, HarmonicSeries, LprsError, SolverOptions};
use crate::plant::SoiptdParams;
use crate::relay::MrftConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("measured frequency must be positive, got {0}")]
    InvalidFrequency(f64),
    #[error("{quantity} = {got:.6} outside grid coverage [{lo:.6}, {hi:.6}]")]
    OutOfGridRange {
        quantity: &'static str,
        got: f64,
        lo: f64,
        hi: f64,
    },
    #[error("unsupported manifold format version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt manifold file: {0}")]
    CorruptManifold(String),
    #[error(
        "stale manifold: cell ({i}, {j}) re-solves to {got_hz:.6} Hz, expected 1 Hz ± {tol_rel:.1e}"
    )]
    StaleManifold {
        i: usize,
        j: usize,
        got_hz: f64,
        tol_rel: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(#[from] LprsError),
}

/// Log-spaced axis description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self, ManifoldError> {
        if !(min > 0.0) || !(max > min) || count < 2 {
            return Err(ManifoldError::InvalidParameter(format!(
                "axis needs 0 < min < max and at least two points, got [{min}, {max}] x {count}"
            )));
        }
        Ok(Self { min, max, count })
    }

    fn values(&self) -> Vec<f64> {
        let span = (self.max / self.min).ln();
        (0..self.count)
            .map(|i| self.min * (span * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }
}

/// Grid over the normalized (T_p, T_d) plane. The default covers the
/// propulsion and aerodynamic time-constant ranges of small multirotors with
/// margin: T_p ∈ [0.005, 0.5] s × T_d ∈ [0.05, 20] s, 60 × 120 cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tp: AxisSpec,
    pub td: AxisSpec,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tp: AxisSpec {
                min: 0.005,
                max: 0.5,
                count: 60,
            },
            td: AxisSpec {
                min: 0.05,
                max: 20.0,
                count: 120,
            },
        }
    }
}

/// Generation tolerances and effort knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenOptions {
    /// Relative series tolerance for the per-cell delay solve.
    pub cell_series_eps: f64,
    /// Samples per period for the amplitude search in the cell solve.
    pub cell_samples: usize,
    /// Scan points when bracketing the delay.
    pub tau_scan_points: usize,
    /// Absolute bisection tolerance on the delay, seconds.
    pub tau_abs_tol: f64,
    /// Acceptance band for the verification re-solve, relative to 1 Hz.
    pub freq_tol_rel: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            cell_series_eps: 1e-6,
            cell_samples: 512,
            tau_scan_points: 240,
            tau_abs_tol: 1e-11,
            freq_tol_rel: 1e-3,
        }
    }
}

/// Generator metadata embedded in the manifold file (deterministic; run
/// timestamps belong to sidecar files, not here).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub solver_version: String,
    pub cell_series_eps: f64,
    pub tau_scan_points: usize,
    pub freq_tol_rel: f64,
}

/// Precomputed unit frequency manifold with its unit gain amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub format_version: u32,
    pub model: String,
    pub beta: f64,
    pub freq_hz: f64,
    pub gain: f64,
    pub tp_axis: Vec<f64>,
    pub td_axis: Vec<f64>,
    /// τ per cell, seconds; `null` marks infeasible cells. Indexed
    /// `tau[i][j]` with `i` over `tp_axis` and `j` over `td_axis`.
    pub tau: Vec<Vec<Option<f64>>>,
    /// Oscillation amplitude per cell at unit gain and unit relay amplitude.
    pub amp: Vec<Vec<Option<f64>>>,
    pub generator: GeneratorMeta,
    pub checksum: String,
}

/// Per-cell failure recorded during generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub i: usize,
    pub j: usize,
    pub tp: f64,
    pub td: f64,
    pub reason: String,
}

/// Generation report: counts plus the cells that failed to solve (these are
/// stored as infeasible).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSummary {
    pub feasible: usize,
    pub infeasible: usize,
    pub failures: Vec<CellFailure>,
}

enum CellOutcome {
    Feasible { tau: f64, amp: f64 },
    Infeasible,
    Failed(String),
}

/// Solves one grid cell: the delay τ ≥ 0 such that the MRFT cycle of
/// SOIPTD(1, tp, td, τ) sits at exactly 1 Hz.
///
/// The limit-cycle frequency decreases monotonically with τ, so at the fixed
/// normalization frequency the switching condition has a first root in τ
/// that is found by scan + bisection; the harmonic magnitudes do not depend
/// on τ, which makes every trial delay a cheap rotation of one precomputed
/// series. A full re-solve at the found delay verifies the cell (and the
/// monotonicity assumption) before it is accepted.
fn solve_cell(tp: f64, td: f64, beta: f64, opts: &GenOptions) -> CellOutcome {
    let omega = 2.0 * PI; // 1 Hz normalization
    let plant = match SoiptdParams::new(1.0, tp, td, 0.0) {
        Ok(p) => p.to_plant(),
        Err(e) => return CellOutcome::Failed(e.to_string()),
    };
    let series = match HarmonicSeries::build(
        &plant,
        1.0,
        omega,
        opts.cell_series_eps,
        SolverOptions::default().max_harmonics,
    ) {
        Ok(s) => s,
        Err(e) => return CellOutcome::Failed(e.to_string()),
    };

    let a_y = |tau: f64| series.delayed(tau).max_abs(opts.cell_samples, false);
    let y_sw = |tau: f64| series.delayed(tau).y_switch();

    let mut a_ref = a_y(0.0);
    let g0 = y_sw(0.0) - beta * a_ref;
    if g0 < 0.0 {
        // The delay-free plant already oscillates below 1 Hz.
        return CellOutcome::Infeasible;
    }
    if g0 == 0.0 {
        return CellOutcome::Feasible {
            tau: 0.0,
            amp: a_ref,
        };
    }

    // Outer fixed-point on the amplitude, inner root in τ at frozen a_ref.
    let tau_max = 1.0; // one full period of delay at the 1 Hz normalization
    let mut tau_root = None;
    for _ in 0..16 {
        let g = |tau: f64| y_sw(tau) - beta * a_ref;
        let n = opts.tau_scan_points;
        let mut bracket = None;
        let mut prev = (0.0, g(0.0));
        for s in 1..=n {
            let tau = tau_max * s as f64 / n as f64;
            let val = g(tau);
            if prev.1 == 0.0 || prev.1.signum() != val.signum() {
                bracket = Some((prev.0, tau));
                break;
            }
            prev = (tau, val);
        }
        let (mut lo, mut hi) = match bracket {
            Some(b) => b,
            None => return CellOutcome::Failed("no switching-condition root in τ".into()),
        };
        let mut glo = g(lo);
        while hi - lo > opts.tau_abs_tol {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if gm.signum() == glo.signum() {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let a_new = a_y(tau);
        let converged = (a_new - a_ref).abs() <= 1e-10 * a_new;
        a_ref = a_new;
        tau_root = Some(tau);
        if converged {
            break;
        }
    }
    let tau = match tau_root {
        Some(t) => t,
        None => return CellOutcome::Failed("amplitude fixed point did not settle".into()),
    };

    // Verification re-solve with the standard solver; failure here marks the
    // cell rather than aborting generation.
    let cfg = MrftConfig::new(beta, 1.0).expect("validated beta");
    let verify_plant = SoiptdParams::new(1.0, tp, td, tau)
        .expect("positive cell parameters")
        .to_plant();
    match solve_limit_cycle_with(&verify_plant, &cfg, &SolverOptions::default()) {
        Ok(cycle) => {
            if (cycle.freq_hz - 1.0).abs() <= opts.freq_tol_rel {
                CellOutcome::Feasible {
                    tau,
                    amp: cycle.amplitude,
                }
            } else {
                CellOutcome::Failed(format!(
                    "verification re-solve at {:.6} Hz, outside 1 Hz ± {:.1e}",
                    cycle.freq_hz, opts.freq_tol_rel
                ))
            }
        }
        Err(e) => CellOutcome::Failed(format!("verification failed: {e}")),
    }
}

/// Generates the unit frequency manifold (and its unit gain amplitudes) for
/// one MRFT β. Cells are independent and solved in parallel; the result is
/// deterministic for identical inputs.
pub fn generate_ufm(
    beta: f64,
    grid: &GridSpec,
    opts: &GenOptions,
) -> Result<(Manifold, GenSummary), ManifoldError> {
    if !(beta.abs() < 1.0) {
        return Err(ManifoldError::InvalidParameter(format!(
            "beta must satisfy |beta| < 1, got {beta}"
        )));
    }
    let tp_axis = AxisSpec::new(grid.tp.min, grid.tp.max, grid.tp.count)?.values();
    let td_axis = AxisSpec::new(grid.td.min, grid.td.max, grid.td.count)?.values();

    let cells: Vec<(usize, usize)> = (0..tp_axis.len())
        .flat_map(|i| (0..td_axis.len()).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(i, j)| solve_cell(tp_axis[i], td_axis[j], beta, opts))
        .collect();

    let mut tau = vec![vec![None; td_axis.len()]; tp_axis.len()];
    let mut amp = vec![vec![None; td_axis.len()]; tp_axis.len()];
    let mut summary = GenSummary {
        feasible: 0,
        infeasible: 0,
        failures: Vec::new(),
    };
    for (&(i, j), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            CellOutcome::Feasible { tau: t, amp: a } => {
                tau[i][j] = Some(t);
                amp[i][j] = Some(a);
                summary.feasible += 1;
            }
            CellOutcome::Infeasible => summary.infeasible += 1,
            CellOutcome::Failed(reason) => {
                summary.infeasible += 1;
                summary.failures.push(CellFailure {
                    i,
                    j,
                    tp: tp_axis[i],
                    td: td_axis[j],
                    reason,
                });
            }
        }
    }

    let mut man = Manifold {
        format_version: FORMAT_VERSION,
        model: "SOIPTD".to_string(),
        beta,
        freq_hz: 1.0,
        gain: 1.0,
        tp_axis,
        td_axis,
        tau,
        amp,
        generator: GeneratorMeta {
            solver_version: env!("CARGO_PKG_VERSION").to_string(),
            cell_series_eps: opts.cell_series_eps,
            tau_scan_points: opts.tau_scan_points,
            freq_tol_rel: opts.freq_tol_rel,
        },
        checksum: String::new(),
    };
    man.checksum = man.compute_checksum();
    Ok((man, summary))
}

impl Manifold {
    /// SHA-256 over the canonical payload (everything except the checksum).
    pub fn compute_checksum(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            format_version: u32,
            model: &'a str,
            beta: f64,
            freq_hz: f64,
            gain: f64,
            tp_axis: &'a [f64],
            td_axis: &'a [f64],
            tau: &'a [Vec<Option<f64>>],
            amp: &'a [Vec<Option<f64>>],
            generator: &'a GeneratorMeta,
        }
        let payload = Payload {
            format_version: self.format_version,
            model: &self.model,
            beta: self.beta,
            freq_hz: self.freq_hz,
            gain: self.gain,
            tp_axis: &self.tp_axis,
            td_axis: &self.td_axis,
            tau: &self.tau,
            amp: &self.amp,
            generator: &self.generator,
        };
        let json = serde_json::to_string(&payload).expect("manifold payload serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn feasible_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.tau.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if cell.is_some() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn validate_structure(&self) -> Result<(), ManifoldError> {
        if self.model != "SOIPTD" {
            return Err(ManifoldError::CorruptManifold(format!(
                "unknown model tag {:?}",
                self.model
            )));
        }
        let rows = self.tp_axis.len();
        let cols = self.td_axis.len();
        if self.tau.len() != rows || self.amp.len() != rows {
            return Err(ManifoldError::CorruptManifold(
                "table row count does not match tp axis".into(),
            ));
        }
        for (row_t, row_a) in self.tau.iter().zip(&self.amp) {
            if row_t.len() != cols || row_a.len() != cols {
                return Err(ManifoldError::CorruptManifold(
                    "table column count does not match td axis".into(),
                ));
            }
        }
        for axis in [&self.tp_axis, &self.td_axis] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ManifoldError::CorruptManifold(
                    "axes must be strictly increasing".into(),
                ));
            }
        }
        for row in &self.tau {
            for cell in row.iter().flatten() {
                if !(*cell >= 0.0) {
                    return Err(ManifoldError::CorruptManifold(
                        "negative delay entry".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Writes the manifold as pretty-printed JSON (numbers keep full `f64`
/// round-trip precision).
pub fn save_manifold<W: Write>(man: &Manifold, mut sink: W) -> Result<(), ManifoldError> {
    let json = serde_json::to_string_pretty(man)
        .map_err(|e| ManifoldError::CorruptManifold(e.to_string()))?;
    sink.write_all(json.as_bytes())?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn save_manifold_file<P: AsRef<Path>>(man: &Manifold, path: P) -> Result<(), ManifoldError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_manifold(man, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Load-time validation controls.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Number of random feasible cells re-solved on load.
    pub spot_checks: usize,
    pub spot_check_seed: u64,
    /// Acceptance band of the spot re-solve, relative to 1 Hz.
    pub freq_tol_rel: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            spot_checks: 8,
            spot_check_seed: 0x5EED,
            freq_tol_rel: 5e-3,
        }
    }
}

/// Reads and validates a manifold: version, checksum, structural invariants,
/// then a spot re-solve of random feasible cells.
pub fn load_manifold<R: Read>(source: R, opts: &LoadOptions) -> Result<Manifold, ManifoldError> {
    let value: serde_json::Value = serde_json::from_reader(source)
        .map_err(|e| ManifoldError::CorruptManifold(format!("parse error: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ManifoldError::CorruptManifold("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(ManifoldError::UnsupportedVersion(version as u32));
    }
    let man: Manifold = serde_json::from_value(value)
        .map_err(|e| ManifoldError::CorruptManifold(format!("parse error: {e}")))?;
    if man.compute_checksum() != man.checksum {
        return Err(ManifoldError::CorruptManifold("checksum mismatch".into()));
    }
    man.validate_structure()?;

    let feasible = man.feasible_cells();
    if !feasible.is_empty() && opts.spot_checks > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.spot_check_seed);
        let cfg = MrftConfig::new(man.beta, 1.0)
            .map_err(|e| ManifoldError::CorruptManifold(e.to_string()))?;
        for _ in 0..opts.spot_checks {
            let (i, j) = feasible[rng.gen_range(0..feasible.len())];
            let tau = man.tau[i][j].expect("feasible cell");
            let plant = SoiptdParams::new(1.0, man.tp_axis[i], man.td_axis[j], tau)
                .map_err(|e| ManifoldError::CorruptManifold(e.to_string()))?
                .to_plant();
            let cycle = solve_limit_cycle_with(&plant, &cfg, &SolverOptions::default())?;
            if (cycle.freq_hz - man.freq_hz).abs() > opts.freq_tol_rel * man.freq_hz {
                return Err(ManifoldError::StaleManifold {
                    i,
                    j,
                    got_hz: cycle.freq_hz,
                    tol_rel: opts.freq_tol_rel,
                });
            }
        }
    }
    Ok(man)
}

pub fn load_manifold_file<P: AsRef<Path>>(
    path: P,
    opts: &LoadOptions,
) -> Result<Manifold, ManifoldError> {
    load_manifold(BufReader::new(File::open(path)?), opts)
}

/// A manifold scaled to a measured test frequency: every time parameter is
/// multiplied by `γ = 1 Hz / Ω_measured` and the amplitudes by `γ` (degree
/// one in the time scale for the single-integrator model).
#[derive(Debug, Clone)]
pub struct ScaledManifold {
    pub beta: f64,
    pub gamma: f64,
    pub tp_axis: Vec<f64>,
    pub td_axis: Vec<f64>,
    pub tau: Vec<Vec<Option<f64>>>,
    pub amp: Vec<Vec<Option<f64>>>,
}

/// Scales the unit manifold to a measured frequency in Hz.
pub fn scale_manifold(man: &Manifold, omega_hz: f64) -> Result<ScaledManifold, ManifoldError> {
    if !(omega_hz > 0.0) || !omega_hz.is_finite() {
        return Err(ManifoldError::InvalidFrequency(omega_hz));
    }
    let gamma = man.freq_hz / omega_hz;
    let scale = |axis: &[f64]| axis.iter().map(|v| v * gamma).collect::<Vec<_>>();
    let scale_table = |table: &[Vec<Option<f64>>], factor: f64| {
        table
            .iter()
            .map(|row| row.iter().map(|c| c.map(|v| v * factor)).collect())
            .collect::<Vec<Vec<Option<f64>>>>()
    };
    Ok(ScaledManifold {
        beta: man.beta,
        gamma,
        tp_axis: scale(&man.tp_axis),
        td_axis: scale(&man.td_axis),
        tau: scale_table(&man.tau, gamma),
        amp: scale_table(&man.amp, gamma),
    })
}

/// One slice of a scaled manifold at a known T_p: the curve τ(T_d) with the
/// matching amplitude values; infeasible cells propagate as gaps.
#[derive(Debug, Clone)]
pub struct SliceCurve {
    pub tp: f64,
    pub td: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    pub amp: Vec<Option<f64>>,
}

impl ScaledManifold {
    /// Bilinear interpolation in log(T_p) (the grid is log-spaced); values
    /// are interpolated linearly. Both bracketing rows must be feasible for
    /// a column to produce a value.
    pub fn slice_at_tp(&self, tp: f64) -> Result<SliceCurve, ManifoldError> {
        let axis = &self.tp_axis;
        let (lo, hi) = (axis[0], axis[axis.len() - 1]);
        if !(tp >= lo && tp <= hi) {
            return Err(ManifoldError::OutOfGridRange {
                quantity: "T_p",
                got: tp,
                lo,
                hi,
            });
        }
        let pos = axis.partition_point(|&v| v < tp);
        let (i0, i1, w) = if pos == 0 {
            (0, 0, 0.0)
        } else if pos == axis.len() {
            (axis.len() - 1, axis.len() - 1, 0.0)
        } else {
            let (a, b) = (axis[pos - 1], axis[pos]);
            (pos - 1, pos, (tp.ln() - a.ln()) / (b.ln() - a.ln()))
        };

        let blend = |row0: &[Option<f64>], row1: &[Option<f64>]| {
            row0.iter()
                .zip(row1)
                .map(|(a, b)| match (a, b) {
                    (Some(x), Some(y)) => Some((1.0 - w) * x + w * y),
                    _ => None,
                })
                .collect::<Vec<Option<f64>>>()
        };
        Ok(SliceCurve {
            tp,
            td: self.td_axis.clone(),
            tau: blend(&self.tau[i0], &self.tau[i1]),
            amp: blend(&self.amp[i0], &self.amp[i1]),
        })
    }
}
