//! Uniformly sampled signal logs and their CSV form.
//!
//! The on-disk format is a UTF-8 CSV with header `t,e,u` or `t,e,u,y`,
//! `#`-prefixed comment lines permitted, time in seconds. This is both what
//! the simulator emits and what [`SignalLog::read_csv`] ingests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("format error: {0}")]
    Format(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sampled closed-loop trajectory: error, relay command and (optionally)
/// plant output on a uniform time grid. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalLog {
    dt: f64,
    e: Vec<f64>,
    u: Vec<f64>,
    y: Option<Vec<f64>>,
}

impl SignalLog {
    pub fn from_samples(dt: f64, e: Vec<f64>, u: Vec<f64>, y: Option<Vec<f64>>) -> Self {
        assert!(dt > 0.0, "sample period must be positive");
        assert_eq!(e.len(), u.len(), "e and u must have equal length");
        if let Some(y) = &y {
            assert_eq!(e.len(), y.len(), "e and y must have equal length");
        }
        Self { dt, e, u, y }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.e.len() as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    /// Relay amplitude inferred from the command column.
    pub fn relay_amplitude(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, &u| m.max(u.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        if self.y.is_some() {
            writeln!(w, "t,e,u,y")?;
        } else {
            writeln!(w, "t,e,u")?;
        }
        for i in 0..self.e.len() {
            let t = self.time(i);
            match &self.y {
                Some(y) => writeln!(w, "{t},{},{},{}", self.e[i], self.u[i], y[i])?,
                None => writeln!(w, "{t},{},{}", self.e[i], self.u[i])?,
            }
        }
        Ok(())
    }

    pub fn write_csv_file<P: AsRef<Path>>(&self, path: P) -> Result<(), LogError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses and validates a signal-log CSV: required columns, strictly
    /// increasing time with a constant step (1e-6 relative), and a relay
    /// command taking at most two distinct values.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, LogError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .has_headers(true)
            .from_reader(r);

        let headers = reader
            .headers()
            .map_err(|e| LogError::Format(format!("cannot read header: {e}")))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (it, ie, iu) = match (col("t"), col("e"), col("u")) {
            (Some(t), Some(e), Some(u)) => (t, e, u),
            _ => {
                return Err(LogError::Format(
                    "header must contain columns t, e, u".into(),
                ))
            }
        };
        let iy = col("y");

        let mut t = Vec::new();
        let mut e = Vec::new();
        let mut u = Vec::new();
        let mut y = iy.map(|_| Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|err| {
                LogError::Format(format!("row {}: {err}", row + 2))
            })?;
            let parse = |idx: usize, name: &str| -> Result<f64, LogError> {
                record
                    .get(idx)
                    .ok_or_else(|| {
                        LogError::Format(format!("row {}: missing column {name}", row + 2))
                    })?
                    .parse::<f64>()
                    .map_err(|_| {
                        LogError::Format(format!(
                            "row {}: column {name} is not a number",
                            row + 2
                        ))
                    })
            };
            t.push(parse(it, "t")?);
            e.push(parse(ie, "e")?);
            u.push(parse(iu, "u")?);
            if let (Some(iy), Some(y)) = (iy, y.as_mut()) {
                y.push(parse(iy, "y")?);
            }
        }
        if t.len() < 2 {
            return Err(LogError::Format("log needs at least two samples".into()));
        }

        let dt = t[1] - t[0];
        if !(dt > 0.0) {
            return Err(LogError::Sampling(
                "time stamps must be strictly increasing".into(),
            ));
        }
        for i in 1..t.len() {
            let step = t[i] - t[i - 1];
            if !(step > 0.0) {
                return Err(LogError::Sampling(format!(
                    "time stamps must be strictly increasing (row {})",
                    i + 2
                )));
            }
            if (step - dt).abs() > 1e-6 * dt {
                return Err(LogError::Sampling(format!(
                    "non-uniform sampling at row {}: step {step} vs {dt}",
                    i + 2
                )));
            }
        }

        let mut levels: Vec<u64> = Vec::new();
        for &v in &u {
            let bits = v.to_bits();
            if !levels.contains(&bits) {
                levels.push(bits);
                if levels.len() > 2 {
                    return Err(LogError::Format(
                        "relay command must take at most two distinct values".into(),
                    ));
                }
            }
        }

        Ok(Self { dt, e, u, y })
    }

    pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<Self, LogError> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> String {
        let mut s = String::from("# closed-loop log\nt,e,u,y\n");
        for i in 0..64 {
            let t = i as f64 * 0.01;
            let e = (t * 6.0).sin();
            let u = if e >= 0.0 { 1.0 } else { -1.0 };
            s.push_str(&format!("{t},{e},{u},{}\n", -e));
        }
        s
    }

    #[test]
    fn round_trip() {
        let log = SignalLog::read_csv(sample_csv().as_bytes()).unwrap();
        assert_eq!(log.len(), 64);
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        let back = SignalLog::read_csv(out.as_slice()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn missing_column_is_format_error() {
        let csv = "t,x,u\n0,1,1\n0.1,2,-1\n";
        assert!(matches!(
            SignalLog::read_csv(csv.as_bytes()),
            Err(LogError::Format(_))
        ));
    }

    #[test]
    fn decreasing_time_is_sampling_error() {
        let csv = "t,e,u\n0,1,1\n0.1,0.5,1\n0.05,0.2,-1\n";
        assert!(matches!(
            SignalLog::read_csv(csv.as_bytes()),
            Err(LogError::Sampling(_))
        ));
    }

    #[test]
    fn jittered_time_is_sampling_error() {
        let csv = "t,e,u\n0,1,1\n0.1,0.5,1\n0.21,0.2,-1\n";
        assert!(matches!(
            SignalLog::read_csv(csv.as_bytes()),
            Err(LogError::Sampling(_))
        ));
    }

    #[test]
    fn three_level_command_is_format_error() {
        let csv = "t,e,u\n0,1,1\n0.1,0.5,0\n0.2,0.2,-1\n";
        assert!(matches!(
            SignalLog::read_csv(csv.as_bytes()),
            Err(LogError::Format(_))
        ));
    }

    #[test]
    fn y_column_is_optional() {
        let csv = "t,e,u\n0,1,1\n0.1,0.5,-1\n";
        let log = SignalLog::read_csv(csv.as_bytes()).unwrap();
        assert!(log.y().is_none());
        assert_eq!(log.relay_amplitude(), 1.0);
    }
}
