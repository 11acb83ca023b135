//! CSV and JSON writers for trajectories, Monte Carlo samples and sweeps.
//!
//! Floats are written in Rust's shortest round-trip form, so identical
//! inputs give byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{Sample, SettlingStats, SweepRow};
use crate::sim::Trajectory;

fn io(e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|t| t.to_string()).unwrap_or_default()
}

/// `t,x1,…,xn,u`, one row per recorded step.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let dim = traj.states.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("u".into());
    out.write_record(&header).map_err(io)?;
    for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&traj.controls) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        row.push(u.to_string());
        out.write_record(&row).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// `run,seed,status,settling_time`; unsettled runs leave the time empty.
pub fn write_samples_csv<W: Write>(w: W, samples: &[Sample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "seed", "status", "settling_time"]).map_err(io)?;
    for s in samples {
        out.write_record([s.run.to_string(), s.seed.to_string(), s.status.as_str().to_string(), opt(s.settling_time)])
            .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// One row per bound; failed rows carry the error text.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "bound",
        "base_seed",
        "n_runs",
        "n_settled",
        "n_diverged",
        "mean",
        "ci_lo",
        "ci_hi",
        "worst_mean",
        "bound_satisfied",
        "error",
    ])
    .map_err(io)?;
    for r in rows {
        let rec = match &r.stats {
            Some(s) => vec![
                r.bound.to_string(),
                r.base_seed.to_string(),
                s.n_runs.to_string(),
                s.n_settled.to_string(),
                s.n_diverged.to_string(),
                s.mean.to_string(),
                s.ci_lo.to_string(),
                s.ci_hi.to_string(),
                s.worst_mean.to_string(),
                s.bound_satisfied.to_string(),
                String::new(),
            ],
            None => {
                let mut v = vec![r.bound.to_string(), r.base_seed.to_string()];
                v.extend(std::iter::repeat_n(String::new(), 8));
                v.push(r.error.clone().unwrap_or_default());
                v
            }
        };
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Pretty JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(io)?;
    Ok(writeln!(w)?)
}

pub fn write_summary_json<W: Write>(w: W, stats: &SettlingStats) -> Result<()> {
    write_json(w, stats)
}
