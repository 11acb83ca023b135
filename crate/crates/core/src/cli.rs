//! Command-line front end: `simulate`, `mc`, `sweep`, `certify`, `gains`.
//!
//! Exit codes: 0 success, 1 the run completed but a bound or certificate
//! failed, 2 usage or configuration error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::certify::{
    beta_integral, check_drift_condition, symmetric_grid, wj_partials_check, CertReport, Derivatives, LyapunovSpec,
    PartialsCheck,
};
use crate::config::{parse_x0_list, Config, ControllerSpec, GainsSection, Overrides, Resolved, SystemHandle};
use crate::controller::{build_cascade, rate_from_gains, tmax_fixed_time, CascadeBounds, GainSet};
use crate::error::{Error, Result};
use crate::mc::{estimate_settling, sweep_bound};
use crate::output::{write_json, write_samples_csv, write_summary_json, write_sweep_csv, write_trajectory_csv};
use crate::sim::simulate;
use crate::system::SquaredNorm;

#[derive(Debug, Parser)]
#[command(name = "ptstab", version, about = "Predefined-time stabilization: simulation, Monte Carlo and certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (`mc`, `sweep`) or file (others; default stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Absorption radius.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Target bound on the expected settling time.
    #[arg(long, global = true)]
    pub bound: Option<f64>,
    /// noisy_integrator | power_drift | cascade2
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Initial states, e.g. "1" or "-0.02,0.03;0.03,-0.02".
    #[arg(long, global = true)]
    pub x0: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate one trajectory from the first initial state (CSV).
    Simulate,
    /// Monte Carlo settling-time estimate (samples.csv, summary.json).
    Mc,
    /// Re-derive the controller for several bounds (sweep.csv, sweep.json).
    Sweep {
        /// Comma-separated bounds; defaults to the config or preset list.
        #[arg(long)]
        bounds: Option<String>,
    },
    /// Check a Lyapunov certificate for the configured controller (JSON).
    Certify,
    /// Derive homogeneous backstepping gains from the `[gains]` section (JSON).
    Gains,
}

/// Parse an argument vector (including the program name).
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Success
        } else {
            Outcome::Failed
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Failed => 1,
        }
    }
}

/// Exit code for an error: 2 for bad input, 1 for failures during a run.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::InadmissibleKappa { .. } | Error::Constraint(_) | Error::Io(_) => {
            2
        }
        Error::Evaluation { .. } | Error::Quadrature(_) | Error::Estimation(_) => 1,
    }
}

fn parse_bounds(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid bound {v:?}")))).collect()
}

impl Common {
    fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            runs: self.runs,
            dt: self.dt,
            eps: self.eps,
            bound: self.bound,
            x0: self.x0.as_deref().map(parse_x0_list).transpose()?,
            threads: self.threads.filter(|&t| t > 0),
        })
    }

    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::from_path(p),
            None => Ok(Config::default()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", path.display()))))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display()))))?;
    Ok(dir)
}

/// Write to `--out` if given, else to `stdout`.
fn emit(common: &Common, stdout: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &common.out {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            Ok(w.flush()?)
        }
        None => f(stdout),
    }
}

/// Execute a parsed command; human-readable notes go to `stdout` only when
/// it is not carrying the primary output.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    let common = &cli.common;
    let config = common.load()?;
    let ov = common.overrides()?;
    if let Command::Gains = cli.command {
        return gains(common, &config, stdout);
    }
    let r = config.resolve(&ov)?;
    match &cli.command {
        Command::Simulate => {
            let u = r.controller()?;
            let traj = simulate(r.system.as_dyn(), &u, &r.run.x0[0], &r.run.sim)?;
            emit(common, stdout, |w| write_trajectory_csv(w, &traj))?;
            Ok(Outcome::Success)
        }
        Command::Mc => {
            let u = r.controller()?;
            let stats = estimate_settling(r.system.as_dyn(), &u, &r.run)?;
            let dir = out_dir(common)?;
            write_samples_csv(create(&dir.join("samples.csv"))?, &stats.samples)?;
            write_summary_json(create(&dir.join("summary.json"))?, &stats)?;
            note(
                stdout,
                format!(
                    "mean {:.4} [{:.4}, {:.4}], worst {:.4}, bound {} -> {}",
                    stats.mean,
                    stats.ci_lo,
                    stats.ci_hi,
                    stats.worst_mean,
                    stats.bound,
                    if stats.bound_satisfied { "satisfied" } else { "NOT satisfied" }
                ),
            )?;
            Ok(Outcome::from_pass(stats.bound_satisfied))
        }
        Command::Sweep { bounds } => {
            let bounds = match bounds {
                Some(s) => parse_bounds(s)?,
                None => r.bounds.clone(),
            };
            let rows = sweep_bound(r.system.as_dyn(), &|b| r.controller_for(b), &r.run, &bounds)?;
            let dir = out_dir(common)?;
            write_sweep_csv(create(&dir.join("sweep.csv"))?, &rows)?;
            write_json(create(&dir.join("sweep.json"))?, &rows)?;
            let pass = rows.iter().all(|row| row.stats.as_ref().is_some_and(|s| s.bound_satisfied));
            Ok(Outcome::from_pass(pass))
        }
        Command::Certify => {
            let out = certify(&r)?;
            let pass = out.report.verdict;
            emit(common, stdout, |w| write_json(w, &out))?;
            Ok(Outcome::from_pass(pass))
        }
        Command::Gains => unreachable!(),
    }
}

fn note(w: &mut dyn Write, line: String) -> Result<()> {
    Ok(writeln!(w, "{line}")?)
}

fn gains(common: &Common, config: &Config, stdout: &mut dyn Write) -> Result<Outcome> {
    let mut section = config.gains.clone().unwrap_or_default();
    if let Some(b) = common.bound {
        section.k4 = b;
    }
    let g = section.derive()?;
    let valid = g.valid;
    emit(common, stdout, |w| write_json(w, &g))?;
    Ok(Outcome::from_pass(valid))
}

/// Certificate report; the flattened fields summarise the primary check.
#[derive(Debug, Serialize)]
pub struct CertifyOutput {
    pub preset: String,
    pub controller: String,
    #[serde(flatten)]
    pub report: CertReport,
    /// Same grid with central-difference derivatives of `V`.
    pub finite_difference: Option<CertReport>,
    pub gains: Option<GainSet>,
    pub split_bound: Option<f64>,
    pub partials: Vec<PartialsCheck>,
}

const DRIFT_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-5;
const PARTIALS_STEP: f64 = 1e-4;
const PARTIALS_TOL: f64 = 1e-5;

fn drift_pair(r: &Resolved, spec: LyapunovSpec, half_width: f64) -> Result<(CertReport, CertReport)> {
    let grid = symmetric_grid(half_width, 601, 1e-3);
    spec.validate(1, &grid)?;
    let u = r.controller()?;
    let sys = r.system.as_dyn();
    let analytic = check_drift_condition(sys, &u, &spec, &grid, DRIFT_TOL, Derivatives::Analytic)?;
    let fd = check_drift_condition(sys, &u, &spec, &grid, FD_TOL, Derivatives::FiniteDifference(None))?;
    Ok((analytic, fd))
}

/// Build and check the certificate that matches the configured controller.
pub fn certify(r: &Resolved) -> Result<CertifyOutput> {
    let controller = r.controller()?.description().to_string();
    let base = |report, fd| CertifyOutput {
        preset: r.preset.clone(),
        controller: controller.clone(),
        report,
        finite_difference: fd,
        gains: None,
        split_bound: None,
        partials: Vec::new(),
    };
    match (&r.controller, &r.system) {
        (ControllerSpec::Predefined { alpha }, _) => {
            // V = x²: LV = −(√π/α)·|x|·e^{x²} exactly.
            let spec = LyapunovSpec {
                v: Arc::new(SquaredNorm),
                beta: Arc::new(|s: f64| std::f64::consts::PI.sqrt() * s.sqrt() * s.exp()),
                alpha: *alpha,
            };
            let (a, fd) = drift_pair(r, spec, 3.0)?;
            let mut out = base(a, Some(fd));
            out.report.verdict &= out.finite_difference.as_ref().is_some_and(|f| f.verdict);
            Ok(out)
        }
        (ControllerSpec::FixedTime { a, b }, _) => {
            let (a, b) = (*a, *b);
            let t = tmax_fixed_time(a, b)?;
            let spec = LyapunovSpec {
                v: Arc::new(SquaredNorm),
                beta: Arc::new(move |s: f64| t * 2.0 * (s.powf((a + 1.0) / 2.0) + s.powf((b + 1.0) / 2.0))),
                alpha: t,
            };
            let (rep, fd) = drift_pair(r, spec, 3.0)?;
            let mut out = base(rep, Some(fd));
            out.report.verdict &= out.finite_difference.as_ref().is_some_and(|f| f.verdict);
            Ok(out)
        }
        (ControllerSpec::PowerDrift { k1, k3, k4: _, k2 }, _) => {
            let (k1, k3) = (*k1, *k3);
            let k2 = match k2 {
                Some(k) => *k,
                None => crate::controller::power_drift_k2(k1, k3)?,
            };
            let spec = LyapunovSpec {
                v: Arc::new(SquaredNorm),
                beta: Arc::new(move |s: f64| k1 * s.powf(2.0 / 3.0) + k2 * s.powf((k3 + 1.0) / 2.0)),
                alpha: r.bound,
            };
            let (rep, fd) = drift_pair(r, spec, 2.0)?;
            let mut out = base(rep, Some(fd));
            out.report.verdict &= out.finite_difference.as_ref().is_some_and(|f| f.verdict);
            Ok(out)
        }
        (
            spec @ (ControllerSpec::Cascade2ClosedForm | ControllerSpec::Backstepping { .. }),
            SystemHandle::StrictFeedback(sys),
        ) => {
            let (gains, bounds) = match spec {
                ControllerSpec::Backstepping { k1, k3, k2, r_bar, phi1, psi1, alpha, .. } => {
                    let g = GainsSection {
                        q: sys.q().to_vec(),
                        kappa: sys.kappa(),
                        r_bar: *r_bar,
                        k1: *k1,
                        k3: *k3,
                        k4: r.bound,
                    };
                    let mut gains = g.derive()?;
                    if let Some(k2) = k2 {
                        gains = gains.with_k2(*k2)?;
                    }
                    let alpha = alpha.clone().unwrap_or_else(|| vec![[0.0; 3]; sys.n() - 1]);
                    (gains, CascadeBounds::constant(*phi1, *psi1, &alpha))
                }
                _ => (r.gains.derive()?, crate::presets::cascade2_bounds()),
            };
            cascade_certificate(sys, gains, &bounds, base(empty_report(), None))
        }
        _ => Err(Error::Config(format!("no certificate is available for {:?} on {}", r.controller, r.preset))),
    }
}

fn empty_report() -> CertReport {
    CertReport {
        grid_size: 0,
        max_residual: 0.0,
        argmax_state: Vec::new(),
        max_abs_relative_residual: 0.0,
        flagged: Vec::new(),
        integral: None,
        integral_err: None,
        verdict: false,
        note: String::new(),
    }
}

/// Check the step-integral partials on a state grid and `∫ 1/β ≤ 1` for the
/// rate function of the derived gains.
fn cascade_certificate(
    sys: &crate::system::StrictFeedbackSystem,
    gains: GainSet,
    bounds: &CascadeBounds,
    mut out: CertifyOutput,
) -> Result<CertifyOutput> {
    let n = sys.n();
    let grid_1d = [-0.9, -0.4, -0.1, 0.15, 0.5, 0.85];
    let mut states: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..n {
        states = states.into_iter().flat_map(|s| grid_1d.iter().map(move |&v| [s.clone(), vec![v]].concat())).collect();
    }
    let mut notes = Vec::new();
    if !gains.valid {
        notes.push(format!("gain constraints fail: {}", gains.failing().join(", ")));
    }
    let cascade = build_cascade(sys, &gains, bounds)?;
    for x in &states {
        for j in 1..=n {
            out.partials.push(wj_partials_check(&cascade, j, x, PARTIALS_STEP)?);
        }
    }
    let worst =
        out.partials.iter().max_by(|a, b| a.max_residual().total_cmp(&b.max_residual())).expect("non-empty grid");
    out.report.grid_size = states.len();
    out.report.max_residual = worst.max_residual();
    out.report.max_abs_relative_residual = worst.max_residual();
    out.report.argmax_state = worst.state.clone();
    let partials_ok = out.report.max_residual <= PARTIALS_TOL;
    if !partials_ok {
        notes.push("step-integral partials disagree with finite differences".into());
    }
    let integral_ok = match rate_from_gains(&gains) {
        Ok(beta) => {
            let bi = beta_integral(&|s| beta.value(s), 1e-9)?;
            out.split_bound = Some(beta.split_bound());
            out.report.integral = (!bi.unbounded).then_some(bi.value);
            out.report.integral_err = (!bi.unbounded).then_some(bi.error);
            let ok = !bi.unbounded && bi.value <= 1.0 + 1e-6;
            if !ok {
                notes.push(format!("integral of 1/beta = {} exceeds 1", bi.value));
            }
            ok
        }
        Err(e) => {
            notes.push(e.to_string());
            false
        }
    };
    out.report.verdict = gains.valid && partials_ok && integral_ok;
    out.report.note = if notes.is_empty() { "no violation found".into() } else { notes.join("; ") };
    out.gains = Some(gains);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (Result<Outcome>, String) {
        let cli = parse_args(std::iter::once("ptstab").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        let res = run(&cli, &mut buf);
        (res, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = parse_args(["ptstab", "mc", "--runs", "5", "--x0", "1;2", "--threads", "0"]).unwrap();
        assert!(matches!(cli.command, Command::Mc));
        assert_eq!(cli.common.runs, Some(5));
        assert_eq!(cli.common.overrides().unwrap().threads, None);
        assert!(parse_args(["ptstab", "frobnicate"]).is_err());
        assert!(parse_args(["ptstab", "mc", "--runs", "-1"]).is_err());
    }

    #[test]
    fn gains_json() {
        let (res, text) = run_args(&["gains"]);
        assert_eq!(res.unwrap(), Outcome::Success);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["b1"].as_f64().unwrap() - 32.0 / 33.0).abs() < 1e-12);
    }

    #[test]
    fn certificates_per_preset() {
        for preset in ["noisy_integrator", "power_drift", "cascade2"] {
            let (res, text) = run_args(&["certify", "--preset", preset]);
            assert_eq!(res.unwrap(), Outcome::Success, "{preset}: {text}");
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["verdict"], true);
            assert!(v["integral"].as_f64().unwrap() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn zero_runs_is_a_config_error() {
        let (res, _) = run_args(&["mc", "--runs", "0"]);
        assert_eq!(error_code(&res.unwrap_err()), 2);
    }

    #[test]
    fn bad_x0_is_a_config_error() {
        let (res, _) = run_args(&["simulate", "--x0", "1,2"]);
        assert_eq!(error_code(&res.unwrap_err()), 2);
    }
}
