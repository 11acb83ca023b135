//! Monte Carlo estimation of the expected settling time.

use rayon::prelude::*;
use serde::Serialize;

use crate::controller::Controller;
use crate::error::{domain, Error, Result};
use crate::sim::{settle, SimConfig, Status};
use crate::system::ItoSystem;

/// Increment between the base seeds of consecutive sweep rows.
pub const ROW_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Initial states; `n_runs` trajectories are drawn from each.
    pub x0: Vec<Vec<f64>>,
    /// Step, horizon and radius; `sim.seed` is the base seed.
    pub sim: SimConfig,
    pub n_runs: usize,
    /// Target bound on the expected settling time.
    pub bound: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return domain("n_runs must be at least 1");
        }
        if self.x0.is_empty() {
            return domain("at least one initial state is required");
        }
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return domain(format!("bound must be positive, got {}", self.bound));
        }
        if self.threads == Some(0) {
            return domain("threads must be positive");
        }
        self.sim.validate()
    }

    /// Seed of global run `index`: `base ⊕ index`.
    pub fn run_seed(&self, index: usize) -> u64 {
        self.sim.seed ^ index as u64
    }
}

/// One Monte Carlo trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub run: usize,
    pub x0_index: usize,
    pub seed: u64,
    pub status: Status,
    pub settling_time: Option<f64>,
    pub saturated: bool,
}

impl Sample {
    /// Contribution to the mean; unsettled and diverged runs count as `t_max`.
    pub fn charged_time(&self, t_max: f64) -> f64 {
        self.settling_time.unwrap_or(t_max)
    }
}

/// Aggregates for one initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct X0Stats {
    pub x0: Vec<f64>,
    pub n_runs: usize,
    pub n_settled: usize,
    pub n_unsettled: usize,
    pub n_diverged: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub max: f64,
    /// Mean over settled runs only (`None` when nothing settled).
    pub settled_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlingStats {
    pub n_runs: usize,
    pub n_settled: usize,
    pub n_unsettled: usize,
    pub n_diverged: usize,
    pub n_saturated: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub max: f64,
    pub bound: f64,
    pub bound_satisfied: bool,
    pub censored: bool,
    pub dt: f64,
    pub eps_absorb: f64,
    pub t_max: f64,
    pub base_seed: u64,
    /// Largest per-initial-state mean; the bound is checked against this.
    pub worst_mean: f64,
    pub per_x0: Vec<X0Stats>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
}

struct Moments {
    mean: f64,
    std_err: f64,
    max: f64,
}

fn moments(t: &[f64]) -> Moments {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = if t.len() > 1 { t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Moments { mean, std_err: (var / n).sqrt(), max: t.iter().fold(0.0, |m, v| m.max(*v)) }
}

fn count(samples: &[Sample], s: Status) -> usize {
    samples.iter().filter(|x| x.status == s).count()
}

fn x0_stats(x0: &[f64], samples: &[Sample], t_max: f64) -> X0Stats {
    let t: Vec<f64> = samples.iter().map(|s| s.charged_time(t_max)).collect();
    let m = moments(&t);
    let settled: Vec<f64> = samples.iter().filter_map(|s| s.settling_time).collect();
    X0Stats {
        x0: x0.to_vec(),
        n_runs: samples.len(),
        n_settled: settled.len(),
        n_unsettled: count(samples, Status::Unsettled),
        n_diverged: count(samples, Status::Diverged),
        mean: m.mean,
        std_err: m.std_err,
        ci_lo: m.mean - Z95 * m.std_err,
        ci_hi: m.mean + Z95 * m.std_err,
        max: m.max,
        settled_mean: (!settled.is_empty()).then(|| settled.iter().sum::<f64>() / settled.len() as f64),
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Estimation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Run `n_runs` trajectories from every initial state and aggregate.
/// Results depend only on the configuration, not on the thread count.
pub fn estimate_settling(sys: &dyn ItoSystem, u: &Controller, cfg: &RunConfig) -> Result<SettlingStats> {
    cfg.validate()?;
    let total = cfg.n_runs * cfg.x0.len();
    let runs: Vec<Result<Sample>> = in_pool(cfg.threads, || {
        (0..total)
            .into_par_iter()
            .map(|run| {
                let x0_index = run / cfg.n_runs;
                let seed = cfg.run_seed(run);
                let o = settle(sys, u, &cfg.x0[x0_index], &SimConfig { seed, ..cfg.sim })?;
                Ok(Sample {
                    run,
                    x0_index,
                    seed,
                    status: o.status,
                    settling_time: o.settling_time,
                    saturated: o.saturated,
                })
            })
            .collect()
    })?;
    let samples = runs.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(cfg, samples)
}

fn aggregate(cfg: &RunConfig, samples: Vec<Sample>) -> Result<SettlingStats> {
    let t_max = cfg.sim.t_max;
    let n_diverged = count(&samples, Status::Diverged);
    if n_diverged == samples.len() {
        return Err(Error::Estimation(format!(
            "all {} runs diverged (x_guard = {}, dt = {}); initial states {:?}",
            samples.len(),
            cfg.sim.x_guard,
            cfg.sim.dt,
            cfg.x0
        )));
    }
    let per_x0: Vec<X0Stats> = cfg
        .x0
        .iter()
        .enumerate()
        .map(|(i, x0)| x0_stats(x0, &samples[i * cfg.n_runs..(i + 1) * cfg.n_runs], t_max))
        .collect();
    let t: Vec<f64> = samples.iter().map(|s| s.charged_time(t_max)).collect();
    let m = moments(&t);
    let n_unsettled = count(&samples, Status::Unsettled);
    let n_saturated = samples.iter().filter(|s| s.saturated).count();
    let censored = n_unsettled > 0;
    let worst_mean = per_x0.iter().fold(f64::NEG_INFINITY, |w, s| w.max(s.mean));

    let mut warnings = Vec::new();
    if cfg.n_runs < 30 {
        warnings.push(format!("n_runs = {} < 30: normal-approximation interval is unreliable", cfg.n_runs));
    }
    if censored {
        warnings.push(format!("{n_unsettled} runs did not settle by t_max = {t_max}; counted as t_max"));
    }
    if n_diverged > 0 {
        warnings.push(format!("{n_diverged} runs diverged; counted as t_max"));
    }
    if n_saturated > 0 {
        warnings.push(format!("control saturated in {n_saturated} runs"));
    }

    Ok(SettlingStats {
        n_runs: samples.len(),
        n_settled: count(&samples, Status::Settled),
        n_unsettled,
        n_diverged,
        n_saturated,
        mean: m.mean,
        std_err: m.std_err,
        ci_lo: m.mean - Z95 * m.std_err,
        ci_hi: m.mean + Z95 * m.std_err,
        max: m.max,
        bound: cfg.bound,
        bound_satisfied: worst_mean <= cfg.bound && n_diverged == 0 && !censored,
        censored,
        dt: cfg.sim.dt,
        eps_absorb: cfg.sim.eps_absorb,
        t_max,
        base_seed: cfg.sim.seed,
        worst_mean,
        per_x0,
        warnings,
        samples,
    })
}

/// One row of a bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub bound: f64,
    pub base_seed: u64,
    pub stats: Option<SettlingStats>,
    pub error: Option<String>,
}

/// Re-derive the controller for each target bound and estimate settling.
/// Row `i` uses base seed `seed + i·ROW_SEED_STRIDE` and a horizon scaled
/// with the bound in the same ratio as `cfg`.
pub fn sweep_bound(
    sys: &dyn ItoSystem,
    controller_for: &(dyn Fn(f64) -> Result<Controller> + Sync),
    cfg: &RunConfig,
    bounds: &[f64],
) -> Result<Vec<SweepRow>> {
    if bounds.is_empty() {
        return domain("at least one bound is required");
    }
    if let Some(b) = bounds.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return domain(format!("bounds must be positive, got {b}"));
    }
    cfg.validate()?;
    let horizon = cfg.sim.t_max / cfg.bound;
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(i, &bound)| {
            let base_seed = cfg.sim.seed.wrapping_add((i as u64).wrapping_mul(ROW_SEED_STRIDE));
            let row_cfg = RunConfig {
                bound,
                sim: SimConfig { seed: base_seed, t_max: horizon * bound, ..cfg.sim },
                ..cfg.clone()
            };
            let result = controller_for(bound).and_then(|u| estimate_settling(sys, &u, &row_cfg));
            match result {
                Ok(s) => SweepRow { bound, base_seed, stats: Some(s), error: None },
                Err(e) => SweepRow { bound, base_seed, stats: None, error: Some(e.to_string()) },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{power_drift_controller, power_drift_k2};
    use crate::presets::power_drift_system;

    fn pd(k4: f64) -> Result<Controller> {
        power_drift_controller(4.1, power_drift_k2(4.1, 3.0)?, 3.0, k4)
    }

    fn cfg(n: usize, bound: f64) -> RunConfig {
        RunConfig {
            x0: vec![vec![1.0]],
            sim: SimConfig { seed: 11, ..SimConfig::for_bound(bound) },
            n_runs: n,
            bound,
            threads: None,
        }
    }

    #[test]
    fn zero_state_settles_at_zero() {
        let c = RunConfig { x0: vec![vec![0.0]], ..cfg(50, 1.0) };
        let s = estimate_settling(&power_drift_system(), &pd(1.0).unwrap(), &c).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.n_settled, 50);
        assert!(s.bound_satisfied);
    }

    #[test]
    fn open_loop_is_censored() {
        let c = RunConfig { sim: SimConfig { t_max: 1.0, seed: 3, ..SimConfig::default() }, ..cfg(40, 0.5) };
        let s = estimate_settling(&power_drift_system(), &Controller::zero(), &c);
        // the open loop either drifts away or never settles; both fail the bound
        match s {
            Ok(s) => {
                assert!(s.censored || s.n_diverged > 0);
                assert!(!s.bound_satisfied);
                if let Some(m) = s.per_x0[0].settled_mean {
                    assert!(s.mean >= m);
                }
            }
            Err(e) => assert!(matches!(e, Error::Estimation(_))),
        }
    }

    #[test]
    fn unattainably_small_horizon_censors() {
        let sys = crate::system::FnSystem::new(1, |x, _, o| o[0] = -x[0], |_, _, o| o[0] = 0.0).unwrap();
        let c = RunConfig { sim: SimConfig { t_max: 1.0, dt: 1e-3, ..SimConfig::default() }, ..cfg(35, 0.5) };
        let s = estimate_settling(&sys, &Controller::zero(), &c).unwrap();
        assert!(s.censored && !s.bound_satisfied);
        assert_eq!(s.n_unsettled, 35);
        assert_eq!(s.mean, 1.0);
    }

    #[test]
    fn invalid_configs() {
        let u = pd(1.0).unwrap();
        assert!(estimate_settling(&power_drift_system(), &u, &cfg(0, 1.0)).is_err());
        assert!(estimate_settling(&power_drift_system(), &u, &RunConfig { x0: vec![], ..cfg(5, 1.0) }).is_err());
        assert!(estimate_settling(&power_drift_system(), &u, &RunConfig { threads: Some(0), ..cfg(5, 1.0) }).is_err());
        assert!(sweep_bound(&power_drift_system(), &pd, &cfg(5, 1.0), &[1.0, -1.0]).is_err());
    }

    #[test]
    fn all_diverged_is_an_error() {
        let sys = crate::system::FnSystem::new(1, |x, _, o| o[0] = x[0] * x[0], |_, _, o| o[0] = 0.0).unwrap();
        let c = RunConfig { x0: vec![vec![5.0]], sim: SimConfig { dt: 1e-2, ..SimConfig::default() }, ..cfg(3, 1.0) };
        assert!(matches!(estimate_settling(&sys, &Controller::zero(), &c), Err(Error::Estimation(_))));
    }

    #[test]
    fn invariants_and_thread_independence() {
        let u = pd(2.0).unwrap();
        let base = RunConfig { x0: vec![vec![1.0], vec![-0.5]], ..cfg(40, 2.0) };
        let one =
            estimate_settling(&power_drift_system(), &u, &RunConfig { threads: Some(1), ..base.clone() }).unwrap();
        let many =
            estimate_settling(&power_drift_system(), &u, &RunConfig { threads: Some(4), ..base.clone() }).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.n_settled + one.n_unsettled + one.n_diverged, one.n_runs);
        assert!(one.ci_lo <= one.mean && one.mean <= one.ci_hi);
        assert_eq!(one.per_x0.len(), 2);
        assert_eq!(one.samples[41].seed, 11 ^ 41);
        assert!(one.warnings.is_empty());
    }

    #[test]
    fn permuted_indices_give_the_same_multiset() {
        let u = pd(2.0).unwrap();
        let c = cfg(32, 2.0);
        let s = estimate_settling(&power_drift_system(), &u, &c).unwrap();
        // reversing the index → seed map reproduces every sample
        let mut rev: Vec<f64> = (0..32)
            .rev()
            .map(|i| settle(&power_drift_system(), &u, &[1.0], &SimConfig { seed: c.run_seed(i), ..c.sim }).unwrap())
            .map(|o| o.settling_time.unwrap())
            .collect();
        let mut fwd: Vec<f64> = s.samples.iter().map(|x| x.settling_time.unwrap()).collect();
        rev.sort_by(f64::total_cmp);
        fwd.sort_by(f64::total_cmp);
        assert_eq!(rev, fwd);
    }

    #[test]
    fn sweep_single_row_matches_estimate() {
        let c = cfg(30, 2.0);
        let rows = sweep_bound(&power_drift_system(), &pd, &c, &[2.0]).unwrap();
        let direct = estimate_settling(&power_drift_system(), &pd(2.0).unwrap(), &c).unwrap();
        assert_eq!(rows[0].stats.as_ref().unwrap(), &direct);
    }

    #[test]
    fn sweep_repeated_bound_is_compatible() {
        let rows = sweep_bound(&power_drift_system(), &pd, &cfg(60, 1.0), &[1.0, 1.0]).unwrap();
        let (a, b) = (rows[0].stats.as_ref().unwrap(), rows[1].stats.as_ref().unwrap());
        assert_ne!(rows[0].base_seed, rows[1].base_seed);
        assert_ne!(a.samples, b.samples);
        assert!(a.ci_lo <= b.ci_hi && b.ci_lo <= a.ci_hi, "{a:?} {b:?}");
    }

    #[test]
    fn sweep_row_errors_are_flags() {
        let rows =
            sweep_bound(&power_drift_system(), &|b| if b > 1.5 { pd(b) } else { pd(-1.0) }, &cfg(5, 2.0), &[2.0, 1.0])
                .unwrap();
        assert!(rows[0].stats.is_some());
        assert!(rows[1].error.is_some());
    }
}
