//! Euler–Maruyama integration with an absorbing ε-ball at the origin.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::error::{domain, Result};
use crate::system::ItoSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Radius of the absorbing ball; `0` means only an exact zero settles.
    pub eps_absorb: f64,
    pub seed: u64,
    /// States with norm beyond this (or non-finite) count as diverged.
    pub x_guard: f64,
}

impl SimConfig {
    /// Defaults with a horizon of three times `bound`.
    pub fn for_bound(bound: f64) -> Self {
        Self { dt: 1e-4, t_max: 3.0 * bound, eps_absorb: 1e-3, seed: 0, x_guard: 1e6 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return domain(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.eps_absorb >= 0.0) || !self.eps_absorb.is_finite() {
            return domain(format!("eps_absorb must be nonnegative, got {}", self.eps_absorb));
        }
        if !(self.t_max > self.dt) || !self.t_max.is_finite() {
            return domain(format!("t_max = {} must exceed dt = {}", self.t_max, self.dt));
        }
        if !(self.x_guard > 0.0) {
            return domain("x_guard must be positive");
        }
        Ok(())
    }

    /// Number of Euler steps covering `[0, t_max]`.
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::for_bound(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Settled,
    Unsettled,
    Diverged,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Settled => "settled",
            Status::Unsettled => "unsettled",
            Status::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub settling_time: Option<f64>,
    pub status: Status,
    /// The controller's saturation policy fired at least once.
    pub saturated: bool,
}

/// Summary of one run without the stored path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub settling_time: Option<f64>,
    pub saturated: bool,
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` independent `Normal(0, dt)` draws from the stream keyed by `seed`.
pub fn wiener_increments(seed: u64, n: usize, dt: f64) -> Vec<f64> {
    let mut rng = rng_for(seed);
    let sd = dt.sqrt();
    (0..n).map(|_| sd * normal(&mut rng)).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Shared stepping loop; `record` receives `(k, state, control)` for every
/// pre-absorption grid point and returns nothing.
fn run<R: FnMut(usize, &[f64], f64)>(
    sys: &dyn ItoSystem,
    u: &Controller,
    x0: &[f64],
    cfg: &SimConfig,
    mut record: R,
) -> Result<(Outcome, usize)> {
    cfg.validate()?;
    let n = sys.dim();
    if x0.len() != n {
        return domain(format!("initial state has length {}, system has dim {n}", x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return domain("initial state must be finite");
    }
    let steps = cfg.steps();
    let sd = cfg.dt.sqrt();
    let mut rng = rng_for(cfg.seed);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut saturated = false;
    for k in 0..=steps {
        let r = norm(&x);
        if r <= cfg.eps_absorb {
            let out = Outcome { status: Status::Settled, settling_time: Some(k as f64 * cfg.dt), saturated };
            return Ok((out, k));
        }
        if !r.is_finite() || r > cfg.x_guard {
            return Ok((Outcome { status: Status::Diverged, settling_time: None, saturated }, k));
        }
        let (uk, sat) = u.eval_flagged(&x);
        saturated |= sat;
        record(k, &x, uk);
        if k == steps {
            break;
        }
        sys.drift(&x, uk, &mut f);
        sys.diffusion(&x, uk, &mut g);
        let dw = sd * normal(&mut rng);
        for i in 0..n {
            x[i] += f[i] * cfg.dt + g[i] * dw;
        }
    }
    Ok((Outcome { status: Status::Unsettled, settling_time: None, saturated }, steps + 1))
}

/// Simulate the closed loop and keep the full path. After absorption the
/// remaining grid is zero-filled without evaluating the dynamics.
pub fn simulate(sys: &dyn ItoSystem, u: &Controller, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let (out, k_end) = run(sys, u, x0, cfg, |k, x, uk| {
        times.push(k as f64 * cfg.dt);
        states.push(x.to_vec());
        controls.push(uk);
    })?;
    if out.status == Status::Settled {
        let zero = vec![0.0; sys.dim()];
        for k in k_end..=cfg.steps() {
            times.push(k as f64 * cfg.dt);
            states.push(zero.clone());
            controls.push(0.0);
        }
    }
    Ok(Trajectory {
        times,
        states,
        controls,
        settling_time: out.settling_time,
        status: out.status,
        saturated: out.saturated,
    })
}

/// Same dynamics and random stream as [`simulate`], without storing the path.
pub fn settle(sys: &dyn ItoSystem, u: &Controller, x0: &[f64], cfg: &SimConfig) -> Result<Outcome> {
    run(sys, u, x0, cfg, |_, _, _| {}).map(|(o, _)| o)
}
