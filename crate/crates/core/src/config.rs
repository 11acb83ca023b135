//! Run configuration: TOML schema, preset defaults and command-line overrides.
//!
//! ```toml
//! [system]
//! preset = "power_drift"          # noisy_integrator | power_drift | cascade2
//! h = [1.0, 1.0]                # cascade2 only: actual control coefficients
//!
//! [controller]
//! kind = "power_drift"            # predefined | fixed_time | power_drift |
//!                               # cascade2_closed_form | backstepping | zero
//! k1 = 4.1
//! k3 = 3.0
//! k4 = 2.0
//!
//! [sim]
//! dt = 1e-4
//! t_max = 6.0                   # default: 3 × bound
//! eps_absorb = 1e-3
//! x_guard = 1e6
//! x0 = [[1.0]]
//!
//! [mc]
//! runs = 200
//! seed = 7
//! threads = 4
//! bound = 2.0                   # default: the controller's design bound
//! bounds = [4.0, 2.0, 0.5]      # for `sweep`
//!
//! [gains]                       # for `gains`, `certify` and `backstepping`
//! q = [1.6666666666666667, 1.3333333333333333]
//! kappa = -0.25
//! r_bar = 2.0
//! k1 = 65.6
//! k3 = 3.1
//! k4 = 3.0
//! ```

use serde::{Deserialize, Serialize};

use crate::controller::{
    backstep_synthesize, cascade2_closed_form_controller, default_r_bar, fixed_time_controller, homogeneous_gains,
    power_drift_controller, power_drift_k2, predefined_controller_scalar, tmax_fixed_time, CascadeBounds, Controller,
    GainSet,
};
use crate::error::{Error, Result};
use crate::mc::RunConfig;
use crate::presets::{cascade2_system, noisy_integrator_system, power_drift_system, PRESET_NAMES};
use crate::sim::SimConfig;
use crate::system::{r_recursion, ItoSystem, StrictFeedbackSystem};

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub preset: Option<String>,
    pub h: Option<Vec<f64>>,
}

/// Feedback law selection; `kind` picks the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Predefined {
        alpha: f64,
    },
    FixedTime {
        a: f64,
        b: f64,
    },
    PowerDrift {
        k1: f64,
        k3: f64,
        k4: f64,
        k2: Option<f64>,
    },
    Cascade2ClosedForm,
    Backstepping {
        k1: f64,
        k3: f64,
        k4: f64,
        k2: Option<f64>,
        r_bar: Option<f64>,
        #[serde(default = "one")]
        phi1: f64,
        #[serde(default = "one")]
        psi1: f64,
        /// Cross-term bound triples for steps 2..n (default zeros).
        alpha: Option<Vec<[f64; 3]>>,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub eps_absorb: Option<f64>,
    pub x_guard: Option<f64>,
    pub x0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub bound: Option<f64>,
    pub bounds: Option<Vec<f64>>,
}

/// Inputs of the homogeneous gain derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub q: Vec<f64>,
    pub kappa: f64,
    pub r_bar: Option<f64>,
    pub k1: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self { q: vec![5.0 / 3.0, 4.0 / 3.0], kappa: -0.25, r_bar: Some(2.0), k1: 65.6, k3: 3.1, k4: 3.0 }
    }
}

impl GainsSection {
    pub fn derive(&self) -> Result<GainSet> {
        let r = r_recursion(&self.q, self.kappa)?;
        let r_bar = self.r_bar.unwrap_or_else(|| default_r_bar(&r));
        homogeneous_gains(&r, self.kappa, r_bar, self.k1, self.k3, self.q.len(), self.k4)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub system: SystemSection,
    pub controller: Option<ControllerSpec>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub mc: McSection,
    pub gains: Option<GainsSection>,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub dt: Option<f64>,
    pub eps: Option<f64>,
    pub bound: Option<f64>,
    pub x0: Option<Vec<Vec<f64>>>,
    pub threads: Option<usize>,
}

/// Parse `"x1,x2;y1,y2"` into initial states.
pub fn parse_x0_list(s: &str) -> Result<Vec<Vec<f64>>> {
    let states: Vec<Vec<f64>> = s
        .split(';')
        .map(|state| {
            state
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Config(format!("invalid initial-state component {v:?}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    if states.is_empty() || states.iter().any(|s| s.is_empty()) {
        return cfg_err("empty initial state");
    }
    Ok(states)
}

pub enum SystemHandle {
    Plain(crate::system::FnSystem),
    StrictFeedback(Box<StrictFeedbackSystem>),
}

impl SystemHandle {
    pub fn as_dyn(&self) -> &dyn ItoSystem {
        match self {
            SystemHandle::Plain(s) => s,
            SystemHandle::StrictFeedback(s) => s.as_ref(),
        }
    }
}

/// A fully defaulted, validated configuration.
pub struct Resolved {
    pub preset: String,
    pub system: SystemHandle,
    pub controller: ControllerSpec,
    pub bound: f64,
    pub run: RunConfig,
    pub bounds: Vec<f64>,
    pub gains: GainsSection,
}

fn preset_controller(preset: &str) -> ControllerSpec {
    match preset {
        "noisy_integrator" => ControllerSpec::Predefined { alpha: 1.0 },
        "power_drift" => ControllerSpec::PowerDrift { k1: 4.1, k3: 3.0, k4: 2.0, k2: None },
        _ => ControllerSpec::Cascade2ClosedForm,
    }
}

fn preset_x0(preset: &str) -> Vec<Vec<f64>> {
    match preset {
        "cascade2" => vec![vec![-0.02, 0.03], vec![0.03, -0.02]],
        _ => vec![vec![1.0]],
    }
}

fn preset_bounds(preset: &str) -> Vec<f64> {
    match preset {
        "noisy_integrator" => vec![0.5, 1.0, 2.0],
        "power_drift" => vec![4.0, 2.0, 0.5],
        _ => vec![3.0],
    }
}

/// Design bound on the expected settling time implied by a controller.
fn design_bound(spec: &ControllerSpec) -> Result<Option<f64>> {
    Ok(match spec {
        ControllerSpec::Predefined { alpha } => Some(*alpha),
        ControllerSpec::FixedTime { a, b } => Some(tmax_fixed_time(*a, *b)?),
        ControllerSpec::PowerDrift { k4, .. } | ControllerSpec::Backstepping { k4, .. } => Some(*k4),
        ControllerSpec::Cascade2ClosedForm => Some(3.0),
        ControllerSpec::Zero => None,
    })
}

impl Config {
    pub fn resolve(&self, o: &Overrides) -> Result<Resolved> {
        let preset =
            o.preset.clone().or_else(|| self.system.preset.clone()).unwrap_or_else(|| "noisy_integrator".into());
        if !PRESET_NAMES.contains(&preset.as_str()) {
            return cfg_err(format!("unknown preset {preset:?}; expected one of {PRESET_NAMES:?}"));
        }
        let system = match preset.as_str() {
            "noisy_integrator" => SystemHandle::Plain(noisy_integrator_system()),
            "power_drift" => SystemHandle::Plain(power_drift_system()),
            _ => {
                let h = self.system.h.clone().unwrap_or_else(|| vec![1.0, 1.0]);
                if h.len() != 2 {
                    return cfg_err("system.h must have two entries");
                }
                SystemHandle::StrictFeedback(Box::new(cascade2_system(h[0], h[1])?))
            }
        };
        if self.system.h.is_some() && preset != "cascade2" {
            return cfg_err("system.h applies to the cascade2 preset only");
        }
        let controller = self.controller.clone().unwrap_or_else(|| preset_controller(&preset));
        let dim = system.as_dyn().dim();
        let needs_cascade =
            matches!(controller, ControllerSpec::Cascade2ClosedForm | ControllerSpec::Backstepping { .. });
        let scalar_only = matches!(
            controller,
            ControllerSpec::Predefined { .. } | ControllerSpec::FixedTime { .. } | ControllerSpec::PowerDrift { .. }
        );
        if (needs_cascade && preset != "cascade2") || (scalar_only && dim != 1) {
            return cfg_err(format!("controller {controller:?} does not fit preset {preset}"));
        }

        let bound = match o.bound.or(self.mc.bound).map(Ok).or_else(|| design_bound(&controller).transpose()) {
            Some(b) => b?,
            None => return cfg_err("controller has no design bound; set mc.bound or --bound"),
        };
        let x0 = o.x0.clone().or_else(|| self.sim.x0.clone()).unwrap_or_else(|| preset_x0(&preset));
        if let Some(bad) = x0.iter().find(|x| x.len() != dim) {
            return cfg_err(format!("initial state {bad:?} does not have dimension {dim}"));
        }
        let sim = SimConfig {
            dt: o.dt.or(self.sim.dt).unwrap_or(1e-4),
            t_max: self.sim.t_max.unwrap_or(3.0 * bound),
            eps_absorb: o.eps.or(self.sim.eps_absorb).unwrap_or(1e-3),
            seed: o.seed.or(self.mc.seed).unwrap_or(0),
            x_guard: self.sim.x_guard.unwrap_or(1e6),
        };
        let run = RunConfig {
            x0,
            sim,
            n_runs: o.runs.or(self.mc.runs).unwrap_or(200),
            bound,
            threads: o.threads.or(self.mc.threads),
        };
        run.validate()?;
        let bounds = self.mc.bounds.clone().unwrap_or_else(|| preset_bounds(&preset));
        Ok(Resolved { preset, system, controller, bound, run, bounds, gains: self.gains.clone().unwrap_or_default() })
    }
}

impl Resolved {
    /// Build the controller for target `bound`, re-deriving the design
    /// parameter (`α` or `k₄`) where the law has one.
    pub fn controller_for(&self, bound: f64) -> Result<Controller> {
        match &self.controller {
            ControllerSpec::Predefined { .. } => predefined_controller_scalar(bound),
            ControllerSpec::FixedTime { a, b } => fixed_time_controller(*a, *b),
            ControllerSpec::PowerDrift { k1, k3, k2, .. } => {
                let k2 = match k2 {
                    Some(k) => *k,
                    None => power_drift_k2(*k1, *k3)?,
                };
                power_drift_controller(*k1, k2, *k3, bound)
            }
            ControllerSpec::Cascade2ClosedForm => Ok(cascade2_closed_form_controller()),
            ControllerSpec::Backstepping { k1, k3, k2, r_bar, phi1, psi1, alpha, .. } => {
                let SystemHandle::StrictFeedback(sys) = &self.system else {
                    return cfg_err("backstepping needs a strict-feedback preset");
                };
                let g = GainsSection {
                    q: sys.q().to_vec(),
                    kappa: sys.kappa(),
                    r_bar: *r_bar,
                    k1: *k1,
                    k3: *k3,
                    k4: bound,
                };
                let mut gains = g.derive()?;
                if let Some(k2) = k2 {
                    gains = gains.with_k2(*k2)?;
                }
                let alpha = alpha.clone().unwrap_or_else(|| vec![[0.0; 3]; sys.n() - 1]);
                backstep_synthesize(sys, &gains, &CascadeBounds::constant(*phi1, *psi1, &alpha))
            }
            ControllerSpec::Zero => Ok(Controller::zero()),
        }
    }

    pub fn controller(&self) -> Result<Controller> {
        self.controller_for(self.bound)
    }
}
