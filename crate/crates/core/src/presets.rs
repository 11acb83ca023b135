//! Built-in benchmark systems.

use std::sync::Arc;

use crate::controller::CascadeBounds;
use crate::error::Result;
use crate::sigpow::spow;
use crate::system::{FnSystem, GrowthData, StateFn, StrictFeedbackParts, StrictFeedbackSystem};

pub const PRESET_NAMES: [&str; 3] = ["noisy_integrator", "power_drift", "cascade2"];

/// `dx = u dt + x dw`.
pub fn noisy_integrator_system() -> FnSystem {
    FnSystem::new(1, |_, u, o| o[0] = u, |x, _, o| o[0] = x[0]).expect("vanishes at origin")
}

/// `dx = (⌈x⌉^{5/3} + u)dt + x² dw`.
pub fn power_drift_system() -> FnSystem {
    FnSystem::new(1, |x, u, o| o[0] = spow(x[0], 5.0 / 3.0) + u, |x, _, o| o[0] = x[0] * x[0])
        .expect("vanishes at origin")
}

fn sfn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> StateFn {
    Arc::new(f)
}

/// Two-state cascade
/// `dx₁ = (h₁⌈x₂⌉^{5/3} − ⌈x₁⌉^{3/4})dt + sin(x₁)|x₁| dw`, `dx₂ = h₂⌈u⌉^{4/3} dt`,
/// with `κ = −1/4` and `hᵢ ∈ [1, 2]`.
pub fn cascade2_system(h1: f64, h2: f64) -> Result<StrictFeedbackSystem> {
    StrictFeedbackSystem::new(StrictFeedbackParts {
        q: vec![5.0 / 3.0, 4.0 / 3.0],
        h: vec![h1, h2],
        h_lo: vec![1.0, 1.0],
        h_hi: vec![2.0, 2.0],
        f: vec![sfn(|x| -spow(x[0], 0.75)), sfn(|_| 0.0)],
        g: vec![sfn(|x| x[0].sin() * x[0].abs()), sfn(|_| 0.0)],
        kappa: -0.25,
        growth: GrowthData {
            varpi: vec![vec![0.0], vec![0.0, 0.0]],
            rho: vec![vec![0.125], vec![0.0, 0.0]],
            phi: vec![sfn(|_| 1.0), sfn(|_| 0.0)],
            psi: vec![sfn(|_| 1.0), sfn(|_| 0.0)],
        },
    })
}

/// Unit drift/diffusion envelopes for the first step; the second step's
/// cross-term bounds default to zero and can be overridden from config.
pub fn cascade2_bounds() -> CascadeBounds {
    CascadeBounds::constant(1.0, 1.0, &[[0.0; 3]])
}

/// `dx = ⌈u⌉^q dt` (`h = 1`), useful as a one-step cascade.
pub fn scalar_strict_feedback(q: f64, kappa: f64) -> Result<StrictFeedbackSystem> {
    StrictFeedbackSystem::new(StrictFeedbackParts {
        q: vec![q],
        h: vec![1.0],
        h_lo: vec![1.0],
        h_hi: vec![1.0],
        f: vec![sfn(|_| 0.0)],
        g: vec![sfn(|_| 0.0)],
        kappa,
        growth: GrowthData {
            varpi: vec![vec![0.0]],
            rho: vec![vec![0.0]],
            phi: vec![sfn(|_| 0.0)],
            psi: vec![sfn(|_| 0.0)],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ItoSystem;

    #[test]
    fn cascade2_envelopes_hold_on_grid() {
        let sys = cascade2_system(1.0, 1.0).unwrap();
        for (a, b) in sys.r().iter().zip([1.0, 0.45, 0.15]) {
            assert!((a - b).abs() < 1e-15);
        }
        for i in 0..=600 {
            let x1 = -3.0 + i as f64 * 0.01;
            let (ef, eg) = sys.growth_excess(&[x1, 0.3]);
            assert!(ef <= 1e-15 && eg <= 1e-15, "x1 = {x1}: {ef} {eg}");
        }
    }

    #[test]
    fn cascade2_dynamics() {
        let sys = cascade2_system(1.5, 2.0).unwrap();
        let mut f = [0.0; 2];
        sys.drift(&[1.0, 1.0], 1.0, &mut f);
        assert_eq!(f, [0.5, 2.0]);
        assert!(cascade2_system(2.5, 1.0).is_err());
    }

    #[test]
    fn scalar_presets_vanish() {
        let mut o = [1.0];
        noisy_integrator_system().drift(&[0.0], 0.0, &mut o);
        assert_eq!(o, [0.0]);
        power_drift_system().diffusion(&[2.0], 0.0, &mut o);
        assert_eq!(o, [4.0]);
    }
}
