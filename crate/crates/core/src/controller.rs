//! Feedback laws: closed-form scalar controllers, homogeneous gain derivation,
//! and the backstepping cascade for strict-feedback systems.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sigpow::spow;
use crate::system::StrictFeedbackSystem;

type Law = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Magnitude cap applied when a control law overflows or leaves its safe region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub u_max: f64,
    /// Any state component beyond this magnitude flags the evaluation.
    pub x_guard: f64,
}

impl Default for Saturation {
    fn default() -> Self {
        Self { u_max: 1e12, x_guard: 6.0 }
    }
}

/// A static state-feedback law `u = k(x)`.
#[derive(Clone)]
pub struct Controller {
    law: Law,
    description: String,
    params: BTreeMap<String, f64>,
    saturation: Option<Saturation>,
}

impl Controller {
    pub fn new(
        description: impl Into<String>,
        params: BTreeMap<String, f64>,
        law: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { law: Arc::new(law), description: description.into(), params, saturation: None }
    }

    /// `u ≡ 0`.
    pub fn zero() -> Self {
        Self::new("u = 0", BTreeMap::new(), |_| 0.0)
    }

    pub fn with_saturation(mut self, sat: Saturation) -> Self {
        self.saturation = Some(sat);
        self
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn saturation(&self) -> Option<Saturation> {
        self.saturation
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_flagged(x).0
    }

    /// Control value plus whether the saturation policy kicked in.
    pub fn eval_flagged(&self, x: &[f64]) -> (f64, bool) {
        let raw = (self.law)(x);
        let Some(sat) = self.saturation else {
            return (raw, false);
        };
        let outside = x.iter().any(|v| v.abs() > sat.x_guard);
        if raw.is_nan() {
            return (raw, true);
        }
        if raw.abs() > sat.u_max {
            (sat.u_max.copysign(raw), true)
        } else {
            (raw, outside)
        }
    }

    /// `u(0) = 0` exactly.
    pub fn vanishes_at_origin(&self, dim: usize) -> bool {
        self.eval(&vec![0.0; dim]) == 0.0
    }
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("description", &self.description)
            .field("params", &self.params)
            .field("saturation", &self.saturation)
            .finish_non_exhaustive()
    }
}

fn params<const N: usize>(kv: [(&str, f64); N]) -> BTreeMap<String, f64> {
    kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check_fixed_time(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return domain(format!("exponent a must lie in (0, 1), got {a}"));
    }
    if !(b > 1.0) || !b.is_finite() {
        return domain(format!("exponent b must exceed 1, got {b}"));
    }
    Ok(())
}

/// `u = −x/2 − ⌈x⌉^a − ⌈x⌉^b` for `dx = u dt + x dw`.
pub fn fixed_time_controller(a: f64, b: f64) -> Result<Controller> {
    check_fixed_time(a, b)?;
    Ok(Controller::new(format!("u = -x/2 - sp(x,{a}) - sp(x,{b})"), params([("a", a), ("b", b)]), move |x| {
        -0.5 * x[0] - spow(x[0], a) - spow(x[0], b)
    }))
}

/// Fixed-time settling bound `1/(1−a) + 1/(b−1)`.
pub fn tmax_fixed_time(a: f64, b: f64) -> Result<f64> {
    check_fixed_time(a, b)?;
    Ok(1.0 / (1.0 - a) + 1.0 / (b - 1.0))
}

/// `u = −(√π/(2α))·sign(x)·e^{x²} − x/2`, saturated at `|x| > 6` / `|u| > 1e12`.
pub fn predefined_controller_scalar(alpha: f64) -> Result<Controller> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return domain(format!("alpha must be positive, got {alpha}"));
    }
    let gain = PI.sqrt() / (2.0 * alpha);
    Ok(Controller::new(
        format!("u = -(sqrt(pi)/(2*{alpha}))*sign(x)*exp(x^2) - x/2"),
        params([("alpha", alpha)]),
        move |x| {
            let x = x[0];
            if x == 0.0 {
                0.0
            } else {
                -gain * x.signum() * (x * x).exp() - 0.5 * x
            }
        },
    )
    .with_saturation(Saturation::default()))
}

/// `k₂ = k₁ / (3(k₁/4 − 1)(k₃ − 1)/2)`.
pub fn power_drift_k2(k1: f64, k3: f64) -> Result<f64> {
    if !(k1 > 4.0) {
        return Err(Error::Constraint(format!("k1 must exceed 4, got {k1}")));
    }
    if !(k3 > 1.0) {
        return Err(Error::Constraint(format!("k3 must exceed 1, got {k3}")));
    }
    Ok(k1 / (3.0 * (k1 / 4.0 - 1.0) * (k3 - 1.0) / 2.0))
}

/// `u = −⌈x⌉^{5/3} − x³/2 − (k₁/2k₄)⌈x⌉^{1/3} − (k₂/2k₄)⌈x⌉^{k₃}` for
/// `dx = (⌈x⌉^{5/3} + u)dt + x² dw`.
pub fn power_drift_controller(k1: f64, k2: f64, k3: f64, k4: f64) -> Result<Controller> {
    if !(k1 > 4.0) || !(k3 > 1.0) || !(k4 > 0.0) || !(k2 > 0.0) || !k2.is_finite() {
        return Err(Error::Constraint(format!("need k1 > 4, k2 > 0, k3 > 1, k4 > 0; got ({k1}, {k2}, {k3}, {k4})")));
    }
    let (c1, c2) = (k1 / (2.0 * k4), k2 / (2.0 * k4));
    Ok(Controller::new(
        format!("u = -sp(x,5/3) - x^3/2 - {c1}*sp(x,1/3) - {c2}*sp(x,{k3})"),
        params([("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)]),
        move |x| {
            let x = x[0];
            -spow(x, 5.0 / 3.0) - 0.5 * x * x * x - c1 * spow(x, 1.0 / 3.0) - c2 * spow(x, k3)
        },
    ))
}

/// Closed-form two-state law with rounded, hard-coded coefficients:
/// `u = −(10.9 + 3.5β₁ + 82.4|ξ₂|^{0.75})⌈ξ₂⌉^{1/8}`, `β₁ = (47.1 + 165|ξ₁|^{3.1})^{0.6}`,
/// `ξ₁ = ⌈x₁⌉²`, `ξ₂ = ⌈x₂⌉^{2/0.45} + β₁^{2/0.45}ξ₁`.
pub fn cascade2_closed_form_controller() -> Controller {
    const R_BAR: f64 = 2.0;
    const R: [f64; 3] = [1.0, 0.45, 0.15];
    Controller::new(
        "u = -(10.9 + 3.5*beta1 + 82.4*|xi2|^0.75)*sp(xi2,1/8), beta1 = (47.1 + 165*|xi1|^3.1)^0.6",
        params([("r_bar", R_BAR), ("kappa", -0.25)]),
        |x| {
            let xi1 = spow(x[0], R_BAR / R[0]);
            let beta1 = (47.1 + 165.0 * xi1.abs().powf(3.1)).powf(0.6);
            let x2_star = -beta1 * spow(xi1, R[1] / R_BAR);
            let xi2 = spow(x[1], R_BAR / R[1]) - spow(x2_star, R_BAR / R[1]);
            -(10.9 + 3.5 * beta1 + 82.4 * xi2.abs().powf(0.75)) * spow(xi2, 0.125)
        },
    )
}

/// One named inequality required by the gain derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFlag {
    pub name: String,
    pub satisfied: bool,
    pub detail: String,
}

/// Homogeneous-design parameters and the derived exponents and gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSet {
    /// Weights `r₁ … r_{n+1}`.
    pub r: Vec<f64>,
    pub r_bar: f64,
    pub kappa: f64,
    pub n: usize,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub b1: f64,
    pub b2: f64,
    pub a: f64,
    /// Lower bound `2^{b₁}/(1−b₁)` that `k₁` must exceed.
    pub k1_threshold: f64,
    /// Set when `k2` was supplied instead of derived.
    #[serde(default)]
    pub k2_override: bool,
    pub constraints: Vec<ConstraintFlag>,
    pub valid: bool,
}

impl GainSet {
    /// Replace the derived `k₂` with an externally chosen value.
    pub fn with_k2(mut self, k2: f64) -> Result<Self> {
        if !(k2 > 0.0) || !k2.is_finite() {
            return domain(format!("k2 must be positive and finite, got {k2}"));
        }
        self.k2 = k2;
        self.k2_override = true;
        Ok(self)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.constraints.iter().filter(|c| !c.satisfied).map(|c| c.name.as_str()).collect()
    }

    /// Coefficient `(a − ab₁)/((a − ab₁ − 1)(b₂ − 1))` of the superlinear term.
    pub fn c(&self) -> f64 {
        let m = self.a - self.a * self.b1;
        m / ((m - 1.0) * (self.b2 - 1.0))
    }

    fn require_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::Constraint(format!("gain set violates {}", self.failing().join(", "))))
        }
    }
}

/// Default `r̄ = max 2rᵢ` over `i = 1..n`, so every `r̄/rᵢ ≥ 2`.
pub fn default_r_bar(r: &[f64]) -> f64 {
    r.iter().take(r.len().saturating_sub(1).max(1)).fold(0.0f64, |m, v| m.max(2.0 * v))
}

/// Derive `b₁, b₂, a, k₂` from the homogeneous design parameters and flag
/// each required inequality. Constraint violations are reported in the
/// result, not as errors; only malformed input is an error.
pub fn homogeneous_gains(r: &[f64], kappa: f64, r_bar: f64, k1: f64, k3: f64, n: usize, k4: f64) -> Result<GainSet> {
    if r.len() < 2 || n == 0 || r.iter().any(|v| !(v > &0.0)) {
        return domain("r must hold at least two positive weights and n must be positive");
    }
    let r_max = r[..r.len() - 1].iter().fold(0.0f64, |m, v| m.max(*v));
    if !(r_bar >= 2.0 * r_max) || !r_bar.is_finite() {
        return domain(format!("r_bar = {r_bar} must be at least 2·max r = {}", 2.0 * r_max));
    }
    if !(kappa < 0.0) || !(kappa > -r_bar) {
        return domain(format!("kappa must be negative, got {kappa}"));
    }
    if !(k4 > 0.0) || !k4.is_finite() || !k1.is_finite() || !k3.is_finite() {
        return domain("k1, k3 must be finite and k4 positive");
    }

    let d = 4.0 * r_bar - kappa;
    let b1 = 4.0 * r_bar / d;
    let b2 = (4.0 * r_bar + r_bar * k3) / d;
    let a = 2f64.powf(-b1) * k1;
    let k1_threshold = 2f64.powf(b1) / (1.0 - b1);
    let margin = a - a * b1 - 1.0;
    let k2 = (a - a * b1) / (margin * (b2 - 1.0)) * (n as f64).powf((r_bar * k3 + kappa) / d) * 2f64.powf(b2);

    let k3_min = -kappa / r_bar;
    let constraints = vec![
        ConstraintFlag { name: "k3_lower".into(), satisfied: k3 > k3_min, detail: format!("k3 = {k3} > {k3_min}") },
        ConstraintFlag {
            name: "k1_threshold".into(),
            satisfied: k1 > k1_threshold,
            detail: format!("k1 = {k1} > {k1_threshold}"),
        },
        ConstraintFlag {
            name: "a_margin".into(),
            satisfied: margin > 0.0,
            detail: format!("a - a*b1 - 1 = {margin} > 0"),
        },
    ];
    let valid = constraints.iter().all(|c| c.satisfied);
    Ok(GainSet {
        r: r.to_vec(),
        r_bar,
        kappa,
        n,
        k1,
        k2,
        k3,
        k4,
        b1,
        b2,
        a,
        k1_threshold,
        k2_override: false,
        constraints,
        valid,
    })
}

/// `β(s) = a s^{b₁} + c s^{b₂}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBeta {
    pub a: f64,
    pub b1: f64,
    pub c: f64,
    pub b2: f64,
}

impl PowerBeta {
    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        self.a * s.powf(self.b1) + self.c * s.powf(self.b2)
    }

    /// `∫₀¹ ds/(a s^{b₁}) + ∫₁^∞ ds/(c s^{b₂})`, an upper bound on `∫₀^∞ ds/β`.
    pub fn split_bound(&self) -> f64 {
        1.0 / ((1.0 - self.b1) * self.a) + 1.0 / (self.c * (self.b2 - 1.0))
    }
}

/// The rate function built from a valid gain set.
pub fn rate_from_gains(g: &GainSet) -> Result<PowerBeta> {
    g.require_valid()?;
    Ok(PowerBeta { a: g.a, b1: g.b1, c: g.c(), b2: g.b2 })
}

/// A nonnegative smooth bound `x̄ⱼ ↦ ℝ₊` with a gradient (central differences
/// unless overridden).
pub trait BoundFn: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + x[i].abs());
                y[i] = x[i] + h;
                let fp = self.value(&y);
                y[i] = x[i] - h;
                let fm = self.value(&y);
                y[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantBound(pub f64);

impl BoundFn for ConstantBound {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Closure-backed bound.
pub struct FnBound<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> BoundFn for FnBound<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub type SharedBound = Arc<dyn BoundFn>;

/// Bounding functions consumed by the cascade: the drift/diffusion envelopes
/// of the first subsystem and the three cross-term bounds of every later step.
#[derive(Clone)]
pub struct CascadeBounds {
    pub phi_bar1: SharedBound,
    pub psi_bar1: SharedBound,
    /// One triple per step `j = 2..n`.
    pub alpha: Vec<[SharedBound; 3]>,
}

impl CascadeBounds {
    pub fn constant(phi1: f64, psi1: f64, alpha: &[[f64; 3]]) -> Self {
        let c = |v: f64| -> SharedBound { Arc::new(ConstantBound(v)) };
        Self {
            phi_bar1: c(phi1),
            psi_bar1: c(psi1),
            alpha: alpha.iter().map(|t| [c(t[0]), c(t[1]), c(t[2])]).collect(),
        }
    }
}

/// `βⱼ(x̄ⱼ) = (Cⱼ(x̄ⱼ) + Dⱼ|ξⱼ|^{k₃})^{1/qⱼ}`.
#[derive(Clone)]
pub struct GainLaw {
    /// Constant part of `Cⱼ`.
    pub c_const: f64,
    /// State-dependent parts of `Cⱼ`, each `(weight, bound, squared)`.
    terms: Vec<(f64, SharedBound, bool)>,
    pub d: f64,
    pub inv_q: f64,
}

impl GainLaw {
    pub fn c(&self, xb: &[f64]) -> f64 {
        self.c_const
            + self
                .terms
                .iter()
                .map(|(w, b, sq)| {
                    let v = b.value(xb);
                    w * if *sq { v * v } else { v }
                })
                .sum::<f64>()
    }

    fn c_grad(&self, xb: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (w, b, sq) in &self.terms {
            let g = b.gradient(xb);
            let scale = if *sq { 2.0 * w * b.value(xb) } else { *w };
            for (o, gi) in out.iter_mut().zip(g) {
                *o += scale * gi;
            }
        }
    }
}

/// Values produced by one pass through the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub xi: Vec<f64>,
    /// `x*₁ … x*_{n+1}`; the last entry is the control.
    pub x_star: Vec<f64>,
    pub beta: Vec<f64>,
    /// `Pⱼ = ⌈x*ⱼ⌉^{r̄/rⱼ}` for `j = 1..n`.
    pub p: Vec<f64>,
    /// `∂Pⱼ/∂xᵢ`, row `j` has length `n` (zero for `i ≥ j`).
    pub dp: Vec<Vec<f64>>,
}

impl CascadeState {
    pub fn control(&self) -> f64 {
        *self.x_star.last().expect("cascade has at least one step")
    }
}

/// The virtual-controller cascade
/// `ξⱼ = ⌈xⱼ⌉^{r̄/rⱼ} − ⌈x*ⱼ⌉^{r̄/rⱼ}`, `x*_{j+1} = −βⱼ⌈ξⱼ⌉^{r_{j+1}/r̄}`.
#[derive(Clone)]
pub struct Cascade {
    pub r: Vec<f64>,
    pub r_bar: f64,
    pub kappa: f64,
    pub k3: f64,
    pub laws: Vec<GainLaw>,
}

impl Cascade {
    pub fn n(&self) -> usize {
        self.laws.len()
    }

    /// Forward pass with hand-propagated gradients of every `Pⱼ`.
    pub fn state(&self, x: &[f64]) -> CascadeState {
        let n = self.n();
        let (r, rb, k3) = (&self.r, self.r_bar, self.k3);
        let mut st = CascadeState {
            xi: vec![0.0; n],
            x_star: vec![0.0; n + 1],
            beta: vec![0.0; n],
            p: vec![0.0; n],
            dp: vec![vec![0.0; n]; n],
        };
        let mut p = 0.0;
        let mut dp = vec![0.0; n];
        let mut dxi = vec![0.0; n];
        let mut dc = vec![0.0; n];
        for j in 0..n {
            st.p[j] = p;
            st.dp[j].copy_from_slice(&dp);
            let e = rb / r[j];
            let xi = spow(x[j], e) - p;
            for i in 0..n {
                dxi[i] = -dp[i];
            }
            dxi[j] += e * x[j].abs().powf(e - 1.0);

            let law = &self.laws[j];
            let xb = &x[..=j];
            let inner = law.c(xb) + law.d * xi.abs().powf(k3);
            let beta = inner.powf(law.inv_q);
            law.c_grad(xb, &mut dc[..=j]);
            dc[j + 1..].iter_mut().for_each(|v| *v = 0.0);
            let outer = law.inv_q * inner.powf(law.inv_q - 1.0);
            let dxi_pow = law.d * k3 * spow(xi, k3 - 1.0);

            st.xi[j] = xi;
            st.beta[j] = beta;
            st.x_star[j + 1] = -beta * spow(xi, r[j + 1] / rb);

            // P_{j+1} = −β^{r̄/r_{j+1}} ξ
            let m = rb / r[j + 1];
            let bm = beta.powf(m);
            let dbm = m * beta.powf(m - 1.0);
            for i in 0..n {
                let dbeta = outer * (dc[i] + dxi_pow * dxi[i]);
                dp[i] = -(dbm * dbeta * xi + bm * dxi[i]);
            }
            p = -bm * xi;
        }
        st
    }

    /// Exponent `(4r̄ − κ − rⱼ)/r̄` of the step-`j` Lyapunov integrand (0-based `j`).
    pub fn w_exponent(&self, j: usize) -> f64 {
        (4.0 * self.r_bar - self.kappa - self.r[j]) / self.r_bar
    }
}

/// Cross-term bound produced by the weighted Young split of the previous
/// step (0-based `j ≥ 1`; uses `h̄_{j−1}`).
pub fn alpha1(gains: &GainSet, h_hi_prev: f64, j: usize) -> f64 {
    let (rb, k, rp) = (gains.r_bar, gains.kappa, gains.r[j - 1]);
    let two = 2f64.powf(1.0 - (rp + k) / rb);
    let phi = rb * gains.k1 / (gains.k4 * (4.0 * rb - k - rp) * h_hi_prev * two);
    h_hi_prev * two * ((rp + k) / (4.0 * rb)) * phi.powf(-(4.0 * rb - k - rp) / (rp + k))
}

/// Build the cascade gain laws for a strict-feedback system.
pub fn build_cascade(sys: &StrictFeedbackSystem, gains: &GainSet, bounds: &CascadeBounds) -> Result<Cascade> {
    gains.require_valid()?;
    let n = sys.n();
    if gains.n != n || gains.r.len() != n + 1 {
        return domain(format!("gain set is for n = {}, system has n = {n}", gains.n));
    }
    if sys.r().iter().zip(&gains.r).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0)) {
        return domain("gain set weights differ from the system's weights");
    }
    if bounds.alpha.len() != n - 1 {
        return Err(Error::Constraint(format!(
            "cross-term bounds missing: need {} step triples, got {}",
            n - 1,
            bounds.alpha.len()
        )));
    }
    let (rb, k, r) = (gains.r_bar, gains.kappa, sys.r());
    let (h_lo, h_hi, q) = (sys.h_lo(), sys.h_hi(), sys.q());
    let mut laws = Vec::with_capacity(n);
    for j in 0..n {
        let hl = h_lo[j];
        let mut law = GainLaw {
            c_const: (n - j) as f64 * gains.k1 / (hl * gains.k4),
            terms: Vec::new(),
            d: gains.k2 / (hl * gains.k4),
            inv_q: 1.0 / q[j],
        };
        if j == 0 {
            law.terms.push(((4.0 * rb - k - r[0]) / (2.0 * r[0] * hl), bounds.psi_bar1.clone(), true));
            law.terms.push((1.0 / hl, bounds.phi_bar1.clone(), false));
        } else {
            law.c_const += alpha1(gains, h_hi[j - 1], j) / hl;
            for b in &bounds.alpha[j - 1] {
                law.terms.push((1.0 / hl, b.clone(), false));
            }
        }
        laws.push(law);
    }
    Ok(Cascade { r: r.to_vec(), r_bar: rb, kappa: k, k3: gains.k3, laws })
}

/// The backstepping feedback `u = −βₙ⌈ξₙ⌉^{r_{n+1}/r̄}`.
pub fn backstep_synthesize(sys: &StrictFeedbackSystem, gains: &GainSet, bounds: &CascadeBounds) -> Result<Controller> {
    let cascade = build_cascade(sys, gains, bounds)?;
    let desc = format!(
        "backstepping cascade, n = {}, r_bar = {}, C1(0) = {:.6}, D = {:?}",
        cascade.n(),
        cascade.r_bar,
        cascade.laws[0].c(&[0.0]),
        cascade.laws.iter().map(|l| l.d).collect::<Vec<_>>()
    );
    let p = params([
        ("k1", gains.k1),
        ("k2", gains.k2),
        ("k3", gains.k3),
        ("k4", gains.k4),
        ("r_bar", gains.r_bar),
        ("kappa", gains.kappa),
    ]);
    Ok(Controller::new(desc, p, move |x| cascade.state(x).control()))
}
