//! Itô systems driven by a scalar Wiener process, the strict-feedback cascade,
//! and the infinitesimal generator.

use std::fmt;
use std::sync::Arc;

use crate::controller::Controller;
use crate::error::{domain, Error, Result};
use crate::sigpow::spow;

/// A real-valued function of (a prefix of) the state.
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `dx = f(x, u) dt + g(x, u) dw` with scalar control `u` and scalar `w`.
pub trait ItoSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], u: f64, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], u: f64, out: &mut [f64]);
}

type VecFn = Box<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// An [`ItoSystem`] built from closures.
pub struct FnSystem {
    dim: usize,
    drift: VecFn,
    diffusion: VecFn,
}

impl FnSystem {
    /// Fails unless `f(0, 0) = 0` and `g(0, 0) = 0`.
    pub fn new<F, G>(dim: usize, drift: F, diffusion: G) -> Result<Self>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return domain("system dimension must be positive");
        }
        let sys = Self { dim, drift: Box::new(drift), diffusion: Box::new(diffusion) };
        let zero = vec![0.0; dim];
        let mut out = vec![0.0; dim];
        sys.drift(&zero, 0.0, &mut out);
        if out.iter().any(|v| *v != 0.0) {
            return domain("drift must vanish at the origin with zero control");
        }
        sys.diffusion(&zero, 0.0, &mut out);
        if out.iter().any(|v| *v != 0.0) {
            return domain("diffusion must vanish at the origin with zero control");
        }
        Ok(sys)
    }
}

impl ItoSystem for FnSystem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64], u: f64, out: &mut [f64]) {
        (self.drift)(x, u, out)
    }
    fn diffusion(&self, x: &[f64], u: f64, out: &mut [f64]) {
        (self.diffusion)(x, u, out)
    }
}

impl fmt::Debug for FnSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSystem").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// A scalar field with optional analytic derivatives. The Hessian is
/// row-major `dim × dim`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `V(x) = ‖x‖²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredNorm;

impl ScalarField for SquaredNorm {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().map(|v| 2.0 * v).collect())
    }
    fn hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 2.0;
        }
        Some(h)
    }
}

type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A [`ScalarField`] from closures; derivatives are optional.
#[derive(Clone)]
pub struct FnField {
    value: StateFn,
    gradient: Option<GradFn>,
    hessian: Option<GradFn>,
}

impl FnField {
    pub fn new(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), gradient: None, hessian: None }
    }

    pub fn with_derivatives(
        self,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { gradient: Some(Arc::new(gradient)), hessian: Some(Arc::new(hessian)), ..self }
    }
}

impl ScalarField for FnField {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }
    fn hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }
}

/// Default central-difference step `1e−5·(1 + ‖x‖∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Central-difference gradient and Hessian of `v` at `x`.
pub fn fd_derivatives(v: &dyn ScalarField, x: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let v0 = v.value(x);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut y = x.to_vec();
    let at = |y: &mut Vec<f64>, d: &[(usize, f64)]| {
        for &(i, s) in d {
            y[i] += s;
        }
        let r = v.value(y);
        y.copy_from_slice(x);
        r
    };
    for i in 0..n {
        let fp = at(&mut y, &[(i, h)]);
        let fm = at(&mut y, &[(i, -h)]);
        grad[i] = (fp - fm) / (2.0 * h);
        hess[i * n + i] = (fp - 2.0 * v0 + fm) / (h * h);
        for j in 0..i {
            let pp = at(&mut y, &[(i, h), (j, h)]);
            let pm = at(&mut y, &[(i, h), (j, -h)]);
            let mp = at(&mut y, &[(i, -h), (j, h)]);
            let mm = at(&mut y, &[(i, -h), (j, -h)]);
            let d = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[i * n + j] = d;
            hess[j * n + i] = d;
        }
    }
    (grad, hess)
}

/// `∇V·f + ½ gᵀ∇²V g` at `x` from explicit derivatives.
pub fn generator_from_derivatives(
    sys: &dyn ItoSystem,
    u: &Controller,
    x: &[f64],
    grad: &[f64],
    hess: &[f64],
) -> Result<f64> {
    let n = sys.dim();
    if x.len() != n || grad.len() != n || hess.len() != n * n {
        return domain(format!("dimension mismatch: system has dim {n}, state has {}", x.len()));
    }
    let control = u.eval(x);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    sys.drift(x, control, &mut f);
    sys.diffusion(x, control, &mut g);
    let first: f64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            second += g[i] * hess[i * n + j] * g[j];
        }
    }
    let lv = first + 0.5 * second;
    if !lv.is_finite() {
        return Err(Error::Evaluation { state: x.to_vec(), what: "generator".into() });
    }
    Ok(lv)
}

/// Infinitesimal generator of the closed loop applied to `v`, using the
/// field's analytic gradient and Hessian.
pub fn generator_eval(sys: &dyn ItoSystem, v: &dyn ScalarField, u: &Controller, x: &[f64]) -> Result<f64> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::Evaluation { state: x.to_vec(), what: "state".into() });
    }
    let (Some(grad), Some(hess)) = (v.gradient(x), v.hessian(x)) else {
        return domain("generator_eval needs an analytic gradient and Hessian");
    };
    generator_from_derivatives(sys, u, x, &grad, &hess)
}

/// Same as [`generator_eval`] with central differences of `v` at step `h`.
pub fn generator_eval_fd(sys: &dyn ItoSystem, v: &dyn ScalarField, u: &Controller, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return domain(format!("finite-difference step must be positive, got {h}"));
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::Evaluation { state: x.to_vec(), what: "state".into() });
    }
    let (grad, hess) = fd_derivatives(v, x, h);
    generator_from_derivatives(sys, u, x, &grad, &hess)
}

/// Admissible κ interval `(−1/(1 + Σ_{s=1}^{n−1} 1/(q₁⋯q_s)), 0)`.
pub fn kappa_interval(q: &[f64]) -> Result<(f64, f64)> {
    if q.is_empty() || q.iter().any(|&v| !(v > 1.0) || !v.is_finite()) {
        return domain("powers q must be a nonempty list of finite values > 1");
    }
    let mut prod = 1.0;
    let mut sum = 0.0;
    for &qs in &q[..q.len() - 1] {
        prod *= qs;
        sum += 1.0 / prod;
    }
    Ok((-1.0 / (1.0 + sum), 0.0))
}

/// Homogeneous weights `r₁ = 1`, `r_{i+1} = (rᵢ + κ)/qᵢ`; returns `n + 1` entries.
pub fn r_recursion(q: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let (lo, hi) = kappa_interval(q)?;
    if !(kappa > lo && kappa < hi) {
        return Err(Error::InadmissibleKappa {
            kappa,
            reason: format!("outside the admissible interval ({lo}, {hi})"),
        });
    }
    let mut r = Vec::with_capacity(q.len() + 1);
    r.push(1.0);
    for (i, &qi) in q.iter().enumerate() {
        let next = (r[i] + kappa) / qi;
        if !(next > 0.0) {
            return Err(Error::InadmissibleKappa { kappa, reason: format!("r[{}] = {next} is not positive", i + 2) });
        }
        r.push(next);
    }
    Ok(r)
}

/// Growth-envelope data for the drift and diffusion of each subsystem:
/// `|fᵢ| ≤ φᵢ Σⱼ |xⱼ|^(ϖᵢⱼ + (rᵢ+κ)/rⱼ)` and `|gᵢ| ≤ ψᵢ Σⱼ |xⱼ|^(ρᵢⱼ + (2rᵢ+κ)/(2rⱼ))`.
#[derive(Clone)]
pub struct GrowthData {
    /// Lower-triangular `ϖ[i][j]`, `j ≤ i`.
    pub varpi: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub phi: Vec<StateFn>,
    pub psi: Vec<StateFn>,
}

/// Everything needed to build a [`StrictFeedbackSystem`].
#[derive(Clone)]
pub struct StrictFeedbackParts {
    pub q: Vec<f64>,
    /// Actual control coefficients used in simulation.
    pub h: Vec<f64>,
    pub h_lo: Vec<f64>,
    pub h_hi: Vec<f64>,
    /// `fᵢ` receives `x̄ᵢ = (x₁, …, xᵢ)`.
    pub f: Vec<StateFn>,
    pub g: Vec<StateFn>,
    pub kappa: f64,
    pub growth: GrowthData,
}

/// The strict-feedback cascade
/// `dxᵢ = (hᵢ⌈x_{i+1}⌉^{qᵢ} + fᵢ(x̄ᵢ))dt + gᵢ(x̄ᵢ)dw`, `x_{n+1} := u`.
#[derive(Clone)]
pub struct StrictFeedbackSystem {
    parts: StrictFeedbackParts,
    r: Vec<f64>,
}

impl StrictFeedbackSystem {
    pub fn new(parts: StrictFeedbackParts) -> Result<Self> {
        let n = parts.q.len();
        if n == 0 {
            return domain("strict-feedback system needs n >= 1");
        }
        let lens = [
            parts.h.len(),
            parts.h_lo.len(),
            parts.h_hi.len(),
            parts.f.len(),
            parts.g.len(),
            parts.growth.varpi.len(),
            parts.growth.rho.len(),
            parts.growth.phi.len(),
            parts.growth.psi.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return domain(format!("every per-subsystem list must have length {n}"));
        }
        for i in 0..n {
            let (lo, hi, h) = (parts.h_lo[i], parts.h_hi[i], parts.h[i]);
            if !(lo > 0.0 && lo <= hi) {
                return domain(format!("need 0 < h_lo <= h_hi for subsystem {}", i + 1));
            }
            if !(h >= lo && h <= hi) {
                return domain(format!("h[{}] = {h} is outside [{lo}, {hi}]", i + 1));
            }
            let (v, p) = (&parts.growth.varpi[i], &parts.growth.rho[i]);
            if v.len() != i + 1 || p.len() != i + 1 || v.iter().chain(p).any(|&e| !(e >= 0.0)) {
                return domain(format!("growth exponents for subsystem {} must be i nonnegative values", i + 1));
            }
        }
        let r = r_recursion(&parts.q, parts.kappa)?;
        let zero = vec![0.0; n];
        for i in 0..n {
            if (parts.f[i])(&zero[..=i]) != 0.0 || (parts.g[i])(&zero[..=i]) != 0.0 {
                return domain(format!("f and g of subsystem {} must vanish at the origin", i + 1));
            }
        }
        Ok(Self { parts, r })
    }

    pub fn n(&self) -> usize {
        self.parts.q.len()
    }
    pub fn q(&self) -> &[f64] {
        &self.parts.q
    }
    pub fn kappa(&self) -> f64 {
        self.parts.kappa
    }
    /// `r₁ … r_{n+1}`.
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    pub fn h_lo(&self) -> &[f64] {
        &self.parts.h_lo
    }
    pub fn h_hi(&self) -> &[f64] {
        &self.parts.h_hi
    }
    pub fn parts(&self) -> &StrictFeedbackParts {
        &self.parts
    }

    /// Largest excess of `|fᵢ|` and `|gᵢ|` over their growth envelopes at `x`
    /// (`(excess_f, excess_g)`, nonpositive when both envelopes hold).
    pub fn growth_excess(&self, x: &[f64]) -> (f64, f64) {
        let (r, k, gd) = (&self.r, self.parts.kappa, &self.parts.growth);
        let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..self.n() {
            let xb = &x[..=i];
            let env_f: f64 = (0..=i).map(|j| xb[j].abs().powf(gd.varpi[i][j] + (r[i] + k) / r[j])).sum();
            let env_g: f64 = (0..=i).map(|j| xb[j].abs().powf(gd.rho[i][j] + (2.0 * r[i] + k) / (2.0 * r[j]))).sum();
            worst.0 = worst.0.max((self.parts.f[i])(xb).abs() - (gd.phi[i])(xb) * env_f);
            worst.1 = worst.1.max((self.parts.g[i])(xb).abs() - (gd.psi[i])(xb) * env_g);
        }
        worst
    }
}

impl ItoSystem for StrictFeedbackSystem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn drift(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let next = if i + 1 < n { x[i + 1] } else { u };
            out[i] = self.parts.h[i] * spow(next, self.parts.q[i]) + (self.parts.f[i])(&x[..=i]);
        }
    }

    fn diffusion(&self, x: &[f64], _u: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n()) {
            *o = (self.parts.g[i])(&x[..=i]);
        }
    }
}

impl fmt::Debug for StrictFeedbackSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrictFeedbackSystem")
            .field("q", &self.parts.q)
            .field("h", &self.parts.h)
            .field("kappa", &self.parts.kappa)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}
