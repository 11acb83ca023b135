//! Grid-based Lyapunov certificates. A passing grid means no violation was
//! found at the sampled states; it is not a proof over the whole space.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{Cascade, Controller};
use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate, integrate_half_line, QuadOptions};
use crate::sigpow::spow;
use crate::system::{default_fd_step, fd_derivatives, generator_from_derivatives, ItoSystem, ScalarField};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Integrals of `1/β` above this are reported as unbounded.
pub const BETA_BLOWUP: f64 = 1e3;

/// Candidate certificate: `LV ≤ −β(V)/α` away from the origin with
/// `∫₀^∞ ds/β(s) ≤ 1`.
#[derive(Clone)]
pub struct LyapunovSpec {
    pub v: Arc<dyn ScalarField>,
    pub beta: ScalarFn,
    pub alpha: f64,
}

impl LyapunovSpec {
    /// Spot checks: `V(0) = 0`, `V > 0` on `samples`, `β > 0` and
    /// nondecreasing on a log grid of `(0, 10⁴]`.
    pub fn validate(&self, dim: usize, samples: &[Vec<f64>]) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return domain(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.v.value(&vec![0.0; dim]) != 0.0 {
            return domain("V must vanish at the origin");
        }
        if let Some(x) = samples.iter().find(|x| !(self.v.value(x) > 0.0)) {
            return domain(format!("V is not positive at {x:?}"));
        }
        let mut prev = 0.0;
        for i in 0..=200 {
            let s = 10f64.powf(-12.0 + i as f64 * 0.08);
            let b = (self.beta)(s);
            if !(b > 0.0) || b < prev {
                return domain(format!("beta must be positive and nondecreasing; fails at s = {s}"));
            }
            prev = b;
        }
        Ok(())
    }
}

/// How the generator obtains `∇V` and `∇²V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivatives {
    Analytic,
    /// Central differences; `None` uses [`default_fd_step`].
    FiniteDifference(Option<f64>),
}

impl Derivatives {
    pub fn default_tol(self) -> f64 {
        match self {
            Derivatives::Analytic => 1e-9,
            Derivatives::FiniteDifference(_) => 1e-4,
        }
    }
}

fn field_derivatives(v: &dyn ScalarField, x: &[f64], mode: Derivatives) -> Result<(Vec<f64>, Vec<f64>)> {
    match mode {
        Derivatives::Analytic => match (v.gradient(x), v.hessian(x)) {
            (Some(g), Some(h)) => Ok((g, h)),
            _ => domain("analytic mode needs the field's gradient and Hessian"),
        },
        Derivatives::FiniteDifference(h) => {
            let step = h.unwrap_or_else(|| default_fd_step(x));
            if !(step > 0.0) {
                return domain(format!("finite-difference step must be positive, got {step}"));
            }
            Ok(fd_derivatives(v, x, step))
        }
    }
}

/// Value and error estimate of `∫₀^∞ ds/β(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaIntegral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub unbounded: bool,
}

/// `∫₀^∞ ds/β(s)` by adaptive quadrature in `ln s` with power-law tails.
pub fn beta_integral(beta: &dyn Fn(f64) -> f64, quad_tol: f64) -> Result<BetaIntegral> {
    if !(quad_tol > 0.0) {
        return domain(format!("quadrature tolerance must be positive, got {quad_tol}"));
    }
    let r = integrate_half_line(|s| 1.0 / beta(s), quad_tol, BETA_BLOWUP)?;
    Ok(BetaIntegral { value: r.value, error: r.error, converged: r.converged, unbounded: r.divergent })
}

/// Outcome of a grid check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub grid_size: usize,
    /// Largest signed residual of the inequality (`≤ 0` means satisfied).
    pub max_residual: f64,
    pub argmax_state: Vec<f64>,
    /// Largest `|residual| / (1 + |LV|)`.
    pub max_abs_relative_residual: f64,
    /// Grid indices where the residual was not finite.
    pub flagged: Vec<usize>,
    pub integral: Option<f64>,
    pub integral_err: Option<f64>,
    pub verdict: bool,
    pub note: String,
}

struct PointResult {
    residual: f64,
    lv: f64,
}

/// Reduce per-point results deterministically (ties go to the lowest index).
fn aggregate(grid: &[Vec<f64>], pts: &[Result<PointResult>], tol: f64) -> (f64, Vec<f64>, f64, Vec<usize>, bool) {
    let mut max_res = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    let mut max_rel = 0.0f64;
    let mut flagged = Vec::new();
    let mut ok = true;
    for (i, p) in pts.iter().enumerate() {
        match p {
            Ok(p) if p.residual.is_finite() => {
                if p.residual > max_res {
                    max_res = p.residual;
                    arg = grid[i].clone();
                }
                let scale = 1.0 + p.lv.abs();
                max_rel = max_rel.max(p.residual.abs() / scale);
                ok &= p.residual <= tol * scale;
            }
            _ => {
                flagged.push(i);
                ok = false;
            }
        }
    }
    (max_res, arg, max_rel, flagged, ok)
}

fn check_grid(grid: &[Vec<f64>]) -> Result<()> {
    if grid.is_empty() {
        return domain("grid is empty");
    }
    if grid.iter().any(|x| x.iter().all(|v| *v == 0.0)) {
        return domain("grid must exclude the origin");
    }
    Ok(())
}

/// Evaluate `LV + β(V)/α` on `grid`; passes when every residual is at most
/// `tol·(1 + |LV|)` and `∫ 1/β ≤ 1 + quad_tol`.
pub fn check_drift_condition(
    sys: &dyn ItoSystem,
    u: &Controller,
    spec: &LyapunovSpec,
    grid: &[Vec<f64>],
    tol: f64,
    mode: Derivatives,
) -> Result<CertReport> {
    check_grid(grid)?;
    if !(spec.alpha > 0.0) {
        return domain("alpha must be positive");
    }
    let pts: Vec<Result<PointResult>> = grid
        .par_iter()
        .map(|x| {
            let (g, h) = field_derivatives(spec.v.as_ref(), x, mode)?;
            let lv = generator_from_derivatives(sys, u, x, &g, &h)?;
            Ok(PointResult { residual: lv + (spec.beta)(spec.v.value(x)) / spec.alpha, lv })
        })
        .collect();
    if let Some(Err(e)) = pts.iter().find(|p| matches!(p, Err(Error::Domain(_)))) {
        return domain(e.to_string());
    }
    let (max_residual, argmax_state, max_rel, flagged, grid_ok) = aggregate(grid, &pts, tol);
    let quad_tol = 1e-9;
    let bi = beta_integral(spec.beta.as_ref(), quad_tol)?;
    let integral_ok = !bi.unbounded && bi.value <= 1.0 + quad_tol.max(bi.error);
    let verdict = grid_ok && integral_ok;
    let note = if verdict {
        "no violation found on grid".to_string()
    } else if !integral_ok {
        format!("integral of 1/beta = {} exceeds 1", bi.value)
    } else {
        "drift condition violated on grid".to_string()
    };
    Ok(CertReport {
        grid_size: grid.len(),
        max_residual,
        argmax_state,
        max_abs_relative_residual: max_rel,
        flagged,
        integral: (!bi.unbounded).then_some(bi.value),
        integral_err: (!bi.unbounded).then_some(bi.error),
        verdict,
        note,
    })
}

/// Evenly spaced scalar states on `[−half_width, half_width]` with points
/// inside the open hole `(−hole, hole)` dropped.
pub fn symmetric_grid(half_width: f64, points: usize, hole: f64) -> Vec<Vec<f64>> {
    let step = 2.0 * half_width / (points.max(2) - 1) as f64;
    (0..points).map(|i| -half_width + i as f64 * step).filter(|x| x.abs() >= hole).map(|x| vec![x]).collect()
}

const K1_SAMPLES: [f64; 9] = [1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0];

/// `β(s) = β̃(s)^p / ((1 − p)·β̃′(s))` from a class-K¹ function `β̃`
/// (strictly increasing, `β̃(0) = 0`, `β̃ → 1`), so that `∫ 1/β = 1`.
pub fn normalized_rate(beta_tilde: ScalarFn, d_beta_tilde: ScalarFn, p: f64) -> Result<ScalarFn> {
    if !(0.0..1.0).contains(&p) {
        return domain(format!("p must lie in [0, 1), got {p}"));
    }
    if beta_tilde(0.0).abs() > 1e-12 {
        return domain("beta_tilde(0) must be 0");
    }
    let mut prev = 0.0;
    for &s in &K1_SAMPLES {
        let (v, d) = (beta_tilde(s), d_beta_tilde(s));
        if !(d > 0.0) {
            return Err(Error::Constraint(format!("beta_tilde' = {d} is not positive at s = {s}")));
        }
        // strictly increasing until it rounds to 1
        if !(v <= 1.0 && (v > prev || v == 1.0)) {
            return Err(Error::Constraint(format!("beta_tilde is not increasing within (0, 1) at s = {s}")));
        }
        prev = v;
    }
    if (beta_tilde(1e12) - 1.0).abs() > 1e-3 {
        return Err(Error::Constraint("beta_tilde does not approach 1".into()));
    }
    Ok(Arc::new(move |s| {
        if s <= 0.0 {
            return 0.0;
        }
        beta_tilde(s).powf(p) / ((1.0 - p) * d_beta_tilde(s))
    }))
}

/// Checks of the bounded-transform certificate `W ∈ [0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformReport {
    /// `LW ≤ −1/α` on the grid.
    pub w_condition: CertReport,
    /// `LV ≤ −e^V/α` for `V = −ln(1 − W)`.
    pub v_condition: CertReport,
    /// Largest `|LW − e^{−V}(LV − ½(gᵀ∇V)²)|`, which is zero up to rounding.
    pub ito_identity_max_err: f64,
    /// Largest `|LW − e^{−V}LV|`; nonzero wherever the noise acts on `V`.
    pub first_order_identity_max_gap: f64,
}

/// Verify `LW ≤ −1/α (+ tol)` on `grid` and cross-check the same points
/// through `V = −ln(1 − W)`.
pub fn bounded_transform_check(
    sys: &dyn ItoSystem,
    u: &Controller,
    w: &dyn ScalarField,
    alpha: f64,
    grid: &[Vec<f64>],
    tol: f64,
    mode: Derivatives,
) -> Result<TransformReport> {
    check_grid(grid)?;
    if !(alpha > 0.0) {
        return domain("alpha must be positive");
    }
    let n = sys.dim();
    let mut w_pts = Vec::with_capacity(grid.len());
    let mut v_pts = Vec::with_capacity(grid.len());
    let (mut ito_err, mut naive_gap) = (0.0f64, 0.0f64);
    for x in grid {
        let wv = w.value(x);
        if !(0.0..1.0).contains(&wv) {
            return domain(format!("W = {wv} outside [0, 1) at {x:?}"));
        }
        let (gw, hw) = field_derivatives(w, x, mode)?;
        let lw = generator_from_derivatives(sys, u, x, &gw, &hw);
        // V = −ln(1−W): ∇V = ∇W/(1−W), ∇²V = ∇²W/(1−W) + ∇W∇Wᵀ/(1−W)²
        let m = 1.0 - wv;
        let gv: Vec<f64> = gw.iter().map(|g| g / m).collect();
        let mut hv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hv[i * n + j] = hw[i * n + j] / m + gw[i] * gw[j] / (m * m);
            }
        }
        let lv = generator_from_derivatives(sys, u, x, &gv, &hv);
        let v = -m.ln();
        if let (Ok(lw), Ok(lv)) = (&lw, &lv) {
            let mut g = vec![0.0; n];
            sys.diffusion(x, u.eval(x), &mut g);
            let gdv: f64 = g.iter().zip(&gv).map(|(a, b)| a * b).sum();
            ito_err = ito_err.max((lw - m * (lv - 0.5 * gdv * gdv)).abs());
            naive_gap = naive_gap.max((lw - m * lv).abs());
        }
        w_pts.push(lw.map(|lw| PointResult { residual: lw + 1.0 / alpha, lv: lw }));
        v_pts.push(lv.map(|lv| PointResult { residual: lv + v.exp() / alpha, lv }));
    }
    let report = |pts: &[Result<PointResult>], what: &str| {
        let (max_residual, argmax_state, max_rel, flagged, ok) = aggregate(grid, pts, tol);
        CertReport {
            grid_size: grid.len(),
            max_residual,
            argmax_state,
            max_abs_relative_residual: max_rel,
            flagged,
            integral: None,
            integral_err: None,
            verdict: ok,
            note: if ok { "no violation found on grid".into() } else { format!("{what} violated on grid") },
        }
    };
    Ok(TransformReport {
        w_condition: report(&w_pts, "LW <= -1/alpha"),
        v_condition: report(&v_pts, "LV <= -exp(V)/alpha"),
        ito_identity_max_err: ito_err,
        first_order_identity_max_gap: naive_gap,
    })
}

/// Analytic versus finite-difference partials of the step-`j` integral
/// `Wⱼ = ∫_{x*ⱼ}^{xⱼ} ⌈⌈s⌉^{r̄/rⱼ} − Pⱼ⌉^{pⱼ} ds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialsCheck {
    /// 1-based step index.
    pub j: usize,
    pub state: Vec<f64>,
    /// `∂Wⱼ/∂xᵢ` for `i = 1..j`.
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    pub fd_half: Vec<f64>,
    /// `|analytic − fd| / max(|analytic|, 1e−8)` at step `h`.
    pub residuals: Vec<f64>,
    /// Same at step `h/2`.
    pub residuals_half: Vec<f64>,
}

impl PartialsCheck {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// Ratio of the largest residual at `h` to that at `h/2` (≈ 4 for a
    /// second-order difference).
    pub fn richardson_ratio(&self) -> f64 {
        self.max_residual() / self.residuals_half.iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

fn w_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-300, rel_tol: 1e-14, max_intervals: 2000, initial_pieces: 1 }
}

/// Integrate over `[lo, hi]`, splitting at 0 where `|s|^e` is least smooth.
fn split_integral(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<f64> {
    let (a, b, sign) = if lo <= hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    let run = |a, b| -> Result<f64> {
        let r = integrate(&f, a, b, w_opts())?;
        if !r.converged && r.error > 1e-12 * r.value.abs().max(1e-300) {
            return Err(Error::Quadrature(format!("step integral on [{a}, {b}] did not converge")));
        }
        Ok(r.value)
    };
    let v = if a < 0.0 && b > 0.0 { run(a, 0.0)? + run(0.0, b)? } else { run(a, b)? };
    Ok(sign * v)
}

/// `Wⱼ(x̄ⱼ)` by quadrature (0-based `j`).
pub fn w_value(cascade: &Cascade, j: usize, x: &[f64]) -> Result<f64> {
    let st = cascade.state(x);
    let e = cascade.r_bar / cascade.r[j];
    let p = cascade.w_exponent(j);
    let pj = st.p[j];
    split_integral(|s| spow(spow(s, e) - pj, p), st.x_star[j], x[j])
}

/// Closed-form partials of `Wⱼ` (0-based `j`):
/// `∂/∂xⱼ = ⌈ξⱼ⌉^{pⱼ}`, `∂/∂xᵢ = −pⱼ ∫|⌈s⌉^{r̄/rⱼ} − Pⱼ|^{pⱼ−1}ds · ∂Pⱼ/∂xᵢ`.
pub fn w_partials(cascade: &Cascade, j: usize, x: &[f64]) -> Result<Vec<f64>> {
    let st = cascade.state(x);
    let e = cascade.r_bar / cascade.r[j];
    let p = cascade.w_exponent(j);
    let pj = st.p[j];
    let mut out = vec![0.0; j + 1];
    out[j] = spow(st.xi[j], p);
    if j > 0 {
        let inner = split_integral(|s| (spow(s, e) - pj).abs().powf(p - 1.0), st.x_star[j], x[j])?;
        for (o, d) in out[..j].iter_mut().zip(&st.dp[j]) {
            *o = -p * inner * d;
        }
    }
    Ok(out)
}

/// Compare [`w_partials`] with central differences of [`w_value`] at steps
/// `h` and `h/2` (`j` is 1-based).
pub fn wj_partials_check(cascade: &Cascade, j: usize, x: &[f64], h: f64) -> Result<PartialsCheck> {
    let n = cascade.n();
    if j == 0 || j > n {
        return domain(format!("step index {j} outside 1..={n}"));
    }
    if x.len() != n {
        return domain(format!("state has length {}, cascade has {n} steps", x.len()));
    }
    if !(h > 0.0) {
        return domain("finite-difference step must be positive");
    }
    let jj = j - 1;
    let analytic = w_partials(cascade, jj, x)?;
    let fd_at = |h: f64| -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        (0..=jj)
            .map(|i| {
                y[i] = x[i] + h;
                let fp = w_value(cascade, jj, &y)?;
                y[i] = x[i] - h;
                let fm = w_value(cascade, jj, &y)?;
                y[i] = x[i];
                Ok((fp - fm) / (2.0 * h))
            })
            .collect()
    };
    let fd = fd_at(h)?;
    let fd_half = fd_at(0.5 * h)?;
    let rel =
        |d: &[f64]| -> Vec<f64> { analytic.iter().zip(d).map(|(a, b)| (a - b).abs() / a.abs().max(1e-8)).collect() };
    Ok(PartialsCheck {
        j,
        state: x.to_vec(),
        residuals: rel(&fd),
        residuals_half: rel(&fd_half),
        analytic,
        fd,
        fd_half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{build_cascade, fixed_time_controller, homogeneous_gains, predefined_controller_scalar};
    use crate::presets::{cascade2_bounds, cascade2_system, noisy_integrator_system};
    use crate::system::{FnField, SquaredNorm};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sqrt_pi_beta() -> ScalarFn {
        Arc::new(|s: f64| PI.sqrt() * s.sqrt() * s.exp())
    }

    fn ni_spec(alpha: f64) -> LyapunovSpec {
        LyapunovSpec { v: Arc::new(SquaredNorm), beta: sqrt_pi_beta(), alpha }
    }

    fn ni_grid() -> Vec<Vec<f64>> {
        symmetric_grid(3.0, 601, 1e-3)
    }

    fn c2_cascade() -> Cascade {
        let sys = cascade2_system(1.0, 1.0).unwrap();
        let g = homogeneous_gains(&[1.0, 0.45, 0.15], -0.25, 2.0, 65.6, 3.1, 2, 3.0).unwrap().with_k2(494.6).unwrap();
        build_cascade(&sys, &g, &cascade2_bounds()).unwrap()
    }

    #[test]
    fn drift_identity_analytic_and_fd() {
        let u = predefined_controller_scalar(1.0).unwrap();
        let spec = ni_spec(1.0);
        spec.validate(1, &ni_grid()).unwrap();
        let r = check_drift_condition(&noisy_integrator_system(), &u, &spec, &ni_grid(), 1e-9, Derivatives::Analytic)
            .unwrap();
        assert!(r.verdict, "{r:?}");
        assert!(r.max_abs_relative_residual <= 1e-9);
        assert_relative_eq!(r.integral.unwrap(), 1.0, epsilon = 1e-6);
        let fd = Derivatives::FiniteDifference(None);
        let r = check_drift_condition(&noisy_integrator_system(), &u, &spec, &ni_grid(), 1e-4, fd).unwrap();
        assert!(r.verdict && r.max_abs_relative_residual <= 1e-4, "{r:?}");
    }

    #[test]
    fn drift_condition_fails_for_wrong_alpha() {
        let u = predefined_controller_scalar(1.0).unwrap();
        let r = check_drift_condition(
            &noisy_integrator_system(),
            &u,
            &ni_spec(0.5),
            &ni_grid(),
            1e-9,
            Derivatives::Analytic,
        )
        .unwrap();
        assert!(!r.verdict);
        assert!(r.max_residual > 0.0);
    }

    #[test]
    fn drift_condition_monotone_in_alpha() {
        let u = predefined_controller_scalar(1.0).unwrap();
        let mut passed = false;
        for &alpha in &[0.25, 0.5, 0.9, 1.0, 1.5, 4.0] {
            let r = check_drift_condition(
                &noisy_integrator_system(),
                &u,
                &ni_spec(alpha),
                &ni_grid(),
                1e-9,
                Derivatives::Analytic,
            )
            .unwrap();
            assert!(!passed || r.verdict, "passed below alpha = {alpha} but failed there");
            passed |= r.verdict;
        }
        assert!(passed);
    }

    #[test]
    fn fixed_time_generator_example() {
        // LV = −2x^{a+1} − 2x^{b+1} at x = 1 with a = 0.5, b = 2
        let u = fixed_time_controller(0.5, 2.0).unwrap();
        let lv = crate::system::generator_eval(&noisy_integrator_system(), &SquaredNorm, &u, &[1.0]).unwrap();
        assert_relative_eq!(lv, -4.0, max_relative = 1e-15);
        let lv = crate::system::generator_eval(
            &noisy_integrator_system(),
            &SquaredNorm,
            &predefined_controller_scalar(1.0).unwrap(),
            &[1.0],
        )
        .unwrap();
        // −√π·e
        assert_relative_eq!(lv, -4.818029094698722, max_relative = 1e-14);
    }

    #[test]
    fn grid_rejects_origin() {
        let u = predefined_controller_scalar(1.0).unwrap();
        let r = check_drift_condition(
            &noisy_integrator_system(),
            &u,
            &ni_spec(1.0),
            &[vec![0.0]],
            1e-9,
            Derivatives::Analytic,
        );
        assert!(r.is_err());
        assert_eq!(symmetric_grid(3.0, 601, 1e-3).len(), 600);
    }

    #[test]
    fn beta_integral_examples() {
        let r = beta_integral(sqrt_pi_beta().as_ref(), 1e-10).unwrap();
        assert!((r.value - 1.0).abs() <= 1e-6 && r.error <= 1e-10, "{r:?}");
        assert!(beta_integral(&|s| s, 1e-10).unwrap().unbounded);

        // ∫ ds/(a s^b₁ + c s^b₂) = (π/d)/sin(πμ/d)·(c/a)^{−μ/d}/a, μ = 1−b₁, d = b₂−b₁
        // (40-digit evaluation for the two-state example's gains)
        let g = homogeneous_gains(&[1.0, 0.45, 0.15], -0.25, 2.0, 65.6, 3.1, 2, 3.0).unwrap();
        let b = crate::controller::rate_from_gains(&g).unwrap();
        let r = beta_integral(&|s| b.value(s), 1e-10).unwrap();
        assert!((r.value - 0.947733228415031).abs() < 1e-10, "{r:?}");
        assert!(r.value < b.split_bound());
        assert!(beta_integral(&|s: f64| s.sqrt(), 1e-10).unwrap().unbounded);
    }

    #[test]
    fn normalized_rate_examples() {
        let bt: ScalarFn = Arc::new(|s: f64| -(-s).exp_m1());
        let dbt: ScalarFn = Arc::new(|s: f64| (-s).exp());
        let b = normalized_rate(bt.clone(), dbt.clone(), 0.0).unwrap();
        assert_relative_eq!(b(2.0), 2f64.exp(), max_relative = 1e-14);
        assert!((beta_integral(b.as_ref(), 1e-10).unwrap().value - 1.0).abs() < 1e-8);

        let rat: ScalarFn = Arc::new(|s: f64| s / (1.0 + s));
        let drat: ScalarFn = Arc::new(|s: f64| 1.0 / ((1.0 + s) * (1.0 + s)));
        let b = normalized_rate(rat.clone(), drat.clone(), 0.5).unwrap();
        assert_relative_eq!(b(1.0), 2.0 * 4.0 * 0.5f64.sqrt(), max_relative = 1e-14);
        assert!((beta_integral(b.as_ref(), 1e-10).unwrap().value - 1.0).abs() < 1e-8);

        let b = normalized_rate(rat, drat, 0.999).unwrap();
        assert!((beta_integral(b.as_ref(), 1e-10).unwrap().value - 1.0).abs() < 1e-4);

        let dec: ScalarFn = Arc::new(|s: f64| -s);
        assert!(matches!(normalized_rate(bt.clone(), dec, 0.0), Err(Error::Constraint(_))));
        assert!(normalized_rate(bt, dbt, 1.0).is_err());
    }

    fn ni_w() -> FnField {
        FnField::new(|x| -(-x[0] * x[0]).exp_m1()).with_derivatives(
            |x| vec![2.0 * x[0] * (-x[0] * x[0]).exp()],
            |x| vec![(2.0 - 4.0 * x[0] * x[0]) * (-x[0] * x[0]).exp()],
        )
    }

    #[test]
    fn transform_check_noisy_integrator() {
        let u = predefined_controller_scalar(1.0).unwrap();
        let grid = symmetric_grid(3.0, 61, 1e-3);
        let r =
            bounded_transform_check(&noisy_integrator_system(), &u, &ni_w(), 1.0, &grid, 1e-9, Derivatives::Analytic)
                .unwrap();
        // both forms need √π|x| ≥ 1, so they fail near the origin
        assert!(!r.w_condition.verdict && !r.v_condition.verdict);
        let outer: Vec<_> = grid.iter().filter(|x| x[0].abs() >= 0.6).cloned().collect();
        let ro =
            bounded_transform_check(&noisy_integrator_system(), &u, &ni_w(), 1.0, &outer, 1e-9, Derivatives::Analytic)
                .unwrap();
        assert!(ro.w_condition.verdict && ro.v_condition.verdict, "{ro:?}");
        assert!(r.ito_identity_max_err < 1e-12, "{}", r.ito_identity_max_err);
        assert!(r.first_order_identity_max_gap > 1e-3);
        for x in &grid {
            let x = x[0];
            let lv = -PI.sqrt() * x.abs() * (x * x).exp();
            let want = (-x * x).exp() * (lv - 2.0 * x.powi(4));
            let (g, h) = (ni_w().gradient(&[x]).unwrap(), ni_w().hessian(&[x]).unwrap());
            let lw = generator_from_derivatives(&noisy_integrator_system(), &u, &[x], &g, &h).unwrap();
            assert!((lw - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }

        let r = bounded_transform_check(
            &noisy_integrator_system(),
            &Controller::zero(),
            &ni_w(),
            1.0,
            &grid,
            1e-9,
            Derivatives::Analytic,
        )
        .unwrap();
        assert!(!r.w_condition.verdict && !r.v_condition.verdict);

        let bad = FnField::new(|x| x[0] * x[0]).with_derivatives(|x| vec![2.0 * x[0]], |_| vec![2.0]);
        assert!(bounded_transform_check(&noisy_integrator_system(), &u, &bad, 1.0, &grid, 1e-9, Derivatives::Analytic)
            .is_err());
    }

    #[test]
    fn transform_identity_for_squared_norm() {
        for &x in &[0.1f64, 1.0, 2.5] {
            let w = ni_w().value(&[x]);
            assert_relative_eq!(-(1.0 - w).ln(), x * x, max_relative = 1e-12);
        }
    }

    #[test]
    fn first_step_partial_is_one() {
        let c = c2_cascade();
        let r = wj_partials_check(&c, 1, &[1.0, 0.3], 1e-4).unwrap();
        assert_relative_eq!(r.analytic[0], 1.0, max_relative = 1e-15);
        assert!(r.max_residual() < 1e-6, "{r:?}");
    }

    #[test]
    fn second_step_partials_agree() {
        let c = c2_cascade();
        let r = wj_partials_check(&c, 2, &[0.5, 0.5], 1e-4).unwrap();
        assert!(r.max_residual() <= 1e-5, "{r:?}");
        let m = wj_partials_check(&c, 2, &[-0.5, -0.5], 1e-4).unwrap();
        assert!(m.max_residual() <= 1e-5, "{m:?}");
        for (a, b) in r.analytic.iter().zip(&m.analytic) {
            assert!((a + b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn derived_rate_integral_bounded(k1 in 64.7f64..400.0, k3 in 0.2f64..6.0) {
            let g = homogeneous_gains(&[1.0, 0.45, 0.15], -0.25, 2.0, k1, k3, 2, 3.0).unwrap();
            let b = crate::controller::rate_from_gains(&g).unwrap();
            let r = beta_integral(&|s| b.value(s), 1e-10).unwrap();
            prop_assert!(!r.unbounded);
            prop_assert!(r.value <= b.split_bound() + 1e-9);
            prop_assert!(r.value <= 1.0 + 1e-6);
        }

        #[test]
        fn k1_transform_integral_is_one(p in 0.0f64..0.99, scale in 0.1f64..10.0) {
            let bt: ScalarFn = Arc::new(move |s: f64| s / (scale + s));
            let dbt: ScalarFn = Arc::new(move |s: f64| scale / ((scale + s) * (scale + s)));
            let b = normalized_rate(bt, dbt, p).unwrap();
            let r = beta_integral(b.as_ref(), 1e-10).unwrap();
            prop_assert!((r.value - 1.0).abs() <= 1e-4, "{:?}", r);
        }
    }
}
