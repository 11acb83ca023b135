//! Adaptive Gauss–Kronrod quadrature on finite intervals and on `[0, ∞)`.
//!
//! The half-line integrator works in logarithmic coordinates `s = e^y`, which
//! turns algebraic endpoint behaviour `s^p` at zero and at infinity into
//! exponential behaviour in `y`. Beyond the integrated window the integrand is
//! extrapolated as a power law from its local log-slope, so integrable
//! singularities as strong as `s^(−0.999)` are captured without sampling
//! below the floating-point range.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Gauss–Kronrod 7/15 abscissae and weights (symmetric, last entry is the centre).
// Digits are kept as published for the rule.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Piece> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut abs_sum = WGK[7] * fc.abs();
    let mut fv = [0.0; 15];
    fv[7] = fc;
    for k in 0..7 {
        let dx = half * XGK[k];
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        fv[k] = f1;
        fv[14 - k] = f2;
        kronrod += WGK[k] * (f1 + f2);
        abs_sum += WGK[k] * (f1.abs() + f2.abs());
        if k % 2 == 1 {
            gauss += WG[k / 2] * (f1 + f2);
        }
    }
    if !kronrod.is_finite() || fv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mean = 0.5 * kronrod;
    let asc: f64 =
        fv.iter().enumerate().map(|(i, v)| WGK[if i < 8 { i } else { 14 - i }] * (v - mean).abs()).sum::<f64>()
            * half.abs();
    let value = kronrod * half;
    let res_abs = abs_sum * half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Piece { a, b, value, error: err })
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
    pub converged: bool,
}

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Number of equal pieces the interval is cut into before adapting.
    pub initial_pieces: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 10_000, initial_pieces: 1 }
    }
}

/// Globally adaptive G7K15 quadrature of `f` over `[a, b]`: the piece with the
/// largest error estimate is bisected until the summed error meets the
/// tolerance or the interval cap is reached.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Quadrature(format!("infinite limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, intervals: 0, converged: true });
    }
    let pieces = opts.initial_pieces.max(1);
    let mut heap = BinaryHeap::with_capacity(opts.max_intervals + pieces);
    let width = (b - a) / pieces as f64;
    for k in 0..pieces {
        let lo = a + width * k as f64;
        let hi = if k + 1 == pieces { b } else { a + width * (k + 1) as f64 };
        heap.push(kronrod15(&f, lo, hi)?);
    }
    let totals = |heap: &BinaryHeap<Piece>| heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    loop {
        let (value, error) = totals(&heap);
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(QuadResult { value, error, intervals: heap.len(), converged: true });
        }
        if heap.len() >= opts.max_intervals {
            return Ok(QuadResult { value, error, intervals: heap.len(), converged: false });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // interval cannot be split further in floating point
            heap.push(Piece { error: 0.0, ..worst });
            let (value, error) = totals(&heap);
            return Ok(QuadResult { value, error, intervals: heap.len(), converged: false });
        }
        heap.push(kronrod15(&f, worst.a, mid)?);
        heap.push(kronrod15(&f, mid, worst.b)?);
    }
}

/// Log-coordinate window used by [`integrate_half_line`]: `s ∈ [e^−690, e^690]`.
pub const LOG_WINDOW: f64 = 690.0;

/// Result of integrating over `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfLineResult {
    /// Total including both extrapolated tails; `+∞` when divergent.
    pub value: f64,
    pub error: f64,
    pub lower_tail: f64,
    pub upper_tail: f64,
    pub converged: bool,
    pub divergent: bool,
}

/// Power-law tail beyond a window edge. `g` is the integrand in log
/// coordinates; `edge` is the window end and `inward` the step direction
/// (+1 at the lower edge, −1 at the upper). Returns `(tail, uncertainty)` or
/// `None` when the integrand does not decay outward.
fn log_tail<G: Fn(f64) -> f64>(g: &G, edge: f64, inward: f64) -> Option<(f64, f64)> {
    let g0 = g(edge);
    if g0 == 0.0 {
        return Some((0.0, 0.0));
    }
    let g1 = g(edge + inward);
    let g2 = g(edge + 2.0 * inward);
    if g1 == 0.0 || g2 == 0.0 {
        return None;
    }
    // decay rate per unit of y moving outward
    let rate0 = (g1 / g0).ln();
    let rate1 = (g2 / g1).ln();
    if rate0 <= 1e-12 {
        return None;
    }
    let tail = g0 / rate0;
    let spread = tail * ((rate0 - rate1) / rate0).abs();
    Some((tail, spread))
}

/// Integrates a nonnegative `f` over `[0, ∞)` via `s = e^y`.
///
/// Reports `divergent` when the integrand fails to decay at either end or the
/// total exceeds `blowup`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64, blowup: f64) -> Result<HalfLineResult> {
    let g = |y: f64| {
        let s = y.exp();
        s * f(s)
    };
    let diverged = |lower_tail, upper_tail| HalfLineResult {
        value: f64::INFINITY,
        error: f64::INFINITY,
        lower_tail,
        upper_tail,
        converged: false,
        divergent: true,
    };
    let lower = log_tail(&g, -LOG_WINDOW, 1.0);
    let upper = log_tail(&g, LOG_WINDOW, -1.0);
    let (Some((lo_tail, lo_err)), Some((hi_tail, hi_err))) = (lower, upper) else {
        let pick = |t: Option<(f64, f64)>| t.map_or(f64::INFINITY, |v| v.0);
        return Ok(diverged(pick(lower), pick(upper)));
    };
    let opts = QuadOptions { abs_tol: 0.25 * tol, rel_tol: 0.0, max_intervals: 10_000, initial_pieces: 128 };
    let body = integrate(g, -LOG_WINDOW, LOG_WINDOW, opts)?;
    let value = body.value + lo_tail + hi_tail;
    if !value.is_finite() || value > blowup {
        return Ok(diverged(lo_tail, hi_tail));
    }
    let error = body.error + lo_err + hi_err;
    Ok(HalfLineResult {
        value,
        error,
        lower_tail: lo_tail,
        upper_tail: hi_tail,
        converged: body.converged && error <= tol,
        divergent: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kronrod_and_gauss_are_exact_on_polynomials() {
        for k in 0..=22 {
            let p = kronrod15(&|x: f64| x.powi(k), -1.0, 1.0).unwrap();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((p.value - exact).abs() < 1e-14, "K15 degree {k}");
        }
        // the embedded Gauss rule is exact through degree 13
        for k in 0..=13 {
            let f = |x: f64| x.powi(k);
            let mut g = WG[3] * f(0.0);
            for j in 0..3 {
                let x = XGK[2 * j + 1];
                g += WG[j] * (f(x) + f(-x));
            }
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((g - exact).abs() < 1e-14, "G7 degree {k}");
        }
    }

    #[test]
    fn finite_interval() {
        let r = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, QuadOptions::default()).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-13);
        let r = integrate(|x: f64| x.sqrt(), 0.0, 1.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, 2.0 / 3.0, max_relative = 1e-12);
        let r = integrate(|x: f64| x, 2.0, 1.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, -1.5, max_relative = 1e-14);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(integrate(|x: f64| 1.0 / x, -1.0, 1.0, QuadOptions::default()).is_err());
    }

    #[test]
    fn half_line_gamma_integrals() {
        // ∫ s^(-1/2) e^(-s) ds = Γ(1/2)
        let r = integrate_half_line(|s: f64| s.powf(-0.5) * (-s).exp(), 1e-10, 1e3).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.value, std::f64::consts::PI.sqrt(), max_relative = 1e-10);
        // ∫ 1/(1+s)^2 ds = 1
        let r = integrate_half_line(|s: f64| 1.0 / (1.0 + s).powi(2), 1e-10, 1e3).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn strong_endpoint_singularity_uses_tail() {
        // ∫_0^1 0.001·s^(−0.999) ds = 1, most of it below 1e-300
        let r = integrate_half_line(|s: f64| if s < 1.0 { 0.001 * s.powf(-0.999) } else { 0.0 }, 1e-8, 1e3).unwrap();
        assert!(r.lower_tail > 0.4);
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn harmonic_diverges() {
        let r = integrate_half_line(|s: f64| 1.0 / s, 1e-8, 1e3).unwrap();
        assert!(r.divergent);
        assert!(r.value.is_infinite());
    }
}
