//! Signed-power arithmetic `⌈a⌉^b = sign(a)·|a|^b` and the power inequalities
//! the backstepping design leans on.
//!
//! The unchecked [`spow`] is the hot-path kernel used by controllers and
//! drifts; [`sigpow`] and friends validate their inputs.

use crate::error::{domain, Result};

/// `sign(a)·|a|^b` without input validation. `spow(0, b) == 0` for every `b`,
/// including `b == 0`.
#[inline]
pub fn spow(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.signum() * a.abs().powf(b)
    }
}

/// A signed power `⌈base⌉^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedPower {
    pub base: f64,
    pub exponent: f64,
}

impl SignedPower {
    pub fn new(base: f64, exponent: f64) -> Result<Self> {
        if !base.is_finite() || !exponent.is_finite() {
            return domain(format!("non-finite signed power input ({base}, {exponent})"));
        }
        if exponent < 0.0 {
            return domain(format!("signed power exponent must be >= 0, got {exponent}"));
        }
        Ok(Self { base, exponent })
    }

    pub fn value(&self) -> f64 {
        spow(self.base, self.exponent)
    }
}

pub fn sigpow(a: f64, b: f64) -> Result<f64> {
    SignedPower::new(a, b).map(|p| p.value())
}

fn check_c2_exponent(a: f64, b: f64) -> Result<()> {
    if !a.is_finite() || !b.is_finite() {
        return domain(format!("non-finite input ({a}, {b})"));
    }
    if b < 2.0 {
        return domain(format!("derivative formulas need exponent >= 2, got {b}"));
    }
    Ok(())
}

/// First derivative of `a ↦ ⌈a⌉^b`, i.e. `b·|a|^(b−1)`.
pub fn sigpow_d1(a: f64, b: f64) -> Result<f64> {
    check_c2_exponent(a, b)?;
    Ok(b * a.abs().powf(b - 1.0))
}

/// Second derivative of `a ↦ ⌈a⌉^b`, i.e. `b(b−1)·⌈a⌉^(b−2)`.
pub fn sigpow_d2(a: f64, b: f64) -> Result<f64> {
    check_c2_exponent(a, b)?;
    Ok(b * (b - 1.0) * spow(a, b - 2.0))
}

/// One side-by-side evaluation of an inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub lhs: f64,
    pub rhs: f64,
}

impl Residual {
    pub fn value(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Holds up to `rel_tol·(1 + |rhs|)`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.value() >= -rel_tol * (1.0 + self.rhs.abs())
    }
}

fn finite_all(vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        domain("non-finite inequality input")
    }
}

/// `|⌈x⌉^(pq) − ⌈y⌉^(pq)| <= 2^(1−p)·|⌈x⌉^q − ⌈y⌉^q|^p` for `0 < p < 1 < q`.
pub fn power_difference_residual(x: f64, y: f64, p: f64, q: f64) -> Result<Residual> {
    finite_all(&[x, y, p, q])?;
    if !(p > 0.0 && p < 1.0) || q <= 1.0 {
        return domain(format!("need 0 < p < 1 < q, got p={p}, q={q}"));
    }
    let lhs = (spow(x, p * q) - spow(y, p * q)).abs();
    let rhs = 2f64.powf(1.0 - p) * (spow(x, q) - spow(y, q)).abs().powf(p);
    Ok(Residual { lhs, rhs })
}

/// Weighted Young inequality
/// `|x|^p|y|^q <= p/(p+q)·f·|x|^(p+q) + q/(p+q)·f^(−p/q)·|y|^(p+q)`.
pub fn young_residual(x: f64, y: f64, p: f64, q: f64, f: f64) -> Result<Residual> {
    finite_all(&[x, y, p, q, f])?;
    if p <= 0.0 || q <= 0.0 || f <= 0.0 {
        return domain(format!("need p, q, f > 0, got p={p}, q={q}, f={f}"));
    }
    let (ax, ay) = (x.abs(), y.abs());
    let s = p + q;
    let lhs = ax.powf(p) * ay.powf(q);
    let rhs = p / s * f * ax.powf(s) + q / s * f.powf(-p / q) * ay.powf(s);
    Ok(Residual { lhs, rhs })
}

/// Both halves of `(|x|+|y|)^(1/a) <= |x|^(1/a) + |y|^(1/a) <= 2^((a−1)/a)(|x|+|y|)^(1/a)`.
pub fn root_sum_residuals(x: f64, y: f64, a: f64) -> Result<(Residual, Residual)> {
    finite_all(&[x, y, a])?;
    if a < 1.0 {
        return domain(format!("need a >= 1, got {a}"));
    }
    let e = 1.0 / a;
    let (ax, ay) = (x.abs(), y.abs());
    let root_of_sum = (ax + ay).powf(e);
    let sum_of_roots = ax.powf(e) + ay.powf(e);
    let lower = Residual { lhs: root_of_sum, rhs: sum_of_roots };
    let upper = Residual { lhs: sum_of_roots, rhs: 2f64.powf((a - 1.0) / a) * root_of_sum };
    Ok((lower, upper))
}

/// `(Σ aᵢ)^b <= max{j^(b−1), 1}·Σ aᵢ^b` for nonnegative terms and `b > 0`.
pub fn power_sum_residual(terms: &[f64], b: f64) -> Result<Residual> {
    finite_all(terms)?;
    finite_all(&[b])?;
    if terms.is_empty() || b <= 0.0 || terms.iter().any(|&t| t < 0.0) {
        return domain("need a nonempty list of nonnegative terms and b > 0");
    }
    let j = terms.len() as f64;
    let lhs = terms.iter().sum::<f64>().powf(b);
    let rhs = j.powf(b - 1.0).max(1.0) * terms.iter().map(|t| t.powf(b)).sum::<f64>();
    Ok(Residual { lhs, rhs })
}

/// The four power inequalities evaluated at one sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityResiduals {
    pub power_difference: Residual,
    pub young: Residual,
    pub root_sum_lower: Residual,
    pub root_sum_upper: Residual,
    pub power_sum: Residual,
}

impl InequalityResiduals {
    pub fn all(&self) -> [Residual; 5] {
        [self.power_difference, self.young, self.root_sum_lower, self.root_sum_upper, self.power_sum]
    }

    pub fn hold(&self, rel_tol: f64) -> bool {
        self.all().iter().all(|r| r.holds(rel_tol))
    }
}

/// Evaluates every inequality at `(x, y)`: the power difference with `(p, q)`,
/// Young with `(p, q, f_val)`, the root sums with `a`, and the power sum over
/// the terms `(|x|, |y|)` with exponent `q`.
pub fn inequality_residuals(x: f64, y: f64, p: f64, q: f64, a: f64, f_val: f64) -> Result<InequalityResiduals> {
    let (root_sum_lower, root_sum_upper) = root_sum_residuals(x, y, a)?;
    Ok(InequalityResiduals {
        power_difference: power_difference_residual(x, y, p, q)?,
        young: young_residual(x, y, p, q, f_val)?,
        root_sum_lower,
        root_sum_upper,
        power_sum: power_sum_residual(&[x.abs(), y.abs()], q)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn central(f: impl Fn(f64) -> f64, a: f64, h: f64) -> f64 {
        (f(a + h) - f(a - h)) / (2.0 * h)
    }

    #[test]
    fn sigpow_examples() {
        assert_relative_eq!(sigpow(-8.0, 1.0 / 3.0).unwrap(), -2.0, max_relative = 1e-15);
        assert_eq!(sigpow(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(sigpow(-2.0, 2.0).unwrap(), -4.0);
        assert_eq!(sigpow(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(sigpow(-3.0, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn sigpow_rejects_bad_input() {
        assert!(sigpow(f64::NAN, 1.0).is_err());
        assert!(sigpow(f64::INFINITY, 1.0).is_err());
        assert!(sigpow(1.0, -0.5).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(sigpow_d1(2.0, 3.0).unwrap(), 12.0);
        assert_eq!(sigpow_d1(0.0, 2.0).unwrap(), 0.0);
        // central-difference oracle, step 1e-6
        let fd = central(|a| spow(a, 2.5), -1.5, 1e-6);
        let d1 = sigpow_d1(-1.5, 2.5).unwrap();
        assert_relative_eq!(d1, fd, max_relative = 1e-6);
        assert_relative_eq!(d1, 4.592_793_267_718_459, max_relative = 1e-14);

        assert_eq!(sigpow_d2(2.0, 3.0).unwrap(), 12.0);
        assert_eq!(sigpow_d2(-2.0, 3.0).unwrap(), -12.0);
        let fd2 = central(|a| sigpow_d1(a, 4.0).unwrap(), 1.3, 1e-6);
        assert_relative_eq!(sigpow_d2(1.3, 4.0).unwrap(), fd2, max_relative = 1e-6);
        assert_relative_eq!(sigpow_d2(1.3, 4.0).unwrap(), 20.28, max_relative = 1e-12);
    }

    #[test]
    fn derivatives_need_c2_exponent() {
        assert!(sigpow_d1(1.0, 1.9).is_err());
        assert!(sigpow_d2(1.0, 1.0).is_err());
    }

    #[test]
    fn inequality_examples() {
        let r = power_difference_residual(1.0, 0.0, 0.5, 2.0).unwrap();
        assert_relative_eq!(r.value(), 2f64.sqrt() - 1.0, max_relative = 1e-14);

        let r = young_residual(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(r.value(), 0.0);

        let r = power_sum_residual(&[1.0, 1.0], 2.0).unwrap();
        assert_eq!(r.value(), 0.0);
    }

    #[test]
    fn inequality_domains() {
        assert!(power_difference_residual(1.0, 2.0, 1.0, 2.0).is_err());
        assert!(power_difference_residual(1.0, 2.0, 0.5, 1.0).is_err());
        assert!(young_residual(1.0, 2.0, 0.5, 1.0, 0.0).is_err());
        assert!(root_sum_residuals(1.0, 2.0, 0.5).is_err());
        assert!(power_sum_residual(&[], 2.0).is_err());
        assert!(power_sum_residual(&[-1.0], 2.0).is_err());
        assert!(inequality_residuals(1.0, 2.0, 0.5, 2.0, 0.9, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn odd_symmetry(a in -1e3f64..1e3, b in 0.0f64..6.0) {
            prop_assert_eq!(spow(-a, b), -spow(a, b));
        }

        #[test]
        fn strictly_increasing(a in -1e2f64..1e2, d in 1e-3f64..1.0, b in 0.05f64..6.0) {
            prop_assert!(spow(a + d, b) > spow(a, b));
        }

        #[test]
        fn round_trip(a in -1e3f64..1e3, b in 0.1f64..8.0) {
            let back = spow(spow(a, b), 1.0 / b);
            prop_assert!((back - a).abs() <= 1e-10 * a.abs().max(1e-300));
        }

        #[test]
        fn derivatives_match_finite_differences(
            mag in 1e-2f64..1e2, neg in any::<bool>(), b in 2.0f64..6.0,
        ) {
            let a = if neg { -mag } else { mag };
            let h = 1e-6 * mag;
            let fd1 = central(|t| spow(t, b), a, h);
            let fd2 = central(|t| sigpow_d1(t, b).unwrap(), a, h);
            let d1 = sigpow_d1(a, b).unwrap();
            let d2 = sigpow_d2(a, b).unwrap();
            prop_assert!((d1 - fd1).abs() <= 1e-6 * d1.abs().max(1e-12));
            prop_assert!((d2 - fd2).abs() <= 1e-6 * d2.abs().max(1e-12));
        }

        #[test]
        fn inequality_residuals_nonnegative(
            x in -50f64..50.0, y in -50f64..50.0, p in 0.01f64..0.99,
            q in 1.01f64..5.0, a in 1.0f64..6.0, f in 1e-2f64..1e2,
        ) {
            let res = inequality_residuals(x, y, p, q, a, f).unwrap();
            prop_assert!(res.hold(1e-12), "{:?}", res);
        }
    }
}
