//! The reaction term `f`, its primitive `F`, and sampling-based checks of the
//! sign, monotonicity and integrability conditions.

use crate::error::{Error, Result};
use crate::expr::ScalarFn;
use crate::quadrature;
use crate::report::{log_grid, Check, ValidationReport, Verdict};

#[derive(Debug, Clone)]
pub enum FFamily {
    /// `f(t) = |t|^(delta-1) t`
    Power { delta: f64 },
    Arctan,
    Custom { f: ScalarFn },
}

#[derive(Debug, Clone)]
pub struct FSpec {
    family: FFamily,
    d_infinity: f64,
}

impl FSpec {
    pub fn power(delta: f64, d_infinity: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("power f needs delta > 0, got {delta}")));
        }
        Self::new(FFamily::Power { delta }, d_infinity)
    }

    pub fn arctan(d_infinity: f64) -> Result<Self> {
        Self::new(FFamily::Arctan, d_infinity)
    }

    pub fn custom(f: ScalarFn, d_infinity: f64) -> Result<Self> {
        Self::new(FFamily::Custom { f }, d_infinity)
    }

    pub fn new(family: FFamily, d_infinity: f64) -> Result<Self> {
        if !(d_infinity > 0.0 && d_infinity.is_finite()) {
            return Err(Error::domain(format!(
                "d_infinity must be positive and finite, got {d_infinity}"
            )));
        }
        Ok(FSpec { family, d_infinity })
    }

    pub fn family(&self) -> &FFamily {
        &self.family
    }

    /// Upper end of the interval on which `f` is nondecreasing.
    pub fn d_infinity(&self) -> f64 {
        self.d_infinity
    }

    pub fn with_d_infinity(&self, d_infinity: f64) -> Result<Self> {
        Self::new(self.family.clone(), d_infinity)
    }

    pub fn describe(&self) -> String {
        match &self.family {
            FFamily::Power { delta } => format!("power(delta={delta})"),
            FFamily::Arctan => "arctan".to_string(),
            FFamily::Custom { f } => format!("custom({})", f.source().unwrap_or("<native>")),
        }
    }

    #[inline]
    pub fn f_eval(&self, t: f64) -> f64 {
        match &self.family {
            FFamily::Power { delta } => {
                if t == 0.0 {
                    0.0
                } else {
                    t.signum() * t.abs().powf(*delta)
                }
            }
            FFamily::Arctan => t.atan(),
            FFamily::Custom { f } => f.call(t),
        }
    }

    /// `F(t) = int_0^t f(s) ds`.
    #[allow(non_snake_case)]
    pub fn F_eval(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.family {
            FFamily::Power { delta } => t.abs().powf(delta + 1.0) / (delta + 1.0),
            FFamily::Arctan => t * t.atan() - 0.5 * t.mul_add(t, 1.0).ln(),
            FFamily::Custom { f } => {
                quadrature::integrate(&|s| f.call(s), 0.0, t, 1e-14, 1e-12).unwrap_or(f64::NAN)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrability {
    Converges,
    Diverges,
    Inconclusive,
}

/// Result of the improper-integral test on one side of the origin.
#[derive(Debug, Clone)]
pub struct ImproperTest {
    pub verdict: Integrability,
    /// Partial integrals over `[probe 2^-k, probe]`, `k = 1..=40`.
    pub partial_sums: Vec<f64>,
    /// Geometric-tail (Aitken) estimate of the limit, when the increments decay geometrically.
    pub extrapolated: Option<f64>,
}

const F3_LEVELS: usize = 40;
const F3_CAUCHY_TOL: f64 = 1e-6;
const F3_BLOWUP: f64 = 1e6;

/// Tests whether `int_0^probe g(t) dt` is finite for a positive integrand `g`
/// that may blow up at the origin, from partial integrals on the lower limits
/// `probe 2^-k`.
pub fn improper_integral_test<G: Fn(f64) -> f64>(g: &G, probe: f64) -> ImproperTest {
    let mut increments = Vec::with_capacity(F3_LEVELS);
    let mut upper = probe;
    for _ in 0..F3_LEVELS {
        let lower = 0.5 * upper;
        // t = e^s turns power-law integrands into smooth exponentials.
        let integrand = |s: f64| {
            let t = s.exp();
            g(t) * t
        };
        let piece = quadrature::integrate(&integrand, lower.ln(), upper.ln(), 0.0, 1e-13)
            .unwrap_or(f64::NAN);
        increments.push(piece);
        upper = lower;
    }
    let mut partial_sums = Vec::with_capacity(F3_LEVELS);
    let mut acc = 0.0;
    for d in &increments {
        acc += d;
        partial_sums.push(acc);
    }

    if increments.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return ImproperTest {
            verdict: Integrability::Diverges,
            partial_sums,
            extrapolated: None,
        };
    }
    let monotone = increments.iter().all(|d| *d >= 0.0);
    if monotone && acc > F3_BLOWUP {
        return ImproperTest {
            verdict: Integrability::Diverges,
            partial_sums,
            extrapolated: None,
        };
    }

    let ratios: Vec<f64> = increments.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len() - 10..];
    let min_ratio = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ratio = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min_ratio >= 1.0 - 1e-9 {
        // increments no longer shrink: at least logarithmic divergence
        return ImproperTest {
            verdict: Integrability::Diverges,
            partial_sums,
            extrapolated: None,
        };
    }

    let n = partial_sums.len();
    if increments[n - 1] <= F3_CAUCHY_TOL * partial_sums[n - 1].abs().max(1.0) * 1e-3 {
        return ImproperTest {
            verdict: Integrability::Converges,
            partial_sums: partial_sums.clone(),
            extrapolated: Some(partial_sums[n - 1]),
        };
    }
    if max_ratio < 1.0 {
        let accel = |k: usize| {
            let rho = increments[k] / increments[k - 1];
            partial_sums[k] + increments[k] * rho / (1.0 - rho)
        };
        let (a, b) = (accel(n - 2), accel(n - 1));
        if (b - a).abs() <= F3_CAUCHY_TOL * b.abs().max(1.0) {
            return ImproperTest {
                verdict: Integrability::Converges,
                partial_sums,
                extrapolated: Some(b),
            };
        }
    }
    ImproperTest {
        verdict: Integrability::Inconclusive,
        partial_sums,
        extrapolated: None,
    }
}

/// Checks the sign condition, monotonicity below `d_infinity`, and the
/// integrability of `|f|^(-1/(gamma1-1))` at the origin on `[-probe, probe]`.
pub fn validate_f(spec: &FSpec, gamma1: f64, probe: f64) -> Result<ValidationReport> {
    if !(gamma1 > 1.0) {
        return Err(Error::domain(format!("validate_f needs gamma1 > 1, got {gamma1}")));
    }
    if !(probe > 0.0 && probe.is_finite()) {
        return Err(Error::domain(format!("probe must be positive, got {probe}")));
    }
    let mut report = ValidationReport::new(format!(
        "f: {} (d_infinity = {}, gamma1 = {gamma1})",
        spec.describe(),
        spec.d_infinity()
    ));
    let range = probe.max(spec.d_infinity());

    // (f_1)
    let mut f1_fail = 0usize;
    let mut f1_margin = f64::INFINITY;
    for t in log_grid(2000, 1e-8 * range, range) {
        for s in [t, -t] {
            let v = s * spec.f_eval(s);
            f1_margin = f1_margin.min(v);
            if !(v > 0.0) {
                if f1_fail < 5 {
                    report.violation(s, format!("t f(t) = {v}"));
                }
                f1_fail += 1;
            }
        }
    }
    report.push(
        Check::new(
            "f1",
            if f1_fail == 0 { Verdict::Pass } else { Verdict::Fail },
            format!("t f(t) > 0 on +-[{:e}, {range}]: {f1_fail} violations", 1e-8 * range),
        )
        .with_margin(f1_margin),
    );

    // (f_2)
    let lo = -range;
    let hi = spec.d_infinity();
    let mut pts: Vec<f64> = (0..=4000).map(|i| lo + (hi - lo) * i as f64 / 4000.0).collect();
    pts.extend(log_grid(200, 1e-10 * range, hi.min(range)));
    pts.extend(log_grid(200, 1e-10 * range, range).into_iter().map(|t| -t));
    pts.push(0.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut f2_fail = 0usize;
    for w in pts.windows(2) {
        let (a, b) = (spec.f_eval(w[0]), spec.f_eval(w[1]));
        if b < a - 1e-14 * a.abs().max(b.abs()) || !a.is_finite() || !b.is_finite() {
            if f2_fail < 5 {
                report.violation(w[1], format!("f decreases: f({}) = {a} > f({}) = {b}", w[0], w[1]));
            }
            f2_fail += 1;
        }
    }
    report.push(Check::new(
        "f2",
        if f2_fail == 0 { Verdict::Pass } else { Verdict::Fail },
        format!("f nondecreasing on [{lo}, {hi}]: {f2_fail} violations"),
    ));

    // primitive positivity (forced by f_1)
    let mut prim_fail = 0usize;
    for t in log_grid(200, 1e-6 * range, range) {
        for s in [t, -t] {
            if !(spec.F_eval(s) > 0.0) {
                prim_fail += 1;
            }
        }
    }
    report.push(Check::new(
        "primitive_positive",
        if prim_fail == 0 && spec.F_eval(0.0) == 0.0 { Verdict::Pass } else { Verdict::Fail },
        format!("F(0) = 0 and F(t) > 0 for t != 0: {prim_fail} violations"),
    ));

    // (f_3')
    let exponent = -1.0 / (gamma1 - 1.0);
    let right = improper_integral_test(&|t: f64| spec.f_eval(t).powf(exponent), probe);
    let left = improper_integral_test(&|t: f64| (-spec.f_eval(-t)).powf(exponent), probe);
    let verdict = match (right.verdict, left.verdict) {
        (Integrability::Diverges, _) | (_, Integrability::Diverges) => Verdict::Fail,
        (Integrability::Converges, Integrability::Converges) => Verdict::Pass,
        _ => Verdict::Inconclusive,
    };
    report.push(Check::new(
        "f3",
        verdict,
        format!(
            "int |f|^(-1/(gamma1-1)) near 0: right {:?} (limit {:?}), left {:?} (limit {:?})",
            right.verdict, right.extrapolated, left.verdict, left.extrapolated
        ),
    ));

    // C^1 away from the origin, warning level only
    let mut rough = 0usize;
    for t in log_grid(400, 1e-3 * range, range) {
        for s in [t, -t] {
            let step = 1e-6 * s.abs();
            let d = (spec.f_eval(s + step) - spec.f_eval(s - step)) / (2.0 * step);
            let d_half = (spec.f_eval(s + 0.5 * step) - spec.f_eval(s - 0.5 * step)) / step;
            if !d.is_finite() || (d - d_half).abs() > 1e-3 * (1.0 + d.abs()) {
                rough += 1;
            }
        }
    }
    report.push(Check::new(
        "f_c1",
        if rough == 0 { Verdict::Pass } else { Verdict::Warn },
        format!("finite-difference smoothness away from 0: {rough} suspicious points"),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn f_examples() {
        let f = FSpec::power(1.0 / 3.0, 1.0).unwrap();
        assert_relative_eq!(f.f_eval(1.0), 1.0);
        assert_relative_eq!(f.f_eval(-8.0), -2.0, max_relative = 1e-15);
        assert_eq!(FSpec::arctan(1.0).unwrap().f_eval(0.0), 0.0);
    }

    #[test]
    fn primitive_examples() {
        let f = FSpec::power(1.0 / 3.0, 1.0).unwrap();
        assert_relative_eq!(f.F_eval(1.0), 0.75, max_relative = 1e-15);
        assert_eq!(f.F_eval(0.0), 0.0);
        assert_eq!(FSpec::arctan(1.0).unwrap().F_eval(0.0), 0.0);
        let expected = std::f64::consts::FRAC_PI_4 - 0.5 * std::f64::consts::LN_2;
        assert_relative_eq!(FSpec::arctan(1.0).unwrap().F_eval(1.0), expected, max_relative = 1e-15);
    }

    #[test]
    fn custom_primitive_by_quadrature() {
        let f = FSpec::custom(ScalarFn::parse("t^3").unwrap(), 1.0).unwrap();
        assert_relative_eq!(f.F_eval(2.0), 4.0, max_relative = 1e-12);
        assert_relative_eq!(f.F_eval(-2.0), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn f3_examples() {
        let r = validate_f(&FSpec::power(1.0 / 3.0, 1.0).unwrap(), 2.0, 1.0).unwrap();
        assert_eq!(r.check("f3").unwrap().verdict, Verdict::Pass, "{r:?}");
        assert!(r.is_pass());

        let r = validate_f(&FSpec::power(1.0, 1.0).unwrap(), 2.0, 1.0).unwrap();
        assert_eq!(r.check("f3").unwrap().verdict, Verdict::Fail, "{r:?}");

        let r = validate_f(&FSpec::arctan(1.0).unwrap(), 3.0, 1.0).unwrap();
        assert_eq!(r.check("f3").unwrap().verdict, Verdict::Pass, "{r:?}");
        assert!(r.is_pass());
    }

    #[test]
    fn improper_limit_matches_closed_form() {
        // int_0^1 t^(-1/3) dt = 3/2
        let t = improper_integral_test(&|t: f64| t.powf(-1.0 / 3.0), 1.0);
        assert_eq!(t.verdict, Integrability::Converges);
        assert_relative_eq!(t.extrapolated.unwrap(), 1.5, max_relative = 1e-9);
    }

    #[test]
    fn sign_condition_violation() {
        let f = FSpec::custom(ScalarFn::parse("t^2").unwrap(), 1.0).unwrap();
        let r = validate_f(&f, 2.0, 1.0).unwrap();
        assert_eq!(r.check("f1").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn bad_arguments() {
        let f = FSpec::arctan(1.0).unwrap();
        assert!(validate_f(&f, 1.0, 1.0).is_err());
        assert!(validate_f(&f, 2.0, 0.0).is_err());
        assert!(FSpec::arctan(0.0).is_err());
        assert!(FSpec::power(0.0, 1.0).is_err());
    }
}
