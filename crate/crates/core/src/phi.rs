//! The growth model `phi` and the functions built from it:
//! `h(t) = t phi(t)`, its inverse, `Phi(t) = int_0^t s phi(s) ds` and
//! `H(t) = t Phi'(t) - Phi(t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::ScalarFn;
use crate::quadrature;
use crate::report::{log_grid, Check, ValidationReport, Verdict};

/// Relative tolerance of [`PhiSpec::h_inverse`].
pub const H_INVERSE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum PhiFamily {
    /// `phi(t) = t^(p-2)`
    Power { p: f64 },
    /// `phi(t) = t^(p-2) + t^(q-2)`, `1 < p <= q`
    SumOfPowers { p: f64, q: f64 },
    /// User-supplied `phi`, optionally with its derivative.
    Custom {
        phi: ScalarFn,
        dphi: Option<ScalarFn>,
    },
}

/// An immutable growth model together with its growth exponents.
#[derive(Debug, Clone)]
pub struct PhiSpec {
    family: PhiFamily,
    gamma1: f64,
    gamma2: f64,
    ellipticity: f64,
    h_at_1: f64,
}

impl PhiSpec {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::domain(format!("power family needs p > 1, got {p}")));
        }
        Self::build(PhiFamily::Power { p }, p, p)
    }

    pub fn sum_of_powers(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q >= p && q.is_finite()) {
            return Err(Error::domain(format!(
                "sum_of_powers needs 1 < p <= q, got p = {p}, q = {q}"
            )));
        }
        Self::build(PhiFamily::SumOfPowers { p, q }, p, q)
    }

    /// A user model with declared exponents `gamma2 >= gamma1 > 1`. The
    /// declaration is checked by [`validate_phi`], not here.
    pub fn custom(phi: ScalarFn, dphi: Option<ScalarFn>, gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1 > 1.0 && gamma2 >= gamma1 && gamma2.is_finite()) {
            return Err(Error::domain(format!(
                "custom phi needs gamma2 >= gamma1 > 1, got {gamma1}, {gamma2}"
            )));
        }
        Self::build(PhiFamily::Custom { phi, dphi }, gamma1, gamma2)
    }

    fn build(family: PhiFamily, gamma1: f64, gamma2: f64) -> Result<Self> {
        let mut spec = PhiSpec {
            family,
            gamma1,
            gamma2,
            ellipticity: (gamma1 - 1.0).min(1.0),
            h_at_1: 1.0,
        };
        spec.h_at_1 = spec.h_raw(1.0);
        if !(spec.h_at_1 > 0.0 && spec.h_at_1.is_finite()) {
            return Err(Error::domain(format!(
                "h(1) must be positive and finite, got {}",
                spec.h_at_1
            )));
        }
        Ok(spec)
    }

    pub fn family(&self) -> &PhiFamily {
        &self.family
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    /// The ellipticity constant `min{1, gamma1 - 1}`.
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    pub fn h_at_1(&self) -> f64 {
        self.h_at_1
    }

    /// Short human-readable description of the family.
    pub fn describe(&self) -> String {
        match &self.family {
            PhiFamily::Power { p } => format!("power(p={p})"),
            PhiFamily::SumOfPowers { p, q } => format!("sum_of_powers(p={p}, q={q})"),
            PhiFamily::Custom { phi, .. } => {
                format!("custom({})", phi.source().unwrap_or("<native>"))
            }
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        match &self.family {
            PhiFamily::Power { p } => t.powf(p - 2.0),
            PhiFamily::SumOfPowers { p, q } => t.powf(p - 2.0) + t.powf(q - 2.0),
            PhiFamily::Custom { phi, .. } => phi.call(t),
        }
    }

    /// `phi'(t)`; central differences with step `t * 1e-6` when no analytic derivative exists.
    pub fn phi_prime(&self, t: f64) -> f64 {
        match &self.family {
            PhiFamily::Power { p } => (p - 2.0) * t.powf(p - 3.0),
            PhiFamily::SumOfPowers { p, q } => {
                (p - 2.0) * t.powf(p - 3.0) + (q - 2.0) * t.powf(q - 3.0)
            }
            PhiFamily::Custom { dphi: Some(d), .. } => d.call(t),
            PhiFamily::Custom { phi, dphi: None } => {
                let step = t * 1e-6;
                (phi.call(t + step) - phi.call(t - step)) / (2.0 * step)
            }
        }
    }

    /// `h(t)` for `t >= 0` without the domain check.
    #[inline]
    pub(crate) fn h_raw(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.family {
            PhiFamily::Power { p } => t.powf(p - 1.0),
            PhiFamily::SumOfPowers { p, q } => t.powf(p - 1.0) + t.powf(q - 1.0),
            PhiFamily::Custom { phi, .. } => t * phi.call(t),
        }
    }

    /// `h'(t) = phi(t) + t phi'(t)`.
    pub fn h_prime(&self, t: f64) -> f64 {
        match &self.family {
            PhiFamily::Power { p } => (p - 1.0) * t.powf(p - 2.0),
            PhiFamily::SumOfPowers { p, q } => {
                (p - 1.0) * t.powf(p - 2.0) + (q - 1.0) * t.powf(q - 2.0)
            }
            PhiFamily::Custom { .. } => self.phi(t) + t * self.phi_prime(t),
        }
    }

    /// `h(t) = t phi(t)`, with `h(0) = 0`.
    pub fn h_eval(&self, t: f64) -> Result<f64> {
        check_nonneg("h", t)?;
        Ok(self.h_raw(t))
    }

    /// The bracket for `h^{-1}(s)` implied by the two-sided power bounds on `h`.
    pub fn h_inverse_bracket(&self, s: f64) -> (f64, f64) {
        let ratio = s / self.h_at_1;
        let a = ratio.powf(1.0 / (self.gamma1 - 1.0));
        let b = ratio.powf(1.0 / (self.gamma2 - 1.0));
        (a.min(b), a.max(b))
    }

    /// Safeguarded Newton inside the power-law bracket, with bisection fallback.
    pub(crate) fn h_inverse_raw(&self, s: f64) -> std::result::Result<f64, (f64, f64)> {
        if s == 0.0 {
            return Ok(0.0);
        }
        match &self.family {
            PhiFamily::Power { p } => return Ok(s.powf(1.0 / (p - 1.0))),
            PhiFamily::SumOfPowers { p, q } if *p == *q => {
                return Ok((0.5 * s).powf(1.0 / (p - 1.0)));
            }
            _ => {}
        }
        let (mut lo, mut hi) = self.h_inverse_bracket(s);
        // A custom model with mis-declared exponents may fall outside; widen geometrically.
        let mut widen = 0;
        while self.h_raw(lo) > s && widen < 200 {
            lo *= 0.5;
            widen += 1;
        }
        while self.h_raw(hi) < s && widen < 400 {
            hi *= 2.0;
            widen += 1;
        }
        if !(self.h_raw(lo) <= s && self.h_raw(hi) >= s) {
            return Err((lo, hi));
        }
        if lo == hi {
            return Ok(lo);
        }
        let mut t = if s <= self.h_at_1 {
            // geometric mean is a good start for power-like h
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..200 {
            let r = self.h_raw(t) - s;
            if r.abs() <= 4.0 * f64::EPSILON * s {
                return Ok(t);
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let dh = self.h_prime(t);
            let newton = t - r / dh;
            let next = if dh > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= 1e-16 * t || hi - lo <= 2e-16 * hi {
                let next_r = self.h_raw(next) - s;
                return if next_r.abs() <= H_INVERSE_RTOL * (1.0 + s) {
                    Ok(next)
                } else {
                    Err((lo, hi))
                };
            }
            t = next;
        }
        if (self.h_raw(t) - s).abs() <= H_INVERSE_RTOL * (1.0 + s) {
            Ok(t)
        } else {
            Err((lo, hi))
        }
    }

    /// `h^{-1}(s)` for `s >= 0`.
    pub fn h_inverse(&self, s: f64) -> Result<f64> {
        check_nonneg("h_inverse", s)?;
        self.h_inverse_raw(s).map_err(|bracket| Error::Numeric {
            message: format!("h_inverse({s:e}) did not converge"),
            bracket: Some(bracket),
        })
    }

    pub(crate) fn big_phi_raw(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.family {
            PhiFamily::Power { p } => t.powf(*p) / p,
            PhiFamily::SumOfPowers { p, q } => t.powf(*p) / p + t.powf(*q) / q,
            PhiFamily::Custom { .. } => {
                let integrand = |s: f64| if s == 0.0 { 0.0 } else { self.h_raw(s) };
                quadrature::integrate(&integrand, 0.0, t, 1e-12, 1e-12).unwrap_or(f64::NAN)
            }
        }
    }

    /// `Phi(t) = int_0^t s phi(s) ds`.
    #[allow(non_snake_case)]
    pub fn Phi_eval(&self, t: f64) -> Result<f64> {
        check_nonneg("Phi", t)?;
        let v = self.big_phi_raw(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!("Phi({t:e}) quadrature failed")))
        }
    }

    pub(crate) fn big_h_raw(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.family {
            PhiFamily::Power { p } => (1.0 - 1.0 / p) * t.powf(*p),
            PhiFamily::SumOfPowers { p, q } => {
                (1.0 - 1.0 / p) * t.powf(*p) + (1.0 - 1.0 / q) * t.powf(*q)
            }
            PhiFamily::Custom { .. } => t * self.h_raw(t) - self.big_phi_raw(t),
        }
    }

    /// `H(t) = t Phi'(t) - Phi(t) = t^2 phi(t) - Phi(t)`.
    #[allow(non_snake_case)]
    pub fn H_eval(&self, t: f64) -> Result<f64> {
        check_nonneg("H", t)?;
        let v = self.big_h_raw(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!("H({t:e}) evaluation failed")))
        }
    }

    /// `(t phi(t))' / phi(t)`, the quantity bounded by `[gamma1 - 1, gamma2 - 1]`.
    pub fn growth_ratio(&self, t: f64) -> f64 {
        self.h_prime(t) / self.phi(t)
    }
}

fn check_nonneg(op: &str, t: f64) -> Result<()> {
    if t >= 0.0 && !t.is_infinite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{op} requires a finite argument >= 0, got {t}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiValidationOptions {
    pub samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Fail (rather than warn) when a custom model supplies no analytic derivative.
    pub strict: bool,
}

impl Default for PhiValidationOptions {
    fn default() -> Self {
        PhiValidationOptions {
            samples: 10_000,
            t_min: 1e-6,
            t_max: 1e6,
            strict: false,
        }
    }
}

pub fn validate_phi(spec: &PhiSpec) -> ValidationReport {
    validate_phi_with(spec, &PhiValidationOptions::default())
}

/// Samples the growth conditions on a log-spaced grid and reports each one.
pub fn validate_phi_with(spec: &PhiSpec, opts: &PhiValidationOptions) -> ValidationReport {
    let mut report = ValidationReport::new(format!("phi: {}", spec.describe()));
    let grid = log_grid(opts.samples, opts.t_min, opts.t_max);

    let mut bad_points = Vec::new();
    let mut hs = Vec::with_capacity(grid.len());
    let mut ratios = Vec::with_capacity(grid.len());
    for &t in &grid {
        let phi = spec.phi(t);
        let h = spec.h_raw(t);
        let ratio = spec.growth_ratio(t);
        if !(phi > 0.0 && phi.is_finite() && h.is_finite() && ratio.is_finite()) {
            bad_points.push((t, format!("phi = {phi}, h = {h}, ratio = {ratio}")));
            hs.push(f64::NAN);
            ratios.push(f64::NAN);
        } else {
            hs.push(h);
            ratios.push(ratio);
        }
    }
    for (t, what) in bad_points.iter().take(20) {
        report.violation(*t, what.clone());
    }
    if !bad_points.is_empty() {
        report.push(Check::new(
            "evaluator",
            Verdict::Fail,
            format!("{} sample points gave invalid values", bad_points.len()),
        ));
    }

    let valid: Vec<(f64, f64, f64)> = grid
        .iter()
        .zip(&hs)
        .zip(&ratios)
        .filter(|((_, h), _)| h.is_finite())
        .map(|((&t, &h), &r)| (t, h, r))
        .collect();
    if valid.len() < 2 {
        report.push(Check::new("phi1", Verdict::Fail, "too few valid samples"));
        return report;
    }

    // (phi_1): the log-slope of h over the end decades must stay positive so that
    // h extrapolates to 0 at the origin and to infinity at infinity.
    let (t0, h0, _) = valid[0];
    let (tn, hn, _) = valid[valid.len() - 1];
    let decade = valid.len() / 12;
    let (t0b, h0b, _) = valid[decade.max(1)];
    let (tnb, hnb, _) = valid[valid.len() - 1 - decade.max(1)];
    let low_slope = (h0b / h0).ln() / (t0b / t0).ln();
    let high_slope = (hn / hnb).ln() / (tn / tnb).ln();
    let phi1_ok = h0 > 0.0 && h0 < spec.h_at_1() && hn > spec.h_at_1() && low_slope > 0.0 && high_slope > 0.0;
    report.push(
        Check::new(
            "phi1",
            if phi1_ok { Verdict::Pass } else { Verdict::Fail },
            format!(
                "h({t0:e}) = {h0:e}, h({tn:e}) = {hn:e}, end log-slopes {low_slope:.4}, {high_slope:.4}"
            ),
        )
        .with_margin(low_slope.min(high_slope)),
    );

    // (phi_2): strictly increasing h.
    let mut worst_step = f64::INFINITY;
    let mut phi2_fail = None;
    for w in valid.windows(2) {
        let step = w[1].1 - w[0].1;
        let rel = step / w[1].1.abs().max(f64::MIN_POSITIVE);
        worst_step = worst_step.min(rel);
        if step <= 0.0 && phi2_fail.is_none() {
            phi2_fail = Some(w[1].0);
        }
    }
    if let Some(t) = phi2_fail {
        report.violation(t, "h not strictly increasing".to_string());
    }
    report.push(
        Check::new(
            "phi2",
            if phi2_fail.is_none() { Verdict::Pass } else { Verdict::Fail },
            "t phi(t) strictly increasing on the sample grid",
        )
        .with_margin(worst_step),
    );

    // (phi_3): gamma1 - 1 <= (t phi)'/phi <= gamma2 - 1.
    let slack = match spec.family() {
        PhiFamily::Custom { dphi: None, .. } => 1e-6,
        _ => 1e-9,
    };
    let lo_bound = spec.gamma1 - 1.0;
    let hi_bound = spec.gamma2 - 1.0;
    let mut rmin = f64::INFINITY;
    let mut rmax = f64::NEG_INFINITY;
    let mut phi3_violations = 0usize;
    for &(t, _, r) in &valid {
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        let tol = slack * (1.0 + r.abs());
        if r < lo_bound - tol || r > hi_bound + tol {
            if phi3_violations < 5 {
                report.violation(t, format!("(t phi)'/phi = {r} outside [{lo_bound}, {hi_bound}]"));
            }
            phi3_violations += 1;
        }
    }
    report.tight_range = Some((rmin + 1.0, rmax + 1.0));
    let margin = (rmin - lo_bound).min(hi_bound - rmax);
    report.push(
        Check::new(
            "phi3",
            if phi3_violations == 0 { Verdict::Pass } else { Verdict::Fail },
            format!(
                "(t phi)'/phi in [{rmin:.6}, {rmax:.6}], declared [{lo_bound}, {hi_bound}]; \
                 {phi3_violations} violations"
            ),
        )
        .with_margin(margin),
    );

    if let PhiFamily::Custom { dphi, .. } = spec.family() {
        let verdict = match (dphi.is_some(), opts.strict) {
            (true, _) => Verdict::Pass,
            (false, false) => Verdict::Warn,
            (false, true) => Verdict::Fail,
        };
        report.push(Check::new(
            "phi_c2",
            verdict,
            if dphi.is_some() {
                "analytic phi' supplied"
            } else {
                "phi' by central differences; twice differentiability not verified"
            },
        ));
    }
    report
}
