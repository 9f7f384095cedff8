//! Energy along trajectories and sampled checks of the growth inequalities
//! satisfied by admissible `phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ivp::{ProblemParams, Trajectory};
use crate::nonlinearity::FSpec;
use crate::phi::PhiSpec;
use crate::report::{log_grid, Check, ValidationReport, Verdict};

/// Seed used by [`check_simon`].
pub const DEFAULT_SEED: u64 = 0x5eed_0f_51_0a;

/// Violations kept per check; the count is always reported in full.
const MAX_LISTED: usize = 20;

/// `E(r) = r^(alpha-gamma) H(|u'|) + lambda F(u)` at every node.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyProfile {
    pub r: Vec<f64>,
    pub e: Vec<f64>,
    /// `lambda F(d)`
    pub e0: f64,
    /// Largest increase `E[i+1] - E[i]`, or zero.
    pub monotone_violation: f64,
    /// `min E[i] - lambda F(u[i])`; nonnegative since `H >= 0`.
    pub floor_margin: f64,
}

impl EnergyProfile {
    /// `max |E[i] - E[0]|`
    pub fn max_deviation(&self) -> f64 {
        self.e.iter().map(|e| (e - self.e0).abs()).fold(0.0, f64::max)
    }
}

pub fn energy_profile(traj: &Trajectory, params: &ProblemParams, phi: &PhiSpec, f: &FSpec) -> EnergyProfile {
    let lf = |u: f64| params.lambda * f.F_eval(u);
    let e0 = lf(traj.d());
    let e: Vec<f64> = (0..traj.len())
        .map(|i| {
            let r = traj.r[i];
            if r == 0.0 {
                e0
            } else {
                r.powf(params.alpha - params.gamma) * phi.big_h_raw(traj.du[i].abs()) + lf(traj.u[i])
            }
        })
        .collect();
    let monotone_violation = e.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let floor_margin = (0..e.len())
        .map(|i| e[i] - lf(traj.u[i]))
        .fold(f64::INFINITY, f64::min);
    EnergyProfile {
        r: traj.r.clone(),
        e,
        e0,
        monotone_violation,
        floor_margin,
    }
}

/// Running minimum of a slack with the location of the worst entry and a
/// capped list of violations.
struct Tally {
    name: &'static str,
    margin: f64,
    at: f64,
    bad: usize,
    listed: Vec<(f64, String)>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            margin: f64::INFINITY,
            at: f64::NAN,
            bad: 0,
            listed: Vec::new(),
        }
    }

    /// Records slack `margin` at `at`; negative below `-tol` is a violation.
    fn see(&mut self, at: f64, margin: f64, tol: f64, what: impl FnOnce() -> String) {
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.margin {
            self.margin = margin;
            self.at = at;
        }
        if margin < -tol {
            self.bad += 1;
            if self.listed.len() < MAX_LISTED {
                self.listed.push((at, format!("{}: {}", self.name, what())));
            }
        }
    }

    fn finish(self, report: &mut ValidationReport, samples: usize) {
        let verdict = if self.bad == 0 { Verdict::Pass } else { Verdict::Fail };
        let detail = format!(
            "{} of {samples} samples violated; worst slack {:.3e} at {:.6e}",
            self.bad, self.margin, self.at
        );
        report.push(Check::new(self.name, verdict, detail).with_margin(self.margin));
        for (at, what) in self.listed {
            report.violation(at, what);
        }
    }
}

/// Checks at every node
///
/// ```text
/// H(|u'(r)|) <= lambda r^(gamma-alpha) (F(d) - F(u(r)))      (prop11)
/// F(u(r)) <= F(d)                                             (prop12)
/// ```
///
/// with slacks `1e-8` and `1e-10`, and that the energy does not increase.
pub fn check_prop1(traj: &Trajectory, params: &ProblemParams, phi: &PhiSpec, f: &FSpec) -> ValidationReport {
    let mut report = ValidationReport::new(format!("energy inequalities, d = {}", traj.d()));
    if params.gamma < params.alpha {
        report.push(Check::new(
            "precondition",
            Verdict::Fail,
            format!("needs gamma >= alpha, got gamma = {}, alpha = {}", params.gamma, params.alpha),
        ));
        return report;
    }
    let fd = f.F_eval(traj.d());
    let (slack11, slack12) = (1e-8, 1e-10);
    let mut p11 = Tally::new("prop11");
    let mut p12 = Tally::new("prop12");
    for i in 0..traj.len() {
        let r = traj.r[i];
        let fu = f.F_eval(traj.u[i]);
        let lhs = phi.big_h_raw(traj.du[i].abs());
        let rhs = params.lambda * r.powf(params.gamma - params.alpha) * (fd - fu);
        let rhs = if r == 0.0 { 0.0 } else { rhs };
        p11.see(r, rhs - lhs, slack11, || format!("H = {lhs:e} exceeds {rhs:e}"));
        p12.see(r, fd - fu, slack12, || format!("F(u) = {fu:e} exceeds F(d) = {fd:e}"));
    }
    p11.finish(&mut report, traj.len());
    p12.finish(&mut report, traj.len());

    let energy = energy_profile(traj, params, phi, f);
    let tol = 1e-8 * (1.0 + energy.e0.abs());
    let verdict = if energy.monotone_violation <= tol {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    report.push(
        Check::new(
            "energy_monotone",
            verdict,
            format!("largest increase {:.3e} (allowed {tol:.3e})", energy.monotone_violation),
        )
        .with_margin(tol - energy.monotone_violation),
    );
    report
}

/// Relative slack `(hi - lo) / scale`, with `scale` guarding against zero.
fn rel(lo: f64, hi: f64, scale: f64) -> f64 {
    (hi - lo) / scale.abs().max(f64::MIN_POSITIVE)
}

/// Relative tolerance for the sandwich checks.
const BOUND_TOL: f64 = 1e-9;

/// Samples the growth lemmas on `samples` log-spaced points of `[1e-6, 1e6]`
/// (and of `(0, 1]` for the bound on `[h^{-1}]'`):
///
/// * `h_bounds`: `h(1) min{h^-1(s)^(g1-1), h^-1(s)^(g2-1)} <= s <= h(1) max{...}`
/// * `delta2`: `g1 <= t Phi'(t) / Phi(t) <= g2`
/// * `Phi_bounds`: `Phi(1) min{t^g1, t^g2} <= Phi(t) <= Phi(1) max{...}`
/// * `h_inverse_slope`: `[h^-1]'(s) <= s^((2-g2)/(g2-1)) / (h(1)^g2 (g1-1))`, `s <= 1`
/// * `h_inverse_slope_local`: `[h^-1]'(s) <= h^-1(s)^(2-g2) / (h(1) (g1-1))` where `h^-1(s) <= 1`
/// * `h_inverse_slope_closed`: the same with `h^-1(s)` bounded through `h_bounds`,
///   `[h^-1]'(s) <= (s/h(1))^((2-g2)/e) / (h(1) (g1-1))` for `s <= h(1)`, where
///   `e = g2 - 1` if `g2 >= 2` and `e = g1 - 1` otherwise
/// * `H_vs_Phi`, `H_vs_tPhi'`: `(g1-1) Phi <= H <= (g2-1) Phi` and
///   `(g1-1)/g1 t Phi' <= H <= (g2-1)/g2 t Phi'`
/// * `H_positive`: `H(0) = 0`, `H > 0` and increasing on the samples
pub fn check_bounds_suite(phi: &PhiSpec, samples: usize) -> ValidationReport {
    let mut report = ValidationReport::new(format!("growth bounds for {}", phi.describe()));
    let samples = samples.max(2);
    let (g1, g2, h1) = (phi.gamma1(), phi.gamma2(), phi.h_at_1());
    let phi1 = phi.big_phi_raw(1.0);
    let grid = log_grid(samples, 1e-6, 1e6);

    let inv = |s: f64| phi.h_inverse_raw(s).unwrap_or_else(|(a, b)| 0.5 * (a + b));

    let mut la1 = Tally::new("h_bounds");
    for &s in &grid {
        let t = inv(s);
        let (a, b) = (t.powf(g1 - 1.0), t.powf(g2 - 1.0));
        la1.see(s, rel(h1 * a.min(b), s, s), BOUND_TOL, || format!("lower bound exceeds s at t = {t:e}"));
        la1.see(s, rel(s, h1 * a.max(b), s), BOUND_TOL, || format!("upper bound below s at t = {t:e}"));
    }
    la1.finish(&mut report, samples);

    let mut d2 = Tally::new("delta2");
    let mut al = Tally::new("Phi_bounds");
    let mut la4a = Tally::new("H_vs_Phi");
    let mut la4b = Tally::new("H_vs_tPhi'");
    let mut pos = Tally::new("H_positive");
    pos.see(0.0, -phi.big_h_raw(0.0).abs(), 0.0, || "H(0) != 0".into());
    let mut prev_h = 0.0;
    for &t in &grid {
        let big_phi = phi.big_phi_raw(t);
        let tdphi = t * phi.h_raw(t);
        let big_h = phi.big_h_raw(t);
        let ratio = tdphi / big_phi;
        d2.see(t, ratio - g1, BOUND_TOL * g1, || format!("t Phi'/Phi = {ratio} < {g1}"));
        d2.see(t, g2 - ratio, BOUND_TOL * g2, || format!("t Phi'/Phi = {ratio} > {g2}"));

        let (a, b) = (t.powf(g1), t.powf(g2));
        al.see(t, rel(phi1 * a.min(b), big_phi, big_phi), BOUND_TOL, || "lower bound exceeds Phi".into());
        al.see(t, rel(big_phi, phi1 * a.max(b), big_phi), BOUND_TOL, || "upper bound below Phi".into());

        la4a.see(t, rel((g1 - 1.0) * big_phi, big_h, big_h), BOUND_TOL, || "H < (g1-1) Phi".into());
        la4a.see(t, rel(big_h, (g2 - 1.0) * big_phi, big_h), BOUND_TOL, || "H > (g2-1) Phi".into());
        la4b.see(t, rel((g1 - 1.0) / g1 * tdphi, big_h, big_h), BOUND_TOL, || "H < (g1-1)/g1 t Phi'".into());
        la4b.see(t, rel(big_h, (g2 - 1.0) / g2 * tdphi, big_h), BOUND_TOL, || "H > (g2-1)/g2 t Phi'".into());

        pos.see(t, big_h - prev_h, 0.0, || format!("H not increasing: {big_h:e} after {prev_h:e}"));
        prev_h = big_h;
    }
    d2.finish(&mut report, samples);
    al.finish(&mut report, samples);

    let mut all = Tally::new("h_inverse_slope");
    let mut local = Tally::new("h_inverse_slope_local");
    let mut closed = Tally::new("h_inverse_slope_closed");
    let mut local_n = 0;
    let e = if g2 >= 2.0 { g2 - 1.0 } else { g1 - 1.0 };
    for s in log_grid(samples, 1e-6, 1.0) {
        let t = inv(s);
        let slope = 1.0 / phi.h_prime(t);
        let bound = s.powf((2.0 - g2) / (g2 - 1.0)) / (h1.powf(g2) * (g1 - 1.0));
        all.see(s, rel(slope, bound, bound), BOUND_TOL, || {
            format!("[h^-1]'(s) = {slope:e} exceeds {bound:e}")
        });
        if t <= 1.0 {
            local_n += 1;
            let bound = t.powf(2.0 - g2) / (h1 * (g1 - 1.0));
            local.see(s, rel(slope, bound, bound), BOUND_TOL, || {
                format!("[h^-1]'(s) = {slope:e} exceeds {bound:e}")
            });
            let bound = (s / h1).powf((2.0 - g2) / e) / (h1 * (g1 - 1.0));
            closed.see(s, rel(slope, bound, bound), BOUND_TOL, || {
                format!("[h^-1]'(s) = {slope:e} exceeds {bound:e}")
            });
        }
    }
    all.finish(&mut report, samples);
    local.finish(&mut report, local_n);
    closed.finish(&mut report, local_n);

    la4a.finish(&mut report, samples);
    la4b.finish(&mut report, samples);
    pos.finish(&mut report, samples + 1);
    report
}

type Vec3 = [f64; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `phi(|eta|) eta`, zero at the origin.
fn flux(phi: &PhiSpec, eta: &Vec3) -> Vec3 {
    let n = norm(eta);
    if n == 0.0 {
        return [0.0; 3];
    }
    let p = phi.phi(n);
    [p * eta[0], p * eta[1], p * eta[2]]
}

/// Slack of the monotonicity inequality
///
/// ```text
/// <phi(|a|) a - phi(|b|) b, a - b> >= min{4, 4 G1} |a - b| / (1 + |a| + |b|) Phi(|a - b| / 4)
/// ```
///
/// relative to the left side.
fn simon_slack(phi: &PhiSpec, a: &Vec3, b: &Vec3) -> (f64, f64, f64) {
    let diff = sub(a, b);
    let dn = norm(&diff);
    let lhs = dot(&sub(&flux(phi, a), &flux(phi, b)), &diff);
    let c = (4.0f64).min(4.0 * phi.ellipticity());
    let rhs = if dn == 0.0 {
        0.0
    } else {
        c * dn / (1.0 + norm(a) + norm(b)) * phi.big_phi_raw(dn / 4.0)
    };
    (rel(rhs, lhs, lhs.max(rhs)), lhs, rhs)
}

/// Slack of `phi |xi|^2 + phi'(|eta|) <eta, xi>^2 / |eta| >= G1 phi |xi|^2`.
fn quadratic_slack(phi: &PhiSpec, eta: &Vec3, xi: &Vec3) -> f64 {
    let n = norm(eta);
    let p = phi.phi(n);
    let xx = dot(xi, xi);
    let form = p * xx + phi.phi_prime(n) * dot(eta, xi).powi(2) / n;
    let floor = phi.ellipticity() * p * xx;
    rel(floor, form, p * xx)
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec3 {
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(dim) {
        *x = rng.gen_range(-1.0..1.0);
    }
    let n = norm(&v);
    if n == 0.0 {
        v[0] = 1.0;
        return v;
    }
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0)) / n;
    v.map(|x| x * scale)
}

/// Randomized check of the Simon-type inequality and of the quadratic form
/// bound in dimension `dim`, with [`DEFAULT_SEED`].
pub fn check_simon(phi: &PhiSpec, dim: usize, trials: usize) -> ValidationReport {
    check_simon_seeded(phi, dim, trials, DEFAULT_SEED)
}

pub fn check_simon_seeded(phi: &PhiSpec, dim: usize, trials: usize, seed: u64) -> ValidationReport {
    let mut report = ValidationReport::new(format!(
        "monotonicity of phi(|eta|) eta for {}, dim {dim}, seed {seed:#x}",
        phi.describe()
    ));
    if !(1..=3).contains(&dim) {
        report.push(Check::new("precondition", Verdict::Fail, format!("dim must be 1, 2 or 3, got {dim}")));
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e1 = [1.0, 0.0, 0.0];
    let mut pairs: Vec<(Vec3, Vec3)> = vec![
        ([0.0; 3], [0.0; 3]),
        (e1, [0.0; 3]),
        ([0.0; 3], e1),
        (e1, e1),
        (e1, e1.map(|x| -x)),
        (e1, e1.map(|x| x * (1.0 + 1e-6))),
    ];
    while pairs.len() < trials.max(pairs.len()) {
        let a = random_vec(&mut rng, dim);
        let b = match pairs.len() % 5 {
            0 => [0.0; 3],
            1 => a.map(|x| x * rng.gen_range(0.5..1.5)),
            _ => random_vec(&mut rng, dim),
        };
        pairs.push((a, b));
    }
    let forms: Vec<(Vec3, Vec3)> = (0..trials.max(1))
        .map(|_| (random_vec(&mut rng, dim), random_vec(&mut rng, dim)))
        .collect();

    let simon: Vec<(f64, f64, f64)> = pairs.par_iter().map(|(a, b)| simon_slack(phi, a, b)).collect();
    let mut t = Tally::new("simon");
    for (i, (slack, lhs, rhs)) in simon.into_iter().enumerate() {
        t.see(i as f64, slack, BOUND_TOL, || format!("pair {i}: lhs {lhs:e} < rhs {rhs:e}"));
    }
    t.finish(&mut report, pairs.len());

    let quad: Vec<f64> = forms.par_iter().map(|(e, x)| quadratic_slack(phi, e, x)).collect();
    // a finite-difference phi' costs accuracy
    let tol = match phi.family() {
        crate::phi::PhiFamily::Custom { dphi: None, .. } => 1e-5,
        _ => BOUND_TOL,
    };
    let mut q = Tally::new("quadratic_form");
    for (i, slack) in quad.into_iter().enumerate() {
        q.see(i as f64, slack, tol, || format!("sample {i}: form below G1 phi |xi|^2"));
    }
    q.finish(&mut report, forms.len());
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivp::{integrate_trajectory, SolverOptions};

    #[test]
    fn simon_textbook_pair() {
        let phi = PhiSpec::power(2.0).unwrap();
        let (_, lhs, rhs) = simon_slack(&phi, &[1.0, 0.0, 0.0], &[0.0; 3]);
        assert_eq!(lhs, 1.0);
        assert!((rhs - 1.0 / 16.0).abs() < 1e-15);
        let (_, lhs, rhs) = simon_slack(&phi, &[0.3, 0.1, 0.0], &[0.3, 0.1, 0.0]);
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn simon_passes_for_shipped_families() {
        for phi in [PhiSpec::power(2.0), PhiSpec::power(1.5), PhiSpec::sum_of_powers(2.0, 3.0)] {
            let phi = phi.unwrap();
            for dim in 1..=3 {
                let rep = check_simon(&phi, dim, 2000);
                assert!(rep.is_pass(), "{:?}", rep.summary_lines());
            }
        }
    }

    #[test]
    fn simon_is_reproducible() {
        let phi = PhiSpec::sum_of_powers(2.0, 3.0).unwrap();
        let a = check_simon(&phi, 3, 500);
        let b = check_simon(&phi, 3, 500);
        assert_eq!(a.checks[0].margin, b.checks[0].margin);
    }

    #[test]
    fn bounds_are_equalities_for_power() {
        let rep = check_bounds_suite(&PhiSpec::power(3.0).unwrap(), 400);
        assert!(rep.is_pass(), "{:?}", rep.summary_lines());
        for name in ["h_bounds", "delta2", "h_inverse_slope", "H_vs_Phi"] {
            let m = rep.check(name).unwrap().margin.unwrap();
            assert!(m.abs() < 1e-9, "{name}: {m}");
        }
    }

    #[test]
    fn printed_slope_bound_fails_for_mixed_powers() {
        let rep = check_bounds_suite(&PhiSpec::sum_of_powers(2.0, 3.0).unwrap(), 400);
        assert_eq!(rep.check("h_inverse_slope").unwrap().verdict, Verdict::Fail);
        assert_eq!(rep.check("h_inverse_slope_local").unwrap().verdict, Verdict::Pass);
        assert_eq!(rep.check("h_inverse_slope_closed").unwrap().verdict, Verdict::Pass);
        for name in ["h_bounds", "delta2", "Phi_bounds", "H_vs_Phi", "H_vs_tPhi'", "H_positive"] {
            assert_eq!(rep.check(name).unwrap().verdict, Verdict::Pass, "{name}");
        }
    }

    #[test]
    fn prop1_is_an_identity_without_weights() {
        let p = ProblemParams::new(0.0, 0.0, 1.0, 1.0, 1.0);
        let phi = PhiSpec::power(2.0).unwrap();
        let f = FSpec::power(1.0 / 3.0, 1.0).unwrap();
        let traj = integrate_trajectory(&p, &phi, &f, 5.0, None, &SolverOptions::default()).unwrap();
        let rep = check_prop1(&traj, &p, &phi, &f);
        assert!(rep.is_pass(), "{:?}", rep.summary_lines());
        assert!(rep.check("prop11").unwrap().margin.unwrap().abs() < 1e-9);
        let e = energy_profile(&traj, &p, &phi, &f);
        assert_eq!(e.e[0], 0.75);
        assert!(e.max_deviation() < 1e-9);
    }

    #[test]
    fn prop1_strict_with_weights() {
        let p = ProblemParams::new(2.0, 3.0, 1.0, 1.0, 1.0);
        let phi = PhiSpec::power(2.0).unwrap();
        let f = FSpec::power(1.0 / 3.0, 1.0).unwrap();
        let traj = integrate_trajectory(&p, &phi, &f, 3.0, None, &SolverOptions::default()).unwrap();
        let rep = check_prop1(&traj, &p, &phi, &f);
        assert!(rep.is_pass(), "{:?}", rep.summary_lines());
        let e = energy_profile(&traj, &p, &phi, &f);
        assert!(e.e.last().unwrap() < &(e.e0 - 1e-3));
        assert!(e.floor_margin >= -1e-10);
    }
}
