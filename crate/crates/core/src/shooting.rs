//! Zeros of trajectories, the admissible threshold for `lambda`, and the nested
//! bisections producing the levels `d_0 > d_1 > ...`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ivp::{integrate_trajectory, ProblemParams, SolverOptions, Trajectory};
use crate::nonlinearity::FSpec;
use crate::phi::PhiSpec;

/// Zeros `z_1 < z_2 < ...` of `u` with the slopes there and the extremum
/// positions `m_l` where the flux changes sign.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroSequence {
    pub zeros: Vec<f64>,
    pub slopes: Vec<f64>,
    pub extrema: Vec<f64>,
    /// `false` when fewer zeros than requested exist before the end of the trajectory.
    pub complete: bool,
}

impl ZeroSequence {
    pub fn len(&self) -> usize {
        self.zeros.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeros.is_empty()
    }
}

/// Bisects component `c` of the dense state on `[a, b]`, where it changes sign.
fn refine(traj: &Trajectory, c: usize, mut a: f64, mut b: f64, val_tol: f64) -> f64 {
    let comp = |r: f64| {
        let (u, v) = traj.state_at(r);
        if c == 0 {
            u
        } else {
            v
        }
    };
    let sa = comp(a).signum();
    let mut best = (f64::INFINITY, 0.5 * (a + b));
    for _ in 0..300 {
        let m = 0.5 * (a + b);
        let fm = comp(m);
        if fm.abs() < best.0 {
            best = (fm.abs(), m);
        }
        let width_ok = b - a <= 1e-10 * m.max(1.0);
        if (width_ok && fm.abs() <= val_tol) || m <= a || m >= b {
            break;
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    best.1
}

/// Sign changes of `values` as node index pairs, skipping exact zeros.
fn sign_flips(values: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    for (i, &x) in values.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        if let Some(j) = last {
            if values[j].signum() != x.signum() {
                out.push((j, i));
            }
        }
        last = Some(i);
    }
    out
}

/// The first `count` zeros of `traj`, refined on the dense output to
/// `|u| <= 1e-12 (1 + d)` and a bracket width of `1e-10 max(1, r)`.
pub fn zeros_of(traj: &Trajectory, count: usize) -> ZeroSequence {
    let d = traj.d();
    let zeros: Vec<f64> = sign_flips(&traj.u)
        .into_iter()
        .take(count)
        .map(|(i, j)| refine(traj, 0, traj.r[i], traj.r[j], 1e-12 * (1.0 + d.abs())))
        .collect();
    let slopes = zeros.iter().map(|&z| traj.du_at(z)).collect();
    let last = zeros.last().copied().unwrap_or(traj.r_end());
    let extrema = sign_flips(&traj.v)
        .into_iter()
        .filter(|&(i, _)| traj.r[i] < last)
        .map(|(i, j)| refine(traj, 1, traj.r[i], traj.r[j], 0.0))
        .filter(|&m| zeros.first().is_some_and(|&z1| m > z1) && m < last)
        .collect();
    ZeroSequence {
        complete: zeros.len() >= count,
        zeros,
        slopes,
        extrema,
    }
}

/// Largest `lambda` for which the first zero from `d_infinity` cannot fall before `R`:
///
/// ```text
/// min over eta in {gamma1, gamma2} of
///   (gamma+1) h(1) / f(d_inf) * [d_inf (gamma-alpha+eta)/(eta-1)]^(eta-1) * R^-(gamma-alpha+eta)
/// ```
pub fn lambda_threshold(
    phi: &PhiSpec,
    f: &FSpec,
    alpha: f64,
    gamma: f64,
    radius: f64,
    d_infinity: f64,
) -> Result<f64> {
    let probe = ProblemParams::new(alpha, gamma, 1.0, radius, d_infinity);
    probe.validate_equation(phi)?;
    if !(d_infinity > 0.0 && d_infinity.is_finite()) {
        return Err(Error::domain(format!("d_infinity must be positive, got {d_infinity}")));
    }
    let fd = f.f_eval(d_infinity);
    if !(fd > 0.0) {
        return Err(Error::domain(format!("f(d_infinity) = {fd} must be positive")));
    }
    let value = |eta: f64| {
        let k = gamma - alpha + eta;
        (gamma + 1.0) * phi.h_at_1() / fd * (d_infinity * k / (eta - 1.0)).powf(eta - 1.0) * radius.powf(-k)
    };
    Ok(value(phi.gamma1()).min(value(phi.gamma2())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootingOptions {
    pub solver: SolverOptions,
    /// Allowed `|z - R|`; `None` means `1e-8 R`.
    pub r_tol: Option<f64>,
    /// Allowed `|u(R)|`; `None` means `1e-8 d_infinity`.
    pub boundary_tol: Option<f64>,
    pub max_halvings: usize,
    /// Scan points evaluated together in one parallel batch.
    pub scan_batch: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            solver: SolverOptions::default(),
            r_tol: None,
            boundary_tol: None,
            max_halvings: 60,
            scan_batch: 8,
        }
    }
}

impl ShootingOptions {
    pub fn r_tol_for(&self, radius: f64) -> f64 {
        self.r_tol.unwrap_or(1e-8 * radius)
    }

    pub fn boundary_tol_for(&self, d_infinity: f64) -> f64 {
        self.boundary_tol.unwrap_or(1e-8 * d_infinity)
    }
}

/// One evaluation of the shooting map at height `d`.
#[derive(Debug, Clone)]
struct Shot {
    d: f64,
    /// `z_{k}(d)` when it lies inside the integration window.
    z: Option<f64>,
    traj: Trajectory,
}

impl Shot {
    /// The search predicate `z_k(d) >= R`.
    fn reaches(&self, radius: f64) -> bool {
        self.z.is_none_or(|z| z >= radius)
    }
}

struct Shooter<'a> {
    params: ProblemParams,
    phi: &'a PhiSpec,
    f: &'a FSpec,
    opts: &'a ShootingOptions,
}

impl Shooter<'_> {
    /// Integrates from `d` far enough to see whether the `k`-th zero precedes `R`.
    fn shoot(&self, d: f64, k: usize) -> Result<Shot> {
        let params = self.params.with_d(d);
        let r_max = 2.0 * params.radius;
        let traj = integrate_trajectory(&params, self.phi, self.f, r_max, Some(k), &self.opts.solver)?;
        let z = zeros_of(&traj, k).zeros.get(k - 1).copied();
        Ok(Shot { d, z, traj })
    }

    /// Finds the height where `z_k(d) >= R` first fails when descending from `upper`
    /// along `upper 2^-j`, then bisects that bracket.
    fn level(&self, level: usize, upper: f64, start: Shot) -> Result<Shot> {
        let k = level + 1;
        let radius = self.params.radius;
        if self.within_tol(&start) {
            return Ok(start);
        }
        if !start.reaches(radius) {
            return Err(Error::NotBracketed {
                level,
                upper,
                halvings: 0,
            });
        }
        let batch = self.opts.scan_batch.max(1);
        let mut prev = start;
        let mut j = 1;
        let bracket = loop {
            if j > self.opts.max_halvings {
                return Err(Error::NotBracketed {
                    level,
                    upper,
                    halvings: self.opts.max_halvings,
                });
            }
            let hi = (j + batch - 1).min(self.opts.max_halvings);
            let shots: Vec<Shot> = (j..=hi)
                .into_par_iter()
                .map(|m| self.shoot(upper * 0.5f64.powi(m as i32), k))
                .collect::<Result<_>>()?;
            // all flips in the batch, ordered by decreasing d; the first is taken
            let mut flips = Vec::new();
            let mut above = prev.clone();
            for s in shots {
                if above.reaches(radius) && !s.reaches(radius) {
                    flips.push((above.clone(), s.clone()));
                }
                above = s;
            }
            if let Some(first) = flips.into_iter().next() {
                break first;
            }
            prev = above;
            j = hi + 1;
        };
        self.bisect(k, bracket.0, bracket.1)
    }

    fn within_tol(&self, s: &Shot) -> bool {
        let radius = self.params.radius;
        let r_tol = self.opts.r_tol_for(radius);
        let b_tol = self.opts.boundary_tol_for(self.f.d_infinity());
        s.z.is_some_and(|z| (z - radius).abs() <= r_tol) && s.traj.u_at(radius).abs() <= b_tol
    }

    /// `hi` satisfies the predicate and `lo` does not.
    fn bisect(&self, k: usize, mut hi: Shot, mut lo: Shot) -> Result<Shot> {
        let radius = self.params.radius;
        let r_tol = self.opts.r_tol_for(radius);
        let ok = |s: &Shot| self.within_tol(s);
        for _ in 0..200 {
            // ties go to the smaller height
            if ok(&lo) {
                return Ok(lo);
            }
            if ok(&hi) {
                return Ok(hi);
            }
            let mid = 0.5 * (lo.d + hi.d);
            if mid <= lo.d || mid >= hi.d {
                break;
            }
            let s = self.shoot(mid, k)?;
            if s.reaches(radius) {
                hi = s;
            } else {
                lo = s;
            }
        }
        let gap = |s: &Shot| s.z.map_or(f64::INFINITY, |z| (z - radius).abs());
        Err(Error::Numeric {
            message: format!(
                "bisection stalled with |z - R| = {:e} (tolerance {r_tol:e})",
                gap(&lo).min(gap(&hi))
            ),
            bracket: Some((lo.d, hi.d)),
        })
    }
}

fn check_lambda(params: &ProblemParams, phi: &PhiSpec, f: &FSpec) -> Result<()> {
    params.validate_equation(phi)?;
    if !(f.d_infinity() > 0.0) {
        return Err(Error::domain("d_infinity must be positive"));
    }
    Ok(())
}

/// Height of the positive solution: `z_1(d_0) = R`.
pub fn find_d0(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    opts: &ShootingOptions,
) -> Result<(f64, Trajectory)> {
    check_lambda(params, phi, f)?;
    let shooter = Shooter {
        params: *params,
        phi,
        f,
        opts,
    };
    let upper = f.d_infinity();
    let start = shooter.shoot(upper, 1)?;
    let shot = shooter.level(0, upper, start)?;
    Ok((shot.d, shot.traj.truncated(params.radius)))
}

/// Height `d_ell < d_prev` of the solution with `ell` interior zeros: `z_{ell+1}(d_ell) = R`.
pub fn find_d_ell(
    ell: usize,
    d_prev: f64,
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    opts: &ShootingOptions,
) -> Result<(f64, Trajectory)> {
    check_lambda(params, phi, f)?;
    if ell == 0 {
        return find_d0(params, phi, f, opts);
    }
    if !(d_prev > 0.0 && d_prev <= f.d_infinity() * (1.0 + 1e-12)) {
        return Err(Error::domain(format!("previous level {d_prev} outside (0, d_infinity]")));
    }
    let shooter = Shooter {
        params: *params,
        phi,
        f,
        opts,
    };
    let start = shooter.shoot(d_prev, ell + 1)?;
    let shot = shooter.level(ell, d_prev, start)?;
    Ok((shot.d, shot.traj.truncated(params.radius)))
}

/// Accuracy actually achieved by a shooting run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AchievedTolerances {
    /// Largest `|z_{l+1}(d_l) - R|`.
    pub r_gap: f64,
    /// Largest `|u_l(R)|`.
    pub boundary: f64,
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub d_levels: Vec<f64>,
    /// One profile per level on `[0, R]`.
    pub profiles: Vec<Trajectory>,
    /// Interior zeros of each profile in `(0, R)`.
    pub zero_counts: Vec<usize>,
    pub lambda_used: f64,
    pub tolerances: AchievedTolerances,
}

impl ShootingResult {
    fn empty(lambda: f64) -> Self {
        ShootingResult {
            d_levels: Vec::new(),
            profiles: Vec::new(),
            zero_counts: Vec::new(),
            lambda_used: lambda,
            tolerances: AchievedTolerances {
                r_gap: 0.0,
                boundary: 0.0,
            },
        }
    }

    fn push(&mut self, d: f64, profile: Trajectory, radius: f64, r_tol: f64) {
        let zs = zeros_of(&profile, usize::MAX);
        let interior = zs.zeros.iter().filter(|&&z| z < radius - r_tol).count();
        let gap = match zs.zeros.get(interior) {
            Some(&z) => (z - radius).abs(),
            // zero just beyond R: one Newton step from R
            None => (profile.u_at(radius) / profile.du_at(radius)).abs(),
        };
        let t = &mut self.tolerances;
        t.r_gap = t.r_gap.max(gap);
        t.boundary = t.boundary.max(profile.u_at(radius).abs());
        self.d_levels.push(d);
        self.zero_counts.push(interior);
        self.profiles.push(profile);
    }
}

/// Failure at some level, carrying the levels completed before it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("level {failed_level}: {error}")]
pub struct PartialShooting {
    pub failed_level: usize,
    pub error: Error,
    pub completed: ShootingResult,
}

impl From<PartialShooting> for Error {
    fn from(p: PartialShooting) -> Self {
        p.error
    }
}

/// Runs `find_d0` and then `find_d_ell` for `ell = 1..=levels`.
pub fn solve_problem(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    levels: usize,
    opts: &ShootingOptions,
) -> std::result::Result<ShootingResult, PartialShooting> {
    let mut out = ShootingResult::empty(params.lambda);
    let radius = params.radius;
    for ell in 0..=levels {
        let step = match out.d_levels.last() {
            None => find_d0(params, phi, f, opts),
            Some(&prev) => find_d_ell(ell, prev, params, phi, f, opts),
        };
        match step {
            Ok((d, profile)) => out.push(d, profile, radius, opts.r_tol_for(radius)),
            Err(error) => {
                return Err(PartialShooting {
                    failed_level: ell,
                    error,
                    completed: out,
                })
            }
        }
    }
    Ok(out)
}
