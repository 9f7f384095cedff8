//! The singular initial value problem
//!
//! ```text
//! -(r^alpha phi(|u'|) u')' = lambda r^gamma f(u),  u(0) = d,  u'(0) = 0
//! ```
//!
//! A Picard fixed point of the integral form covers `[0, eps]`; beyond that the
//! regular first-order system in `(u, v)`, `v = r^alpha phi(|u'|) u'`,
//!
//! ```text
//! u' = sgn(v) h^{-1}(r^-alpha |v|),   v' = -lambda r^gamma f(u)
//! ```
//!
//! is integrated with an adaptive Dormand–Prince pair.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dopri::{self, DenseStep, State};
use crate::error::{Error, Result};
use crate::nonlinearity::FSpec;
use crate::phi::PhiSpec;
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Radius `R` of the boundary condition `u(R) = 0`.
    pub radius: f64,
    /// Initial height `u(0)`.
    pub d: f64,
}

impl ProblemParams {
    pub fn new(alpha: f64, gamma: f64, lambda: f64, radius: f64, d: f64) -> Self {
        ProblemParams {
            alpha,
            gamma,
            lambda,
            radius,
            d,
        }
    }

    pub fn with_d(&self, d: f64) -> Self {
        ProblemParams { d, ..*self }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        ProblemParams { lambda, ..*self }
    }

    /// `gamma >= max{alpha, -alpha / (gamma1 - 1)}`.
    pub fn weight_condition(&self, gamma1: f64) -> bool {
        self.gamma >= self.alpha.max(-self.alpha / (gamma1 - 1.0))
    }

    /// Checks everything except the range of `d`.
    pub fn validate_equation(&self, phi: &PhiSpec) -> Result<()> {
        for (name, x) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !x.is_finite() {
                return Err(Error::domain(format!("{name} must be finite, got {x}")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::domain(format!("R must be positive, got {}", self.radius)));
        }
        if !self.weight_condition(phi.gamma1()) {
            return Err(Error::domain(format!(
                "gamma = {} violates gamma >= max{{alpha, -alpha/(gamma1-1)}} = {}",
                self.gamma,
                self.alpha.max(-self.alpha / (phi.gamma1() - 1.0))
            )));
        }
        Ok(())
    }

    pub fn validate(&self, phi: &PhiSpec, f: &FSpec) -> Result<()> {
        self.validate_equation(phi)?;
        if !(self.d > 0.0 && self.d <= f.d_infinity() * (1.0 + 1e-12)) {
            return Err(Error::domain(format!(
                "d must lie in (0, d_infinity = {}], got {}",
                f.d_infinity(),
                self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Initial Picard interval; `None` means `1e-3 * min(1, R)`.
    pub eps0: Option<f64>,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Dead core when `|u| <= tol * d` and `|v| <= tol * max|v|` at once.
    pub dead_core_tol: f64,
    pub picard_nodes: usize,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps0: None,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            dead_core_tol: 1e-13,
            picard_nodes: 800,
            max_steps: 2_000_000,
        }
    }
}

impl SolverOptions {
    pub fn eps_for(&self, radius: f64) -> f64 {
        self.eps0.unwrap_or(1e-3 * radius.min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    ReachedRmax,
    /// Stopped after the requested number of sign changes.
    ZeroLimit,
    DeadCore,
    StepFailure,
}

// ---------------------------------------------------------------------------
// Picard start

/// Exponent of the graded grid `r = eps x^m` on the Picard interval.
const GRADING: i32 = 6;

/// Fixed point of the integral operator on `[0, eps]`.
#[derive(Debug, Clone)]
pub struct PicardSegment {
    pub eps: f64,
    /// Measured contraction factor of the iteration.
    pub contraction: f64,
    pub iterations: usize,
    /// Sup-distance between the last two iterates.
    pub final_distance: f64,
    r: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl PicardSegment {
    pub fn nodes(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.r, &self.u, &self.v)
    }

    fn dx(&self) -> f64 {
        1.0 / (self.r.len() - 1) as f64
    }

    /// Cubic Lagrange interpolation in the uniform grading variable.
    pub fn eval(&self, r: f64) -> State {
        let n = self.r.len() - 1;
        let x = (r / self.eps).clamp(0.0, 1.0).powf(1.0 / GRADING as f64);
        let pos = x / self.dx();
        let j0 = (pos.floor() as isize - 1).clamp(0, n as isize - 3) as usize;
        let xs: [f64; 4] = std::array::from_fn(|k| (j0 + k) as f64 * self.dx());
        let mut out = [0.0; 2];
        for k in 0..4 {
            let mut w = 1.0;
            for m in 0..4 {
                if m != k {
                    w *= (x - xs[m]) / (xs[k] - xs[m]);
                }
            }
            out[0] += w * self.u[j0 + k];
            out[1] += w * self.v[j0 + k];
        }
        out
    }
}

fn rpow(r: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        r.powf(e)
    }
}

/// `u' = sgn(v) h^{-1}(r^-alpha |v|)`.
#[inline]
pub(crate) fn slope_from_flux(phi: &PhiSpec, alpha: f64, r: f64, v: f64) -> f64 {
    if v == 0.0 || r == 0.0 {
        return 0.0;
    }
    let s = v.abs() * rpow(r, -alpha);
    let t = phi.h_inverse_raw(s).unwrap_or_else(|(a, b)| 0.5 * (a + b));
    v.signum() * t
}

struct PicardAttempt {
    u: Vec<f64>,
    v: Vec<f64>,
    contraction: f64,
    iterations: usize,
    final_distance: f64,
    converged: bool,
}

fn picard_iterate(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    r: &[f64],
    drdx: &[f64],
    dx: f64,
) -> PicardAttempt {
    let d = params.d;
    let n = r.len();
    let weight: Vec<f64> = r.iter().zip(drdx).map(|(&ri, &j)| rpow(ri, params.gamma) * j).collect();
    let mut u = vec![d; n];
    let mut v = vec![0.0; n];
    let mut distances: Vec<f64> = Vec::new();
    let tol = 1e-12 * (1.0 + d);
    let mut converged = false;
    for _ in 0..200 {
        let g: Vec<f64> = u.iter().zip(&weight).map(|(&ui, &w)| w * f.f_eval(ui)).collect();
        let inner = quadrature::cumulative_uniform(&g, dx);
        let w: Vec<f64> = (0..n)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    slope_from_flux(phi, params.alpha, r[j], -params.lambda * inner[j]) * drdx[j]
                }
            })
            .collect();
        let outer = quadrature::cumulative_uniform(&w, dx);
        let mut dist: f64 = 0.0;
        for j in 0..n {
            let next = d + outer[j];
            dist = dist.max((next - u[j]).abs());
            u[j] = next;
            v[j] = -params.lambda * inner[j];
        }
        distances.push(dist);
        if !dist.is_finite() {
            break;
        }
        if dist <= tol {
            converged = true;
            break;
        }
    }
    let floor = 1e3 * f64::EPSILON * (1.0 + d);
    let contraction = distances
        .windows(2)
        .filter(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    PicardAttempt {
        u,
        v,
        contraction,
        iterations: distances.len(),
        final_distance: distances.last().copied().unwrap_or(0.0),
        converged,
    }
}

/// Fixed point of `T(u)(r) = d - int_0^r h^{-1}(s^-alpha int_0^s lambda t^gamma f(u(t)) dt) ds`
/// on `[0, eps]`. `eps` is halved until the measured contraction factor is at
/// most one half and the iterates stay within `d/2` of `d`.
pub fn picard_start(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    eps: f64,
    nodes: usize,
) -> Result<PicardSegment> {
    let d = params.d;
    if !(d > 0.0) {
        return Err(Error::domain(format!("initial height must be positive, got {d}")));
    }
    if !(f.f_eval(d) > 0.0) {
        return Err(Error::domain(format!(
            "f(d) = {} must be positive for d > 0",
            f.f_eval(d)
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    let nodes = nodes.max(8);
    let dx = 1.0 / nodes as f64;
    let mut eps = eps;
    let floor = eps * 1e-12;
    while eps >= floor {
        let xs: Vec<f64> = (0..=nodes).map(|j| j as f64 * dx).collect();
        let r: Vec<f64> = xs.iter().map(|&x| eps * x.powi(GRADING)).collect();
        let drdx: Vec<f64> = xs
            .iter()
            .map(|&x| eps * GRADING as f64 * x.powi(GRADING - 1))
            .collect();
        let attempt = picard_iterate(params, phi, f, &r, &drdx, dx);
        let drift = attempt.u.iter().map(|&ui| (ui - d).abs()).fold(0.0, f64::max);
        if attempt.converged && attempt.contraction <= 0.5 && drift <= 0.5 * d {
            return Ok(PicardSegment {
                eps,
                contraction: attempt.contraction,
                iterations: attempt.iterations,
                final_distance: attempt.final_distance,
                r,
                u: attempt.u,
                v: attempt.v,
            });
        }
        eps *= 0.5;
    }
    Err(Error::Numeric {
        message: "Picard iteration did not contract on any start interval".to_string(),
        bracket: Some((eps, 2.0 * eps)),
    })
}

/// Leading-order drop `d - u(r)` near the origin,
/// `(lambda f(d) / ((gamma+1) h(1)))^(1/(g1-1)) (g1-1)/(gamma-alpha+g1) r^((gamma-alpha+g1)/(g1-1))`.
/// Exact to leading order for the power family.
pub fn leading_order_drop(params: &ProblemParams, phi: &PhiSpec, f: &FSpec, r: f64) -> f64 {
    let g1 = phi.gamma1();
    let k = params.gamma - params.alpha + g1;
    (params.lambda * f.f_eval(params.d) / ((params.gamma + 1.0) * phi.h_at_1())).powf(1.0 / (g1 - 1.0))
        * (g1 - 1.0)
        / k
        * r.powf(k / (g1 - 1.0))
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    picard: Option<PicardSegment>,
    steps: Vec<DenseStep>,
}

impl Dense {
    fn eval(&self, r: f64) -> State {
        if let Some(p) = &self.picard {
            if r <= p.eps || self.steps.is_empty() {
                return p.eval(r);
            }
        }
        let idx = self.steps.partition_point(|s| s.r1() < r);
        let idx = idx.min(self.steps.len() - 1);
        self.steps[idx].eval(r)
    }

    fn r_end(&self) -> f64 {
        match (self.steps.last(), &self.picard) {
            (Some(s), _) => s.r1(),
            (None, Some(p)) => p.eps,
            (None, None) => 0.0,
        }
    }
}

/// Summary of the Picard start used to build a trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardInfo {
    pub eps: f64,
    pub contraction: f64,
    pub iterations: usize,
}

/// Numerical solution of the initial value problem with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    /// `u'`
    pub du: Vec<f64>,
    /// Flux `r^alpha phi(|u'|) u'`.
    pub v: Vec<f64>,
    pub status: TrajectoryStatus,
    /// Sign changes of `u` seen by the integrator.
    pub sign_changes: usize,
    pub picard: Option<PicardInfo>,
    pub(crate) dense: Dense,
    pub(crate) phi: PhiSpec,
    pub(crate) alpha: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn d(&self) -> f64 {
        self.u[0]
    }

    pub fn r_end(&self) -> f64 {
        self.dense.r_end()
    }

    /// Dense `(u, v)` at any `r` inside the integrated range.
    pub fn state_at(&self, r: f64) -> (f64, f64) {
        let s = self.dense.eval(r);
        (s[0], s[1])
    }

    pub fn u_at(&self, r: f64) -> f64 {
        self.dense.eval(r)[0]
    }

    pub fn du_at(&self, r: f64) -> f64 {
        let v = self.dense.eval(r)[1];
        slope_from_flux(&self.phi, self.alpha, r, v)
    }

    /// Builds a trajectory from samples with cubic Hermite interpolation of
    /// `u` (slopes `du`) and `v` (slopes `dv`). Meant for synthetic data.
    pub fn from_samples(
        r: Vec<f64>,
        u: Vec<f64>,
        du: Vec<f64>,
        v: Vec<f64>,
        dv: Vec<f64>,
        phi: PhiSpec,
        alpha: f64,
    ) -> Result<Self> {
        let n = r.len();
        if n < 2 || [u.len(), du.len(), v.len(), dv.len()].iter().any(|&m| m != n) {
            return Err(Error::domain("sample arrays must share a length >= 2"));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("sample grid must be strictly increasing"));
        }
        let steps = (0..n - 1)
            .map(|i| {
                DenseStep::hermite(
                    r[i],
                    r[i + 1] - r[i],
                    [u[i], v[i]],
                    [u[i + 1], v[i + 1]],
                    [du[i], dv[i]],
                    [du[i + 1], dv[i + 1]],
                )
            })
            .collect();
        let sign_changes = count_sign_changes(&u);
        Ok(Trajectory {
            r,
            u,
            du,
            v,
            status: TrajectoryStatus::ReachedRmax,
            sign_changes,
            picard: None,
            dense: Dense {
                picard: None,
                steps,
            },
            phi,
            alpha,
        })
    }

    /// Nodes on `[0, r_end]`, with a final node interpolated at `r_end`.
    pub fn truncated(&self, r_end: f64) -> Trajectory {
        let keep = self.r.partition_point(|&r| r < r_end);
        let mut out = self.clone();
        out.r.truncate(keep);
        out.u.truncate(keep);
        out.du.truncate(keep);
        out.v.truncate(keep);
        if r_end <= self.r_end() {
            let (u, v) = self.state_at(r_end);
            out.r.push(r_end);
            out.u.push(u);
            out.v.push(v);
            out.du.push(slope_from_flux(&self.phi, self.alpha, r_end, v));
        }
        out.sign_changes = count_sign_changes(&out.u);
        out
    }

    /// Writes `r,u,du,v,E` with 17 significant digits. `energy` may be empty,
    /// in which case the column is left blank.
    pub fn write_csv<W: Write>(&self, mut w: W, energy: &[f64]) -> std::io::Result<()> {
        writeln!(w, "r,u,du,v,E")?;
        for i in 0..self.r.len() {
            let e = energy
                .get(i)
                .map(|e| format!("{e:.16e}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.r[i], self.u[i], self.du[i], self.v[i], e
            )?;
        }
        Ok(())
    }
}

pub(crate) fn count_sign_changes(u: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for &x in u {
        if x != 0.0 {
            if last != 0.0 && x.signum() != last.signum() {
                changes += 1;
            }
            last = x;
        }
    }
    changes
}

impl DenseStep {
    pub(crate) fn hermite(r0: f64, h: f64, y0: State, y1: State, dy0: State, dy1: State) -> Self {
        // The Dormand–Prince extension with a zero fifth coefficient is cubic Hermite.
        let mut rc = [[0.0; 2]; 5];
        for i in 0..2 {
            let ydiff = y1[i] - y0[i];
            let bspl = h * dy0[i] - ydiff;
            rc[0][i] = y0[i];
            rc[1][i] = ydiff;
            rc[2][i] = bspl;
            rc[3][i] = ydiff - h * dy1[i] - bspl;
        }
        DenseStep::from_parts(r0, h, rc)
    }
}

/// Shared integration context for one `(params, phi, f)` triple.
struct System<'a> {
    params: &'a ProblemParams,
    phi: &'a PhiSpec,
    f: &'a FSpec,
}

impl System<'_> {
    fn rhs(&self, r: f64, y: &State) -> State {
        [
            slope_from_flux(self.phi, self.params.alpha, r, y[1]),
            -self.params.lambda * rpow(r, self.params.gamma) * self.f.f_eval(y[0]),
        ]
    }
}

struct RunOutput {
    r: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<DenseStep>,
    status: TrajectoryStatus,
    sign_changes: usize,
}

/// Fraction of the user tolerances granted to a single step, so that the
/// accumulated error over a few hundred steps stays near the stated tolerance.
const LOCAL_SHARE: f64 = 0.01;

/// Locates a sign change of component `c` inside one step by bisection on the dense output.
fn locate_crossing(step: &DenseStep, c: usize) -> f64 {
    let (mut a, mut b) = (step.r0, step.r1());
    let sa = step.eval(a)[c].signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if step.eval(m)[c].signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Adaptive integration of the regular system from `(r0, y0)` to `r_max`.
///
/// `f(u)` has a cusp where `u` vanishes and `h^{-1}` one where `v` vanishes, and
/// the embedded error estimate is blind to a cusp inside a step. A step that
/// would contain a sign change of either component is therefore rejected; the
/// crossing is approached with steps of at most half the remaining distance,
/// passed with one tiny step, and left with steps bounded by the distance
/// already travelled.
fn run(
    sys: &System<'_>,
    r0: f64,
    y0: State,
    r_max: f64,
    max_zero_count: Option<usize>,
    opts: &SolverOptions,
) -> RunOutput {
    let d = sys.params.d;
    let rhs = |r: f64, y: &State| sys.rhs(r, y);
    let mut out = RunOutput {
        r: Vec::new(),
        u: Vec::new(),
        du: Vec::new(),
        v: Vec::new(),
        steps: Vec::new(),
        status: TrajectoryStatus::ReachedRmax,
        sign_changes: 0,
    };
    let mut r = r0;
    let mut y = y0;
    let mut k1 = rhs(r, &y);
    let mut h = (0.5 * r0).max(1e-6 * r_max).min(r_max - r0);
    let mut v_scale = y[1].abs().max(f64::MIN_POSITIVE);
    let mut du_scale = k1[0].abs();
    let mut last_sign = y[0].signum();
    let mut attempts = 0usize;
    // crossing being approached, and the most recent crossing passed
    let mut target: Option<f64> = None;
    let mut retargets = 0usize;
    let mut passed: Option<f64> = None;

    while r < r_max {
        if attempts >= opts.max_steps {
            out.status = TrajectoryStatus::StepFailure;
            break;
        }
        attempts += 1;
        let tiny = 1e-14 * r.max(1.0);
        let mut h_try = h.min(r_max - r);
        let mut crossing = false;
        if let Some(z) = target {
            let gap = z - r;
            if gap <= 4.0 * tiny {
                h_try = (2.0 * gap.max(0.0) + tiny).min(r_max - r);
                crossing = true;
            } else {
                h_try = h_try.min(0.5 * gap);
            }
        } else if let Some(z) = passed {
            h_try = h_try.min((r - z).max(tiny));
        }
        if h_try < 1e-16 * r.max(1e-300) {
            out.status = TrajectoryStatus::StepFailure;
            break;
        }
        let atol = [LOCAL_SHARE * opts.abs_tol * d, LOCAL_SHARE * opts.abs_tol * v_scale];
        let trial = dopri::step(&rhs, r, &y, &k1, h_try, &atol, LOCAL_SHARE * opts.rel_tol);
        let jump = (trial.k7[0] - k1[0]).abs();
        let du_ok = crossing
            || jump == 0.0
            || jump <= 0.25 * du_scale.max(k1[0].abs()).max(trial.k7[0].abs());
        if !crossing && (trial.err > 1.0 || !du_ok) {
            let shrink = if trial.err > 1.0 {
                (0.9 * trial.err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.5
            };
            h = h_try * shrink;
            continue;
        }
        if !crossing && retargets < 16 {
            let flips: Vec<usize> = (0..2).filter(|&c| y[c] * trial.y1[c] < 0.0).collect();
            if !flips.is_empty() {
                let z = flips
                    .iter()
                    .map(|&c| locate_crossing(&trial.dense, c))
                    .fold(f64::INFINITY, f64::min);
                target = Some(z);
                retargets += 1;
                h = h_try;
                continue;
            }
        }
        if crossing {
            passed = target.take();
            retargets = 0;
        }
        let r_next = if r_max - (r + h_try) <= 1e-15 * r_max {
            r_max
        } else {
            r + h_try
        };
        out.steps.push(trial.dense);
        r = r_next;
        y = trial.y1;
        k1 = trial.k7;
        out.r.push(r);
        out.u.push(y[0]);
        out.du.push(k1[0]);
        out.v.push(y[1]);
        v_scale = v_scale.max(y[1].abs());
        du_scale = du_scale.max(k1[0].abs());

        if !crossing {
            let grow = if trial.err == 0.0 {
                5.0
            } else {
                (0.9 * trial.err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h_try * grow).max(h);
        }

        if y[0] != 0.0 && y[0].signum() != last_sign {
            last_sign = y[0].signum();
            out.sign_changes += 1;
            if max_zero_count.is_some_and(|m| out.sign_changes >= m) {
                out.status = TrajectoryStatus::ZeroLimit;
                break;
            }
        }
        if y[0].abs() <= opts.dead_core_tol * d && y[1].abs() <= opts.dead_core_tol * v_scale {
            out.status = TrajectoryStatus::DeadCore;
            if r < r_max {
                out.steps.push(DenseStep::from_parts(r, r_max - r, [[0.0; 2]; 5]));
                out.r.push(r_max);
                out.u.push(0.0);
                out.du.push(0.0);
                out.v.push(0.0);
            }
            break;
        }
    }
    out
}

/// Solves the initial value problem on `[0, r_max]`, stopping early after
/// `max_zero_count` sign changes of `u` or at a dead core.
pub fn integrate_trajectory(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    r_max: f64,
    max_zero_count: Option<usize>,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    params.validate_equation(phi)?;
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::domain(format!("r_max must be positive, got {r_max}")));
    }
    let eps = opts.eps_for(params.radius).min(0.5 * r_max);
    let seg = picard_start(params, phi, f, eps, opts.picard_nodes)?;

    // A subsample of the Picard grid goes into the node list.
    let (pr, pu, pv) = seg.nodes();
    let stride = (pr.len() / 40).max(1);
    let mut r = Vec::new();
    let mut u = Vec::new();
    let mut du = Vec::new();
    let mut v = Vec::new();
    for j in (0..pr.len()).step_by(stride).chain(std::iter::once(pr.len() - 1)) {
        if r.last().is_some_and(|&last| last >= pr[j]) {
            continue;
        }
        r.push(pr[j]);
        u.push(pu[j]);
        v.push(pv[j]);
        du.push(slope_from_flux(phi, params.alpha, pr[j], pv[j]));
    }
    let info = PicardInfo {
        eps: seg.eps,
        contraction: seg.contraction,
        iterations: seg.iterations,
    };
    let start = [*pu.last().unwrap(), *pv.last().unwrap()];
    let sys = System { params, phi, f };
    let run = run(&sys, seg.eps, start, r_max, max_zero_count, opts);
    r.extend(run.r);
    u.extend(run.u);
    du.extend(run.du);
    v.extend(run.v);
    Ok(Trajectory {
        r,
        u,
        du,
        v,
        status: run.status,
        sign_changes: run.sign_changes,
        picard: Some(info),
        dense: Dense {
            picard: Some(seg),
            steps: run.steps,
        },
        phi: phi.clone(),
        alpha: params.alpha,
    })
}

/// Integrates the regular system from an arbitrary interior state `(r0, u0, v0)`.
/// Used to cross-check the Picard start against plain ODE continuation.
pub fn integrate_from(
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
    r0: f64,
    state: (f64, f64),
    r_max: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    if !(r0 > 0.0 && r_max > r0) {
        return Err(Error::domain(format!("need 0 < r0 < r_max, got {r0}, {r_max}")));
    }
    let sys = System { params, phi, f };
    let y0 = [state.0, state.1];
    let run = run(&sys, r0, y0, r_max, None, opts);
    let mut r = vec![r0];
    let mut u = vec![state.0];
    let mut du = vec![slope_from_flux(phi, params.alpha, r0, state.1)];
    let mut v = vec![state.1];
    r.extend(run.r);
    u.extend(run.u);
    du.extend(run.du);
    v.extend(run.v);
    Ok(Trajectory {
        r,
        u,
        du,
        v,
        status: run.status,
        sign_changes: run.sign_changes,
        picard: None,
        dense: Dense {
            picard: None,
            steps: run.steps,
        },
        phi: phi.clone(),
        alpha: params.alpha,
    })
}

/// Independent residuals of the two integral identities along a trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residual {
    /// `max |v(r) + lambda int_0^r t^gamma f(u) dt| / (1 + |v(r)|)`
    pub flux: f64,
    /// `max |u(r) - d - int_0^r u'(t) dt| / (1 + |u(r)|)`, with `u'` recovered from the dense flux.
    pub displacement: f64,
}

impl Residual {
    pub fn max(&self) -> f64 {
        self.flux.max(self.displacement)
    }
}

/// Both integral identities, evaluated with adaptive Gauss–Kronrod quadrature
/// over the dense output rather than the integrator's own accumulation.
pub fn integral_residuals(
    traj: &Trajectory,
    params: &ProblemParams,
    phi: &PhiSpec,
    f: &FSpec,
) -> Residual {
    let d = traj.d();
    let forcing = |t: f64| rpow(t, params.gamma) * f.f_eval(traj.dense.eval(t)[0]);
    let slope = |t: f64| slope_from_flux(phi, params.alpha, t, traj.dense.eval(t)[1]);
    let mut q = 0.0;
    let mut p = 0.0;
    let mut flux: f64 = 0.0;
    let mut disp: f64 = 0.0;
    for i in 0..traj.len() {
        if i > 0 {
            let (a, b) = (traj.r[i - 1], traj.r[i]);
            q += quadrature::integrate(&forcing, a, b, 1e-17, 1e-13).unwrap_or(f64::NAN);
            p += quadrature::integrate(&slope, a, b, 1e-17, 1e-13).unwrap_or(f64::NAN);
        }
        let rf = (traj.v[i] + params.lambda * q).abs() / (1.0 + traj.v[i].abs());
        let rd = (traj.u[i] - d - p).abs() / (1.0 + traj.u[i].abs());
        flux = flux.max(if rf.is_nan() { f64::INFINITY } else { rf });
        disp = disp.max(if rd.is_nan() { f64::INFINITY } else { rd });
    }
    Residual {
        flux,
        displacement: disp,
    }
}

/// Largest of the two integral-identity residuals.
pub fn integral_residual(traj: &Trajectory, params: &ProblemParams, phi: &PhiSpec, f: &FSpec) -> f64 {
    integral_residuals(traj, params, phi, f).max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn autonomous() -> (ProblemParams, PhiSpec, FSpec) {
        (
            ProblemParams::new(0.0, 0.0, 1.0, 1.0, 1.0),
            PhiSpec::power(2.0).unwrap(),
            FSpec::power(1.0 / 3.0, 1.0).unwrap(),
        )
    }

    // Taylor series of u'' = -u^(1/3), u(0) = 1, u'(0) = 0:
    // u = 1 - r^2/2 + r^4/72 + O(r^6).
    #[test]
    fn picard_matches_taylor_series() {
        let (p, phi, f) = autonomous();
        let seg = picard_start(&p, &phi, &f, 0.1, 800).unwrap();
        assert_eq!(seg.eps, 0.1);
        assert!(seg.contraction < 0.5);
        let u_eps = seg.eval(0.1)[0];
        assert!((u_eps - 0.995).abs() < 1e-4, "{u_eps}");
        let taylor = 1.0 - 0.005 + 1e-4 / 72.0;
        assert!((u_eps - taylor).abs() < 1e-8, "{u_eps} vs {taylor}");
    }

    #[test]
    fn picard_vanishing_forcing() {
        let (p, phi, f) = autonomous();
        let p = p.with_lambda(1e-12);
        let seg = picard_start(&p, &phi, &f, 1e-3, 800).unwrap();
        assert!((seg.eval(seg.eps)[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn picard_leading_order_p3() {
        let p = ProblemParams::new(2.0, 2.0, 1.0, 1.0, 1.0);
        let phi = PhiSpec::power(3.0).unwrap();
        let f = FSpec::power(1.0, 1.0).unwrap();
        let seg = picard_start(&p, &phi, &f, 1e-3, 800).unwrap();
        for r in [2.5e-4, 5e-4, 1e-3] {
            let drop = 1.0 - seg.eval(r)[0];
            let expected = (1.0f64 / 3.0).sqrt() * (2.0 / 3.0) * r.powf(1.5);
            assert_relative_eq!(leading_order_drop(&p, &phi, &f, r), expected, max_relative = 1e-14);
            // next-order correction is O(r^(3/2)) relative
            assert_relative_eq!(drop, expected, max_relative = 1e-3);
        }
    }

    #[test]
    fn picard_rejects_nonpositive_forcing() {
        let (p, phi, _) = autonomous();
        let f = FSpec::custom(crate::expr::ScalarFn::parse("-t").unwrap(), 1.0).unwrap();
        assert!(matches!(picard_start(&p, &phi, &f, 1e-3, 800), Err(Error::Domain(_))));
    }

    #[test]
    fn energy_conserved_in_autonomous_case() {
        let (p, phi, f) = autonomous();
        let traj = integrate_trajectory(&p, &phi, &f, 6.0, None, &SolverOptions::default()).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::ReachedRmax);
        for i in 0..traj.len() {
            let e = 0.5 * traj.du[i].powi(2) + f.F_eval(traj.u[i]);
            assert!((e - 0.75).abs() < 1e-9, "E = {e} at r = {}", traj.r[i]);
        }
    }

    #[test]
    fn flux_consistency_at_nodes() {
        let p = ProblemParams::new(1.0, 1.5, 0.7, 1.0, 0.8);
        let phi = PhiSpec::sum_of_powers(2.0, 3.0).unwrap();
        let f = FSpec::arctan(1.0).unwrap();
        let traj = integrate_trajectory(&p, &phi, &f, 8.0, Some(3), &SolverOptions::default()).unwrap();
        assert_eq!(traj.u[0], 0.8);
        assert_eq!(traj.du[0], 0.0);
        assert_eq!(traj.v[0], 0.0);
        for i in 0..traj.len() {
            let expected = traj.r[i].powf(p.alpha) * phi.h_eval(traj.du[i].abs()).unwrap() * traj.du[i].signum();
            assert!(
                (traj.v[i] - expected).abs() <= 1e-10 * (1.0 + traj.v[i].abs()),
                "node {i}: v = {}, expected {expected}",
                traj.v[i]
            );
        }
    }

    #[test]
    fn stops_after_requested_zero_count() {
        let (p, phi, f) = autonomous();
        let traj = integrate_trajectory(&p, &phi, &f, 100.0, Some(2), &SolverOptions::default()).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::ZeroLimit);
        assert_eq!(traj.sign_changes, 2);
        assert!(traj.r_end() < 5.0);
    }

    #[test]
    fn residual_small_and_sensitive() {
        let (p, phi, f) = autonomous();
        let traj = integrate_trajectory(&p, &phi, &f, 5.0, None, &SolverOptions::default()).unwrap();
        let res = integral_residuals(&traj, &p, &phi, &f);
        assert!(res.max() <= 1e-8, "{res:?}");
        let mut bad = traj.clone();
        let mid = bad.len() / 2;
        bad.u[mid] += 1e-2;
        assert!(integral_residual(&bad, &p, &phi, &f) > 1e-4);
    }

    #[test]
    fn weight_condition_enforced() {
        let (_, phi, f) = autonomous();
        let p = ProblemParams::new(2.0, 1.0, 1.0, 1.0, 1.0);
        assert!(integrate_trajectory(&p, &phi, &f, 1.0, None, &SolverOptions::default()).is_err());
        let p = ProblemParams::new(-1.0, 0.5, 1.0, 1.0, 1.0);
        assert!(p.validate(&phi, &f).is_err());
        let p = ProblemParams::new(-1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(p.validate(&phi, &f).is_ok());
    }

    #[test]
    fn truncation_adds_end_node() {
        let (p, phi, f) = autonomous();
        let traj = integrate_trajectory(&p, &phi, &f, 3.0, None, &SolverOptions::default()).unwrap();
        let t = traj.truncated(1.0);
        assert_eq!(*t.r.last().unwrap(), 1.0);
        assert!(t.r.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(*t.u.last().unwrap(), traj.u_at(1.0));
    }

    #[test]
    fn csv_layout() {
        let (p, phi, f) = autonomous();
        let traj = integrate_trajectory(&p, &phi, &f, 0.5, None, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,u,du,v,E"));
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        let parsed: f64 = row[1].parse().unwrap();
        assert_eq!(parsed, traj.u[1]);
    }
}
