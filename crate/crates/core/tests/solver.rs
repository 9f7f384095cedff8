use std::f64::consts::FRAC_PI_2;

use approx::assert_relative_eq;
use nodal_core::*;

const Z1: f64 = 1.467_416_107_700_331_2;

fn autonomous(d: f64) -> (ProblemParams, PhiSpec, FSpec) {
    (
        ProblemParams::new(0.0, 0.0, 1.0, 1.0, d),
        PhiSpec::power(2.0).unwrap(),
        FSpec::power(1.0 / 3.0, 1.0).unwrap(),
    )
}

#[test]
fn zeros_of_synthetic_cosine() {
    let n = 400;
    let r: Vec<f64> = (0..=n).map(|i| 10.0 * i as f64 / n as f64).collect();
    let u: Vec<f64> = r.iter().map(|x| x.cos()).collect();
    let du: Vec<f64> = r.iter().map(|x| -x.sin()).collect();
    let dv: Vec<f64> = r.iter().map(|x| -x.cos()).collect();
    let traj = Trajectory::from_samples(r, u, du.clone(), du, dv, PhiSpec::power(2.0).unwrap(), 0.0).unwrap();
    let zs = zeros_of(&traj, 3);
    assert!(zs.complete);
    for (k, z) in zs.zeros.iter().enumerate() {
        assert!((z - (2 * k + 1) as f64 * FRAC_PI_2).abs() <= 1e-10, "zero {k} at {z}");
    }
}

#[test]
fn first_zero_depends_continuously_on_height() {
    let (p, phi, f) = autonomous(1.0);
    let z = |d: f64| {
        let traj = integrate_trajectory(&p.with_d(d), &phi, &f, 10.0, Some(1), &SolverOptions::default()).unwrap();
        zeros_of(&traj, 1).zeros[0]
    };
    let base = z(1.0);
    let mut prev = f64::INFINITY;
    for k in 2..8 {
        let h = 10f64.powi(-k);
        let gap = (z(1.0 + h) - base).abs();
        assert!(gap < prev, "gap {gap} at h = {h}");
        prev = gap;
    }
    assert!(prev <= 1e-6);
}

#[test]
fn zeros_shrink_with_amplitude() {
    let (p, phi, f) = autonomous(1.0);
    for k in [1, 5, 10, 20] {
        let d = 2f64.powi(-k);
        let traj = integrate_trajectory(&p.with_d(d), &phi, &f, 2.0, Some(1), &SolverOptions::default()).unwrap();
        let z = zeros_of(&traj, 1).zeros[0];
        assert_relative_eq!(z, d.powf(1.0 / 3.0) * Z1, max_relative = 1e-7);
    }
}

#[test]
fn picard_start_agrees_with_continuation() {
    let (p, phi, f) = autonomous(1.0);
    let opts = SolverOptions::default();
    let full = integrate_trajectory(&p, &phi, &f, 3.0, None, &opts).unwrap();
    let eps = opts.eps_for(p.radius);
    let seg = picard_start(&p, &phi, &f, eps, opts.picard_nodes).unwrap();
    let [u0, v0] = seg.eval(eps);
    let cont = integrate_from(&p, &phi, &f, eps, (u0, v0), 3.0, &opts).unwrap();
    for r in [0.5, 1.0, 1.5, 2.0, 2.9] {
        assert!((full.u_at(r) - cont.u_at(r)).abs() <= 1e-8, "at r = {r}");
    }
}

#[test]
fn first_arc_is_monotone_and_zeros_interleave() {
    let p = ProblemParams::new(1.0, 2.0, 3.0, 1.0, 0.7);
    let phi = PhiSpec::sum_of_powers(2.0, 3.0).unwrap();
    let f = FSpec::arctan(1.0).unwrap();
    let traj = integrate_trajectory(&p, &phi, &f, 40.0, Some(4), &SolverOptions::default()).unwrap();
    let zs = zeros_of(&traj, 4);
    assert!(zs.complete, "only {} zeros", zs.len());
    for (r, u) in traj.r.iter().zip(&traj.u) {
        if *r >= zs.zeros[0] {
            break;
        }
        assert!(traj.du_at(*r) <= 0.0 && *u > 0.0);
    }
    for k in 0..zs.len() - 1 {
        let m = zs.extrema[k];
        assert!(zs.zeros[k] < m && m < zs.zeros[k + 1]);
    }
}

#[test]
fn shooting_matches_scaling_law() {
    let (p, phi, f) = autonomous(1.0);
    let p = ProblemParams { radius: Z1, ..p };
    let res = solve_problem(&p, &phi, &f, 2, &ShootingOptions::default()).unwrap();
    for (l, d) in res.d_levels.iter().enumerate() {
        assert_relative_eq!(*d, ((2 * l + 1) as f64).powi(-3), max_relative = 1e-6);
    }
    assert_eq!(res.zero_counts, vec![0, 1, 2]);
}

#[test]
fn residual_small_on_weighted_problem() {
    let p = ProblemParams::new(2.0, 2.0, 1.0, 1.0, 1.0);
    let phi = PhiSpec::power(3.0).unwrap();
    let f = FSpec::power(1.0, 1.0).unwrap();
    let traj = integrate_trajectory(&p, &phi, &f, 30.0, Some(3), &SolverOptions::default()).unwrap();
    assert!(integral_residual(&traj, &p, &phi, &f) <= 1e-8);
}
