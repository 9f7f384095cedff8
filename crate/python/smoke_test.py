"""Smoke test for the nodal extension module: python python/smoke_test.py"""

import math

import nodal

Z1 = 1.4674161077003312


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    phi = nodal.PhiSpec.power(2.0)
    f = nodal.FSpec.power(1.0 / 3.0, 1.0)
    assert phi.validate()["checks"][0]["verdict"] == "pass"
    assert close(phi.h_inverse(phi.h(0.7)), 0.7, 1e-12)
    assert close(f.F(1.0), 0.75, 1e-15)

    params = nodal.ProblemParams(0.0, 0.0, 1.0, Z1, 1.0)
    traj = nodal.integrate(params, phi, f, 12.0, max_zero_count=3)
    assert traj.status == "zero_limit", traj.status
    zs = nodal.zeros(traj, 3)
    for ell, z in enumerate(zs["zeros"], start=1):
        assert close(z, (2 * ell - 1) * Z1, 1e-6), (ell, z)
    assert nodal.integral_residual(traj, params, phi, f) <= 1e-8

    energy = nodal.energy_profile(traj, params, phi, f)
    assert max(abs(e - 0.75) for e in energy["e"]) <= 1e-9

    lam = nodal.lambda_threshold(phi, f, 0.0, 0.0, 1.0, 1.0)
    assert lam == 2.0, lam

    res = nodal.solve_problem(params, phi, f, 2)
    expected = [1.0, 1.0 / 27.0, 1.0 / 125.0]
    for d, e in zip(res["d_levels"], expected):
        assert close(d, e, 1e-4), (d, e)
    assert res["zero_counts"] == [0, 1, 2]
    assert len(res["profiles"]) == 3

    bounds = nodal.check_bounds_suite(nodal.PhiSpec.power(3.0), 1000)
    assert bounds["checks"] and all(c["verdict"] == "pass" for c in bounds["checks"])
    simon = nodal.check_simon(nodal.PhiSpec.sum_of_powers(2.0, 3.0), 3, 2000)
    assert all(c["verdict"] == "pass" for c in simon["checks"])

    try:
        nodal.PhiSpec.power(0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("power(0.5) should be rejected")

    print(f"nodal {nodal.__version__}: z1 = {zs['zeros'][0]:.12f}, "
          f"d-levels = {[round(d, 8) for d in res['d_levels']]}, Lambda(R=1) = {lam}")
    assert not math.isnan(zs["zeros"][0])


if __name__ == "__main__":
    main()
