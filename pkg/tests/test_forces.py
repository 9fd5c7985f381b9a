"""Force math: repulsive field, damping profiles, admittance integrator, marker KF.

Oracles used here are independent of the implementations they check: the
admittance integrator is compared against the closed-form second-order step
response, and the 9-state marker filter against a per-axis scalar-form
Kalman filter written directly in this file.
"""

import math

import numpy as np
import pytest

from dragfly import (AdmittanceParams, AdmittanceState, FieldParams, admittance_step,
                     angle_to_segment, compose_virtual_force, kf_update,
                     repulsive_force, user_force, variable_damping)
from dragfly.forces import kf_initialize, repulsive_magnitude

# ----------------------------------------------------------------- oracles


def closed_form_step_response(m, d, k, f, t):
    """Analytic x(t) for m x'' + d x' + k x = f, x(0) = x'(0) = 0."""
    wn = math.sqrt(k / m)
    z = d / (2 * math.sqrt(k * m))
    xinf = f / k
    t = np.asarray(t, dtype=float)
    if abs(z - 1.0) < 1e-12:
        return xinf * (1 - np.exp(-wn * t) * (1 + wn * t))
    if z < 1.0:
        wd = wn * math.sqrt(1 - z * z)
        return xinf * (1 - np.exp(-z * wn * t) * (np.cos(wd * t) + z * wn / wd * np.sin(wd * t)))
    r1 = -wn * (z - math.sqrt(z * z - 1))
    r2 = -wn * (z + math.sqrt(z * z - 1))
    c1 = r2 / (r2 - r1)
    c2 = -r1 / (r2 - r1)
    return xinf * (1 - c1 * np.exp(r1 * t) - c2 * np.exp(r2 * t))


class ScalarAxisKF:
    """Reference filter: one 3-state KF per axis, dense matrix form."""

    def __init__(self, z0, sigma_a=2.0, sigma_m=0.01):
        self.x = np.array([float(z0), 0.0, 0.0])
        self.P = np.diag([sigma_m**2, 1.0, 1.0])
        self.sigma_a = sigma_a
        self.sigma_m = sigma_m

    def update(self, z, dt):
        F = np.array([[1, dt, 0.5 * dt * dt], [0, 1, dt], [0, 0, 1]])
        g = np.array([0.5 * dt * dt, dt, 1.0])
        Q = np.outer(g, g) * self.sigma_a**2
        H = np.array([[1.0, 0.0, 0.0]])
        x = F @ self.x
        P = F @ self.P @ F.T + Q
        S = float((H @ P @ H.T).item()) + self.sigma_m**2
        K = (P @ H.T / S).ravel()
        self.x = x + K * (float(z) - x[0])
        IKH = np.eye(3) - np.outer(K, H.ravel())
        self.P = IKH @ P @ IKH.T + np.outer(K, K) * self.sigma_m**2


# ------------------------------------------------------------ repulsive field


class TestRepulsiveField:
    def test_no_voxels_no_force(self):
        assert np.all(repulsive_force([], [0, 0, 0], FieldParams()) == 0.0)

    def test_boundary_magnitudes(self):
        params = FieldParams()
        assert repulsive_magnitude(0.0, params) == pytest.approx(8.0, abs=1e-9)
        assert repulsive_magnitude(params.h, params) == pytest.approx(0.0, abs=1e-9)

    def test_boundaries_hold_over_parameter_grid(self):
        for f_s in (1.0, 8.0, 20.0):
            for lam in (0.5, 1.0, 3.0):
                for h in (0.5, 1.5, 4.0):
                    p = FieldParams(f_s=f_s, lam=lam, h=h)
                    assert abs(repulsive_magnitude(0.0, p) - f_s) < 1e-9
                    assert abs(repulsive_magnitude(h, p)) < 1e-9

    def test_reference_value_at_three_quarters_meter(self):
        # direct evaluation, written out independently of the implementation
        f_s, lam, h, d = 8.0, 1.0, 1.5, 0.75
        expected = f_s / (1 - math.exp(h)) * math.exp(-lam * d) * (1 - math.exp(h - d))
        assert expected == pytest.approx(1.2123620153312618, abs=1e-12)
        got = repulsive_force([(np.array([0.75, 0.0, 0.0]), 0.75)], [0.0, 0.0, 0.0],
                              FieldParams())
        assert np.linalg.norm(got) == pytest.approx(expected, abs=1e-9)
        # direction exactly away from the voxel
        assert got[0] == pytest.approx(-np.linalg.norm(got), abs=1e-12)
        assert got[1] == got[2] == 0.0

    def test_strictly_decreasing_on_grid(self):
        params = FieldParams()
        d = np.linspace(0.0, params.h, 100)
        mags = [repulsive_magnitude(x, params) for x in d]
        assert all(a > b for a, b in zip(mags, mags[1:]))

    def test_single_voxel_force_points_away(self):
        rng = np.random.default_rng(21)
        params = FieldParams()
        for _ in range(200):
            p = rng.uniform(-3, 3, 3)
            offset = rng.uniform(-1, 1, 3)
            d = float(np.linalg.norm(offset))
            if not (1e-6 < d < params.h):
                continue
            voxel = p - offset
            f = repulsive_force([(voxel, d)], p, params)
            cos = float(f @ offset) / (np.linalg.norm(f) * d)
            assert cos == pytest.approx(1.0, abs=1e-9)

    def test_zero_at_horizon_and_superposition(self):
        params = FieldParams()
        f = repulsive_force([(np.array([1.5, 0, 0]), 1.5)], [0, 0, 0], params)
        assert np.linalg.norm(f) < 1e-9
        # two symmetric voxels cancel laterally, add radially
        f2 = repulsive_force([(np.array([0.5, 0.5, 0]), math.hypot(0.5, 0.5)),
                              (np.array([0.5, -0.5, 0]), math.hypot(0.5, 0.5))],
                             [0, 0, 0], params)
        assert f2[1] == pytest.approx(0.0, abs=1e-12)
        assert f2[0] < 0.0

    def test_distance_beyond_horizon_rejected(self):
        with pytest.raises(ValueError):
            repulsive_force([(np.array([2.0, 0, 0]), 2.0)], [0, 0, 0], FieldParams())


# ----------------------------------------------------------------- user force


class TestUserForce:
    def test_equilibrium_gives_zero(self):
        est = kf_initialize([1.0, 2.0, 3.0])
        f = user_force([1.0, 2.0, 3.0], [0, 0, 0], est, AdmittanceParams())
        assert np.all(f == 0.0)

    def test_static_unit_displacement(self):
        params = AdmittanceParams(k_p=1.0, k_d=0.0)
        est = kf_initialize([0.0, 0.0, 0.0])
        f = user_force([1.0, 0.0, 0.0], [0, 0, 0], est, params)
        # unit magnitude, pointing from the drone toward the marker
        assert np.allclose(f, [-1.0, 0.0, 0.0], atol=1e-12)

    def test_linear_in_kp(self):
        est = kf_initialize([0.0, 0.0, 0.0])
        f1 = user_force([0.4, -0.2, 0.6], [0, 0, 0], est, AdmittanceParams(k_p=3.0, k_d=0.0))
        f2 = user_force([0.4, -0.2, 0.6], [0, 0, 0], est, AdmittanceParams(k_p=6.0, k_d=0.0))
        assert np.allclose(f2, 2.0 * f1)


# --------------------------------------------------------------- angle, damping


class TestAngleAndDamping:
    def test_aligned_and_opposed(self):
        assert angle_to_segment([2, 0, 0], [1, 0, 0]) == pytest.approx(0.0)
        assert angle_to_segment([-2, 0, 0], [1, 0, 0]) == pytest.approx(math.pi)

    def test_diagonal(self):
        assert angle_to_segment([1, 1, 0], [1, 0, 0]) == pytest.approx(math.pi / 4, abs=1e-12)

    def test_zero_force_undefined(self):
        with pytest.raises(ValueError):
            angle_to_segment([0, 0, 0], [1, 0, 0])

    @pytest.mark.parametrize("profile", ["linear", "squared", "exponential"])
    def test_profile_endpoints(self, profile):
        params = AdmittanceParams(profile=profile)
        assert variable_damping(0.0, params) == 1.0
        assert variable_damping(math.pi, params) == pytest.approx(70.0, abs=1e-12)

    def test_linear_midpoint(self):
        assert variable_damping(math.pi / 2, AdmittanceParams(profile="linear")) == \
            pytest.approx(35.5, abs=1e-12)

    @pytest.mark.parametrize("profile", ["linear", "squared", "exponential"])
    def test_monotone_and_continuous(self, profile):
        params = AdmittanceParams(profile=profile)
        theta = np.linspace(0.0, math.pi, 1000)
        vals = np.array([variable_damping(t, params) for t in theta])
        assert np.all(np.diff(vals) >= 0.0)
        dd = params.d_max - params.d_min
        assert np.max(np.abs(np.diff(vals))) < dd / 100.0


# ----------------------------------------------------------------- admittance


class TestAdmittance:
    def test_rest_is_a_fixed_point(self):
        s = AdmittanceState()
        out = admittance_step(s, [0, 0, 0], 20.0, AdmittanceParams(), 0.01)
        assert np.all(out.x == 0.0) and np.all(out.x_dot == 0.0)

    def test_static_equilibrium_f_over_k(self):
        params = AdmittanceParams()  # k = 20 per axis
        s = AdmittanceState()
        for _ in range(2000):
            s = admittance_step(s, [10.0, 0.0, 0.0], 20.0, params, 0.01)
        assert abs(s.x[0] - 0.5) < 1e-6
        assert abs(s.x[1]) < 1e-12 and abs(s.x[2]) < 1e-12

    @pytest.mark.parametrize("m,d,k", [
        (2.4, 20.0, 20.0),   # stock triple (overdamped, zeta 1.44)
        (2.4, 2.0, 20.0),    # underdamped
        (1.0, 30.0, 10.0),   # strongly overdamped
        (1.0, 10.0, 25.0),   # critically damped
    ])
    def test_matches_closed_form_step_response(self, m, d, k):
        dt = 1e-3
        n = 5000
        params = AdmittanceParams(m=[m] * 3, k=[k] * 3)
        s = AdmittanceState()
        xs = np.empty(n)
        for i in range(n):
            s = admittance_step(s, [10.0, 0.0, 0.0], d, params, dt)
            xs[i] = s.x[0]
        t = (np.arange(n) + 1) * dt
        ref = closed_form_step_response(m, d, k, 10.0, t)
        err = np.max(np.abs(xs - ref))
        assert err < 1e-3, f"max deviation {err} for (m,d,k)=({m},{d},{k})"

    def test_unforced_energy_never_increases(self):
        rng = np.random.default_rng(4)
        params = AdmittanceParams()
        for _ in range(10):
            s = AdmittanceState(x=rng.uniform(-1, 1, 3), x_dot=rng.uniform(-1, 1, 3))
            d = rng.uniform(1.0, 70.0)
            prev = math.inf
            for _ in range(500):
                s = admittance_step(s, [0, 0, 0], d, params, 0.01)
                e = 0.5 * float(params.m @ (s.x_dot ** 2)) + 0.5 * float(params.k @ (s.x ** 2))
                assert e <= prev + 1e-12
                prev = e

    def test_nonfinite_force_rejected(self):
        with pytest.raises(ValueError):
            admittance_step(AdmittanceState(), [np.nan, 0, 0], 20.0, AdmittanceParams(), 0.01)

    def test_zero_dt_rejected(self):
        with pytest.raises(ValueError):
            admittance_step(AdmittanceState(), [0, 0, 0], 20.0, AdmittanceParams(), 0.0)


class TestCompose:
    def test_cases(self):
        assert np.allclose(compose_virtual_force([1, 0, 0], [0, 0, 0]), [1, 0, 0])
        assert np.all(compose_virtual_force([2, -1, 0], [-2, 1, 0]) == 0.0)
        assert np.allclose(compose_virtual_force([1, 0, 0], [0, 2, 0]), [1, 2, 0])


# ------------------------------------------------------------------ marker KF


class TestMarkerKF:
    def test_first_measurement_initializes(self):
        est = kf_update(None, [1.0, 2.0, 3.0], 0.02)
        assert np.allclose(est.p_u, [1, 2, 3])
        assert np.all(est.v_u == 0.0) and np.all(est.a_u == 0.0)

    def test_stationary_velocity_converges(self):
        est = None
        for _ in range(200):
            est = kf_update(est, [0.7, -0.3, 1.1], 0.02)
        assert np.linalg.norm(est.v_u) < 1e-3

    def test_constant_velocity_tracked_against_reference_kf(self):
        dt = 0.02
        est = None
        oracle = None
        for i in range(101):  # 2 s of motion at 0.5 m/s on x
            z = np.array([0.5 * i * dt, 0.0, 0.0])
            est = kf_update(est, z, dt)
            if oracle is None:
                oracle = ScalarAxisKF(z[0])
            else:
                oracle.update(z[0], dt)
        assert abs(est.v_u[0] - 0.5) < 0.05
        # package filter and scalar-form reference agree to numerical noise
        assert est.p_u[0] == pytest.approx(oracle.x[0], abs=1e-9)
        assert est.v_u[0] == pytest.approx(oracle.x[1], abs=1e-9)
        assert est.a_u[0] == pytest.approx(oracle.x[2], abs=1e-9)

    def test_covariance_stays_psd_under_random_measurements(self):
        rng = np.random.default_rng(13)
        est = kf_update(None, rng.uniform(-5, 5, 3), 0.02)
        worst = 0.0
        for _ in range(10_000):
            est = kf_update(est, rng.uniform(-5, 5, 3), 0.02)
            eig_min = float(np.linalg.eigvalsh(est.covariance)[0])
            worst = min(worst, eig_min)
        assert worst >= -1e-9, f"covariance eigenvalue dipped to {worst}"

    def test_nonfinite_measurement_rejected(self):
        with pytest.raises(ValueError):
            kf_update(None, [np.inf, 0, 0], 0.02)
        est = kf_update(None, [0, 0, 0], 0.02)
        with pytest.raises(ValueError):
            kf_update(est, [np.nan, 0, 0], 0.02)
