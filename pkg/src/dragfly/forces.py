"""Virtual-physical interaction math.

Covers the marker motion estimator (linear Kalman filter, constant
acceleration model), the user spring-damper force, the per-voxel exponential
repulsive field, the angle-dependent damping profiles, and the admittance
integrator that turns the composed virtual force into a commanded-position
perturbation x = p_c - p_r around the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROFILES = ("linear", "squared", "exponential")

_EXP_SHAPE = 3.0  # shape constant of the exponential damping profile


def _vec3(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(3)


@dataclass(frozen=True)
class AdmittanceParams:
    """Virtual mass-spring-damper and user-force gains.

    M and K are per-axis diagonals (kg, kg/s^2); damping is a single scalar
    in [d_min, d_max] (kg/s) selected by the active profile from the angle
    between the virtual force and the path segment.
    """

    m: np.ndarray = field(default_factory=lambda: np.full(3, 2.4))
    k: np.ndarray = field(default_factory=lambda: np.full(3, 20.0))
    d_min: float = 1.0
    d_max: float = 70.0
    profile: str = "linear"
    k_p: float = 6.0   # user-force proportional gain (N/m)
    k_d: float = 1.5   # user-force derivative gain (N s/m)

    def __post_init__(self):
        object.__setattr__(self, "m", _vec3(self.m))
        object.__setattr__(self, "k", _vec3(self.k))
        if np.any(self.m <= 0):
            raise ValueError("mass diagonal must be > 0")
        if np.any(self.k < 0):
            raise ValueError("stiffness diagonal must be >= 0")
        if not (0 < self.d_min <= self.d_max):
            raise ValueError("need 0 < d_min <= d_max")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")


@dataclass(frozen=True)
class FieldParams:
    """Repulsive field: peak force f_s (N), decay lambda (1/m), horizon h (m)."""

    f_s: float = 8.0
    lam: float = 1.0
    h: float = 1.5

    def __post_init__(self):
        if self.f_s <= 0 or self.lam <= 0 or self.h <= 0:
            raise ValueError("f_s, lam, h must all be > 0")


@dataclass(frozen=True)
class AdmittanceState:
    """Perturbation x = p_c - p_r and its rate (m, m/s)."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "x", _vec3(self.x))
        object.__setattr__(self, "x_dot", _vec3(self.x_dot))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.x_dot))):
            raise ValueError("admittance state must be finite")


@dataclass(frozen=True)
class MarkerEstimate:
    """Filtered marker state: position, velocity, acceleration + 9x9 covariance."""

    p_u: np.ndarray
    v_u: np.ndarray
    a_u: np.ndarray
    covariance: np.ndarray  # (9, 9), state order [p, v, a]

    def __post_init__(self):
        object.__setattr__(self, "p_u", _vec3(self.p_u))
        object.__setattr__(self, "v_u", _vec3(self.v_u))
        object.__setattr__(self, "a_u", _vec3(self.a_u))
        cov = np.asarray(self.covariance, dtype=float).reshape(9, 9)
        object.__setattr__(self, "covariance", cov)


# KF noise defaults: the source material fixes none, so these are package
# defaults, overridable through kf_update arguments.
KF_SIGMA_A = 2.0    # process acceleration noise (m/s^2)
KF_SIGMA_M = 0.01   # measurement noise (m)
_KF_P0_VEL = 1.0    # initial velocity variance ((m/s)^2)
_KF_P0_ACC = 1.0    # initial acceleration variance ((m/s^2)^2)


def kf_initialize(measurement) -> MarkerEstimate:
    """First-measurement rule: position from the fix, zero velocity/acceleration."""
    z = _vec3(measurement)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    p0 = np.diag([KF_SIGMA_M**2] * 3 + [_KF_P0_VEL] * 3 + [_KF_P0_ACC] * 3)
    return MarkerEstimate(p_u=z, v_u=np.zeros(3), a_u=np.zeros(3), covariance=p0)


def kf_update(est: MarkerEstimate | None, measurement, dt: float,
              sigma_a: float = KF_SIGMA_A, sigma_m: float = KF_SIGMA_M) -> MarkerEstimate:
    """Predict-update with a constant-acceleration model, position-only measurement.

    est=None applies the initialization rule instead. Uses the Joseph-form
    covariance update so the covariance stays symmetric PSD.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    z = _vec3(measurement)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    if est is None:
        return kf_initialize(z)

    i3 = np.eye(3)
    f3 = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    g3 = np.array([0.5 * dt * dt, dt, 1.0])
    F = np.kron(f3, i3)
    Q = np.kron(np.outer(g3, g3), i3) * sigma_a**2
    H = np.hstack((i3, np.zeros((3, 6))))
    R = i3 * sigma_m**2

    x = np.concatenate((est.p_u, est.v_u, est.a_u))
    P = est.covariance

    x_pred = F @ x
    P_pred = F @ P @ F.T + Q

    y = z - H @ x_pred
    S = H @ P_pred @ H.T + R
    K = P_pred @ H.T @ np.linalg.inv(S)
    x_new = x_pred + K @ y
    IKH = np.eye(9) - K @ H
    P_new = IKH @ P_pred @ IKH.T + K @ R @ K.T
    P_new = 0.5 * (P_new + P_new.T)

    return MarkerEstimate(p_u=x_new[0:3], v_u=x_new[3:6], a_u=x_new[6:9], covariance=P_new)


def user_force(p, p_dot, est: MarkerEstimate, params: AdmittanceParams) -> np.ndarray:
    """Spring-damper pull of the vehicle toward the marker estimate (N)."""
    p = _vec3(p)
    p_dot = _vec3(p_dot)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(p_dot))):
        raise ValueError("inputs must be finite")
    return params.k_p * (est.p_u - p) + params.k_d * (est.v_u - p_dot)


def repulsive_magnitude(d: float, params: FieldParams) -> float:
    """Per-voxel force magnitude at center distance d: f_s at contact, 0 at h."""
    k = 1.0 - math.exp(params.h)
    return params.f_s / k * math.exp(-params.lam * d) * (1.0 - math.exp(params.h - d))


def repulsive_force(voxels, p, params: FieldParams) -> np.ndarray:
    """Sum of per-voxel repulsions over (center, distance) pairs within horizon.

    Each contribution points from the voxel center toward p; a voxel exactly
    at p has no defined direction and contributes nothing. Accepts a list of
    (center, d) pairs or an (centers, dists) array pair.
    """
    if isinstance(voxels, tuple) and len(voxels) == 2 and hasattr(voxels[0], "shape"):
        centers, dists = voxels
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        dists = np.asarray(dists, dtype=float).reshape(-1)
    else:
        voxels = list(voxels)
        if not voxels:
            return np.zeros(3)
        centers = np.array([np.asarray(c, float) for c, _ in voxels]).reshape(-1, 3)
        dists = np.array([float(d) for _, d in voxels])
    if centers.shape[0] == 0:
        return np.zeros(3)
    if np.any(dists > params.h + 1e-12):
        raise ValueError("all voxel distances must be <= horizon h")
    p = _vec3(p)
    offsets = p - centers
    norms = np.linalg.norm(offsets, axis=1)
    ok = norms > 1e-12
    if not np.any(ok):
        return np.zeros(3)
    k = 1.0 - math.exp(params.h)
    mags = params.f_s / k * np.exp(-params.lam * dists[ok]) * (1.0 - np.exp(params.h - dists[ok]))
    return (offsets[ok] / norms[ok, None] * mags[:, None]).sum(axis=0)


def angle_to_segment(f_v, l_i) -> float:
    """Angle in [0, pi] between the virtual force and the segment direction.

    Zero-magnitude force has no direction; the caller holds the previous
    damping in that case (signalled here by ValueError).
    """
    f_v = _vec3(f_v)
    norm_f = float(np.linalg.norm(f_v))
    if norm_f <= 0.0:
        raise ValueError("angle undefined for zero-magnitude force")
    l_i = _vec3(l_i)
    norm_l = float(np.linalg.norm(l_i))
    if norm_l <= 0.0:
        raise ValueError("segment direction must be non-zero")
    c = float(l_i @ f_v) / (norm_l * norm_f)
    return math.acos(min(1.0, max(-1.0, c)))


def variable_damping(theta: float, params: AdmittanceParams) -> float:
    """Damping in [d_min, d_max]: d_min along the segment, d_max opposing it.

    All profiles are continuous and monotone non-decreasing over [0, pi].
    """
    u = theta / math.pi
    dd = params.d_max - params.d_min
    if params.profile == "linear":
        return params.d_min + dd * u
    if params.profile == "squared":
        return params.d_min + dd * u * u
    return params.d_min + dd * (math.exp(_EXP_SHAPE * u) - 1.0) / (math.exp(_EXP_SHAPE) - 1.0)


def admittance_step(state: AdmittanceState, f_v, d: float,
                    params: AdmittanceParams, dt: float) -> AdmittanceState:
    """One semi-implicit Euler step of m x'' + d x' + k x = f_v, per axis."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    f_v = _vec3(f_v)
    if not np.all(np.isfinite(f_v)):
        raise ValueError("force must be finite")
    x_dot = state.x_dot + dt * (f_v - d * state.x_dot - params.k * state.x) / params.m
    x = state.x + dt * x_dot
    return AdmittanceState(x=x, x_dot=x_dot)


def compose_virtual_force(f_usr, f_rep) -> np.ndarray:
    """Total virtual force driving the admittance: user pull plus repulsion."""
    return _vec3(f_usr) + _vec3(f_rep)
