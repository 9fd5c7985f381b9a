"""Ground-truth world: box obstacles, simulated depth sensing, drone tracking dynamics.

All quantities are SI (meters, seconds, radians) and expressed in the fixed
world frame W. The drone is modeled as a double integrator with a PD position
tracker: good enough to expose tracking lag without modeling attitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    return v


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, corners lo <= hi componentwise (m)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec3(self.lo))
        object.__setattr__(self, "hi", _vec3(self.hi))
        if not np.all(self.lo <= self.hi):
            raise ValueError(f"box lo must be <= hi, got lo={self.lo}, hi={self.hi}")

    def contains(self, p, margin: float = 0.0) -> bool:
        p = _vec3(p)
        return bool(np.all(p >= self.lo - margin) and np.all(p <= self.hi + margin))

    def surface_distance(self, p) -> float:
        """Unsigned distance from p to the box surface (0 on the surface)."""
        p = _vec3(p)
        d_out = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        outside = float(np.linalg.norm(d_out))
        if outside > 0.0:
            return outside
        # inside: distance to the closest face
        return float(np.min(np.minimum(p - self.lo, self.hi - p)))


@dataclass(frozen=True)
class Environment:
    """Flying arena: bounds box, obstacle boxes, and the vehicle radius (m)."""

    bounds: Box
    obstacles: tuple[Box, ...] = ()
    drone_radius: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.drone_radius <= 0:
            raise ValueError("drone_radius must be > 0")
        for i, ob in enumerate(self.obstacles):
            if not (np.all(ob.lo >= self.bounds.lo) and np.all(ob.hi <= self.bounds.hi)):
                raise ValueError(f"obstacle {i} lies outside bounds")


@dataclass(frozen=True)
class DroneState:
    """Vehicle position p (m), velocity v (m/s), and yaw (rad) in W."""

    p: np.ndarray
    v: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", _vec3(self.p))
        object.__setattr__(self, "v", _vec3(self.v))
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.v)) and math.isfinite(self.yaw)):
            raise ValueError("drone state must be finite")


@dataclass(frozen=True)
class SensorConfig:
    """Forward depth sensor: horizontal/vertical FOV (rad), range (m), ray grid."""

    fov_h: float = 1.5
    fov_v: float = 0.6
    max_range: float = 5.0
    rays_h: int = 25
    rays_v: int = 5

    def __post_init__(self):
        if not (0 < self.fov_h <= math.pi and 0 < self.fov_v <= math.pi):
            raise ValueError("fov must be in (0, pi]")
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        if self.rays_h < 1 or self.rays_v < 1:
            raise ValueError("ray counts must be >= 1")


@dataclass(frozen=True)
class DroneDynamics:
    """PD tracking gains and kinematic limits for the double-integrator model."""

    kp: float = 6.0        # 1/s^2
    kd: float = 4.8        # 1/s, ~critical for kp=6
    a_max: float = 8.0     # m/s^2
    v_max: float = 2.0     # m/s
    yaw_hold_speed: float = 0.05  # below this speed yaw is held (m/s)


def _ray_directions(yaw: float, cfg: SensorConfig) -> np.ndarray:
    """Unit ray directions for the sensor grid, world frame, shape (R, 3)."""
    if cfg.rays_h == 1:
        az = np.array([0.0])
    else:
        az = np.linspace(-cfg.fov_h / 2, cfg.fov_h / 2, cfg.rays_h)
    if cfg.rays_v == 1:
        el = np.array([0.0])
    else:
        el = np.linspace(-cfg.fov_v / 2, cfg.fov_v / 2, cfg.rays_v)
    az_g, el_g = np.meshgrid(az + yaw, el, indexing="ij")
    az_g = az_g.ravel()
    el_g = el_g.ravel()
    ce = np.cos(el_g)
    return np.column_stack((ce * np.cos(az_g), ce * np.sin(az_g), np.sin(el_g)))


def simulate_depth_scan(env: Environment, pose: DroneState, cfg: SensorConfig) -> np.ndarray:
    """Cast the sensor ray grid against the obstacle boxes.

    Returns the exact nearest surface hit per ray within max_range as an
    (N, 3) array in W (N <= rays_h * rays_v). Deterministic for fixed inputs.
    """
    if not env.bounds.contains(pose.p):
        raise ValueError("pose must lie inside environment bounds")
    dirs = _ray_directions(pose.yaw, cfg)
    origin = pose.p
    parallel = np.abs(dirs) <= 1e-12
    t_best = np.full(dirs.shape[0], np.inf)
    # slab method, vectorized over rays, looped over boxes
    for box in env.obstacles:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (box.lo - origin) / dirs
            t2 = (box.hi - origin) / dirs
        lo_t = np.minimum(t1, t2)
        hi_t = np.maximum(t1, t2)
        # rays parallel to a slab never cross it: interval is all of R if the
        # origin lies between the slab planes, empty otherwise
        inside = (origin >= box.lo) & (origin <= box.hi)
        lo_t = np.where(parallel, np.where(inside, -np.inf, np.inf), lo_t)
        hi_t = np.where(parallel, np.where(inside, np.inf, -np.inf), hi_t)
        t_in = np.max(lo_t, axis=1)
        t_out = np.min(hi_t, axis=1)
        hit = (t_out >= t_in) & (t_in > 1e-9)
        t_best = np.where(hit & (t_in < t_best), t_in, t_best)
    valid = t_best <= cfg.max_range
    if not np.any(valid):
        return np.empty((0, 3))
    return origin[None, :] + t_best[valid, None] * dirs[valid]


def step_drone(state: DroneState, p_c, dt: float, dyn: DroneDynamics = DroneDynamics()) -> DroneState:
    """One semi-implicit Euler step of the PD position tracker toward p_c.

    Acceleration and speed are clamped to dyn.a_max / dyn.v_max; yaw follows
    the velocity direction and is held below dyn.yaw_hold_speed.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    p_c = _vec3(p_c)
    if not np.all(np.isfinite(p_c)):
        raise ValueError("commanded position must be finite")
    a = dyn.kp * (p_c - state.p) - dyn.kd * state.v
    a_norm = float(np.linalg.norm(a))
    if a_norm > dyn.a_max:
        a = a * (dyn.a_max / a_norm)
    v = state.v + a * dt
    v_norm = float(np.linalg.norm(v))
    if v_norm > dyn.v_max:
        v = v * (dyn.v_max / v_norm)
        v_norm = dyn.v_max
    p = state.p + v * dt
    yaw = state.yaw
    if v_norm >= dyn.yaw_hold_speed:
        yaw = math.atan2(v[1], v[0])
    return DroneState(p=p, v=v, yaw=yaw)
