"""Fixed-rate shared-control loop tying all the pieces together.

Each tick runs, in order: depth scan, map integration, marker filter update,
mode-dependent reference computation, force composition, damping selection,
admittance integration, command synthesis p_c = p_r + x, and the drone
tracking step. The whole session is a pure function of (config, input
events): two runs with identical inputs produce bit-identical per-tick
digests, which is what record/replay verifies.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import forces as fx
from . import planner as pl
from .voxelmap import PointCloudSample, VoxelMap
from .world import DroneDynamics, DroneState, Environment, SensorConfig, simulate_depth_scan, step_drone

EVENT_KINDS = ("input_marker", "place_goal", "clear_goal", "set_profile",
               "set_mode_params", "device_cloud")


@dataclass(frozen=True)
class Mode:
    """FPVI (free interaction) or APVI (goal present, planner assisting)."""

    kind: str = "FPVI"
    goal: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("FPVI", "APVI"):
            raise ValueError(f"unknown mode {self.kind!r}")
        if (self.kind == "APVI") != (self.goal is not None):
            raise ValueError("APVI if and only if a goal is present")
        if self.goal is not None:
            object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(3))


@dataclass(frozen=True)
class SessionConfig:
    dt: float = 0.01
    rng_seed: int = 0
    admittance: fx.AdmittanceParams = dc_field(default_factory=fx.AdmittanceParams)
    field: fx.FieldParams = dc_field(default_factory=fx.FieldParams)
    planner: pl.PlannerParams = dc_field(default_factory=pl.PlannerParams)
    sensor: SensorConfig = dc_field(default_factory=SensorConfig)
    dynamics: DroneDynamics = dc_field(default_factory=DroneDynamics)
    voxel_size: float = 0.2
    fpvi_damping: float = 20.0        # fixed D while no planner runs (kg/s)
    goal_reach_dist: float = 0.2      # m
    capture_eps: float = 0.15         # setpoint capture radius (m)
    cruise_speed: float = 0.8         # autonomous reference advance, marker absent (m/s)
    replan_interval: float = 0.5      # min time between plans (s)
    rebase_threshold: float = 0.1     # reference jumps beyond this re-base x (m)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class InputEvent:
    tick: int
    kind: str
    data: dict

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass
class Snapshot:
    """Full per-tick world state; a client can render from one of these plus
    the voxel deltas accumulated so far."""

    tick: int
    t: float
    p: np.ndarray
    v: np.ndarray
    yaw: float
    mode: str
    goal: np.ndarray | None
    profile: str
    marker: fx.MarkerEstimate | None
    path_setpoints: np.ndarray | None
    active_segment: int
    p_r: np.ndarray
    p_c: np.ndarray
    f_usr: np.ndarray
    f_rep: np.ndarray
    f_v: np.ndarray
    damping: float
    theta: float | None
    voxel_delta: list[tuple[int, int, int, int]]
    rmse: float
    min_clearance_c: float
    min_clearance_r: float
    goal_reach_time: float | None
    rejections: list[tuple[str, str]] = dc_field(default_factory=list)
    digest: str = ""


@dataclass
class SessionMetrics:
    ticks: int
    duration: float
    rmse: float
    min_clearance_c: float
    min_clearance_r: float
    goal_reach_time: float | None
    completed: bool


def rmse(a, b) -> float:
    """Root mean squared pointwise Euclidean distance between two trajectories."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if a.shape != b.shape or a.shape[0] < 1:
        raise ValueError(f"trajectories must have equal length >= 1, got {a.shape[0]} and {b.shape[0]}")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


class GoalRejected(ValueError):
    """Raised when a goal placement fails validation."""


class Session:
    """Owns all mutable simulation state; one instance per run, single writer."""

    def __init__(self, env: Environment, config: SessionConfig,
                 start: DroneState | None = None, record: bool = False):
        self.env = env
        self.config = config
        self.drone = start if start is not None else DroneState(
            p=np.zeros(3), v=np.zeros(3), yaw=0.0)
        if not env.bounds.contains(self.drone.p):
            raise ValueError("drone start must lie inside bounds")
        self.vmap = VoxelMap(config.voxel_size)
        self.mode = Mode()
        self.admit = fx.AdmittanceState()
        self.admit_params = config.admittance
        self.est: fx.MarkerEstimate | None = None
        self.path: pl.PlannerPath | None = None
        self.p_r = self.drone.p.copy()
        self.fpvi_damping = config.fpvi_damping
        self.damping = config.admittance.d_max  # stiffest hold before any force
        self.tick = 0

        self._last_meas_tick: int | None = None
        self._plan_count = 0
        self._last_plan_tick: int | None = None
        self._force_plan = False
        self._replan_flag = False
        self._map_version_checked = 0

        self.log_r: list[np.ndarray] = []
        self.log_c: list[np.ndarray] = []
        self.log_p: list[np.ndarray] = []
        self.log_f: list[tuple[float, float, float, float]] = []  # |F_usr|,|F_rep|,|F_v|,D
        self._sq_err_sum = 0.0
        self.min_clearance_c = math.inf
        self.min_clearance_r = math.inf
        self.goal_reach_time: float | None = None
        self.completed = False

        self.recording = record
        self.events: list[InputEvent] = []
        self.digests: list[bytes] = []
        # root the digest chain in (seed, dt) so a mismatched replay config is
        # flagged at tick 0 even before any seeded code path runs
        self._digest_prev = hashlib.sha1(
            struct.pack("<qd", config.rng_seed, config.dt)).digest()

    # ------------------------------------------------------------------ mode

    def set_mode(self, command: InputEvent | dict) -> Mode:
        """Apply a goal placement/clear command, validating goal placements."""
        kind = command.kind if isinstance(command, InputEvent) else command["kind"]
        data = command.data if isinstance(command, InputEvent) else command.get("data", {})
        if kind == "place_goal":
            goal = np.asarray(data["p"], dtype=float).reshape(3)
            if not np.all(np.isfinite(goal)):
                raise GoalRejected("goal must be finite")
            if not self.env.bounds.contains(goal):
                raise GoalRejected("goal outside bounds")
            if self.vmap.sources_of(self.vmap.index_of(goal)):
                raise GoalRejected("goal occupied")
            self.mode = Mode(kind="APVI", goal=goal)
            self.path = None
            self._force_plan = True
            self._replan_flag = False
        elif kind == "clear_goal":
            self.mode = Mode()
            self.path = None
        else:
            raise ValueError(f"not a mode command: {kind!r}")
        return self.mode

    # ------------------------------------------------------------------ step

    def step(self, events: tuple[InputEvent, ...] | list[InputEvent] = ()) -> Snapshot:
        cfg = self.config
        dt = cfg.dt
        marker_meas: list[np.ndarray] = []
        device_clouds: list[np.ndarray] = []
        rejections: list[tuple[str, str]] = []

        for ev in events:
            ev = replace(ev, tick=self.tick)
            try:
                if ev.kind in ("place_goal", "clear_goal"):
                    self.set_mode(ev)
                elif ev.kind == "input_marker":
                    marker_meas.append(np.asarray(ev.data["p"], dtype=float).reshape(3))
                elif ev.kind == "set_profile":
                    self.admit_params = replace(self.admit_params, profile=ev.data["profile"])
                elif ev.kind == "set_mode_params":
                    if "fpvi_damping" in ev.data:
                        self.fpvi_damping = float(ev.data["fpvi_damping"])
                    ch = {k: float(ev.data[k]) for k in ("d_min", "d_max") if k in ev.data}
                    if ch:
                        self.admit_params = replace(self.admit_params, **ch)
                elif ev.kind == "device_cloud":
                    device_clouds.append(np.asarray(ev.data["points"], dtype=float).reshape(-1, 3))
            except (GoalRejected, ValueError) as err:
                # invalid inputs are skipped (and never recorded), not fatal
                rejections.append((ev.kind, str(err)))
                continue
            if self.recording:
                self.events.append(ev)

        # 1. depth scan + map integration (robot source, then scripted device clouds)
        cloud = simulate_depth_scan(self.env, self.drone, cfg.sensor)
        delta: list[tuple[int, int, int, int]] = []
        if cloud.shape[0]:
            _, d = self.vmap.integrate_with_delta(
                PointCloudSample(points=cloud, source="robot", stamp=self.tick * dt))
            delta.extend(d)
        for pts in device_clouds:
            _, d = self.vmap.integrate_with_delta(
                PointCloudSample(points=pts, source="device", stamp=self.tick * dt))
            delta.extend(d)

        # 2. marker filter
        for z in marker_meas:
            gap = 1 if self._last_meas_tick is None else max(1, self.tick - self._last_meas_tick)
            self.est = fx.kf_update(self.est, z, gap * dt)
            self._last_meas_tick = self.tick

        # 3. reference
        p_r_target = self._reference_target()
        jump = float(np.linalg.norm(p_r_target - self.p_r))
        if jump > cfg.rebase_threshold:
            # reference source moved discontinuously (replan, mode switch):
            # re-express x so the commanded position stays continuous
            self.admit = fx.AdmittanceState(x=self.admit.x + (self.p_r - p_r_target),
                                            x_dot=self.admit.x_dot)
        self.p_r = p_r_target

        # 4. forces
        if self.est is not None:
            f_usr = fx.user_force(self.drone.p, self.drone.v, self.est, self.admit_params)
        else:
            f_usr = np.zeros(3)
        horizon = self.vmap.horizon_arrays(self.drone.p, cfg.field.h)
        f_rep = fx.repulsive_force(horizon, self.drone.p, cfg.field)
        f_v = fx.compose_virtual_force(f_usr, f_rep)

        # 5. damping
        theta: float | None = None
        if self.mode.kind == "APVI":
            if (self.path is not None and self.path.active_segment >= 1
                    and float(np.linalg.norm(f_v)) > 0.0):
                theta = fx.angle_to_segment(f_v, self.path.segment_direction())
                self.damping = fx.variable_damping(theta, self.admit_params)
            # else: hold the previous damping (zero force or no path)
            damping = self.damping
        else:
            damping = self.fpvi_damping

        # 6. admittance + command
        self.admit = fx.admittance_step(self.admit, f_v, damping, self.admit_params, dt)
        p_c = self.p_r + self.admit.x

        # 7. drone tracking step
        self.drone = step_drone(self.drone, p_c, dt, cfg.dynamics)

        # 8. metrics, goal-reach bookkeeping
        self.log_r.append(self.p_r.copy())
        self.log_c.append(p_c.copy())
        self.log_p.append(self.drone.p.copy())
        self.log_f.append((float(np.linalg.norm(f_usr)), float(np.linalg.norm(f_rep)),
                           float(np.linalg.norm(f_v)), damping))
        self._sq_err_sum += float(np.sum((self.p_r - p_c) ** 2))
        d_c = self.vmap.distance_to_nearest_occupied(p_c)
        d_r = self.vmap.distance_to_nearest_occupied(self.p_r)
        self.min_clearance_c = min(self.min_clearance_c, d_c)
        self.min_clearance_r = min(self.min_clearance_r, d_r)
        if self.mode.kind == "APVI" and \
                float(np.linalg.norm(self.drone.p - self.mode.goal)) < cfg.goal_reach_dist:
            self.goal_reach_time = (self.tick + 1) * dt
            self.completed = True
            self.mode = Mode()
            self.path = None

        snap = Snapshot(
            tick=self.tick, t=(self.tick + 1) * dt,
            p=self.drone.p.copy(), v=self.drone.v.copy(), yaw=self.drone.yaw,
            mode=self.mode.kind,
            goal=None if self.mode.goal is None else self.mode.goal.copy(),
            profile=self.admit_params.profile,
            marker=self.est,
            path_setpoints=None if self.path is None else self.path.setpoints.copy(),
            active_segment=0 if self.path is None else self.path.active_segment,
            p_r=self.p_r.copy(), p_c=p_c.copy(),
            f_usr=f_usr, f_rep=f_rep, f_v=f_v,
            damping=damping, theta=theta,
            voxel_delta=delta,
            rmse=self.rmse_so_far(),
            min_clearance_c=self.min_clearance_c,
            min_clearance_r=self.min_clearance_r,
            goal_reach_time=self.goal_reach_time,
            rejections=rejections,
        )
        digest = self._tick_digest(snap)
        self._digest_prev = digest
        self.digests.append(digest)
        snap.digest = digest.hex()
        self.tick += 1
        return snap

    # ------------------------------------------------------ reference policy

    def _reference_target(self) -> np.ndarray:
        cfg = self.config
        if self.mode.kind != "APVI":
            return self.est.p_u.copy() if self.est is not None else self.p_r
        self._maybe_plan()
        if self.path is None:
            return self.p_r  # no viable path: hold the last reference
        idx, final = pl.advance_segment(self.drone.p, self.path, cfg.capture_eps)
        self.path.active_segment = idx
        if final and float(np.linalg.norm(self.drone.p - self.mode.goal)) >= cfg.goal_reach_dist:
            self._replan_flag = True
        if self.est is not None:
            return pl.project_reference(self.est.p_u, self.path)
        # marker absent: cruise the reference along the active segment and
        # wait at its far endpoint until the drone captures it
        if self.path.active_segment == 0:
            return self.path.setpoints[0].copy()
        a = self.path.setpoints[self.path.active_segment - 1]
        b = self.path.setpoints[self.path.active_segment]
        ab = b - a
        t = float((self.p_r - a) @ ab) / float(ab @ ab)
        on_seg = a + min(1.0, max(0.0, t)) * ab
        rest = b - on_seg
        rest_len = float(np.linalg.norm(rest))
        step_len = cfg.cruise_speed * cfg.dt
        if rest_len <= step_len:
            return b.copy()
        return on_seg + rest * (step_len / rest_len)

    def _maybe_plan(self) -> None:
        cfg = self.config
        want = self.path is None or self._replan_flag
        if not want and self.vmap.version != self._map_version_checked:
            self._map_version_checked = self.vmap.version
            if self.path is not None and self.path.active_segment >= 1:
                a = self.path.setpoints[self.path.active_segment - 1]
                b = self.path.setpoints[self.path.active_segment]
                if not self.vmap.is_segment_free(a, b, cfg.planner.clearance):
                    want = True  # the segment we are on was invalidated by new voxels
        if not want:
            return
        throttled = (self._last_plan_tick is not None and
                     (self.tick - self._last_plan_tick) * cfg.dt < cfg.replan_interval)
        if throttled and not self._force_plan:
            return
        params = replace(cfg.planner, rng_seed=cfg.rng_seed + self._plan_count)
        new_path = pl.plan(self.vmap, self.drone.p, self.mode.goal, params)
        self._plan_count += 1
        self._last_plan_tick = self.tick
        self._force_plan = False
        if new_path is not None:
            self.path = new_path
            self._replan_flag = False
        # on failure keep whatever path we had (possibly None -> reference holds)

    # ----------------------------------------------------------- bookkeeping

    def rmse_so_far(self) -> float:
        n = len(self.log_r)
        return math.sqrt(self._sq_err_sum / n) if n else 0.0

    def metrics(self) -> SessionMetrics:
        return SessionMetrics(
            ticks=self.tick, duration=self.tick * self.config.dt,
            rmse=self.rmse_so_far(),
            min_clearance_c=self.min_clearance_c,
            min_clearance_r=self.min_clearance_r,
            goal_reach_time=self.goal_reach_time, completed=self.completed)

    def _tick_digest(self, s: Snapshot) -> bytes:
        h = hashlib.sha1()
        h.update(self._digest_prev)
        h.update(struct.pack("<q", s.tick))
        vals = np.concatenate([
            s.p, s.v, [s.yaw], s.p_r, s.p_c, self.admit.x, self.admit.x_dot,
            s.f_usr, s.f_rep, s.f_v, [s.damping],
            s.goal if s.goal is not None else [np.nan] * 3,
            s.marker.p_u if s.marker is not None else [np.nan] * 3,
            s.marker.v_u if s.marker is not None else [np.nan] * 3,
        ]).astype(np.float64)
        h.update(vals.tobytes())
        h.update(s.mode.encode())
        h.update(struct.pack("<q", len(self.vmap)))
        for ix, iy, iz, mask in s.voxel_delta:
            h.update(struct.pack("<3iB", ix, iy, iz, mask))
        return h.digest()


# ------------------------------------------------------------- record/replay

@dataclass
class Trace:
    """Everything needed to reproduce a run: applied inputs + per-tick digests."""

    scenario_digest: str
    rng_seed: int
    dt: float
    events: list[InputEvent]
    digests: list[bytes]


@dataclass
class ReplayReport:
    ok: bool
    divergence_tick: int | None
    metrics: SessionMetrics
    session: Session


def record(session: Session, scenario_digest: str = "") -> Trace:
    """Package a recording session's applied events and digest chain."""
    if not session.recording:
        raise ValueError("session was not created with record=True")
    return Trace(scenario_digest=scenario_digest, rng_seed=session.config.rng_seed,
                 dt=session.config.dt, events=list(session.events),
                 digests=list(session.digests))


def replay(trace: Trace, env: Environment, config: SessionConfig,
           start: DroneState | None = None) -> ReplayReport:
    """Re-run a trace and verify the digest chain tick by tick.

    Stops at the first divergent tick; a config that does not match the
    recording (seed, parameters) surfaces as an early divergence.
    """
    session = Session(env, config, start)
    by_tick: dict[int, list[InputEvent]] = {}
    for ev in trace.events:
        by_tick.setdefault(ev.tick, []).append(ev)
    for t in range(len(trace.digests)):
        session.step(by_tick.get(t, ()))
        if session.digests[t] != trace.digests[t]:
            return ReplayReport(ok=False, divergence_tick=t,
                                metrics=session.metrics(), session=session)
    return ReplayReport(ok=True, divergence_tick=None,
                        metrics=session.metrics(), session=session)


def run_events(session: Session, events: list[InputEvent], n_ticks: int) -> list[Snapshot]:
    """Drive a session for n_ticks, applying each event at its tick."""
    by_tick: dict[int, list[InputEvent]] = {}
    for ev in events:
        by_tick.setdefault(ev.tick, []).append(ev)
    return [session.step(by_tick.get(t, ())) for t in range(n_ticks)]
