"""Scenario files: arena geometry, drone start, config overrides, scripted inputs.

JSON, schema version 1. Scripted events carry wall-less times in seconds and
are expanded to tick-stamped session events at load; the `marker_sweep` sugar
expands to a dense stream of `input_marker` events so recorded scenarios stay
small and readable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forces import AdmittanceParams, FieldParams
from .planner import PlannerParams
from .session import InputEvent, SessionConfig
from .world import Box, DroneDynamics, DroneState, Environment, SensorConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file is missing, malformed, or fails validation."""


@dataclass
class Scenario:
    name: str
    env: Environment
    start: DroneState
    config: SessionConfig
    events: list[InputEvent]
    duration: float          # seconds the scripted run lasts
    canonical: dict          # effective dict (overrides applied), digest input

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.config.dt))

    def digest(self) -> str:
        return scenario_digest(self.canonical)


def scenario_digest(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _vec(v, name: str) -> list[float]:
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise ScenarioError(f"{name} must be a 3-element list")
    return [float(x) for x in v]


def _build_config(cfg: dict) -> SessionConfig:
    def sub(cls, key, **renames):
        args = dict(cfg.get(key) or {})
        for old, new in renames.items():
            if old in args:
                args[new] = args.pop(old)
        try:
            return cls(**args)
        except TypeError as err:
            raise ScenarioError(f"bad config.{key}: {err}") from None

    top = {k: cfg[k] for k in
           ("dt", "rng_seed", "voxel_size", "fpvi_damping", "goal_reach_dist",
            "capture_eps", "cruise_speed", "replan_interval", "rebase_threshold")
           if k in cfg}
    try:
        return SessionConfig(
            admittance=sub(AdmittanceParams, "admittance"),
            field=sub(FieldParams, "field"),
            planner=sub(PlannerParams, "planner"),
            sensor=sub(SensorConfig, "sensor"),
            dynamics=sub(DroneDynamics, "dynamics"),
            **top,
        )
    except (TypeError, ValueError) as err:
        raise ScenarioError(f"bad config: {err}") from None


def _expand_events(raw_events: list, dt: float) -> tuple[list[InputEvent], float]:
    events: list[InputEvent] = []
    t_max = 0.0

    def tick_of(t: float) -> int:
        return int(round(float(t) / dt))

    for i, ev in enumerate(raw_events):
        if not isinstance(ev, dict) or "type" not in ev:
            raise ScenarioError(f"event {i}: must be an object with a 'type'")
        etype = ev["type"]
        if etype == "marker_sweep":
            t0 = float(ev["t"])
            duration = float(ev["duration"])
            rate = float(ev.get("rate", 50.0))
            p_from = np.array(_vec(ev["from"], f"event {i} from"))
            p_to = np.array(_vec(ev["to"], f"event {i} to"))
            n = max(1, int(round(duration * rate)))
            for j in range(n + 1):
                frac = j / n
                p = p_from + (p_to - p_from) * frac
                events.append(InputEvent(tick=tick_of(t0 + duration * frac),
                                         kind="input_marker", data={"p": p.tolist()}))
            t_max = max(t_max, t0 + duration)
        elif etype in ("input_marker", "place_goal"):
            events.append(InputEvent(tick=tick_of(ev["t"]), kind=etype,
                                     data={"p": _vec(ev["p"], f"event {i} p")}))
            t_max = max(t_max, float(ev["t"]))
        elif etype == "clear_goal":
            events.append(InputEvent(tick=tick_of(ev["t"]), kind="clear_goal", data={}))
            t_max = max(t_max, float(ev["t"]))
        elif etype == "set_profile":
            events.append(InputEvent(tick=tick_of(ev["t"]), kind="set_profile",
                                     data={"profile": ev["profile"]}))
            t_max = max(t_max, float(ev["t"]))
        elif etype == "set_mode_params":
            data = {k: float(ev[k]) for k in ("fpvi_damping", "d_min", "d_max") if k in ev}
            events.append(InputEvent(tick=tick_of(ev["t"]), kind="set_mode_params", data=data))
            t_max = max(t_max, float(ev["t"]))
        elif etype == "device_cloud":
            pts = [[float(x) for x in p] for p in ev["points"]]
            events.append(InputEvent(tick=tick_of(ev["t"]), kind="device_cloud",
                                     data={"points": pts}))
            t_max = max(t_max, float(ev["t"]))
        else:
            raise ScenarioError(f"event {i}: unknown type {etype!r}")
    events.sort(key=lambda e: e.tick)
    return events, t_max


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply `--set dotted.key=value` overrides onto the scenario document."""
    doc = json.loads(json.dumps(doc))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed, e.g. profile=squared
        node = doc.setdefault("config", {})
        parts = key.split(".")
        if parts[0] == "config":
            parts = parts[1:]
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    if doc.get("version") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
    env_doc = doc.get("environment") or {}
    try:
        bounds = Box(_vec(env_doc["bounds"][0], "bounds lo"), _vec(env_doc["bounds"][1], "bounds hi"))
        obstacles = tuple(Box(_vec(b[0], "obstacle lo"), _vec(b[1], "obstacle hi"))
                          for b in env_doc.get("obstacles", []))
        env = Environment(bounds=bounds, obstacles=obstacles,
                          drone_radius=float(env_doc.get("drone_radius", 0.15)))
    except (KeyError, IndexError, TypeError) as err:
        raise ScenarioError(f"bad environment: {err}") from None
    except ValueError as err:
        raise ScenarioError(str(err)) from None

    start_doc = doc.get("start") or {}
    start = DroneState(p=_vec(start_doc.get("p", [0, 0, 0.8]), "start p"),
                       v=np.zeros(3), yaw=float(start_doc.get("yaw", 0.0)))
    config = _build_config(doc.get("config") or {})
    events, t_events = _expand_events(doc.get("events", []), config.dt)
    duration = float(doc.get("duration", max(t_events + 1.0, 1.0)))
    if duration <= 0:
        raise ScenarioError("duration must be > 0")
    return Scenario(name=str(doc.get("name", "unnamed")), env=env, start=start,
                    config=config, events=events, duration=duration, canonical=doc)


def load_scenario(path: str | Path, overrides: list[str] | None = None) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"scenario is not valid JSON: {err}") from None
    if overrides:
        doc = apply_overrides(doc, overrides)
    return scenario_from_dict(doc)


def save_scenario(doc: dict, path: str | Path) -> None:
    scenario_from_dict(doc)  # validate before writing
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
