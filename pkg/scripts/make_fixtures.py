#!/usr/bin/env python3
"""Generate the bundled scenario files and record their reference traces.

Run from the repository root:  python3 scripts/make_fixtures.py
Rewrites scenarios/*.json and traces/*.trace deterministically.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from dragfly.gateway import run_scripted  # noqa: E402
from dragfly.scenario import load_scenario, save_scenario  # noqa: E402
from dragfly.tracefile import save_trace  # noqa: E402


def gap_crossing() -> dict:
    """A 0.70 m gap in a wall; the user pulls the drone through it while the
    planner would rather go around (its clearance cannot thread the gap)."""
    return {
        "version": 1,
        "name": "gap-crossing",
        "duration": 24.0,
        "environment": {
            "bounds": [[-1.0, -4.0, 0.0], [8.0, 4.0, 3.0]],
            "obstacles": [
                [[3.0, -4.0, 0.0], [3.2, -0.35, 2.0]],   # wall below the gap
                [[3.0, 0.35, 0.0], [3.2, 2.0, 2.0]],     # wall above the gap
            ],
            "drone_radius": 0.15,
        },
        "start": {"p": [0.5, 0.0, 0.8], "yaw": 0.0},
        "config": {
            "rng_seed": 11,
            "admittance": {"k_p": 12.0},
            "planner": {"max_iterations": 2500},
            "sensor": {"rays_h": 21, "rays_v": 5},
        },
        "events": [
            {"type": "input_marker", "t": 0.2, "p": [0.5, 0.0, 0.8]},
            {"type": "place_goal", "t": 0.5, "p": [5.5, 0.0, 0.8]},
            {"type": "marker_sweep", "t": 1.0, "duration": 5.0, "rate": 50,
             "from": [0.5, 0.0, 0.8], "to": [2.6, 0.0, 0.8]},
            {"type": "marker_sweep", "t": 6.0, "duration": 9.0, "rate": 50,
             "from": [2.6, 0.0, 0.8], "to": [5.4, 0.0, 0.8]},
            {"type": "clear_goal", "t": 17.0},
        ],
    }


def wall_push() -> dict:
    """FPVI: the marker is dragged into a wall; the repulsive field must keep
    the commanded trajectory at a safe standoff while the desired one sinks in."""
    return {
        "version": 1,
        "name": "wall-push",
        "duration": 20.0,
        "environment": {
            "bounds": [[-1.0, -4.0, 0.0], [7.0, 4.0, 3.0]],
            "obstacles": [[[3.0, -2.5, 0.0], [3.2, 2.5, 2.0]]],
            "drone_radius": 0.15,
        },
        "start": {"p": [0.5, 0.0, 0.8], "yaw": 0.0},
        "config": {
            "rng_seed": 5,
            "sensor": {"rays_h": 21, "rays_v": 5},
        },
        "events": [
            {"type": "input_marker", "t": 0.2, "p": [0.5, 0.0, 0.8]},
            {"type": "marker_sweep", "t": 0.5, "duration": 12.0, "rate": 50,
             "from": [0.5, 0.0, 0.8], "to": [3.4, 0.0, 0.8]},
        ],
    }


def unforced_apvi() -> dict:
    """A goal 4 m away over empty ground, no user input at all."""
    return {
        "version": 1,
        "name": "unforced-apvi",
        "duration": 14.0,
        "environment": {
            "bounds": [[-2.0, -4.0, 0.0], [7.0, 4.0, 3.0]],
            "obstacles": [],
            "drone_radius": 0.15,
        },
        "start": {"p": [0.5, 0.0, 0.8], "yaw": 0.0},
        "config": {"rng_seed": 2, "planner": {"max_iterations": 2500}},
        "events": [
            {"type": "place_goal", "t": 0.5, "p": [4.5, 0.0, 0.8]},
        ],
    }


def determinism_minute() -> dict:
    """A busy 60 s run touching every subsystem, for end-to-end digest checks."""
    return {
        "version": 1,
        "name": "determinism-minute",
        "duration": 60.0,
        "environment": {
            "bounds": [[-5.0, -5.0, 0.0], [6.0, 5.0, 3.0]],
            "obstacles": [
                [[1.6, -0.5, 0.0], [2.0, 0.5, 1.8]],
                [[0.0, 1.8, 0.0], [0.4, 2.6, 1.8]],
                [[-1.8, -2.4, 0.0], [-1.2, -1.8, 1.8]],
            ],
            "drone_radius": 0.15,
        },
        "start": {"p": [-0.5, 0.0, 0.8], "yaw": 0.0},
        "config": {
            "rng_seed": 17,
            "planner": {"max_iterations": 2000},
            "sensor": {"rays_h": 13, "rays_v": 3},
        },
        "events": [
            {"type": "input_marker", "t": 0.3, "p": [-0.5, 0.0, 0.8]},
            {"type": "marker_sweep", "t": 0.5, "duration": 8.0, "rate": 40,
             "from": [-0.5, 0.0, 0.8], "to": [1.0, -1.5, 0.8]},
            {"type": "set_profile", "t": 9.0, "profile": "squared"},
            {"type": "place_goal", "t": 10.0, "p": [3.5, 1.5, 0.8]},
            {"type": "marker_sweep", "t": 11.0, "duration": 10.0, "rate": 40,
             "from": [1.0, -1.5, 0.8], "to": [3.0, 1.0, 0.8]},
            {"type": "set_profile", "t": 22.0, "profile": "exponential"},
            {"type": "device_cloud", "t": 25.0,
             "points": [[x, 3.5, z]
                        for x in np.arange(-2.0, 2.0, 0.2)
                        for z in np.arange(0.1, 1.2, 0.2)]},
            {"type": "clear_goal", "t": 30.0},
            {"type": "marker_sweep", "t": 31.0, "duration": 12.0, "rate": 40,
             "from": [3.0, 1.0, 0.8], "to": [-1.0, -1.0, 0.8]},
            {"type": "set_mode_params", "t": 44.0, "fpvi_damping": 30.0},
            {"type": "place_goal", "t": 46.0, "p": [-3.5, 2.0, 0.8]},
            {"type": "marker_sweep", "t": 47.0, "duration": 10.0, "rate": 40,
             "from": [-1.0, -1.0, 0.8], "to": [-3.0, 1.6, 0.8]},
        ],
    }


def build(doc: dict, with_trace: bool) -> None:
    name = doc["name"].replace("-", "_")
    scenario_path = ROOT / "scenarios" / f"{name}.json"
    doc = json.loads(json.dumps(doc, default=float))
    save_scenario(doc, scenario_path)
    scenario = load_scenario(scenario_path)
    session, trace = run_scripted(scenario)
    m = session.metrics()
    print(f"{doc['name']}: ticks={m.ticks} rmse={m.rmse:.4f} "
          f"clear_c={m.min_clearance_c:.3f} clear_r={m.min_clearance_r:.3f} "
          f"reach={m.goal_reach_time} completed={m.completed} "
          f"final_p={np.round(session.drone.p, 3).tolist()} voxels={len(session.vmap)}")
    if with_trace:
        trace_path = ROOT / "traces" / f"{name}.trace"
        save_trace(trace, trace_path)
        print(f"  trace -> {trace_path.relative_to(ROOT)} "
              f"({trace_path.stat().st_size} bytes, {len(trace.events)} events)")


if __name__ == "__main__":
    build(gap_crossing(), with_trace=True)
    build(wall_push(), with_trace=True)
    build(unforced_apvi(), with_trace=False)
    build(determinism_minute(), with_trace=False)
