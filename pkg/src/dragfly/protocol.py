"""Newline-delimited JSON wire protocol between the gateway and its clients.

Every message is one JSON object per line with a `type` tag; `hello` also
carries the protocol version. Unknown types or malformed payloads are
answered with an `error` message, never by dropping the connection.
"""

from __future__ import annotations

import json
import math

PROTOCOL_VERSION = 1

MESSAGE_TYPES = ("hello", "snapshot", "voxel_delta", "input_marker", "place_goal",
                 "clear_goal", "set_profile", "set_mode_params", "pause", "resume",
                 "error", "metrics")

INPUT_TYPES = ("input_marker", "place_goal", "clear_goal", "set_profile",
               "set_mode_params", "pause", "resume")

_PROFILES = ("linear", "squared", "exponential")
_ROLES = ("controller", "observer")


class ProtocolError(ValueError):
    """Message violates the wire schema."""


def _is_vec3(v) -> bool:
    return (isinstance(v, (list, tuple)) and len(v) == 3
            and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                    and math.isfinite(x) for x in v))


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(msg: dict) -> dict:
    """Check one decoded message against its type schema; returns the message."""
    if not isinstance(msg, dict):
        raise ProtocolError("message must be an object")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    if mtype == "hello":
        if not isinstance(msg.get("v"), int):
            raise ProtocolError("hello requires integer protocol version 'v'")
        if "role" in msg and msg["role"] not in _ROLES:
            raise ProtocolError(f"unknown role {msg['role']!r}")
    elif mtype in ("input_marker", "place_goal"):
        if not _is_vec3(msg.get("p")):
            raise ProtocolError(f"{mtype} requires a finite 3-vector 'p'")
    elif mtype == "set_profile":
        if msg.get("profile") not in _PROFILES:
            raise ProtocolError(f"profile must be one of {_PROFILES}")
    elif mtype == "set_mode_params":
        for k in ("fpvi_damping", "d_min", "d_max"):
            if k in msg and not _is_num(msg[k]):
                raise ProtocolError(f"{k} must be a finite number")
    elif mtype == "error":
        if not isinstance(msg.get("reason"), str):
            raise ProtocolError("error requires string 'reason'")
    elif mtype == "voxel_delta":
        vox = msg.get("voxels")
        if not isinstance(vox, list):
            raise ProtocolError("voxel_delta requires list 'voxels'")
    # snapshot/metrics are server-emitted aggregates; their payloads are
    # trusted as produced and checked structurally on the client side
    return msg


def encode(msg: dict) -> bytes:
    """One message to one newline-terminated JSON line."""
    validate(msg)
    return (json.dumps(msg, separators=(",", ":"), sort_keys=True) + "\n").encode()


def decode(line: bytes | str) -> dict:
    """Parse and validate one line; raises ProtocolError on malformed input."""
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    line = line.strip()
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as err:
        raise ProtocolError(f"not valid JSON: {err}") from None
    return validate(msg)


def error_msg(reason: str, detail: str = "") -> dict:
    out = {"type": "error", "reason": reason}
    if detail:
        out["detail"] = detail
    return out


def snapshot_msg(snap) -> dict:
    """Wire form of a session Snapshot (vectors as lists, absent parts null)."""
    return {
        "type": "snapshot",
        "tick": snap.tick,
        "t": snap.t,
        "p": list(snap.p),
        "v": list(snap.v),
        "yaw": snap.yaw,
        "mode": snap.mode,
        "goal": None if snap.goal is None else list(snap.goal),
        "profile": snap.profile,
        "marker": None if snap.marker is None else {
            "p": list(snap.marker.p_u), "v": list(snap.marker.v_u),
            "a": list(snap.marker.a_u)},
        "path": None if snap.path_setpoints is None else
                [list(pt) for pt in snap.path_setpoints],
        "active_segment": snap.active_segment,
        "p_r": list(snap.p_r),
        "p_c": list(snap.p_c),
        "f_usr": list(snap.f_usr),
        "f_rep": list(snap.f_rep),
        "f_v": list(snap.f_v),
        "damping": snap.damping,
        "theta": snap.theta,
        "rmse": snap.rmse,
        "min_clearance": None if math.isinf(snap.min_clearance_c) else snap.min_clearance_c,
        "goal_reach_time": snap.goal_reach_time,
        "digest": snap.digest,
    }


def voxel_delta_msg(delta, voxel_size: float) -> dict:
    """Incremental occupancy update: (index, sources) per changed voxel."""
    names = []
    for ix, iy, iz, mask in delta:
        srcs = [n for n, b in (("robot", 1), ("device", 2)) if mask & b]
        names.append([ix, iy, iz, srcs])
    return {"type": "voxel_delta", "voxels": names, "voxel_size": voxel_size}


def metrics_msg(m) -> dict:
    return {
        "type": "metrics",
        "ticks": m.ticks,
        "duration": m.duration,
        "rmse": m.rmse,
        "min_clearance_c": None if math.isinf(m.min_clearance_c) else m.min_clearance_c,
        "min_clearance_r": None if math.isinf(m.min_clearance_r) else m.min_clearance_r,
        "goal_reach_time": m.goal_reach_time,
        "completed": m.completed,
    }
