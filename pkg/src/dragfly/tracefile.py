"""Binary trace files: versioned header, length-prefixed event records, digests.

Layout:
    magic line  b"DRAGFLY-TRACE v1\\n"
    header      u32 length + JSON {scenario_digest, rng_seed, dt, n_events, n_ticks}
    events      n_events * (u32 length + JSON {tick, kind, data})
    digests     n_ticks * 20 raw bytes (sha1 chain, one per tick)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .session import InputEvent, Trace

MAGIC = b"DRAGFLY-TRACE v1\n"
DIGEST_LEN = 20


class TraceFormatError(ValueError):
    """Trace file is truncated, corrupt, or has the wrong version."""


def save_trace(trace: Trace, path: str | Path) -> None:
    header = {
        "scenario_digest": trace.scenario_digest,
        "rng_seed": trace.rng_seed,
        "dt": trace.dt,
        "n_events": len(trace.events),
        "n_ticks": len(trace.digests),
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_record(f, json.dumps(header, sort_keys=True).encode())
        for ev in trace.events:
            _write_record(f, json.dumps(
                {"tick": ev.tick, "kind": ev.kind, "data": ev.data},
                sort_keys=True).encode())
        for d in trace.digests:
            if len(d) != DIGEST_LEN:
                raise ValueError("digest must be 20 bytes")
            f.write(d)


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"trace file not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise TraceFormatError("bad magic: not a trace file or unsupported version")
    off = len(MAGIC)
    header_raw, off = _read_record(blob, off)
    try:
        header = json.loads(header_raw)
        n_events = int(header["n_events"])
        n_ticks = int(header["n_ticks"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise TraceFormatError(f"corrupt header: {err}") from None
    events = []
    for _ in range(n_events):
        rec, off = _read_record(blob, off)
        try:
            d = json.loads(rec)
            events.append(InputEvent(tick=int(d["tick"]), kind=d["kind"], data=d["data"]))
        except (json.JSONDecodeError, KeyError, ValueError) as err:
            raise TraceFormatError(f"corrupt event record: {err}") from None
    need = n_ticks * DIGEST_LEN
    if len(blob) - off != need:
        raise TraceFormatError(
            f"digest section is {len(blob) - off} bytes, expected {need}")
    digests = [blob[off + i * DIGEST_LEN: off + (i + 1) * DIGEST_LEN] for i in range(n_ticks)]
    return Trace(scenario_digest=str(header.get("scenario_digest", "")),
                 rng_seed=int(header["rng_seed"]), dt=float(header["dt"]),
                 events=events, digests=digests)


def _write_record(f, payload: bytes) -> None:
    f.write(struct.pack(">I", len(payload)))
    f.write(payload)


def _read_record(blob: bytes, off: int) -> tuple[bytes, int]:
    if off + 4 > len(blob):
        raise TraceFormatError("truncated record length")
    (n,) = struct.unpack_from(">I", blob, off)
    off += 4
    if off + n > len(blob):
        raise TraceFormatError("truncated record payload")
    return blob[off:off + n], off + n
