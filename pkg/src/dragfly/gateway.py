"""Network gateway and headless runners around a Session.

serve() owns the tick loop: one controlling client plus any number of
observers exchange newline-delimited JSON messages over TCP (and optionally
WebSocket, same payloads, for browsers). Controller inputs are queued and
drained at the next tick; snapshots broadcast at ~30 Hz; voxel deltas as
produced. Slow clients fall back to latest-snapshot-only delivery.

run_scripted() and run_headless() drive the same Session without any
networking for recording and digest-verified replay.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from . import protocol as proto
from .scenario import Scenario
from .session import InputEvent, ReplayReport, Session, Trace, record, replay, run_events
from .tracefile import load_trace, save_trace

SNAPSHOT_HZ = 30.0
INPUT_QUEUE_SIZE = 256


def run_scripted(scenario: Scenario, extra_ticks: int = 0) -> tuple[Session, Trace]:
    """Run a scenario's scripted events headless, recording as we go."""
    session = Session(scenario.env, scenario.config, scenario.start, record=True)
    run_events(session, scenario.events, scenario.n_ticks + extra_ticks)
    return session, record(session, scenario.digest())


def run_replay(scenario: Scenario, trace: Trace) -> ReplayReport:
    return replay(trace, scenario.env, scenario.config, scenario.start)


def run_headless(scenario_path, trace_path, report_path=None,
                 overrides: list[str] | None = None, verbose: bool = True) -> int:
    """Replay a trace against a scenario; write a report when digests match.

    Exit status: 0 digest-exact, 1 divergence (tick printed), 2 file errors.
    """
    from .report import write_report
    from .scenario import ScenarioError, load_scenario
    from .tracefile import TraceFormatError

    def say(msg: str) -> None:
        if verbose:
            print(msg)

    try:
        scenario = load_scenario(scenario_path, overrides)
    except ScenarioError as err:
        say(f"error: {err}")
        return 2
    try:
        trace = load_trace(trace_path)
    except TraceFormatError as err:
        say(f"error: {err}")
        return 2
    if trace.scenario_digest and trace.scenario_digest != scenario.digest():
        say("warning: trace was recorded against a different scenario document")
    rep = run_replay(scenario, trace)
    if not rep.ok:
        say(f"replay diverged at tick {rep.divergence_tick}")
        return 1
    m = rep.metrics
    say(f"replay ok: {m.ticks} ticks, rmse={m.rmse:.4f} m, "
        f"min_clearance={m.min_clearance_c if m.min_clearance_c != float('inf') else 'inf'}"
        f", completed={m.completed}")
    if report_path is not None:
        summary = write_report(rep.session, report_path, scenario.env, scenario.name)
        say(f"report written to {report_path}: {summary}")
    return 0


class _Client:
    """One connected peer: transport + role + outbound delivery state."""

    _ids = 0

    def __init__(self, send_line):
        _Client._ids += 1
        self.id = _Client._ids
        self.role: str | None = None  # set after hello
        self._send_line = send_line
        self._q: queue.Queue[bytes] = queue.Queue(maxsize=512)
        self._latest_snapshot: bytes | None = None
        self._lock = threading.Lock()
        self._wake = threading.Event()
        self.alive = True

    def send(self, msg: dict) -> None:
        line = proto.encode(msg)
        if msg.get("type") == "snapshot":
            with self._lock:
                self._latest_snapshot = line
            self._wake.set()
            return
        try:
            self._q.put_nowait(line)
        except queue.Full:
            pass  # drop non-snapshot traffic on a hopelessly slow client
        self._wake.set()

    def writer_loop(self) -> None:
        while self.alive:
            self._wake.wait(timeout=0.25)
            self._wake.clear()
            try:
                while True:
                    line = self._q.get_nowait()
                    self._send_line(line)
            except queue.Empty:
                pass
            except Exception:
                self.alive = False
                return
            with self._lock:
                snap, self._latest_snapshot = self._latest_snapshot, None
            if snap is not None and self.alive:
                try:
                    self._send_line(snap)
                except Exception:
                    self.alive = False


class GatewayServer:
    """TCP (and optional WebSocket) front end around one live Session."""

    def __init__(self, scenario: Scenario, port: int = 0, ws_port: int | None = None,
                 record_trace: bool = False, realtime: bool = True):
        self.scenario = scenario
        self.session = Session(scenario.env, scenario.config, scenario.start,
                               record=record_trace)
        self._requested_port = port
        self.ws_port = ws_port
        self.realtime = realtime
        self.port: int | None = None
        self._inputs: queue.Queue[tuple[_Client, dict]] = queue.Queue(maxsize=INPUT_QUEUE_SIZE)
        self._clients: list[_Client] = []
        self._controller: _Client | None = None
        self._clients_lock = threading.Lock()
        self._paused = False
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._srv_sock: socket.socket | None = None
        self._ws_server = None
        self._snap_every = max(1, round(1.0 / (SNAPSHOT_HZ * scenario.config.dt)))

    # ------------------------------------------------------------- lifecycle

    def start(self) -> None:
        self._srv_sock = socket.create_server(("127.0.0.1", self._requested_port))
        self.port = self._srv_sock.getsockname()[1]
        self._spawn(self._accept_loop, name="accept")
        if self.ws_port is not None:
            self._start_ws()
        self._spawn(self._tick_loop, name="ticks")

    def stop(self) -> Trace | None:
        self._stop.set()
        if self._srv_sock is not None:
            try:
                self._srv_sock.close()
            except OSError:
                pass
        if self._ws_server is not None:
            self._ws_server.shutdown()
        with self._clients_lock:
            for c in self._clients:
                c.alive = False
        for t in self._threads:
            t.join(timeout=2.0)
        if self.session.recording:
            return record(self.session, self.scenario.digest())
        return None

    def wait(self) -> None:
        while not self._stop.is_set():
            time.sleep(0.2)

    def _spawn(self, fn, name: str) -> None:
        t = threading.Thread(target=fn, name=f"gateway-{name}", daemon=True)
        t.start()
        self._threads.append(t)

    # ------------------------------------------------------------- tick loop

    def _tick_loop(self) -> None:
        dt = self.scenario.config.dt
        scripted: dict[int, list[InputEvent]] = {}
        for ev in self.scenario.events:
            scripted.setdefault(ev.tick, []).append(ev)
        next_t = time.monotonic()
        while not self._stop.is_set():
            if self.realtime:
                next_t += dt
                delay = next_t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                elif delay < -0.25:
                    next_t = time.monotonic()  # a long tick (replan): drop lost time
            if self._paused:
                next_t = time.monotonic()
                time.sleep(0.02)
                continue
            events = list(scripted.get(self.session.tick, []))
            sources: list[_Client | None] = [None] * len(events)
            while True:
                try:
                    client, msg = self._inputs.get_nowait()
                except queue.Empty:
                    break
                events.append(InputEvent(tick=self.session.tick,
                                         kind=msg["type"],
                                         data={k: v for k, v in msg.items() if k != "type"}))
                sources.append(client)
            snap = self.session.step(events)
            for (kind, reason) in snap.rejections:
                src = next((c for c, e in zip(sources, events) if c is not None
                            and e.kind == kind), None)
                if src is not None:
                    src.send(proto.error_msg(reason, detail=kind))
            if snap.voxel_delta:
                self._broadcast(proto.voxel_delta_msg(snap.voxel_delta,
                                                      self.session.vmap.voxel_size))
            if snap.tick % self._snap_every == 0:
                self._broadcast(proto.snapshot_msg(snap))
            if snap.goal_reach_time == snap.t:  # goal reached on this very tick
                self._broadcast(proto.metrics_msg(self.session.metrics()))

    def _broadcast(self, msg: dict) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            if c.alive and c.role is not None:
                c.send(msg)

    # ---------------------------------------------------------------- clients

    def _accept_loop(self) -> None:
        assert self._srv_sock is not None
        while not self._stop.is_set():
            try:
                conn, _ = self._srv_sock.accept()
            except OSError:
                return
            conn.settimeout(None)
            self._spawn(lambda c=conn: self._tcp_client(c), name="client")

    def _tcp_client(self, conn: socket.socket) -> None:
        wfile = conn.makefile("wb")

        def send_line(line: bytes) -> None:
            wfile.write(line)
            wfile.flush()

        client = _Client(send_line)
        self._register(client)
        self._spawn(client.writer_loop, name=f"writer-{client.id}")
        try:
            rfile = conn.makefile("rb")
            for raw in rfile:
                if self._stop.is_set() or not client.alive:
                    break
                self._handle_line(client, raw)
        except OSError:
            pass
        finally:
            self._unregister(client)
            try:
                conn.close()
            except OSError:
                pass

    def _start_ws(self) -> None:
        try:
            from websockets.sync.server import serve as ws_serve
        except ImportError as err:
            raise RuntimeError("WebSocket bridge requires the 'websockets' package") from err

        def handler(ws):
            client = _Client(lambda line: ws.send(line.decode().rstrip("\n")))
            self._register(client)
            self._spawn(client.writer_loop, name=f"ws-writer-{client.id}")
            try:
                for raw in ws:
                    if self._stop.is_set() or not client.alive:
                        break
                    self._handle_line(client, raw)
            except Exception:
                pass
            finally:
                self._unregister(client)

        self._ws_server = ws_serve(handler, "127.0.0.1", self.ws_port)
        self.ws_port = self._ws_server.socket.getsockname()[1]
        self._spawn(self._ws_server.serve_forever, name="ws")

    def _register(self, client: _Client) -> None:
        with self._clients_lock:
            self._clients.append(client)

    def _unregister(self, client: _Client) -> None:
        client.alive = False
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
            if self._controller is client:
                self._controller = None  # controller seat frees up

    def _handle_line(self, client: _Client, raw) -> None:
        try:
            msg = proto.decode(raw)
        except proto.ProtocolError as err:
            client.send(proto.error_msg("malformed message", detail=str(err)))
            return
        mtype = msg["type"]
        if mtype == "hello":
            self._handle_hello(client, msg)
            return
        if client.role is None:
            client.send(proto.error_msg("handshake required: send hello first"))
            return
        if mtype in ("pause", "resume"):
            if client.role != "controller":
                client.send(proto.error_msg("observer inputs rejected"))
                return
            self._paused = mtype == "pause"
            return
        if mtype in proto.INPUT_TYPES:
            if client.role != "controller":
                client.send(proto.error_msg("observer inputs rejected"))
                return
            try:
                self._inputs.put_nowait((client, msg))
            except queue.Full:
                client.send(proto.error_msg("input queue full, message dropped"))
            return
        client.send(proto.error_msg(f"unexpected message type {mtype!r}"))

    def _handle_hello(self, client: _Client, msg: dict) -> None:
        if msg.get("v") != proto.PROTOCOL_VERSION:
            client.send(proto.error_msg(
                "version mismatch",
                detail=f"server speaks v{proto.PROTOCOL_VERSION}, client sent v{msg.get('v')}"))
            return
        wanted = msg.get("role", "controller")
        with self._clients_lock:
            if wanted == "controller" and self._controller is None:
                self._controller = client
                client.role = "controller"
            else:
                client.role = "observer"  # second controller demoted to observer
        env = self.scenario.env
        client.send({
            "type": "hello",
            "v": proto.PROTOCOL_VERSION,
            "role": client.role,
            "scenario": {
                "name": self.scenario.name,
                "bounds": [list(env.bounds.lo), list(env.bounds.hi)],
                "obstacles": [[list(b.lo), list(b.hi)] for b in env.obstacles],
                "drone_radius": env.drone_radius,
                "voxel_size": self.session.vmap.voxel_size,
                "dt": self.scenario.config.dt,
                "altitude": float(self.scenario.start.p[2]),
                "profiles": ["linear", "squared", "exponential"],
            },
        })
        # bring the newcomer up to date: full map, then the latest state
        full = [(ix, iy, iz, self._mask_of(ix, iy, iz))
                for (ix, iy, iz) in self.session.vmap.occupied_indices()]
        if full:
            client.send(proto.voxel_delta_msg(full, self.session.vmap.voxel_size))

    def _mask_of(self, ix: int, iy: int, iz: int) -> int:
        srcs = self.session.vmap.sources_of((ix, iy, iz))
        return (1 if "robot" in srcs else 0) | (2 if "device" in srcs else 0)


def serve(scenario: Scenario, port: int, ws_port: int | None = None,
          record_trace_path=None) -> None:
    """Run the gateway until interrupted; optionally save a trace on exit."""
    server = GatewayServer(scenario, port=port, ws_port=ws_port,
                           record_trace=record_trace_path is not None)
    server.start()
    print(f"dragfly gateway on tcp://127.0.0.1:{server.port}"
          + (f" ws://127.0.0.1:{server.ws_port}" if ws_port is not None else ""))
    try:
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        trace = server.stop()
        if trace is not None and record_trace_path is not None:
            save_trace(trace, record_trace_path)
            print(f"trace saved to {record_trace_path}")
