"""Live mode: the simulated world paced against the wall clock, with the
operator HTTP API, a server-push event stream, and a real TCP listener
speaking the binary terminal protocol.

The simulation core stays the sole mutator of world state: HTTP handlers
and TCP connection threads enqueue closures onto a command queue that the
pacing loop drains between events, and get results back through per-call
events.  The stream fans out every alarm / state-change record to each
subscriber.

External (real-socket) terminals should use te_ids outside the simulated
range; replies for a te_id with a live socket are routed to the socket
instead of the simulated link.
"""

from __future__ import annotations

import json
import logging
import queue
import socketserver
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from ..hmi import REQUEST_PENDING, UnknownEvent, UnknownTe
from ..protocol import FrameDecoder, encode_frame, msg_type_of
from .scenario import Scenario
from .world import World

logger = logging.getLogger(__name__)

COMMAND_POLL_S = 0.02
STREAM_KEEPALIVE_S = 10.0


class LiveBridge:
    """Thread boundary between the sim loop and the network handlers."""

    def __init__(self, world: World, speed: float):
        self.world = world
        self.speed = speed
        self.commands: queue.Queue = queue.Queue()
        self.stopping = threading.Event()
        self.finished = threading.Event()
        self._subscribers: list[queue.Queue] = []
        self._sub_lock = threading.Lock()
        self._waiters: dict[int, tuple[threading.Event, dict]] = {}
        self._sockets: dict[int, object] = {}  # te_id -> connection wfile
        world.publish_hook = self._fan_out
        world.frame_tx_hook = self._socket_tx
        world.hmi.on_request_complete = self._request_complete

    # -- sim-thread side ----------------------------------------------------

    def run(self) -> None:
        world = self.world
        duration = world.scenario.duration_ms
        start_wall = time.monotonic()
        t0 = world.clock.now_ms
        try:
            while not self.stopping.is_set() and world.clock.now_ms < duration:
                next_t = world.clock.peek_time()
                next_t = duration if next_t is None else min(next_t, duration)
                target_wall = start_wall + (next_t - t0) / 1000.0 / self.speed
                while not self.stopping.is_set():
                    remaining = target_wall - time.monotonic()
                    if remaining <= 0:
                        break
                    try:
                        cmd = self.commands.get(timeout=min(remaining, COMMAND_POLL_S))
                        cmd()
                    except queue.Empty:
                        pass
                while True:  # drain anything that arrived meanwhile
                    try:
                        self.commands.get_nowait()()
                    except queue.Empty:
                        break
                world.clock.run_until(next_t)
        finally:
            self.finished.set()
            self._fan_out({"type": "end_of_scenario", "at": world.clock.now_ms})

    # -- handler-thread side ---------------------------------------------------

    def call(self, fn, timeout: float = 30.0):
        """Run ``fn(world)`` on the sim thread; return its result or raise."""
        if self.finished.is_set():
            raise RuntimeError("scenario finished")
        done = threading.Event()
        holder: dict = {}

        def wrapped():
            try:
                holder["result"] = fn(self.world)
            except Exception as exc:  # surfaced to the HTTP handler
                holder["error"] = exc
            done.set()

        self.commands.put(wrapped)
        if not done.wait(timeout):
            raise TimeoutError("sim thread did not answer")
        if "error" in holder:
            raise holder["error"]
        return holder["result"]

    def operator_request(self, kind: str, te_id: int, cmd, operator: str):
        """Issue a control/status request and wait for its completion."""
        waiter = threading.Event()
        holder: dict = {}

        def issue(world: World):
            now = world.clock.now_ms
            if kind == "control":
                request, result = world.hmi.send_control(te_id, cmd, operator, now)
            else:
                request, result = world.hmi.query_status(te_id, operator, now)
            world.record(
                "operator_request",
                request_id=request.request_id,
                te=request.te_id,
                req=request.kind,
                cmd=request.cmd,
                state=request.state,
            )
            for reply in result.replies:
                world._send_down(reply)
            holder["request"] = request
            if request.state == REQUEST_PENDING:
                self._waiters[request.request_id] = (waiter, holder)
                world.clock.schedule(request.deadline + 0.01, world._expire_requests)
            else:
                waiter.set()
            return request

        request = self.call(issue)
        wall_budget = (
            self.world.hmi.config.request_timeout_s / self.speed + 5.0
        )
        waiter.wait(wall_budget)
        return holder.get("request", request)

    def _request_complete(self, request) -> None:
        entry = self._waiters.pop(request.request_id, None)
        if entry is not None:
            event, holder = entry
            holder["request"] = request
            event.set()

    # -- stream ---------------------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _fan_out(self, record: dict) -> None:
        with self._sub_lock:
            for q in self._subscribers:
                q.put(record)

    # -- socket terminals ---------------------------------------------------------------

    def attach_socket(self, te_id: int, wfile) -> None:
        self._sockets[te_id] = wfile

    def detach_socket(self, te_id: int) -> None:
        self._sockets.pop(te_id, None)

    def _socket_tx(self, reply) -> bool:
        wfile = self._sockets.get(reply.te_id)
        if wfile is None:
            return False
        try:
            wfile.write(encode_frame(reply.message, reply.te_id, reply.seq))
            wfile.flush()
        except OSError:
            self.detach_socket(reply.te_id)
        return True


# -- terminal-facing TCP listener ----------------------------------------------------


class _TeConnectionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        bridge: LiveBridge = self.server.bridge  # type: ignore[attr-defined]
        decoder = FrameDecoder()
        attached: set[int] = set()
        peer = "%s:%s" % self.client_address
        try:
            while not bridge.finished.is_set():
                chunk = self.request.recv(4096)
                if not chunk:
                    break
                for frame in decoder.feed(chunk):
                    te_id, message, seq = frame.te_id, frame.message, frame.seq
                    if te_id not in attached:
                        bridge.attach_socket(te_id, self.wfile)
                        attached.add(te_id)

                    def deliver(world, te_id=te_id, message=message, seq=seq):
                        world.record(
                            "frame_received",
                            te=te_id,
                            msg=msg_type_of(message).name,
                            seq=seq,
                        )
                        world.hmi.enqueue_frame(te_id, message, seq, remote=f"tcp://{peer}")
                        world._ensure_pump()

                    bridge.commands.put(lambda d=deliver: d(bridge.world))
        except OSError:
            pass
        finally:
            for te_id in attached:
                bridge.detach_socket(te_id)


class TeListener(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, bridge: LiveBridge):
        super().__init__(addr, _TeConnectionHandler)
        self.bridge = bridge


# -- operator HTTP API ------------------------------------------------------------------


class _ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "cpas-hmi/1"

    @property
    def bridge(self) -> LiveBridge:
        return self.server.bridge  # type: ignore[attr-defined]

    @property
    def console_dir(self):
        return self.server.console_dir  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        logger.debug("api: " + fmt, *args)

    def _json(self, payload, status: int = 200) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        return json.loads(self.rfile.read(length))

    # -- GET ------------------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/tes":
                return self._json(self.bridge.call(lambda w: w.hmi.list_tes()))
            if len(parts) == 3 and parts[0] == "tes" and parts[2] == "status":
                return self._status(int(parts[1]))
            if url.path == "/events":
                since = int(parse_qs(url.query).get("since", ["0"])[0])
                return self._json(
                    self.bridge.call(
                        lambda w: [e.to_dict() for e in w.hmi.events_since(since)]
                    )
                )
            if len(parts) == 2 and parts[0] == "requests":
                request_id = int(parts[1])
                request = self.bridge.call(
                    lambda w: w.hmi.requests.get(request_id)
                )
                if request is None:
                    return self._json({"error": "unknown request"}, 404)
                return self._json(request.to_dict())
            if url.path == "/stream":
                return self._stream()
            return self._static(url.path)
        except UnknownTe as exc:
            return self._json({"error": str(exc)}, 404)
        except (ValueError, KeyError) as exc:
            return self._json({"error": str(exc)}, 400)
        except (RuntimeError, TimeoutError) as exc:
            return self._json({"error": str(exc)}, 503)

    def _status(self, te_id: int) -> None:
        request = self.bridge.operator_request("status", te_id, None, "api")
        if request.state == "ok" and request.status_fields:
            return self._json(dict(te_id=te_id, **request.status_fields))
        if request.state == "queued_offline":
            return self._json(
                {"error": "te offline; query queued", "request_id": request.request_id},
                409,
            )
        return self._json(
            {"error": request.state, "request_id": request.request_id}, 504
        )

    # -- POST ------------------------------------------------------------------

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            body = self._read_body()
            if len(parts) == 3 and parts[0] == "tes" and parts[2] == "control":
                te_id = int(parts[1])
                cmd = body["cmd"]
                operator = body.get("operator", "api")
                request = self.bridge.operator_request("control", te_id, cmd, operator)
                return self._json(
                    {
                        "request_id": request.request_id,
                        "result": request.state,
                        "result_code": request.result_code,
                    }
                )
            if len(parts) == 3 and parts[0] == "events" and parts[2] == "ack":
                event_id = int(parts[1])
                operator = body["operator"]
                event = self.bridge.call(
                    lambda w: w.hmi.ack_alarm(event_id, operator, w.clock.now_ms)
                )
                return self._json(event.to_dict())
            if url.path == "/inject":
                return self._inject(body)
            return self._json({"error": "not found"}, 404)
        except UnknownTe as exc:
            return self._json({"error": str(exc)}, 404)
        except UnknownEvent as exc:
            return self._json({"error": str(exc)}, 404)
        except (ValueError, KeyError) as exc:
            return self._json({"error": f"bad request: {exc}"}, 400)
        except (RuntimeError, TimeoutError) as exc:
            return self._json({"error": str(exc)}, 503)

    def _inject(self, body: dict) -> None:
        action = body["action"]
        te_id = int(body["te_id"])
        if action == "kill-te":
            self.bridge.call(lambda w: w.kill_te(te_id))
            return self._json({"ok": True, "action": action, "te_id": te_id})
        if action == "revive-te":
            self.bridge.call(lambda w: w.revive_te(te_id))
            return self._json({"ok": True, "action": action, "te_id": te_id})
        if action == "sensor":
            zone = int(body.get("zone", 1))
            sensor = body.get("sensor", "IR")
            event_id = self.bridge.call(
                lambda w: w.inject_sensor(te_id, zone, sensor)
            )
            return self._json({"ok": True, "sensor_event_id": event_id})
        return self._json({"error": f"unknown action {action!r}"}, 400)

    # -- stream / static --------------------------------------------------------

    def _stream(self) -> None:
        q = self.bridge.subscribe()
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        try:
            self.wfile.write(b"retry: 2000\n\n")
            self.wfile.flush()
            while not self.bridge.finished.is_set():
                try:
                    record = q.get(timeout=STREAM_KEEPALIVE_S)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                payload = json.dumps(record)
                self.wfile.write(f"data: {payload}\n\n".encode())
                self.wfile.flush()
        except OSError:
            pass
        finally:
            self.bridge.unsubscribe(q)

    def _static(self, path: str) -> None:
        if self.console_dir is None:
            return self._json({"error": "not found"}, 404)
        if path == "/":
            path = "/index.html"
        base = Path(self.console_dir).resolve()
        target = (base / path.lstrip("/")).resolve()
        if not str(target).startswith(str(base)) or not target.is_file():
            return self._json({"error": "not found"}, 404)
        content_types = {
            ".html": "text/html", ".js": "text/javascript",
            ".css": "text/css", ".map": "application/json",
        }
        body = target.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type", content_types.get(target.suffix, "application/octet-stream")
        )
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, bridge: LiveBridge, console_dir=None):
        super().__init__(addr, _ApiHandler)
        self.bridge = bridge
        self.console_dir = console_dir


# -- entry points -------------------------------------------------------------------------


class LiveServer:
    """Owns the sim thread plus both listeners; used by serve and by tests."""

    def __init__(
        self,
        scenario: Scenario,
        speed: float = 1.0,
        api_port: int = 8080,
        te_port: int = 7001,
        console_dir=None,
        host: str = "127.0.0.1",
    ):
        if speed <= 0:
            raise ValueError("speed must be > 0")
        self.world = World(scenario)
        self.bridge = LiveBridge(self.world, speed)
        self.api = ApiServer((host, api_port), self.bridge, console_dir)
        self.te_listener = TeListener((host, te_port), self.bridge)
        self._threads: list[threading.Thread] = []

    @property
    def api_port(self) -> int:
        return self.api.server_address[1]

    @property
    def te_port(self) -> int:
        return self.te_listener.server_address[1]

    def start(self) -> None:
        for name, target in (
            ("cpas-sim", self.bridge.run),
            ("cpas-api", self.api.serve_forever),
            ("cpas-te", self.te_listener.serve_forever),
        ):
            thread = threading.Thread(target=target, name=name, daemon=True)
            thread.start()
            self._threads.append(thread)

    def wait(self, timeout=None) -> bool:
        return self.bridge.finished.wait(timeout)

    def stop(self) -> None:
        self.bridge.stopping.set()
        self.bridge.finished.wait(5.0)
        self.api.shutdown()
        self.te_listener.shutdown()
        self.api.server_close()
        self.te_listener.server_close()


def serve_scenario(scenario, speed, api_port, te_port, console_dir=None) -> int:
    server = LiveServer(
        scenario,
        speed=speed,
        api_port=api_port,
        te_port=te_port,
        console_dir=console_dir,
    )
    server.start()
    print(
        f"serving scenario {scenario.name!r}: operator API on "
        f"http://127.0.0.1:{server.api_port}, terminal port {server.te_port}, "
        f"speed x{speed:g}"
    )
    if console_dir:
        print(f"console: http://127.0.0.1:{server.api_port}/")
    try:
        while not server.wait(timeout=0.5):
            pass
        print("scenario horizon reached")
    except KeyboardInterrupt:
        print("stopping")
    finally:
        server.stop()
    return 0
