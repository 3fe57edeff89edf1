"""Monitoring server core: terminal sessions, alarm events, operator ops.

Holds one session per terminal (a re-REGISTER supersedes the old
connection), marks sessions offline when heartbeats stop, turns inbound
ALARM frames into exactly one operator-visible event each (duplicates from
at-least-once retransmission are absorbed by the (te_id, seq) key), and
correlates operator control/status requests with the terminal's response
frames by echoed sequence number.

Inbound frames are queued per terminal and drained by ``pump`` under the
weighted round-robin scheduler, one frame per tick, one scheduler round per
pump call, so no session can starve the rest no matter how deep its queue
is.  The core itself is plain single-threaded state; hosts that want
concurrent operator access must funnel mutations through one driver.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .protocol import (
    Alarm,
    AlarmAck,
    Control,
    ControlAck,
    ControlCmd,
    Heartbeat,
    HeartbeatAck,
    Message,
    Register,
    RegisterAck,
    StatusQuery,
    StatusReport,
    msg_type_of,
)
from .scheduler import TaskEntry, TaskQueue

logger = logging.getLogger(__name__)

ONLINE = "online"
OFFLINE = "offline"

REQUEST_PENDING = "pending"
REQUEST_QUEUED_OFFLINE = "queued_offline"
REQUEST_OK = "ok"
REQUEST_ERROR = "error"
REQUEST_TIMEOUT = "timeout"

CONTROL_COMMANDS = {
    "arm": ControlCmd.ARM,
    "disarm": ControlCmd.DISARM,
    "siren_on": ControlCmd.SIREN_ON,
    "siren_off": ControlCmd.SIREN_OFF,
    "reboot": ControlCmd.REBOOT,
}


class UnknownTe(Exception):
    pass


class UnknownEvent(Exception):
    pass


@dataclass
class HmiConfig:
    offline_threshold_s: float = 180.0
    max_sessions: int = 4096
    round_budget: int = 100
    request_timeout_s: float = 10.0

    def __post_init__(self):
        if self.max_sessions < 2000:
            raise ValueError("max_sessions must be >= 2000")
        if self.offline_threshold_s < 120:
            raise ValueError(
                "offline_threshold_s must cover at least two 60 s heartbeats"
            )


@dataclass
class Session:
    te_id: int
    remote: str
    state: str = ONLINE
    last_seen: float = 0.0
    last_seq: Optional[int] = None
    armed: Optional[bool] = None
    battery: Optional[int] = None
    fw_version: int = 0
    zone_count: int = 0
    registered_at: float = 0.0
    offline_transitions: int = 0
    heartbeats: int = 0
    queued_control: deque = field(default_factory=deque)  # request ids awaiting reconnect


@dataclass
class AlarmEvent:
    event_id: int
    te_id: int
    zone: int
    alarm_type: int
    te_timestamp: int
    received_at: float
    frame_seq: int
    acked_by: Optional[str] = None
    acked_at: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "te_id": self.te_id,
            "zone": self.zone,
            "alarm_type": self.alarm_type,
            "te_timestamp": self.te_timestamp,
            "received_at": self.received_at,
            "frame_seq": self.frame_seq,
            "acked_by": self.acked_by,
            "acked_at": self.acked_at,
        }


@dataclass
class OperatorRequest:
    request_id: int
    te_id: int
    kind: str  # "control" | "status"
    operator: str
    seq: Optional[int] = None  # outbound frame seq, set when actually sent
    cmd: Optional[str] = None
    state: str = REQUEST_PENDING
    result_code: Optional[int] = None
    status_fields: Optional[dict] = None
    issued_at: float = 0.0
    deadline: Optional[float] = None
    completed_at: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "te_id": self.te_id,
            "kind": self.kind,
            "cmd": self.cmd,
            "operator": self.operator,
            "state": self.state,
            "result_code": self.result_code,
            "status": self.status_fields,
        }


@dataclass(frozen=True)
class Reply:
    """Outbound frame for a terminal; the host routes and encodes it."""

    te_id: int
    message: Message
    seq: int


@dataclass
class FrameResult:
    replies: list[Reply] = field(default_factory=list)
    published: list[dict] = field(default_factory=list)  # operator stream records


class Hmi:
    def __init__(self, config: HmiConfig | None = None):
        self.config = config or HmiConfig()
        self.sessions: dict[int, Session] = {}
        self.events: list[AlarmEvent] = []
        self._dedup: set[tuple[int, int]] = set()
        self._next_event_id = 1
        self._next_request_id = 1
        self._next_out_seq = 0
        self.requests: dict[int, OperatorRequest] = {}
        self._inbound: dict[int, deque] = {}  # te_id -> deque[(message, seq, remote)]
        self._arrival_order: list[int] = []  # te_ids with queued frames, FIFO
        self.ignored_frames = 0
        self.processed_frames = 0
        # host hook: called with the request when it completes or times out
        self.on_request_complete = None

    # -- inbound queueing -----------------------------------------------------

    def enqueue_frame(self, te_id: int, message: Message, seq: int, remote: str) -> None:
        queue = self._inbound.get(te_id)
        if queue is None:
            queue = self._inbound[te_id] = deque()
        if not queue:
            self._arrival_order.append(te_id)
        queue.append((message, seq, remote))

    def pending_frames(self) -> int:
        return sum(len(q) for q in self._inbound.values())

    def pump(self, now: float) -> tuple[int, FrameResult]:
        """Drain inbound queues for one scheduler round of the configured
        budget; one frame costs one tick."""
        result = FrameResult()
        ready = [te for te in self._arrival_order if self._inbound.get(te)]
        if not ready:
            return 0, result
        queue = TaskQueue(
            (TaskEntry(task_id=te, remaining_work=len(self._inbound[te])) for te in ready),
            round_budget=self.config.round_budget,
        )
        budget = self.config.round_budget
        processed = 0
        while budget > 0 and len(queue):
            te_id, slice_ticks = queue.next_slice()
            head_work = queue.entries[0].remaining_work
            elapsed = min(slice_ticks, head_work, budget)
            for _ in range(elapsed):
                message, seq, remote = self._inbound[te_id].popleft()
                sub = self.on_frame(message, te_id, seq, now, remote)
                result.replies.extend(sub.replies)
                result.published.extend(sub.published)
            queue.run_slice(elapsed)
            budget -= elapsed
            processed += elapsed
        # rebuild arrival order: still-pending sessions keep their place,
        # new arrivals keep appending behind them
        self._arrival_order = [te for te in self._arrival_order if self._inbound.get(te)]
        self.processed_frames += processed
        return processed, result

    # -- frame processing ---------------------------------------------------------

    def on_frame(
        self, message: Message, te_id: int, seq: int, now: float, remote: str = "sim"
    ) -> FrameResult:
        result = FrameResult()
        if isinstance(message, Register):
            self._on_register(message, te_id, seq, now, remote, result)
            return result
        session = self.sessions.get(te_id)
        if session is None:
            self.ignored_frames += 1
            logger.info("frame %s from unregistered te %d ignored",
                        msg_type_of(message).name, te_id)
            return result
        session.last_seen = now
        session.last_seq = seq
        session.remote = remote
        if session.state == OFFLINE:
            self._set_state(session, ONLINE, now, result)

        if isinstance(message, Heartbeat):
            session.heartbeats += 1
            session.armed = message.status.armed
            session.battery = message.status.battery
            result.replies.append(Reply(te_id, HeartbeatAck(), seq))
        elif isinstance(message, Alarm):
            self._on_alarm(message, te_id, seq, now, result)
        elif isinstance(message, ControlAck):
            self._complete_request(te_id, seq, now, control_result=message.result)
        elif isinstance(message, StatusReport):
            session.armed = message.status.armed
            session.battery = message.status.battery
            self._complete_request(
                te_id,
                seq,
                now,
                status_fields={
                    "armed": message.status.armed,
                    "alarm_active": message.status.alarm_active,
                    "battery": message.status.battery,
                    "uptime_s": message.uptime_s,
                },
            )
        else:
            self.ignored_frames += 1
            logger.debug("unexpected %s from te %d", msg_type_of(message).name, te_id)
        return result

    def _on_register(self, message, te_id, seq, now, remote, result) -> None:
        session = self.sessions.get(te_id)
        if session is None:
            if len(self.sessions) >= self.config.max_sessions:
                self.ignored_frames += 1
                logger.warning("session table full; REGISTER from te %d dropped", te_id)
                return
            session = Session(te_id=te_id, remote=remote, registered_at=now)
            self.sessions[te_id] = session
            session.state = OFFLINE  # so the transition below publishes
        session.remote = remote
        session.last_seen = now
        session.last_seq = seq
        session.fw_version = message.fw_version
        session.zone_count = message.zone_count
        if session.state != ONLINE:
            self._set_state(session, ONLINE, now, result)
        result.replies.append(Reply(te_id, RegisterAck(), seq))
        # store-and-forward: control queued while the terminal was away
        while session.queued_control:
            request = self.requests[session.queued_control.popleft()]
            self._send_request_frame(request, now, result)

    def _on_alarm(self, message: Alarm, te_id: int, seq: int, now: float, result) -> None:
        key = (te_id, seq)
        if key not in self._dedup:
            self._dedup.add(key)
            event = AlarmEvent(
                event_id=self._next_event_id,
                te_id=te_id,
                zone=message.zone,
                alarm_type=int(message.alarm_type),
                te_timestamp=message.ts,
                received_at=now,
                frame_seq=seq,
            )
            self._next_event_id += 1
            self.events.append(event)
            result.published.append({"type": "alarm", "event": event.to_dict()})
        result.replies.append(Reply(te_id, AlarmAck(), seq))

    def _set_state(self, session: Session, state: str, now: float, result) -> None:
        session.state = state
        if state == OFFLINE:
            session.offline_transitions += 1
        result.published.append(
            {"type": "te_state_change", "te_id": session.te_id, "state": state, "at": now}
        )

    # -- liveness -------------------------------------------------------------------

    def sweep_offline(self, now: float) -> tuple[list[int], FrameResult]:
        """Flip sessions whose heartbeats stopped; strict threshold, so a
        terminal last seen exactly at the threshold is still online."""
        result = FrameResult()
        flipped = []
        threshold_ms = self.config.offline_threshold_s * 1000.0
        for session in self.sessions.values():
            if session.state == ONLINE and now - session.last_seen > threshold_ms:
                self._set_state(session, OFFLINE, now, result)
                flipped.append(session.te_id)
        return flipped, result

    # -- operator operations -----------------------------------------------------------

    def send_control(
        self, te_id: int, cmd: str, operator: str, now: float
    ) -> tuple[OperatorRequest, FrameResult]:
        if cmd not in CONTROL_COMMANDS:
            raise ValueError(f"unknown control command {cmd!r}")
        session = self.sessions.get(te_id)
        if session is None:
            raise UnknownTe(f"te {te_id} has no session")
        request = self._new_request(te_id, "control", operator, now, cmd=cmd)
        result = FrameResult()
        if session.state == OFFLINE:
            request.state = REQUEST_QUEUED_OFFLINE
            session.queued_control.append(request.request_id)
        else:
            self._send_request_frame(request, now, result)
        return request, result

    def query_status(
        self, te_id: int, operator: str, now: float
    ) -> tuple[OperatorRequest, FrameResult]:
        session = self.sessions.get(te_id)
        if session is None:
            raise UnknownTe(f"te {te_id} has no session")
        request = self._new_request(te_id, "status", operator, now)
        result = FrameResult()
        if session.state == OFFLINE:
            request.state = REQUEST_QUEUED_OFFLINE
            session.queued_control.append(request.request_id)
        else:
            self._send_request_frame(request, now, result)
        return request, result

    def _new_request(self, te_id, kind, operator, now, cmd=None) -> OperatorRequest:
        request = OperatorRequest(
            request_id=self._next_request_id,
            te_id=te_id,
            kind=kind,
            operator=operator,
            cmd=cmd,
            issued_at=now,
        )
        self._next_request_id += 1
        self.requests[request.request_id] = request
        return request

    def _send_request_frame(self, request: OperatorRequest, now: float, result) -> None:
        request.seq = self._next_out_seq
        self._next_out_seq = (self._next_out_seq + 1) & 0xFFFF
        request.state = REQUEST_PENDING
        request.deadline = now + self.config.request_timeout_s * 1000.0
        if request.kind == "control":
            message: Message = Control(cmd=CONTROL_COMMANDS[request.cmd])
        else:
            message = StatusQuery()
        result.replies.append(Reply(request.te_id, message, request.seq))

    def _complete_request(
        self, te_id, seq, now, control_result=None, status_fields=None
    ) -> None:
        for request in self.requests.values():
            if request.te_id == te_id and request.seq == seq and request.state == REQUEST_PENDING:
                request.completed_at = now
                if control_result is not None:
                    request.result_code = control_result
                    request.state = REQUEST_OK if control_result == 0 else REQUEST_ERROR
                if status_fields is not None:
                    request.status_fields = status_fields
                    request.state = REQUEST_OK
                if self.on_request_complete is not None:
                    self.on_request_complete(request)
                return
        logger.debug("uncorrelated response from te %d seq %d", te_id, seq)

    def expire_requests(self, now: float) -> list[OperatorRequest]:
        expired = []
        for request in self.requests.values():
            if (
                request.state == REQUEST_PENDING
                and request.deadline is not None
                and now >= request.deadline
            ):
                request.state = REQUEST_TIMEOUT
                request.completed_at = now
                expired.append(request)
                if self.on_request_complete is not None:
                    self.on_request_complete(request)
        return expired

    # -- operator queries --------------------------------------------------------------

    def list_tes(self) -> list[dict]:
        return [
            {
                "te_id": s.te_id,
                "state": s.state,
                "last_seen": s.last_seen,
                "armed": s.armed,
            }
            for s in sorted(self.sessions.values(), key=lambda s: s.te_id)
        ]

    def ack_alarm(self, event_id: int, operator: str, now: float) -> AlarmEvent:
        """First operator wins; repeat acks return the original unchanged."""
        event = self._event_by_id(event_id)
        if event.acked_by is None:
            event.acked_by = operator
            event.acked_at = now
        return event

    def events_since(self, since_event_id: int = 0) -> list[AlarmEvent]:
        return [e for e in self.events if e.event_id > since_event_id]

    def _event_by_id(self, event_id: int) -> AlarmEvent:
        index = event_id - 1
        if 0 <= index < len(self.events):
            return self.events[index]
        raise UnknownEvent(f"no alarm event {event_id}")
