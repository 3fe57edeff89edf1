"""Alarm terminal (TE) state machine.

Pure event-in/actions-out logic: the hosting runtime feeds it timer ticks,
decoded frames, sensor events, SMS texts and per-send results, and executes
whatever actions come back (frame sends, SMS sends, GPRS disconnect and
reconnect, power-cycle).  One terminal instance is driven from a single
serialized event stream; a fleet of them shares nothing.

Behavioural contract, in brief:

* register with the server after connecting; heartbeat every minute while
  online;
* a sensor event raises an alarm on both channels: an ALARM frame to the
  server and an alert SMS straight to the user.  IR fires only while armed;
  smoke/temperature fire regardless (configurable);
* every send failure bumps a consecutive-failure counter; once it exceeds
  the retry threshold the terminal drops the GPRS session and reconnects
  immediately, then re-registers.  A failed frame is retried after a short
  delay, and whatever was in flight when the reconnect tripped is resent
  once registration completes;
* an ALARM is retransmitted (byte-identical, same seq) until the server
  acknowledges it, surviving reconnects; later alarms queue behind it;
* the user controls the terminal over SMS (ARM/DISARM/STATUS) and the
  server over CONTROL frames (arm/disarm/siren/reboot) and STATUS_QUERY.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .protocol import (
    Alarm,
    AlarmAck,
    AlarmType,
    Control,
    ControlAck,
    ControlCmd,
    CONTROL_OK,
    CONTROL_UNKNOWN_CMD,
    Heartbeat,
    HeartbeatAck,
    Message,
    Register,
    RegisterAck,
    SmsAck,
    SmsAlert,
    SmsParseError,
    SmsStatus,
    StatusByte,
    StatusQuery,
    StatusReport,
    UserCommand,
    msg_type_of,
    parse_sms,
    render_sms,
)

logger = logging.getLogger(__name__)


class Phase(Enum):
    BOOT = "boot"
    CONNECTING = "connecting"
    REGISTERING = "registering"
    ONLINE = "online"
    RECONNECTING = "reconnecting"


@dataclass
class TeConfig:
    te_id: int
    heartbeat_period_s: float = 60.0
    retry_threshold: int = 3  # consecutive send failures tolerated
    retry_delay_s: float = 2.0
    ack_timeout_s: float = 5.0
    user_phone: str = ""
    sms_address: str = ""
    hmi_addr: tuple[str, int] = ("hmi", 7001)
    fire_sensors_always_alarm: bool = True
    initially_armed: bool = False
    battery_level: int = 15
    fw_version: int = 1
    zone_count: int = 8

    def __post_init__(self):
        if self.retry_threshold < 1:
            raise ValueError("retry_threshold must be >= 1")
        if not self.user_phone:
            self.user_phone = f"user-{self.te_id}"
        if not self.sms_address:
            self.sms_address = f"te-{self.te_id}"


# -- Actions the runtime executes --------------------------------------------


@dataclass(frozen=True)
class SendFrame:
    message: Message
    seq: int
    sensor_event_id: Optional[int] = None
    retransmission: bool = False
    is_response: bool = False  # echoes the server's seq, no result tracking


@dataclass(frozen=True)
class SendSms:
    to: str
    text: str
    sensor_event_id: Optional[int] = None


@dataclass(frozen=True)
class Disconnect:
    pass


@dataclass(frozen=True)
class Reconnect:
    pass


@dataclass(frozen=True)
class Reboot:
    pass


Action = SendFrame | SendSms | Disconnect | Reconnect | Reboot


@dataclass(frozen=True)
class SensorEvent:
    zone: int
    kind: AlarmType
    at_ms: float
    event_id: Optional[int] = None


@dataclass
class _Outbound:
    """A tracked outbound frame: current retry/ack bookkeeping."""

    frame: SendFrame
    awaiting_ack: bool = False
    ack_due_at: Optional[float] = None
    retry_due_at: Optional[float] = None


@dataclass
class _QueuedAlarm:
    zone: int
    kind: AlarmType
    ts: int
    sensor_event_id: Optional[int]


class Terminal:
    """One TE; see module docstring for the behavioural contract."""

    def __init__(self, config: TeConfig):
        self.config = config
        self.phase = Phase.BOOT
        self.armed = config.initially_armed
        self.siren_on = False
        self.fail_count = 0  # consecutive GPRS send failures
        self.next_seq = 0
        self.pending: Optional[_Outbound] = None
        self.retained: Optional[SendFrame] = None  # resend after re-registration
        self.alarm_backlog: deque[_QueuedAlarm] = deque()
        self.last_heartbeat_at: Optional[float] = None
        self.power_on_at: float = 0.0
        self.powered = False
        # counters useful to hosts and tests
        self.reconnect_count = 0
        self.frames_sent = 0

    # -- lifecycle ----------------------------------------------------------

    def power_on(self, now: float) -> None:
        self.phase = Phase.BOOT
        self.powered = True
        self.power_on_at = now
        self.next_seq = 0  # fresh numbering each power cycle
        self.fail_count = 0
        # armed state persists, and an unacked alarm goes back to the front
        # of the queue to be re-raised under a fresh seq
        for frame in (
            self.pending.frame if self.pending else None,
            self.retained,
        ):
            if frame is not None and isinstance(frame.message, Alarm):
                message = frame.message
                self.alarm_backlog.appendleft(
                    _QueuedAlarm(
                        message.zone,
                        message.alarm_type,
                        message.ts,
                        frame.sensor_event_id,
                    )
                )
        self.pending = None
        self.retained = None
        self.last_heartbeat_at = None

    def power_off(self, now: float) -> None:
        self.powered = False
        self.phase = Phase.BOOT
        self.pending = None
        self.retained = None
        self.last_heartbeat_at = None

    def on_connected(self, now: float) -> list[Action]:
        """The modem dialog finished; register with the server."""
        if self.phase not in (Phase.BOOT, Phase.CONNECTING, Phase.RECONNECTING):
            return []
        if self.phase is not Phase.RECONNECTING:
            self.phase = Phase.REGISTERING
        if (
            self.pending is not None
            and self.retained is None
            and isinstance(self.pending.frame.message, Alarm)
        ):
            self.retained = self.pending.frame  # never lose an unacked alarm
        frame = SendFrame(
            message=Register(self.config.fw_version, self.config.zone_count),
            seq=self._mint_seq(),
        )
        self.pending = _Outbound(frame=frame)
        return [frame]

    # -- sensors --------------------------------------------------------------

    def on_sensor(self, ev: SensorEvent, now: float) -> list[Action]:
        """Raise an alarm on both channels, or nothing if the event is
        filtered by the arm state."""
        if not self.powered:
            return []
        fire_class = ev.kind in (AlarmType.SMOKE, AlarmType.TEMPERATURE)
        if not (self.armed or (fire_class and self.config.fire_sensors_always_alarm)):
            return []
        ts = int(now // 1000)
        actions: list[Action] = []
        queued = _QueuedAlarm(ev.zone, ev.kind, ts, ev.event_id)
        frame = self._try_send_alarm(queued)
        if frame is not None:
            actions.append(frame)
        alert = render_sms(SmsAlert(zone=ev.zone, alarm_type=ev.kind, ts=ts))
        actions.append(
            SendSms(to=self.config.user_phone, text=alert, sensor_event_id=ev.event_id)
        )
        return actions

    def _try_send_alarm(self, alarm: _QueuedAlarm) -> Optional[SendFrame]:
        """Send now if the single retransmission slot is free, else queue."""
        if self.phase is Phase.ONLINE and self.pending is None:
            frame = SendFrame(
                message=Alarm(zone=alarm.zone, alarm_type=alarm.kind, ts=alarm.ts),
                seq=self._mint_seq(),
                sensor_event_id=alarm.sensor_event_id,
            )
            self.pending = _Outbound(frame=frame)
            return frame
        self.alarm_backlog.append(alarm)
        return None

    # -- send results -----------------------------------------------------------

    def on_send_result(self, ok: bool, frame: SendFrame, now: float) -> list[Action]:
        """Outcome of one tracked frame send (responses are fire-and-forget)."""
        if frame.is_response:
            return []
        if ok:
            self.fail_count = 0
            if self.pending is not None and self.pending.frame.seq == frame.seq:
                if isinstance(frame.message, (Alarm, Register)):
                    self.pending.awaiting_ack = True
                    self.pending.ack_due_at = now + self.config.ack_timeout_s * 1000.0
                    self.pending.retry_due_at = None
                else:
                    self.pending = None  # heartbeats are fire-and-forget
            return []

        self.fail_count += 1
        if self.fail_count > self.config.retry_threshold:
            # too much congestion: drop the GPRS session and come back fresh
            self.fail_count = 0
            self.reconnect_count += 1
            self.phase = Phase.RECONNECTING
            self.retained = frame
            self.pending = None
            return [Disconnect(), Reconnect()]
        if self.pending is not None and self.pending.frame.seq == frame.seq:
            slot = self.pending
        elif self.pending is None:
            slot = self.pending = _Outbound(frame=frame)
        else:
            # slot busy with another tracked frame; heartbeats recur on their
            # own cadence, so this one is simply not retried
            slot = None
        if slot is not None:
            slot.retry_due_at = now + self.config.retry_delay_s * 1000.0
            slot.awaiting_ack = False
        return []

    # -- timers -------------------------------------------------------------------

    def on_timer(self, now: float) -> list[Action]:
        """Fire whatever is due: heartbeat, retry, ack-timeout retransmit."""
        if not self.powered:
            return []
        actions: list[Action] = []
        if self.pending is not None:
            due = self.pending.retry_due_at
            if due is not None and now >= due:
                self.pending.retry_due_at = None
                actions.append(self._as_retransmission(self.pending.frame))
            elif (
                self.pending.awaiting_ack
                and self.pending.ack_due_at is not None
                and now >= self.pending.ack_due_at
                and self.phase in (Phase.ONLINE, Phase.REGISTERING, Phase.RECONNECTING)
            ):
                self.pending.ack_due_at = now + self.config.ack_timeout_s * 1000.0
                actions.append(self._as_retransmission(self.pending.frame))
        if self.phase is Phase.ONLINE:
            period_ms = self.config.heartbeat_period_s * 1000.0
            if (
                self.last_heartbeat_at is None
                or now - self.last_heartbeat_at >= period_ms
            ):
                self.last_heartbeat_at = now
                actions.append(
                    SendFrame(message=Heartbeat(self.status_byte()), seq=self._mint_seq())
                )
        return actions

    def _as_retransmission(self, frame: SendFrame) -> SendFrame:
        return SendFrame(
            message=frame.message,
            seq=frame.seq,
            sensor_event_id=frame.sensor_event_id,
            retransmission=True,
        )

    def next_wakeup(self) -> Optional[float]:
        """Earliest time on_timer() has something to do."""
        if not self.powered:
            return None
        deadlines = []
        if self.pending is not None:
            if self.pending.retry_due_at is not None:
                deadlines.append(self.pending.retry_due_at)
            elif self.pending.awaiting_ack and self.pending.ack_due_at is not None:
                deadlines.append(self.pending.ack_due_at)
        if self.phase is Phase.ONLINE and self.last_heartbeat_at is not None:
            deadlines.append(
                self.last_heartbeat_at + self.config.heartbeat_period_s * 1000.0
            )
        return min(deadlines) if deadlines else None

    # -- inbound frames ---------------------------------------------------------

    def on_frame(self, message: Message, seq: int, now: float) -> list[Action]:
        if not self.powered:
            return []
        if isinstance(message, RegisterAck):
            return self._on_register_ack(seq, now)
        if isinstance(message, AlarmAck):
            return self._on_alarm_ack(seq, now)
        if isinstance(message, HeartbeatAck):
            return []
        if isinstance(message, Control):
            return self._on_control(message, seq, now)
        if isinstance(message, StatusQuery):
            report = StatusReport(
                status=self.status_byte(),
                uptime_s=int(max(0.0, now - self.power_on_at) // 1000),
            )
            return [SendFrame(message=report, seq=seq, is_response=True)]
        logger.debug("te %d ignoring frame %s", self.config.te_id, msg_type_of(message))
        return []

    def _on_register_ack(self, seq: int, now: float) -> list[Action]:
        if self.phase not in (Phase.REGISTERING, Phase.RECONNECTING):
            return []
        if self.pending is not None and isinstance(self.pending.frame.message, Register):
            if self.pending.frame.seq != seq:
                return []  # stale ack from an earlier registration
            self.pending = None
        self.phase = Phase.ONLINE
        self.last_heartbeat_at = now
        actions: list[Action] = []
        if self.retained is not None:
            frame = self.retained
            self.retained = None
            if isinstance(frame.message, Alarm):
                self.pending = _Outbound(frame=frame)
                actions.append(self._as_retransmission(frame))
            elif isinstance(frame.message, Register):
                pass  # registration just completed
            else:
                actions.append(self._as_retransmission(frame))
        if self.pending is None and self.alarm_backlog:
            frame = self._try_send_alarm(self.alarm_backlog.popleft())
            if frame is not None:
                actions.append(frame)
        return actions

    def _on_alarm_ack(self, seq: int, now: float) -> list[Action]:
        if (
            self.pending is not None
            and isinstance(self.pending.frame.message, Alarm)
            and self.pending.frame.seq == seq
        ):
            self.pending = None
            if self.alarm_backlog:
                frame = self._try_send_alarm(self.alarm_backlog.popleft())
                if frame is not None:
                    return [frame]
        return []

    def _on_control(self, message: Control, seq: int, now: float) -> list[Action]:
        cmd = message.cmd
        result = CONTROL_OK
        extra: list[Action] = []
        if cmd == ControlCmd.ARM:
            self.armed = True
        elif cmd == ControlCmd.DISARM:
            self.armed = False
        elif cmd == ControlCmd.SIREN_ON:
            self.siren_on = True
        elif cmd == ControlCmd.SIREN_OFF:
            self.siren_on = False
        elif cmd == ControlCmd.REBOOT:
            extra = [Reboot()]
        else:
            result = CONTROL_UNKNOWN_CMD
        ack = SendFrame(message=ControlAck(result=result), seq=seq, is_response=True)
        return [ack] + extra

    # -- modem notifications ------------------------------------------------------

    def on_link_down(self, now: float) -> list[Action]:
        """The modem lost its TCP connection (idle timeout or radio fault)."""
        if not self.powered or self.phase in (Phase.BOOT, Phase.CONNECTING):
            return []
        self.phase = Phase.RECONNECTING
        self.fail_count = 0
        if self.pending is not None:
            self.retained = self.pending.frame
            self.pending = None
        return [Reconnect()]

    # -- SMS ---------------------------------------------------------------------

    def handle_sms(self, text: str, from_addr: str, now: float) -> Optional[str]:
        """User command over SMS; anything not from the owner is dropped."""
        if not self.powered or from_addr != self.config.user_phone:
            return None
        try:
            cmd = parse_sms(text)
        except SmsParseError:
            return None
        if cmd is UserCommand.ARM:
            self.armed = True
            return render_sms(SmsAck(armed=True))
        if cmd is UserCommand.DISARM:
            self.armed = False
            return render_sms(SmsAck(armed=False))
        return render_sms(
            SmsStatus(armed=self.armed, battery=self.config.battery_level)
        )

    # -- helpers ---------------------------------------------------------------

    def status_byte(self) -> StatusByte:
        alarm_pending = (
            self.pending is not None and isinstance(self.pending.frame.message, Alarm)
        ) or bool(self.alarm_backlog)
        return StatusByte(
            armed=self.armed,
            alarm_active=alarm_pending,
            battery=self.config.battery_level,
        )

    def _mint_seq(self) -> int:
        seq = self.next_seq
        self.next_seq = (self.next_seq + 1) & 0xFFFF
        self.frames_sent += 1
        return seq
