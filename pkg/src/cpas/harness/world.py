"""The simulated world: terminal fleet, server, SMS channel, links, clock.

Everything runs single-threaded over the virtual clock; identical
(scenario, seed) pairs produce identical record streams, which is what the
trace file captures and the report is derived from.
"""

from __future__ import annotations

import logging
from typing import Optional

from .. import __version__
from ..hmi import Hmi, HmiConfig, Reply
from ..modem import (
    BOOT_COMPLETED,
    IDLE_DISCONNECTED,
    Modem,
    ModemConfig,
    ModemState,
    NotConnected,
    PinEvent,
)
from ..protocol import AlarmType, decode_frame, encode_frame, msg_type_of
from ..smsgw import SmsGateway, UserAgent
from ..terminal import (
    Disconnect,
    Reboot,
    Reconnect,
    SendFrame,
    SendSms,
    SensorEvent,
    TeConfig,
    Terminal,
)
from .clock import VirtualClock
from .link import DELIVERED, LinkParams, SimLink
from .rng import SplitMix64
from .scenario import Scenario

logger = logging.getLogger(__name__)

WAKEUP_PAD_MS = 0.01  # keeps float deadline comparisons on the safe side
REBOOT_POWER_DELAY_MS = 200.0
FIRST_POWER_ON_MS = 100.0


class TeRuntime:
    """One simulated terminal: state machine + modem + link endpoint."""

    def __init__(self, te: Terminal, modem: Modem, link: SimLink):
        self.te = te
        self.modem = modem
        self.link = link
        self.wakeup_event = None
        self.watchdog_due = None

    @property
    def te_id(self) -> int:
        return self.te.config.te_id


class World:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.clock = VirtualClock()
        self.records: list[dict] = []
        self.rng = SplitMix64(scenario.seed)
        self.hmi = Hmi(HmiConfig(**scenario.hmi))
        self.smsgw = SmsGateway(rng=self.rng.derive("sms"), **scenario.sms)
        self.tes: dict[int, TeRuntime] = {}
        self._next_sensor_id = 1
        self._pump_scheduled = False
        self._gw_event = None
        self.publish_hook = None  # serve mode: called with each stream record
        self.frame_tx_hook = None  # serve mode: socket-backed terminals
        self._build_fleet()
        self._schedule_scenario()

    # -- construction -------------------------------------------------------

    def _build_fleet(self) -> None:
        s = self.scenario
        scripts: dict[int, list] = {}
        for entry in s.sms_scripts:
            scripts.setdefault(entry["te_id"], []).append(
                (float(entry["at_ms"]), entry["text"])
            )
        for te_id in range(1, s.te_count + 1):
            te_kwargs = dict(s.te_defaults)
            te_kwargs.update(s.te_overrides.get(te_id, {}))
            config = TeConfig(te_id=te_id, **te_kwargs)
            link_kwargs = dict(s.link)
            link_kwargs.update(s.link_overrides.get(te_id, {}))
            link = SimLink(LinkParams(**link_kwargs), self.rng.derive(f"link/{te_id}"))
            modem_kwargs = dict(s.modem)
            modem_kwargs.setdefault("bandwidth_bps", link.params.bandwidth_bps)
            modem = Modem(ModemConfig(**modem_kwargs), link_gate=self._gate_for(link))
            runtime = TeRuntime(Terminal(config), modem, link)
            self.tes[te_id] = runtime
            self.smsgw.register_terminal(
                config.sms_address, self._sms_handler_for(runtime)
            )
            self.smsgw.register_agent(
                UserAgent(
                    phone=config.user_phone,
                    target=config.sms_address,
                    script=sorted(scripts.get(te_id, [])),
                )
            )

    @staticmethod
    def _gate_for(link: SimLink):
        return lambda now: not link.in_outage(now)

    def _sms_handler_for(self, rt: TeRuntime):
        def handler(text, from_addr, now):
            return rt.te.handle_sms(text, from_addr, now)

        return handler

    def _schedule_scenario(self) -> None:
        s = self.scenario
        for te_id, rt in self.tes.items():
            t0 = FIRST_POWER_ON_MS + (te_id - 1) * s.boot_stagger_ms
            self._schedule_power_on(rt, t0)
            if rt.modem.config.watchdog_toggle_period_s > 0:
                period = rt.modem.config.watchdog_toggle_period_s * 1000.0
                self.clock.schedule(t0 + period, self._watchdog_toggle, rt, period)
        for entry in s.sensor_events:
            event = SensorEvent(
                zone=entry["zone"],
                kind=AlarmType[entry["kind"]],
                at_ms=float(entry["at_ms"]),
                event_id=self._next_sensor_id,
            )
            self._next_sensor_id += 1
            self.clock.schedule(event.at_ms, self._fire_sensor, entry["te_id"], event)
        for entry in s.power_events:
            self.clock.schedule(
                float(entry["at_ms"]), self._power_event, entry["te_id"], entry["event"]
            )
        for entry in s.operator_script:
            self.clock.schedule(float(entry["at_ms"]), self._operator_action, entry)
        self.clock.schedule(s.sweep_period_ms, self._sweep)
        self._reschedule_gateway()

    # -- recording ------------------------------------------------------------

    def record(self, kind: str, **fields) -> dict:
        entry = {"t": self.clock.now_ms, "kind": kind}
        entry.update(fields)
        self.records.append(entry)
        return entry

    def header(self) -> dict:
        return {
            "schema": "cpas-trace/1",
            "generator": f"cpas-sim {__version__}",
            "seed": self.scenario.seed,
            "scenario": self.scenario.to_dict(),
        }

    # -- power / boot -----------------------------------------------------------

    def _schedule_power_on(self, rt: TeRuntime, at_ms: float) -> None:
        self.clock.schedule(at_ms, self._power_on, rt)

    def _power_on(self, rt: TeRuntime) -> None:
        now = self.clock.now_ms
        rt.te.power_on(now)
        self.record("te_power", te=rt.te_id, on=True)
        rt.modem.apply_pin_event(PinEvent.POWER_ON, now)
        self.clock.schedule(now + 10.0, self._pin, rt, PinEvent.IGNITION_LOW)
        self.clock.schedule(now + 111.0, self._pin, rt, PinEvent.IGNITION_HIGH)

    def _pin(self, rt: TeRuntime, event: PinEvent) -> None:
        rt.modem.apply_pin_event(event, self.clock.now_ms)
        self._arm_modem_check(rt)

    def _watchdog_toggle(self, rt: TeRuntime, period: float) -> None:
        now = self.clock.now_ms
        modem = rt.modem
        if modem.powered and modem.state is not ModemState.BOOTING:
            modem.apply_pin_event(PinEvent.IGNITION_LOW, now)
            self.clock.schedule(now + 101.0, self._pin, rt, PinEvent.IGNITION_HIGH)
        self.clock.schedule(now + period, self._watchdog_toggle, rt, period)

    def _power_event(self, te_id: int, event: str) -> None:
        rt = self.tes[te_id]
        now = self.clock.now_ms
        if event == "off":
            rt.modem.apply_pin_event(PinEvent.POWER_OFF, now)
            rt.te.power_off(now)
            self.record("te_power", te=te_id, on=False)
        else:
            self._power_on(rt)

    # -- modem lifecycle ----------------------------------------------------------

    def _arm_modem_check(self, rt: TeRuntime) -> None:
        deadline = rt.modem.next_deadline_ms()
        if deadline is None:
            return
        self.clock.schedule(max(deadline, self.clock.now_ms), self._modem_check, rt)

    def _modem_check(self, rt: TeRuntime) -> None:
        now = self.clock.now_ms
        for event in rt.modem.tick(now):
            if event.kind == BOOT_COMPLETED:
                self.record("boot_completed", te=rt.te_id)
                self._connect(rt)
            elif event.kind == IDLE_DISCONNECTED:
                self.record("idle_disconnect", te=rt.te_id)
                self._interact(rt, lambda: rt.te.on_link_down(now))
        self._arm_modem_check(rt)

    def _ensure_tcp(self, rt: TeRuntime) -> bool:
        """Walk the modem through its dialog as far as it will go."""
        now = self.clock.now_ms
        modem = rt.modem
        if not modem.powered or modem.state is ModemState.BOOTING:
            return False
        if modem.state is ModemState.TCP_CLOSED_ABNORMAL:
            modem.submit_at("AT+CIPCLOSE", now)
        if modem.state is ModemState.SIM_READY:
            modem.submit_at("AT", now)
            modem.submit_at("AT+CREG?", now)
        if modem.state is ModemState.NET_REGISTERED:
            modem.submit_at("AT+CGATT=1", now)
        if modem.state is ModemState.GPRS_ATTACHED:
            host, port = rt.te.config.hmi_addr
            modem.submit_at(f"AT+CIPSTART={host},{port}", now)
        return modem.state is ModemState.TCP_OPEN

    def _connect(self, rt: TeRuntime) -> None:
        if not rt.te.powered:
            return
        if self._ensure_tcp(rt):
            self._interact(rt, lambda: rt.te.on_connected(self.clock.now_ms))

    # -- terminal interaction -------------------------------------------------------

    def _interact(self, rt: TeRuntime, fn) -> None:
        """Run one terminal entry point, then execute its actions and
        re-arm timers, recording any phase transition."""
        before = rt.te.phase
        actions = fn()
        if rt.te.phase is not before:
            self.record("te_phase", te=rt.te_id, phase=rt.te.phase.value)
        self._execute(rt, actions)
        self._reschedule_te(rt)

    def _execute(self, rt: TeRuntime, actions) -> None:
        now = self.clock.now_ms
        for action in actions:
            if isinstance(action, SendFrame):
                self._send_frame(rt, action)
            elif isinstance(action, SendSms):
                msg = self.smsgw.submit(
                    rt.te.config.sms_address, action.to, action.text, now
                )
                self.record(
                    "sms_submitted",
                    te=rt.te_id,
                    msg_id=msg.msg_id,
                    to=action.to,
                    sensor_event_id=action.sensor_event_id,
                    lost=msg.lost,
                )
                self._reschedule_gateway()
            elif isinstance(action, Disconnect):
                self.record("disconnect", te=rt.te_id)
                rt.modem.submit_at("AT+CIPCLOSE", now)
            elif isinstance(action, Reconnect):
                self.record("reconnect", te=rt.te_id)
                self._connect(rt)
            elif isinstance(action, Reboot):
                self.record("te_power", te=rt.te_id, on=False)
                rt.modem.apply_pin_event(PinEvent.POWER_OFF, now)
                rt.te.power_off(now)
                self.clock.schedule(now + REBOOT_POWER_DELAY_MS, self._power_on, rt)
            else:
                raise TypeError(f"unknown action {action!r}")

    def _send_frame(self, rt: TeRuntime, action: SendFrame) -> None:
        now = self.clock.now_ms
        data = encode_frame(action.message, rt.te_id, action.seq)
        kind = msg_type_of(action.message).name
        try:
            result = rt.modem.tcp_send(data, now)
        except NotConnected:
            self.record("send_failure", te=rt.te_id, msg=kind, seq=action.seq,
                        reason="not_connected")
            if not action.is_response:
                self._interact(rt, lambda: rt.te.on_send_result(False, action, now))
            return
        if not result.accepted:
            rt.link.refused()
            self.record("send_failure", te=rt.te_id, msg=kind, seq=action.seq,
                        reason=result.reason)
            if not action.is_response:
                self._interact(rt, lambda: rt.te.on_send_result(False, action, now))
            return
        self.record(
            "frame_sent",
            te=rt.te_id,
            msg=kind,
            seq=action.seq,
            retransmission=action.retransmission,
            sensor_event_id=action.sensor_event_id,
        )
        status, arrive_at = rt.link.send_up(result.completes_at_ms)
        if status == DELIVERED:
            self.clock.schedule(arrive_at, self._deliver_up, rt, data)
        else:
            self.record("frame_dropped", te=rt.te_id, direction="up", msg=kind,
                        seq=action.seq)
        if not action.is_response:
            self._interact(rt, lambda: rt.te.on_send_result(True, action, now))
        else:
            self._reschedule_te(rt)

    def _reschedule_te(self, rt: TeRuntime) -> None:
        deadlines = [rt.te.next_wakeup(), rt.modem.next_deadline_ms()]
        deadlines = [d for d in deadlines if d is not None]
        if not deadlines:
            return
        target = min(deadlines) + WAKEUP_PAD_MS
        event = rt.wakeup_event
        if event is not None and not event.cancelled and event.at_ms <= target:
            return
        if event is not None:
            self.clock.cancel(event)
        rt.wakeup_event = self.clock.schedule(
            max(target, self.clock.now_ms), self._te_wakeup, rt
        )

    def _te_wakeup(self, rt: TeRuntime) -> None:
        rt.wakeup_event = None
        now = self.clock.now_ms
        for event in rt.modem.tick(now):
            if event.kind == BOOT_COMPLETED:
                self.record("boot_completed", te=rt.te_id)
                self._connect(rt)
            elif event.kind == IDLE_DISCONNECTED:
                self.record("idle_disconnect", te=rt.te_id)
                self._interact(rt, lambda: rt.te.on_link_down(now))
        self._interact(rt, lambda: rt.te.on_timer(now))

    # -- sensors ---------------------------------------------------------------------

    def _fire_sensor(self, te_id: int, event: SensorEvent) -> None:
        rt = self.tes[te_id]
        now = self.clock.now_ms
        actions = rt.te.on_sensor(event, now)
        self.record(
            "sensor_event",
            te=te_id,
            sensor_event_id=event.event_id,
            zone=event.zone,
            sensor=event.kind.name,
            raised=bool(actions),
        )
        self._execute(rt, actions)
        self._reschedule_te(rt)

    def inject_sensor(self, te_id: int, zone: int, kind: str) -> int:
        """Runtime injection (serve mode): fire a sensor right now."""
        event = SensorEvent(
            zone=zone,
            kind=AlarmType[kind],
            at_ms=self.clock.now_ms,
            event_id=self._next_sensor_id,
        )
        self._next_sensor_id += 1
        self._fire_sensor(te_id, event)
        return event.event_id

    def kill_te(self, te_id: int) -> None:
        self._power_event(te_id, "off")

    def revive_te(self, te_id: int) -> None:
        self._power_event(te_id, "on")

    # -- uplink/downlink ----------------------------------------------------------------

    def _deliver_up(self, rt: TeRuntime, data: bytes) -> None:
        rt.link.delivered("up")
        decoded = decode_frame(data)
        self.record(
            "frame_received",
            te=decoded.te_id,
            msg=msg_type_of(decoded.message).name,
            seq=decoded.seq,
        )
        self.hmi.enqueue_frame(
            decoded.te_id, decoded.message, decoded.seq, remote=f"sim://te/{decoded.te_id}"
        )
        self._ensure_pump()

    def _ensure_pump(self) -> None:
        if not self._pump_scheduled:
            self._pump_scheduled = True
            self.clock.schedule(self.clock.now_ms, self._pump)

    def _pump(self) -> None:
        self._pump_scheduled = False
        now = self.clock.now_ms
        processed, result = self.hmi.pump(now)
        for pub in result.published:
            self._publish(pub)
        for reply in result.replies:
            self._send_down(reply)
        if self.hmi.pending_frames():
            self._pump_scheduled = True
            self.clock.schedule(now + self.scenario.pump_period_ms, self._pump)

    def _publish(self, pub: dict) -> None:
        if pub["type"] == "alarm":
            event = pub["event"]
            self.record(
                "alarm_published",
                te=event["te_id"],
                event_id=event["event_id"],
                zone=event["zone"],
                alarm_type=event["alarm_type"],
                te_timestamp=event["te_timestamp"],
                frame_seq=event["frame_seq"],
            )
        else:
            self.record(
                "te_state_change", te=pub["te_id"], state=pub["state"]
            )
        if self.publish_hook is not None:
            self.publish_hook(pub)

    def _send_down(self, reply: Reply) -> None:
        if self.frame_tx_hook is not None and self.frame_tx_hook(reply):
            return  # a socket-backed terminal consumed it
        rt = self.tes.get(reply.te_id)
        if rt is None:
            return
        now = self.clock.now_ms
        data = encode_frame(reply.message, reply.te_id, reply.seq)
        kind = msg_type_of(reply.message).name
        self.record("frame_down_sent", te=reply.te_id, msg=kind, seq=reply.seq)
        status, arrive_at = rt.link.send_down(len(data), now)
        if status == DELIVERED:
            self.clock.schedule(arrive_at, self._deliver_down, rt, data)
        else:
            self.record("frame_dropped", te=reply.te_id, direction="down", msg=kind,
                        seq=reply.seq)

    def _deliver_down(self, rt: TeRuntime, data: bytes) -> None:
        rt.link.delivered("down")
        decoded = decode_frame(data)
        now = self.clock.now_ms
        self.record(
            "frame_down_received",
            te=rt.te_id,
            msg=msg_type_of(decoded.message).name,
            seq=decoded.seq,
        )
        self._interact(rt, lambda: rt.te.on_frame(decoded.message, decoded.seq, now))

    # -- SMS ---------------------------------------------------------------------------

    def _reschedule_gateway(self) -> None:
        due = self.smsgw.next_due()
        if due is None:
            return
        event = self._gw_event
        if event is not None and not event.cancelled and event.at_ms <= due + WAKEUP_PAD_MS:
            return
        if event is not None:
            self.clock.cancel(event)
        self._gw_event = self.clock.schedule(
            max(due, self.clock.now_ms), self._gateway_wakeup
        )

    def _gateway_wakeup(self) -> None:
        self._gw_event = None
        delivered = self.smsgw.drive_agents(self.clock.now_ms)
        for msg in delivered:
            self.record("sms_delivered", msg_id=msg.msg_id, to=msg.to_addr)
        self._reschedule_gateway()

    # -- HMI housekeeping -----------------------------------------------------------------

    def _sweep(self) -> None:
        now = self.clock.now_ms
        flipped, result = self.hmi.sweep_offline(now)
        for pub in result.published:
            self._publish(pub)
        self.clock.schedule(now + self.scenario.sweep_period_ms, self._sweep)

    def _operator_action(self, entry: dict) -> None:
        now = self.clock.now_ms
        operator = entry.get("operator", "operator")
        action = entry["action"]
        try:
            if action == "control":
                request, result = self.hmi.send_control(
                    entry["te_id"], entry["cmd"], operator, now
                )
            elif action == "status":
                request, result = self.hmi.query_status(entry["te_id"], operator, now)
            else:
                event = self.hmi.ack_alarm(entry["event_id"], operator, now)
                self.record("alarm_acked", event_id=event.event_id, by=event.acked_by)
                return
        except Exception as exc:
            self.record("operator_error", action=action, error=str(exc))
            return
        self.record(
            "operator_request",
            request_id=request.request_id,
            te=request.te_id,
            req=request.kind,
            cmd=request.cmd,
            state=request.state,
        )
        for reply in result.replies:
            self._send_down(reply)
        if request.deadline is not None:
            self.clock.schedule(request.deadline + WAKEUP_PAD_MS, self._expire_requests)

    def _expire_requests(self) -> None:
        for request in self.hmi.expire_requests(self.clock.now_ms):
            self.record(
                "operator_timeout", request_id=request.request_id, te=request.te_id
            )

    # -- run ----------------------------------------------------------------------------

    def run(self) -> None:
        self.clock.run_until(self.scenario.duration_ms)
        self._finalize()

    def _finalize(self) -> None:
        sessions = [
            {
                "te_id": s.te_id,
                "state": s.state,
                "last_seen": s.last_seen,
                "offline_transitions": s.offline_transitions,
                "heartbeats": s.heartbeats,
                "armed": s.armed,
            }
            for s in sorted(self.hmi.sessions.values(), key=lambda s: s.te_id)
        ]
        tes = [
            {
                "te_id": rt.te_id,
                "phase": rt.te.phase.value,
                "powered": rt.te.powered,
                "reconnects": rt.te.reconnect_count,
                "frames_sent": rt.te.frames_sent,
                "armed": rt.te.armed,
            }
            for rt in sorted(self.tes.values(), key=lambda r: r.te_id)
        ]
        links = [
            dict(te_id=rt.te_id, **rt.link.conservation())
            for rt in sorted(self.tes.values(), key=lambda r: r.te_id)
        ]
        self.record(
            "final",
            sessions=sessions,
            tes=tes,
            links=links,
            sms=self.smsgw.dump(),
            requests=[r.to_dict() for r in self.hmi.requests.values()],
            events=[e.to_dict() for e in self.hmi.events],
            ignored_frames=self.hmi.ignored_frames,
            processed_frames=self.hmi.processed_frames,
        )
