"""Terminal state machine tests: alarm dual-channel behaviour, the
consecutive-failure reconnect rule, heartbeat cadence, control handling,
and SMS command authorization."""

import pytest

from cpas.protocol import (
    Alarm,
    AlarmAck,
    AlarmType,
    Control,
    ControlAck,
    ControlCmd,
    Heartbeat,
    HeartbeatAck,
    Register,
    RegisterAck,
    StatusQuery,
    StatusReport,
)
from cpas.terminal import (
    Disconnect,
    Phase,
    Reboot,
    Reconnect,
    SendFrame,
    SendSms,
    SensorEvent,
    TeConfig,
    Terminal,
)


def online_terminal(**overrides) -> Terminal:
    te = Terminal(TeConfig(te_id=1, **overrides))
    te.power_on(0.0)
    actions = te.on_connected(100.0)
    assert len(actions) == 1 and isinstance(actions[0].message, Register)
    te.on_send_result(True, actions[0], 100.0)
    te.on_frame(RegisterAck(), actions[0].seq, 400.0)
    assert te.phase is Phase.ONLINE
    return te


def frames(actions):
    return [a for a in actions if isinstance(a, SendFrame)]


def smses(actions):
    return [a for a in actions if isinstance(a, SendSms)]


# -- sensors: both channels -------------------------------------------------


def test_armed_ir_raises_on_both_channels():
    te = online_terminal(initially_armed=True)
    actions = te.on_sensor(SensorEvent(zone=1, kind=AlarmType.IR, at_ms=5000.0), 5000.0)
    assert len(actions) == 2
    frame, sms = actions
    assert isinstance(frame, SendFrame) and isinstance(frame.message, Alarm)
    assert frame.message == Alarm(zone=1, alarm_type=AlarmType.IR, ts=5)
    assert isinstance(sms, SendSms)
    assert sms.text == "ALARM ZONE 1 TYPE IR AT 5"
    assert sms.to == te.config.user_phone


def test_disarmed_ir_is_suppressed():
    te = online_terminal()
    assert te.on_sensor(SensorEvent(1, AlarmType.IR, 5000.0), 5000.0) == []


def test_disarmed_smoke_still_alarms():
    te = online_terminal()
    actions = te.on_sensor(SensorEvent(2, AlarmType.SMOKE, 5000.0), 5000.0)
    assert len(actions) == 2
    assert isinstance(frames(actions)[0].message, Alarm)


def test_fire_sensor_flag_off_suppresses_disarmed_smoke():
    te = online_terminal(fire_sensors_always_alarm=False)
    assert te.on_sensor(SensorEvent(2, AlarmType.SMOKE, 5000.0), 5000.0) == []


def test_second_alarm_queues_behind_pending():
    te = online_terminal(initially_armed=True)
    first = te.on_sensor(SensorEvent(1, AlarmType.IR, 5000.0), 5000.0)
    te.on_send_result(True, frames(first)[0], 5000.0)
    second = te.on_sensor(SensorEvent(2, AlarmType.SMOKE, 6000.0), 6000.0)
    # SMS goes out immediately; the frame waits for the pending slot
    assert frames(second) == [] and len(smses(second)) == 1
    ack_actions = te.on_frame(AlarmAck(), frames(first)[0].seq, 7000.0)
    sent = frames(ack_actions)
    assert len(sent) == 1 and sent[0].message.zone == 2


# -- send failures and the reconnect rule -----------------------------------


def test_failure_below_threshold_schedules_retry():
    te = online_terminal(initially_armed=True)
    te.fail_count = 1
    frame = frames(te.on_sensor(SensorEvent(1, AlarmType.IR, 5000.0), 5000.0))[0]
    actions = te.on_send_result(False, frame, 5000.0)
    assert actions == []
    assert te.fail_count == 2
    assert te.pending.retry_due_at == 5000.0 + 2000.0
    # retry fires through the timer
    retries = frames(te.on_timer(7000.0))
    assert len(retries) == 1
    assert retries[0].seq == frame.seq and retries[0].retransmission


def test_fourth_consecutive_failure_triggers_reconnect():
    te = online_terminal()
    te.fail_count = 3
    hb = frames(te.on_timer(60_400.0))[0]
    assert isinstance(hb.message, Heartbeat)
    actions = te.on_send_result(False, hb, 60_400.0)
    assert actions == [Disconnect(), Reconnect()]
    assert te.fail_count == 0
    assert te.phase is Phase.RECONNECTING


def test_success_resets_failure_counter():
    te = online_terminal()
    te.fail_count = 2
    hb = frames(te.on_timer(60_400.0))[0]
    te.on_send_result(True, hb, 60_400.0)
    assert te.fail_count == 0


def test_exactly_threshold_plus_one_failures_per_reconnect():
    # drive the terminal against a link that always fails: every reconnect
    # must be preceded by exactly retry_threshold+1 consecutive failures
    te = online_terminal()
    failures_between = []
    failures = 0
    pending_frames = frames(te.on_timer(60_400.0))
    for _ in range(400):
        if not pending_frames:
            now = 60_400.0 + len(failures_between) * 10_000.0 + failures * 2000.0
            pending_frames = frames(te.on_timer(now)) or pending_frames
            if not pending_frames:
                # reconnect completed; re-register to resume
                reg = te.on_connected(now)
                pending_frames = frames(reg)
        frame = pending_frames.pop(0)
        failures += 1
        actions = te.on_send_result(False, frame, 1000.0 * failures)
        if Disconnect() in actions:
            failures_between.append(failures)
            failures = 0
            reg = te.on_connected(1000.0 * failures)
            pending_frames = frames(reg)
        else:
            pending_frames = [te._as_retransmission(te.pending.frame)]
    assert len(failures_between) >= 10
    assert all(count == te.config.retry_threshold + 1 for count in failures_between)


def test_pending_alarm_survives_reconnect_and_resends():
    te = online_terminal(initially_armed=True)
    frame = frames(te.on_sensor(SensorEvent(3, AlarmType.IR, 5000.0), 5000.0))[0]
    for i in range(4):
        actions = te.on_send_result(False, frame, 5000.0 + i * 2000.0)
    assert Reconnect() in actions
    reg = frames(te.on_connected(20_000.0))[0]
    te.on_send_result(True, reg, 20_000.0)
    resent = frames(te.on_frame(RegisterAck(), reg.seq, 20_300.0))
    assert len(resent) == 1
    assert resent[0].message == frame.message
    assert resent[0].seq == frame.seq  # byte-identical retransmission
    assert resent[0].retransmission


def test_alarm_retransmits_on_ack_timeout_until_acked():
    te = online_terminal(initially_armed=True)
    frame = frames(te.on_sensor(SensorEvent(1, AlarmType.IR, 5000.0), 5000.0))[0]
    te.on_send_result(True, frame, 5000.0)
    # no ack: retransmit at +5 s, again at +10 s
    first = frames(te.on_timer(10_000.0))
    assert len(first) == 1 and first[0].seq == frame.seq
    te.on_send_result(True, first[0], 10_000.0)
    second = frames(te.on_timer(15_000.0))
    assert len(second) == 1
    te.on_frame(AlarmAck(), frame.seq, 15_100.0)
    assert te.pending is None
    assert frames(te.on_timer(25_000.0)) == []  # nothing left to retransmit


def test_stale_alarm_ack_is_ignored():
    te = online_terminal(initially_armed=True)
    first = frames(te.on_sensor(SensorEvent(1, AlarmType.IR, 5000.0), 5000.0))[0]
    te.on_send_result(True, first, 5000.0)
    te.on_frame(AlarmAck(), first.seq, 5300.0)
    second = frames(te.on_sensor(SensorEvent(2, AlarmType.IR, 6000.0), 6000.0))[0]
    te.on_send_result(True, second, 6000.0)
    # duplicate ack for the first alarm must not clear the second
    te.on_frame(AlarmAck(), first.seq, 6200.0)
    assert te.pending is not None and te.pending.frame.seq == second.seq


# -- heartbeats ---------------------------------------------------------------


def test_heartbeat_at_period_boundary():
    te = online_terminal()
    te.last_heartbeat_at = 0.0
    assert frames(te.on_timer(59_999.0)) == []
    beats = frames(te.on_timer(60_000.0))
    assert len(beats) == 1 and isinstance(beats[0].message, Heartbeat)


def test_no_heartbeat_while_reconnecting():
    te = online_terminal()
    te.phase = Phase.RECONNECTING
    te.last_heartbeat_at = 0.0
    assert te.on_timer(120_000.0) == []


def test_heartbeat_carries_status():
    te = online_terminal(initially_armed=True, battery_level=9)
    beat = frames(te.on_timer(60_400.0))[0]
    assert beat.message.status.armed and beat.message.status.battery == 9


def test_seq_strictly_increases_for_minted_frames():
    te = online_terminal(initially_armed=True)
    seqs = []
    for minute in range(1, 6):
        for action in frames(te.on_timer(400.0 + minute * 60_000.0)):
            seqs.append(action.seq)
            te.on_send_result(True, action, 400.0 + minute * 60_000.0)
    actions = te.on_sensor(SensorEvent(1, AlarmType.IR, 400_000.0), 400_000.0)
    seqs.append(frames(actions)[0].seq)
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


# -- inbound control ----------------------------------------------------------


def test_control_disarm_acks_and_disarms():
    te = online_terminal(initially_armed=True)
    actions = te.on_frame(Control(cmd=ControlCmd.DISARM), 17, 5000.0)
    assert not te.armed
    ack = frames(actions)[0]
    assert ack.message == ControlAck(result=0)
    assert ack.seq == 17 and ack.is_response


def test_control_unknown_cmd_acks_0xff():
    te = online_terminal()
    actions = te.on_frame(Control(cmd=0x77), 3, 5000.0)
    assert frames(actions)[0].message == ControlAck(result=0xFF)


def test_control_reboot_acks_then_reboots():
    te = online_terminal()
    actions = te.on_frame(Control(cmd=ControlCmd.REBOOT), 4, 5000.0)
    assert isinstance(actions[0], SendFrame)
    assert actions[1] == Reboot()


def test_control_siren_toggles():
    te = online_terminal()
    te.on_frame(Control(cmd=ControlCmd.SIREN_ON), 1, 0.0)
    assert te.siren_on
    te.on_frame(Control(cmd=ControlCmd.SIREN_OFF), 2, 0.0)
    assert not te.siren_on


def test_status_query_reports_current_state():
    te = online_terminal(initially_armed=True, battery_level=7)
    actions = te.on_frame(StatusQuery(), 9, 65_000.0)
    report = frames(actions)[0]
    assert isinstance(report.message, StatusReport)
    assert report.message.status.armed and report.message.status.battery == 7
    assert report.message.uptime_s == 65
    assert report.seq == 9 and report.is_response


def test_alarm_ack_without_pending_is_noop():
    te = online_terminal()
    assert te.on_frame(AlarmAck(), 123, 5000.0) == []


def test_heartbeat_ack_is_silent():
    te = online_terminal()
    assert te.on_frame(HeartbeatAck(), 0, 5000.0) == []


# -- SMS ------------------------------------------------------------------------


def test_sms_arm_from_owner():
    te = online_terminal()
    reply = te.handle_sms("ARM", te.config.user_phone, 1000.0)
    assert te.armed and reply == "OK ARMED"


def test_sms_from_stranger_ignored():
    te = online_terminal(initially_armed=True)
    assert te.handle_sms("STATUS", "stranger-99", 1000.0) is None
    assert te.handle_sms("DISARM", "stranger-99", 1000.0) is None
    assert te.armed


def test_sms_disarm_idempotent():
    te = online_terminal()
    assert not te.armed
    assert te.handle_sms("DISARM", te.config.user_phone, 1000.0) == "OK DISARMED"


def test_sms_status_reply():
    te = online_terminal(initially_armed=True, battery_level=11)
    assert (
        te.handle_sms("STATUS", te.config.user_phone, 1000.0) == "STATUS ARMED BAT 11"
    )


def test_sms_gibberish_silently_dropped():
    te = online_terminal()
    assert te.handle_sms("MAKE COFFEE", te.config.user_phone, 1000.0) is None


# -- misc -----------------------------------------------------------------------


def test_unpowered_terminal_is_inert():
    te = Terminal(TeConfig(te_id=1))
    assert te.on_sensor(SensorEvent(1, AlarmType.SMOKE, 0.0), 0.0) == []
    assert te.on_timer(10**9) == []
    assert te.handle_sms("ARM", te.config.user_phone, 0.0) is None


def test_reboot_preserves_unacked_alarm_via_backlog():
    te = online_terminal(initially_armed=True)
    frame = frames(te.on_sensor(SensorEvent(5, AlarmType.IR, 5000.0), 5000.0))[0]
    te.on_send_result(True, frame, 5000.0)
    te.power_on(10_000.0)  # reboot before the ack arrived
    assert len(te.alarm_backlog) == 1
    assert te.alarm_backlog[0].zone == 5


def test_config_validation():
    with pytest.raises(ValueError):
        TeConfig(te_id=1, retry_threshold=0)
