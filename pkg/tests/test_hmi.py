"""Server core tests: session lifecycle, alarm dedup, offline sweep,
operator requests, and pump fairness."""

import pytest

from cpas.hmi import (
    Hmi,
    HmiConfig,
    OFFLINE,
    ONLINE,
    REQUEST_OK,
    REQUEST_PENDING,
    REQUEST_QUEUED_OFFLINE,
    REQUEST_TIMEOUT,
    UnknownEvent,
    UnknownTe,
)
from cpas.protocol import (
    Alarm,
    AlarmAck,
    AlarmType,
    Control,
    ControlAck,
    Heartbeat,
    HeartbeatAck,
    Register,
    RegisterAck,
    StatusByte,
    StatusQuery,
    StatusReport,
)


def registered_hmi(te_ids=(1,), now=0.0):
    hmi = Hmi()
    for te_id in te_ids:
        hmi.on_frame(Register(1, 8), te_id, 0, now, remote=f"sim://te/{te_id}")
    return hmi


def test_register_creates_session_and_acks():
    hmi = Hmi()
    result = hmi.on_frame(Register(1, 8), 7, 0, 100.0)
    assert hmi.sessions[7].state == ONLINE
    assert [type(r.message) for r in result.replies] == [RegisterAck]
    assert result.replies[0].seq == 0
    assert any(p["type"] == "te_state_change" for p in result.published)


def test_heartbeat_updates_liveness_and_acks():
    hmi = registered_hmi()
    result = hmi.on_frame(Heartbeat(StatusByte(armed=True, battery=9)), 1, 5, 61_000.0)
    session = hmi.sessions[1]
    assert session.last_seen == 61_000.0
    assert session.armed is True and session.battery == 9
    assert [type(r.message) for r in result.replies] == [HeartbeatAck]
    assert result.replies[0].seq == 5


def test_frame_from_unregistered_te_ignored():
    hmi = Hmi()
    result = hmi.on_frame(Heartbeat(StatusByte()), 99, 0, 0.0)
    assert result.replies == [] and hmi.ignored_frames == 1


def test_alarm_creates_event_and_publishes():
    hmi = registered_hmi()
    result = hmi.on_frame(Alarm(1, AlarmType.IR, 12), 1, 3, 12_500.0)
    assert len(hmi.events) == 1
    event = hmi.events[0]
    assert event.event_id == 1 and event.te_id == 1 and event.zone == 1
    assert event.received_at == 12_500.0
    assert [type(r.message) for r in result.replies] == [AlarmAck]
    assert [p["type"] for p in result.published] == ["alarm"]


def test_duplicate_alarm_reacked_but_no_second_event():
    hmi = registered_hmi()
    hmi.on_frame(Alarm(1, AlarmType.IR, 12), 1, 3, 12_500.0)
    result = hmi.on_frame(Alarm(1, AlarmType.IR, 12), 1, 3, 13_000.0)
    assert len(hmi.events) == 1
    assert [type(r.message) for r in result.replies] == [AlarmAck]
    assert result.published == []


def test_event_ids_monotone_across_terminals():
    hmi = registered_hmi(te_ids=(1, 2, 3))
    for seq, te in enumerate((2, 1, 3, 2)):
        hmi.on_frame(Alarm(1, AlarmType.SMOKE, 1), te, 10 + seq, 1000.0 * seq)
    assert [e.event_id for e in hmi.events] == [1, 2, 3, 4]


def test_sweep_offline_boundary_is_strict():
    hmi = registered_hmi()
    flipped, _ = hmi.sweep_offline(180_000.0)  # exactly the threshold
    assert flipped == [] and hmi.sessions[1].state == ONLINE
    flipped, result = hmi.sweep_offline(181_000.0)
    assert flipped == [1] and hmi.sessions[1].state == OFFLINE
    assert result.published[0] == {
        "type": "te_state_change", "te_id": 1, "state": OFFLINE, "at": 181_000.0,
    }


def test_sweep_flips_once():
    hmi = registered_hmi()
    hmi.sweep_offline(200_000.0)
    flipped, result = hmi.sweep_offline(300_000.0)
    assert flipped == [] and result.published == []
    assert hmi.sessions[1].offline_transitions == 1


def test_register_after_offline_flips_back_online():
    hmi = registered_hmi()
    hmi.sweep_offline(200_000.0)
    result = hmi.on_frame(Register(1, 8), 1, 40, 210_000.0)
    assert hmi.sessions[1].state == ONLINE
    assert any(
        p["type"] == "te_state_change" and p["state"] == ONLINE
        for p in result.published
    )


def test_heartbeat_from_offline_session_revives_it():
    hmi = registered_hmi()
    hmi.sweep_offline(200_000.0)
    result = hmi.on_frame(Heartbeat(StatusByte()), 1, 9, 205_000.0)
    assert hmi.sessions[1].state == ONLINE
    assert any(p["type"] == "te_state_change" for p in result.published)


def test_one_session_per_te_superseded_by_new_connection():
    hmi = registered_hmi()
    hmi.on_frame(Register(2, 4), 1, 50, 500.0, remote="sim://te/1b")
    assert len(hmi.sessions) == 1
    session = hmi.sessions[1]
    assert session.remote == "sim://te/1b" and session.fw_version == 2


# -- operator requests ---------------------------------------------------------


def test_control_round_trip():
    hmi = registered_hmi()
    request, result = hmi.send_control(1, "disarm", "guard-a", 1000.0)
    assert request.state == REQUEST_PENDING
    frame = result.replies[0]
    assert frame.message == Control(cmd=2) and frame.te_id == 1
    hmi.on_frame(ControlAck(result=0), 1, frame.seq, 1400.0)
    assert request.state == REQUEST_OK and request.result_code == 0


def test_control_to_unknown_te_raises():
    hmi = registered_hmi()
    with pytest.raises(UnknownTe):
        hmi.send_control(42, "arm", "guard-a", 0.0)


def test_control_to_offline_te_queued_and_delivered_on_reconnect():
    hmi = registered_hmi()
    hmi.sweep_offline(200_000.0)
    request, result = hmi.send_control(1, "disarm", "guard-a", 201_000.0)
    assert request.state == REQUEST_QUEUED_OFFLINE
    assert result.replies == []  # nothing on the wire yet
    reconnect = hmi.on_frame(Register(1, 8), 1, 0, 250_000.0)
    control_frames = [r for r in reconnect.replies if isinstance(r.message, Control)]
    assert len(control_frames) == 1
    hmi.on_frame(ControlAck(result=0), 1, control_frames[0].seq, 250_400.0)
    assert request.state == REQUEST_OK


def test_request_timeout():
    hmi = registered_hmi()
    request, _ = hmi.send_control(1, "arm", "guard-a", 1000.0)
    assert hmi.expire_requests(10_999.0) == []
    expired = hmi.expire_requests(11_000.0)
    assert expired == [request] and request.state == REQUEST_TIMEOUT


def test_status_query_correlates_report():
    hmi = registered_hmi()
    request, result = hmi.query_status(1, "guard-b", 1000.0)
    frame = result.replies[0]
    assert isinstance(frame.message, StatusQuery)
    hmi.on_frame(
        StatusReport(StatusByte(armed=True, battery=8), uptime_s=120), 1, frame.seq, 1500.0
    )
    assert request.state == REQUEST_OK
    assert request.status_fields == {
        "armed": True, "alarm_active": False, "battery": 8, "uptime_s": 120,
    }
    assert hmi.sessions[1].armed is True


def test_list_tes_snapshot():
    hmi = registered_hmi(te_ids=range(1, 46))
    listing = hmi.list_tes()
    assert len(listing) == 45
    assert listing[0] == {"te_id": 1, "state": ONLINE, "last_seen": 0.0, "armed": None}


def test_ack_alarm_idempotent_first_wins():
    hmi = registered_hmi()
    hmi.on_frame(Alarm(1, AlarmType.IR, 1), 1, 2, 1000.0)
    first = hmi.ack_alarm(1, "guard-a", 2000.0)
    assert first.acked_by == "guard-a"
    second = hmi.ack_alarm(1, "guard-b", 3000.0)
    assert second.acked_by == "guard-a" and second.acked_at == 2000.0


def test_ack_unknown_event():
    hmi = registered_hmi()
    with pytest.raises(UnknownEvent):
        hmi.ack_alarm(5, "guard-a", 0.0)


def test_events_since_filters():
    hmi = registered_hmi()
    for seq in range(4):
        hmi.on_frame(Alarm(1, AlarmType.IR, seq), 1, seq + 10, 1000.0 * seq)
    assert [e.event_id for e in hmi.events_since(2)] == [3, 4]


# -- pump / scheduling ------------------------------------------------------------


def test_pump_drains_three_sessions_in_one_round():
    hmi = Hmi(HmiConfig(round_budget=60))
    for te in (1, 2, 3):
        hmi.on_frame(Register(1, 8), te, 0, 0.0)
    for te in (1, 2, 3):
        for i in range(10):
            hmi.enqueue_frame(te, Heartbeat(StatusByte()), i + 1, "sim")
    processed, result = hmi.pump(1000.0)
    assert processed == 30
    assert hmi.pending_frames() == 0
    assert len(result.replies) == 30


def test_pump_empty_is_zero():
    hmi = registered_hmi()
    assert hmi.pump(0.0)[0] == 0


def test_pump_respects_round_budget():
    hmi = registered_hmi(te_ids=(1,))
    for i in range(250):
        hmi.enqueue_frame(1, Heartbeat(StatusByte()), i, "sim")
    processed, _ = hmi.pump(0.0)
    assert processed == hmi.config.round_budget
    assert hmi.pending_frames() == 250 - processed


def test_pump_serves_all_sessions_without_starvation():
    hmi = Hmi(HmiConfig(max_sessions=4096, round_budget=100))
    count = 2000
    for te in range(1, count + 1):
        hmi.on_frame(Register(1, 8), te, 0, 0.0)
    for te in range(1, count + 1):
        hmi.enqueue_frame(te, Heartbeat(StatusByte()), 1, "sim")
    rounds = 0
    while hmi.pending_frames():
        processed, _ = hmi.pump(float(rounds))
        assert processed > 0
        rounds += 1
    # 2000 one-frame sessions drain at the full round budget per pump
    assert rounds == count // hmi.config.round_budget
    assert all(s.heartbeats == 1 for s in hmi.sessions.values())


def test_pump_processes_register_from_queue():
    hmi = Hmi()
    hmi.enqueue_frame(5, Register(1, 8), 0, "sim://te/5")
    processed, result = hmi.pump(100.0)
    assert processed == 1
    assert hmi.sessions[5].state == ONLINE
    assert any(isinstance(r.message, RegisterAck) for r in result.replies)


def test_max_sessions_cap():
    hmi = Hmi(HmiConfig(max_sessions=2000))
    for te in range(2000):
        hmi.on_frame(Register(1, 1), te, 0, 0.0)
    result = hmi.on_frame(Register(1, 1), 9999, 0, 0.0)
    assert 9999 not in hmi.sessions and result.replies == []


def test_config_validation():
    with pytest.raises(ValueError):
        HmiConfig(max_sessions=10)
    with pytest.raises(ValueError):
        HmiConfig(offline_threshold_s=60)
