"""Live-mode tests: operator API over HTTP, SSE stream, control round trip,
runtime injection, and the binary-protocol TCP listener."""

import json
import socket
import time
import urllib.request

import pytest

from cpas.harness.scenario import SCHEMA, scenario_from_dict
from cpas.harness.serve import LiveServer
from cpas.protocol import (
    DecodedFrame,
    FrameDecoder,
    Heartbeat,
    Register,
    RegisterAck,
    StatusByte,
    encode_frame,
)

SPEED = 40.0  # virtual seconds per wall second: keeps these tests quick


@pytest.fixture
def live():
    scenario = scenario_from_dict(
        {
            "schema": SCHEMA,
            "name": "live-test",
            "seed": 11,
            "duration_ms": 600_000,
            "te_count": 3,
            "te_defaults": {"initially_armed": True},
        }
    )
    server = LiveServer(scenario, speed=SPEED, api_port=0, te_port=0)
    server.start()
    try:
        _wait_for_online(server, count=3)
        yield server
    finally:
        server.stop()


def _api(server, path, body=None, timeout=15):
    url = f"http://127.0.0.1:{server.api_port}{path}"
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def _wait_for_online(server, count, timeout=20.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        status, tes = _api(server, "/tes")
        if status == 200 and sum(1 for t in tes if t["state"] == "online") >= count:
            return tes
        time.sleep(0.1)
    raise AssertionError(f"fleet did not reach {count} online terminals")


def test_list_tes_and_status_query(live):
    status, tes = _api(live, "/tes")
    assert status == 200 and len(tes) == 3
    assert all(t["state"] == "online" for t in tes)
    status, fields = _api(live, "/tes/1/status")
    assert status == 200
    assert fields["armed"] is True and 0 <= fields["battery"] <= 15


def test_control_disarm_round_trip(live):
    status, result = _api(live, "/tes/2/control", {"cmd": "disarm", "operator": "g"})
    assert status == 200
    assert result["result"] == "ok" and result["result_code"] == 0
    status, fields = _api(live, "/tes/2/status")
    assert status == 200 and fields["armed"] is False
    status, request = _api(live, f"/requests/{result['request_id']}")
    assert status == 200 and request["state"] == "ok"


def test_control_unknown_te_is_404(live):
    status, body = _api(live, "/tes/99/control", {"cmd": "arm"})
    assert status == 404 and "error" in body


def test_injected_alarm_flows_to_events_stream_and_ack(live):
    # subscribe to the stream first
    url = f"http://127.0.0.1:{live.api_port}/stream"
    stream = urllib.request.urlopen(url, timeout=15)

    status, body = _api(live, "/inject", {"action": "sensor", "te_id": 1, "zone": 4,
                                          "sensor": "SMOKE"})
    assert status == 200 and body["ok"]

    # the alarm arrives on the stream
    record = None
    deadline = time.monotonic() + 15
    while time.monotonic() < deadline:
        line = stream.readline().decode()
        if line.startswith("data: "):
            candidate = json.loads(line[len("data: "):])
            if candidate.get("type") == "alarm":
                record = candidate
                break
    stream.close()
    assert record is not None, "no alarm record on the stream"
    event = record["event"]
    assert event["te_id"] == 1 and event["zone"] == 4

    # and through the polling API, where it can be acknowledged once
    status, events = _api(live, "/events?since=0")
    assert status == 200 and events[-1]["event_id"] == event["event_id"]
    status, acked = _api(live, f"/events/{event['event_id']}/ack",
                         {"operator": "guard-a"})
    assert status == 200 and acked["acked_by"] == "guard-a"
    status, acked2 = _api(live, f"/events/{event['event_id']}/ack",
                          {"operator": "guard-b"})
    assert acked2["acked_by"] == "guard-a"  # first operator wins


def test_kill_te_goes_offline_within_threshold(live):
    status, body = _api(live, "/inject", {"action": "kill-te", "te_id": 3})
    assert status == 200
    # offline threshold 180 s virtual + sweep 5 s -> < 5 s wall at x40
    deadline = time.monotonic() + 15
    seen_offline = False
    while time.monotonic() < deadline:
        _, tes = _api(live, "/tes")
        state = {t["te_id"]: t["state"] for t in tes}
        if state.get(3) == "offline":
            seen_offline = True
            break
        time.sleep(0.2)
    assert seen_offline, "killed terminal never flipped offline"


def test_te_tcp_listener_speaks_binary_protocol(live):
    # an external terminal (id outside the simulated fleet) registers and
    # heartbeats over a real socket
    te_id = 501
    with socket.create_connection(("127.0.0.1", live.te_port), timeout=10) as sock:
        sock.sendall(encode_frame(Register(fw_version=2, zone_count=4), te_id, 0))
        decoder = FrameDecoder()
        frames = []
        sock.settimeout(10)
        while not frames:
            frames = decoder.feed(sock.recv(4096))
        assert isinstance(frames[0], DecodedFrame)
        assert frames[0].message == RegisterAck() and frames[0].seq == 0

        sock.sendall(encode_frame(Heartbeat(StatusByte(armed=True)), te_id, 1))
        acks = []
        while not acks:
            acks = decoder.feed(sock.recv(4096))
        assert acks[0].seq == 1

    status, tes = _api(live, "/tes")
    assert any(t["te_id"] == te_id and t["state"] == "online" for t in tes)
