"""Report derivation: trace records in, report JSON / table / CSV out.

The report is a pure function of (trace header, trace records), which is
what makes ``replay`` an audit: rebuilding the report from a trace must
reproduce it byte for byte.  Latency is measured from the sensor event to
the publication of the alarm on the operator stream, in virtual
milliseconds.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .. import __version__

REPORT_SCHEMA = "cpas-report/1"
LATENCY_DEFINITION = "sensor event to operator stream publication, virtual ms"


def quantile(values: list[float], q: float) -> float:
    """Linear-interpolation quantile of an unsorted list."""
    if not values:
        raise ValueError("quantile of empty list")
    ordered = sorted(values)
    if len(ordered) == 1:
        return ordered[0]
    pos = q * (len(ordered) - 1)
    lo = math.floor(pos)
    frac = pos - lo
    if lo + 1 >= len(ordered):
        return ordered[-1]
    return ordered[lo] * (1.0 - frac) + ordered[lo + 1] * frac


def _round(value, digits=3):
    return None if value is None else round(value, digits)


def build_report(header: dict, records: list[dict]) -> dict:
    scenario = header["scenario"]
    duration = float(scenario["duration_ms"])

    sensor_events = {}  # id -> record
    alarm_seq_to_sensor = {}  # (te, seq) -> sensor_event_id
    published = []  # alarm_published records
    sms_submitted = {}  # msg_id -> record
    sms_delivered = {}  # msg_id -> t
    hb_sent = {}  # (te, seq) -> first sent t
    hb_acked = set()  # (te, seq)
    disconnects = {}  # te -> [t]
    reconnects = {}  # te -> [t]
    online_phases = {}  # te -> [t] of TE-side online transitions
    state_changes = []  # HMI-side te_state_change records
    idle_disconnects = 0
    send_failures = 0
    frames_dropped = 0
    final = None

    for rec in records:
        kind = rec["kind"]
        if kind == "sensor_event":
            sensor_events[rec["sensor_event_id"]] = rec
        elif kind == "frame_sent":
            if rec["msg"] == "ALARM" and rec.get("sensor_event_id") is not None:
                alarm_seq_to_sensor.setdefault(
                    (rec["te"], rec["seq"]), rec["sensor_event_id"]
                )
            elif rec["msg"] == "HEARTBEAT":
                hb_sent.setdefault((rec["te"], rec["seq"]), rec["t"])
        elif kind == "frame_down_received":
            if rec["msg"] == "HEARTBEAT_ACK":
                hb_acked.add((rec["te"], rec["seq"]))
        elif kind == "alarm_published":
            published.append(rec)
        elif kind == "sms_submitted":
            sms_submitted[rec["msg_id"]] = rec
        elif kind == "sms_delivered":
            sms_delivered[rec["msg_id"]] = rec["t"]
        elif kind == "disconnect":
            disconnects.setdefault(rec["te"], []).append(rec["t"])
        elif kind == "reconnect":
            reconnects.setdefault(rec["te"], []).append(rec["t"])
        elif kind == "te_phase":
            if rec["phase"] == "online":
                online_phases.setdefault(rec["te"], []).append(rec["t"])
        elif kind == "te_state_change":
            state_changes.append(rec)
        elif kind == "idle_disconnect":
            idle_disconnects += 1
        elif kind == "send_failure":
            send_failures += 1
        elif kind == "frame_dropped":
            frames_dropped += 1
        elif kind == "final":
            final = rec
    if final is None:
        raise ValueError("trace has no final record; incomplete run")

    # -- alarms: join sensor -> publication -> alert SMS ----------------------
    publication_by_sensor = {}
    for rec in published:
        sensor_id = alarm_seq_to_sensor.get((rec["te"], rec["frame_seq"]))
        if sensor_id is not None:
            publication_by_sensor.setdefault(sensor_id, []).append(rec)
    alert_sms_by_sensor = {}
    for msg_id, rec in sms_submitted.items():
        sensor_id = rec.get("sensor_event_id")
        if sensor_id is not None:
            alert_sms_by_sensor.setdefault(sensor_id, []).append(rec)

    alarms = []
    for sensor_id in sorted(sensor_events):
        sensor = sensor_events[sensor_id]
        if not sensor["raised"]:
            continue
        pubs = publication_by_sensor.get(sensor_id, [])
        pub = pubs[0] if pubs else None
        alerts = alert_sms_by_sensor.get(sensor_id, [])
        delivered_at = None
        for alert in alerts:
            delivered_at = sms_delivered.get(alert["msg_id"])
            if delivered_at is not None:
                break
        alarms.append(
            {
                "sensor_event_id": sensor_id,
                "te_id": sensor["te"],
                "zone": sensor["zone"],
                "sensor": sensor["sensor"],
                "sensor_at_ms": sensor["t"],
                "published_at_ms": pub["t"] if pub else None,
                "event_id": pub["event_id"] if pub else None,
                "publications": len(pubs),
                "latency_ms": _round(pub["t"] - sensor["t"]) if pub else None,
                "sms_delivered_at_ms": delivered_at,
                "sms_latency_ms": _round(delivered_at - sensor["t"])
                if delivered_at is not None
                else None,
                "sms_alerts": len(alerts),
                "sms_delivered": sum(
                    1 for a in alerts if sms_delivered.get(a["msg_id"]) is not None
                ),
            }
        )

    latencies = [a["latency_ms"] for a in alarms if a["latency_ms"] is not None]
    alarm_latency = {
        "count": len(latencies),
        "p50_ms": _round(quantile(latencies, 0.50)) if latencies else None,
        "p95_ms": _round(quantile(latencies, 0.95)) if latencies else None,
        "max_ms": _round(max(latencies)) if latencies else None,
        "unpublished": sum(1 for a in alarms if a["published_at_ms"] is None),
    }

    # -- heartbeats ------------------------------------------------------------
    per_te_hb = {}
    for (te, seq), t in hb_sent.items():
        stats = per_te_hb.setdefault(te, {"sent": 0, "acked": 0})
        stats["sent"] += 1
        if (te, seq) in hb_acked:
            stats["acked"] += 1
    heartbeats = {
        "sent": sum(s["sent"] for s in per_te_hb.values()),
        "acked": sum(s["acked"] for s in per_te_hb.values()),
        "per_te": {str(te): per_te_hb[te] for te in sorted(per_te_hb)},
    }

    # -- reconnects --------------------------------------------------------------
    reconnect_per_te = {
        str(te): len(ts) for te, ts in sorted(disconnects.items())
    }
    reconnect_summary = {
        "total": sum(len(ts) for ts in disconnects.values()),
        "per_te": reconnect_per_te,
    }

    # -- offline transitions and downtime -------------------------------------------
    offline_per_te = {}
    downtime_per_te = {}
    offline_since = {}
    for rec in state_changes:
        te = rec["te"]
        if rec["state"] == "offline":
            offline_per_te[te] = offline_per_te.get(te, 0) + 1
            offline_since[te] = rec["t"]
        else:
            since = offline_since.pop(te, None)
            if since is not None:
                downtime_per_te[te] = downtime_per_te.get(te, 0.0) + (rec["t"] - since)
    for te, since in offline_since.items():
        downtime_per_te[te] = downtime_per_te.get(te, 0.0) + (duration - since)

    sessions_final = final["sessions"]
    links_total = {"sent": 0, "delivered": 0, "dropped": 0, "refused": 0, "in_flight": 0}
    for link in final["links"]:
        for key in links_total:
            links_total[key] += link[key]

    sms_all = final["sms"]
    alert_latencies = [
        m["delivered_at"] - m["submitted_at"]
        for m in sms_all
        if m["delivered_at"] is not None
    ]

    report = {
        "schema": REPORT_SCHEMA,
        "generator": f"cpas-sim {__version__}",
        "latency_definition": LATENCY_DEFINITION,
        "scenario": {
            "name": scenario["name"],
            "seed": scenario["seed"],
            "duration_ms": duration,
            "te_count": scenario["te_count"],
        },
        "alarms": alarms,
        "alarm_latency": alarm_latency,
        "heartbeats": heartbeats,
        "reconnects": reconnect_summary,
        "offline": {
            "transitions": sum(offline_per_te.values()),
            "per_te": {str(te): n for te, n in sorted(offline_per_te.items())},
            "downtime_ms": {
                str(te): _round(ms) for te, ms in sorted(downtime_per_te.items())
            },
        },
        "idle_disconnects": idle_disconnects,
        "send_failures": send_failures,
        "frames_dropped": frames_dropped,
        "sessions": {
            "count": len(sessions_final),
            "online_at_end": sum(1 for s in sessions_final if s["state"] == "online"),
        },
        "links": links_total,
        "sms": {
            "submitted": len(sms_all),
            "delivered": sum(1 for m in sms_all if m["delivered_at"] is not None),
            "lost": sum(1 for m in sms_all if m["lost"]),
            "p50_latency_ms": _round(quantile(alert_latencies, 0.5))
            if alert_latencies
            else None,
        },
        "operator_requests": final["requests"],
        "events": final["events"],
        "per_te": _per_te_table(final, per_te_hb, disconnects, offline_per_te,
                                downtime_per_te),
    }
    report["assertions"] = evaluate_assertions(scenario, report, records, final)
    report["passed"] = all(a["passed"] for a in report["assertions"])
    return report


def _per_te_table(final, per_te_hb, disconnects, offline_per_te, downtime_per_te):
    rows = []
    sessions = {s["te_id"]: s for s in final["sessions"]}
    for te in final["tes"]:
        te_id = te["te_id"]
        session = sessions.get(te_id)
        hb = per_te_hb.get(te_id, {"sent": 0, "acked": 0})
        rows.append(
            {
                "te_id": te_id,
                "phase": te["phase"],
                "session_state": session["state"] if session else None,
                "heartbeats_sent": hb["sent"],
                "heartbeats_acked": hb["acked"],
                "reconnects": len(disconnects.get(te_id, [])),
                "offline_transitions": offline_per_te.get(te_id, 0),
                "downtime_ms": _round(downtime_per_te.get(te_id, 0.0)),
            }
        )
    return rows


# -- assertions ------------------------------------------------------------------


def evaluate_assertions(scenario, report, records, final) -> list[dict]:
    results = []
    for spec in scenario.get("assertions", []):
        kind = spec["type"]
        fn = _ASSERTIONS[kind]
        passed, detail = fn(spec, scenario, report, records, final)
        results.append({"type": kind, "params": spec, "passed": passed, "detail": detail})
    return results


def _assert_latency_p95(spec, scenario, report, records, final):
    stats = report["alarm_latency"]
    limit = spec["value"]
    if stats["count"] == 0:
        return False, "no alarms published"
    ok = stats["p95_ms"] <= limit and stats["unpublished"] == 0
    return ok, f"p95 {stats['p95_ms']} ms vs limit {limit} ms, unpublished {stats['unpublished']}"


def _assert_latency_max(spec, scenario, report, records, final):
    stats = report["alarm_latency"]
    if stats["count"] == 0:
        return False, "no alarms published"
    ok = stats["max_ms"] <= spec["value"] and stats["unpublished"] == 0
    return ok, f"max {stats['max_ms']} ms vs limit {spec['value']} ms"


def _assert_all_published(spec, scenario, report, records, final):
    bad = [
        a["sensor_event_id"] for a in report["alarms"] if a["publications"] != 1
    ]
    return not bad, f"sensor events without exactly one published event: {bad}"


def _assert_double_protection(spec, scenario, report, records, final):
    bad = []
    for alarm in report["alarms"]:
        if alarm["publications"] != 1 or alarm["sms_delivered"] != 1:
            bad.append(
                (alarm["sensor_event_id"], alarm["publications"], alarm["sms_delivered"])
            )
    return not bad, (
        "each raised alarm must reach the operator exactly once and the user "
        f"exactly once; violations (id, publications, sms): {bad}"
    )


def _assert_no_false_offline(spec, scenario, report, records, final):
    killed = {
        e["te_id"] for e in scenario.get("power_events", []) if e["event"] == "off"
    }
    false_offline = [
        te for te, n in report["offline"]["per_te"].items() if int(te) not in killed
    ]
    return not false_offline, f"unexpected offline transitions for TEs: {false_offline}"


def _assert_no_idle_disconnects(spec, scenario, report, records, final):
    n = report["idle_disconnects"]
    return n == 0, f"{n} idle disconnects"


def _assert_heartbeats_per_te(spec, scenario, report, records, final):
    low, high = spec["min"], spec["max"]
    bad = {}
    for te_id in range(1, scenario["te_count"] + 1):
        sent = report["heartbeats"]["per_te"].get(str(te_id), {"sent": 0})["sent"]
        if not low <= sent <= high:
            bad[te_id] = sent
    return not bad, f"heartbeat counts outside [{low}, {high}]: {bad}"


def _assert_all_heartbeats_acked(spec, scenario, report, records, final):
    grace = spec.get("grace_ms", 2000)
    horizon = float(scenario["duration_ms"]) - grace
    sent = {}
    acked = set()
    for rec in records:
        if rec["kind"] == "frame_sent" and rec["msg"] == "HEARTBEAT":
            sent.setdefault((rec["te"], rec["seq"]), rec["t"])
        elif rec["kind"] == "frame_down_received" and rec["msg"] == "HEARTBEAT_ACK":
            acked.add((rec["te"], rec["seq"]))
    ripe_unacked = [
        key for key, t in sent.items() if t <= horizon and key not in acked
    ]
    return not ripe_unacked, (
        f"{len(ripe_unacked)} heartbeats older than {grace} ms before the end "
        f"were never acked (first few: {sorted(ripe_unacked)[:5]})"
    )


def _assert_reconnect_pairs(spec, scenario, report, records, final):
    expected = spec["value"]
    te_ids = spec.get("te_ids") or list(range(1, scenario["te_count"] + 1))
    disconnects = {}
    reconnects = {}
    for rec in records:
        if rec["kind"] == "disconnect":
            disconnects[rec["te"]] = disconnects.get(rec["te"], 0) + 1
        elif rec["kind"] == "reconnect":
            reconnects[rec["te"]] = reconnects.get(rec["te"], 0) + 1
    bad = {}
    for te_id in te_ids:
        pair = (disconnects.get(te_id, 0), reconnects.get(te_id, 0))
        if pair != (expected, expected):
            bad[te_id] = pair
    return not bad, f"(disconnects, reconnects) != ({expected}, {expected}): {bad}"


def _assert_online_within(spec, scenario, report, records, final):
    window_ms = spec["value"]
    outages = scenario.get("link", {}).get("forced_outages", [])
    if not outages:
        return True, "no outage windows configured"
    online_ts = {}
    disconnect_ts = {}
    for rec in records:
        if rec["kind"] == "te_phase" and rec["phase"] == "online":
            online_ts.setdefault(rec["te"], []).append(rec["t"])
        elif rec["kind"] == "disconnect":
            disconnect_ts.setdefault(rec["te"], []).append(rec["t"])
    bad = []
    for start, end in outages:
        for te_id in range(1, scenario["te_count"] + 1):
            hit = any(start <= t <= end + window_ms for t in disconnect_ts.get(te_id, []))
            if not hit:
                continue  # this terminal rode the outage out
            recovered = any(end < t <= end + window_ms for t in online_ts.get(te_id, []))
            if not recovered:
                bad.append((te_id, start))
    return not bad, f"terminals not back online within {window_ms} ms of outage end: {bad}"


def _assert_session_count(spec, scenario, report, records, final):
    count = report["sessions"]["count"]
    return count == spec["value"], f"{count} sessions, expected {spec['value']}"


def _assert_all_online_at_end(spec, scenario, report, records, final):
    sessions = report["sessions"]
    ok = sessions["online_at_end"] == sessions["count"]
    return ok, f"{sessions['online_at_end']}/{sessions['count']} online at end"


_ASSERTIONS = {
    "alarm_latency_p95_max_ms": _assert_latency_p95,
    "alarm_latency_max_ms": _assert_latency_max,
    "all_alarms_published": _assert_all_published,
    "double_protection": _assert_double_protection,
    "no_false_offline": _assert_no_false_offline,
    "no_idle_disconnects": _assert_no_idle_disconnects,
    "heartbeats_per_te": _assert_heartbeats_per_te,
    "all_heartbeats_acked": _assert_all_heartbeats_acked,
    "reconnect_pairs_per_te": _assert_reconnect_pairs,
    "online_within_after_outages_ms": _assert_online_within,
    "session_count": _assert_session_count,
    "all_sessions_online_at_end": _assert_all_online_at_end,
}


# -- serialization -----------------------------------------------------------------


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(report_json(report))


def render_table(report: dict) -> str:
    """Human-readable summary: the fleet-level numbers plus per-TE rows."""
    lines = []
    scenario = report["scenario"]
    lines.append(
        f"scenario {scenario['name']!r}  seed {scenario['seed']}  "
        f"{scenario['te_count']} TEs  {scenario['duration_ms']:.0f} ms virtual"
    )
    lines.append(f"latency metric: {report['latency_definition']}")
    stats = report["alarm_latency"]
    lines.append(
        f"alarms: {stats['count']} published"
        + (f", {stats['unpublished']} missing" if stats["unpublished"] else "")
        + (
            f"   p50 {stats['p50_ms']} ms   p95 {stats['p95_ms']} ms   "
            f"max {stats['max_ms']} ms"
            if stats["count"]
            else ""
        )
    )
    hb = report["heartbeats"]
    lines.append(f"heartbeats: {hb['sent']} sent, {hb['acked']} acked")
    lines.append(
        f"reconnects: {report['reconnects']['total']}   "
        f"offline transitions: {report['offline']['transitions']}   "
        f"idle disconnects: {report['idle_disconnects']}"
    )
    sms = report["sms"]
    lines.append(
        f"sms: {sms['submitted']} submitted, {sms['delivered']} delivered, "
        f"{sms['lost']} lost"
    )
    links = report["links"]
    lines.append(
        f"frames: {links['sent']} sent, {links['delivered']} delivered, "
        f"{links['dropped']} dropped, {links['refused']} refused, "
        f"{links['in_flight']} in flight at end"
    )
    per_te = report["per_te"]
    if len(per_te) <= 60:
        lines.append("")
        lines.append(
            f"{'te':>5} {'phase':<13} {'session':<8} {'hb sent':>8} {'hb ack':>7} "
            f"{'reconn':>7} {'offline':>8} {'downtime ms':>12}"
        )
        for row in per_te:
            lines.append(
                f"{row['te_id']:>5} {row['phase']:<13} {str(row['session_state']):<8} "
                f"{row['heartbeats_sent']:>8} {row['heartbeats_acked']:>7} "
                f"{row['reconnects']:>7} {row['offline_transitions']:>8} "
                f"{str(row['downtime_ms']):>12}"
            )
    else:
        lines.append(f"(per-TE table suppressed for {len(per_te)} terminals)")
    lines.append("")
    for result in report["assertions"]:
        mark = "PASS" if result["passed"] else "FAIL"
        lines.append(f"[{mark}] {result['type']}: {result['detail']}")
    lines.append("overall: " + ("PASS" if report["passed"] else "FAIL"))
    return "\n".join(lines)


def write_csv(report: dict, outdir) -> list[Path]:
    """Delimited companions to the report: per-alarm and per-TE tables."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    alarms_path = outdir / "alarms.csv"
    with alarms_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sensor_event_id", "te_id", "zone", "sensor", "sensor_at_ms",
                "published_at_ms", "latency_ms", "event_id",
                "sms_delivered_at_ms", "sms_latency_ms",
            ]
        )
        for a in report["alarms"]:
            writer.writerow(
                [
                    a["sensor_event_id"], a["te_id"], a["zone"], a["sensor"],
                    a["sensor_at_ms"], a["published_at_ms"], a["latency_ms"],
                    a["event_id"], a["sms_delivered_at_ms"], a["sms_latency_ms"],
                ]
            )
    paths.append(alarms_path)

    tes_path = outdir / "tes.csv"
    with tes_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "te_id", "phase", "session_state", "heartbeats_sent",
                "heartbeats_acked", "reconnects", "offline_transitions",
                "downtime_ms",
            ]
        )
        for row in report["per_te"]:
            writer.writerow(
                [
                    row["te_id"], row["phase"], row["session_state"],
                    row["heartbeats_sent"], row["heartbeats_acked"],
                    row["reconnects"], row["offline_transitions"],
                    row["downtime_ms"],
                ]
            )
    paths.append(tes_path)
    return paths
