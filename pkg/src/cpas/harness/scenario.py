"""Scenario files: schema, validation, and builders for the stock scenarios.

A scenario is a JSON document (schema ``cpas-scenario/1``) describing the
fleet, the link impairments, the scripted sensor/SMS/operator activity and
the assertions the run must satisfy.  See docs/scenario.md for the full
field reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = "cpas-scenario/1"

SENSOR_KINDS = ("IR", "SMOKE", "TEMPERATURE")
OPERATOR_ACTIONS = ("control", "status", "ack_alarm")
POWER_EVENTS = ("off", "on")
ASSERTION_TYPES = (
    "alarm_latency_p95_max_ms",
    "alarm_latency_max_ms",
    "double_protection",
    "all_alarms_published",
    "no_false_offline",
    "no_idle_disconnects",
    "heartbeats_per_te",
    "all_heartbeats_acked",
    "reconnect_pairs_per_te",
    "online_within_after_outages_ms",
    "session_count",
    "all_sessions_online_at_end",
)


class ScenarioParseError(Exception):
    def __init__(self, message: str, field_path: str | None = None, line: int | None = None):
        detail = message
        if field_path:
            detail = f"{field_path}: {message}"
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.field_path = field_path
        self.line = line


@dataclass
class Scenario:
    name: str
    seed: int
    duration_ms: float
    te_count: int
    te_defaults: dict = field(default_factory=dict)
    te_overrides: dict = field(default_factory=dict)  # te_id -> overrides
    link: dict = field(default_factory=dict)
    link_overrides: dict = field(default_factory=dict)
    modem: dict = field(default_factory=dict)
    hmi: dict = field(default_factory=dict)
    sms: dict = field(default_factory=dict)
    boot_stagger_ms: float = 5.0
    pump_period_ms: float = 10.0
    sweep_period_ms: float = 5000.0
    sensor_events: list = field(default_factory=list)
    sms_scripts: list = field(default_factory=list)
    operator_script: list = field(default_factory=list)
    power_events: list = field(default_factory=list)
    assertions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "name": self.name,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "te_count": self.te_count,
            "te_defaults": self.te_defaults,
            "te_overrides": self.te_overrides,
            "link": self.link,
            "link_overrides": self.link_overrides,
            "modem": self.modem,
            "hmi": self.hmi,
            "sms": self.sms,
            "boot_stagger_ms": self.boot_stagger_ms,
            "pump_period_ms": self.pump_period_ms,
            "sweep_period_ms": self.sweep_period_ms,
            "sensor_events": self.sensor_events,
            "sms_scripts": self.sms_scripts,
            "operator_script": self.operator_script,
            "power_events": self.power_events,
            "assertions": self.assertions,
        }


def _require(condition: bool, message: str, field_path: str):
    if not condition:
        raise ScenarioParseError(message, field_path=field_path)


def scenario_from_dict(data: dict, source: str = "<dict>") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    schema = data.get("schema")
    _require(schema == SCHEMA, f"expected schema {SCHEMA!r}, got {schema!r}", "schema")
    for key in ("name", "seed", "duration_ms", "te_count"):
        _require(key in data, "required field missing", key)
    _require(isinstance(data["seed"], int), "seed must be an integer", "seed")
    _require(
        isinstance(data["duration_ms"], (int, float)) and data["duration_ms"] > 0,
        "duration_ms must be a positive number",
        "duration_ms",
    )
    _require(
        isinstance(data["te_count"], int) and data["te_count"] >= 1,
        "te_count must be an integer >= 1",
        "te_count",
    )
    scenario = Scenario(
        name=str(data["name"]),
        seed=data["seed"],
        duration_ms=float(data["duration_ms"]),
        te_count=data["te_count"],
        te_defaults=dict(data.get("te_defaults", {})),
        te_overrides={int(k): dict(v) for k, v in data.get("te_overrides", {}).items()},
        link=dict(data.get("link", {})),
        link_overrides={int(k): dict(v) for k, v in data.get("link_overrides", {}).items()},
        modem=dict(data.get("modem", {})),
        hmi=dict(data.get("hmi", {})),
        sms=dict(data.get("sms", {})),
        boot_stagger_ms=float(data.get("boot_stagger_ms", 5.0)),
        pump_period_ms=float(data.get("pump_period_ms", 10.0)),
        sweep_period_ms=float(data.get("sweep_period_ms", 5000.0)),
        sensor_events=list(data.get("sensor_events", [])),
        sms_scripts=list(data.get("sms_scripts", [])),
        operator_script=list(data.get("operator_script", [])),
        power_events=list(data.get("power_events", [])),
        assertions=list(data.get("assertions", [])),
    )
    _validate_scripts(scenario)
    return scenario


def _validate_scripts(s: Scenario) -> None:
    def check_entry(entry, i, kind, required):
        path = f"{kind}[{i}]"
        _require(isinstance(entry, dict), "must be an object", path)
        for key in required:
            _require(key in entry, f"missing field {key!r}", path)
        at_ms = entry["at_ms"]
        _require(
            isinstance(at_ms, (int, float)) and 0 <= at_ms < s.duration_ms,
            f"at_ms must lie within [0, duration_ms={s.duration_ms:g})",
            f"{path}.at_ms",
        )
        if "te_id" in entry:
            _require(
                isinstance(entry["te_id"], int) and 1 <= entry["te_id"] <= s.te_count,
                f"te_id must be within 1..te_count={s.te_count}",
                f"{path}.te_id",
            )

    for i, entry in enumerate(s.sensor_events):
        check_entry(entry, i, "sensor_events", ("at_ms", "te_id", "zone", "kind"))
        _require(
            entry["kind"] in SENSOR_KINDS,
            f"kind must be one of {SENSOR_KINDS}",
            f"sensor_events[{i}].kind",
        )
        _require(
            isinstance(entry["zone"], int) and 0 <= entry["zone"] <= 255,
            "zone must be an integer 0..255",
            f"sensor_events[{i}].zone",
        )
    for i, entry in enumerate(s.sms_scripts):
        check_entry(entry, i, "sms_scripts", ("at_ms", "te_id", "text"))
    for i, entry in enumerate(s.operator_script):
        check_entry(entry, i, "operator_script", ("at_ms", "action"))
        _require(
            entry["action"] in OPERATOR_ACTIONS,
            f"action must be one of {OPERATOR_ACTIONS}",
            f"operator_script[{i}].action",
        )
    for i, entry in enumerate(s.power_events):
        check_entry(entry, i, "power_events", ("at_ms", "te_id", "event"))
        _require(
            entry["event"] in POWER_EVENTS,
            f"event must be one of {POWER_EVENTS}",
            f"power_events[{i}].event",
        )
    for i, entry in enumerate(s.assertions):
        path = f"assertions[{i}]"
        _require(isinstance(entry, dict) and "type" in entry, "missing type", path)
        _require(
            entry["type"] in ASSERTION_TYPES,
            f"unknown assertion type {entry['type']!r}",
            f"{path}.type",
        )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno) from exc
    return scenario_from_dict(data, source=str(path))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")


# -- stock scenarios ----------------------------------------------------------


def baseline_scenario(seed: int = 42) -> Scenario:
    """45 terminals, default links, 10 scripted alarms."""
    kinds = ["IR", "SMOKE", "TEMPERATURE"]
    sensor_events = [
        {
            "at_ms": 20_000 + 8_000 * i,
            "te_id": i + 1,
            "zone": (i % 8) + 1,
            "kind": kinds[i % 3],
        }
        for i in range(10)
    ]
    return scenario_from_dict(
        {
            "schema": SCHEMA,
            "name": "baseline-45te",
            "seed": seed,
            "duration_ms": 120_000,
            "te_count": 45,
            "te_defaults": {"initially_armed": True},
            "sensor_events": sensor_events,
            "assertions": [
                {"type": "alarm_latency_p95_max_ms", "value": 2000},
                {"type": "all_alarms_published"},
                {"type": "double_protection"},
                {"type": "no_false_offline"},
            ],
        }
    )


def congestion_scenario(seed: int = 42, bursts: int = 3, te_count: int = 3) -> Scenario:
    """Outage bursts sized to force four-plus consecutive send failures.

    Each burst opens just before a scripted smoke alarm, so the terminal has
    traffic to fail: the alarm send and its 2 s retries fail four times in a
    row, tripping exactly one disconnect+reconnect, and the re-registration
    succeeds shortly after the window closes.
    """
    windows = [(20_000.0 + 20_000.0 * i, 27_000.0 + 20_000.0 * i) for i in range(bursts)]
    sensor_events = [
        {"at_ms": start + 100, "te_id": te, "zone": 1, "kind": "SMOKE"}
        for (start, _end) in windows
        for te in range(1, te_count + 1)
    ]
    return scenario_from_dict(
        {
            "schema": SCHEMA,
            "name": "congestion-bursts",
            "seed": seed,
            "duration_ms": windows[-1][1] + 60_000,
            "te_count": te_count,
            "link": {"forced_outages": [[a, b] for a, b in windows]},
            "sensor_events": sensor_events,
            "assertions": [
                {"type": "reconnect_pairs_per_te", "value": bursts},
                {"type": "online_within_after_outages_ms", "value": 10_000},
                {"type": "all_alarms_published"},
                {"type": "no_false_offline"},
            ],
        }
    )


def keepalive_scenario(seed: int = 42, te_count: int = 3) -> Scenario:
    """Thirty quiet minutes: heartbeats only, no idle disconnects allowed."""
    return scenario_from_dict(
        {
            "schema": SCHEMA,
            "name": "keepalive-30min",
            "seed": seed,
            "duration_ms": 1_800_000,
            "te_count": te_count,
            "assertions": [
                {"type": "heartbeats_per_te", "min": 29, "max": 31},
                {"type": "no_idle_disconnects"},
                {"type": "no_false_offline"},
                {"type": "all_heartbeats_acked", "grace_ms": 2000},
            ],
        }
    )


def scale_scenario(seed: int = 42, te_count: int = 2000) -> Scenario:
    """The full fleet heartbeating for ten minutes."""
    return scenario_from_dict(
        {
            "schema": SCHEMA,
            "name": "scale-2000te",
            "seed": seed,
            "duration_ms": 600_000,
            "te_count": te_count,
            "assertions": [
                {"type": "no_false_offline"},
                {"type": "session_count", "value": te_count},
                {"type": "all_sessions_online_at_end"},
                {"type": "all_heartbeats_acked", "grace_ms": 2000},
            ],
        }
    )


STOCK_SCENARIOS = {
    "baseline": baseline_scenario,
    "congestion": congestion_scenario,
    "keepalive": keepalive_scenario,
    "scale": scale_scenario,
}
