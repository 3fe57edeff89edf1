"""Report figures: rendered to PNG files next to the CSV output.

Kept intentionally plain: a latency histogram, a per-terminal
activity/downtime bar chart, and (for small fleets) an online/offline
timeline in the black-online / red-offline convention the console uses.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

ONLINE_COLOR = "black"
OFFLINE_COLOR = "red"
TIMELINE_MAX_TES = 60


def render_figures(report: dict, records: list[dict] | None, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    paths += _latency_hist(report, outdir)
    paths += _fleet_activity(report, outdir)
    if records is not None:
        paths += _timeline(report, records, outdir)
    return paths


def _latency_hist(report: dict, outdir: Path) -> list[Path]:
    latencies = [a["latency_ms"] for a in report["alarms"] if a["latency_ms"] is not None]
    if not latencies:
        return []
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(latencies, bins=min(30, max(5, len(latencies))), color="0.3", edgecolor="white")
    stats = report["alarm_latency"]
    for value, label, style in (
        (stats["p50_ms"], "p50", "--"),
        (stats["p95_ms"], "p95", "-."),
    ):
        if value is not None:
            ax.axvline(value, linestyle=style, color=OFFLINE_COLOR, linewidth=1)
            ax.text(value, ax.get_ylim()[1] * 0.95, f" {label}={value:.0f}ms",
                    color=OFFLINE_COLOR, fontsize=8, va="top")
    ax.set_xlabel("sensor-to-operator latency (virtual ms)")
    ax.set_ylabel("alarms")
    ax.set_title(f"Alarm latency, scenario {report['scenario']['name']!r}")
    path = outdir / "alarm_latency.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def _fleet_activity(report: dict, outdir: Path) -> list[Path]:
    rows = report["per_te"]
    if not rows:
        return []
    te_ids = [row["te_id"] for row in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.bar(te_ids, [row["heartbeats_sent"] for row in rows], color="0.6",
            label="heartbeats sent")
    ax1.bar(te_ids, [row["heartbeats_acked"] for row in rows], color="0.2",
            label="acked", width=0.5)
    ax1.set_ylabel("heartbeats")
    ax1.legend(fontsize=8)
    ax2.bar(te_ids, [row["reconnects"] for row in rows], color="0.4",
            label="reconnects")
    ax2.bar(te_ids, [row["downtime_ms"] / 1000.0 if row["downtime_ms"] else 0
                     for row in rows],
            color=OFFLINE_COLOR, alpha=0.6, width=0.5, label="downtime (s)")
    ax2.set_xlabel("terminal id")
    ax2.legend(fontsize=8)
    fig.suptitle(f"Fleet activity, scenario {report['scenario']['name']!r}")
    path = outdir / "fleet_activity.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def _timeline(report: dict, records: list[dict], outdir: Path) -> list[Path]:
    te_count = report["scenario"]["te_count"]
    if te_count > TIMELINE_MAX_TES:
        return []
    duration = report["scenario"]["duration_ms"]
    # reconstruct per-TE online spans from the server's state changes
    changes: dict[int, list[tuple[float, str]]] = {}
    alarms = []
    for rec in records:
        if rec["kind"] == "te_state_change":
            changes.setdefault(rec["te"], []).append((rec["t"], rec["state"]))
        elif rec["kind"] == "alarm_published":
            alarms.append((rec["te"], rec["t"]))
    fig, ax = plt.subplots(figsize=(8, max(3, 0.18 * te_count + 1)))
    for te_id in range(1, te_count + 1):
        spans = changes.get(te_id, [])
        cursor = None
        state = None
        for t, new_state in spans:
            if state == "online":
                ax.hlines(te_id, cursor, t, color=ONLINE_COLOR, linewidth=2)
            elif state == "offline":
                ax.hlines(te_id, cursor, t, color=OFFLINE_COLOR, linewidth=2)
            cursor, state = t, new_state
        if state == "online":
            ax.hlines(te_id, cursor, duration, color=ONLINE_COLOR, linewidth=2)
        elif state == "offline":
            ax.hlines(te_id, cursor, duration, color=OFFLINE_COLOR, linewidth=2)
    if alarms:
        ax.scatter(
            [t for _, t in alarms],
            [te for te, _ in alarms],
            marker="v", color=OFFLINE_COLOR, s=18, zorder=3, label="alarm",
        )
        ax.legend(fontsize=8, loc="upper right")
    ax.set_xlim(0, duration)
    ax.set_xlabel("virtual time (ms)")
    ax.set_ylabel("terminal id")
    ax.set_title("Session timeline (black online, red offline)")
    path = outdir / "te_timeline.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
