"""Impaired GPRS link between one terminal and the server.

Uplink serialization is the modem's business (it owns the radio's transmit
queue); this model adds one-way latency with optional jitter, silent
in-flight drops, forced outage windows during which the radio refuses
sends outright, and downlink serialization at the same GPRS rate.  Frame
counts are conserved: sent == delivered + dropped + in flight at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..modem import GPRS_MAX_RATE_BPS, GPRS_MIN_RATE_BPS

DELIVERED = "delivered"
DROPPED = "dropped"


@dataclass
class LinkParams:
    latency_ms: float = 150.0  # each way
    jitter_ms: float = 0.0
    drop_prob: float = 0.0
    bandwidth_bps: int = 25_000
    forced_outages: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be within [0, 1]")
        if not GPRS_MIN_RATE_BPS <= self.bandwidth_bps <= GPRS_MAX_RATE_BPS:
            raise ValueError(
                f"bandwidth_bps {self.bandwidth_bps} outside "
                f"[{GPRS_MIN_RATE_BPS}, {GPRS_MAX_RATE_BPS}]"
            )
        self.forced_outages = tuple(
            (float(a), float(b)) for a, b in self.forced_outages
        )
        for start, end in self.forced_outages:
            if end <= start:
                raise ValueError(f"outage window ({start}, {end}) is empty")


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    refused: int = 0


class SimLink:
    """One terminal's path to the server and back."""

    def __init__(self, params: LinkParams, rng):
        self.params = params
        self._rng = rng
        self._down_busy_until = 0.0
        self.up = LinkStats()
        self.down = LinkStats()
        self._in_flight = 0

    def in_outage(self, now: float) -> bool:
        return any(start <= now < end for start, end in self.params.forced_outages)

    def _latency(self) -> float:
        latency = self.params.latency_ms
        if self.params.jitter_ms > 0.0:
            latency += self._rng.random() * self.params.jitter_ms
        return latency

    def send_up(self, ready_at: float) -> tuple[str, float]:
        """Uplink transfer of a frame already serialized by the modem.

        Returns (DELIVERED, arrival time) or (DROPPED, drop decision time).
        """
        self.up.sent += 1
        if self.params.drop_prob > 0.0 and self._rng.random() < self.params.drop_prob:
            self.up.dropped += 1
            return DROPPED, ready_at
        self._in_flight += 1
        return DELIVERED, ready_at + self._latency()

    def send_down(self, nbytes: int, now: float) -> tuple[str, float]:
        """Downlink transfer: serialize at the GPRS rate, then fly."""
        self.down.sent += 1
        serialization = nbytes * 8 * 1000.0 / self.params.bandwidth_bps
        start = max(now, self._down_busy_until)
        self._down_busy_until = start + serialization
        if self.in_outage(now) or (
            self.params.drop_prob > 0.0 and self._rng.random() < self.params.drop_prob
        ):
            self.down.dropped += 1
            return DROPPED, now
        self._in_flight += 1
        return DELIVERED, self._down_busy_until + self._latency()

    def delivered(self, direction: str) -> None:
        """Book a scheduled arrival that actually fired."""
        self._in_flight -= 1
        (self.up if direction == "up" else self.down).delivered += 1

    def refused(self) -> None:
        self.up.refused += 1

    def conservation(self) -> dict:
        return {
            "sent": self.up.sent + self.down.sent,
            "delivered": self.up.delivered + self.down.delivered,
            "dropped": self.up.dropped + self.down.dropped,
            "refused": self.up.refused,
            "in_flight": self._in_flight,
        }
