"""Simulated SMS channel between each terminal and its user.

The gateway is the second, out-of-band notification path: it is never
affected by GPRS link impairments.  Texts take a fixed (optionally
jittered) latency and can be lost with a configured probability; every
non-lost text is delivered exactly once, in submission order per
(from, to) pair.  User agents run small scripts ("at t, send ARM") and
collect everything addressed to them in an inspectable mailbox.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .protocol import SMS_MAX_CHARS

logger = logging.getLogger(__name__)

DEFAULT_SMS_LATENCY_MS = 3000.0


class TextTooLong(Exception):
    pass


@dataclass
class SmsMessage:
    msg_id: int
    from_addr: str
    to_addr: str
    text: str
    submitted_at: float
    deliver_at: Optional[float] = None  # None once lost
    delivered_at: Optional[float] = None
    lost: bool = False


@dataclass
class UserAgent:
    """Scripted user: sends commands at fixed times, keeps received texts."""

    phone: str
    target: str  # the terminal's SMS address this user commands
    script: list[tuple[float, str]] = field(default_factory=list)
    mailbox: list[SmsMessage] = field(default_factory=list)


class SmsGateway:
    def __init__(
        self,
        latency_ms: float = DEFAULT_SMS_LATENCY_MS,
        jitter_ms: float = 0.0,
        loss_prob: float = 0.0,
        rng=None,
    ):
        if not 0.0 <= loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.loss_prob = loss_prob
        self._rng = rng
        self._next_id = 1
        self._terminals: dict[str, Callable[[str, str, float], Optional[str]]] = {}
        self._agents: dict[str, UserAgent] = {}
        self._script_queue: list[tuple[float, int, UserAgent, str]] = []
        self._deliveries: list[tuple[float, int, SmsMessage]] = []
        self._pair_last_delivery: dict[tuple[str, str], float] = {}
        self.messages: list[SmsMessage] = []

    # -- wiring -----------------------------------------------------------

    def register_terminal(self, addr: str, handler) -> None:
        """``handler(text, from_addr, now) -> reply text | None``."""
        self._terminals[addr] = handler

    def register_agent(self, agent: UserAgent) -> None:
        self._agents[agent.phone] = agent
        for at_ms, text in agent.script:
            heapq.heappush(self._script_queue, (at_ms, self._next_id, agent, text))
            self._next_id += 1

    # -- submission ----------------------------------------------------------

    def submit(self, from_addr: str, to_addr: str, text: str, now: float) -> SmsMessage:
        if len(text) > SMS_MAX_CHARS or not text.isascii():
            raise TextTooLong(f"{len(text)} chars (limit {SMS_MAX_CHARS}, ASCII only)")
        msg = SmsMessage(
            msg_id=self._next_id,
            from_addr=from_addr,
            to_addr=to_addr,
            text=text,
            submitted_at=now,
        )
        self._next_id += 1
        self.messages.append(msg)
        if self.loss_prob > 0.0 and self._draw() < self.loss_prob:
            msg.lost = True
            return msg
        latency = self.latency_ms
        if self.jitter_ms > 0.0:
            latency += self._draw() * self.jitter_ms
        deliver_at = now + latency
        # per-pair FIFO even under jitter
        pair = (from_addr, to_addr)
        floor = self._pair_last_delivery.get(pair)
        if floor is not None and deliver_at < floor:
            deliver_at = floor
        self._pair_last_delivery[pair] = deliver_at
        msg.deliver_at = deliver_at
        heapq.heappush(self._deliveries, (deliver_at, msg.msg_id, msg))
        return msg

    def _draw(self) -> float:
        if self._rng is None:
            raise ValueError("loss/jitter configured but no rng supplied")
        return self._rng.random()

    # -- time ----------------------------------------------------------------

    def next_due(self) -> Optional[float]:
        candidates = []
        if self._script_queue:
            candidates.append(self._script_queue[0][0])
        if self._deliveries:
            candidates.append(self._deliveries[0][0])
        return min(candidates) if candidates else None

    def drive_agents(self, now: float) -> list[SmsMessage]:
        """Fire scripted commands due by ``now`` and deliver due texts,
        interleaved in time order so replies triggered within the window
        cascade correctly.

        Returns the messages delivered during this call (scripted submissions
        show up once their own latency elapses).
        """
        delivered: list[SmsMessage] = []
        while True:
            next_script = self._script_queue[0][0] if self._script_queue else None
            next_delivery = self._deliveries[0][0] if self._deliveries else None
            script_due = next_script is not None and next_script <= now
            delivery_due = next_delivery is not None and next_delivery <= now
            if script_due and (not delivery_due or next_script <= next_delivery):
                at_ms, _, agent, text = heapq.heappop(self._script_queue)
                self.submit(agent.phone, agent.target, text, at_ms)
            elif delivery_due:
                _, _, msg = heapq.heappop(self._deliveries)
                msg.delivered_at = msg.deliver_at
                delivered.append(msg)
                self._deliver(msg)
            else:
                return delivered

    def _deliver(self, msg: SmsMessage) -> None:
        agent = self._agents.get(msg.to_addr)
        if agent is not None:
            agent.mailbox.append(msg)
            return
        handler = self._terminals.get(msg.to_addr)
        if handler is not None:
            reply = handler(msg.text, msg.from_addr, msg.delivered_at)
            if reply is not None:
                self.submit(msg.to_addr, msg.from_addr, reply, msg.delivered_at)
            return
        logger.debug("sms to unknown address %s dropped", msg.to_addr)

    # -- inspection ------------------------------------------------------------

    def mailbox(self, phone: str) -> list[SmsMessage]:
        agent = self._agents.get(phone)
        return list(agent.mailbox) if agent else []

    def dump(self) -> list[dict]:
        """All traffic as plain dicts, for the scenario report."""
        return [
            {
                "msg_id": m.msg_id,
                "from": m.from_addr,
                "to": m.to_addr,
                "text": m.text,
                "submitted_at": m.submitted_at,
                "delivered_at": m.delivered_at,
                "lost": m.lost,
            }
            for m in self.messages
        ]
