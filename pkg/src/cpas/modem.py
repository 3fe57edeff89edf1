"""Emulated GPRS wireless module (MC55-class).

Covers the behaviours a host microcontroller has to respect to keep such a
module on the air:

* power-on ignition timing: the ignition line must not be pulled low until
  10 ms after power-up, and must be held low for more than 100 ms before
  release (back to high impedance), or the module never starts;
* a strict AT dialog to reach a TCP connection:
  AT -> AT+CREG? -> AT+CGATT=1 -> AT+CIPSTART=<host>,<port>;
* abnormal TCP disconnect after a long idle period with no GPRS traffic,
  which is why the host sends a keepalive packet every minute;
* the run-time ignition toggle trick: pulsing the ignition line now and
  then restarts a failed module without host intervention.

Transmission is modeled as a serialization queue at the configured GPRS
rate; delivery itself is the link model's business.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

MIN_POWER_TO_IGNITION_MS = 10.0  # ignition low no earlier than this after power
MIN_IGNITION_HOLD_MS = 100.0  # must be held low strictly longer than this

GPRS_MIN_RATE_BPS = 20_000
GPRS_MAX_RATE_BPS = 171_200  # theoretical GPRS ceiling


class ModemState(Enum):
    OFF = "off"
    BOOTING = "booting"
    SIM_READY = "sim_ready"
    NET_REGISTERED = "net_registered"
    GPRS_ATTACHED = "gprs_attached"
    TCP_OPEN = "tcp_open"
    TCP_CLOSED_ABNORMAL = "tcp_closed_abnormal"


class PinEvent(Enum):
    POWER_ON = "power_on"
    POWER_OFF = "power_off"
    IGNITION_LOW = "ignition_low"
    IGNITION_HIGH = "ignition_high"  # release to HiZ


class ModemFault(Exception):
    pass


class TimingViolation(ModemFault):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NotPowered(ModemFault):
    pass


class NotConnected(ModemFault):
    pass


@dataclass(frozen=True)
class IgnitionTrace:
    """One complete power-up ignition sequence, times in ms."""

    power_on_at: float
    ign_low_at: float
    ign_high_at: float

    def violation(self) -> Optional[str]:
        if self.ign_low_at - self.power_on_at < MIN_POWER_TO_IGNITION_MS:
            return (
                f"ignition low {self.ign_low_at - self.power_on_at:g} ms after "
                f"power-up; need >= {MIN_POWER_TO_IGNITION_MS:g} ms"
            )
        if self.ign_high_at - self.ign_low_at <= MIN_IGNITION_HOLD_MS:
            return (
                f"ignition held low {self.ign_high_at - self.ign_low_at:g} ms; "
                f"need > {MIN_IGNITION_HOLD_MS:g} ms"
            )
        return None


@dataclass
class ModemConfig:
    idle_timeout_s: float = 300.0
    boot_duration_ms: float = 2000.0
    watchdog_toggle_period_s: float = 600.0
    bandwidth_bps: int = 25_000

    def __post_init__(self):
        if self.idle_timeout_s <= 60:
            raise ValueError(
                "idle_timeout_s must exceed 60 s or the minute keepalive cannot "
                "hold the connection up"
            )
        if not GPRS_MIN_RATE_BPS <= self.bandwidth_bps <= GPRS_MAX_RATE_BPS:
            raise ValueError(
                f"bandwidth_bps {self.bandwidth_bps} outside GPRS range "
                f"[{GPRS_MIN_RATE_BPS}, {GPRS_MAX_RATE_BPS}]"
            )


@dataclass(frozen=True)
class SendResult:
    accepted: bool
    serialization_ms: float
    completes_at_ms: float
    reason: Optional[str] = None


@dataclass(frozen=True)
class ModemEvent:
    kind: str  # BOOT_COMPLETED | IDLE_DISCONNECTED
    at_ms: float


BOOT_COMPLETED = "boot_completed"
IDLE_DISCONNECTED = "idle_disconnected"

# AT responses
AT_OK = "OK"
AT_ERROR = "ERROR"
AT_CONNECT_OK = "CONNECT OK"
AT_CLOSE_OK = "CLOSE OK"
AT_CREG_REGISTERED = "+CREG: 0,1"

_READY_STATES = (
    ModemState.SIM_READY,
    ModemState.NET_REGISTERED,
    ModemState.GPRS_ATTACHED,
    ModemState.TCP_OPEN,
    ModemState.TCP_CLOSED_ABNORMAL,
)


class Modem:
    """One emulated module; owned and driven by exactly one terminal."""

    def __init__(self, config: ModemConfig | None = None,
                 link_gate: Callable[[float], bool] | None = None):
        self.config = config or ModemConfig()
        # link_gate(now_ms) -> False when the radio path refuses the send
        self.link_gate = link_gate
        self.state = ModemState.OFF
        self.last_tx_ms: float = 0.0
        self.tx_busy_until_ms: float = 0.0
        self._power_on_at: Optional[float] = None
        self._ign_low_at: Optional[float] = None
        self._boot_started_at: Optional[float] = None
        self._at_synced = False

    @property
    def powered(self) -> bool:
        return self._power_on_at is not None

    # -- pins --------------------------------------------------------------

    def apply_pin_event(self, event: PinEvent, at_ms: float) -> ModemState:
        """Drive the power or ignition pin.

        Raises TimingViolation when the ignition discipline is broken; the
        module stays OFF (or keeps running, for a bad run-time toggle).
        """
        if event is PinEvent.POWER_ON:
            if not self.powered:
                self._power_on_at = at_ms
            return self.state

        if event is PinEvent.POWER_OFF:
            self.state = ModemState.OFF
            self._power_on_at = None
            self._ign_low_at = None
            self._boot_started_at = None
            self._at_synced = False
            self.tx_busy_until_ms = 0.0
            return self.state

        if not self.powered:
            return self.state  # ignition pins on a dead module do nothing

        if event is PinEvent.IGNITION_LOW:
            delay = at_ms - self._power_on_at
            if delay < MIN_POWER_TO_IGNITION_MS:
                raise TimingViolation(
                    f"ignition low {delay:g} ms after power-up; need >= "
                    f"{MIN_POWER_TO_IGNITION_MS:g} ms"
                )
            self._ign_low_at = at_ms
            return self.state

        if event is PinEvent.IGNITION_HIGH:
            if self._ign_low_at is None:
                return self.state  # already HiZ
            trace = IgnitionTrace(self._power_on_at, self._ign_low_at, at_ms)
            self._ign_low_at = None
            reason = trace.violation()
            if reason is not None:
                raise TimingViolation(reason)
            if self.state in (ModemState.OFF, ModemState.TCP_CLOSED_ABNORMAL):
                # a valid toggle starts a cold module, and restarts a failed
                # one without any host-side recovery logic
                self._start_boot(at_ms)
            return self.state

        raise ValueError(f"unknown pin event {event!r}")

    def _start_boot(self, at_ms: float) -> None:
        self.state = ModemState.BOOTING
        self._boot_started_at = at_ms
        self._at_synced = False

    # -- AT dialog -----------------------------------------------------------

    def submit_at(self, cmd: str, now_ms: float) -> str:
        """Execute one AT command; out-of-order commands answer ERROR and
        leave the state untouched."""
        if self.state is ModemState.OFF:
            raise NotPowered("modem is off")
        if self.state is ModemState.BOOTING:
            return AT_ERROR

        if cmd == "AT":
            self._at_synced = True
            return AT_OK

        if cmd == "AT+CREG?":
            if not self._at_synced:
                return AT_ERROR
            if self.state is ModemState.SIM_READY:
                self.state = ModemState.NET_REGISTERED
            return AT_CREG_REGISTERED

        if cmd == "AT+CGATT=1":
            if self.state is ModemState.NET_REGISTERED:
                self.state = ModemState.GPRS_ATTACHED
                return AT_OK
            return AT_ERROR

        if cmd.startswith("AT+CIPSTART="):
            if self.state is ModemState.GPRS_ATTACHED:
                self.state = ModemState.TCP_OPEN
                self.last_tx_ms = now_ms
                self.tx_busy_until_ms = now_ms
                return AT_CONNECT_OK
            return AT_ERROR

        if cmd == "AT+CIPCLOSE":
            if self.state in (ModemState.TCP_OPEN, ModemState.TCP_CLOSED_ABNORMAL):
                self.state = ModemState.GPRS_ATTACHED
                return AT_CLOSE_OK
            return AT_ERROR

        return AT_ERROR

    # -- data path -----------------------------------------------------------

    def tcp_send(self, data: bytes, now_ms: float) -> SendResult:
        """Queue octets onto the radio.

        Serialization takes len*8/bandwidth; back-to-back sends queue behind
        the previous one.  The result reflects link acceptance only, not
        end-to-end delivery.
        """
        if self.state is not ModemState.TCP_OPEN:
            raise NotConnected(f"tcp_send in state {self.state.value}")
        serialization_ms = len(data) * 8 * 1000.0 / self.config.bandwidth_bps
        start = max(now_ms, self.tx_busy_until_ms)
        completes = start + serialization_ms
        if self.link_gate is not None and not self.link_gate(now_ms):
            return SendResult(
                accepted=False,
                serialization_ms=serialization_ms,
                completes_at_ms=completes,
                reason="link_refused",
            )
        self.tx_busy_until_ms = completes
        self.last_tx_ms = now_ms
        return SendResult(
            accepted=True, serialization_ms=serialization_ms, completes_at_ms=completes
        )

    def fail_link(self, now_ms: float) -> None:
        """Injected radio failure: an open TCP connection dies abnormally."""
        if self.state is ModemState.TCP_OPEN:
            self.state = ModemState.TCP_CLOSED_ABNORMAL

    # -- time ----------------------------------------------------------------

    def tick(self, now_ms: float) -> list[ModemEvent]:
        """Advance to ``now_ms``; returns lifecycle events that fired."""
        events: list[ModemEvent] = []
        if self.state is ModemState.BOOTING:
            done_at = self._boot_started_at + self.config.boot_duration_ms
            if now_ms >= done_at:
                self.state = ModemState.SIM_READY
                events.append(ModemEvent(kind=BOOT_COMPLETED, at_ms=done_at))
        if self.state is ModemState.TCP_OPEN:
            if now_ms - self.last_tx_ms >= self.config.idle_timeout_s * 1000.0:
                self.state = ModemState.TCP_CLOSED_ABNORMAL
                events.append(ModemEvent(kind=IDLE_DISCONNECTED, at_ms=now_ms))
        return events

    def next_deadline_ms(self) -> Optional[float]:
        """Earliest time tick() could emit something, for event scheduling."""
        if self.state is ModemState.BOOTING:
            return self._boot_started_at + self.config.boot_duration_ms
        if self.state is ModemState.TCP_OPEN:
            return self.last_tx_ms + self.config.idle_timeout_s * 1000.0
        return None
