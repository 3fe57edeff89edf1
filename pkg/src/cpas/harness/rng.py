"""SplitMix64 pseudo-random stream.

The whole simulation draws randomness from named SplitMix64 streams so a
(scenario, seed) pair produces one exact event trace, reproducible by any
implementation of the same algorithm.  State is a single 64-bit word:

    state += 0x9E3779B97F4A7C15                    (golden-gamma increment)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

Derived streams are seeded from the parent's output mixed with an FNV-1a
hash of the stream tag, so per-terminal streams do not depend on the order
in which the simulation touches them.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes) -> int:
    value = _FNV_OFFSET
    for byte in data:
        value = ((value ^ byte) * _FNV_PRIME) & _MASK
    return value


def _mix(state: int) -> tuple[int, int]:
    state = (state + _GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return state, z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state, out = _mix(self._state)
        return out

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def derive(self, tag: str) -> "SplitMix64":
        """Independent child stream named by ``tag``.

        Deterministic in (current state, tag) and does not advance this
        stream, so derivation order in unrelated code paths cannot shift
        other streams.
        """
        _, base = _mix(self._state)
        return SplitMix64(base ^ _fnv1a(tag.encode("utf-8")))
