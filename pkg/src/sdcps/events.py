"""Canonical event stream and its running trace hash.

Every observable simulation event is rendered as one stable text line and
folded into a 64-bit FNV-1a digest. Equal scenarios with equal seeds yield
equal digests; the twin fidelity and determinism checks compare these.
"""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes, state: int = FNV_OFFSET) -> int:
    h = state
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


class EventLog:
    """Append-only event lines plus an incrementally maintained digest."""

    def __init__(self, keep_lines: bool = True):
        self.keep_lines = keep_lines
        self.lines: list[str] = []
        self._digest = FNV_OFFSET
        self.count = 0

    def emit(self, line: str) -> None:
        if self.keep_lines:
            self.lines.append(line)
        self._digest = fnv1a_64(line.encode() + b"\n", self._digest)
        self.count += 1

    def trace_hash(self) -> str:
        return f"{self._digest:016x}"
