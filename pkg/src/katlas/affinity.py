"""Windowed temporal affinity between basic blocks.

A sliding window of width 2*radius+1 runs over the block-entry sequence
(memory events are invisible here).  Each time the window is full, the
element at its middle is the center and every window slot -- the center's
own slot included -- credits one co-occurrence pair (center, slot).  The
first and last ``radius`` entries of a trace are therefore never centers.

The directed affinity is the normalized count

    f(A, B) = pairs(A, B) / (occurrences(A) * (2 * radius + 1))

so a block that always sits in pure windows of its own set has a row mass
of 1 over that set, minus edge loss.  The symmetric form used by kernel
detection is max(f(A, B), f(B, A)): a block B orbiting a hub A counts for
B even when A's own windows rarely show B.
"""

from __future__ import annotations

from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from typing import Iterable

from .trace_model import BlockEnter, Event, Trace


@dataclass(frozen=True, slots=True)
class AffinityMatrix:
    radius: int
    occurrence: dict[int, int]
    forward: dict[int, dict[int, float]]

    def f(self, a: int, b: int) -> float:
        row = self.forward.get(a)
        return row.get(b, 0.0) if row else 0.0

    def sym(self, a: int, b: int) -> float:
        return max(self.f(a, b), self.f(b, a))

    def blocks(self) -> list[int]:
        return sorted(self.occurrence)

    def row_mass(self, a: int, members: Iterable[int]) -> float:
        row = self.forward.get(a)
        if not row:
            return 0.0
        return sum(row.get(b, 0.0) for b in members)

    def to_csv(self) -> str:
        lines = ["block_a,block_b,forward,symmetric"]
        for a in self.blocks():
            row = self.forward.get(a, {})
            for b in sorted(row):
                lines.append(f"{a},{b},{row[b]:.9f},{self.sym(a, b):.9f}")
        return "\n".join(lines) + "\n"


class AffinityState:
    """Streaming accumulator; feed events or whole traces, then finalize."""

    __slots__ = ("radius", "_width", "_window", "_occ", "_pairs")

    def __init__(self, radius: int):
        if radius < 1:
            raise ValueError(f"radius {radius} < 1")
        self.radius = radius
        self._width = 2 * radius + 1
        self._window = deque(maxlen=self._width)
        self._occ = Counter()
        self._pairs = defaultdict(Counter)

    def add_block(self, block: int) -> None:
        win = self._window
        self._occ[block] += 1
        win.append(block)
        if len(win) == self._width:
            self._pairs[win[self.radius]].update(win)

    def accumulate(self, events: Iterable[Event]) -> None:
        for ev in events:
            if isinstance(ev, BlockEnter):
                self.add_block(ev.block)

    def state_size(self) -> dict[str, int]:
        """Cardinalities of the live accumulator structures.

        Everything here is bounded by the window width and the number of
        distinct blocks, never by trace length.
        """
        return {
            "window": len(self._window),
            "blocks": len(self._occ),
            "pair_rows": len(self._pairs),
            "pair_cells": sum(len(row) for row in self._pairs.values()),
        }

    def finalize(self) -> AffinityMatrix:
        width = self._width
        forward = {
            a: {b: count / (self._occ[a] * width) for b, count in row.items()}
            for a, row in self._pairs.items()
        }
        return AffinityMatrix(
            radius=self.radius,
            occurrence=dict(self._occ),
            forward=forward,
        )


def affinity_from_trace(trace: Trace, radius: int) -> AffinityMatrix:
    state = AffinityState(radius)
    state.accumulate(trace)
    return state.finalize()
