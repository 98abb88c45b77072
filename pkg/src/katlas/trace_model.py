"""In-memory trace event vocabulary shared by every stage of the pipeline.

A trace is an ordered sequence of three event kinds: a basic-block entry,
a memory load, or a memory store.  Memory events are interleaved with
block events in a single stream and are attributed to the most recent
block entry, which is why a trace must never begin with a memory event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union


class MalformedTraceError(ValueError):
    """A trace violated a structural invariant (names the offending index)."""


@dataclass(frozen=True, slots=True)
class BlockEnter:
    """Entry into one static basic block, identified by its dense id."""

    block: int


@dataclass(frozen=True, slots=True)
class Load:
    """Memory read of ``size`` bytes starting at byte address ``addr``."""

    addr: int
    size: int


@dataclass(frozen=True, slots=True)
class Store:
    """Memory write of ``size`` bytes starting at byte address ``addr``."""

    addr: int
    size: int


Event = Union[BlockEnter, Load, Store]


@dataclass(slots=True)
class Trace:
    """Ordered event sequence plus the block-count of the source program.

    ``block_count`` is the number of distinct static blocks in the program
    (ids are dense in ``[0, block_count)``), carried so analyzers can size
    counter tables without a first pass over the events.
    """

    block_count: int
    events: list[Event] = field(default_factory=list)

    def append(self, event: Event) -> None:
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def has_addresses(self) -> bool:
        return any(not isinstance(ev, BlockEnter) for ev in self.events)


def block_sequence(trace: Trace | Iterable[Event]) -> list[int]:
    """Project the ordered block ids out of a trace, dropping memory events.

    Raises MalformedTraceError if a memory event appears before the first
    block entry, since such an event has no block to attribute to.
    """
    seq: list[int] = []
    seen_block = False
    for index, ev in enumerate(trace):
        if isinstance(ev, BlockEnter):
            seq.append(ev.block)
            seen_block = True
        elif not seen_block:
            raise MalformedTraceError(
                f"memory event at index {index} precedes any block entry"
            )
    return seq
