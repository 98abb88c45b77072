"""Greedy kernel-candidate detection on an affinity matrix.

Seeds are hot blocks (occurrence count at or above ``hot_count``) in
order of descending count, ids ascending on ties; the seed scan stops at
the first cold block.  A seed already swallowed by an earlier candidate
is skipped.

Each seed grows a member set one block at a time, always taking the
block with the highest total symmetric affinity into the current set
(ids break ties; the gain must be positive; cold blocks are fair game).
Growth stops once the set score

    score(S) = min over A in S of  sum over B in S of sym(A, B)

reaches the threshold, and that set is emitted.  A seed whose growth
runs out of positively-attached blocks before reaching the threshold
yields no candidate at all.

Sums use math.fsum so that analytically equal gains compare equal and
ties genuinely fall back to block ids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

from .affinity import AffinityMatrix


@dataclass(frozen=True, slots=True)
class DetectParams:
    threshold: float = 0.95
    hot_count: int = 512

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0 + 1e-12:
            raise ValueError(f"threshold {self.threshold} outside (0, 1]")
        if self.hot_count < 1:
            raise ValueError(f"hot_count {self.hot_count} < 1")


@dataclass(frozen=True, slots=True)
class Candidate:
    seed: int
    members: frozenset[int]
    score: float


def set_score(matrix: AffinityMatrix, members: Iterable[int]) -> float:
    """Minimum over members of the symmetric affinity mass kept in-set."""
    ordered = sorted(members)
    if not ordered:
        return 0.0
    return min(
        math.fsum(matrix.sym(a, b) for b in ordered) for a in ordered
    )


def detect(matrix: AffinityMatrix, params: DetectParams) -> list[Candidate]:
    occ = matrix.occurrence
    blocks = matrix.blocks()
    seeds = sorted(blocks, key=lambda b: (-occ[b], b))
    explained: set[int] = set()
    out: list[Candidate] = []

    for seed in seeds:
        if occ[seed] < params.hot_count:
            break  # list is count-sorted: everything after is cold too
        if seed in explained:
            continue
        members = {seed}
        while True:
            score = set_score(matrix, members)
            if score >= params.threshold:
                out.append(Candidate(seed=seed, members=frozenset(members), score=score))
                explained |= members
                break
            ordered = sorted(members)
            best = None
            best_gain = 0.0
            for c in blocks:
                if c in members:
                    continue
                gain = math.fsum(matrix.sym(a, c) for a in ordered)
                if gain > best_gain:
                    best, best_gain = c, gain
            if best is None:
                break  # exhausted below threshold: no candidate from this seed
            members.add(best)
    return out


def candidates_to_json(candidates: list[Candidate]) -> str:
    return json.dumps(
        [
            {
                "seed": c.seed,
                "members": sorted(c.members),
                "score": round(c.score, 9),
            }
            for c in candidates
        ],
        indent=2,
    )
