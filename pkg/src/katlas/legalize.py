"""Trace-replay legalization of kernel candidates.

Detection reasons about windows, so its candidate sets can overlap, tile
one real loop body between them, or miss rarely-run blocks.  Legalization
replays the actual block sequence once per candidate and repairs all of
that with a pending-absorption walk:

* Blocks seen before the candidate's first member are ignored.
* A member hit absorbs everything in the pending buffer into the working
  set (the set grows as the walk proceeds).
* A non-member lands in the pending buffer when it is unclaimed by any
  candidate, or claimed only by entangled rivals: candidates in the same
  overlap component (union-find over original-set intersections) whose
  original set is not a strict superset of this candidate's.  A strict
  superset claim means the block belongs to a genuinely larger enclosing
  structure, and a claim from a disjoint component means another kernel
  entirely; both clear the pending buffer instead.
* Pending blocks still buffered when the trace ends are dropped.

Candidates whose walks converge to the same final set are fused into one
kernel (this is how a loop body tiled across several two-block candidates
collapses into a single kernel).  Kernel ids order by descending seed
occurrence, then seed id.  Containment between final sets defines the
kernel hierarchy: each kernel's parent is its smallest strict superset.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .detect import Candidate


@dataclass(slots=True)
class Kernel:
    id: int
    seed: int
    members: frozenset[int]
    constituents: tuple[int, ...]  # indices into the candidate list
    parent: Optional[int] = None  # id of the smallest kernel strictly containing this


@dataclass(slots=True)
class LegalizeResult:
    kernels: list[Kernel]
    coverage: float  # fraction of block entries inside legalized kernels
    raw_coverage: float  # same fraction for the pre-replay candidate sets
    final_sets: list[frozenset[int]] = field(default_factory=list)  # per candidate

    def kernel_of_block(self) -> dict[int, list[int]]:
        owners: dict[int, list[int]] = {}
        for k in self.kernels:
            for b in k.members:
                owners.setdefault(b, []).append(k.id)
        return owners

    def top_ancestor(self, kernel_id: int) -> int:
        by_id = {k.id: k for k in self.kernels}
        k = by_id[kernel_id]
        while k.parent is not None:
            k = by_id[k.parent]
        return k.id


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def legalize(block_seq: Sequence[int], candidates: list[Candidate]) -> LegalizeResult:
    occ = Counter(block_seq)
    total = len(block_seq)

    raw_union: set[int] = set()
    for c in candidates:
        raw_union |= c.members
    raw_cov = sum(occ[b] for b in raw_union) / total if total else 0.0

    n = len(candidates)
    if n == 0:
        return LegalizeResult(kernels=[], coverage=0.0, raw_coverage=raw_cov)

    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if candidates[i].members & candidates[j].members:
                uf.union(i, j)

    owners_of: dict[int, list[int]] = {}
    for i, c in enumerate(candidates):
        for b in c.members:
            owners_of.setdefault(b, []).append(i)

    working = [set(c.members) for c in candidates]
    pending: list[set[int]] = [set() for _ in range(n)]
    entered = [False] * n

    for b in block_seq:
        owners = owners_of.get(b, ())
        for i in range(n):
            if b in working[i]:
                if entered[i] and pending[i]:
                    working[i] |= pending[i]
                pending[i].clear()
                entered[i] = True
            elif entered[i]:
                s_i = candidates[i].members
                if not owners:
                    pending[i].add(b)
                elif any(
                    uf.find(j) == uf.find(i) and not s_i < candidates[j].members
                    for j in owners
                ):
                    pending[i].add(b)
                else:
                    pending[i].clear()
    # trailing pending buffers are dropped

    final_sets = [frozenset(w) for w in working]

    # fuse candidates that converged to the same set, in emission order
    groups: dict[frozenset[int], list[int]] = {}
    order: list[frozenset[int]] = []
    for i, s in enumerate(final_sets):
        if s not in groups:
            groups[s] = []
            order.append(s)
        groups[s].append(i)

    kernels: list[Kernel] = []
    for s in order:
        idxs = groups[s]
        seed = candidates[idxs[0]].seed
        kernels.append(Kernel(id=-1, seed=seed, members=s, constituents=tuple(idxs)))

    kernels.sort(key=lambda k: (-occ[k.seed], k.seed))
    for new_id, k in enumerate(kernels):
        k.id = new_id

    for k in kernels:
        best: Optional[Kernel] = None
        for other in kernels:
            if k.members < other.members:
                if best is None or (len(other.members), other.id) < (
                    len(best.members),
                    best.id,
                ):
                    best = other
        k.parent = best.id if best is not None else None

    covered: set[int] = set()
    for k in kernels:
        covered |= k.members
    coverage = sum(occ[b] for b in covered) / total if total else 0.0

    return LegalizeResult(
        kernels=kernels,
        coverage=coverage,
        raw_coverage=raw_cov,
        final_sets=final_sets,
    )


def kernels_as_candidates(kernels: list[Kernel]) -> list[Candidate]:
    """Re-wrap kernels as candidates, e.g. to check replay stability."""
    return [Candidate(seed=k.seed, members=k.members, score=1.0) for k in kernels]
