"""Kernel instances and the producer-consumer pipeline between them.

Segmentation: for each kernel independently, an instance is a maximal
contiguous run of BlockEnter events whose block belongs to the kernel,
with the span stretched over the memory events that trail its last
member block.  Nested kernels produce overlapping spans; a memory event
is attributed to the innermost active instance (latest start; ties go to
the kernel with fewer blocks, then the lower kernel id), or to the
background pseudo-instance -1 outside every span.

Dependencies come from a last-writer shadow map: every store records its
instance id per byte written, every load looks its bytes up and yields
one dependency count per (producer instance, consumer instance, load
address).  Loads touching never-written bytes count as external-input
reads.  Aggregating instance pairs to kernel pairs gives the pipeline
graph; self-loops survive (flagged), and the background node appears
only when it actually produced or consumed data.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .legalize import Kernel
from .trace_model import BlockEnter, Load, Store, Trace

BACKGROUND = -1


class AddressFreeTraceError(ValueError):
    """The trace carries no memory events, so there is nothing to extract."""


@dataclass(frozen=True, slots=True)
class KernelInstance:
    instance_id: int
    kernel_id: int
    start: int  # event index of the first member BlockEnter
    end: int  # inclusive event index of the last event in the run
    kernel_size: int  # member-set size, used for innermost tie-breaks


def segment_instances(trace: Trace, kernels: Sequence[Kernel]) -> list[KernelInstance]:
    if not kernels:
        return []
    spans: list[tuple[int, int, int]] = []  # (start, end, kernel_id)
    sizes = {k.id: len(k.members) for k in kernels}
    for kernel in kernels:
        members = kernel.members
        start: Optional[int] = None
        end = -1
        for i, ev in enumerate(trace):
            if isinstance(ev, BlockEnter):
                if ev.block in members:
                    if start is None:
                        start = i
                    end = i
                elif start is not None:
                    spans.append((start, end, kernel.id))
                    start = None
            elif start is not None:
                # memory events trail the preceding member block
                end = i
        if start is not None:
            spans.append((start, end, kernel.id))
    spans.sort(key=lambda s: (s[0], s[2]))
    return [
        KernelInstance(
            instance_id=i, kernel_id=kid, start=start, end=end, kernel_size=sizes[kid]
        )
        for i, (start, end, kid) in enumerate(spans)
    ]


@dataclass(frozen=True, slots=True)
class Dependency:
    producer: int  # instance id, or BACKGROUND
    consumer: int
    addr: int
    count: int


@dataclass(slots=True)
class DependencyInfo:
    deps: list[Dependency]
    external_reads: dict[tuple[int, int], int]  # (consumer instance, addr) -> loads
    instance_kernel: dict[int, int]  # instance id -> kernel id
    first_start: dict[int, int]  # kernel id -> earliest instance start


def extract_dependencies(
    trace: Trace, instances: Sequence[KernelInstance], allow_empty: bool = False
) -> DependencyInfo:
    if not trace.has_addresses():
        if not allow_empty:
            raise AddressFreeTraceError(
                "trace has no memory events; re-record it with addresses enabled"
            )

    starts: dict[int, list[KernelInstance]] = defaultdict(list)
    for inst in instances:
        starts[inst.start].append(inst)

    active: list[KernelInstance] = []

    def innermost(i: int) -> int:
        live = [inst for inst in active if inst.end >= i]
        active[:] = live
        if not live:
            return BACKGROUND
        best = min(live, key=lambda n: (-n.start, n.kernel_size, n.kernel_id, n.instance_id))
        return best.instance_id

    last_writer: dict[int, int] = {}
    dep_counts: Counter[tuple[int, int, int]] = Counter()
    external: Counter[tuple[int, int]] = Counter()

    for i, ev in enumerate(trace):
        if i in starts:
            active.extend(starts[i])
        if isinstance(ev, BlockEnter):
            continue
        owner = innermost(i)
        if isinstance(ev, Store):
            for byte in range(ev.addr, ev.addr + ev.size):
                last_writer[byte] = owner
        elif isinstance(ev, Load):
            writers: set[int] = set()
            missing = False
            for byte in range(ev.addr, ev.addr + ev.size):
                w = last_writer.get(byte)
                if w is None:
                    missing = True
                else:
                    writers.add(w)
            for w in writers:
                dep_counts[(w, owner, ev.addr)] += 1
            if missing:
                external[(owner, ev.addr)] += 1

    inst_kernel = {inst.instance_id: inst.kernel_id for inst in instances}
    first_start: dict[int, int] = {}
    for inst in instances:
        cur = first_start.get(inst.kernel_id)
        if cur is None or inst.start < cur:
            first_start[inst.kernel_id] = inst.start

    deps = [
        Dependency(producer=p, consumer=c, addr=a, count=n)
        for (p, c, a), n in sorted(dep_counts.items())
    ]
    return DependencyInfo(
        deps=deps,
        external_reads=dict(external),
        instance_kernel=inst_kernel,
        first_start=first_start,
    )


@dataclass(slots=True)
class PipelineGraph:
    # kernel id (BACKGROUND allowed) -> earliest activity index, for coloring
    nodes: dict[int, int]
    edges: dict[tuple[int, int], int]  # (producer kernel, consumer kernel) -> weight
    external_inputs: dict[int, int] = field(default_factory=dict)  # kernel -> loads

    def self_loops(self) -> set[tuple[int, int]]:
        return {e for e in self.edges if e[0] == e[1]}


def build_pipeline(
    info: DependencyInfo, kernels: Sequence[Kernel]
) -> PipelineGraph:
    def kernel_of(instance_id: int) -> int:
        if instance_id == BACKGROUND:
            return BACKGROUND
        return info.instance_kernel[instance_id]

    nodes: dict[int, int] = {k.id: info.first_start.get(k.id, 0) for k in kernels}
    edges: Counter[tuple[int, int]] = Counter()
    for dep in info.deps:
        edges[(kernel_of(dep.producer), kernel_of(dep.consumer))] += dep.count

    external: Counter[int] = Counter()
    for (consumer, _addr), count in info.external_reads.items():
        external[kernel_of(consumer)] += count

    referenced_background = any(BACKGROUND in e for e in edges) or BACKGROUND in external
    if referenced_background:
        nodes[BACKGROUND] = 0
    return PipelineGraph(nodes=nodes, edges=dict(edges), external_inputs=dict(external))


def roll_up(graph: PipelineGraph, kernels: Sequence[Kernel]) -> PipelineGraph:
    """Collapse nested kernels onto their top-level ancestors.

    Dependencies between an inner kernel and its enclosing kernel become
    self-loops of the ancestor, which stay flagged in the output.
    """
    by_id = {k.id: k for k in kernels}

    def top(kid: int) -> int:
        if kid == BACKGROUND:
            return BACKGROUND
        k = by_id[kid]
        while k.parent is not None:
            k = by_id[k.parent]
        return k.id

    nodes: dict[int, int] = {}
    for kid, start in graph.nodes.items():
        t = top(kid)
        nodes[t] = min(start, nodes.get(t, start))
    edges: Counter[tuple[int, int]] = Counter()
    for (p, c), w in graph.edges.items():
        edges[(top(p), top(c))] += w
    external: Counter[int] = Counter()
    for kid, n in graph.external_inputs.items():
        external[top(kid)] += n
    return PipelineGraph(nodes=nodes, edges=dict(edges), external_inputs=dict(external))


def _blend(t: float) -> str:
    # red (early) to green (late)
    r1, g1, b1 = 0xD6, 0x45, 0x41
    r2, g2, b2 = 0x4C, 0xAF, 0x50
    r = round(r1 + (r2 - r1) * t)
    g = round(g1 + (g2 - g1) * t)
    b = round(b1 + (b2 - b1) * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def pipeline_to_dot(
    graph: PipelineGraph, kernels: Sequence[Kernel], temporal_colors: bool = True
) -> str:
    by_id = {k.id: k for k in kernels}
    kernel_nodes = sorted(k for k in graph.nodes if k != BACKGROUND)
    starts = [graph.nodes[k] for k in kernel_nodes]
    lo, hi = (min(starts), max(starts)) if starts else (0, 0)

    def name(kid: int) -> str:
        return "background" if kid == BACKGROUND else f"k{kid}"

    lines = ["digraph pipeline {", "  rankdir=LR;", '  node [style=filled, fontname="sans-serif"];']
    for kid in kernel_nodes:
        blocks = ",".join(str(b) for b in sorted(by_id[kid].members))
        if temporal_colors and hi > lo:
            color = _blend((graph.nodes[kid] - lo) / (hi - lo))
        elif temporal_colors:
            color = _blend(0.0)
        else:
            color = "#dddddd"
        lines.append(
            f'  k{kid} [label="K{kid}\\nblocks {{{blocks}}}", fillcolor="{color}"];'
        )
    if BACKGROUND in graph.nodes:
        lines.append('  background [label="background", shape=box, fillcolor="#cccccc"];')
    for (p, c), w in sorted(graph.edges.items()):
        style = ", style=dashed" if p == c else ""
        lines.append(f'  {name(p)} -> {name(c)} [label="{w}"{style}];')
    for kid, n in sorted(graph.external_inputs.items()):
        lines.append(f'  inputs_{name(kid)} [label="external", shape=plaintext];')
        lines.append(f'  inputs_{name(kid)} -> {name(kid)} [label="{n}", style=dotted];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def pipeline_to_json(graph: PipelineGraph, kernels: Sequence[Kernel]) -> str:
    by_id = {k.id: k for k in kernels}
    nodes = []
    for kid in sorted(graph.nodes):
        entry = {"kernel": kid, "first_start": graph.nodes[kid]}
        if kid == BACKGROUND:
            entry["background"] = True
        else:
            entry["blocks"] = sorted(by_id[kid].members)
        nodes.append(entry)
    edges = [
        {
            "producer": p,
            "consumer": c,
            "weight": w,
            "self_loop": p == c,
        }
        for (p, c), w in sorted(graph.edges.items())
    ]
    external = [
        {"kernel": kid, "loads": n} for kid, n in sorted(graph.external_inputs.items())
    ]
    return json.dumps(
        {"nodes": nodes, "edges": edges, "external_inputs": external}, indent=2
    )
