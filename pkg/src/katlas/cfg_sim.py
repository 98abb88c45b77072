"""Synthetic programs and their dynamic traces.

A program here is a tiny control-flow graph: numbered basic blocks, one
successor rule per block, and optional memory operations that fire on
each entry.  Simulation walks the graph from the entry block and emits a
BlockEnter event per visit followed by that block's Load/Store events,
producing the traces everything downstream (compression, affinity,
kernel mining) consumes.

Successor rules:

* Seq         -- unconditional jump.
* Counted     -- bounded loop latch.  Entering the block increments its
                 counter first; while counter < bound control goes to
                 ``repeat``, at the bound the counter resets and control
                 goes to ``exit`` (None ends the run).
* Branch      -- weighted random choice, resolved by the trace PRNG.
* Cycle       -- round-robin over a target list, one step per visit.
* Halt        -- emit the block, then stop.

Memory addresses are affine in loop counters: ``base + stride * i`` where
``i`` is the current counter of the Counted block named by ``index_loop``
(0 when unset).  Counters are sampled after the owning block's own
increment, so a body block indexed by its loop latch sees 0, 1, 2, ...
across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .trace_model import BlockEnter, Load, Store, Trace

_M64 = (1 << 64) - 1


class ProgramError(ValueError):
    """A program definition violates a structural rule."""


class SimulationCapError(RuntimeError):
    """The event cap was hit before the program finished."""

    def __init__(self, cap: int):
        super().__init__(f"simulation exceeded the event cap of {cap}")
        self.cap = cap


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return state, z ^ (z >> 31)


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seed expansion.

    Self-contained so that traces are reproducible across interpreter
    versions; a seed fully determines the stream.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int = 0):
        state = seed & _M64
        s = []
        for _ in range(4):
            state, v = _splitmix64(state)
            s.append(v)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        x = (s[1] * 5) & _M64
        result = (((x << 7) | (x >> 57)) & _M64) * 9 & _M64
        t = (s[1] << 17) & _M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = ((s[3] << 45) | (s[3] >> 19)) & _M64
        return result

    def random(self) -> float:
        # 53-bit mantissa, uniform in [0, 1)
        return (self.next_u64() >> 11) * (2.0**-53)

    def randrange(self, bound: int) -> int:
        if bound <= 0:
            raise ValueError("bound must be positive")
        return int(self.random() * bound)


@dataclass(frozen=True, slots=True)
class Seq:
    next: int


@dataclass(frozen=True, slots=True)
class Counted:
    bound: int
    repeat: int
    exit: Optional[int]


@dataclass(frozen=True, slots=True)
class Branch:
    arms: tuple[tuple[float, int], ...]


@dataclass(frozen=True, slots=True)
class Cycle:
    targets: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Halt:
    pass


Rule = Union[Seq, Counted, Branch, Cycle, Halt]


@dataclass(frozen=True, slots=True)
class MemOp:
    kind: str  # "load" | "store"
    base: int
    size: int = 4
    stride: int = 0
    index_loop: Optional[int] = None


@dataclass(frozen=True, slots=True)
class Block:
    id: int
    rule: Rule
    mem: tuple[MemOp, ...] = ()


@dataclass(frozen=True)
class Program:
    name: str
    entry: int
    blocks: tuple[Block, ...]
    truth: tuple[frozenset[int], ...] = ()
    # analysis parameters that suit this program's structure
    radius: int = 7
    threshold: float = 0.95
    hot_count: int = 512

    def __post_init__(self):
        validate_program(self)


def validate_program(program: Program) -> None:
    blocks = program.blocks
    if not blocks:
        raise ProgramError("program has no blocks")
    n = len(blocks)
    counted_ids = {b.id for b in blocks if isinstance(b.rule, Counted)}

    def check_target(t, where):
        if not isinstance(t, int) or not 0 <= t < n:
            raise ProgramError(f"{where}: target {t!r} outside 0..{n - 1}")

    for i, b in enumerate(blocks):
        if b.id != i:
            raise ProgramError(f"block at position {i} has id {b.id}")
        r = b.rule
        if isinstance(r, Seq):
            check_target(r.next, f"block {i} seq")
        elif isinstance(r, Counted):
            if r.bound < 1:
                raise ProgramError(f"block {i}: counted bound {r.bound} < 1")
            check_target(r.repeat, f"block {i} counted repeat")
            if r.exit is not None:
                check_target(r.exit, f"block {i} counted exit")
        elif isinstance(r, Branch):
            if not r.arms:
                raise ProgramError(f"block {i}: branch with no arms")
            total = 0.0
            for p, t in r.arms:
                if p < 0:
                    raise ProgramError(f"block {i}: negative branch weight {p}")
                total += p
                check_target(t, f"block {i} branch arm")
            if abs(total - 1.0) > 1e-9:
                raise ProgramError(f"block {i}: branch weights sum to {total}")
        elif isinstance(r, Cycle):
            if not r.targets:
                raise ProgramError(f"block {i}: cycle with no targets")
            for t in r.targets:
                check_target(t, f"block {i} cycle")
        elif not isinstance(r, Halt):
            raise ProgramError(f"block {i}: unknown rule {r!r}")
        for op in b.mem:
            if op.kind not in ("load", "store"):
                raise ProgramError(f"block {i}: bad mem op kind {op.kind!r}")
            if op.size < 1:
                raise ProgramError(f"block {i}: mem op size {op.size} < 1")
            if op.base < 0 or op.stride < 0:
                raise ProgramError(f"block {i}: negative address field")
            if op.index_loop is not None and op.index_loop not in counted_ids:
                raise ProgramError(
                    f"block {i}: index_loop {op.index_loop} is not a counted block"
                )
    check_target(program.entry, "entry")


DEFAULT_EVENT_CAP = 10_000_000


def run(program: Program, seed: int = 0, max_events: int = DEFAULT_EVENT_CAP) -> Trace:
    """Simulate ``program`` and return its event trace.

    Raises SimulationCapError when the trace would exceed ``max_events``
    events, which bounds runaway programs loaded from files.
    """
    rng = Xoshiro256StarStar(seed)
    blocks = program.blocks
    counters = {b.id: 0 for b in blocks if isinstance(b.rule, Counted)}
    rotation = {b.id: 0 for b in blocks if isinstance(b.rule, Cycle)}
    trace = Trace(block_count=len(blocks))
    emitted = 0

    def emit(event):
        nonlocal emitted
        if emitted >= max_events:
            raise SimulationCapError(max_events)
        trace.append(event)
        emitted += 1

    current: Optional[int] = program.entry
    while current is not None:
        block = blocks[current]
        rule = block.rule
        emit(BlockEnter(current))
        # loop latches bump their counter before memory ops sample it
        if isinstance(rule, Counted):
            counters[current] += 1
        for op in block.mem:
            idx = counters[op.index_loop] if op.index_loop is not None else 0
            addr = op.base + op.stride * idx
            emit(Load(addr, op.size) if op.kind == "load" else Store(addr, op.size))
        if isinstance(rule, Seq):
            current = rule.next
        elif isinstance(rule, Counted):
            if counters[current] < rule.bound:
                current = rule.repeat
            else:
                counters[current] = 0
                current = rule.exit
        elif isinstance(rule, Branch):
            r = rng.random()
            acc = 0.0
            current = rule.arms[-1][1]
            for p, target in rule.arms:
                acc += p
                if r < acc:
                    current = target
                    break
        elif isinstance(rule, Cycle):
            i = rotation[current]
            rotation[current] = (i + 1) % len(rule.targets)
            current = rule.targets[i]
        else:  # Halt
            current = None
    return trace


# ---------------------------------------------------------------------------
# canonical corpus


def for_loop_program(n: int = 511) -> Program:
    """One flat loop: c[i] = a[i] * b[i] over n points."""
    return Program(
        name="for_loop",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # init
            Block(1, Seq(2)),  # cond
            Block(
                2,
                Seq(3),  # body
                mem=(
                    MemOp("load", 0x10000, 8, 8, index_loop=3),
                    MemOp("load", 0x20000, 8, 8, index_loop=3),
                    MemOp("store", 0x30000, 8, 8, index_loop=3),
                ),
            ),
            Block(3, Counted(n, repeat=1, exit=4)),  # inc
            Block(4, Halt()),  # cond exit
        ),
        truth=(frozenset({1, 2, 3}),),
        radius=7,
        threshold=0.95,
        hot_count=256,
    )


def recursion_program(depth: int = 512) -> Program:
    """Self-recursion unrolled as a body/test/call cycle."""
    return Program(
        name="recursion",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # setup
            Block(1, Seq(2), mem=(MemOp("store", 0x60000, 8, 8, index_loop=2),)),
            Block(2, Counted(depth, repeat=3, exit=None)),  # depth test
            Block(3, Seq(1)),  # recursive call
        ),
        truth=(frozenset({1, 2, 3}),),
        radius=7,
        threshold=0.95,
        hot_count=256,
    )


def nested_loop_program(outer: int = 32, inner: int = 40) -> Program:
    """Two nested loops; the reduction in the outer latch reads the
    inner body's first store of the round."""
    return Program(
        name="nested_loop",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # pre
            Block(1, Seq(2)),  # outer head
            Block(2, Seq(3)),  # inner head
            Block(
                3,
                Seq(4),  # inner body
                mem=(
                    MemOp("store", 0x10000, 4, 4, index_loop=4),
                    MemOp("load", 0x20000, 4, 4, index_loop=5),
                ),
            ),
            Block(4, Counted(inner, repeat=2, exit=5)),  # inner latch
            Block(5, Counted(outer, repeat=1, exit=None), mem=(MemOp("load", 0x10000, 4),)),
        ),
        truth=(frozenset({2, 3, 4}), frozenset({1, 2, 3, 4, 5})),
        radius=7,
        threshold=0.95,
        hot_count=24,
    )


def rare_conditional_program(n: int = 10000, rare_p: float = 0.01) -> Program:
    """A hot loop whose condition almost always takes the same arm.

    The rare arm is a four-block chain: a lone rare block would sit in
    windows made purely of hot members and ride the symmetric affinity up
    into the candidate, and shorter chains leave one chain position whose
    window still mirrors the hot loop's period exactly.
    """
    return Program(
        name="rare_conditional",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # pre
            Block(1, Branch(((1.0 - rare_p, 2), (rare_p, 3)))),  # cond
            Block(2, Seq(7), mem=(MemOp("load", 0x40000, 4, 4, index_loop=8),)),
            Block(3, Seq(4)),  # rare arm, step 1
            Block(4, Seq(5), mem=(MemOp("store", 0x50000, 4),)),  # rare arm, step 2
            Block(5, Seq(6)),  # rare arm, step 3
            Block(6, Seq(7)),  # rare arm, step 4
            Block(7, Seq(8)),  # join
            Block(8, Counted(n, repeat=1, exit=None)),  # latch
        ),
        truth=(frozenset({1, 2, 3, 4, 5, 6, 7, 8}),),
        radius=7,
        threshold=0.95,
        hot_count=512,
    )


def wide_kernel_program(iters: int = 600) -> Program:
    """A seven-block loop body, wider than small affinity windows."""
    return Program(
        name="wide_kernel",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # pre
            Block(1, Seq(2)),  # head
            Block(2, Seq(3), mem=(MemOp("load", 0x10000, 8, 8, index_loop=7),)),
            Block(3, Seq(4)),
            Block(4, Seq(5), mem=(MemOp("load", 0x20000, 8, 8, index_loop=7),)),
            Block(5, Seq(6)),
            Block(6, Seq(7), mem=(MemOp("store", 0x30000, 8, 8, index_loop=7),)),
            Block(7, Counted(iters, repeat=1, exit=None)),  # latch
        ),
        truth=(frozenset({1, 2, 3, 4, 5, 6, 7}),),
        radius=1,
        threshold=0.65,
        hot_count=512,
    )


def pipeline_program(iters: int = 20) -> Program:
    """Producer loop filling a buffer, consumer loop draining it."""
    return Program(
        name="pipeline2",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # producer head
            Block(1, Seq(2), mem=(MemOp("store", 0x80000, 4, 4, index_loop=2),)),
            Block(2, Counted(iters, repeat=0, exit=3)),  # producer latch
            Block(3, Seq(4)),  # consumer head
            Block(4, Seq(5), mem=(MemOp("load", 0x80000, 4, 4, index_loop=5),)),
            Block(5, Counted(iters, repeat=3, exit=None)),  # consumer latch
        ),
        truth=(frozenset({0, 1, 2}), frozenset({3, 4, 5})),
        radius=2,
        threshold=0.9,
        hot_count=16,
    )


def fsm_program(rounds: int = 100, burst: int = 16) -> Program:
    """A state controller that dispatches bursts of handler work.

    The controller and the handler trade data through two cells: the
    controller posts a command the handler reads each step, and the
    handler posts a status word the next controller round reads.  The
    handler is a two-block ping-pong so its internal affinity clears the
    pull of the adjacent controller blocks.
    """
    return Program(
        name="fsm",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # pre
            Block(1, Counted(rounds, repeat=2, exit=None), mem=(MemOp("load", 0x70000, 4),)),
            Block(2, Seq(3), mem=(MemOp("store", 0x70004, 4),)),  # command post
            Block(3, Seq(4), mem=(MemOp("load", 0x70004, 4),)),  # command read
            Block(4, Counted(burst, repeat=3, exit=1), mem=(MemOp("store", 0x70000, 4),)),
        ),
        truth=(frozenset({3, 4}), frozenset({1, 2, 3, 4})),
        radius=7,
        threshold=0.89,
        hot_count=64,
    )


def striped_loop_program(iters: int = 600) -> Program:
    """A loop whose tail alternates through rotating alternatives, so
    member blocks run at a third of the loop frequency."""
    return Program(
        name="striped_loop",
        entry=0,
        blocks=(
            Block(0, Seq(1)),  # pre
            Block(1, Counted(iters, repeat=2, exit=None)),  # latch
            Block(2, Seq(3)),
            Block(3, Seq(4)),
            Block(4, Cycle((5, 6, 7))),
            Block(5, Cycle((8, 9, 10))),  # stripe y1
            Block(6, Cycle((8, 9, 10))),  # stripe y2
            Block(7, Cycle((8, 9, 10))),  # stripe y3
            Block(8, Seq(1)),  # stripe z1
            Block(9, Seq(1)),  # stripe z2
            Block(10, Seq(1)),  # stripe z3
        ),
        truth=(frozenset({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}),),
        radius=7,
        threshold=0.70,
        hot_count=512,
    )


def alternating_bursts_program(pairs: int = 80, burst: int = 14) -> Program:
    """Two three-block loops that take turns, separated by a rare
    hand-off block."""
    return Program(
        name="alternating_bursts",
        entry=0,
        blocks=(
            Block(0, Counted(burst, repeat=1, exit=3)),  # loop G latch
            Block(1, Seq(2)),
            Block(2, Seq(0)),
            Block(3, Counted(burst, repeat=4, exit=6)),  # loop H latch
            Block(4, Seq(5)),
            Block(5, Seq(3)),
            Block(6, Counted(pairs, repeat=0, exit=None)),  # hand-off
        ),
        truth=(frozenset({0, 1, 2, 6}), frozenset({3, 4, 5})),
        radius=1,
        threshold=0.95,
        hot_count=512,
    )


def canonical_programs() -> dict[str, Program]:
    programs = [
        for_loop_program(),
        recursion_program(),
        nested_loop_program(),
        rare_conditional_program(),
        wide_kernel_program(),
        pipeline_program(),
        fsm_program(),
        striped_loop_program(),
        alternating_bursts_program(),
    ]
    return {p.name: p for p in programs}


def random_program(rng: Xoshiro256StarStar, max_blocks: int = 10) -> Program:
    """A small random program that always terminates.

    Control only moves forward except through Counted latches, whose
    bounds are finite, so every run halts.  Used for differential tests.
    """
    n = 3 + rng.randrange(max_blocks - 2)
    blocks: list[Block] = []
    back_edges = 0
    for i in range(n):
        mem: list[MemOp] = []
        rule: Rule
        if i == n - 1:
            rule = Halt()
        else:
            forward = lambda: i + 1 + rng.randrange(n - i - 1)
            pick = rng.randrange(10)
            if pick < 2 and i > 0 and back_edges < 2:
                back_edges += 1
                rule = Counted(
                    bound=2 + rng.randrange(11),
                    repeat=rng.randrange(i + 1),
                    exit=forward(),
                )
            elif pick < 4 and n - i - 1 >= 2:
                a, b = forward(), forward()
                p = 0.1 + 0.8 * rng.random()
                rule = Branch(((p, a), (1.0 - p, b)))
            elif pick == 4 and n - i - 1 >= 2:
                rule = Cycle(tuple(forward() for _ in range(2 + rng.randrange(2))))
            else:
                rule = Seq(i + 1)
        for _ in range(rng.randrange(3)):
            kind = "load" if rng.randrange(2) else "store"
            mem.append(
                MemOp(
                    kind,
                    base=0x1000 * (1 + rng.randrange(64)),
                    size=4,
                    stride=4 * rng.randrange(4),
                    index_loop=None,
                )
            )
        blocks.append(Block(i, rule, tuple(mem)))
    # index_loop fields can only name counted blocks, fixed up after the fact
    counted = [b.id for b in blocks if isinstance(b.rule, Counted)]
    if counted:
        fixed = []
        for b in blocks:
            mem = tuple(
                MemOp(op.kind, op.base, op.size, op.stride, counted[rng.randrange(len(counted))])
                if op.stride and rng.randrange(2)
                else op
                for op in b.mem
            )
            fixed.append(Block(b.id, b.rule, mem))
        blocks = fixed
    return Program(name="random", entry=0, blocks=tuple(blocks))


# ---------------------------------------------------------------------------
# JSON form

SCHEMA_VERSION = 1


def program_to_json(program: Program) -> dict:
    def rule_obj(rule: Rule) -> dict:
        if isinstance(rule, Seq):
            return {"kind": "seq", "next": rule.next}
        if isinstance(rule, Counted):
            return {
                "kind": "counted",
                "bound": rule.bound,
                "repeat": rule.repeat,
                "exit": rule.exit,
            }
        if isinstance(rule, Branch):
            return {"kind": "branch", "arms": [[p, t] for p, t in rule.arms]}
        if isinstance(rule, Cycle):
            return {"kind": "cycle", "targets": list(rule.targets)}
        return {"kind": "halt"}

    return {
        "version": SCHEMA_VERSION,
        "name": program.name,
        "entry": program.entry,
        "radius": program.radius,
        "threshold": program.threshold,
        "hot_count": program.hot_count,
        "blocks": [
            {
                "id": b.id,
                "rule": rule_obj(b.rule),
                "mem": [
                    {
                        "kind": op.kind,
                        "base": op.base,
                        "size": op.size,
                        "stride": op.stride,
                        "index_loop": op.index_loop,
                    }
                    for op in b.mem
                ],
            }
            for b in program.blocks
        ],
        "truth": [sorted(s) for s in program.truth],
    }


def program_from_json(obj: dict) -> Program:
    if not isinstance(obj, dict):
        raise ProgramError("program document must be an object")
    version = obj.get("version")
    if version != SCHEMA_VERSION:
        raise ProgramError(f"unsupported schema version {version!r}")

    def rule_from(o) -> Rule:
        if not isinstance(o, dict) or "kind" not in o:
            raise ProgramError(f"bad rule object {o!r}")
        kind = o["kind"]
        try:
            if kind == "seq":
                return Seq(int(o["next"]))
            if kind == "counted":
                exit_t = o.get("exit")
                return Counted(
                    int(o["bound"]),
                    int(o["repeat"]),
                    None if exit_t is None else int(exit_t),
                )
            if kind == "branch":
                return Branch(tuple((float(p), int(t)) for p, t in o["arms"]))
            if kind == "cycle":
                return Cycle(tuple(int(t) for t in o["targets"]))
            if kind == "halt":
                return Halt()
        except (KeyError, TypeError, ValueError) as exc:
            raise ProgramError(f"bad {kind} rule: {o!r}") from exc
        raise ProgramError(f"unknown rule kind {kind!r}")

    try:
        blocks = tuple(
            Block(
                int(b["id"]),
                rule_from(b["rule"]),
                tuple(
                    MemOp(
                        str(m["kind"]),
                        int(m["base"]),
                        int(m.get("size", 4)),
                        int(m.get("stride", 0)),
                        None if m.get("index_loop") is None else int(m["index_loop"]),
                    )
                    for m in b.get("mem", ())
                ),
            )
            for b in obj["blocks"]
        )
        truth = tuple(frozenset(int(x) for x in s) for s in obj.get("truth", ()))
        return Program(
            name=str(obj.get("name", "unnamed")),
            entry=int(obj["entry"]),
            blocks=blocks,
            truth=truth,
            radius=int(obj.get("radius", 7)),
            threshold=float(obj.get("threshold", 0.95)),
            hot_count=int(obj.get("hot_count", 512)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProgramError):
            raise
        raise ProgramError(f"malformed program document: {exc}") from exc
