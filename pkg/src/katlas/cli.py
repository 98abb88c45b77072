"""Command-line driver: simulate programs, analyze traces, extract
pipelines, and sweep analysis parameters over the bundled corpus.

Exit codes: 0 success, 2 bad usage or unreadable input, 3 event-cap
overflow during simulation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .affinity import AffinityMatrix, affinity_from_trace
from .cfg_sim import (
    DEFAULT_EVENT_CAP,
    Program,
    ProgramError,
    SimulationCapError,
    canonical_programs,
    program_from_json,
    program_to_json,
    run,
)
from .detect import Candidate, DetectParams, detect
from .legalize import Kernel, LegalizeResult, legalize
from .memdep import (
    AddressFreeTraceError,
    build_pipeline,
    extract_dependencies,
    pipeline_to_dot,
    pipeline_to_json,
    roll_up,
    segment_instances,
)
from .trace_codec import (
    CodecConfig,
    TraceDecodeError,
    TraceFormatError,
    read_header,
    read_trace,
    write_trace,
)
from .trace_model import BlockEnter, Trace, block_sequence

THRESHOLD_GRID = [round(0.50 + 0.05 * i, 2) for i in range(10)]
RADIUS_GRID = [1, 2, 3, 4, 5, 6, 7, 8]
HOT_GRID = [16, 64, 256, 512, 1024]


def _load_program(spec: str) -> Program:
    canon = canonical_programs()
    if spec in canon:
        return canon[spec]
    path = Path(spec)
    if not path.exists():
        raise ProgramError(
            f"{spec!r} is neither a canonical program ({', '.join(canon)}) nor a file"
        )
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ProgramError(f"{path}: not valid JSON: {exc}") from exc
    return program_from_json(doc)


def _codec_config(args) -> CodecConfig:
    return CodecConfig(
        burst_bytes=args.burst_bytes,
        compression=args.compression,
        deflate_level=args.level,
        addresses=args.addresses,
    )


def cmd_simulate(args) -> int:
    program = _load_program(args.program)
    trace = run(program, seed=args.seed, max_events=args.max_events)
    config = _codec_config(args)
    with open(args.out, "wb") as sink:
        stats = write_trace(trace, config, sink)
    entries = sum(1 for ev in trace if isinstance(ev, BlockEnter))
    print(
        f"{program.name}: {len(trace)} events ({entries} block entries) -> "
        f"{args.out} ({stats.bytes_written} bytes, {stats.flush_count} flushes)"
    )
    return 0


def _read_trace_file(path: str) -> Trace:
    with open(path, "rb") as f:
        return read_trace(f)


def _analyze_trace(trace: Trace, radius: int, threshold: float, hot: int):
    matrix = affinity_from_trace(trace, radius)
    candidates = detect(matrix, DetectParams(threshold=threshold, hot_count=hot))
    result = legalize(block_sequence(trace), candidates)
    return matrix, candidates, result


def _kernels_doc(
    trace: Trace,
    radius: int,
    threshold: float,
    hot: int,
    candidates: list[Candidate],
    result: LegalizeResult,
) -> dict:
    return {
        "params": {"radius": radius, "threshold": threshold, "hot_count": hot},
        "block_count": trace.block_count,
        "coverage": result.coverage,
        "raw_coverage": result.raw_coverage,
        "candidates": [
            {"seed": c.seed, "members": sorted(c.members), "score": c.score}
            for c in candidates
        ],
        "kernels": [
            {
                "id": k.id,
                "seed": k.seed,
                "members": sorted(k.members),
                "parent": k.parent,
                "constituents": list(k.constituents),
            }
            for k in result.kernels
        ],
    }


def _kernels_from_doc(doc: dict) -> list[Kernel]:
    try:
        return [
            Kernel(
                id=int(k["id"]),
                seed=int(k["seed"]),
                members=frozenset(int(b) for b in k["members"]),
                constituents=tuple(int(i) for i in k.get("constituents", ())),
                parent=None if k.get("parent") is None else int(k["parent"]),
            )
            for k in doc["kernels"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed kernels document: {exc}") from exc


def cmd_analyze(args) -> int:
    trace = _read_trace_file(args.trace)
    matrix, candidates, result = _analyze_trace(
        trace, args.radius, args.threshold, args.hot
    )
    if args.dump_affinity:
        Path(args.dump_affinity).write_text(matrix.to_csv(), encoding="utf-8")
    if args.json:
        doc = _kernels_doc(trace, args.radius, args.threshold, args.hot, candidates, result)
        Path(args.json).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    entries = sum(1 for ev in trace if isinstance(ev, BlockEnter))
    print(f"events: {len(trace)} ({entries} block entries), blocks: {trace.block_count}")
    print(f"candidates: {len(candidates)}")
    print(f"kernels: {len(result.kernels)}")
    print(f"coverage: {result.coverage:.6f} (raw {result.raw_coverage:.6f})")
    for k in result.kernels:
        blocks = ",".join(str(b) for b in sorted(k.members))
        inside = f", inside K{k.parent}" if k.parent is not None else ""
        print(f"K{k.id}: seed {k.seed}, blocks {{{blocks}}}{inside}")
    return 0


def cmd_pipeline(args) -> int:
    with open(args.trace, "rb") as f:
        header = read_header(f)
    if not header.has_addresses:
        print(
            f"{args.trace}: trace was recorded without addresses; "
            "pipeline extraction needs memory events",
            file=sys.stderr,
        )
        return 2
    trace = _read_trace_file(args.trace)
    with open(args.kernels, "r", encoding="utf-8") as f:
        doc = json.load(f)
    kernels = _kernels_from_doc(doc)

    instances = segment_instances(trace, kernels)
    info = extract_dependencies(trace, instances, allow_empty=True)
    graph = build_pipeline(info, kernels)
    if args.roll_up:
        graph = roll_up(graph, kernels)
    if args.dot:
        Path(args.dot).write_text(
            pipeline_to_dot(graph, kernels, temporal_colors=not args.no_color),
            encoding="utf-8",
        )
    if args.json:
        Path(args.json).write_text(
            pipeline_to_json(graph, kernels) + "\n", encoding="utf-8"
        )

    print(f"instances: {len(instances)}")
    loops = graph.self_loops()
    for (p, c), w in sorted(graph.edges.items()):
        def tag(k):
            return "background" if k == -1 else f"K{k}"
        mark = " (self)" if (p, c) in loops else ""
        print(f"{tag(p)} -> {tag(c)}: {w}{mark}")
    if not graph.edges:
        print("no dependencies")
    for kid, n in sorted(graph.external_inputs.items()):
        tag = "background" if kid == -1 else f"K{kid}"
        print(f"external inputs to {tag}: {n}")
    return 0


def cmd_sweep(args) -> int:
    if args.values is not None and not args.values:
        print("empty sweep grid", file=sys.stderr)
        return 2
    if args.param == "threshold":
        values = args.values or THRESHOLD_GRID
        values = [float(v) for v in values]
    elif args.param == "radius":
        values = args.values or RADIUS_GRID
        values = [int(float(v)) for v in values]
    else:
        values = args.values or HOT_GRID
        values = [int(float(v)) for v in values]

    corpus: list[tuple[str, Trace, list[int]]] = []
    for name, program in canonical_programs().items():
        trace = run(program, seed=args.seed)
        corpus.append((name, trace, block_sequence(trace)))

    matrices: dict[tuple[str, int], AffinityMatrix] = {}

    def matrix_for(name: str, trace: Trace, radius: int) -> AffinityMatrix:
        key = (name, radius)
        if key not in matrices:
            matrices[key] = affinity_from_trace(trace, radius)
        return matrices[key]

    rows = []
    for value in values:
        radius, threshold, hot = args.radius, args.threshold, args.hot
        if args.param == "threshold":
            threshold = value
        elif args.param == "radius":
            radius = value
        else:
            hot = value
        kernels_raw = kernels_leg = cov_raw = cov_leg = 0.0
        for name, trace, seq in corpus:
            matrix = matrix_for(name, trace, radius)
            candidates = detect(matrix, DetectParams(threshold=threshold, hot_count=hot))
            result = legalize(seq, candidates)
            kernels_raw += len(candidates)
            kernels_leg += len(result.kernels)
            cov_raw += result.raw_coverage
            cov_leg += result.coverage
        n = len(corpus)
        rows.append(
            (
                args.param,
                value,
                kernels_raw / n,
                kernels_leg / n,
                cov_raw / n,
                cov_leg / n,
            )
        )

    lines = ["param,value,mean_kernels_raw,mean_kernels,mean_coverage_raw,mean_coverage"]
    for param, value, kr, kl, cr, cl in rows:
        lines.append(f"{param},{value},{kr:.6f},{kl:.6f},{cr:.6f},{cl:.6f}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
        print(f"wrote {args.csv} ({len(rows)} rows)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_export(args) -> int:
    program = _load_program(args.program)
    text = json.dumps(program_to_json(program), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="katlas",
        description="Simulate block traces, compress them, and mine recurring kernels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a program and encode its trace")
    sim.add_argument("program", help="canonical program name or program JSON path")
    sim.add_argument("--out", "-o", required=True, help="output trace file")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--max-events", type=int, default=DEFAULT_EVENT_CAP)
    sim.add_argument("--burst-bytes", type=int, default=65536)
    sim.add_argument("--compression", choices=["none", "deflate"], default="none")
    sim.add_argument("--level", type=int, default=6, help="deflate level 1..9")
    sim.add_argument(
        "--addresses",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="record memory events (default) or strip them",
    )
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="mine kernels out of an encoded trace")
    ana.add_argument("trace", help="encoded trace file")
    ana.add_argument("--radius", type=int, default=7)
    ana.add_argument("--threshold", type=float, default=0.95)
    ana.add_argument("--hot", type=int, default=512)
    ana.add_argument("--json", help="write kernels JSON here")
    ana.add_argument("--dump-affinity", help="write the affinity matrix CSV here")
    ana.set_defaults(func=cmd_analyze)

    pipe = sub.add_parser("pipeline", help="extract the producer-consumer graph")
    pipe.add_argument("trace", help="encoded trace file (with addresses)")
    pipe.add_argument("kernels", help="kernels JSON from analyze")
    pipe.add_argument("--dot", help="write Graphviz output here")
    pipe.add_argument("--json", help="write the edge list here")
    pipe.add_argument("--roll-up", action="store_true", help="collapse nested kernels")
    pipe.add_argument("--no-color", action="store_true", help="skip temporal coloring")
    pipe.set_defaults(func=cmd_pipeline)

    sw = sub.add_parser("sweep", help="sweep one parameter over the bundled corpus")
    sw.add_argument("--param", choices=["threshold", "radius", "hot"], required=True)
    sw.add_argument("--values", nargs="*", type=float, default=None)
    sw.add_argument("--csv", help="write the table here instead of stdout")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--radius", type=int, default=7)
    sw.add_argument("--threshold", type=float, default=0.95)
    sw.add_argument("--hot", type=int, default=512)
    sw.set_defaults(func=cmd_sweep)

    exp = sub.add_parser("export", help="print a program as JSON")
    exp.add_argument("program", help="canonical program name or program JSON path")
    exp.add_argument("--out", help="write here instead of stdout")
    exp.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulationCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (
        ProgramError,
        TraceFormatError,
        TraceDecodeError,
        AddressFreeTraceError,
        json.JSONDecodeError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
