"""Bit-exact trace serialization: key-value text lines, burst-buffered
writing, optional DEFLATE compression, and a streaming decoder.

File layout::

    KATLAS01                     8-byte magic, carries the format version
    Blocks:<decimal>\\n           block count of the source program
    Flags:<addr|noaddr>[,deflate]\\n
    <payload>                    event lines, raw text or one DEFLATE stream

Payload grammar, one newline-terminated UTF-8 line per event::

    BasicBlock:<decimal id>
    LoadAddress:<lowercase hex>,<decimal size>
    StoreAddress:<lowercase hex>,<decimal size>

A non-empty payload always ends with a terminator line
``EndOfTrace:<decimal event count>`` so that a file cut short at any byte
is detectable for both compression modes: DEFLATE truncation loses the
stream's end marker, raw-text truncation loses the terminator line (or
cuts a line in half).  An empty event stream produces a header-only file
with no payload at all.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import BinaryIO, Iterator

from .trace_model import BlockEnter, Event, Load, Store, Trace

MAGIC = b"KATLAS01"

# Buffer range the writer accepts, in bytes.
MIN_BURST = 4096
MAX_BURST = 131072

_READ_CHUNK = 65536


class TraceFormatError(ValueError):
    """Bad magic, bad version, or a malformed header."""


class TraceDecodeError(ValueError):
    """Payload-level decode failure (truncation, bad line, trailing data)."""


@dataclass(frozen=True, slots=True)
class CodecConfig:
    burst_bytes: int = 65536
    compression: str = "none"
    deflate_level: int = 6
    # Record memory events?  The header flag reflects this choice, so a
    # reader can tell "recorded, but the program had no memory traffic"
    # (addr, zero Load/Store lines) apart from "stripped at encode time"
    # (noaddr).
    addresses: bool = True

    def __post_init__(self) -> None:
        if not MIN_BURST <= self.burst_bytes <= MAX_BURST:
            raise ValueError(
                f"burst_bytes {self.burst_bytes} outside [{MIN_BURST}, {MAX_BURST}]"
            )
        if self.compression not in ("none", "deflate"):
            raise ValueError(f"unknown compression {self.compression!r}")
        if not 1 <= self.deflate_level <= 9:
            raise ValueError(f"deflate_level {self.deflate_level} outside 1..9")


@dataclass(frozen=True, slots=True)
class EncodeStats:
    bytes_written: int
    flush_count: int
    text_bytes: int


def encode_event(event: Event) -> bytes:
    if isinstance(event, BlockEnter):
        return b"BasicBlock:%d\n" % event.block
    if isinstance(event, Load):
        return b"LoadAddress:%x,%d\n" % (event.addr, event.size)
    if isinstance(event, Store):
        return b"StoreAddress:%x,%d\n" % (event.addr, event.size)
    raise TypeError(f"not a trace event: {event!r}")


def write_trace(trace: Trace, config: CodecConfig, sink: BinaryIO) -> EncodeStats:
    """Encode ``trace`` into ``sink``, flushing in exact ``burst_bytes`` chunks.

    Encoded lines accumulate in a buffer; the compressor (or the sink, when
    compression is off) receives data only when a full burst is available or
    at finalize.  The flush count therefore equals
    ``ceil(total_text_bytes / burst_bytes)`` and the encoded text itself is
    independent of the burst size.
    """
    deflate = config.compression == "deflate"
    comp = (
        zlib.compressobj(config.deflate_level, zlib.DEFLATED, -zlib.MAX_WBITS)
        if deflate
        else None
    )
    written = 0

    def emit(data: bytes) -> None:
        nonlocal written
        if data:
            sink.write(data)
            written += len(data)

    flags = "addr" if config.addresses else "noaddr"
    if deflate:
        flags += ",deflate"
    emit(MAGIC)
    emit(f"Blocks:{trace.block_count}\n".encode())
    emit(f"Flags:{flags}\n".encode())

    buf = bytearray()
    flushes = 0
    text_bytes = 0
    count = 0

    def hand_off(chunk: bytes) -> None:
        nonlocal flushes
        flushes += 1
        if comp is not None:
            emit(comp.compress(chunk))
        else:
            emit(chunk)

    def push(line: bytes) -> None:
        nonlocal text_bytes
        buf.extend(line)
        text_bytes += len(line)
        while len(buf) >= config.burst_bytes:
            hand_off(bytes(buf[: config.burst_bytes]))
            del buf[: config.burst_bytes]

    for ev in trace:
        if not config.addresses and not isinstance(ev, BlockEnter):
            continue
        push(encode_event(ev))
        count += 1
    if count:
        push(b"EndOfTrace:%d\n" % count)
    if buf:
        hand_off(bytes(buf))
    if comp is not None and count:
        emit(comp.flush())
    return EncodeStats(bytes_written=written, flush_count=flushes, text_bytes=text_bytes)


def encode_trace(trace: Trace, config: CodecConfig) -> bytes:
    import io

    sink = io.BytesIO()
    write_trace(trace, config, sink)
    return sink.getvalue()


@dataclass(frozen=True, slots=True)
class TraceHeader:
    block_count: int
    has_addresses: bool
    compression: str


def read_header(source: BinaryIO) -> TraceHeader:
    magic = source.read(len(MAGIC))
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")

    def read_line(what: str) -> str:
        out = bytearray()
        while True:
            b = source.read(1)
            if not b:
                raise TraceFormatError(f"header ended inside {what} line")
            if b == b"\n":
                return out.decode("utf-8", errors="replace")
            out.extend(b)
            if len(out) > 128:
                raise TraceFormatError(f"{what} line too long")

    blocks_line = read_line("Blocks")
    if not blocks_line.startswith("Blocks:"):
        raise TraceFormatError(f"expected Blocks line, got {blocks_line!r}")
    try:
        block_count = int(blocks_line[len("Blocks:") :])
    except ValueError as exc:
        raise TraceFormatError(f"bad block count in {blocks_line!r}") from exc
    if block_count < 0:
        raise TraceFormatError(f"negative block count {block_count}")

    flags_line = read_line("Flags")
    if not flags_line.startswith("Flags:"):
        raise TraceFormatError(f"expected Flags line, got {flags_line!r}")
    tokens = flags_line[len("Flags:") :].split(",")
    if tokens[0] not in ("addr", "noaddr"):
        raise TraceFormatError(f"bad address flag {tokens[0]!r}")
    if len(tokens) == 1:
        compression = "none"
    elif len(tokens) == 2 and tokens[1] == "deflate":
        compression = "deflate"
    else:
        raise TraceFormatError(f"bad flags line {flags_line!r}")
    return TraceHeader(
        block_count=block_count,
        has_addresses=tokens[0] == "addr",
        compression=compression,
    )


def _parse_event_line(line: bytes, lineno: int) -> Event:
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceDecodeError(f"line {lineno}: not UTF-8") from exc
    key, sep, value = text.partition(":")
    if not sep:
        raise TraceDecodeError(f"line {lineno}: no key-value separator in {text!r}")
    try:
        if key == "BasicBlock":
            block = int(value)
            if block < 0:
                raise ValueError
            return BlockEnter(block)
        if key in ("LoadAddress", "StoreAddress"):
            addr_text, sep2, size_text = value.partition(",")
            if not sep2:
                raise ValueError
            addr = int(addr_text, 16)
            size = int(size_text)
            if addr < 0 or size < 1:
                raise ValueError
            return Load(addr, size) if key == "LoadAddress" else Store(addr, size)
    except ValueError as exc:
        raise TraceDecodeError(f"line {lineno}: malformed {key} line {text!r}") from exc
    raise TraceDecodeError(f"line {lineno}: unknown event key {key!r}")


def iter_trace(source: BinaryIO) -> Iterator[Event]:
    """Stream events out of an encoded trace.

    Memory use is bounded by the read chunk size plus one line, not by the
    trace length.  Raises TraceDecodeError on any truncation: a DEFLATE
    payload must reach its end-of-stream marker and a non-empty payload
    must end with a matching EndOfTrace terminator.
    """
    return _iter_payload(source, read_header(source))


def _iter_payload(source: BinaryIO, header: TraceHeader) -> Iterator[Event]:
    decomp = zlib.decompressobj(-zlib.MAX_WBITS) if header.compression == "deflate" else None

    pending = bytearray()
    lineno = 0
    events = 0
    done = False  # terminator seen
    compressed_consumed = 0

    def lines_of(data: bytes) -> Iterator[bytes]:
        pending.extend(data)
        start = 0
        while True:
            nl = pending.find(b"\n", start)
            if nl < 0:
                break
            yield bytes(pending[start:nl])
            start = nl + 1
        del pending[:start]

    def handle(raw_line: bytes):
        nonlocal lineno, events, done
        lineno += 1
        if done:
            raise TraceDecodeError(f"line {lineno}: data after EndOfTrace terminator")
        if raw_line.startswith(b"EndOfTrace:"):
            try:
                declared = int(raw_line[len(b"EndOfTrace:") :])
            except ValueError as exc:
                raise TraceDecodeError(f"line {lineno}: bad terminator") from exc
            if declared != events:
                raise TraceDecodeError(
                    f"line {lineno}: terminator declares {declared} events, decoded {events}"
                )
            done = True
            return None
        ev = _parse_event_line(raw_line, lineno)
        if isinstance(ev, BlockEnter):
            if ev.block >= header.block_count:
                raise TraceDecodeError(
                    f"line {lineno}: block id {ev.block} outside 0..{header.block_count - 1}"
                )
        elif not header.has_addresses:
            raise TraceDecodeError(f"line {lineno}: memory event in a noaddr trace")
        events += 1
        return ev

    saw_payload = False
    while True:
        chunk = source.read(_READ_CHUNK)
        if not chunk:
            break
        saw_payload = True
        if decomp is not None:
            compressed_consumed += len(chunk)
            data = decomp.decompress(chunk)
        else:
            data = chunk
        for raw in lines_of(data):
            ev = handle(raw)
            if ev is not None:
                yield ev

    if decomp is not None and saw_payload:
        tail = decomp.flush()
        for raw in lines_of(tail):
            ev = handle(raw)
            if ev is not None:
                yield ev
        if not decomp.eof:
            raise TraceDecodeError(
                f"truncated DEFLATE stream after {compressed_consumed} payload bytes"
            )
        if decomp.unused_data.strip(b"\x00"):
            raise TraceDecodeError("trailing data after DEFLATE stream")
    if pending:
        raise TraceDecodeError(f"line {lineno + 1}: truncated line at end of payload")
    if saw_payload and not done:
        raise TraceDecodeError("payload ended without EndOfTrace terminator")


def read_trace(source: BinaryIO) -> Trace:
    """Decode a full trace into memory. See iter_trace for the streaming form."""
    header = read_header(source)
    trace = Trace(block_count=header.block_count)
    for ev in _iter_payload(source, header):
        trace.append(ev)
    return trace


def decode_trace(data: bytes) -> Trace:
    import io

    return read_trace(io.BytesIO(data))


def naive_dump(trace: Trace) -> bytes:
    """Full-text dump with no processing: the size baseline for encoding.

    Spells out the work of each event the way an unprocessed export would:
    a block entry expands to that block's synthetic instruction listing
    (3 + id % 5 instructions), and each memory event is one instruction.
    Every instruction line is exactly 40 characters plus a newline.
    """
    out = bytearray()

    def line(text: str) -> None:
        out.extend(text[:40].ljust(40).encode())
        out.extend(b"\n")

    for ev in trace:
        if isinstance(ev, BlockEnter):
            b = ev.block
            for k in range(3 + b % 5):
                line(f"%v{b}_{k} = fmul double %a{b}_{k}, %b{b}_{k}")
        elif isinstance(ev, Load):
            line(f"%t = load double, double* %p_{ev.addr:x}")
        else:
            line(f"store double %t, double* %p_{ev.addr:x}")
    return bytes(out)
