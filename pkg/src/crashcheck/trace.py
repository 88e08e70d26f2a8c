"""Canonical trace representation and the newline-delimited JSON trace format.

A trace file is UTF-8 text: a one-line header
``{"app": <text>, "mode": "POSIX"|"MMIO", "version": 1}`` followed by one
JSON object per operation with keys ``seq``, ``tid``, ``kind``, ``args``,
``backtrace`` and ``annotation`` (nullable).

Payloads travel as a sha256 hex digest plus optional inline bytes (hex,
<= 256 bytes). Replay uses the inline bytes when present and otherwise a
deterministic pattern derived from the digest, so traces stay small while
replay stays reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ParseError, SequenceOrderError, UnknownOperationKind

POSIX_MODE = "POSIX"
MMIO_MODE = "MMIO"

POSIX_KINDS = {
    "write", "pwrite", "rename", "unlink", "create", "fsync",
    "fdatasync", "sync", "open", "close", "mkdir",
}
MMIO_KINDS = {"store", "flush", "fence", "msync"}

# Kinds that mutate durable state when replayed.  Barrier and bookkeeping
# kinds constrain ordering but are no-ops in a crash image.
PERSISTING_KINDS = {"write", "pwrite", "rename", "unlink", "create", "mkdir", "store"}
BARRIER_KINDS = {"fsync", "fdatasync", "sync", "flush", "fence", "msync"}
# open/close are recorded for completeness but contribute neither nodes
# nor edges to the persistence graph.
METADATA_ONLY_KINDS = {"open", "close"}

MAX_INLINE_PAYLOAD = 256

_ARG_KEYS = {
    "write": {"path", "offset", "length", "digest", "data"},
    "pwrite": {"path", "offset", "length", "digest", "data"},
    "rename": {"path", "dst"},
    "unlink": {"path"},
    "create": {"path"},
    "mkdir": {"path"},
    "open": {"path"},
    "close": {"path"},
    "fsync": {"path", "dir"},
    "fdatasync": {"path"},
    "sync": set(),
    "store": {"addr", "length", "digest", "data", "line"},
    "flush": {"addr", "length"},
    "msync": {"addr", "length"},
    "fence": set(),
}

_REQUIRED_ARG_KEYS = {
    "write": {"path", "offset", "length", "digest"},
    "pwrite": {"path", "offset", "length", "digest"},
    "rename": {"path", "dst"},
    "unlink": {"path"},
    "create": {"path"},
    "mkdir": {"path"},
    "open": {"path"},
    "close": {"path"},
    "fsync": {"path"},
    "fdatasync": {"path"},
    "sync": set(),
    "store": {"addr", "length", "digest"},
    "flush": {"addr", "length"},
    "msync": {"addr", "length"},
    "fence": set(),
}


def payload_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def payload_from_digest(digest: str, length: int) -> bytes:
    """Deterministic stand-in bytes for a payload that was not inlined."""
    pattern = hashlib.sha256(digest.encode("ascii")).digest()
    reps = length // len(pattern) + 1
    return (pattern * reps)[:length]


@dataclass(frozen=True)
class Frame:
    function: str
    file: str
    line: int

    def to_json(self) -> dict:
        return {"function": self.function, "file": self.file, "line": self.line}


@dataclass(frozen=True)
class Backtrace:
    """Call stack of an operation, outermost frame first."""

    frames: tuple[Frame, ...]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("backtrace must contain at least one frame")

    @property
    def innermost(self) -> Frame:
        return self.frames[-1]

    def functions(self) -> tuple[str, ...]:
        return tuple(f.function for f in self.frames)

    def to_json(self) -> list:
        return [f.to_json() for f in self.frames]


@dataclass(frozen=True)
class Annotation:
    """Data-structure annotation carried by MMIO stores."""

    type_name: str
    instance_id: str
    field_name: str

    def to_json(self) -> dict:
        return {
            "type_name": self.type_name,
            "instance_id": self.instance_id,
            "field_name": self.field_name,
        }


@dataclass(frozen=True)
class Operation:
    seq: int
    tid: int
    kind: str
    args: dict
    backtrace: Backtrace
    annotation: Annotation | None = None

    @property
    def is_persisting(self) -> bool:
        return self.kind in PERSISTING_KINDS

    @property
    def is_barrier(self) -> bool:
        return self.kind in BARRIER_KINDS

    def payload(self) -> bytes:
        """Concrete bytes this operation writes, for replay."""
        data = self.args.get("data")
        if data is not None:
            return bytes.fromhex(data)
        return payload_from_digest(self.args["digest"], self.args["length"])

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "tid": self.tid,
            "kind": self.kind,
            "args": self.args,
            "backtrace": self.backtrace.to_json(),
            "annotation": self.annotation.to_json() if self.annotation else None,
        }


@dataclass(frozen=True)
class TraceMeta:
    app_name: str
    mode: str


@dataclass
class Trace:
    meta: TraceMeta
    ops: list[Operation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ops)

    def op(self, seq: int) -> Operation:
        return self.ops_by_seq()[seq]

    def ops_by_seq(self) -> dict[int, Operation]:
        return {op.seq: op for op in self.ops}


def _kind_mode(kind: str) -> str:
    if kind in POSIX_KINDS:
        return POSIX_MODE
    if kind in MMIO_KINDS:
        return MMIO_MODE
    raise UnknownOperationKind(f"unknown operation kind {kind!r}")


def _validate_args(kind: str, args: dict, line_no: int) -> dict:
    required = _REQUIRED_ARG_KEYS[kind]
    allowed = _ARG_KEYS[kind]
    missing = required - args.keys()
    if missing:
        raise ParseError(line_no, f"{kind} args missing {sorted(missing)}")
    extra = args.keys() - allowed
    if extra:
        raise ParseError(line_no, f"{kind} args have unknown keys {sorted(extra)}")
    for key in ("offset", "length", "addr", "line"):
        if key in args and (not isinstance(args[key], int) or args[key] < 0):
            raise ParseError(line_no, f"{kind} arg {key!r} must be a non-negative integer")
    data = args.get("data")
    if data is not None:
        try:
            raw = bytes.fromhex(data)
        except (TypeError, ValueError):
            raise ParseError(line_no, "inline payload must be a hex string") from None
        if len(raw) > MAX_INLINE_PAYLOAD:
            raise ParseError(line_no, f"inline payload exceeds {MAX_INLINE_PAYLOAD} bytes")
    return args


def _parse_backtrace(raw, line_no: int) -> Backtrace:
    if not isinstance(raw, list) or not raw:
        raise ParseError(line_no, "backtrace must be a non-empty list of frames")
    frames = []
    for item in raw:
        try:
            frames.append(Frame(item["function"], item["file"], int(item["line"])))
        except (TypeError, KeyError, ValueError):
            raise ParseError(line_no, f"malformed frame {item!r}") from None
    return Backtrace(tuple(frames))


def parse_trace(stream: bytes | str) -> Trace:
    """Parse a trace file into a validated :class:`Trace`.

    Raises :class:`ParseError` for malformed records or invariant
    violations, :class:`UnknownOperationKind` for unknown kinds and
    :class:`SequenceOrderError` when seq values do not strictly increase.
    """
    text = stream.decode("utf-8") if isinstance(stream, bytes) else stream
    lines = text.splitlines()
    if not lines or all(not line.strip() for line in lines):
        return Trace(meta=TraceMeta(app_name="", mode=POSIX_MODE))

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ParseError(1, "header is not valid JSON") from None
    if not isinstance(header, dict) or header.get("version") != 1:
        raise ParseError(1, "header must declare version 1")
    mode = header.get("mode")
    if mode not in (POSIX_MODE, MMIO_MODE):
        raise ParseError(1, f"header mode must be POSIX or MMIO, got {mode!r}")
    meta = TraceMeta(app_name=str(header.get("app", "")), mode=mode)

    ops: list[Operation] = []
    prev_seq = 0
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise ParseError(line_no, "record is not valid JSON") from None
        if not isinstance(rec, dict):
            raise ParseError(line_no, "record must be a JSON object")
        missing = {"seq", "tid", "kind", "args", "backtrace"} - rec.keys()
        if missing:
            raise ParseError(line_no, f"record missing keys {sorted(missing)}")

        kind = rec["kind"]
        kind_mode = _kind_mode(kind)
        if kind_mode != meta.mode:
            raise ParseError(line_no, f"{kind} is a {kind_mode} kind in a {meta.mode} trace")

        seq = rec["seq"]
        if not isinstance(seq, int) or seq <= 0:
            raise ParseError(line_no, "seq must be a positive integer")
        if seq <= prev_seq:
            raise SequenceOrderError(
                f"line {line_no}: seq {seq} does not increase past {prev_seq}"
            )
        prev_seq = seq

        tid = rec["tid"]
        if not isinstance(tid, int) or tid < 0:
            raise ParseError(line_no, "tid must be a non-negative integer")

        args = rec["args"]
        if not isinstance(args, dict):
            raise ParseError(line_no, "args must be a JSON object")
        args = _validate_args(kind, args, line_no)

        annotation = None
        raw_ann = rec.get("annotation")
        if raw_ann is not None:
            if kind != "store":
                raise ParseError(line_no, f"{kind} operations must not carry annotations")
            try:
                annotation = Annotation(
                    raw_ann["type_name"], raw_ann["instance_id"], raw_ann["field_name"]
                )
            except (TypeError, KeyError):
                raise ParseError(line_no, f"malformed annotation {raw_ann!r}") from None

        ops.append(
            Operation(
                seq=seq,
                tid=tid,
                kind=kind,
                args=args,
                backtrace=_parse_backtrace(rec["backtrace"], line_no),
                annotation=annotation,
            )
        )
    return Trace(meta=meta, ops=ops)


def serialize_trace(trace: Trace) -> bytes:
    """Serialize a trace to the newline-delimited JSON format."""
    out = [json.dumps({"app": trace.meta.app_name, "mode": trace.meta.mode, "version": 1})]
    for op in trace.ops:
        out.append(json.dumps(op.to_json(), sort_keys=False))
    return ("\n".join(out) + "\n").encode("utf-8")


def split_by_thread(trace: Trace) -> dict[int, list[Operation]]:
    """Partition ops by thread id, preserving global seq order per thread."""
    per_tid: dict[int, list[Operation]] = {}
    for op in trace.ops:
        per_tid.setdefault(op.tid, []).append(op)
    return per_tid
