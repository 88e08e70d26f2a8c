"""Happens-before persistence models for POSIX and MMIO traces.

Both models walk the merged global trace order, so cross-thread operation
pairs pick up edges exactly where a rule fires across threads; no blanket
cross-thread ordering is added.  All edges point from a lower seq to a
higher seq, which keeps every graph acyclic by construction.

POSIX rules (ext4-style):

* data writes overlapping the same (file, block) pair are ordered in trace
  order; spanning writes are split into per-block ranges for conflict
  detection only (they stay one graph node);
* size-extending writes to one file are ordered in trace order;
* ``fdatasync(f)`` orders every earlier data op on ``f`` before every later
  persisting op, ``fsync(f)`` additionally orders earlier metadata ops
  naming ``f``, and ``fsync`` on a directory orders earlier directory-entry
  ops in it; ``sync`` orders everything earlier before everything later.
  Besides those direct edges, each barrier node is anchored into the graph
  (source ops point at the barrier, the barrier points at later persisting
  ops) so barriers are visible in exported graphs; the anchors add no
  ordering beyond the direct edges;
* metadata ops naming the same path are ordered in trace order, and a
  rename or unlink is ordered after the earlier ops that materialize its
  source (otherwise legal schedules could rename a file that never existed);
* open/close contribute nothing.

MMIO rules (persistent-x86 style): stores overlapping a cache line are
ordered in trace order; a flush followed by a later fence orders stores to
the flushed lines (issued before the flush) before all stores after the
fence; ``msync`` acts as flush+fence for its range; a fence alone orders
nothing.

Scope note: ``fdatasync(f)`` is read here as a barrier over *f*'s own prior
data only; prior unsynced ops on other files are not ordered by it.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass
from enum import Enum

from .errors import ModeMismatch
from .trace import MMIO_KINDS, MMIO_MODE, POSIX_KINDS, POSIX_MODE, Operation, Trace


class EdgeReason(str, Enum):
    SAME_BLOCK = "SameBlock"
    SYNC_BARRIER = "SyncBarrier"
    METADATA_ORDER = "MetadataOrder"
    SAME_CACHE_LINE = "SameCacheLine"
    FLUSH_FENCE = "FlushFence"
    MSYNC = "Msync"
    CROSS_THREAD_ORDER = "CrossThreadOrder"


@dataclass(frozen=True, order=True)
class HbEdge:
    src_seq: int
    dst_seq: int
    reason: EdgeReason

    @property
    def pair(self) -> tuple[int, int]:
        return (self.src_seq, self.dst_seq)


@dataclass(frozen=True)
class ModelConfig:
    block_size: int = 4096
    cache_line_size: int = 64
    split_writes_at_block_boundary: bool = True

    def __post_init__(self):
        for name in ("block_size", "cache_line_size"):
            value = getattr(self, name)
            if value <= 0 or value & (value - 1):
                raise ValueError(f"{name} must be a power of two, got {value}")


def parent_dir(path: str) -> str:
    parent = posixpath.dirname(path.rstrip("/"))
    return parent if parent else "."


def entry_name(path: str) -> str:
    return posixpath.basename(path.rstrip("/"))


def blocks_of(offset: int, length: int, block_size: int) -> frozenset[int]:
    if length <= 0:
        return frozenset({offset // block_size})
    return frozenset(range(offset // block_size, (offset + length - 1) // block_size + 1))


def lines_of(addr: int, length: int, line_size: int) -> frozenset[int]:
    if length <= 0:
        return frozenset({addr // line_size})
    return frozenset(range(addr // line_size, (addr + length - 1) // line_size + 1))


class _EdgeSet:
    """Collects edges, keeping the first reason assigned to a (src, dst) pair."""

    def __init__(self):
        self._by_pair: dict[tuple[int, int], HbEdge] = {}

    def add(self, src: int, dst: int, reason: EdgeReason):
        if src >= dst:
            return
        key = (src, dst)
        if key not in self._by_pair:
            self._by_pair[key] = HbEdge(src, dst, reason)

    def result(self) -> set[HbEdge]:
        return set(self._by_pair.values())


_DATA_KINDS = {"write", "pwrite"}
_METADATA_KINDS = {"create", "mkdir", "rename", "unlink"}
_POSIX_PERSISTING = {"write", "pwrite", "create", "mkdir", "rename", "unlink"}


def _paths_named(op: Operation) -> tuple[str, ...]:
    if op.kind == "rename":
        return (op.args["path"], op.args["dst"])
    if op.kind in _METADATA_KINDS:
        return (op.args["path"],)
    return ()


def posix_edges(trace: Trace, cfg: ModelConfig | None = None) -> set[HbEdge]:
    """Happens-before edges for a POSIX trace under the file-system model."""
    cfg = cfg or ModelConfig()
    if trace.meta.mode != POSIX_MODE:
        raise ModeMismatch(f"posix_edges requires a POSIX trace, got {trace.meta.mode}")
    for op in trace.ops:
        if op.kind not in POSIX_KINDS:
            raise ModeMismatch(f"op {op.seq} has MMIO kind {op.kind!r} in a POSIX trace")

    edges = _EdgeSet()
    ops = trace.ops
    persisting = [op for op in ops if op.kind in _POSIX_PERSISTING]

    # Per-file data write conflicts, at block granularity when splitting is
    # enabled and whole-file granularity otherwise.
    writes_by_path: dict[str, list[tuple[Operation, frozenset[int]]]] = {}
    sizes: dict[str, int] = {}
    extenders_by_path: dict[str, list[Operation]] = {}
    for op in ops:
        if op.kind not in _DATA_KINDS:
            continue
        path = op.args["path"]
        if cfg.split_writes_at_block_boundary:
            blks = blocks_of(op.args["offset"], op.args["length"], cfg.block_size)
        else:
            blks = frozenset({-1})
        for earlier, earlier_blks in writes_by_path.get(path, []):
            if earlier_blks & blks:
                edges.add(earlier.seq, op.seq, EdgeReason.SAME_BLOCK)
        writes_by_path.setdefault(path, []).append((op, blks))

        end = op.args["offset"] + op.args["length"]
        if end > sizes.get(path, 0):
            for earlier in extenders_by_path.get(path, []):
                edges.add(earlier.seq, op.seq, EdgeReason.METADATA_ORDER)
            extenders_by_path.setdefault(path, []).append(op)
            sizes[path] = end

    # Metadata ops naming a shared path, in trace order.
    meta_by_path: dict[str, list[Operation]] = {}
    for op in ops:
        for path in _paths_named(op):
            for earlier in meta_by_path.get(path, []):
                edges.add(earlier.seq, op.seq, EdgeReason.METADATA_ORDER)
            meta_by_path.setdefault(path, []).append(op)

    # A rename's source (and an unlink's target) must have been materialized,
    # and recreating a consumed path is ordered after the consumer; the
    # per-path life cycle then replays in trace order under any legal
    # schedule, so path-based replay never sees an impossible state.
    creators_by_path: dict[str, list[int]] = {}
    consumers_by_path: dict[str, list[int]] = {}
    for op in ops:
        if op.kind in ("rename", "unlink"):
            src = op.args["path"]
            for seq in creators_by_path.get(src, []):
                edges.add(seq, op.seq, EdgeReason.METADATA_ORDER)
            consumers_by_path.setdefault(src, []).append(op.seq)
        if op.kind in _DATA_KINDS or op.kind in ("create", "mkdir"):
            path = op.args["path"]
            for seq in consumers_by_path.get(path, []):
                edges.add(seq, op.seq, EdgeReason.METADATA_ORDER)
            creators_by_path.setdefault(path, []).append(op.seq)
        elif op.kind == "rename":
            dst = op.args["dst"]
            for seq in consumers_by_path.get(dst, []):
                edges.add(seq, op.seq, EdgeReason.METADATA_ORDER)
            creators_by_path.setdefault(dst, []).append(op.seq)

    # Durability barriers.
    for idx, op in enumerate(ops):
        if op.kind not in ("fsync", "fdatasync", "sync"):
            continue
        if op.kind == "sync":
            sources = [p for p in persisting if p.seq < op.seq]
        elif op.kind == "fsync" and op.args.get("dir"):
            dirpath = op.args["path"].rstrip("/") or "."
            sources = [
                p
                for p in ops[:idx]
                if p.kind in _METADATA_KINDS
                and any(parent_dir(named) == dirpath for named in _paths_named(p))
            ]
        else:
            path = op.args["path"]
            sources = [
                p for p in ops[:idx] if p.kind in _DATA_KINDS and p.args["path"] == path
            ]
            if op.kind == "fsync":
                sources += [
                    p for p in ops[:idx] if p.kind in _METADATA_KINDS and path in _paths_named(p)
                ]
        if not sources:
            # Nothing pending for this barrier: it constrains nothing.
            continue
        sinks = [p for p in persisting if p.seq > op.seq]
        for src in sources:
            edges.add(src.seq, op.seq, EdgeReason.SYNC_BARRIER)
            for dst in sinks:
                edges.add(src.seq, dst.seq, EdgeReason.SYNC_BARRIER)
        for dst in sinks:
            edges.add(op.seq, dst.seq, EdgeReason.SYNC_BARRIER)
    return edges.result()


def mmio_edges(trace: Trace, cfg: ModelConfig | None = None) -> set[HbEdge]:
    """Happens-before edges for an MMIO trace under the memory model."""
    cfg = cfg or ModelConfig()
    if trace.meta.mode != MMIO_MODE:
        raise ModeMismatch(f"mmio_edges requires an MMIO trace, got {trace.meta.mode}")
    for op in trace.ops:
        if op.kind not in MMIO_KINDS:
            raise ModeMismatch(f"op {op.seq} has POSIX kind {op.kind!r} in an MMIO trace")

    edges = _EdgeSet()
    ops = trace.ops
    stores = [op for op in ops if op.kind == "store"]
    store_lines = {
        op.seq: lines_of(op.args["addr"], op.args["length"], cfg.cache_line_size)
        for op in stores
    }

    # Same-cache-line conflicts in trace order.
    for i, a in enumerate(stores):
        for b in stores[i + 1:]:
            if store_lines[a.seq] & store_lines[b.seq]:
                edges.add(a.seq, b.seq, EdgeReason.SAME_CACHE_LINE)

    # flush(lines) ... fence: stores to those lines issued before the flush
    # happen before every store after the fence.
    fence_seqs = [op.seq for op in ops if op.kind == "fence"]
    for op in ops:
        if op.kind != "flush":
            continue
        flushed = lines_of(op.args["addr"], op.args["length"], cfg.cache_line_size)
        fence_after = next((f for f in fence_seqs if f > op.seq), None)
        if fence_after is None:
            continue
        for src in stores:
            if src.seq < op.seq and store_lines[src.seq] & flushed:
                for dst in stores:
                    if dst.seq > fence_after:
                        edges.add(src.seq, dst.seq, EdgeReason.FLUSH_FENCE)

    # msync(range) is a flush+fence over the range.
    for op in ops:
        if op.kind != "msync":
            continue
        synced = lines_of(op.args["addr"], op.args["length"], cfg.cache_line_size)
        for src in stores:
            if src.seq < op.seq and store_lines[src.seq] & synced:
                for dst in stores:
                    if dst.seq > op.seq:
                        edges.add(src.seq, dst.seq, EdgeReason.MSYNC)
    return edges.result()


def model_edges(trace: Trace, cfg: ModelConfig | None = None) -> set[HbEdge]:
    """Dispatch to the model matching the trace's mode."""
    if trace.meta.mode == POSIX_MODE:
        return posix_edges(trace, cfg)
    return mmio_edges(trace, cfg)


def store_persisted_before(
    store: Operation, before_seq: int, trace: Trace, cfg: ModelConfig
) -> bool:
    """True when every cache line of ``store`` was flushed after the store
    and fenced (or msynced) before ``before_seq``."""
    lines = lines_of(store.args["addr"], store.args["length"], cfg.cache_line_size)
    fence_seqs = [op.seq for op in trace.ops if op.kind == "fence"]
    for line in lines:
        covered = False
        for op in trace.ops:
            if op.seq <= store.seq or op.seq >= before_seq:
                continue
            if op.kind == "msync" and line in lines_of(
                op.args["addr"], op.args["length"], cfg.cache_line_size
            ):
                covered = True
                break
            if op.kind == "flush" and line in lines_of(
                op.args["addr"], op.args["length"], cfg.cache_line_size
            ):
                if any(op.seq < f < before_seq for f in fence_seqs):
                    covered = True
                    break
        if not covered:
            return False
    return True
