"""Crash-schedule enumeration, replay into storage images, and oracle runs.

A crash schedule applies every trace op issued before the behavior under
test (the context) and then some downward-closed subset of the behavior's
nodes in an order that respects its edges.  Ordering ops are schedule
members but replay no-ops.

Enumeration prunes linearizations that provably replay to the same image:
two ops commute when they touch disjoint (file, block) pairs or disjoint
cache lines and share no directory-entry or inode conflict, and only
sequences with no adjacent commuting inversion are emitted (the
lexicographically-least order within each commuting class survives).  A
replayed-image digest memo downstream catches any equivalent images that
still slip through, so the distinct-image set always equals the unpruned
set.  Two unpruned enumerators exist: ``exhaustive_schedules`` backtracks
over valid orders and backs the whole-trace baseline, while
``brute_force_schedules`` filters raw permutations and shares no
enumeration logic with the pruned path, serving as its independent oracle.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import posixpath
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

from .behavior import UpdateBehavior
from .errors import CheckerError, ExplosionLimit, ModeMismatch, ReplayError
from .graph import FULL_KEY, StaticKey, export_dot
from .models import ModelConfig, blocks_of, lines_of, parent_dir, entry_name
from .trace import MMIO_MODE, POSIX_MODE, Operation, Trace


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrashSchedule:
    behavior_id: str
    mode: str
    context: tuple[Operation, ...]
    applied: tuple[Operation, ...]

    @property
    def applied_seqs(self) -> tuple[int, ...]:
        return tuple(op.seq for op in self.applied)

    @property
    def context_seqs(self) -> tuple[int, ...]:
        return tuple(op.seq for op in self.context)

    def to_json(self) -> dict:
        return {
            "behavior_id": self.behavior_id,
            "mode": self.mode,
            "context_seqs": list(self.context_seqs),
            "applied_seqs": list(self.applied_seqs),
        }


def schedule_from_json(data: dict, trace: Trace) -> CrashSchedule:
    ops = trace.ops_by_seq()
    return CrashSchedule(
        behavior_id=data["behavior_id"],
        mode=data["mode"],
        context=tuple(ops[s] for s in data["context_seqs"]),
        applied=tuple(ops[s] for s in data["applied_seqs"]),
    )


# ---------------------------------------------------------------------------
# Commutation
# ---------------------------------------------------------------------------

_ALL_BLOCKS = frozenset({-1})


def _posix_resources(op: Operation, cfg: ModelConfig):
    kind = op.kind
    if kind in ("write", "pwrite"):
        return (
            {("data", op.args["path"], b) for b in blocks_of(op.args["offset"], op.args["length"], cfg.block_size)},
            set(),
        )
    if kind in ("create", "mkdir"):
        path = op.args["path"]
        return set(), {("dirent", parent_dir(path), entry_name(path)), ("inode", path)}
    if kind == "unlink":
        path = op.args["path"]
        return (
            {("data", path, b) for b in _ALL_BLOCKS},
            {("dirent", parent_dir(path), entry_name(path)), ("inode", path)},
        )
    if kind == "rename":
        src, dst = op.args["path"], op.args["dst"]
        return (
            {("data", p, b) for p in (src, dst) for b in _ALL_BLOCKS},
            {
                ("dirent", parent_dir(src), entry_name(src)),
                ("dirent", parent_dir(dst), entry_name(dst)),
                ("inode", src),
                ("inode", dst),
            },
        )
    return set(), set()


def _data_conflict(a: set, b: set) -> bool:
    paths_a: dict[str, set[int]] = {}
    for _, path, blk in a:
        paths_a.setdefault(path, set()).add(blk)
    for _, path, blk in b:
        blks = paths_a.get(path)
        if blks is None:
            continue
        if blk == -1 or -1 in blks or blk in blks:
            return True
    return False


def ops_commute(a: Operation, b: Operation, cfg: ModelConfig) -> bool:
    """True when replaying a then b provably equals replaying b then a."""
    if not (a.is_persisting and b.is_persisting):
        return True
    if a.kind == "store" or b.kind == "store":
        if a.kind != "store" or b.kind != "store":
            return True
        la = lines_of(a.args["addr"], a.args["length"], cfg.cache_line_size)
        lb = lines_of(b.args["addr"], b.args["length"], cfg.cache_line_size)
        return not (la & lb)
    data_a, meta_a = _posix_resources(a, cfg)
    data_b, meta_b = _posix_resources(b, cfg)
    if meta_a & meta_b:
        return False
    return not _data_conflict(data_a, data_b)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------


def _downward_closed_subsets(nodes: list[int], preds: dict[int, set[int]]) -> Iterator[set[int]]:
    """All ancestor-closed subsets; nodes must be in ascending seq order."""

    def rec(idx: int, chosen: set[int]) -> Iterator[set[int]]:
        if idx == len(nodes):
            yield set(chosen)
            return
        node = nodes[idx]
        yield from rec(idx + 1, chosen)
        if preds.get(node, set()) <= chosen:
            chosen.add(node)
            yield from rec(idx + 1, chosen)
            chosen.remove(node)

    yield from rec(0, set())


def _linearizations(
    subset: set[int],
    preds: dict[int, set[int]],
    ops_by_seq: dict[int, Operation],
    cfg: ModelConfig | None,
) -> Iterator[tuple[int, ...]]:
    """Orders of ``subset`` respecting edges.  With a config, only orders
    with no adjacent commuting inversion are produced."""

    def rec(placed: list[int], placed_set: set[int], remaining: set[int]):
        if not remaining:
            yield tuple(placed)
            return
        for node in sorted(remaining):
            # Downward closure puts every behavior-graph predecessor of a
            # subset member inside the subset, so availability is just
            # "all predecessors already placed".
            if not preds.get(node, set()) <= placed_set:
                continue
            if cfg is not None and placed:
                last = placed[-1]
                if node < last and ops_commute(ops_by_seq[last], ops_by_seq[node], cfg):
                    continue
            placed.append(node)
            placed_set.add(node)
            remaining.remove(node)
            yield from rec(placed, placed_set, remaining)
            remaining.add(node)
            placed_set.remove(node)
            placed.pop()

    yield from rec([], set(), set(subset))


def _schedules(
    behavior: UpdateBehavior,
    trace: Trace,
    cfg: ModelConfig | None,
    budget: int,
) -> Iterator[CrashSchedule]:
    context = tuple(op for op in trace.ops if op.seq < behavior.span[0])
    graph = behavior.subgraph
    nodes = sorted(graph.ops_by_seq)
    preds = {seq: graph.predecessors(seq) for seq in nodes}
    count = 0
    for subset in _downward_closed_subsets(nodes, preds):
        for order in _linearizations(subset, preds, graph.ops_by_seq, cfg):
            count += 1
            if count > budget:
                raise ExplosionLimit(budget)
            yield CrashSchedule(
                behavior_id=behavior.id,
                mode=trace.meta.mode,
                context=context,
                applied=tuple(graph.ops_by_seq[s] for s in order),
            )


def enumerate_schedules(
    behavior: UpdateBehavior,
    trace: Trace,
    cfg: ModelConfig | None = None,
    budget: int = 100_000,
) -> Iterator[CrashSchedule]:
    """Pruned crash schedules for one behavior.

    Yields one schedule per (downward-closed subset, commuting class);
    raises :class:`ExplosionLimit` after ``budget`` schedules.
    """
    yield from _schedules(behavior, trace, cfg or ModelConfig(), budget)


def exhaustive_schedules(
    behavior: UpdateBehavior,
    trace: Trace,
    budget: int = 1_000_000,
) -> Iterator[CrashSchedule]:
    """Every downward-closed subset and every linearization, unpruned.

    This is the baseline model checker's enumerator: no commutation
    reasoning at all, but it backtracks over valid orders instead of
    filtering raw permutations, so dense graphs stay tractable.
    """
    yield from _schedules(behavior, trace, None, budget)


def brute_force_schedules(
    behavior: UpdateBehavior,
    trace: Trace,
    budget: int = 1_000_000,
) -> Iterator[CrashSchedule]:
    """Every downward-closed subset and every linearization, enumerated the
    dumbest possible way: plain combinations and permutations with filters.

    Deliberately shares no enumeration logic with ``enumerate_schedules``
    so it can serve as an independent oracle in the pruning-soundness
    suite.  Quadratic waste makes it unsuitable beyond ~8 nodes; the CLI
    baseline uses :func:`exhaustive_schedules` instead.
    """
    context = tuple(op for op in trace.ops if op.seq < behavior.span[0])
    graph = behavior.subgraph
    nodes = sorted(graph.ops_by_seq)
    edge_pairs = {(e.src_seq, e.dst_seq) for e in graph.edges}
    count = 0
    for size in range(len(nodes) + 1):
        for combo in itertools.combinations(nodes, size):
            chosen = set(combo)
            if any(dst in chosen and src not in chosen for src, dst in edge_pairs):
                continue
            for perm in itertools.permutations(combo):
                pos = {seq: i for i, seq in enumerate(perm)}
                if any(
                    src in chosen and dst in chosen and pos[src] > pos[dst]
                    for src, dst in edge_pairs
                ):
                    continue
                count += 1
                if count > budget:
                    raise ExplosionLimit(budget)
                yield CrashSchedule(
                    behavior_id=behavior.id,
                    mode=trace.meta.mode,
                    context=context,
                    applied=tuple(graph.ops_by_seq[s] for s in perm),
                )


# ---------------------------------------------------------------------------
# Storage images and replay
# ---------------------------------------------------------------------------


@dataclass
class FsImage:
    files: dict[str, bytearray] = field(default_factory=dict)
    dirents: dict[str, set[str]] = field(default_factory=dict)

    def copy(self) -> "FsImage":
        return FsImage(
            files={p: bytearray(b) for p, b in self.files.items()},
            dirents={d: set(names) for d, names in self.dirents.items()},
        )

    def digest(self) -> str:
        payload = {
            "files": {p: bytes(b).hex() for p, b in sorted(self.files.items())},
            "dirents": {d: sorted(names) for d, names in sorted(self.dirents.items())},
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class MemImage:
    cells: dict[int, int] = field(default_factory=dict)
    line_size: int = 64

    def copy(self) -> "MemImage":
        return MemImage(cells=dict(self.cells), line_size=self.line_size)

    def line_contents(self) -> dict[int, dict[int, int]]:
        lines: dict[int, dict[int, int]] = {}
        for addr, value in self.cells.items():
            lines.setdefault(addr // self.line_size, {})[addr] = value
        return lines

    def read(self, addr: int, length: int) -> bytes:
        return bytes(self.cells.get(addr + i, 0) for i in range(length))

    def digest(self) -> str:
        payload = json.dumps(sorted(self.cells.items())).encode()
        return hashlib.sha256(payload).hexdigest()


def _apply_posix_op(image: FsImage, op: Operation):
    kind = op.kind
    if kind in ("write", "pwrite"):
        path = op.args["path"]
        buf = image.files.get(path)
        if buf is None:
            buf = bytearray()
            image.files[path] = buf
            image.dirents.setdefault(parent_dir(path), set()).add(entry_name(path))
        offset = op.args["offset"]
        payload = op.payload()
        if len(buf) < offset:
            buf.extend(b"\x00" * (offset - len(buf)))
        buf[offset:offset + len(payload)] = payload
    elif kind == "create":
        path = op.args["path"]
        image.files.setdefault(path, bytearray())
        image.dirents.setdefault(parent_dir(path), set()).add(entry_name(path))
    elif kind == "mkdir":
        path = op.args["path"].rstrip("/")
        image.dirents.setdefault(parent_dir(path), set()).add(entry_name(path))
        image.dirents.setdefault(path, set())
    elif kind == "rename":
        src, dst = op.args["path"], op.args["dst"]
        if src not in image.files:
            raise ReplayError(f"rename of nonexistent source {src!r} (op {op.seq})")
        image.files[dst] = image.files.pop(src)
        src_dir = image.dirents.get(parent_dir(src))
        if src_dir:
            src_dir.discard(entry_name(src))
        image.dirents.setdefault(parent_dir(dst), set()).add(entry_name(dst))
    elif kind == "unlink":
        path = op.args["path"]
        if path not in image.files:
            raise ReplayError(f"unlink of nonexistent file {path!r} (op {op.seq})")
        del image.files[path]
        entries = image.dirents.get(parent_dir(path))
        if entries:
            entries.discard(entry_name(path))
    # fsync/fdatasync/sync/open/close leave the image untouched.


def replay_posix(schedule: CrashSchedule, initial: FsImage | None = None) -> FsImage:
    """Apply context then the applied list, in order, to a file-system image."""
    if schedule.mode != POSIX_MODE:
        raise ModeMismatch("replay_posix needs a POSIX schedule")
    image = initial.copy() if initial is not None else FsImage()
    for op in schedule.context + schedule.applied:
        _apply_posix_op(image, op)
    return image


def replay_mmio(schedule: CrashSchedule, initial: MemImage | None = None) -> MemImage:
    """Apply context then the applied list to a sparse memory image."""
    if schedule.mode != MMIO_MODE:
        raise ModeMismatch("replay_mmio needs an MMIO schedule")
    image = initial.copy() if initial is not None else MemImage()
    for op in schedule.context + schedule.applied:
        if op.kind != "store":
            continue
        addr = op.args["addr"]
        for i, byte in enumerate(op.payload()):
            image.cells[addr + i] = byte
    return image


def replay(schedule: CrashSchedule, initial=None):
    if schedule.mode == POSIX_MODE:
        return replay_posix(schedule, initial)
    return replay_mmio(schedule, initial)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    CONSISTENT = "Consistent"
    INCONSISTENT = "Inconsistent"
    ORACLE_ERROR = "OracleError"


@dataclass
class CheckResult:
    verdict: Verdict
    oracle_output: str
    schedule: CrashSchedule | None = None

    @property
    def output_digest(self) -> str:
        return hashlib.sha256(self.oracle_output.encode()).hexdigest()


MEM_IMAGE_FILE = "mem_image.json"


def materialize(image: FsImage | MemImage, scratch: Path):
    """Write an image into a scratch directory for the checker to inspect.

    The directory is owned by the run: any previous contents are removed so
    files absent from the image are absent on disk.
    """
    scratch = Path(scratch)
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir(parents=True)
    if isinstance(image, MemImage):
        payload = {"cells": {str(a): v for a, v in sorted(image.cells.items())}}
        (scratch / MEM_IMAGE_FILE).write_text(json.dumps(payload, indent=0))
        return
    for dirpath in image.dirents:
        rel = posixpath.normpath(dirpath)
        if rel.startswith("..") or posixpath.isabs(rel):
            raise ReplayError(f"refusing to materialize path {dirpath!r}")
        (scratch / rel).mkdir(parents=True, exist_ok=True)
    for path, data in image.files.items():
        rel = posixpath.normpath(path)
        if rel.startswith("..") or posixpath.isabs(rel):
            raise ReplayError(f"refusing to materialize path {path!r}")
        target = scratch / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(bytes(data))


def run_oracle(
    image: FsImage | MemImage,
    checker: str | list[str],
    scratch: Path,
    timeout: float = 30.0,
    schedule: CrashSchedule | None = None,
) -> CheckResult:
    """Materialize the image, invoke ``<checker> <scratch>``, map the exit
    status: 0 is consistent, anything else inconsistent, a timeout is an
    oracle error."""
    materialize(image, scratch)
    argv = shlex.split(checker) if isinstance(checker, str) else list(checker)
    argv.append(str(scratch))
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        return CheckResult(Verdict.ORACLE_ERROR, f"timeout after {timeout}s", schedule)
    except OSError as exc:
        raise CheckerError(f"cannot spawn checker {argv[0]!r}: {exc}") from exc
    output = proc.stdout + proc.stderr
    verdict = Verdict.CONSISTENT if proc.returncode == 0 else Verdict.INCONSISTENT
    return CheckResult(verdict, output, schedule)


# ---------------------------------------------------------------------------
# Group testing
# ---------------------------------------------------------------------------


@dataclass
class BugReport:
    id: str
    behavior_id: str
    schedule: CrashSchedule
    applied: list[Operation]
    omitted: list[Operation]
    oracle_output: str
    subgraph_dot: str

    def dedup_key(self, key_mode: str) -> tuple:
        omitted_keys = sorted(
            str(StaticKey.of(op, key_mode)) for op in self.omitted if op.is_persisting
        )
        digest = hashlib.sha256(self.oracle_output.encode()).hexdigest()
        return (tuple(omitted_keys), digest)

    def to_json(self) -> dict:
        def op_json(op: Operation) -> dict:
            return {
                "seq": op.seq,
                "kind": op.kind,
                "loc": f"{op.backtrace.innermost.file}:{op.backtrace.innermost.line}",
                "backtrace": op.backtrace.to_json(),
            }

        return {
            "id": self.id,
            "behavior_id": self.behavior_id,
            "schedule": self.schedule.to_json(),
            "applied": [op_json(op) for op in self.applied],
            "omitted": [op_json(op) for op in self.omitted],
            "oracle_output": self.oracle_output,
            "subgraph_dot": self.subgraph_dot,
        }


@dataclass
class RunStats:
    representatives_tested: int = 0
    schedules_tested: int = 0
    distinct_states: int = 0
    states_deduped: int = 0
    oracle_errors: int = 0
    partial_coverage: bool = False
    correlated_states: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "representatives_tested": self.representatives_tested,
            "schedules_tested": self.schedules_tested,
            "distinct_states": self.distinct_states,
            "states_deduped": self.states_deduped,
            "oracle_errors": self.oracle_errors,
            "partial_coverage": self.partial_coverage,
            "correlated_states": dict(sorted(self.correlated_states.items())),
        }


def _behavior_locs(behavior: UpdateBehavior) -> set[tuple[str, int]]:
    return {
        (op.backtrace.innermost.file, op.backtrace.innermost.line)
        for op in behavior.subgraph.ops_by_seq.values()
    }


def test_groups(
    groups,
    behaviors_by_id: dict[str, UpdateBehavior],
    trace: Trace,
    checker: str | list[str],
    scratch_root: Path,
    cfg: ModelConfig | None = None,
    budget: int = 100_000,
    timeout: float = 30.0,
) -> tuple[list[BugReport], RunStats]:
    """Enumerate, replay and check every distinct representative.

    A state digest memo shared across representatives keeps any crash state
    from being oracle-tested twice, including states that sit on the
    boundary between one behavior's context and another's subsets.
    Inconsistent states become bug reports, deduplicated by the static-key
    multiset of omitted persisting ops plus the oracle output digest.  The
    correlated-state count for a bug is the number of distinct tested
    states whose generating behavior covers the bug's root-cause source
    location.
    """
    cfg = cfg or ModelConfig()
    scratch_root = Path(scratch_root)
    stats = RunStats()
    reps: list[UpdateBehavior] = []
    seen_rep_ids = set()
    for group in groups:
        if group.representative not in seen_rep_ids:
            seen_rep_ids.add(group.representative)
            reps.append(behaviors_by_id[group.representative])

    bugs: list[BugReport] = []
    bug_keys: dict[tuple, str] = {}
    key_mode = reps[0].subgraph.key_mode if reps else FULL_KEY
    states_by_rep: dict[str, set[str]] = {}
    seen_digests: set[str] = set()

    for rep_index, rep in enumerate(reps):
        stats.representatives_tested += 1
        rep_digests: set[str] = set()
        states_by_rep[rep.id] = rep_digests
        schedules = enumerate_schedules(rep, trace, cfg, budget)
        scratch = scratch_root / f"rep{rep_index}"
        while True:
            try:
                schedule = next(schedules)
            except StopIteration:
                break
            except ExplosionLimit:
                stats.partial_coverage = True
                break
            stats.schedules_tested += 1
            image = replay(schedule)
            digest = image.digest()
            if digest in seen_digests:
                stats.states_deduped += 1
                continue
            seen_digests.add(digest)
            rep_digests.add(digest)
            result = run_oracle(image, checker, scratch, timeout=timeout, schedule=schedule)
            if result.verdict is Verdict.ORACLE_ERROR:
                stats.oracle_errors += 1
                continue
            if result.verdict is Verdict.INCONSISTENT:
                applied = set(schedule.applied_seqs)
                omitted = [
                    rep.subgraph.ops_by_seq[s] for s in rep.node_seqs if s not in applied
                ]
                report = BugReport(
                    id=f"bug{len(bugs)}",
                    behavior_id=rep.id,
                    schedule=schedule,
                    applied=list(schedule.applied),
                    omitted=omitted,
                    oracle_output=result.oracle_output,
                    subgraph_dot=export_dot(rep.subgraph),
                )
                key = report.dedup_key(key_mode)
                if key not in bug_keys:
                    bug_keys[key] = report.id
                    bugs.append(report)

    stats.distinct_states = len(seen_digests)
    for bug in bugs:
        root_persisting = [op for op in bug.omitted if op.is_persisting]
        anchor = root_persisting[0] if root_persisting else None
        if anchor is None:
            continue
        loc = (anchor.backtrace.innermost.file, anchor.backtrace.innermost.line)
        covered = 0
        for rep in reps:
            if loc in _behavior_locs(rep):
                covered += len(states_by_rep[rep.id])
        stats.correlated_states[bug.id] = covered
    return bugs, stats
