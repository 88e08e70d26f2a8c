"""Persistence graph: operations as nodes, happens-before edges, and the
static keys used for node equivalence.

Node identity is the trace seq; equivalence between nodes is a separate
relation built on :class:`StaticKey` (see :mod:`crashcheck.grouping`), which
keeps the dynamic/static split explicit.  Graphs are immutable after
construction and safe to share across readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import GraphBuildError, NodeNotFound
from .models import HbEdge
from .trace import METADATA_ONLY_KINDS, Operation, Trace

FULL_KEY = "full"
INNERMOST_KEY = "innermost"


@dataclass(frozen=True, order=True)
class StaticKey:
    """Payload-independent identity of an operation's program location.

    The default mode keys a node by its kind plus the whole static call
    chain, so the same write reached through two different call paths stays
    distinct; ``innermost`` keeps only the deepest frame, which deliberately
    conflates call contexts.
    """

    kind: str
    static_stack: tuple[tuple[str, str, int], ...]

    @property
    def loc(self) -> tuple[str, int]:
        _, file, line = self.static_stack[-1]
        return (file, line)

    @classmethod
    def of(cls, op: Operation, mode: str = FULL_KEY) -> "StaticKey":
        frames = tuple((f.function, f.file, f.line) for f in op.backtrace.frames)
        if mode == INNERMOST_KEY:
            frames = frames[-1:]
        elif mode != FULL_KEY:
            raise ValueError(f"unknown static key mode {mode!r}")
        return cls(kind=op.kind, static_stack=frames)


@dataclass(frozen=True)
class PersistenceGraph:
    ops_by_seq: dict[int, Operation]
    edges: frozenset[HbEdge]
    key_mode: str = FULL_KEY
    _preds: dict[int, set[int]] = field(default_factory=dict, repr=False)
    _succs: dict[int, set[int]] = field(default_factory=dict, repr=False)
    _static_index: dict[StaticKey, frozenset[int]] = field(default_factory=dict, repr=False)

    @property
    def node_seqs(self) -> tuple[int, ...]:
        return tuple(sorted(self.ops_by_seq))

    @property
    def static_index(self) -> dict[StaticKey, frozenset[int]]:
        return self._static_index

    def __len__(self) -> int:
        return len(self.ops_by_seq)

    def op(self, seq: int) -> Operation:
        try:
            return self.ops_by_seq[seq]
        except KeyError:
            raise NodeNotFound(f"node {seq} is not in the graph") from None

    def static_key(self, seq: int) -> StaticKey:
        return StaticKey.of(self.op(seq), self.key_mode)

    def predecessors(self, seq: int) -> set[int]:
        self.op(seq)
        return self._preds.get(seq, set())

    def successors(self, seq: int) -> set[int]:
        self.op(seq)
        return self._succs.get(seq, set())

    def ancestors(self, seq: int) -> set[int]:
        out: set[int] = set()
        stack = list(self.predecessors(seq))
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(self._preds.get(cur, ()))
        return out

    def topo_order(self) -> list[int]:
        # Edges always point from lower to higher seq, so seq order is
        # already topological.
        return sorted(self.ops_by_seq)

    def induced(self, node_set) -> "PersistenceGraph":
        nodes = set(node_set)
        unknown = nodes - self.ops_by_seq.keys()
        if unknown:
            raise NodeNotFound(f"nodes {sorted(unknown)} are not in the graph")
        return _make_graph(
            {seq: self.ops_by_seq[seq] for seq in nodes},
            {e for e in self.edges if e.src_seq in nodes and e.dst_seq in nodes},
            self.key_mode,
        )


def _make_graph(
    ops_by_seq: dict[int, Operation], edges: set[HbEdge], key_mode: str
) -> PersistenceGraph:
    preds: dict[int, set[int]] = {}
    succs: dict[int, set[int]] = {}
    for e in edges:
        preds.setdefault(e.dst_seq, set()).add(e.src_seq)
        succs.setdefault(e.src_seq, set()).add(e.dst_seq)
    index: dict[StaticKey, set[int]] = {}
    for seq, op in ops_by_seq.items():
        index.setdefault(StaticKey.of(op, key_mode), set()).add(seq)
    return PersistenceGraph(
        ops_by_seq=dict(ops_by_seq),
        edges=frozenset(edges),
        key_mode=key_mode,
        _preds=preds,
        _succs=succs,
        _static_index={k: frozenset(v) for k, v in index.items()},
    )


def build_graph(trace: Trace, edges: set[HbEdge], key_mode: str = FULL_KEY) -> PersistenceGraph:
    """Build the persistence graph over a trace's storage operations.

    open/close ops are recorded in traces but are pure bookkeeping; they do
    not become nodes.  Every edge endpoint must be a node and must run
    forward in trace order, otherwise :class:`GraphBuildError` is raised.
    """
    ops_by_seq = {op.seq: op for op in trace.ops if op.kind not in METADATA_ONLY_KINDS}
    for e in edges:
        if e.src_seq not in ops_by_seq or e.dst_seq not in ops_by_seq:
            raise GraphBuildError(f"edge {e.pair} references a seq outside the graph")
        if e.src_seq >= e.dst_seq:
            raise GraphBuildError(f"edge {e.pair} does not run forward in trace order")
    return _make_graph(ops_by_seq, set(edges), key_mode)


def induced_edges(graph: PersistenceGraph, node_set) -> set[HbEdge]:
    """Edges of the graph whose two endpoints both lie in ``node_set``."""
    nodes = set(node_set)
    unknown = nodes - graph.ops_by_seq.keys()
    if unknown:
        raise NodeNotFound(f"nodes {sorted(unknown)} are not in the graph")
    return {e for e in graph.edges if e.src_seq in nodes and e.dst_seq in nodes}


def export_dot(graph: PersistenceGraph, name: str = "pg") -> str:
    """Deterministic DOT rendering: nodes labeled kind@file:line, edges
    labeled with the model rule that produced them."""
    out = [f"digraph {name} {{"]
    for seq in sorted(graph.ops_by_seq):
        op = graph.ops_by_seq[seq]
        frame = op.backtrace.innermost
        out.append(f'  n{seq} [label="{op.kind}@{frame.file}:{frame.line}"];')
    for e in sorted(graph.edges):
        out.append(f'  n{e.src_seq} -> n{e.dst_seq} [label="{e.reason.value}"];')
    out.append("}")
    return "\n".join(out) + "\n"
