"""Shared builders for hand-constructed traces and random workload traces."""

from __future__ import annotations

import random

from crashcheck import Backtrace, Frame, HbEdge, Operation, Trace, build_graph
from crashcheck.behavior import make_behavior
from crashcheck.models import EdgeReason
from crashcheck.trace import MMIO_MODE, POSIX_MODE, TraceMeta, payload_digest


def bt(*frames: tuple[str, int], file: str = "app.c") -> Backtrace:
    return Backtrace(tuple(Frame(fn, file, line) for fn, line in frames))


def op(
    seq: int,
    kind: str,
    args: dict,
    frames: tuple = (("main", 1),),
    tid: int = 0,
    annotation=None,
    file: str = "app.c",
) -> Operation:
    return Operation(
        seq=seq,
        tid=tid,
        kind=kind,
        args=args,
        backtrace=bt(*frames, file=file),
        annotation=annotation,
    )


def write_args(path: str, data: bytes, offset: int = 0) -> dict:
    return {
        "path": path,
        "offset": offset,
        "length": len(data),
        "digest": payload_digest(data),
        "data": data.hex(),
    }


def store_args(addr: int, data: bytes) -> dict:
    return {
        "addr": addr,
        "length": len(data),
        "digest": payload_digest(data),
        "data": data.hex(),
        "line": addr // 64,
    }


def posix_trace(ops: list[Operation], app: str = "test") -> Trace:
    return Trace(meta=TraceMeta(app_name=app, mode=POSIX_MODE), ops=ops)


def mmio_trace(ops: list[Operation], app: str = "test") -> Trace:
    return Trace(meta=TraceMeta(app_name=app, mode=MMIO_MODE), ops=ops)


def fig5_behaviors():
    """The pointer-switch trio: a run of Fn3 with the rename (S3-1), a run
    without it (S3-2, different payloads, aligned static locations), and a
    behavior from another function (S2).  S3-1 carries the write->write
    dependency plus the write->rename one; S3-2 carries just the former."""
    mo = EdgeReason.METADATA_ORDER

    def w(seq, path, payload, frames):
        return op(seq, "write", write_args(path, payload), frames)

    run_a = posix_trace(
        [
            w(1, "f3", b"s2-a", (("Fn1", 1), ("Fn2", 10))),
            w(2, "f3", b"s2-b", (("Fn1", 1), ("Fn2", 11))),
            w(3, "f1", b"one", (("Fn1", 2), ("Fn3", 20))),
            w(4, "f2", b"two", (("Fn1", 2), ("Fn3", 21))),
            op(5, "rename", {"path": "f2", "dst": "CUR"}, (("Fn1", 2), ("Fn3", 22))),
        ]
    )
    edges_a = {HbEdge(1, 2, mo), HbEdge(3, 4, mo), HbEdge(4, 5, mo)}
    graph_a = build_graph(run_a, edges_a)

    run_b = posix_trace(
        [
            w(3, "f1", b"ONE", (("Fn1", 2), ("Fn3", 20))),
            w(4, "f2", b"TWO", (("Fn1", 2), ("Fn3", 21))),
        ]
    )
    graph_b = build_graph(run_b, {HbEdge(3, 4, mo)})

    s3_1 = make_behavior("S3-1", "Fn3", 0, (3, 4, 5), graph_a)
    s3_2 = make_behavior("S3-2", "Fn3", 0, (3, 4), graph_b)
    s2 = make_behavior("S2", "Fn2", 0, (1, 2), graph_a)
    return s3_1, s3_2, s2


def random_posix_trace(rng: random.Random, max_ops: int = 8) -> Trace:
    """Random small POSIX trace mixing data, metadata and ordering ops.

    The total op count stays within ``max_ops`` (every op is a graph node,
    so this bounds brute-force enumeration); at most ``max_ops`` persisting
    ops appear.  Renames/unlinks only ever name a currently existing file,
    mirroring what a real traced execution could produce.
    """
    paths = ["f1", "f2", "f3"]
    total = rng.randint(3, max_ops)
    ops: list[Operation] = []
    live: set[str] = set()
    for seq in range(1, total + 1):
        roll = rng.random()
        if roll < 0.5 or (roll < 0.8 and not live) or seq <= 2:
            path = rng.choice(paths)
            data = bytes([rng.randint(1, 255)]) * rng.randint(1, 4)
            offset = rng.choice([0, 2, 4096, 4094])
            ops.append(op(seq, "write", write_args(path, data, offset), (("main", seq),)))
            live.add(path)
        elif roll < 0.58:
            path = rng.choice(paths)
            ops.append(op(seq, "create", {"path": path}, (("main", seq),)))
            live.add(path)
        elif roll < 0.66:
            src = rng.choice(sorted(live))
            dst = rng.choice([p for p in paths if p != src])
            ops.append(op(seq, "rename", {"path": src, "dst": dst}, (("main", seq),)))
            live.discard(src)
            live.add(dst)
        elif roll < 0.78:
            path = rng.choice(sorted(live))
            ops.append(op(seq, "unlink", {"path": path}, (("main", seq),)))
            live.discard(path)
        elif roll < 0.86:
            path = rng.choice(paths)
            kind = rng.choice(["fsync", "fdatasync"])
            args = {"path": path}
            if kind == "fsync":
                args["dir"] = False
            ops.append(op(seq, kind, args, (("main", seq),)))
        elif roll < 0.92:
            ops.append(op(seq, "fsync", {"path": ".", "dir": True}, (("main", seq),)))
        else:
            ops.append(op(seq, "sync", {}, (("main", seq),)))
    return posix_trace(ops)


def random_mmio_trace(rng: random.Random, max_ops: int = 8) -> Trace:
    """Random small MMIO trace mixing stores, flushes, fences and msyncs,
    capped at ``max_ops`` total operations."""
    addrs = [0, 8, 64, 128, 192]
    total = rng.randint(3, max_ops)
    ops: list[Operation] = []
    for seq in range(1, total + 1):
        roll = rng.random()
        if roll < 0.6 or seq <= 2:
            addr = rng.choice(addrs)
            data = bytes([rng.randint(1, 255)]) * rng.randint(1, 8)
            ops.append(op(seq, "store", store_args(addr, data), (("main", seq),)))
        elif roll < 0.75:
            addr = rng.choice([0, 64, 128])
            ops.append(op(seq, "flush", {"addr": addr, "length": rng.choice([64, 128])}, (("main", seq),)))
        elif roll < 0.9:
            ops.append(op(seq, "fence", {}, (("main", seq),)))
        else:
            addr = rng.choice([0, 64])
            ops.append(op(seq, "msync", {"addr": addr, "length": 128}, (("main", seq),)))
    return mmio_trace(ops)
