import random

import pytest

from crashcheck import ModeMismatch, ModelConfig, mmio_edges, posix_edges
from crashcheck.models import EdgeReason, blocks_of, lines_of, store_persisted_before

from helpers import (
    mmio_trace,
    op,
    posix_trace,
    random_mmio_trace,
    random_posix_trace,
    store_args,
    write_args,
)


def pairs(edges):
    return {(e.src_seq, e.dst_seq) for e in edges}


def test_same_block_writes_are_ordered():
    trace = posix_trace(
        [
            op(1, "write", write_args("f", b"aa", 0), (("main", 1),)),
            op(2, "write", write_args("f", b"bb", 8), (("main", 2),)),
        ]
    )
    assert pairs(posix_edges(trace)) == {(1, 2)}


def test_different_blocks_same_file_unordered_by_default():
    trace = posix_trace(
        [
            op(1, "write", write_args("f", b"aa", 0), (("main", 1),)),
            op(2, "write", write_args("f", b"bb", 8192), (("main", 2),)),
        ]
    )
    edges = posix_edges(trace)
    # Both writes extend the file, so only the size-metadata edge remains.
    assert pairs(edges) == {(1, 2)}
    assert {e.reason for e in edges} == {EdgeReason.METADATA_ORDER}
    overwrite = posix_trace(
        [
            op(1, "write", write_args("f", b"aa", 8192), (("main", 1),)),
            op(2, "write", write_args("f", b"bb", 0), (("main", 2),)),
        ]
    )
    assert pairs(posix_edges(overwrite)) == set()


def test_pwrite_behaves_like_write_in_the_model():
    trace = posix_trace(
        [
            op(1, "pwrite", write_args("f", b"aa", 0), (("main", 1),)),
            op(2, "pwrite", write_args("f", b"bb", 8), (("main", 2),)),
            op(3, "fdatasync", {"path": "f"}, (("main", 3),)),
            op(4, "pwrite", write_args("g", b"cc", 0), (("main", 4),)),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert (1, 2) in edge_pairs
    assert {(1, 4), (2, 4)} <= edge_pairs


def test_block_spanning_write_conflicts_on_every_block():
    trace = posix_trace(
        [
            op(1, "write", write_args("f", b"x" * 8, 4092), (("main", 1),)),
            op(2, "write", write_args("f", b"y" * 4, 4096), (("main", 2),)),
        ]
    )
    assert (1, 2) in pairs(posix_edges(trace))
    assert blocks_of(4092, 8, 4096) == frozenset({0, 1})


def test_no_block_split_orders_whole_file():
    trace = posix_trace(
        [
            op(1, "write", write_args("f", b"aa", 8192), (("main", 1),)),
            op(2, "write", write_args("f", b"bb", 0), (("main", 2),)),
        ]
    )
    cfg = ModelConfig(split_writes_at_block_boundary=False)
    assert (1, 2) in pairs(posix_edges(trace, cfg))


def test_fdatasync_orders_write_before_rename():
    trace = posix_trace(
        [
            op(1, "write", write_args("f2", b"aa"), (("main", 1),)),
            op(2, "fdatasync", {"path": "f2"}, (("main", 2),)),
            op(3, "rename", {"path": "f2", "dst": "g"}, (("main", 3),)),
        ]
    )
    edges = posix_edges(trace)
    assert (1, 3) in pairs(edges)
    # barrier anchors keep the fdatasync node connected
    assert pairs(edges) == {(1, 2), (1, 3), (2, 3)}


def test_two_writes_to_different_files_have_no_edges():
    trace = posix_trace(
        [
            op(1, "write", write_args("f1", b"a"), (("main", 1),)),
            op(2, "write", write_args("f2", b"b"), (("main", 2),)),
        ]
    )
    assert posix_edges(trace) == set()


def test_fdatasync_scopes_to_its_own_file():
    trace = posix_trace(
        [
            op(1, "write", write_args("other", b"aa"), (("main", 1),)),
            op(2, "fdatasync", {"path": "f"}, (("main", 2),)),
            op(3, "write", write_args("third", b"bb"), (("main", 3),)),
        ]
    )
    assert pairs(posix_edges(trace)) == set()


def test_fsync_file_includes_metadata_ops():
    trace = posix_trace(
        [
            op(1, "create", {"path": "f"}, (("main", 1),)),
            op(2, "fsync", {"path": "f", "dir": False}, (("main", 2),)),
            op(3, "write", write_args("g", b"x"), (("main", 3),)),
        ]
    )
    assert pairs(posix_edges(trace)) == {(1, 2), (1, 3), (2, 3)}


def test_fsync_directory_orders_entry_ops():
    trace = posix_trace(
        [
            op(1, "create", {"path": "d/a"}, (("main", 1),)),
            op(2, "write", write_args("d/a", b"zz"), (("main", 2),)),
            op(3, "fsync", {"path": "d", "dir": True}, (("main", 3),)),
            op(4, "unlink", {"path": "d/b"}, (("main", 4),)),
            op(5, "create", {"path": "d/b"}, (("main", 5),)),
        ]
    )
    # The dirent op (create d/a) is barriered; the plain write is not.
    edge_pairs = pairs(posix_edges(trace))
    assert (1, 3) in edge_pairs
    assert (1, 4) in edge_pairs and (1, 5) in edge_pairs
    assert (3, 4) in edge_pairs and (3, 5) in edge_pairs
    assert (2, 4) not in edge_pairs


def test_fsync_directory_with_subdirectory_paths():
    trace = posix_trace(
        [
            op(1, "create", {"path": "db/wal/seg1"}, (("main", 1),)),
            op(2, "create", {"path": "db/other"}, (("main", 2),)),
            op(3, "fsync", {"path": "db/wal", "dir": True}, (("main", 3),)),
            op(4, "create", {"path": "db/wal/seg2"}, (("main", 4),)),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert (1, 3) in edge_pairs and (1, 4) in edge_pairs  # entry of db/wal
    assert (2, 3) not in edge_pairs  # db/other lives in db, not db/wal


def test_sync_orders_everything_before_after():
    trace = posix_trace(
        [
            op(1, "write", write_args("a", b"x"), (("main", 1),)),
            op(2, "create", {"path": "b"}, (("main", 2),)),
            op(3, "sync", {}, (("main", 3),)),
            op(4, "write", write_args("c", b"y"), (("main", 4),)),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert {(1, 4), (2, 4), (1, 3), (2, 3), (3, 4)} <= edge_pairs


def test_metadata_ops_on_same_path_are_ordered():
    trace = posix_trace(
        [
            op(1, "create", {"path": "a"}, (("main", 1),)),
            op(2, "rename", {"path": "a", "dst": "b"}, (("main", 2),)),
            op(3, "unlink", {"path": "b"}, (("main", 3),)),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert (1, 2) in edge_pairs  # both name 'a'
    assert (2, 3) in edge_pairs  # both name 'b'


def test_recreating_consumed_path_is_ordered_after_consumer():
    trace = posix_trace(
        [
            op(1, "write", write_args("a", b"1"), (("main", 1),)),
            op(2, "rename", {"path": "a", "dst": "b"}, (("main", 2),)),
            op(3, "write", write_args("a", b"2"), (("main", 3),)),
            op(4, "rename", {"path": "a", "dst": "c"}, (("main", 4),)),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert {(1, 2), (2, 3), (3, 4)} <= edge_pairs


def test_open_close_contribute_no_edges():
    trace = posix_trace(
        [
            op(1, "open", {"path": "f"}, (("main", 1),)),
            op(2, "write", write_args("f", b"x"), (("main", 2),)),
            op(3, "close", {"path": "f"}, (("main", 3),)),
        ]
    )
    assert posix_edges(trace) == set()


def test_posix_rejects_mmio_trace_and_vice_versa():
    mm = mmio_trace([op(1, "store", store_args(0, b"x"), (("main", 1),))])
    with pytest.raises(ModeMismatch):
        posix_edges(mm)
    px = posix_trace([op(1, "sync", {}, (("main", 1),))])
    with pytest.raises(ModeMismatch):
        mmio_edges(px)


# --- MMIO ---


def test_flush_fence_orders_across():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"A"), (("main", 1),)),
            op(2, "flush", {"addr": 0, "length": 64}, (("main", 2),)),
            op(3, "fence", {}, (("main", 3),)),
            op(4, "store", store_args(64, b"B"), (("main", 4),)),
        ]
    )
    edges = mmio_edges(trace)
    assert pairs(edges) == {(1, 4)}
    assert {e.reason for e in edges} == {EdgeReason.FLUSH_FENCE}


def test_unflushed_stores_are_unordered():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"k"), (("main", 1),)),
            op(2, "store", store_args(64, b"v"), (("main", 2),)),
            op(3, "store", store_args(128, b"\x01"), (("main", 3),)),
        ]
    )
    assert mmio_edges(trace) == set()


def test_same_cache_line_stores_are_ordered():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"old"), (("main", 1),)),
            op(2, "store", store_args(8, b"new"), (("main", 2),)),
        ]
    )
    edges = mmio_edges(trace)
    assert pairs(edges) == {(1, 2)}
    assert {e.reason for e in edges} == {EdgeReason.SAME_CACHE_LINE}
    assert lines_of(8, 3, 64) == frozenset({0})


def test_fence_alone_orders_nothing():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"a"), (("main", 1),)),
            op(2, "fence", {}, (("main", 2),)),
            op(3, "store", store_args(64, b"b"), (("main", 3),)),
        ]
    )
    assert mmio_edges(trace) == set()


def test_flush_without_fence_orders_nothing():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"a"), (("main", 1),)),
            op(2, "flush", {"addr": 0, "length": 64}, (("main", 2),)),
            op(3, "store", store_args(64, b"b"), (("main", 3),)),
        ]
    )
    assert mmio_edges(trace) == set()


def test_msync_acts_as_flush_fence():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"a"), (("main", 1),)),
            op(2, "msync", {"addr": 0, "length": 64}, (("main", 2),)),
            op(3, "store", store_args(64, b"b"), (("main", 3),)),
        ]
    )
    edges = mmio_edges(trace)
    assert pairs(edges) == {(1, 3)}
    assert {e.reason for e in edges} == {EdgeReason.MSYNC}


def test_store_persisted_before_helper():
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"a"), (("main", 1),)),
            op(2, "flush", {"addr": 0, "length": 64}, (("main", 2),)),
            op(3, "fence", {}, (("main", 3),)),
            op(4, "store", store_args(0, b"b"), (("main", 4),)),
        ]
    )
    cfg = ModelConfig()
    assert store_persisted_before(trace.ops[0], 4, trace, cfg)
    assert not store_persisted_before(trace.ops[0], 2, trace, cfg)
    assert not store_persisted_before(trace.ops[3], 5, trace, cfg)


# --- shared invariants ---


def test_all_edges_run_forward():
    rng = random.Random(3)
    for _ in range(30):
        for trace, fn in (
            (random_posix_trace(rng), posix_edges),
            (random_mmio_trace(rng), mmio_edges),
        ):
            for e in fn(trace):
                assert e.src_seq < e.dst_seq


def _renumber(trace_ops, insert_at):
    mapping = {}
    for o in trace_ops:
        mapping[o.seq] = o.seq + 1 if o.seq >= insert_at else o.seq
    return mapping


def test_monotonicity_inserting_ordering_op_never_removes_edges():
    rng = random.Random(11)
    for _ in range(40):
        trace = random_posix_trace(rng)
        before = posix_edges(trace)
        insert_at = rng.randint(1, len(trace.ops) + 1)
        mapping = _renumber(trace.ops, insert_at)
        new_ops = []
        for o in trace.ops:
            new_ops.append(
                op(mapping[o.seq], o.kind, o.args, tuple((f.function, f.line) for f in o.backtrace.frames))
            )
        barrier = rng.choice(
            [
                op(insert_at, "sync", {}, (("main", 99),)),
                op(insert_at, "fsync", {"path": "f1", "dir": False}, (("main", 99),)),
                op(insert_at, "fdatasync", {"path": "f2"}, (("main", 99),)),
            ]
        )
        new_ops.append(barrier)
        new_ops.sort(key=lambda o: o.seq)
        after = posix_edges(posix_trace(new_ops))
        after_pairs = pairs(after)
        for e in before:
            assert (mapping[e.src_seq], mapping[e.dst_seq]) in after_pairs


def test_model_rules_fire_across_threads():
    # rules act on the merged global order; tids do not exempt a pair
    trace = posix_trace(
        [
            op(1, "write", write_args("f", b"aa", 0), (("t1", 1),), tid=1),
            op(2, "write", write_args("f", b"bb", 4), (("t2", 1),), tid=2),
            op(3, "sync", {}, (("t1", 2),), tid=1),
            op(4, "write", write_args("g", b"cc"), (("t2", 2),), tid=2),
        ]
    )
    edge_pairs = pairs(posix_edges(trace))
    assert (1, 2) in edge_pairs  # same block, different threads
    assert {(1, 4), (2, 4)} <= edge_pairs  # sync on t1 barriers t2's write


def test_global_barrier_isolates_suffix_from_prefix():
    # After covering flush+fence, every earlier store is ordered before
    # every later store, so any legal state containing a later store
    # contains all earlier ones.
    trace = mmio_trace(
        [
            op(1, "store", store_args(0, b"a"), (("main", 1),)),
            op(2, "store", store_args(64, b"b"), (("main", 2),)),
            op(3, "flush", {"addr": 0, "length": 128}, (("main", 3),)),
            op(4, "fence", {}, (("main", 4),)),
            op(5, "store", store_args(128, b"c"), (("main", 5),)),
            op(6, "store", store_args(192, b"d"), (("main", 6),)),
        ]
    )
    edge_pairs = pairs(mmio_edges(trace))
    assert {(1, 5), (1, 6), (2, 5), (2, 6)} <= edge_pairs
