"""Crash-consistency testing via persistence graphs and representative
update behaviors.

Pipeline: trace (parsed or synthesized from the workload DSL) -> happens-
before edges under a POSIX or MMIO persistence model -> persistence graph
-> update behaviors (backtrace-derived for POSIX, type/instance/epoch for
MMIO) -> behavior groups under the represents relation -> crash-schedule
enumeration, replay and consistency checking of each group representative.
"""

from .behavior import UpdateBehavior, cluster_temporal, make_behavior
from .dsl import synth_workload
from .errors import (
    CheckerError,
    CrashCheckError,
    DslError,
    ExplosionLimit,
    GraphBuildError,
    ModeMismatch,
    NodeNotFound,
    ParseError,
    ReplayError,
    SequenceOrderError,
    UnknownOperationKind,
)
from .graph import PersistenceGraph, StaticKey, build_graph, export_dot, induced_edges
from .grouping import (
    BehaviorGroup,
    edge_equiv,
    equivalence_image,
    group_behaviors,
    node_equiv,
    represents,
    subset_equiv_edges,
    subset_equiv_nodes,
)
from .mmio_behaviors import (
    EpochBoundary,
    EpochSubgraph,
    InstanceSubgraph,
    TypeSubgraph,
    build_instance_subgraphs,
    build_type_subgraphs,
    derive_mmio_behaviors,
    split_epochs,
)
from .models import EdgeReason, HbEdge, ModelConfig, mmio_edges, model_edges, posix_edges
from .posix_behaviors import (
    CallStackTree,
    derive_function_subgraphs,
    derive_posix_behaviors,
    longest_common_prefix,
    merge_up_tree,
)
from .simulate import (
    BugReport,
    CheckResult,
    CrashSchedule,
    FsImage,
    MemImage,
    RunStats,
    Verdict,
    brute_force_schedules,
    enumerate_schedules,
    replay_mmio,
    replay_posix,
    run_oracle,
    test_groups,
)
from .trace import (
    Annotation,
    Backtrace,
    Frame,
    Operation,
    Trace,
    parse_trace,
    serialize_trace,
    split_by_thread,
)

__version__ = "0.1.0"
