"""Command-line pipeline: trace or workload in, analysis and testing out.

Subcommands::

    synth       compile a workload program into a trace file
    analyze     derive behaviors, group them, emit groups.json and DOT files
    test        model-check representative behaviors against a checker
    exhaustive  brute-force every crash state of the whole trace
    replay      re-run one stored crash schedule

Exit codes: 0 success / no bugs, 1 bugs (or inconsistent replay) found,
2 configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import shlex
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .behavior import make_behavior
from .dsl import synth_workload
from .errors import CrashCheckError, ExplosionLimit, ModeMismatch
from .graph import FULL_KEY, build_graph, export_dot
from .grouping import group_behaviors
from .mmio_behaviors import derive_mmio_behaviors
from .models import ModelConfig, model_edges
from .posix_behaviors import derive_posix_behaviors
from .simulate import (
    Verdict,
    exhaustive_schedules,
    materialize,
    replay,
    run_oracle,
    schedule_from_json,
    test_groups,
)
from .trace import MMIO_MODE, POSIX_MODE, Trace, parse_trace, serialize_trace

_CONFIG_KEYS = {
    "mode", "block_size", "cache_line_size", "split_writes_at_block_boundary",
    "dbscan_eps", "dbscan_min_pts", "static_key", "checker", "budget",
    "timeout", "out",
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    mode: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    dbscan_eps: int = 10
    dbscan_min_pts: int = 1
    static_key: str = FULL_KEY
    checker: str | None = None
    budget: int = 100_000
    timeout: float = 30.0
    out: Path = Path("out")
    stage: str = ""


class ConfigError(CrashCheckError):
    pass


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    raise ConfigError(f"config key {key} must be a boolean, got {raw!r}")


def load_config_file(path: Path) -> dict:
    """Flat ``key = value`` text file; '#' starts a comment."""
    values = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = raw.strip()
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    cfg.stage = getattr(args, "command", "")
    values = {}
    if getattr(args, "config", None):
        values = load_config_file(Path(args.config))

    def pick(flag_name: str, key: str):
        flag = getattr(args, flag_name, None)
        if flag is not None:
            return flag
        return values.get(key)

    mode = pick("mode", "mode")
    if mode is not None:
        mode = str(mode).upper()
        if mode not in (POSIX_MODE, MMIO_MODE):
            raise ConfigError(f"mode must be POSIX or MMIO, got {mode!r}")
        cfg.mode = mode

    block_size = pick("block_size", "block_size")
    cache_line = pick("cache_line_size", "cache_line_size")
    split_raw = values.get("split_writes_at_block_boundary")
    split = _parse_bool(split_raw, "split_writes_at_block_boundary") if split_raw is not None else True
    if getattr(args, "no_block_split", False):
        split = False
    try:
        cfg.model = ModelConfig(
            block_size=int(block_size) if block_size is not None else 4096,
            cache_line_size=int(cache_line) if cache_line is not None else 64,
            split_writes_at_block_boundary=split,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    for attr, flag, key in (
        ("dbscan_eps", "eps", "dbscan_eps"),
        ("dbscan_min_pts", "min_pts", "dbscan_min_pts"),
        ("budget", "budget", "budget"),
    ):
        raw = pick(flag, key)
        if raw is not None:
            value = int(raw)
            if value <= 0:
                raise ConfigError(f"{key} must be positive")
            setattr(cfg, attr, value)

    timeout = pick("timeout", "timeout")
    if timeout is not None:
        cfg.timeout = float(timeout)

    static_key = pick("static_key", "static_key")
    if static_key is not None:
        if static_key not in ("full", "innermost"):
            raise ConfigError("static_key must be 'full' or 'innermost'")
        cfg.static_key = static_key

    checker = pick("checker", "checker")
    if checker is not None:
        cfg.checker = str(checker)

    out = pick("out", "out")
    if out is not None:
        cfg.out = Path(out)
    return cfg


def load_input_trace(args: argparse.Namespace, cfg: RunConfig) -> Trace:
    if getattr(args, "trace", None) and getattr(args, "dsl", None):
        raise ConfigError("pass either --trace or --dsl, not both")
    if getattr(args, "trace", None):
        trace = parse_trace(Path(args.trace).read_bytes())
    elif getattr(args, "dsl", None):
        if cfg.mode is None:
            raise ConfigError("--dsl input needs --mode")
        trace = synth_workload(
            Path(args.dsl).read_text(),
            cfg.mode,
            cache_line_size=cfg.model.cache_line_size,
        )
    else:
        raise ConfigError("an input is required: --trace FILE or --dsl FILE")
    if cfg.mode is not None and trace.meta.mode != cfg.mode:
        raise ModeMismatch(
            f"trace mode {trace.meta.mode} does not match configured mode {cfg.mode}"
        )
    cfg.mode = trace.meta.mode
    return trace


def derive_behaviors(trace: Trace, cfg: RunConfig):
    edges = model_edges(trace, cfg.model)
    graph = build_graph(trace, edges, key_mode=cfg.static_key)
    if trace.meta.mode == POSIX_MODE:
        behaviors = derive_posix_behaviors(
            graph, trace, eps=cfg.dbscan_eps, min_pts=cfg.dbscan_min_pts
        )
    else:
        behaviors = derive_mmio_behaviors(graph, trace, cfg.model)
    return graph, behaviors


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    if cfg.mode is None:
        raise ConfigError("synth needs --mode")
    trace = synth_workload(
        Path(args.dsl).read_text(), cfg.mode, cache_line_size=cfg.model.cache_line_size
    )
    data = serialize_trace(trace)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    trace = load_input_trace(args, cfg)
    graph, behaviors = derive_behaviors(trace, cfg)
    groups = group_behaviors(behaviors)

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    dot_dir = out / "dot"
    dot_dir.mkdir(exist_ok=True)
    (dot_dir / "full.dot").write_text(export_dot(graph))
    by_id = {b.id: b for b in behaviors}
    for index, behavior in enumerate(behaviors):
        name = f"b{index:03d}_{_safe_name(behavior.id)}.dot"
        (dot_dir / name).write_text(export_dot(behavior.subgraph))

    report = {
        "mode": trace.meta.mode,
        "counts": {
            "ops": len(trace.ops),
            "graph_nodes": len(graph),
            "graph_edges": len(graph.edges),
            "behaviors": len(behaviors),
            "groups": len(groups),
        },
        "behaviors": [
            {
                "id": b.id,
                "owner": b.owner_function,
                "tid": b.tid,
                "nodes": list(b.node_seqs),
                "span": list(b.span),
            }
            for b in behaviors
        ],
        "groups": [
            {
                "id": f"g{i}",
                "representative": g.representative,
                "members": g.members,
                "node_counts": {m: by_id[m].size for m in g.members},
            }
            for i, g in enumerate(groups)
        ],
    }
    (out / "groups.json").write_text(json.dumps(report, indent=2))
    print(
        f"analyze: {len(trace.ops)} ops, {len(graph)} nodes, {len(graph.edges)} edges, "
        f"{len(behaviors)} behaviors, {len(groups)} groups -> {out}"
    )
    return 0


def cmd_test(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    if not cfg.checker:
        raise ConfigError("test needs --checker")
    checker_bin = shlex.split(cfg.checker)[0]
    if shutil.which(checker_bin) is None and not Path(checker_bin).exists():
        raise ConfigError(f"checker {checker_bin!r} not found")
    trace = load_input_trace(args, cfg)
    _, behaviors = derive_behaviors(trace, cfg)
    groups = group_behaviors(behaviors)
    by_id = {b.id: b for b in behaviors}

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="crashcheck-") as scratch:
        bugs, stats = test_groups(
            groups,
            by_id,
            trace,
            cfg.checker,
            Path(scratch),
            cfg=cfg.model,
            budget=cfg.budget,
            timeout=cfg.timeout,
        )
    (out / "bugs.json").write_text(json.dumps({"bugs": [b.to_json() for b in bugs]}, indent=2))
    (out / "stats.json").write_text(json.dumps(stats.to_json(), indent=2))
    print(
        f"test: {stats.representatives_tested} representatives, "
        f"{stats.schedules_tested} schedules, {stats.distinct_states} states, "
        f"{len(bugs)} bugs -> {out}"
    )
    return 1 if bugs else 0


def cmd_exhaustive(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    trace = load_input_trace(args, cfg)
    edges = model_edges(trace, cfg.model)
    graph = build_graph(trace, edges, key_mode=cfg.static_key)

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)

    states: dict[str, dict] = {}
    schedules_tested = 0
    bugs = []
    partial = False
    if len(graph):
        whole = make_behavior("whole-trace", "*", trace.ops[0].tid, graph.node_seqs, graph)
        schedules = exhaustive_schedules(whole, trace, budget=cfg.budget)
        checker = cfg.checker
        if checker:
            checker_bin = shlex.split(checker)[0]
            if shutil.which(checker_bin) is None and not Path(checker_bin).exists():
                raise ConfigError(f"checker {checker_bin!r} not found")
        with tempfile.TemporaryDirectory(prefix="crashcheck-") as scratch:
            while True:
                try:
                    schedule = next(schedules)
                except StopIteration:
                    break
                except ExplosionLimit:
                    partial = True
                    break
                schedules_tested += 1
                image = replay(schedule)
                digest = image.digest()
                if digest in states:
                    continue
                entry = {"applied_seqs": list(schedule.applied_seqs)}
                if checker:
                    result = run_oracle(image, checker, Path(scratch), timeout=cfg.timeout)
                    entry["verdict"] = result.verdict.value
                    if result.verdict is Verdict.INCONSISTENT:
                        applied = set(schedule.applied_seqs)
                        omitted = [s for s in graph.node_seqs if s not in applied]
                        bugs.append(
                            {
                                "applied_seqs": sorted(applied),
                                "omitted_seqs": omitted,
                                "oracle_output": result.oracle_output,
                            }
                        )
                states[digest] = entry
    else:
        states["empty"] = {"applied_seqs": []}
        schedules_tested = 1

    report = {
        "schedules_tested": schedules_tested,
        "distinct_states": len(states),
        "partial_coverage": partial,
        "states": states,
        "bugs": bugs,
    }
    (out / "states.json").write_text(json.dumps(report, indent=2))
    print(
        f"exhaustive: {schedules_tested} schedules, {len(states)} distinct states, "
        f"{len(bugs)} inconsistent -> {out}"
    )
    return 1 if bugs else 0


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    trace = load_input_trace(args, cfg)
    data = json.loads(Path(args.schedule).read_text())
    if "schedule" in data:
        data = data["schedule"]
    schedule = schedule_from_json(data, trace)
    image = replay(schedule)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if cfg.checker:
        result = run_oracle(image, cfg.checker, out / "replayed", timeout=cfg.timeout)
        print(f"replay: {result.verdict.value}")
        if result.oracle_output.strip():
            print(result.oracle_output.strip())
        return 1 if result.verdict is Verdict.INCONSISTENT else 0
    materialize(image, out / "replayed")
    print(f"replay: image materialized under {out / 'replayed'}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crashcheck",
        description="Crash-consistency testing over persistence graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_input=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--mode", choices=["POSIX", "MMIO", "posix", "mmio"])
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--block-size", type=int, dest="block_size")
        p.add_argument("--cache-line-size", type=int, dest="cache_line_size")
        p.add_argument(
            "--no-block-split",
            action="store_true",
            dest="no_block_split",
            help="order all same-file writes instead of per-block",
        )
        p.add_argument("--eps", type=int, help="temporal clustering radius")
        p.add_argument("--min-pts", type=int, dest="min_pts")
        p.add_argument("--budget", type=int, help="schedule budget per behavior")
        p.add_argument("--timeout", type=float, help="checker timeout in seconds")
        p.add_argument("--checker", help="consistency checker command")
        p.add_argument("--static-key", dest="static_key", choices=["full", "innermost"])
        if with_input:
            p.add_argument("--trace", help="trace file input")
            p.add_argument("--dsl", help="workload program input")

    p_synth = sub.add_parser("synth", help="compile a workload program to a trace")
    common(p_synth, with_input=False)
    p_synth.add_argument("--dsl", required=True)
    p_synth.add_argument("-o", "--output", help="trace file to write (default stdout)")
    p_synth.set_defaults(func=cmd_synth)

    p_analyze = sub.add_parser("analyze", help="derive and group update behaviors")
    common(p_analyze)
    p_analyze.set_defaults(func=cmd_analyze)

    p_test = sub.add_parser("test", help="model-check representative behaviors")
    common(p_test)
    p_test.set_defaults(func=cmd_test)

    p_ex = sub.add_parser("exhaustive", help="brute-force all crash states")
    common(p_ex)
    p_ex.set_defaults(func=cmd_exhaustive)

    p_replay = sub.add_parser("replay", help="re-run a stored crash schedule")
    common(p_replay)
    p_replay.add_argument("--schedule", required=True, help="schedule JSON file")
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrashCheckError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
