"""Command-line front end for batch use and reproducible experiments.

Exit codes: 0 success, 1 domain verdict (invalid structure, unstable,
no plan found), 2 usage or I/O error.  Every JSON output embeds the
resolved configuration and is byte-identical across reruns apart from
its ``generated_at`` timestamp.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import RunConfig, config_to_toml, load_run_config
from .gate import (
    GateConfig,
    RandomProposalSource,
    ReplaySource,
    check_brick_validity,
    run_gate,
)
from .ldraw import export_ldraw, export_score_heatmap, load_part_table
from .model import (
    BrickError,
    BrickStructure,
    MalformedLine,
    parse_brick_line,
    save_structure,
)
from .scheduling import (
    ExecConfig,
    MotionBlocked,
    assign_tasks,
    build_tpg,
    expand_tasks,
    load_tpg,
    plan_motions,
    save_report,
    save_tpg,
    simulate,
    simulate_sequential,
)
from .sequencing import (
    AssemblySequence,
    NoSequenceFound,
    load_sequence,
    plan_sequence,
    save_sequence,
    verify_sequence,
)
from .stability import (
    VirtualLoad,
    stability,
    stability_with_virtual_bricks,
)

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_ERROR = 2


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _report(payload: dict, cfg: RunConfig, json_path=None) -> dict:
    payload = dict(payload)
    payload["generated_at"] = _now()
    payload["config"] = cfg.to_dict()
    text = json.dumps(payload, indent=2, sort_keys=True)
    if json_path:
        Path(json_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return payload


def _gate_cfg(cfg: RunConfig) -> GateConfig:
    return GateConfig(
        inventory=cfg.inventory,
        world=cfg.world,
        solver=cfg.solver,
        max_rejections_per_brick=cfg.max_rejections_per_brick,
        max_rollbacks=cfg.max_rollbacks,
    )


# -- subcommands ----------------------------------------------------------


def cmd_validate(args, cfg: RunConfig) -> int:
    gate_cfg = _gate_cfg(cfg)
    violations = []
    s = BrickStructure.empty(cfg.world)
    with open(args.structure, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            stripped = raw.split("#", 1)[0].strip()
            if not stripped:
                continue
            try:
                b = parse_brick_line(stripped, line_no=line_no)
            except MalformedLine as e:
                violations.append({"line": line_no, "kind": "malformed",
                                   "detail": str(e)})
                continue
            verdict = check_brick_validity(s, b, gate_cfg)
            if verdict.ok:
                s = s.add_brick(b)
            else:
                violations.append({"line": line_no,
                                   "kind": verdict.reason.value,
                                   "detail": verdict.detail})
    _report({"valid": not violations, "violations": violations,
             "bricks": len(s)}, cfg, args.json)
    return EXIT_OK if not violations else EXIT_VERDICT


def cmd_stability(args, cfg: RunConfig) -> int:
    from .model import load_structure

    s = load_structure(args.structure, cfg.world)
    loads = []
    if args.press:
        x, y, z = (int(v) for v in args.press.split(","))
        ptype = parse_brick_line(f"{args.press_type} ({x},{y},{z})")
        loads.append(VirtualLoad(ptype, args.press_mass))
    if args.support:
        x, y, z = (int(v) for v in args.support.split(","))
        stype = parse_brick_line(f"1x1 ({x},{y},{z})")
        loads.append(VirtualLoad(stype, args.support_mass))
    if loads:
        sol = stability_with_virtual_bricks(s, loads, cfg.solver)
    else:
        sol = stability(s, cfg.solver)
    if args.heatmap:
        table = load_part_table(cfg.ldraw_parts)
        export_score_heatmap(s, list(sol.scores), args.heatmap, table)
    _report(sol.to_dict(), cfg, args.json)
    return EXIT_OK if sol.stable else EXIT_VERDICT


def cmd_gate(args, cfg: RunConfig) -> int:
    from .gate import trace_to_json

    if args.random:
        src = RandomProposalSource(args.seed if args.seed is not None else cfg.seed,
                                   args.bricks, cfg.world,
                                   cfg.inventory.types())
    else:
        if not args.replay:
            print("error: provide a replay file or --random", file=sys.stderr)
            return EXIT_ERROR
        src = ReplaySource.from_file(args.replay)
    structure, trace = run_gate(src, _gate_cfg(cfg), jobs=cfg.jobs)
    save_structure(structure, args.out_structure)
    trace_to_json(trace, args.out_trace)
    print(f"gate: {len(structure)} bricks accepted -> {args.out_structure}")
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig) -> int:
    from .model import load_structure

    design = load_structure(args.structure, cfg.world)
    try:
        seq = plan_sequence(design, cfg.mask, cfg.solver,
                            seed=args.seed if args.seed is not None else cfg.seed,
                            jobs=cfg.jobs)
    except NoSequenceFound as e:
        print(f"plan: {e}", file=sys.stderr)
        return EXIT_VERDICT
    save_sequence(seq, args.out)
    if args.text:
        print(seq.to_text())
    check = verify_sequence(design, seq, cfg.mask, cfg.solver, jobs=cfg.jobs)
    if not check.ok:
        print(f"plan: planned sequence failed verification at step "
              f"{check.step}: {check.reasons}", file=sys.stderr)
        return EXIT_VERDICT
    print(f"plan: {len(seq)} steps -> {args.out}")
    return EXIT_OK


def _schedule(seq: AssemblySequence, cfg: RunConfig):
    design = BrickStructure.from_bricks(seq.bricks(), cfg.world)
    assignments = assign_tasks(seq, cfg.layout, cfg.exec_cfg.durations)
    nodes = expand_tasks(assignments, cfg.layout, cfg.exec_cfg.durations)
    nodes = plan_motions(nodes, cfg.layout, design, cfg.mask.tool)
    return build_tpg(nodes, design)


def cmd_schedule(args, cfg: RunConfig) -> int:
    seq = load_sequence(args.sequence)
    g = _schedule(seq, cfg)
    save_tpg(g, args.out)
    if args.dot:
        Path(args.dot).write_text(g.to_dot() + "\n", encoding="utf-8")
    print(f"schedule: {len(g.nodes)} nodes, {len(g.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    g = load_tpg(args.tpg)
    exec_cfg = cfg.exec_cfg
    if args.seed is not None:
        exec_cfg = ExecConfig(
            durations=exec_cfg.durations,
            duration_ranges=exec_cfg.duration_ranges,
            failure_probs=exec_cfg.failure_probs,
            recovery_delay=exec_cfg.recovery_delay,
            seed=args.seed,
        )
    report = simulate(g, exec_cfg)
    save_report(report, args.out)
    ok = report.certificate_ok()
    print(f"simulate: makespan {report.makespan:.1f}s, certificate "
          f"{'ok' if ok else 'FAILED'} -> {args.out}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_pipeline(args, cfg: RunConfig) -> int:
    from .model import load_structure

    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    run_dir = None
    for i in range(1, 100000):
        candidate = out_root / f"run-{i:04d}"
        if not candidate.exists():
            candidate.mkdir()
            run_dir = candidate
            break
    if run_dir is None:
        print("error: no free run directory index", file=sys.stderr)
        return EXIT_ERROR

    (run_dir / "config.toml").write_text(config_to_toml(cfg), encoding="utf-8")
    design = load_structure(args.structure, cfg.world)
    save_structure(design, run_dir / "design.txt")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    sol = stability(design, cfg.solver)
    timings["stability_s"] = time.perf_counter() - t0
    _report(sol.to_dict(), cfg, run_dir / "stability.json")
    if not sol.stable:
        print(f"pipeline: design is unstable "
              f"(bricks {sol.failing_bricks()}); aborting", file=sys.stderr)
        return EXIT_VERDICT

    t0 = time.perf_counter()
    try:
        seq = plan_sequence(design, cfg.mask, cfg.solver, seed=cfg.seed,
                            jobs=cfg.jobs)
    except NoSequenceFound as e:
        print(f"pipeline: plan stage failed: {e}", file=sys.stderr)
        return EXIT_VERDICT
    timings["plan_s"] = time.perf_counter() - t0
    save_sequence(seq, run_dir / "sequence.json")
    (run_dir / "sequence.txt").write_text(seq.to_text() + "\n", encoding="utf-8")

    t0 = time.perf_counter()
    try:
        g = _schedule(seq, cfg)
    except (MotionBlocked, BrickError) as e:
        print(f"pipeline: schedule stage failed: {e}", file=sys.stderr)
        return EXIT_VERDICT
    timings["schedule_s"] = time.perf_counter() - t0
    save_tpg(g, run_dir / "tpg.json")
    (run_dir / "tpg.dot").write_text(g.to_dot() + "\n", encoding="utf-8")

    t0 = time.perf_counter()
    report = simulate(g, cfg.exec_cfg)
    seq_report = simulate_sequential(g, cfg.exec_cfg)
    timings["simulate_s"] = time.perf_counter() - t0
    save_report(report, run_dir / "simulation.json")
    _report(
        {
            "bricks": len(design),
            "steps": len(seq),
            "tpg_nodes": len(g.nodes),
            "tpg_edges": len(g.edges),
            "makespan_async_s": report.makespan,
            "makespan_sequential_s": seq_report.makespan,
            "certificate": report.certificate,
            "timings": timings,
        },
        cfg,
        run_dir / "summary.json",
    )
    ok = report.certificate_ok()
    print(f"pipeline: artifacts in {run_dir} (certificate "
          f"{'ok' if ok else 'FAILED'})")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_ldraw(args, cfg: RunConfig) -> int:
    from .model import load_structure

    s = load_structure(args.structure, cfg.world)
    export_ldraw(s, args.out, table=load_part_table(cfg.ldraw_parts))
    print(f"ldraw: {len(s)} bricks -> {args.out}")
    return EXIT_OK


def cmd_config(args, cfg: RunConfig) -> int:
    if args.print_defaults:
        print(config_to_toml(RunConfig()), end="")
    else:
        print(config_to_toml(cfg), end="")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="seed override for this command")
    common.add_argument("--jobs", type=int, default=None,
                        help="parallel solver fan-out inside library calls")

    p = argparse.ArgumentParser(
        prog="brickplan",
        description="Validate, stability-check, plan, and schedule "
                    "brick assembly designs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", parents=[common],
                        help="per-brick inventory/bounds/collision checks")
    sp.add_argument("structure")
    sp.add_argument("--json", help="write the report to this path")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("stability", parents=[common],
                        help="solve the force distribution and score bricks")
    sp.add_argument("structure")
    sp.add_argument("--press", help="X,Y,Z cell of a virtual press load")
    sp.add_argument("--press-mass", type=float, default=1000.0)
    sp.add_argument("--press-type", default="1x1",
                    help="footprint of the press load (default 1x1)")
    sp.add_argument("--support", help="X,Y,Z cell of a virtual support")
    sp.add_argument("--support-mass", type=float, default=-1000.0)
    sp.add_argument("--heatmap", help="write a score-colored LDraw file")
    sp.add_argument("--json", help="write the report to this path")
    sp.set_defaults(fn=cmd_stability)

    sp = sub.add_parser("gate", parents=[common],
                        help="run the generation gate over a proposal stream")
    sp.add_argument("replay", nargs="?",
                    help="replay file (may carry !collide/!inventory marks)")
    sp.add_argument("--random", action="store_true",
                    help="use the seeded random proposer instead of a replay")
    sp.add_argument("--bricks", type=int, default=8,
                    help="target design size for the random proposer")
    sp.add_argument("--out-structure", default="gate_structure.txt")
    sp.add_argument("--out-trace", default="gate_trace.json")
    sp.set_defaults(fn=cmd_gate)

    sp = sub.add_parser("plan", parents=[common],
                        help="plan a buildable assembly sequence")
    sp.add_argument("structure")
    sp.add_argument("--out", default="sequence.json")
    sp.add_argument("--text", action="store_true",
                    help="also print the step-per-line form")
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("schedule", parents=[common],
                        help="turn a sequence into a dual-robot plan graph")
    sp.add_argument("sequence")
    sp.add_argument("--out", default="tpg.json")
    sp.add_argument("--dot", help="also write Graphviz dot text")
    sp.set_defaults(fn=cmd_schedule)

    sp = sub.add_parser("simulate", parents=[common],
                        help="discrete-event execution of a plan graph")
    sp.add_argument("tpg")
    sp.add_argument("--out", default="report.json")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("pipeline", parents=[common],
                        help="stability -> plan -> schedule -> simulate, "
                             "into an append-only run directory")
    sp.add_argument("structure")
    sp.add_argument("--out-dir", default="runs")
    sp.set_defaults(fn=cmd_pipeline)

    sp = sub.add_parser("ldraw", parents=[common],
                        help="export a structure as an LDraw .ldr file")
    sp.add_argument("structure")
    sp.add_argument("--out", default="structure.ldr")
    sp.set_defaults(fn=cmd_ldraw)

    sp = sub.add_parser("config", parents=[common],
                        help="show the resolved configuration")
    sp.add_argument("--print-defaults", action="store_true")
    sp.set_defaults(fn=cmd_config)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides.setdefault("run", {})["seed"] = args.seed
    if args.jobs is not None:
        overrides.setdefault("run", {})["jobs"] = args.jobs
    try:
        cfg = load_run_config(args.config, overrides=overrides)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.fn(args, cfg)
    except (OSError, MalformedLine) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except BrickError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
