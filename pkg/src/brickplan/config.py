"""Run configuration: TOML file + environment + flag overrides.

One fully resolved RunConfig is built before any subcommand runs and a
snapshot of it is embedded verbatim in every JSON output, so any run can
be reproduced from its artifacts alone.  Environment variables override
file values using the prefix ``BRICKPLAN_<SECTION>_<KEY>`` (for CI use);
explicit flags override both.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .model import BrickType, Inventory, WorldConfig
from .scheduling import ExecConfig, NOMINAL_DURATIONS, StationLayout
from .sequencing import MaskConfig, SkillKind, ToolVolume
from .stability import SolverConfig

ENV_PREFIX = "BRICKPLAN_"

_SECTIONS = ("run", "world", "inventory", "solver", "mask", "gate",
             "layout", "exec")


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    inventory: Inventory = field(default_factory=Inventory.standard)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    layout: StationLayout = None
    exec_cfg: ExecConfig = field(default_factory=ExecConfig)
    max_rejections_per_brick: int = 32
    max_rollbacks: int = 8
    seed: int = 0
    jobs: int = 1
    ldraw_parts: Optional[str] = None

    def __post_init__(self):
        if self.layout is None:
            self.layout = StationLayout.default(self.world)

    def to_dict(self) -> dict:
        return {
            "run": {"seed": self.seed, "jobs": self.jobs,
                    "ldraw_parts": self.ldraw_parts},
            "world": {"dims": list(self.world.dims),
                      "baseplate": self.world.baseplate},
            "inventory": {
                "types": [t.name for t in self.inventory.types()],
                "counts": {t.name: c for t, c in self.inventory.entries.items()
                           if c is not None},
            },
            "solver": {
                "alpha": self.solver.alpha,
                "beta": self.solver.beta,
                "friction_capacity": self.solver.friction_capacity,
                "residual_tolerance": self.solver.residual_tolerance,
                "unit_mass": self.solver.unit_mass,
                "gravity": self.solver.gravity,
                "node_budget": self.solver.node_budget,
            },
            "mask": {
                "press_mass": self.mask.press_mass,
                "support_mass": self.mask.support_mass,
                "sample_size": self.mask.sample_size,
                "dfs_node_budget": self.mask.dfs_node_budget,
                "tool_margin": self.mask.tool.margin,
                "tool_height": self.mask.tool.height,
            },
            "gate": {
                "max_rejections_per_brick": self.max_rejections_per_brick,
                "max_rollbacks": self.max_rollbacks,
            },
            "layout": {
                "overlap": self.layout.overlap,
                "cross_penalty": self.layout.cross_penalty,
            },
            "exec": {
                "recovery_delay": self.exec_cfg.recovery_delay,
                "seed": self.exec_cfg.seed,
                "durations": {k.value: v
                              for k, v in sorted(self.exec_cfg.durations.items())},
                "duration_ranges": {k.value: list(v) for k, v in
                                    sorted(self.exec_cfg.duration_ranges.items())},
                "failure_probs": {k.value: v for k, v in
                                  sorted(self.exec_cfg.failure_probs.items())},
            },
        }


def _coerce_env(value: str) -> Any:
    try:
        return json.loads(value)
    except (json.JSONDecodeError, ValueError):
        return value


def _env_overrides(env) -> dict:
    out: dict = {}
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        section, _, name = rest.partition("_")
        if section in _SECTIONS and name:
            out.setdefault(section, {})[name] = _coerce_env(value)
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for sect, vals in extra.items():
        if isinstance(vals, dict):
            out.setdefault(sect, {}).update(vals)
        else:
            out[sect] = vals
    return out


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    env=None,
    overrides: Optional[dict] = None,
) -> RunConfig:
    """Resolve a RunConfig from file, environment, and explicit overrides
    (in increasing precedence)."""
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    data = _merge(data, _env_overrides(env if env is not None else os.environ))
    if overrides:
        data = _merge(data, overrides)

    world_d = data.get("world", {})
    world = WorldConfig(
        dims=tuple(world_d.get("dims", (20, 20, 20))),
        baseplate=world_d.get("baseplate", True),
    )

    inv_d = data.get("inventory", {})
    if inv_d:
        entries: dict[BrickType, Optional[int]] = {}
        for name in inv_d.get("types", [t.name for t in Inventory.standard().types()]):
            entries[BrickType.from_name(name)] = None
        for name, cnt in inv_d.get("counts", {}).items():
            entries[BrickType.from_name(name)] = int(cnt)
        inventory = Inventory(entries)
    else:
        inventory = Inventory.standard()

    sol_d = data.get("solver", {})
    solver = SolverConfig(
        alpha=sol_d.get("alpha", 1e-3),
        beta=sol_d.get("beta", 1e-4),
        friction_capacity=sol_d.get("friction_capacity", 2.0),
        residual_tolerance=sol_d.get("residual_tolerance", 1e-6),
        unit_mass=sol_d.get("unit_mass", 1.0),
        gravity=sol_d.get("gravity", 1.0),
        node_budget=sol_d.get("node_budget", 10_000),
    )

    mask_d = data.get("mask", {})
    mask = MaskConfig(
        press_mass=mask_d.get("press_mass", 1000.0),
        support_mass=mask_d.get("support_mass", -1000.0),
        sample_size=mask_d.get("sample_size", 8),
        dfs_node_budget=mask_d.get("dfs_node_budget", 10_000),
        tool=ToolVolume(margin=mask_d.get("tool_margin", 0),
                        height=mask_d.get("tool_height", 4)),
    )

    gate_d = data.get("gate", {})
    layout_d = data.get("layout", {})
    layout = StationLayout.default(
        world,
        overlap=layout_d.get("overlap", 2),
        cross_penalty=layout_d.get("cross_penalty", 5.0),
    )

    exec_d = data.get("exec", {})
    durations = dict(NOMINAL_DURATIONS)
    for name, v in exec_d.get("durations", {}).items():
        durations[SkillKind(name)] = float(v)
    ranges = {SkillKind(k): tuple(v)
              for k, v in exec_d.get("duration_ranges", {}).items()}
    probs = {SkillKind(k): float(v)
             for k, v in exec_d.get("failure_probs", {}).items()}
    run_d = data.get("run", {})
    exec_cfg = ExecConfig(
        durations=durations,
        duration_ranges=ranges,
        failure_probs=probs,
        recovery_delay=exec_d.get("recovery_delay", 5.0),
        seed=exec_d.get("seed", run_d.get("seed", 0)),
    )

    return RunConfig(
        world=world,
        inventory=inventory,
        solver=solver,
        mask=mask,
        layout=layout,
        exec_cfg=exec_cfg,
        max_rejections_per_brick=gate_d.get("max_rejections_per_brick", 32),
        max_rollbacks=gate_d.get("max_rollbacks", 8),
        seed=run_d.get("seed", 0),
        jobs=run_d.get("jobs", 1),
        ldraw_parts=run_d.get("ldraw_parts"),
    )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v)} as TOML")


def config_to_toml(cfg: RunConfig) -> str:
    """Render the resolved configuration as a TOML document (this is what
    ``config --print-defaults`` and pipeline snapshots emit)."""
    doc = cfg.to_dict()
    lines: list[str] = []
    for sect in _SECTIONS:
        vals = doc.get(sect)
        if vals is None:
            continue
        lines.append(f"[{sect}]")
        subtables = {}
        for key, v in vals.items():
            if v is None:
                continue
            if isinstance(v, dict):
                subtables[key] = v
                continue
            lines.append(f"{key} = {_toml_value(v)}")
        lines.append("")
        for key, sub in subtables.items():
            lines.append(f"[{sect}.{key}]")
            for k2, v2 in sub.items():
                lines.append(f"{json.dumps(k2)} = {_toml_value(v2)}")
            lines.append("")
    return "\n".join(lines).rstrip() + "\n"
