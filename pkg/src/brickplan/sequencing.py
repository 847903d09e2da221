"""Assembly sequence planning by disassembly search with an action mask.

A finished design is taken apart one brick at a time; a removal step is
admitted only when (1) the tool volume for the goal-conditioned skill is
clear, (2) the structure left behind is statically stable, and (3) the
structure survives the impact of the skill itself, modeled by replacing
the brick with a heavy virtual press (and, when that fails, retrying with
a virtual support arm under the brick).  Reversing a complete disassembly
yields a buildable assembly order, which can differ from the order the
design was generated in.

The search is depth-first with partial expansion: at each node only a
sampled subset of the operable bricks is stability-checked (those checks
dominate the cost and may fan out in parallel), resampling until all
options are exhausted before backtracking.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from ._util import mix_seed, parallel_map
from .model import (
    BadIndex,
    Brick,
    BrickError,
    BrickStructure,
    BrickType,
    Cell,
    Collision,
    OutOfBounds,
    parse_brick_line,
    serialize_brick_line,
)
from .stability import (
    SolverConfig,
    StabilitySolution,
    VirtualLoad,
    stability,
    stability_with_virtual_bricks,
)


class SkillKind(str, Enum):
    """Skill vocabulary: manipulation, perception, and motion skills."""

    PICK = "pick"
    PLACE_DOWN = "place_down"
    PLACE_UP = "place_up"
    SUPPORT_BOTTOM = "support_bottom"
    SUPPORT_TOP = "support_top"
    HANDOVER = "handover"
    MOVE = "move"
    WAIT = "wait"
    DETECT_PICK = "detect_pick"
    DETECT_PLACE = "detect_place"
    DETECT_ANOMALY = "detect_anomaly"
    DETECT_ERROR = "detect_error"


MANIPULATION_SKILLS = frozenset({
    SkillKind.PICK, SkillKind.PLACE_DOWN, SkillKind.PLACE_UP,
    SkillKind.SUPPORT_BOTTOM, SkillKind.SUPPORT_TOP, SkillKind.HANDOVER,
})


@dataclass(frozen=True)
class SkillParams:
    """Opaque insert-and-twist parameters (axis and twist angle) carried
    as configuration; learning them is out of scope here."""

    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    angle: float = 0.35


def default_skill_library() -> dict[SkillKind, SkillParams]:
    """Parameter records for the goal-conditioned manipulation skills."""
    return {
        SkillKind.PICK: SkillParams(),
        SkillKind.PLACE_DOWN: SkillParams(),
        SkillKind.PLACE_UP: SkillParams(axis=(0.0, 0.0, -1.0)),
        SkillKind.HANDOVER: SkillParams(),
    }


@dataclass(frozen=True)
class ToolVolume:
    """Axis-aligned clearance box the end-of-arm tool needs at a brick:
    the brick footprint dilated by ``margin`` studs, extending ``height``
    brick layers above (PlaceDown/Pick) or below (PlaceUp) the target."""

    margin: int = 0
    height: int = 4


@dataclass(frozen=True)
class MaskConfig:
    press_mass: float = 1000.0
    support_mass: float = -1000.0
    sample_size: int = 8
    dfs_node_budget: int = 10_000
    tool: ToolVolume = ToolVolume()

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.dfs_node_budget < 1:
            raise ValueError("dfs_node_budget must be >= 1")


class NoSequenceFound(BrickError):
    """The disassembly search exhausted its options or budget."""

    def __init__(self, message: str, deepest_remaining: int):
        self.deepest_remaining = deepest_remaining
        super().__init__(f"{message} (deepest partial reached: "
                         f"{deepest_remaining} bricks remaining)")


# -- operability ----------------------------------------------------------


def tool_volume_cells(b: Brick, skill: SkillKind, tool: ToolVolume):
    """Cells the tool needs for the goal-conditioned skill at b's pose."""
    dx, dy = b.footprint
    xs = range(b.x - tool.margin, b.x + dx + tool.margin)
    ys = range(b.y - tool.margin, b.y + dy + tool.margin)
    if skill in (SkillKind.PLACE_DOWN, SkillKind.PICK):
        zs = range(b.z + 1, b.z + 1 + tool.height)
    elif skill is SkillKind.PLACE_UP:
        zs = range(b.z - tool.height, b.z)
    else:
        raise ValueError(f"{skill.value} is not a goal-conditioned placement skill")
    for x in xs:
        for y in ys:
            for z in zs:
                yield (x, y, z)


def operable(
    s: BrickStructure, b: Brick, skill: SkillKind, cfg: MaskConfig
) -> bool:
    """True when the tool volume at b's pose misses the rest of the
    structure.  Space above the world top is free air; anything below
    z = 0 is solid ground."""
    try:
        idx = s.bricks.index(b)
    except ValueError:
        raise BadIndex("brick is not part of the structure") from None
    for (x, y, z) in tool_volume_cells(b, skill, cfg.tool):
        if z < 0:
            return False
        hit = s.occupant((x, y, z))
        if hit is not None and hit != idx:
            return False
    return True


# -- action mask -----------------------------------------------------------


@dataclass(frozen=True)
class SupportSpec:
    kind: SkillKind
    cell: Cell


@dataclass(frozen=True)
class Allowed:
    skill: SkillKind
    support: Optional[SupportSpec] = None


@dataclass(frozen=True)
class Blocked:
    reasons: dict


class StabilityCache:
    """Memo for solver calls; stability is a pure function of the brick
    set and loads, so results are shared across search branches."""

    def __init__(self, solver: SolverConfig):
        self.solver = solver
        self._memo: dict = {}
        self.hits = 0
        self.misses = 0

    def solution(
        self, s: BrickStructure, loads: tuple[VirtualLoad, ...] = ()
    ) -> StabilitySolution:
        key = (frozenset(s.bricks), loads)
        found = self._memo.get(key)
        if found is not None:
            self.hits += 1
            return found
        self.misses += 1
        if loads:
            sol = stability_with_virtual_bricks(s, loads, self.solver)
        else:
            sol = stability(s, self.solver)
        self._memo[key] = sol
        return sol


def _support_candidates(
    b: Brick, remainder: BrickStructure, skill: SkillKind, cfg: MaskConfig
) -> list[Cell]:
    """1x1 support columns under the pressed brick, nearest the centroid
    first; cells occupied by the structure or inside the active tool
    volume are skipped."""
    if b.z < 1:
        return []
    tool_cells = set(tool_volume_cells(b, skill, cfg.tool))
    cx0, cy0 = b.centroid
    cands = []
    for (cx, cy) in b.footprint_cells():
        cell = (cx, cy, b.z - 1)
        if cell in tool_cells or remainder.occupant(cell) is not None:
            continue
        d2 = (cx + 0.5 - cx0) ** 2 + (cy + 0.5 - cy0) ** 2
        cands.append((d2, cx, cy, cell))
    return [c[3] for c in sorted(cands)]


def press_load(b: Brick, skill: SkillKind, cfg: MaskConfig) -> VirtualLoad:
    """The virtual brick standing in for the place operation's impact.

    Place-Down presses into the structure from above (positive mass);
    Place-Up presses upward into the bricks overhead, so the sign flips.
    """
    mass = cfg.press_mass if skill is not SkillKind.PLACE_UP else -cfg.press_mass
    return VirtualLoad(b, mass)


def support_load(spec: SupportSpec, cfg: MaskConfig) -> VirtualLoad:
    return VirtualLoad(
        Brick(BrickType(1, 1), spec.cell[0], spec.cell[1], spec.cell[2]),
        cfg.support_mass,
    )


def action_mask(
    s: BrickStructure,
    target: Union[int, Brick],
    cfg: MaskConfig,
    solver: SolverConfig,
    cache: Optional[StabilityCache] = None,
):
    """Evaluate whether a brick can be removed from s, and with what.

    Checks, in order: operability of the candidate skills (Place-Down
    first, Place-Up only when Place-Down has no room), static stability
    of the remainder, dynamic stability under the press load, retried
    with support columns under the brick.  Returns the first satisfying
    Allowed(skill, support) under that fixed order, or Blocked with
    per-criterion diagnostics.
    """
    if cache is None:
        cache = StabilityCache(solver)
    idx = target if isinstance(target, int) else s.bricks.index(target)
    b = s.brick(idx)

    reasons: dict = {}
    candidates: list[SkillKind] = []
    if operable(s, b, SkillKind.PLACE_DOWN, cfg):
        candidates.append(SkillKind.PLACE_DOWN)
    else:
        reasons["operability_place_down"] = "tool volume occupied"
        if operable(s, b, SkillKind.PLACE_UP, cfg):
            candidates.append(SkillKind.PLACE_UP)
        else:
            reasons["operability_place_up"] = "tool volume occupied or below ground"
    if not candidates:
        return Blocked({"operability": reasons})

    remainder = s.remove_brick(idx)
    static = cache.solution(remainder)
    if not static.stable:
        return Blocked({"static": {"failing_bricks": static.failing_bricks()}})

    for skill in candidates:
        press = press_load(b, skill, cfg)
        dyn = cache.solution(remainder, (press,))
        if dyn.stable:
            return Allowed(skill, None)
        reasons[f"dynamic_{skill.value}"] = {"failing_bricks": dyn.failing_bricks()}
        if skill is SkillKind.PLACE_DOWN:
            for cell in _support_candidates(b, remainder, skill, cfg):
                spec = SupportSpec(SkillKind.SUPPORT_BOTTOM, cell)
                dyn2 = cache.solution(remainder, (press, support_load(spec, cfg)))
                if dyn2.stable:
                    return Allowed(skill, spec)
    return Blocked(reasons)


# -- sequences --------------------------------------------------------------


@dataclass(frozen=True)
class AssemblyStep:
    brick: Brick
    skill: SkillKind
    support: Optional[SupportSpec] = None


@dataclass(frozen=True)
class AssemblySequence:
    steps: tuple[AssemblyStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def bricks(self) -> list[Brick]:
        return [st.brick for st in self.steps]

    def to_dict(self) -> dict:
        out = []
        for st in self.steps:
            rec = {"brick": serialize_brick_line(st.brick),
                   "skill": st.skill.value}
            rec["support"] = (
                None if st.support is None
                else {"kind": st.support.kind.value,
                      "cell": list(st.support.cell)}
            )
            out.append(rec)
        return {"steps": out}

    @classmethod
    def from_dict(cls, d: dict) -> "AssemblySequence":
        steps = []
        for rec in d["steps"]:
            support = None
            if rec.get("support"):
                support = SupportSpec(SkillKind(rec["support"]["kind"]),
                                      tuple(rec["support"]["cell"]))
            steps.append(AssemblyStep(parse_brick_line(rec["brick"]),
                                      SkillKind(rec["skill"]), support))
        return cls(tuple(steps))

    def to_text(self) -> str:
        lines = []
        for i, st in enumerate(self.steps):
            line = f"{i + 1:3d}. {st.skill.value} {serialize_brick_line(st.brick)}"
            if st.support is not None:
                line += f"  [{st.support.kind.value} at {st.support.cell}]"
            lines.append(line)
        return "\n".join(lines)


def save_sequence(q: AssemblySequence, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(q.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sequence(path: Union[str, Path]) -> AssemblySequence:
    with open(path, "r", encoding="utf-8") as fh:
        return AssemblySequence.from_dict(json.load(fh))


# -- planner ----------------------------------------------------------------


def _candidate_order(s: BrickStructure, cfg: MaskConfig) -> list[int]:
    """Operable bricks ordered greatest height first, then fewest
    neighbors, then lexicographic pose: a bias toward top-down removal."""
    out = []
    for idx, b in enumerate(s.bricks):
        if operable(s, b, SkillKind.PLACE_DOWN, cfg) or operable(
                s, b, SkillKind.PLACE_UP, cfg):
            out.append((-b.z, len(s.neighbors(idx)), b.sort_key(), idx))
    return [rec[-1] for rec in sorted(out)]


def plan_sequence(
    design: BrickStructure,
    cfg: MaskConfig,
    solver: SolverConfig,
    seed: int = 0,
    jobs: int = 1,
) -> AssemblySequence:
    """Plan a buildable assembly order for a finished design.

    Depth-first search from the full design: at each node the operable
    bricks are enumerated, a seeded sample of at most ``sample_size`` is
    mask-evaluated (in parallel when ``jobs`` > 1, merged in candidate
    order), passing candidates are recursed into, and sampling repeats
    until all options are exhausted before backtracking.  The assembly
    sequence is the reverse of the disassembly order found.
    """
    cache = StabilityCache(solver)
    full = cache.solution(design)
    if not full.stable:
        raise NoSequenceFound("design itself is unstable", len(design))

    rng = random.Random(mix_seed(seed, len(design)))
    budget = [cfg.dfs_node_budget]
    deepest = [len(design)]

    def dfs(s: BrickStructure) -> Optional[list[AssemblyStep]]:
        if len(s) == 0:
            return []
        deepest[0] = min(deepest[0], len(s))
        if budget[0] <= 0:
            raise NoSequenceFound("disassembly search budget exhausted",
                                  deepest[0])
        budget[0] -= 1
        untried = _candidate_order(s, cfg)
        while untried:
            k = min(cfg.sample_size, len(untried))
            sampled = set(rng.sample(untried, k))
            batch = [c for c in untried if c in sampled]
            results = parallel_map(
                lambda i: action_mask(s, i, cfg, solver, cache=cache),
                batch, jobs)
            for cand, res in zip(batch, results):
                if isinstance(res, Allowed):
                    rest = dfs(s.remove_brick(cand))
                    if rest is not None:
                        return rest + [AssemblyStep(s.brick(cand), res.skill,
                                                    res.support)]
            untried = [c for c in untried if c not in sampled]
        return None

    steps = dfs(design)
    if steps is None:
        raise NoSequenceFound("no physically executable order exists "
                              "under the action mask", deepest[0])
    return AssemblySequence(tuple(steps))


# -- verification ------------------------------------------------------------


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    step: Optional[int] = None
    reasons: dict = field(default_factory=dict)


def verify_sequence(
    design: BrickStructure,
    q: AssemblySequence,
    cfg: MaskConfig,
    solver: SolverConfig,
    jobs: int = 1,
) -> VerifyResult:
    """Replay a sequence, checking collision-freeness, operability,
    dynamic stability of each step's loads, and static stability of
    every prefix; reports the first violating step."""
    cache = StabilityCache(solver)
    s = BrickStructure.empty(design.world)
    for i, st in enumerate(q.steps):
        try:
            s_after = s.add_brick(st.brick)
        except (Collision, OutOfBounds) as e:
            return VerifyResult(False, i, {"collision": str(e)})
        if not operable(s_after, st.brick, st.skill, cfg):
            return VerifyResult(False, i, {"operability": st.skill.value})
        loads = [press_load(st.brick, st.skill, cfg)]
        if st.support is not None:
            loads.append(support_load(st.support, cfg))
        try:
            dyn = cache.solution(s, tuple(loads))
        except Collision as e:
            return VerifyResult(False, i, {"support_collision": str(e)})
        if not dyn.stable:
            return VerifyResult(
                False, i, {"dynamic": {"failing_bricks": dyn.failing_bricks()}})
        static = cache.solution(s_after)
        if not static.stable:
            return VerifyResult(
                False, i, {"static": {"failing_bricks": static.failing_bricks()}})
        s = s_after
    if set(s.bricks) != set(design.bricks) or len(s) != len(design):
        return VerifyResult(False, len(q.steps),
                            {"design_mismatch": "sequence does not rebuild design"})
    return VerifyResult(True)
