"""Dual-robot execution planning: task assignment, skill expansion,
abstracted motions with swept volumes, temporal plan graph construction,
and a deterministic discrete-event execution simulator.

Planning starts from a sequential plan in which one robot moves at a
time.  Assembly steps are distributed over the two arms by an exact
branch-and-bound over a load-balance objective, each task is expanded
into its skill-node template (perception checks bracket every
manipulation), motions are planned as lift/translate/descend legs with
exact swept volumes, and cross-robot precedence edges are added wherever
swept volumes intersect, letting the arms run asynchronously while every
ordering that mattered in the sequential plan is preserved.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

from ._util import mix_seed
from .model import (
    Brick,
    BrickError,
    BrickStructure,
    Cell,
    WorldConfig,
    parse_brick_line,
    serialize_brick_line,
)
from .sequencing import (
    AssemblySequence,
    MANIPULATION_SKILLS,
    SkillKind,
    SupportSpec,
    ToolVolume,
)


class Unassignable(BrickError):
    """A task's target is reachable by neither robot."""


class InfeasiblePairing(BrickError):
    """A Place-Up step has no feasible (giver, receiver) pairing."""


class MotionBlocked(BrickError):
    """No collision-free motion abstraction reaches the goal."""

    def __init__(self, message: str, blocking: Sequence[Cell] = ()):
        self.blocking = tuple(blocking)
        super().__init__(message)


class CycleDetected(BrickError):
    """The plan graph has a cycle (impossible by construction)."""


Pose = tuple[float, float, float]

#: nominal skill durations in seconds (artifact defaults, configurable)
NOMINAL_DURATIONS: dict[SkillKind, float] = {
    SkillKind.MOVE: 3.0,
    SkillKind.PICK: 2.0,
    SkillKind.PLACE_DOWN: 2.5,
    SkillKind.PLACE_UP: 3.0,
    SkillKind.HANDOVER: 2.5,
    SkillKind.SUPPORT_BOTTOM: 2.0,
    SkillKind.SUPPORT_TOP: 2.0,
    SkillKind.DETECT_PICK: 1.0,
    SkillKind.DETECT_PLACE: 1.0,
    SkillKind.DETECT_ANOMALY: 1.0,
    SkillKind.DETECT_ERROR: 1.0,
    SkillKind.WAIT: 0.5,
}


@dataclass(frozen=True)
class StationLayout:
    """Workstation abstraction: a shared plate split into two half-plane
    reach regions with a configurable overlap band, staging depots and
    home poses per robot outside the plate, and a handover rendezvous."""

    plate_dims: tuple[int, int]
    overlap: int = 2
    cross_penalty: float = 5.0
    depots: tuple[Pose, Pose] = ()
    homes: tuple[Pose, Pose] = ()
    rendezvous: Pose = ()

    @classmethod
    def default(cls, world: WorldConfig, overlap: int = 2,
                cross_penalty: float = 5.0) -> "StationLayout":
        X, Y, _ = world.dims
        return cls(
            plate_dims=(X, Y),
            overlap=overlap,
            cross_penalty=cross_penalty,
            depots=((-4.0, Y / 2.0, 0.0), (X + 4.0, Y / 2.0, 0.0)),
            homes=((-2.0, Y / 2.0, 0.0), (X + 2.0, Y / 2.0, 0.0)),
            # high enough that a receiver's under-slung tool clears the table
            rendezvous=(X / 2.0, -3.0, 4.0),
        )

    def __post_init__(self):
        if self.depots:
            X = self.plate_dims[0]
            for d in self.depots:
                if 0 <= d[0] < X:
                    raise ValueError("depot poses must lie outside the plate")

    @property
    def midline(self) -> int:
        return self.plate_dims[0] // 2

    def reaches_column(self, robot: int, cx: int) -> bool:
        if robot == 0:
            return cx < self.midline + self.overlap
        return cx >= self.midline - self.overlap

    def reaches_brick(self, robot: int, b: Brick) -> bool:
        return all(self.reaches_column(robot, cx)
                   for (cx, cy) in b.footprint_cells())

    def reaches_cell(self, robot: int, cell: Cell) -> bool:
        return self.reaches_column(robot, cell[0])

    def near_side(self, robot: int, x: float) -> bool:
        return x < self.midline if robot == 0 else x >= self.midline

    def side_exit_x(self, robot: int) -> float:
        return -2.0 if robot == 0 else float(self.plate_dims[0] + 2)


# -- tasks and assignment --------------------------------------------------


class TaskKind(Enum):
    PICK_AND_PLACE_DOWN = "pick_and_place_down"
    PICK_HANDOVER_PLACE_UP = "pick_handover_place_up"
    SUPPORT = "support"


@dataclass(frozen=True)
class Task:
    step: int
    kind: TaskKind
    brick: Brick
    support: Optional[SupportSpec] = None


@dataclass(frozen=True)
class TaskAssignment:
    task: Task
    robots: tuple[int, ...]  # (robot,) or (giver, receiver)


_PLACE_DOWN_TEMPLATE = (
    SkillKind.MOVE, SkillKind.PICK, SkillKind.DETECT_PICK,
    SkillKind.MOVE, SkillKind.PLACE_DOWN, SkillKind.DETECT_PLACE,
)
_GIVER_TEMPLATE = (
    SkillKind.MOVE, SkillKind.PICK, SkillKind.DETECT_PICK,
    SkillKind.MOVE, SkillKind.HANDOVER, SkillKind.DETECT_PLACE,
)
_RECEIVER_TEMPLATE = (
    SkillKind.MOVE, SkillKind.MOVE, SkillKind.PLACE_UP, SkillKind.DETECT_PLACE,
)
_SUPPORT_TEMPLATE = (SkillKind.MOVE, SkillKind.SUPPORT_BOTTOM, SkillKind.MOVE)


def _template_cost(skills, durations) -> float:
    return sum(durations[sk] for sk in skills)


def assign_tasks(
    q: AssemblySequence,
    layout: StationLayout,
    durations: Optional[dict[SkillKind, float]] = None,
) -> list[TaskAssignment]:
    """Distribute assembly steps over the two arms.

    Exact best-first branch-and-bound over per-step robot choices,
    minimizing the larger robot workload plus a penalty for every task
    handled from across the midline.  Support duty always goes to the
    robot not placing that step; Place-Up steps occupy both arms.
    """
    durations = durations or NOMINAL_DURATIONS
    cost_pd = _template_cost(_PLACE_DOWN_TEMPLATE, durations)
    cost_give = _template_cost(_GIVER_TEMPLATE, durations)
    cost_recv = _template_cost(_RECEIVER_TEMPLATE, durations)
    cost_sup = _template_cost(_SUPPORT_TEMPLATE, durations)

    # per step: list of (loads_delta(2), penalty, robots_tuple)
    choices: list[list[tuple[tuple[float, float], float, tuple[int, ...]]]] = []
    for i, st in enumerate(q.steps):
        opts = []
        if st.skill is SkillKind.PLACE_UP:
            for giver, recv in ((0, 1), (1, 0)):
                if not layout.reaches_brick(recv, st.brick):
                    continue
                if st.support is not None and not layout.reaches_cell(
                        giver, st.support.cell):
                    continue
                delta = [0.0, 0.0]
                delta[giver] += cost_give + (cost_sup if st.support else 0.0)
                delta[recv] += cost_recv
                pen = 0.0 if layout.near_side(recv, st.brick.centroid[0]) \
                    else layout.cross_penalty
                opts.append(((delta[0], delta[1]), pen, (giver, recv)))
            if not opts:
                raise InfeasiblePairing(
                    f"step {i}: no (giver, receiver) pairing reaches "
                    f"{serialize_brick_line(st.brick)}")
        else:
            for r in (0, 1):
                if not layout.reaches_brick(r, st.brick):
                    continue
                if st.support is not None and not layout.reaches_cell(
                        1 - r, st.support.cell):
                    continue
                delta = [0.0, 0.0]
                delta[r] += cost_pd
                if st.support is not None:
                    delta[1 - r] += cost_sup
                pen = 0.0 if layout.near_side(r, st.brick.centroid[0]) \
                    else layout.cross_penalty
                opts.append(((delta[0], delta[1]), pen, (r,)))
            if not opts:
                raise Unassignable(
                    f"step {i}: {serialize_brick_line(st.brick)} is "
                    "reachable by neither robot")
        choices.append(opts)

    n = len(choices)
    totals = [min(sum(d) for d, _, _ in opts) for opts in choices]
    tail_total = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        tail_total[i] = tail_total[i + 1] + totals[i]

    import heapq

    def bound(i, l0, l1, pen):
        return pen + max(l0, l1, (l0 + l1 + tail_total[i]) / 2.0)

    best_cost = math.inf
    best_pick: Optional[tuple] = None
    counter = 0
    heap = [(bound(0, 0.0, 0.0, 0.0), counter, 0, 0.0, 0.0, 0.0, ())]
    while heap:
        bnd, _, i, l0, l1, pen, picks = heapq.heappop(heap)
        if bnd >= best_cost - 1e-12:
            break
        if i == n:
            cost = pen + max(l0, l1)
            if cost < best_cost - 1e-12:
                best_cost = cost
                best_pick = picks
            continue
        for ci, (delta, p, robots) in enumerate(choices[i]):
            nl0, nl1 = l0 + delta[0], l1 + delta[1]
            npen = pen + p
            nb = bound(i + 1, nl0, nl1, npen)
            if nb < best_cost - 1e-12:
                counter += 1
                heapq.heappush(
                    heap, (nb, counter, i + 1, nl0, nl1, npen, picks + (ci,)))
    if best_pick is None:
        # every branch pruned against the incumbent bound: n == 0
        best_pick = ()

    out: list[TaskAssignment] = []
    for i, st in enumerate(q.steps):
        delta, pen, robots = choices[i][best_pick[i]] if n else (None, None, None)
        if st.skill is SkillKind.PLACE_UP:
            task = Task(i, TaskKind.PICK_HANDOVER_PLACE_UP, st.brick, st.support)
            out.append(TaskAssignment(task, robots))
            if st.support is not None:
                out.append(TaskAssignment(
                    Task(i, TaskKind.SUPPORT, st.brick, st.support),
                    (robots[0],)))
        else:
            task = Task(i, TaskKind.PICK_AND_PLACE_DOWN, st.brick, st.support)
            out.append(TaskAssignment(task, robots))
            if st.support is not None:
                out.append(TaskAssignment(
                    Task(i, TaskKind.SUPPORT, st.brick, st.support),
                    (1 - robots[0],)))
    return out


# -- node expansion ----------------------------------------------------------


@dataclass
class Node:
    """One robot action in the plan graph."""

    id: int
    robot: int
    skill: SkillKind
    step: Optional[int]
    goal: Pose
    duration: float
    brick: Optional[Brick] = None
    carry: bool = False
    mode: str = "overhead"
    meta: dict = field(default_factory=dict)
    waypoints: list[Pose] = field(default_factory=list)
    swept: frozenset[Cell] = frozenset()


def _brick_goal_pose(b: Brick) -> Pose:
    cx, cy = b.centroid
    return (cx, cy, float(b.z))


def expand_tasks(
    assignments: Sequence[TaskAssignment],
    layout: StationLayout,
    durations: Optional[dict[SkillKind, float]] = None,
) -> list[Node]:
    """Expand tasks into one sequential node list (one robot at a time).

    Perception skills bracket every manipulation: a pick is followed by
    its detect, a place or handover by its detect.  Support engages
    before the protected place and retreats after that step's place is
    confirmed.  Node ids give the sequential order.
    """
    durations = durations or NOMINAL_DURATIONS
    nodes: list[Node] = []

    def emit(robot, skill, step, goal, brick=None, carry=False,
             mode="overhead", **meta) -> Node:
        node = Node(
            id=len(nodes), robot=robot, skill=skill, step=step, goal=goal,
            duration=durations[skill], brick=brick, carry=carry, mode=mode,
            meta=meta,
        )
        nodes.append(node)
        return node

    by_step: dict[int, list[TaskAssignment]] = {}
    order: list[int] = []
    for ta in assignments:
        if ta.task.step not in by_step:
            order.append(ta.task.step)
        by_step.setdefault(ta.task.step, []).append(ta)

    for step in order:
        place = next(ta for ta in by_step[step]
                     if ta.task.kind is not TaskKind.SUPPORT)
        support = next((ta for ta in by_step[step]
                        if ta.task.kind is TaskKind.SUPPORT), None)
        brick = place.task.brick
        goal = _brick_goal_pose(brick)

        def engage_support():
            sr = support.robots[0]
            spec = support.task.support
            spose = (spec.cell[0] + 0.5, spec.cell[1] + 0.5,
                     float(spec.cell[2]))
            emit(sr, SkillKind.MOVE, step, spose, mode="side",
                 profile="support")
            return emit(sr, SkillKind.SUPPORT_BOTTOM, step, spose,
                        profile="support", protects=step)

        sup_hold = None
        if support is not None and \
                place.task.kind is TaskKind.PICK_AND_PLACE_DOWN:
            sup_hold = engage_support()

        if place.task.kind is TaskKind.PICK_AND_PLACE_DOWN:
            r = place.robots[0]
            depot = layout.depots[r]
            emit(r, SkillKind.MOVE, step, depot)
            emit(r, SkillKind.PICK, step, depot, brick=brick, carry=True)
            pick_id = nodes[-1].id
            emit(r, SkillKind.DETECT_PICK, step, depot, brick=brick,
                 carry=True, checks=pick_id)
            emit(r, SkillKind.MOVE, step, goal, brick=brick, carry=True)
            place_node = emit(r, SkillKind.PLACE_DOWN, step, goal, brick=brick,
                              carry=True)
            emit(r, SkillKind.DETECT_PLACE, step, goal, checks=place_node.id)
        else:
            giver, recv = place.robots
            rdv = layout.rendezvous
            ready = emit(recv, SkillKind.MOVE, step, rdv, mode="overhead",
                         profile="receiver", role="handover_ready")
            depot = layout.depots[giver]
            emit(giver, SkillKind.MOVE, step, depot)
            emit(giver, SkillKind.PICK, step, depot, brick=brick, carry=True)
            pick_id = nodes[-1].id
            emit(giver, SkillKind.DETECT_PICK, step, depot, brick=brick,
                 carry=True, checks=pick_id)
            emit(giver, SkillKind.MOVE, step, rdv, brick=brick, carry=True)
            hand = emit(giver, SkillKind.HANDOVER, step, rdv, brick=brick,
                        carry=True, ready=ready.id)
            release = emit(giver, SkillKind.DETECT_PLACE, step, rdv,
                           checks=hand.id)
            if support is not None:
                # the giver's arm frees up only after the release
                sup_hold = engage_support()
            emit(recv, SkillKind.MOVE, step, goal, brick=brick, carry=True,
                 mode="side", profile="receiver", after_release=release.id)
            place_node = emit(recv, SkillKind.PLACE_UP, step, goal, brick=brick,
                              carry=True, profile="receiver")
            emit(recv, SkillKind.DETECT_PLACE, step, goal,
                 profile="receiver", checks=place_node.id)

        if support is not None:
            sr = support.robots[0]
            emit(sr, SkillKind.MOVE, step, layout.depots[sr], mode="side",
                 profile="support", retreat_after=place_node.id,
                 holds=sup_hold.id)
    return nodes


# -- motion abstraction ------------------------------------------------------


@dataclass(frozen=True)
class _Box:
    """Axis-aligned volume box relative to a pose: center offset, half
    extents, bottom offset, and height, all in cell units."""

    ox: float
    oy: float
    hx: float
    hy: float
    zoff: float
    height: float


def _node_profile(node: Node, tool: ToolVolume) -> tuple[_Box, ...]:
    """Moving volume relative to the pose.  The pose z is the bottom of
    the carried brick while carrying, and the bottom of the (1x1
    footprint) empty tool otherwise; the tool box is the brick footprint
    dilated by the mask margin, matching the operability volume."""
    boxes: list[_Box] = []
    if node.meta.get("profile") == "support":
        return (_Box(0.0, 0.0, 0.5, 0.5, 0.0, 1.0),)
    if node.carry and node.brick is not None:
        bdx, bdy = node.brick.footprint
        hx, hy = bdx / 2.0 + tool.margin, bdy / 2.0 + tool.margin
        boxes.append(_Box(0.0, 0.0, bdx / 2.0, bdy / 2.0, 0.0, 1.0))
        if node.meta.get("profile") == "receiver":
            boxes.append(_Box(0.0, 0.0, hx, hy, -float(tool.height),
                              float(tool.height)))
        else:
            boxes.append(_Box(0.0, 0.0, hx, hy, 1.0, float(tool.height)))
    else:
        boxes.append(_Box(0.0, 0.0, 0.5, 0.5, 0.0, float(tool.height)))
    return tuple(boxes)


def _cells_of_open_box(lo: Pose, hi: Pose):
    """Integer cells whose open unit cube meets the open box (lo, hi)."""
    ranges = []
    for a in range(3):
        first = math.floor(lo[a]) if lo[a] != math.floor(lo[a]) else int(lo[a])
        last = math.ceil(hi[a]) - 1
        ranges.append(range(first, last + 1))
    for x in ranges[0]:
        for y in ranges[1]:
            for z in ranges[2]:
                yield (x, y, z)


def _box_cells_at(box: _Box, pose: Pose):
    lo = (pose[0] + box.ox - box.hx, pose[1] + box.oy - box.hy,
          pose[2] + box.zoff)
    hi = (pose[0] + box.ox + box.hx, pose[1] + box.oy + box.hy,
          pose[2] + box.zoff + box.height)
    return _cells_of_open_box(lo, hi)


def sweep_cells(profile: Sequence[_Box], waypoints: Sequence[Pose]) -> frozenset[Cell]:
    """Exact swept cells of the profile along an axis-aligned waypoint
    path.  Each leg moves along one axis, so the sweep of a box is again
    a box spanning both endpoints."""
    out: set[Cell] = set()
    for p0, p1 in zip(waypoints, waypoints[1:]):
        moving = [a for a in range(3) if p0[a] != p1[a]]
        if len(moving) > 1:
            raise ValueError(f"path leg {p0}->{p1} is not axis-aligned")
        for box in profile:
            lo = [min(p0[a], p1[a]) for a in range(3)]
            hi = [max(p0[a], p1[a]) for a in range(3)]
            blo = (lo[0] + box.ox - box.hx, lo[1] + box.oy - box.hy,
                   lo[2] + box.zoff)
            bhi = (hi[0] + box.ox + box.hx, hi[1] + box.oy + box.hy,
                   hi[2] + box.zoff + box.height)
            out.update(_cells_of_open_box(blo, bhi))
    if len(waypoints) == 1:
        for box in profile:
            out.update(_box_cells_at(box, waypoints[0]))
    return frozenset(out)


def _manhattan_path(p0: Pose, goal: Pose, travel_z: float) -> list[Pose]:
    """Lift to travel height, translate axis-wise, descend to the goal."""
    path = [p0,
            (p0[0], p0[1], travel_z),
            (goal[0], p0[1], travel_z),
            (goal[0], goal[1], travel_z),
            (goal[0], goal[1], goal[2])]
    return _dedupe(path)


def _side_in_path(p0: Pose, goal: Pose, travel_z: float, exit_x: float) -> list[Pose]:
    """Overhead to the exit column outside the plate, descend there, then
    translate in at goal level (reaching under overhangs)."""
    path = [p0,
            (p0[0], p0[1], travel_z),
            (exit_x, p0[1], travel_z),
            (exit_x, goal[1], travel_z),
            (exit_x, goal[1], goal[2]),
            (goal[0], goal[1], goal[2])]
    return _dedupe(path)


def _side_out_path(p0: Pose, goal: Pose, travel_z: float, exit_x: float) -> list[Pose]:
    """Retreat at the current level to outside the plate first, then lift
    and go overhead (leaving from under an overhang or support point)."""
    path = [p0,
            (exit_x, p0[1], p0[2]),
            (exit_x, p0[1], travel_z),
            (goal[0], p0[1], travel_z),
            (goal[0], goal[1], travel_z),
            (goal[0], goal[1], goal[2])]
    return _dedupe(path)


def _side_both_path(p0: Pose, goal: Pose, travel_z: float, exit_x: float) -> list[Pose]:
    """Retreat sideways at the current level, traverse outside the plate,
    and come back in sideways at the goal level."""
    path = [p0,
            (exit_x, p0[1], p0[2]),
            (exit_x, p0[1], travel_z),
            (exit_x, goal[1], travel_z),
            (exit_x, goal[1], goal[2]),
            (goal[0], goal[1], goal[2])]
    return _dedupe(path)


def _dedupe(path: list[Pose]) -> list[Pose]:
    out = [path[0]]
    for p in path[1:]:
        if p != out[-1]:
            out.append(p)
    return out


def plan_motions(
    nodes: list[Node],
    layout: StationLayout,
    design: BrickStructure,
    tool: ToolVolume = ToolVolume(),
) -> list[Node]:
    """Attach waypoint paths and exact swept volumes to every node.

    Move nodes get lift-translate-descend paths checked cell-wise against
    the partial structure existing at their point in the sequential plan;
    goals that cannot be reached overhead are retried with a side
    approach at goal height before reporting MotionBlocked.
    """
    travel_z = float(design.top_level() + 2)
    pose: dict[int, Pose] = {0: layout.homes[0], 1: layout.homes[1]}
    placed: set[Cell] = set()

    for node in nodes:
        profile = _node_profile(node, tool)
        if node.skill is SkillKind.MOVE:
            start = pose[node.robot]
            exit_x = layout.side_exit_x(node.robot)
            shapes = [
                _manhattan_path(start, node.goal, travel_z),
                _side_in_path(start, node.goal, travel_z, exit_x),
                _side_out_path(start, node.goal, travel_z, exit_x),
                _side_both_path(start, node.goal, travel_z, exit_x),
            ]
            if node.mode == "side":
                shapes = [shapes[1], shapes[3], shapes[2], shapes[0]]
            blocked: set[Cell] = set()
            chosen = None
            for path in shapes:
                cells = sweep_cells(profile, path)
                hits = {c for c in cells if c in placed or c[2] < 0}
                if not hits:
                    chosen = (path, cells)
                    break
                blocked |= hits
            if chosen is None:
                raise MotionBlocked(
                    f"node {node.id}: no clear path to {node.goal}",
                    sorted(blocked))
            node.waypoints, node.swept = chosen[0], chosen[1]
            pose[node.robot] = node.goal
        else:
            here = pose[node.robot]
            node.waypoints = [here]
            node.swept = sweep_cells(profile, [here])
        if node.skill in (SkillKind.PLACE_DOWN, SkillKind.HANDOVER):
            # the insert-and-twist ends with a lift-off: the empty tool
            # retracts straight up to travel height, and that column is
            # part of the node's volume
            gx, gy, gz = pose[node.robot]
            retract = sweep_cells(
                (_Box(0.0, 0.0, 0.5, 0.5, 0.0, float(tool.height)),),
                [(gx, gy, gz + 1.0), (gx, gy, travel_z)])
            node.swept = node.swept | retract
            pose[node.robot] = (gx, gy, travel_z)
        elif node.skill is SkillKind.PLACE_UP:
            # hand opens under the overhang; the tool stays below until
            # the next move retreats sideways
            gx, gy, gz = pose[node.robot]
            pose[node.robot] = (gx, gy, gz - float(tool.height))
        if node.brick is not None and node.skill in (SkillKind.PLACE_DOWN,
                                                     SkillKind.PLACE_UP):
            placed.update(node.brick.cells())
    return nodes


# -- temporal plan graph -----------------------------------------------------


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str          # "type1" (same-robot chain) | "type2" (cross-robot)
    reason: str = ""


@dataclass
class TemporalPlanGraph:
    nodes: list[Node]
    edges: list[Edge]
    design_bricks: tuple[Brick, ...] = ()

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            succ[e.src].append(e.dst)
        return succ

    def topological_order(self) -> list[int]:
        indeg = {n.id: 0 for n in self.nodes}
        succ = self.successors()
        for e in self.edges:
            indeg[e.dst] += 1
        ready = sorted(i for i, d in indeg.items() if d == 0)
        out = []
        import heapq
        heap = list(ready)
        heapq.heapify(heap)
        while heap:
            i = heapq.heappop(heap)
            out.append(i)
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
        if len(out) != len(self.nodes):
            raise CycleDetected("plan graph has a cycle")
        return out

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id, "robot": n.robot, "skill": n.skill.value,
                    "step": n.step, "goal": list(n.goal),
                    "duration": n.duration,
                    "brick": serialize_brick_line(n.brick) if n.brick else None,
                    "carry": n.carry, "mode": n.mode,
                    "meta": {k: v for k, v in sorted(n.meta.items())},
                    "waypoints": [list(p) for p in n.waypoints],
                    "swept": sorted(list(c) for c in n.swept),
                }
                for n in self.nodes
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "kind": e.kind, "reason": e.reason}
                for e in self.edges
            ],
            "design": [serialize_brick_line(b) for b in self.design_bricks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalPlanGraph":
        nodes = []
        for rec in d["nodes"]:
            nodes.append(Node(
                id=rec["id"], robot=rec["robot"],
                skill=SkillKind(rec["skill"]), step=rec["step"],
                goal=tuple(rec["goal"]), duration=rec["duration"],
                brick=parse_brick_line(rec["brick"]) if rec["brick"] else None,
                carry=rec["carry"], mode=rec["mode"], meta=dict(rec["meta"]),
                waypoints=[tuple(p) for p in rec["waypoints"]],
                swept=frozenset(tuple(c) for c in rec["swept"]),
            ))
        edges = [Edge(e["from"], e["to"], e["kind"], e.get("reason", ""))
                 for e in d["edges"]]
        design = tuple(parse_brick_line(ln) for ln in d.get("design", []))
        return cls(nodes, edges, design)

    def to_dot(self) -> str:
        lines = ["digraph tpg {", "  rankdir=LR;"]
        for n in self.nodes:
            shape = "box" if n.robot == 0 else "ellipse"
            lines.append(
                f'  n{n.id} [label="{n.id}:{n.skill.value}\\nr{n.robot} '
                f's{n.step}" shape={shape}];')
        for e in self.edges:
            style = "solid" if e.kind == "type1" else "dashed"
            lines.append(f"  n{e.src} -> n{e.dst} [style={style}];")
        lines.append("}")
        return "\n".join(lines)


def build_tpg(
    nodes: list[Node], design: Optional[BrickStructure] = None
) -> TemporalPlanGraph:
    """Chain each robot's nodes (Type 1) and order cross-robot node pairs
    whose swept volumes intersect (Type 2), plus the task dependencies:
    support engaged before the protected place and released after its
    confirmation, and the handover ready/release pair.  Redundant Type 2
    edges implied by the remaining graph are pruned; the result is a DAG
    by construction since every edge points forward in sequential order.
    """
    edges: list[Edge] = []
    last_by_robot: dict[int, int] = {}
    for n in nodes:
        if n.robot in last_by_robot:
            edges.append(Edge(last_by_robot[n.robot], n.id, "type1", "chain"))
        last_by_robot[n.robot] = n.id

    dep: list[Edge] = []
    place_by_step: dict[int, Node] = {}
    confirm_by_step: dict[int, Node] = {}
    for n in nodes:
        if n.skill in (SkillKind.PLACE_DOWN, SkillKind.PLACE_UP):
            place_by_step[n.step] = n
        if n.skill is SkillKind.DETECT_PLACE and "checks" in n.meta:
            checked = nodes[n.meta["checks"]]
            if checked.skill in (SkillKind.PLACE_DOWN, SkillKind.PLACE_UP):
                confirm_by_step[n.step] = n

    for n in nodes:
        if "ready" in n.meta:
            dep.append(Edge(n.meta["ready"], n.id, "type2", "handover_ready"))
        if "after_release" in n.meta:
            dep.append(Edge(n.meta["after_release"], n.id, "type2",
                            "handover_release"))
        if n.skill is SkillKind.SUPPORT_BOTTOM:
            place = place_by_step[n.meta["protects"]]
            dep.append(Edge(n.id, place.id, "type2", "support"))
        if "retreat_after" in n.meta:
            confirm = confirm_by_step.get(n.step)
            target = confirm.id if confirm is not None else n.meta["retreat_after"]
            dep.append(Edge(target, n.id, "type2", "support_release"))

    # the sequencer proved the step order buildable; placements on
    # different arms keep that order
    steps = sorted(place_by_step)
    for a, b in zip(steps, steps[1:]):
        pa, pb = place_by_step[a], place_by_step[b]
        if pa.robot != pb.robot:
            dep.append(Edge(pa.id, pb.id, "type2", "place_order"))

    vol: list[Edge] = []
    by_id = {n.id: n for n in nodes}
    ids = sorted(by_id)
    for i_pos, i in enumerate(ids):
        for j in ids[i_pos + 1:]:
            a, b = by_id[i], by_id[j]
            if a.robot == b.robot:
                continue
            if a.swept & b.swept:
                vol.append(Edge(i, j, "type2", "volume"))

    candidate = dep + vol
    seen = set()
    uniq: list[Edge] = []
    for e in sorted(candidate, key=lambda e: (e.src, e.dst, e.reason)):
        if (e.src, e.dst) not in seen and e.src != e.dst:
            seen.add((e.src, e.dst))
            uniq.append(e)

    kept = _prune_transitive(nodes, edges, uniq)
    g = TemporalPlanGraph(
        nodes, edges + kept,
        tuple(design.bricks) if design is not None else
        tuple(n.brick for n in nodes
              if n.skill in (SkillKind.PLACE_DOWN, SkillKind.PLACE_UP)))
    g.topological_order()  # CycleDetected guard
    return g


def _prune_transitive(nodes, chain: list[Edge], cand: list[Edge]) -> list[Edge]:
    """Drop Type 2 edges already implied by the rest of the graph,
    preserving reachability exactly."""
    succ: dict[int, set[int]] = {n.id: set() for n in nodes}
    for e in chain + cand:
        succ[e.src].add(e.dst)
    kept: list[Edge] = []
    for e in sorted(cand, key=lambda e: (e.dst - e.src, e.src), reverse=True):
        succ[e.src].discard(e.dst)
        if not _reaches(succ, e.src, e.dst):
            succ[e.src].add(e.dst)
            kept.append(e)
    kept.sort(key=lambda e: (e.src, e.dst))
    return kept


def _reaches(succ: dict[int, set[int]], src: int, dst: int) -> bool:
    stack = [src]
    visited = {src}
    while stack:
        cur = stack.pop()
        for nxt in succ[cur]:
            if nxt == dst:
                return True
            if nxt not in visited and nxt < dst:
                visited.add(nxt)
                stack.append(nxt)
    return False


def save_tpg(g: TemporalPlanGraph, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(g.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tpg(path: Union[str, Path]) -> TemporalPlanGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return TemporalPlanGraph.from_dict(json.load(fh))


# -- execution simulation ----------------------------------------------------


@dataclass
class ExecConfig:
    """Duration models, failure injection, and recovery for simulation.

    Durations are fixed per skill unless a (lo, hi) range is given, in
    which case each node draws from its own seeded substream, so failure
    outcomes never shift another node's draw.
    """

    durations: dict = field(default_factory=lambda: dict(NOMINAL_DURATIONS))
    duration_ranges: dict = field(default_factory=dict)
    failure_probs: dict = field(default_factory=dict)
    recovery_delay: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for sk, p in self.failure_probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"failure probability for {sk} not in [0,1]")
            if sk not in MANIPULATION_SKILLS:
                raise ValueError(f"{sk} is not a manipulation skill")
        for sk, d in self.durations.items():
            if d <= 0:
                raise ValueError(f"duration for {sk} must be > 0")

    def node_duration(self, node: Node) -> float:
        rng_range = self.duration_ranges.get(node.skill)
        if rng_range is not None:
            lo, hi = rng_range
            rng = random.Random(mix_seed(self.seed, node.id, 1))
            return lo + (hi - lo) * rng.random()
        return float(self.durations[node.skill])

    def node_fails(self, node: Node) -> bool:
        p = self.failure_probs.get(node.skill, 0.0)
        if p <= 0.0 or node.skill not in MANIPULATION_SKILLS:
            return False
        rng = random.Random(mix_seed(self.seed, node.id, 2))
        return rng.random() < p


@dataclass
class ExecutionReport:
    timings: dict[int, tuple[float, float]]
    makespan: float
    failures: list[dict]
    certificate: dict
    manipulation_completed: int
    seed: int

    def certificate_ok(self) -> bool:
        return all(self.certificate.values())

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan,
            "timings": [
                {"node": i, "start": s, "end": e}
                for i, (s, e) in sorted(self.timings.items())
            ],
            "failures": self.failures,
            "certificate": self.certificate,
            "manipulation_completed": self.manipulation_completed,
            "seed": self.seed,
        }


def _node_durations_with_recovery(
    g: TemporalPlanGraph, cfg: ExecConfig
) -> tuple[dict[int, float], list[dict]]:
    """Pre-draw every node's duration; an injected manipulation failure
    makes the perception node checking it block for the recovery delay
    before passing."""
    durations: dict[int, float] = {}
    failures: list[dict] = []
    failed_nodes: set[int] = set()
    for n in g.nodes:
        durations[n.id] = cfg.node_duration(n)
        if cfg.node_fails(n):
            failed_nodes.add(n.id)
    for n in g.nodes:
        checked = n.meta.get("checks")
        if checked is not None and checked in failed_nodes:
            durations[n.id] += cfg.recovery_delay
            failures.append({"node": checked, "detect": n.id,
                             "recovery": cfg.recovery_delay})
    return durations, failures


def simulate(g: TemporalPlanGraph, cfg: ExecConfig) -> ExecutionReport:
    """Deterministic discrete-event execution of the plan graph.

    A node starts once its robot is free and every in-edge source has
    finished.  Failures only ever lengthen the blocking detect node;
    precedence keeps holding, so execution always completes (there is no
    restart path).  The report carries a certificate that every edge was
    respected and no two simultaneously executing nodes shared swept
    volume.
    """
    durations, failures = _node_durations_with_recovery(g, cfg)
    preds: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for e in g.edges:
        preds[e.dst].append(e.src)
    by_id = {n.id: n for n in g.nodes}
    start: dict[int, float] = {}
    end: dict[int, float] = {}
    robot_free: dict[int, float] = {}
    for i in g.topological_order():
        n = by_id[i]
        t = robot_free.get(n.robot, 0.0)
        for p in preds[n.id]:
            t = max(t, end[p])
        start[n.id] = t
        end[n.id] = t + durations[n.id]
        robot_free[n.robot] = end[n.id]

    makespan = max(end.values(), default=0.0)
    cert = _certificate(g, start, end)
    manip = sum(1 for n in g.nodes if n.skill in MANIPULATION_SKILLS)
    timings = {i: (start[i], end[i]) for i in start}
    return ExecutionReport(timings, makespan, failures, cert, manip, cfg.seed)


def simulate_sequential(g: TemporalPlanGraph, cfg: ExecConfig) -> ExecutionReport:
    """The same plan under a one-robot-at-a-time discipline (nodes run in
    sequential order); with identical per-node draws its makespan is the
    plain sum of durations."""
    durations, failures = _node_durations_with_recovery(g, cfg)
    t = 0.0
    timings: dict[int, tuple[float, float]] = {}
    for n in g.nodes:
        timings[n.id] = (t, t + durations[n.id])
        t += durations[n.id]
    start = {i: s for i, (s, _) in timings.items()}
    end = {i: e for i, (_, e) in timings.items()}
    cert = _certificate(g, start, end)
    manip = sum(1 for n in g.nodes if n.skill in MANIPULATION_SKILLS)
    return ExecutionReport(timings, t, failures, cert, manip, cfg.seed)


def _certificate(g: TemporalPlanGraph, start, end) -> dict:
    edges_ok = all(end[e.src] <= start[e.dst] + 1e-9 for e in g.edges)
    volumes_ok = True
    nodes = g.nodes
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.robot == b.robot:
                continue
            if start[a.id] < end[b.id] - 1e-9 and start[b.id] < end[a.id] - 1e-9:
                if a.swept & b.swept:
                    volumes_ok = False
    placed: list[Brick] = [n.brick for n in nodes
                           if n.skill in (SkillKind.PLACE_DOWN,
                                          SkillKind.PLACE_UP)]
    once = len(placed) == len(set(placed))
    final_ok = set(placed) == set(g.design_bricks) and \
        len(placed) == len(g.design_bricks)
    return {
        "edges_respected": edges_ok,
        "no_volume_conflicts": volumes_ok,
        "bricks_placed_once": once,
        "final_matches_design": final_ok,
    }


def save_report(r: ExecutionReport, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(r.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
