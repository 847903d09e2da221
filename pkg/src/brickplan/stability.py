"""Structural force model and force-distribution solver for brick assemblies.

Every vertical contact interface is discretized into four corner points
per overlap cell (offsets of a quarter pitch from the cell center), which
is the coarsest model that lets a single-stud connection carry a moment
couple.  Each point carries two non-negative variables: a normal force
(the lower body pushes the upper body up) and a stud-grip tension that
resists the joint separating (it pulls the upper body down and holds the
lower body up).  A point may not push and pull at the same time.

Forces are vertical only, so per-body equilibrium reduces to one force
residual and two horizontal torque residuals.  The solver minimizes

    sum_i  |force residual_i| + |torque residual_i|
           + alpha * max(drag_i) + beta * sum(drag_i)

where drag_i is the set of tensions pulling body i down (the tensions at
interfaces where i is the upper party, including above the baseplate).
Absolute values are linearized with split non-negative variables and the
per-body max with a bound variable, leaving a plain LP apart from the
push/pull non-coexistence, which is enforced by branch-and-bound on the
rare occasions the relaxation violates it.

A brick scores zero when its residuals exceed tolerance or its maximum
drag exceeds the friction capacity of a stud connection; otherwise the
score is the normalized friction margin.  A structure is stable when all
real bricks score above zero.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .model import (
    BASEPLATE,
    Brick,
    BrickError,
    BrickStructure,
    Collision,
)


class SolverFailure(BrickError):
    """The LP backend reported failure (should not occur: residual slacks
    make every instance feasible; kept as a defensive error)."""


class IterationLimit(BrickError):
    """Complementarity branching exhausted its node budget."""


@dataclass(frozen=True)
class SolverConfig:
    """Weights, friction capacity, and numeric tolerances.

    alpha weighs the per-body maximum drag, beta the total drag.  Both
    must stay small against unit residual cost so the solver always
    prefers true equilibrium over leaving a residual unbalanced; the
    defaults are calibrated against the analytic acceptance cases.
    friction_capacity is per contact corner.
    """

    alpha: float = 1e-3
    beta: float = 1e-4
    friction_capacity: float = 2.0
    residual_tolerance: float = 1e-6
    unit_mass: float = 1.0
    gravity: float = 1.0
    node_budget: int = 10_000

    def __post_init__(self):
        for name in ("alpha", "beta", "friction_capacity", "residual_tolerance",
                     "unit_mass", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.node_budget < 1:
            raise ValueError("node_budget must be >= 1")


@dataclass(frozen=True)
class VirtualLoad:
    """A brick-shaped external load: positive mass presses, negative lifts.

    The mass is the total for the load (not per stud), in the same units
    as unit_mass.  Virtual loads take part in the force model but receive
    no stability score of their own.
    """

    brick: Brick
    mass: float


@dataclass(frozen=True)
class ContactPoint:
    """One corner contact between two bodies (lower may be BASEPLATE)."""

    lower: int
    upper: int
    cell: tuple[int, int]
    corner: int  # 0..3, (-,-) (-,+) (+,-) (+,+)
    x: float
    y: float


_CORNERS = ((-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25))


@dataclass
class ForceModel:
    """Contact points plus per-body gravity loads for a (possibly
    virtually augmented) structure.  Bodies 0..n_real-1 are the real
    bricks in structure order; any further bodies are virtual loads."""

    points: list[ContactPoint]
    n_real: int
    n_bodies: int
    weights: np.ndarray      # downward gravity load per body
    com: np.ndarray          # (n_bodies, 2) footprint centroids
    body_bricks: list[Brick]


def build_force_model(
    s: BrickStructure,
    cfg: SolverConfig,
    virtual: Sequence[VirtualLoad] = (),
) -> ForceModel:
    """Enumerate contact points and gravity loads.

    Four corner points per overlap cell of every vertical interface,
    including the baseplate when the world has one.  Virtual loads must
    be collision-free against the structure and each other; they are not
    bounds-checked (they model tools, which may hover anywhere).
    """
    bodies: list[Brick] = list(s.bricks)
    weights = [cfg.unit_mass * cfg.gravity * b.type.stud_count for b in s.bricks]
    cellmap: dict[tuple[int, int, int], int] = dict(s.occupancy())
    for j, load in enumerate(virtual):
        idx = len(bodies)
        for c in load.brick.cells():
            hit = cellmap.get(c)
            if hit is not None:
                raise Collision(
                    f"virtual load {j} overlaps body {hit} at {c}",
                    blocking_index=hit,
                )
            cellmap[c] = idx
        bodies.append(load.brick)
        weights.append(load.mass * cfg.gravity)

    interfaces: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for idx, b in enumerate(bodies):
        if b.z == 0 and s.world.baseplate:
            interfaces.setdefault((BASEPLATE, idx), []).extend(b.footprint_cells())
        for (cx, cy) in b.footprint_cells():
            up = cellmap.get((cx, cy, b.z + 1))
            if up is not None:
                interfaces.setdefault((idx, up), []).append((cx, cy))

    points: list[ContactPoint] = []
    for (lo, up) in sorted(interfaces):
        for (cx, cy) in sorted(interfaces[(lo, up)]):
            for ci, (ox, oy) in enumerate(_CORNERS):
                points.append(ContactPoint(
                    lower=lo, upper=up, cell=(cx, cy), corner=ci,
                    x=cx + 0.5 + ox, y=cy + 0.5 + oy,
                ))

    com = np.array([b.centroid for b in bodies], dtype=float).reshape(len(bodies), 2)
    return ForceModel(
        points=points,
        n_real=len(s.bricks),
        n_bodies=len(bodies),
        weights=np.asarray(weights, dtype=float),
        com=com,
        body_bricks=bodies,
    )


@dataclass
class StabilitySolution:
    """Solved force distribution with per-brick scores.

    Arrays cover all bodies; ``scores`` covers real bricks only (virtual
    loads are excluded from the pass/fail verdict).  ``stable`` is true
    exactly when every real brick scores above zero.
    """

    points: list[ContactPoint]
    normal: np.ndarray
    tension: np.ndarray
    force_residual: np.ndarray
    torque_residual: np.ndarray       # (n_bodies, 2)
    d_max: np.ndarray
    scores: np.ndarray                # real bricks only
    stable: bool
    objective: float
    n_real: int
    stats: dict = field(default_factory=dict)

    def failing_bricks(self) -> list[int]:
        return [i for i, sc in enumerate(self.scores) if sc <= 0.0]

    def to_dict(self) -> dict:
        return {
            "stable": bool(self.stable),
            "bricks": [
                {
                    "index": i,
                    "score": float(self.scores[i]),
                    "force_residual": float(self.force_residual[i]),
                    "torque_residual": [
                        float(self.torque_residual[i, 0]),
                        float(self.torque_residual[i, 1]),
                    ],
                    "d_max": float(self.d_max[i]),
                }
                for i in range(self.n_real)
            ],
            "objective": float(self.objective),
            "stats": {k: int(v) for k, v in self.stats.items()},
        }


def assemble_lp(model: ForceModel, cfg: SolverConfig):
    """Build the LP pieces shared by every branching node.

    Variable layout: [n_0..n_P, t_0..t_P, m_0..m_B, 6 residual splits per
    body (f+, f-, tx+, tx-, ty+, ty-)].  Returns (c, A_eq, b_eq, A_ub,
    b_ub, nvars).
    """
    P = len(model.points)
    B = model.n_bodies
    nvars = 2 * P + B + 6 * B
    res_base = 2 * P + B

    c = np.zeros(nvars)
    c[P:2 * P] = cfg.beta
    c[2 * P:2 * P + B] = cfg.alpha
    c[res_base:] = 1.0

    rows, cols, vals = [], [], []
    for k, pt in enumerate(model.points):
        for body, sign in ((pt.upper, 1.0), (pt.lower, -1.0)):
            if body == BASEPLATE:
                continue
            dx = pt.x - model.com[body, 0]
            dy = pt.y - model.com[body, 1]
            for var, vsign in ((k, sign), (P + k, -sign)):
                rows.append(3 * body)
                cols.append(var)
                vals.append(vsign)
                rows.append(3 * body + 1)
                cols.append(var)
                vals.append(vsign * dy)
                rows.append(3 * body + 2)
                cols.append(var)
                vals.append(vsign * dx)
    for b in range(B):
        base = res_base + 6 * b
        for r, (plus, minus) in enumerate(((base, base + 1),
                                           (base + 2, base + 3),
                                           (base + 4, base + 5))):
            rows.extend([3 * b + r, 3 * b + r])
            cols.extend([plus, minus])
            vals.extend([-1.0, 1.0])
    A_eq = sparse.csc_matrix((vals, (rows, cols)), shape=(3 * B, nvars))
    b_eq = np.zeros(3 * B)
    b_eq[0::3] = model.weights

    # drag bound rows: tension at point k <= m of the upper body
    urows, ucols, uvals = [], [], []
    for k, pt in enumerate(model.points):
        urows.extend([k, k])
        ucols.extend([P + k, 2 * P + pt.upper])
        uvals.extend([1.0, -1.0])
    A_ub = sparse.csc_matrix((uvals, (urows, ucols)), shape=(P, nvars))
    b_ub = np.zeros(P)
    return c, A_eq, b_eq, A_ub, b_ub, nvars


def solve_force_distribution(
    model: ForceModel, cfg: SolverConfig
) -> StabilitySolution:
    """Solve the force-distribution optimization and score every brick.

    Solves the LP relaxation first; with drag penalized, push/pull
    co-activation is rarely optimal.  Any violating point is branched on
    best-first (fix one side to zero) under the configured node budget.
    """
    P = len(model.points)
    B = model.n_bodies
    if B == 0:
        return StabilitySolution(
            points=[], normal=np.zeros(0), tension=np.zeros(0),
            force_residual=np.zeros(0), torque_residual=np.zeros((0, 2)),
            d_max=np.zeros(0), scores=np.zeros(0), stable=True,
            objective=0.0, n_real=0,
            stats={"lp_solves": 0, "branch_nodes": 0, "iterations": 0},
        )

    c, A_eq, b_eq, A_ub, b_ub, nvars = assemble_lp(model, cfg)
    tol2 = cfg.residual_tolerance ** 2
    stats = {"lp_solves": 0, "branch_nodes": 0, "iterations": 0}

    def solve_node(fixed: frozenset[int]):
        bounds = [(0.0, 0.0) if v in fixed else (0.0, None) for v in range(nvars)]
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        stats["lp_solves"] += 1
        stats["iterations"] += int(getattr(res, "nit", 0) or 0)
        if res.status != 0:
            raise SolverFailure(f"LP backend status {res.status}: {res.message}")
        return res

    def worst_violation(x: np.ndarray) -> Optional[int]:
        if P == 0:
            return None
        prod = x[:P] * x[P:2 * P]
        k = int(np.argmax(prod))
        return k if prod[k] > tol2 else None

    counter = 0
    root = solve_node(frozenset())
    heap = [(root.fun, counter, frozenset(), root)]
    best = None
    while heap:
        _, _, fixed, res = heapq.heappop(heap)
        k = worst_violation(res.x)
        if k is None:
            best = res
            break
        if stats["lp_solves"] >= cfg.node_budget:
            raise IterationLimit(
                f"complementarity branching exhausted {cfg.node_budget} nodes")
        stats["branch_nodes"] += 1
        for var in (k, P + k):
            child = solve_node(fixed | {var})
            counter += 1
            heapq.heappush(heap, (child.fun, counter, fixed | {var}, child))
    if best is None:
        raise SolverFailure("branching queue exhausted without a clean solution")

    x = np.array(best.x)
    n = x[:P].copy()
    t = x[P:2 * P].copy()
    # exact non-coexistence in the returned solution: shrinking both sides
    # of a point equally never changes any equilibrium row and never
    # raises the objective
    overlap = np.minimum(n, t)
    n -= overlap
    t -= overlap

    force_res = -model.weights.copy()
    torque_res = np.zeros((B, 2))
    d_max = np.zeros(B)
    d_sum = np.zeros(B)
    for k, pt in enumerate(model.points):
        f = n[k] - t[k]
        for body, sign in ((pt.upper, 1.0), (pt.lower, -1.0)):
            if body == BASEPLATE:
                continue
            force_res[body] += sign * f
            torque_res[body, 0] += sign * f * (pt.y - model.com[body, 1])
            torque_res[body, 1] += sign * f * (pt.x - model.com[body, 0])
        if t[k] > d_max[pt.upper]:
            d_max[pt.upper] = t[k]
        d_sum[pt.upper] += t[k]

    objective = float(
        np.sum(np.abs(force_res))
        + np.sum(np.abs(torque_res))
        + cfg.alpha * np.sum(d_max)
        + cfg.beta * np.sum(d_sum)
    )

    eps = cfg.residual_tolerance
    ft = cfg.friction_capacity
    scores = np.zeros(model.n_real)
    for i in range(model.n_real):
        bad = (
            abs(force_res[i]) > eps
            or max(abs(torque_res[i, 0]), abs(torque_res[i, 1])) > eps
            or d_max[i] > ft
        )
        scores[i] = 0.0 if bad else (ft - d_max[i]) / ft

    return StabilitySolution(
        points=model.points, normal=n, tension=t,
        force_residual=force_res, torque_residual=torque_res,
        d_max=d_max, scores=scores,
        stable=bool(np.all(scores > 0.0)),
        objective=objective, n_real=model.n_real, stats=stats,
    )


def stability(s: BrickStructure, cfg: SolverConfig) -> StabilitySolution:
    """Score every brick of a structure; empty structures are stable."""
    return solve_force_distribution(build_force_model(s, cfg), cfg)


def stability_with_virtual_bricks(
    s: BrickStructure,
    loads: Sequence[VirtualLoad],
    cfg: SolverConfig,
) -> StabilitySolution:
    """Score the structure under external brick-shaped loads.

    Positive mass models a pressing tool, negative mass a support arm.
    Virtual loads join the force model but are excluded from the verdict.
    """
    return solve_force_distribution(build_force_model(s, cfg, loads), cfg)
