"""Shared test utilities: independent oracles and seeded design builders.

Oracles here deliberately re-derive results from first principles
(brute-force enumeration, union-find, independent LP assembly) so the
production code paths are checked against something they do not share.
"""

from __future__ import annotations

import itertools
import random

import numpy as np
from scipy.optimize import linprog

from brickplan import (
    Brick,
    BrickStructure,
    BrickType,
    MaskConfig,
    Orientation,
    SkillKind,
    SolverConfig,
    WorldConfig,
    operable,
)
from brickplan.sequencing import StabilityCache, press_load
from brickplan.stability import BASEPLATE, ForceModel, build_force_model
from brickplan._util import mix_seed


# -- brute-force geometry oracles -------------------------------------------


def brute_force_collision(bricks: list[Brick]) -> bool:
    """Pairwise footprint-intersection test, no occupancy index."""
    for a, b in itertools.combinations(bricks, 2):
        if a.z != b.z:
            continue
        ax, ay = a.footprint
        bx, by = b.footprint
        if a.x < b.x + bx and b.x < a.x + ax and a.y < b.y + by and b.y < a.y + ay:
            return True
    return False


def union_find_components(s: BrickStructure) -> list[list[int]]:
    """Independent union-find over the vertical-interface relation."""
    parent = list(range(len(s)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    cells = {}
    for i, b in enumerate(s.bricks):
        for c in b.cells():
            cells[c] = i
    for (x, y, z), i in cells.items():
        j = cells.get((x, y, z + 1))
        if j is not None and j != i:
            union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(len(s)):
        groups.setdefault(find(i), []).append(i)
    return sorted(sorted(g) for g in groups.values())


def random_brick(rng: random.Random, world: WorldConfig,
                 types=None) -> Brick:
    types = types or [BrickType(l, w) for (l, w) in
                      sorted({(1, 1), (2, 1), (4, 1), (6, 1), (8, 1),
                              (2, 2), (4, 2), (6, 2)})]
    t = rng.choice(types)
    orient = rng.choice((Orientation.ALONG_X, Orientation.ALONG_Y))
    probe = Brick(t, 0, 0, 0, orient)
    dx, dy = probe.footprint
    X, Y, Z = world.dims
    if dx > X or dy > Y:
        return random_brick(rng, world, types)
    return Brick(t, rng.randint(0, X - dx), rng.randint(0, Y - dy),
                 rng.randint(0, Z - 1), orient)


def random_structure(seed: int, n: int, world: WorldConfig) -> BrickStructure:
    """Arbitrary collision-free structure (not necessarily stable)."""
    rng = random.Random(mix_seed(seed, n, 0xA5))
    s = BrickStructure.empty(world)
    guard = 0
    while len(s) < n and guard < 10000:
        guard += 1
        b = random_brick(rng, world)
        try:
            s = s.add_brick(b)
        except Exception:
            continue
    return s


# -- independent force-distribution oracle -----------------------------------


class PatternOracle:
    """Exhaustive complementarity oracle: every push/pull activation
    pattern solved as a plain LP, independently assembled (dense numpy,
    no call into the production LP builder)."""

    def __init__(self, model: ForceModel, cfg: SolverConfig):
        self.model = model
        self.cfg = cfg
        P = len(model.points)
        B = model.n_bodies
        self.P, self.B = P, B
        nvar = 2 * P + B + 6 * B
        c = np.zeros(nvar)
        c[P:2 * P] = cfg.beta
        c[2 * P:2 * P + B] = cfg.alpha
        c[2 * P + B:] = 1.0
        A_eq = np.zeros((3 * B, nvar))
        b_eq = np.zeros(3 * B)
        for body in range(B):
            b_eq[3 * body] = model.weights[body]
            base = 2 * P + B + 6 * body
            for r in range(3):
                A_eq[3 * body + r, base + 2 * r] = -1.0
                A_eq[3 * body + r, base + 2 * r + 1] = 1.0
        for k, pt in enumerate(model.points):
            for body, sgn in ((pt.upper, 1.0), (pt.lower, -1.0)):
                if body == BASEPLATE:
                    continue
                dy = pt.y - model.com[body, 1]
                dx = pt.x - model.com[body, 0]
                A_eq[3 * body, k] += sgn
                A_eq[3 * body, P + k] += -sgn
                A_eq[3 * body + 1, k] += sgn * dy
                A_eq[3 * body + 1, P + k] += -sgn * dy
                A_eq[3 * body + 2, k] += sgn * dx
                A_eq[3 * body + 2, P + k] += -sgn * dx
        A_ub = np.zeros((P, nvar)) if P else None
        b_ub = np.zeros(P) if P else None
        for k, pt in enumerate(model.points):
            A_ub[k, P + k] = 1.0
            A_ub[k, 2 * P + pt.upper] = -1.0
        self.c, self.A_eq, self.b_eq = c, A_eq, b_eq
        self.A_ub, self.b_ub = A_ub, b_ub
        self.nvar = nvar

    def solve_pattern(self, pattern: int) -> float:
        P, B = self.P, self.B
        bounds = []
        for k in range(P):
            bounds.append((0.0, 0.0) if pattern & (1 << k) else (0.0, None))
        for k in range(P):
            bounds.append((0.0, None) if pattern & (1 << k) else (0.0, 0.0))
        bounds.extend([(0.0, None)] * (B + 6 * B))
        res = linprog(self.c, A_ub=self.A_ub, b_ub=self.b_ub,
                      A_eq=self.A_eq, b_eq=self.b_eq, bounds=bounds,
                      method="highs")
        assert res.status == 0, res.message
        return res.fun

    def minimum(self) -> float:
        best = np.inf
        for pattern in range(1 << self.P):
            best = min(best, self.solve_pattern(pattern))
        return best


def oracle_enumerate_patterns(s: BrickStructure, cfg: SolverConfig) -> float:
    """Exhaustive minimum over all 2^P activation patterns."""
    return PatternOracle(build_force_model(s, cfg), cfg).minimum()


# -- buildable design generator ----------------------------------------------


def _candidate_placements(rng: random.Random, s: BrickStructure,
                          world: WorldConfig, types, attempts: int):
    X, Y, Z = world.dims
    for _ in range(attempts):
        t = rng.choice(types)
        orient = rng.choice((Orientation.ALONG_X, Orientation.ALONG_Y))
        probe = Brick(t, 0, 0, 0, orient)
        dx, dy = probe.footprint
        if dx > X or dy > Y:
            continue
        if len(s) == 0 or rng.random() < 0.12:
            x = rng.randint(max(0, X // 2 - 4 - dx), min(X - dx, X // 2 + 4))
            y = rng.randint(max(0, Y // 2 - 4 - dy), min(Y - dy, Y // 2 + 4))
            yield Brick(t, x, y, 0, orient)
            continue
        anchor = s.bricks[rng.randrange(len(s))]
        adx, ady = anchor.footprint
        if rng.random() < 0.8:
            z = anchor.z + 1
            x = anchor.x + rng.randint(-(dx - 1), adx - 1)
            y = anchor.y + rng.randint(-(dy - 1), ady - 1)
        else:
            z = anchor.z
            side = rng.randrange(4)
            if side == 0:
                x, y = anchor.x + adx, anchor.y
            elif side == 1:
                x, y = anchor.x - dx, anchor.y
            elif side == 2:
                x, y = anchor.x, anchor.y + ady
            else:
                x, y = anchor.x, anchor.y - dy
        if 0 <= x <= X - dx and 0 <= y <= Y - dy and 0 <= z < Z:
            yield Brick(t, x, y, z, orient)


def grow_buildable_design(
    seed: int,
    n: int,
    world: WorldConfig = WorldConfig((14, 14, 10)),
    mask: MaskConfig = MaskConfig(),
    solver: SolverConfig = SolverConfig(),
    types=None,
) -> BrickStructure:
    """Grow a stable design for which a buildable order provably exists.

    Every increment must pass the same checks a support-free assembly
    step faces (operability, stability after placing, press impact
    before placing), so the growth order itself is a witness sequence.
    Deterministic in (seed, n).
    """
    types = types or [BrickType(l, w) for (l, w) in
                      sorted({(1, 1), (2, 1), (4, 1), (2, 2), (4, 2)})]
    cache = StabilityCache(solver)
    for round_ in range(40):
        rng = random.Random(mix_seed(seed, n, round_))
        s = BrickStructure.empty(world)
        stuck = 0
        while len(s) < n and stuck < 6:
            placed = False
            for b in _candidate_placements(rng, s, world, types, 80):
                if s.check_placement(b) is not None:
                    continue
                try:
                    s2 = s.add_brick(b)
                except Exception:
                    continue
                if not operable(s2, b, SkillKind.PLACE_DOWN, mask):
                    continue
                press = press_load(b, SkillKind.PLACE_DOWN, mask)
                if not cache.solution(s, (press,)).stable:
                    continue
                if not cache.solution(s2).stable:
                    continue
                s = s2
                placed = True
                break
            if placed:
                stuck = 0
            elif len(s) > 0:
                s = s.remove_brick(len(s) - 1)
                stuck += 1
            else:
                break
        if len(s) == n:
            return s
    raise RuntimeError(f"could not grow a {n}-brick design from seed {seed}")
