"""Inference-time constraint gate over a stream of brick proposals.

The gate enforces the cheap per-brick checks (inventory, bounds,
collision) on every proposal, rejecting and resampling invalid ones, and
defers structural stability to the end of the design: an unstable
finished design is rolled back to its longest stable prefix and the
source is asked to regenerate from there.  Any proposal source can drive
it: a replay file, the built-in seeded random proposer, or an external
process adapted to the ProposalSource interface.
"""

from __future__ import annotations

import json
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from ._util import mix_seed, parallel_map
from .model import (
    Brick,
    BrickStructure,
    BrickType,
    Inventory,
    MalformedLine,
    Orientation,
    WorldConfig,
    parse_brick_line,
    serialize_brick_line,
)
from .stability import SolverConfig, stability


class RejectReason(Enum):
    INVENTORY_EXHAUSTED = "inventory_exhausted"
    OUT_OF_BOUNDS = "out_of_bounds"
    COLLISION = "collision"


@dataclass(frozen=True)
class Validity:
    """Outcome of the per-brick check; Invalid is a value, not an error."""

    ok: bool
    reason: Optional[RejectReason] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


VALID = Validity(True)


@dataclass(frozen=True)
class GateConfig:
    inventory: Inventory
    world: WorldConfig
    solver: SolverConfig
    max_rejections_per_brick: int = 32
    max_rollbacks: int = 8

    def __post_init__(self):
        if self.max_rejections_per_brick < 1 or self.max_rollbacks < 1:
            raise ValueError("gate budgets must be >= 1")


# -- trace ---------------------------------------------------------------


@dataclass(frozen=True)
class Accepted:
    brick: Brick


@dataclass(frozen=True)
class Rejected:
    brick: Brick
    reason: RejectReason
    detail: str = ""


@dataclass(frozen=True)
class Rollback:
    from_len: int
    to_len: int


@dataclass(frozen=True)
class Finalized:
    stable: bool


GateEvent = Union[Accepted, Rejected, Rollback, Finalized]


@dataclass
class GateTrace:
    """Ordered record of gate events; folding it reproduces the output."""

    events: list[GateEvent] = field(default_factory=list)

    def fold(self) -> list[Brick]:
        bricks: list[Brick] = []
        for ev in self.events:
            if isinstance(ev, Accepted):
                bricks.append(ev.brick)
            elif isinstance(ev, Rollback):
                del bricks[ev.to_len:]
        return bricks

    def count(self, kind) -> int:
        return sum(1 for ev in self.events if isinstance(ev, kind))

    def to_dict(self) -> dict:
        out = []
        for ev in self.events:
            if isinstance(ev, Accepted):
                out.append({"event": "accepted",
                            "brick": serialize_brick_line(ev.brick)})
            elif isinstance(ev, Rejected):
                out.append({"event": "rejected",
                            "brick": serialize_brick_line(ev.brick),
                            "reason": ev.reason.value, "detail": ev.detail})
            elif isinstance(ev, Rollback):
                out.append({"event": "rollback", "from": ev.from_len,
                            "to": ev.to_len})
            else:
                out.append({"event": "finalized", "stable": ev.stable})
        return {"events": out}


# -- proposal sources ----------------------------------------------------


class ProposalSource(ABC):
    """Pull interface the gate drives.

    ``next`` yields the proposal for the current slot or None for
    end-of-design.  After a rejection the gate calls ``reject`` and pulls
    again (the resample).  After a rollback the gate calls ``rollback``
    with the kept prefix length and resumes pulling from there.
    """

    @abstractmethod
    def next(self, partial: BrickStructure) -> Optional[Brick]:
        ...

    def reject(self, brick: Brick, reason: RejectReason) -> None:
        pass

    def rollback(self, keep: int) -> None:
        pass


class ReplaySource(ProposalSource):
    """Replays brick lines from a file or list, in order.

    A line may carry a fault annotation (``!collide`` or ``!inventory``)
    marking a deliberately injected invalid proposal; annotations do not
    change replay behavior, they let callers cross-check the trace.
    Rollback does not rewind: regeneration continues with whatever lines
    remain, which for a replay is normally the end of the design.
    """

    ANNOTATIONS = ("collide", "inventory")

    def __init__(self, lines):
        self.proposals: list[tuple[Brick, Optional[str]]] = []
        for ln, raw in enumerate(lines, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            fault = None
            if "!" in text:
                text, _, mark = text.partition("!")
                mark = mark.strip()
                if mark not in self.ANNOTATIONS:
                    raise MalformedLine(f"unknown fault annotation {mark!r}", ln)
                fault = mark
            self.proposals.append((parse_brick_line(text.strip(), line_no=ln), fault))
        self.pos = 0

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ReplaySource":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(fh.readlines())

    def next(self, partial: BrickStructure) -> Optional[Brick]:
        if self.pos >= len(self.proposals):
            return None
        brick, _ = self.proposals[self.pos]
        self.pos += 1
        return brick

    def expected_faults(self) -> list[tuple[int, str]]:
        return [(i, f) for i, (_, f) in enumerate(self.proposals) if f]


class RandomProposalSource(ProposalSource):
    """Seeded proposer biased to place bricks adjacent to existing ones.

    Each slot (current design length) draws from an independent seeded
    substream, so raising the gate's rejection budget only extends a
    slot's attempt sequence and never changes earlier draws.  Rollbacks
    bump an epoch so regeneration explores new continuations.
    """

    def __init__(self, seed: int, target_bricks: int,
                 world: WorldConfig = WorldConfig(),
                 types: Optional[list[BrickType]] = None):
        self.seed = seed
        self.target = target_bricks
        self.world = world
        self.types = sorted(types) if types else sorted(
            Inventory.standard().types())
        self.epoch = 0
        self._last_slot = -1
        self._attempt = 0

    def next(self, partial: BrickStructure) -> Optional[Brick]:
        slot = len(partial)
        if slot >= self.target:
            return None
        if slot != self._last_slot:
            self._last_slot = slot
            self._attempt = 0
        else:
            self._attempt += 1
        rng = random.Random(mix_seed(self.seed, self.epoch, slot, self._attempt))
        return self._draw(rng, partial)

    def rollback(self, keep: int) -> None:
        self.epoch += 1
        self._last_slot = -1
        self._attempt = 0

    def _draw(self, rng: random.Random, partial: BrickStructure) -> Brick:
        btype = rng.choice(self.types)
        orient = rng.choice((Orientation.ALONG_X, Orientation.ALONG_Y))
        probe = Brick(btype, 0, 0, 0, orient)
        dx, dy = probe.footprint
        X, Y, Z = self.world.dims
        if len(partial) == 0 or rng.random() < 0.25:
            # ground placement, near the plate center
            cx = (X - dx) // 2
            cy = (Y - dy) // 2
            x = max(0, min(X - dx, cx + rng.randint(-3, 3)))
            y = max(0, min(Y - dy, cy + rng.randint(-3, 3)))
            return Brick(btype, x, y, 0, orient)
        anchor = partial.bricks[rng.randrange(len(partial))]
        adx, ady = anchor.footprint
        if rng.random() < 0.7:
            # stack on top with at least one overlapping column
            z = anchor.z + 1
            x = anchor.x + rng.randint(-(dx - 1), adx - 1)
            y = anchor.y + rng.randint(-(dy - 1), ady - 1)
        else:
            # beside on the same layer
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
        x = max(0, min(X - dx, x))
        y = max(0, min(Y - dy, y))
        z = max(0, min(Z - 1, z))
        return Brick(btype, x, y, z, orient)


# -- gate operations -----------------------------------------------------


def check_brick_validity(
    partial: BrickStructure, b: Brick, cfg: GateConfig
) -> Validity:
    """Cheap per-brick checks: inventory with remaining count, bounds,
    collision.  The remaining count is derived from the partial itself."""
    used = sum(1 for pb in partial.bricks if pb.type == b.type)
    remaining = cfg.inventory.remaining(b.type, used) if cfg.inventory.allows(b.type) else 0
    if remaining is not None and remaining <= 0:
        detail = ("type not in inventory" if not cfg.inventory.allows(b.type)
                  else f"no {b.type.name} left (limit {cfg.inventory.limit(b.type)})")
        return Validity(False, RejectReason.INVENTORY_EXHAUSTED, detail)
    if not cfg.world.contains_brick(b):
        return Validity(False, RejectReason.OUT_OF_BOUNDS,
                        f"({b.x},{b.y},{b.z}) outside {cfg.world.dims}")
    hit = None
    for c in b.cells():
        hit = partial.occupant(c)
        if hit is not None:
            break
    if hit is not None:
        return Validity(False, RejectReason.COLLISION, f"overlaps brick {hit}")
    return VALID


def longest_stable_prefix(
    s: BrickStructure, cfg: GateConfig, jobs: int = 1
) -> int:
    """Greatest k such that the first k bricks form a stable structure.

    Stability is not monotone in prefix length, so lengths are scanned
    from the top down; 0 (the empty prefix) is always admissible.
    Prefix evaluations in one batch run in parallel and the longest
    qualifying length is selected regardless of completion order.
    """
    lengths = list(range(len(s), -1, -1))
    batch = max(1, jobs)
    for start in range(0, len(lengths), batch):
        chunk = lengths[start:start + batch]
        results = parallel_map(
            lambda k: stability(s.prefix(k), cfg.solver).stable, chunk, jobs)
        for k, ok in zip(chunk, results):
            if ok:
                return k
    return 0


def run_gate(
    src: ProposalSource, cfg: GateConfig, jobs: int = 1
) -> tuple[BrickStructure, GateTrace]:
    """Drive a proposal source through the gate.

    The returned structure is always collision-free, in-inventory,
    in-bounds, and stable (possibly empty).  Finalized(stable=False) can
    only mean the empty prefix itself was never reached, which cannot
    happen: the empty structure is stable.
    """
    trace = GateTrace()
    partial = BrickStructure.empty(cfg.world)
    rollbacks = 0

    def finalize_with_prefix(current: BrickStructure) -> BrickStructure:
        k = longest_stable_prefix(current, cfg, jobs)
        if k < len(current):
            trace.events.append(Rollback(len(current), k))
        out = current.prefix(k)
        trace.events.append(Finalized(True))
        return out

    while True:
        rejections = 0
        ended = False
        while True:
            proposal = src.next(partial)
            if proposal is None:
                ended = True
                break
            verdict = check_brick_validity(partial, proposal, cfg)
            if verdict.ok:
                partial = partial.add_brick(proposal)
                trace.events.append(Accepted(proposal))
                rejections = 0
            else:
                trace.events.append(
                    Rejected(proposal, verdict.reason, verdict.detail))
                src.reject(proposal, verdict.reason)
                rejections += 1
                if rejections >= cfg.max_rejections_per_brick:
                    return finalize_with_prefix(partial), trace
        if ended:
            if stability(partial, cfg.solver).stable:
                trace.events.append(Finalized(True))
                return partial, trace
            if rollbacks >= cfg.max_rollbacks:
                return finalize_with_prefix(partial), trace
            k = longest_stable_prefix(
                BrickStructure.from_bricks(partial.bricks[:len(partial) - 1],
                                           cfg.world), cfg, jobs)
            trace.events.append(Rollback(len(partial), k))
            partial = partial.prefix(k)
            src.rollback(k)
            rollbacks += 1


def trace_to_json(trace: GateTrace, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
