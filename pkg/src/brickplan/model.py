"""Brick and structure model: geometry, collision/connectivity queries, file formats.

Coordinate system: integer grid, z up.  One horizontal unit is one stud
pitch, one vertical unit is one brick height.  A brick occupies a single
z layer.  The baseplate, when enabled, is a knobbed support plane that
bricks at z = 0 connect to; it is not itself a brick.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Union

Cell = tuple[int, int, int]

#: Pseudo brick index used for the baseplate side of a contact interface.
BASEPLATE = -1

#: Footprints (length, width), length >= width, of the default inventory.
STANDARD_FOOTPRINTS = frozenset(
    {(1, 1), (2, 1), (4, 1), (6, 1), (8, 1), (2, 2), (4, 2), (6, 2)}
)


class BrickError(Exception):
    """Base class for brick model errors."""


class MalformedLine(BrickError):
    """A brick text line does not match the ``HxW (X,Y,Z)`` pattern."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UnknownBrickType(BrickError):
    """A footprint outside the known inventory set was used where forbidden."""


class OutOfBounds(BrickError):
    """A brick does not fit inside the world bounds."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class Collision(BrickError):
    """A brick overlaps an already placed brick."""

    def __init__(
        self,
        message: str,
        blocking_index: Optional[int] = None,
        line_no: Optional[int] = None,
    ):
        self.blocking_index = blocking_index
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class BadIndex(BrickError):
    """A brick index is outside the structure."""


class InventoryError(BrickError):
    """An inventory count would drop below zero."""


@dataclass(frozen=True, order=True)
class BrickType:
    """A rectangular brick footprint, normalized so length >= width."""

    length_studs: int
    width_studs: int

    def __post_init__(self):
        if self.length_studs < 1 or self.width_studs < 1:
            raise ValueError("brick dimensions must be positive")
        if self.length_studs < self.width_studs:
            raise ValueError("BrickType must be normalized (length >= width)")

    @classmethod
    def of(cls, a: int, b: int) -> "BrickType":
        """Build a normalized type from two footprint extents in any order."""
        return cls(max(a, b), min(a, b))

    @classmethod
    def from_name(cls, name: str) -> "BrickType":
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", name)
        if not m:
            raise MalformedLine(f"bad brick type name {name!r}")
        return cls.of(int(m.group(1)), int(m.group(2)))

    @property
    def name(self) -> str:
        """Canonical display name, small extent first (e.g. ``2x4``)."""
        return f"{self.width_studs}x{self.length_studs}"

    @property
    def stud_count(self) -> int:
        return self.length_studs * self.width_studs

    def is_standard(self) -> bool:
        return (self.length_studs, self.width_studs) in STANDARD_FOOTPRINTS


class Orientation(Enum):
    """Planar orientation of a brick footprint.

    ALONG_X: the footprint spans ``width`` studs along x and ``length``
    studs along y.  ALONG_Y: ``length`` along x, ``width`` along y.
    Square bricks are always normalized to ALONG_X.
    """

    ALONG_X = "along_x"
    ALONG_Y = "along_y"


@dataclass(frozen=True)
class Brick:
    """A placed brick: type, grid position of its min corner, orientation."""

    type: BrickType
    x: int
    y: int
    z: int
    orientation: Orientation = Orientation.ALONG_X

    def __post_init__(self):
        # Square footprints have one distinct orientation; normalize so
        # parse/serialize round trips compare equal.
        if (
            self.type.length_studs == self.type.width_studs
            and self.orientation is not Orientation.ALONG_X
        ):
            object.__setattr__(self, "orientation", Orientation.ALONG_X)

    @property
    def footprint(self) -> tuple[int, int]:
        """Extents (dx, dy) of the occupied footprint."""
        if self.orientation is Orientation.ALONG_X:
            return (self.type.width_studs, self.type.length_studs)
        return (self.type.length_studs, self.type.width_studs)

    def cells(self) -> Iterator[Cell]:
        dx, dy = self.footprint
        for cx in range(self.x, self.x + dx):
            for cy in range(self.y, self.y + dy):
                yield (cx, cy, self.z)

    def footprint_cells(self) -> Iterator[tuple[int, int]]:
        dx, dy = self.footprint
        for cx in range(self.x, self.x + dx):
            for cy in range(self.y, self.y + dy):
                yield (cx, cy)

    @property
    def centroid(self) -> tuple[float, float]:
        """Footprint center in continuous stud coordinates."""
        dx, dy = self.footprint
        return (self.x + dx / 2.0, self.y + dy / 2.0)

    def sort_key(self) -> tuple:
        return (self.x, self.y, self.z, self.type.length_studs,
                self.type.width_studs, self.orientation.value)


_LINE_RE = re.compile(
    r"\s*(\d+)\s*[xX]\s*(\d+)\s+\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)\s*"
)


def parse_brick_line(
    line: str, line_no: Optional[int] = None, known_only: bool = False
) -> Brick:
    """Parse ``HxW (X,Y,Z)`` into a Brick.

    H is the extent along x, W along y.  The type is normalized, and the
    orientation records which way the written footprint maps onto it:
    ``2x4`` parses as a 2x4 type ALONG_X, ``4x2`` as the same type ALONG_Y.
    Unknown footprints are accepted unless ``known_only`` is set; inventory
    checking is deferred to the validity layer.
    """
    m = _LINE_RE.fullmatch(line)
    if not m:
        raise MalformedLine(f"cannot parse brick line {line.strip()!r}", line_no)
    h, w, x, y, z = (int(g) for g in m.groups())
    if h < 1 or w < 1:
        raise MalformedLine(f"zero-sized brick in {line.strip()!r}", line_no)
    btype = BrickType.of(h, w)
    if known_only and not btype.is_standard():
        raise UnknownBrickType(f"footprint {h}x{w} is not a known brick type")
    orient = Orientation.ALONG_X if h <= w else Orientation.ALONG_Y
    return Brick(btype, x, y, z, orient)


def serialize_brick_line(b: Brick) -> str:
    """Inverse of :func:`parse_brick_line`."""
    dx, dy = b.footprint
    return f"{dx}x{dy} ({b.x},{b.y},{b.z})"


@dataclass(frozen=True)
class WorldConfig:
    """Bounded build volume with an optional knobbed baseplate at z = 0."""

    dims: tuple[int, int, int] = (20, 20, 20)
    baseplate: bool = True

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ValueError("world dims must be >= 1 in each axis")

    def contains_brick(self, b: Brick) -> bool:
        dx, dy = b.footprint
        X, Y, Z = self.dims
        return (
            0 <= b.x and b.x + dx <= X
            and 0 <= b.y and b.y + dy <= Y
            and 0 <= b.z < Z
        )


class Inventory:
    """Brick counts per type; a count of None means unbounded."""

    def __init__(self, entries: dict[BrickType, Optional[int]]):
        for t, c in entries.items():
            if c is not None and c < 0:
                raise InventoryError(f"negative count for {t.name}")
        self._entries: dict[BrickType, Optional[int]] = dict(entries)

    @classmethod
    def standard(cls) -> "Inventory":
        """Unbounded counts for the eight default footprints."""
        return cls({BrickType(l, w): None for (l, w) in sorted(STANDARD_FOOTPRINTS)})

    @property
    def entries(self) -> dict[BrickType, Optional[int]]:
        return dict(self._entries)

    def allows(self, t: BrickType) -> bool:
        return t in self._entries

    def limit(self, t: BrickType) -> Optional[int]:
        return self._entries.get(t)

    def remaining(self, t: BrickType, used: int) -> Optional[int]:
        """Remaining count given ``used`` already consumed; None = unbounded."""
        if t not in self._entries:
            return 0
        lim = self._entries[t]
        if lim is None:
            return None
        if used > lim:
            raise InventoryError(f"{t.name}: {used} used exceeds limit {lim}")
        return lim - used

    def types(self) -> list[BrickType]:
        return sorted(self._entries)


class BrickStructure:
    """An ordered set of collision-free bricks with a cell occupancy index.

    Values are immutable from the caller's viewpoint: every mutation
    returns a new structure, and all queries are read-only, so instances
    are safe to share across threads.
    """

    __slots__ = ("bricks", "world", "_occupancy")

    def __init__(self, bricks: tuple[Brick, ...], world: WorldConfig,
                 _occupancy: Optional[dict[Cell, int]] = None):
        self.bricks = bricks
        self.world = world
        if _occupancy is None:
            _occupancy = {}
            for i, b in enumerate(bricks):
                if not world.contains_brick(b):
                    raise OutOfBounds(f"brick {i} outside world bounds")
                for c in b.cells():
                    if c in _occupancy:
                        raise Collision(
                            f"brick {i} overlaps brick {_occupancy[c]} at {c}",
                            blocking_index=_occupancy[c],
                        )
                    _occupancy[c] = i
        self._occupancy = _occupancy

    # -- constructors -------------------------------------------------

    @classmethod
    def empty(cls, world: WorldConfig = WorldConfig()) -> "BrickStructure":
        return cls((), world, {})

    @classmethod
    def from_bricks(
        cls, bricks, world: WorldConfig = WorldConfig()
    ) -> "BrickStructure":
        s = cls.empty(world)
        for b in bricks:
            s = s.add_brick(b)
        return s

    # -- queries ------------------------------------------------------

    def __len__(self) -> int:
        return len(self.bricks)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BrickStructure)
            and self.bricks == other.bricks
            and self.world == other.world
        )

    def __hash__(self):
        return hash((self.bricks, self.world))

    def brick(self, i: int) -> Brick:
        if not 0 <= i < len(self.bricks):
            raise BadIndex(f"brick index {i} out of range 0..{len(self.bricks) - 1}")
        return self.bricks[i]

    def occupant(self, cell: Cell) -> Optional[int]:
        return self._occupancy.get(cell)

    def occupancy(self) -> dict[Cell, int]:
        return dict(self._occupancy)

    def check_placement(self, b: Brick) -> Optional[int]:
        """Return the blocking brick index for a collision, or None if free.

        Raises OutOfBounds when the brick does not fit in the world.
        """
        if not self.world.contains_brick(b):
            raise OutOfBounds(f"brick at ({b.x},{b.y},{b.z}) outside world bounds")
        for c in b.cells():
            hit = self._occupancy.get(c)
            if hit is not None:
                return hit
        return None

    # -- edits (return new values) -------------------------------------

    def add_brick(self, b: Brick) -> "BrickStructure":
        hit = self.check_placement(b)
        if hit is not None:
            raise Collision(
                f"brick at ({b.x},{b.y},{b.z}) overlaps brick {hit}",
                blocking_index=hit,
            )
        occ = dict(self._occupancy)
        idx = len(self.bricks)
        for c in b.cells():
            occ[c] = idx
        return BrickStructure(self.bricks + (b,), self.world, occ)

    def remove_brick(self, i: int) -> "BrickStructure":
        if not 0 <= i < len(self.bricks):
            raise BadIndex(f"brick index {i} out of range 0..{len(self.bricks) - 1}")
        remaining = self.bricks[:i] + self.bricks[i + 1:]
        occ: dict[Cell, int] = {}
        for j, b in enumerate(remaining):
            for c in b.cells():
                occ[c] = j
        return BrickStructure(remaining, self.world, occ)

    def prefix(self, k: int) -> "BrickStructure":
        """Structure formed by the first k bricks, preserving order."""
        if not 0 <= k <= len(self.bricks):
            raise BadIndex(f"prefix length {k} out of range 0..{len(self.bricks)}")
        return BrickStructure.from_bricks(self.bricks[:k], self.world)

    # -- contact topology ----------------------------------------------

    def interfaces(self, i: int) -> list["ContactInterface"]:
        """Vertical contact interfaces of brick i, one per touching neighbor.

        The baseplate appears as a neighbor with index BASEPLATE when the
        brick sits at z = 0 and the world has a baseplate.
        """
        b = self.brick(i)
        above: dict[int, list[tuple[int, int]]] = {}
        below: dict[int, list[tuple[int, int]]] = {}
        for (cx, cy) in b.footprint_cells():
            up = self._occupancy.get((cx, cy, b.z + 1))
            if up is not None:
                above.setdefault(up, []).append((cx, cy))
            dn = self._occupancy.get((cx, cy, b.z - 1))
            if dn is not None:
                below.setdefault(dn, []).append((cx, cy))
        out: list[ContactInterface] = []
        if b.z == 0 and self.world.baseplate:
            out.append(ContactInterface(BASEPLATE, i, tuple(sorted(b.footprint_cells()))))
        for j in sorted(below):
            out.append(ContactInterface(j, i, tuple(sorted(below[j]))))
        for j in sorted(above):
            out.append(ContactInterface(i, j, tuple(sorted(above[j]))))
        return out

    def neighbors(self, i: int) -> list[int]:
        """Indices of bricks sharing a vertical interface with brick i."""
        seen = set()
        for itf in self.interfaces(i):
            other = itf.lower if itf.upper == i else itf.upper
            if other != BASEPLATE and other != i:
                seen.add(other)
        return sorted(seen)

    def connected_components(self) -> list[list[int]]:
        """Partition of brick indices under the shared-interface relation.

        The baseplate grounds nothing here: two stacks standing apart on
        the plate are two components.
        """
        unvisited = set(range(len(self.bricks)))
        parts: list[list[int]] = []
        while unvisited:
            root = min(unvisited)
            comp = [root]
            unvisited.remove(root)
            stack = [root]
            while stack:
                cur = stack.pop()
                for nb in self.neighbors(cur):
                    if nb in unvisited:
                        unvisited.remove(nb)
                        comp.append(nb)
                        stack.append(nb)
            parts.append(sorted(comp))
        return parts

    def top_level(self) -> int:
        """Highest occupied z layer, or -1 when empty."""
        return max((b.z for b in self.bricks), default=-1)


@dataclass(frozen=True)
class ContactInterface:
    """Overlap cells of one vertical interface between two bodies.

    ``lower`` is the body whose studs engage ``upper``'s tubes; it may be
    BASEPLATE.  ``cells`` are the shared (x, y) columns; the contact plane
    sits at the top of the lower body.
    """

    lower: int
    upper: int
    cells: tuple[tuple[int, int], ...]


# -- text and JSON formats ---------------------------------------------


def load_structure(
    path: Union[str, Path], world: WorldConfig = WorldConfig()
) -> BrickStructure:
    """Read a structure text file: one ``HxW (X,Y,Z)`` per line.

    Lines starting with ``#`` and blank lines are skipped.  Brick order is
    preserved (order = generation order, which rollback semantics rely on).
    Errors carry the 1-based line number.
    """
    s = BrickStructure.empty(world)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            stripped = raw.split("#", 1)[0].strip()
            if not stripped:
                continue
            b = parse_brick_line(stripped, line_no=line_no)
            try:
                s = s.add_brick(b)
            except Collision as e:
                raise Collision(str(e), blocking_index=e.blocking_index,
                                line_no=line_no) from None
            except OutOfBounds as e:
                raise OutOfBounds(str(e), line_no=line_no) from None
    return s


def save_structure(s: BrickStructure, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in s.bricks:
            fh.write(serialize_brick_line(b) + "\n")


def structure_to_dict(s: BrickStructure) -> dict:
    """JSON mirror of the text format records."""
    return {
        "world": {"dims": list(s.world.dims), "baseplate": s.world.baseplate},
        "bricks": [
            {"h": b.footprint[0], "w": b.footprint[1], "x": b.x, "y": b.y, "z": b.z}
            for b in s.bricks
        ],
    }


def structure_from_dict(d: dict) -> BrickStructure:
    world = WorldConfig(tuple(d["world"]["dims"]), d["world"]["baseplate"])
    s = BrickStructure.empty(world)
    for rec in d["bricks"]:
        s = s.add_brick(parse_brick_line(
            f"{rec['h']}x{rec['w']} ({rec['x']},{rec['y']},{rec['z']})"))
    return s


def save_structure_json(s: BrickStructure, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(structure_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_structure_json(path: Union[str, Path]) -> BrickStructure:
    with open(path, "r", encoding="utf-8") as fh:
        return structure_from_dict(json.load(fh))
