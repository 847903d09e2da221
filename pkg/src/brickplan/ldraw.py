"""LDraw ``.ldr`` export for brick structures.

LDraw uses -Y as up; one stud pitch is 20 LDU and one brick height 24 LDU.
Official brick parts are modeled with the origin on the top face and the
long side along local X, so a brick whose length runs along world y gets a
quarter-turn about the vertical axis.  The part-ID table lives in
``data/ldraw_parts.json`` so it can be corrected against the LDraw catalog
without touching code.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .model import Brick, BrickStructure, Orientation, UnknownBrickType

_IDENTITY = "1 0 0 0 1 0 0 0 1"
# quarter turn about the LDraw Y (vertical) axis
_QUARTER = "0 0 -1 0 1 0 1 0 0"


def load_part_table(path: Optional[Union[str, Path]] = None) -> dict:
    """Load the part-ID table, from a file or the packaged default."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    with resources.files("brickplan.data").joinpath("ldraw_parts.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


def brick_to_ldraw_line(b: Brick, color: int, table: dict) -> str:
    parts = table["parts"]
    if b.type.name not in parts:
        raise UnknownBrickType(f"no LDraw part for footprint {b.type.name}")
    pitch = table["units"]["stud_pitch_ldu"]
    height = table["units"]["brick_height_ldu"]
    cx, cy = b.centroid
    lx = cx * pitch
    lz = cy * pitch
    # origin on the top face: one brick height above the bottom plane
    ly = -height * (b.z + 1)
    # parts carry their length along local X; our length runs along y
    # for ALONG_X bricks, so those get the quarter turn
    square = b.type.length_studs == b.type.width_studs
    matrix = _IDENTITY if square or b.orientation is Orientation.ALONG_Y else _QUARTER
    return (
        f"1 {color} {_fmt(lx)} {_fmt(ly)} {_fmt(lz)} {matrix} "
        f"{parts[b.type.name]}.dat"
    )


def export_ldraw(
    s: BrickStructure,
    path: Union[str, Path],
    colors: Optional[Sequence[int]] = None,
    table: Optional[dict] = None,
    name: str = "structure",
) -> None:
    """Write the structure as an LDraw model file.

    ``colors`` optionally gives one LDraw color code per brick; the table
    default is used otherwise.
    """
    table = table if table is not None else load_part_table()
    default_color = table.get("default_color", 7)
    lines = [f"0 {name}", "0 Name: " + str(Path(path).name), "0 BFC CERTIFY CCW"]
    for i, b in enumerate(s.bricks):
        color = colors[i] if colors is not None else default_color
        lines.append(brick_to_ldraw_line(b, color, table))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def export_score_heatmap(
    s: BrickStructure,
    scores: Sequence[float],
    path: Union[str, Path],
    table: Optional[dict] = None,
) -> None:
    """Color bricks by stability score bucket (red = collapsing)."""
    table = table if table is not None else load_part_table()
    buckets = table.get("score_colors", [4, 25, 14, 27, 10])
    colors = []
    for sc in scores:
        if sc <= 0.0:
            colors.append(buckets[0])
        else:
            idx = min(int(sc * (len(buckets) - 1)) + 1, len(buckets) - 1)
            colors.append(buckets[idx])
    export_ldraw(s, path, colors=colors, table=table, name="stability heatmap")


def _fmt(v: float) -> str:
    return f"{v:.6g}"
