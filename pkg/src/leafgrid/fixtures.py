"""Small canonical grids and the bundled 33/56-bus-style cases."""
from __future__ import annotations

import json
from importlib import resources

from .grid import Line, RadialGrid, grid_from_dict


def g1() -> RadialGrid:
    """Root ``t`` feeding hidden ``h`` with leaves ``a``, ``b``, ``c``."""
    lines = [
        Line("t", "h", 1.0, 1.0),
        Line("h", "a", 2.0, 1.0),
        Line("h", "b", 3.0, 2.0),
        Line("h", "c", 4.0, 3.0),
    ]
    return RadialGrid.from_lines(lines, root="t")


def g2() -> RadialGrid:
    """Two-level grid with equal r and x on every line.

    ``t - k2``; ``k2`` has children ``k1`` and leaf ``c``; ``k1`` has
    leaves ``a`` and ``b``.
    """
    rows = [("t", "k2", 1.0), ("k2", "k1", 1.0), ("k1", "a", 1.0),
            ("k1", "b", 2.0), ("k2", "c", 1.0)]
    return RadialGrid.from_lines([Line(u, v, w, w) for u, v, w in rows], root="t")


def _load(name: str) -> RadialGrid:
    text = resources.files("leafgrid.data").joinpath(f"{name}.json").read_text()
    return grid_from_dict(json.loads(text))


def bus33_style() -> RadialGrid:
    """33 buses: substation, 12 hidden junctions (degree >= 3), 20 leaves."""
    return _load("bus33_style")


def bus56_style() -> RadialGrid:
    """56 buses: substation, 22 hidden junctions (degree >= 3), 33 leaves."""
    return _load("bus56_style")


NAMED = {"g1": g1, "g2": g2, "bus33": bus33_style, "bus56": bus56_style}


def load(name: str) -> RadialGrid:
    try:
        return NAMED[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(NAMED)}") from None
