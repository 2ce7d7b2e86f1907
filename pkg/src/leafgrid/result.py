"""Container returned by the learning algorithms."""
from __future__ import annotations

from dataclasses import dataclass, field

from .grid import Line, RadialGrid, grid_to_dict, natural_key


@dataclass
class EstimationResult:
    """Recovered topology with per-edge impedance estimates.

    ``edges`` maps ``(a, b)`` to raw ``(r, x)`` estimates (``None`` when a
    metric was not estimated).  Edges whose estimate is not strictly positive
    are listed in ``quarantined`` and left out of :attr:`grid`.
    """

    nodes: list[str]
    observed: set[str]
    edges: dict[tuple[str, str], tuple[float | None, float | None]]
    root: str | None = None
    quarantined: list[tuple[str, str]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.diagnostics.get("unresolved") and not self.quarantined

    @property
    def grid(self) -> RadialGrid:
        lines = []
        for (a, b), (r, x) in self.edges.items():
            if (a, b) in self.quarantined:
                continue
            lines.append(Line(a, b, 1.0 if r is None else r, 1.0 if x is None else x))
        return RadialGrid.from_lines(lines, root=self.root, observed=self.observed,
                                     extra_buses=self.nodes)

    def edge_set(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges if e not in self.quarantined}

    def to_dict(self) -> dict:
        doc = grid_to_dict(self.grid)
        doc["quarantined"] = [
            {"a": a, "b": b, "r": self.edges[(a, b)][0], "x": self.edges[(a, b)][1]}
            for a, b in self.quarantined
        ]
        doc["diagnostics"] = self.diagnostics
        return doc


def edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if natural_key(a) <= natural_key(b) else (b, a)
