import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leafgrid.grid import (REACTANCE, RESISTANCE, Bus, GridError, Line, RadialGrid,
                           distance_table, effective_distance, grid_from_dict, grid_to_dict,
                           kron_reduce_degree2, laplacian_inverse, load_grid, observable_tree,
                           path, reduced_laplacian, save_grid, tree_edit_distance, validate)
from leafgrid.harness import gen_random_grid

seeds = st.integers(0, 2**31 - 1)
sizes = st.integers(4, 60)


def test_line_rejects_nonpositive_impedance():
    with pytest.raises(ValueError):
        Line("a", "b", 0.0, 1.0)
    with pytest.raises(ValueError):
        Line("a", "b", 1.0, -1.0)
    with pytest.raises(ValueError):
        Line("a", "a", 1.0, 1.0)


def test_line_conductance_susceptance():
    ln = Line("a", "b", 3.0, 4.0)
    assert ln.g == pytest.approx(3 / 25)
    assert ln.beta == pytest.approx(4 / 25)


def test_validate_star_is_valid(g1):
    assert validate(g1, require_hidden_degree3=True) == []


def test_validate_reports_degree2_hidden_bus():
    grid = RadialGrid.from_lines([Line("t", "m", 1, 1), Line("m", "a", 1, 1)], root="t")
    assert "hidden bus m has degree 2" in validate(grid, require_hidden_degree3=True)
    assert validate(grid) == []


def test_validate_reports_cycle(g1):
    grid = RadialGrid(g1.buses, g1.lines + [Line("a", "b", 1, 1)], root="t")
    problems = validate(grid)
    assert any("not a tree" in p for p in problems)


def test_validate_reports_multiple_substations():
    buses = [Bus("t", "substation", False), Bus("s", "substation", False), Bus("a", "leaf", True)]
    grid = RadialGrid(buses, [Line("t", "a", 1, 1), Line("s", "a", 1, 1)], root="t")
    assert any("multiple substations" in p for p in validate(grid))


def test_path_examples(g1):
    assert path(g1, "a", "b") == [("a", "h"), ("h", "b")]
    assert path(g1, "a", "a") == []
    assert path(g1, "a", "t") == [("a", "h"), ("h", "t")]
    with pytest.raises(GridError):
        path(g1, "a", "zz")


def test_g1_laplacian_inverse_entries(g1):
    hr = laplacian_inverse(g1, RESISTANCE)
    assert hr.entry("a", "a") == 3
    assert hr.entry("a", "b") == 1
    assert hr.entry("b", "b") == 4
    assert hr.entry("h", "h") == 1
    assert hr.entry("a", "c") == 1
    assert hr.entry("h", "b") - hr.entry("a", "b") == 0
    num = np.linalg.inv(reduced_laplacian(g1, RESISTANCE))
    np.testing.assert_allclose(hr.matrix, num, rtol=1e-12)


@given(seeds, sizes)
def test_laplacian_inverse_matches_numerical_inverse(seed, n):
    grid = gen_random_grid(n, seed=seed)
    for kind in (RESISTANCE, REACTANCE):
        mat = laplacian_inverse(grid, kind).matrix
        num = np.linalg.inv(reduced_laplacian(grid, kind))
        assert np.max(np.abs(mat - num) / np.abs(num).max()) <= 1e-10
        assert np.all(np.linalg.eigvalsh(mat) > 0)


@given(seeds, st.integers(4, 30))
def test_parent_child_entry_difference(seed, n):
    grid = gen_random_grid(n, seed=seed)
    hr = laplacian_inverse(grid, RESISTANCE)
    par = grid.parents()
    for b in grid.non_root:
        a = par[b]
        if a == grid.root:
            continue
        below = grid.descendants(b) | {b}
        r_ab = grid.line(a, b).r
        for c in grid.non_root:
            diff = hr.entry(a, c) - hr.entry(b, c)
            assert diff == pytest.approx(-r_ab if c in below else 0.0, abs=1e-12)


def test_g1_distances(g1):
    assert effective_distance(g1, "a", "b") == 5
    assert effective_distance(g1, "a", "c") == 6
    assert effective_distance(g1, "b", "c") == 7
    assert effective_distance(g1, "a", "a") == 0
    assert effective_distance(g1, "a", "b", REACTANCE) == 3


@given(seeds, st.integers(4, 40))
def test_distance_is_additive_along_paths(seed, n):
    grid = gen_random_grid(n, seed=seed)
    ids = grid.bus_ids
    hr = laplacian_inverse(grid, RESISTANCE)
    a, c = ids[0], ids[-1]
    d_ac = effective_distance(grid, a, c)
    for u, _ in path(grid, a, c)[1:]:
        assert effective_distance(grid, a, u) + effective_distance(grid, u, c) == pytest.approx(d_ac)
    nr = [b for b in ids if b != grid.root]
    x, y = nr[0], nr[-1]
    via_inverse = hr.entry(x, x) + hr.entry(y, y) - 2 * hr.entry(x, y)
    assert via_inverse == pytest.approx(effective_distance(grid, x, y))


def test_kron_examples():
    chain = RadialGrid.from_lines([Line("t", "m", 1, 1), Line("m", "a", 1, 1)], root="t")
    red = kron_reduce_degree2(chain)
    assert red.bus_ids == ["a", "t"]
    assert red.line("t", "a").r == 2 and red.line("t", "a").x == 2

    two = RadialGrid.from_lines([Line("t", "m1", 1, 0.5), Line("m1", "m2", 2, 0.5),
                                 Line("m2", "a", 3, 0.5)], root="t")
    red = kron_reduce_degree2(two)
    assert len(red.lines) == 1
    assert red.line("t", "a").r == 6 and red.line("t", "a").x == 1.5


def test_kron_leaves_conforming_grid_unchanged(g1):
    red = kron_reduce_degree2(g1)
    assert red.edge_set() == g1.edge_set()


@given(seeds, st.integers(4, 40))
def test_kron_preserves_distances(seed, n):
    grid = gen_random_grid(n, seed=seed, enforce_hidden_degree3=False)
    red = kron_reduce_degree2(grid)
    keep = red.bus_ids
    for kind in (RESISTANCE, REACTANCE):
        np.testing.assert_allclose(distance_table(red, keep, kind),
                                   distance_table(grid, keep, kind), rtol=1e-12)


def test_observable_tree_drops_unobserved_root_path(g1):
    obs = observable_tree(g1)
    assert obs.root is None
    assert obs.edge_set() == {frozenset(e) for e in [("h", "a"), ("h", "b"), ("h", "c")]}


def test_edit_distance_examples(g1):
    assert tree_edit_distance(g1, g1) == 0
    star = RadialGrid.from_lines([Line("t", "a", 1, 1), Line("t", "b", 1, 1),
                                  Line("t", "c", 1, 1)], root="t")
    assert tree_edit_distance(star, g1) == 7
    moved = RadialGrid.from_lines([Line("t", "h", 1, 1), Line("h", "a", 2, 1),
                                   Line("h", "b", 3, 2), Line("t", "c", 4, 3)], root="t")
    assert tree_edit_distance(moved, g1) == 2


def test_edit_distance_matches_relabelled_hidden_nodes(g1):
    relabelled = RadialGrid.from_lines([Line("x9", "a", 2, 1), Line("x9", "b", 3, 2),
                                        Line("x9", "c", 4, 3)])
    assert tree_edit_distance(relabelled, observable_tree(g1)) == 0


def test_edit_distance_requires_same_observed_sets(g1):
    other = RadialGrid.from_lines([Line("h", "a", 1, 1), Line("h", "b", 1, 1),
                                   Line("h", "d", 1, 1)])
    with pytest.raises(GridError):
        tree_edit_distance(other, observable_tree(g1))


@given(seeds, seeds, st.integers(5, 30))
def test_edit_distance_symmetric(s1, s2, n):
    a = observable_tree(gen_random_grid(n, seed=s1))
    b = observable_tree(gen_random_grid(n, seed=s2))
    if a.observed != b.observed:
        return
    assert tree_edit_distance(a, b) == tree_edit_distance(b, a)


def test_json_round_trip(tmp_path):
    grid = gen_random_grid(25, seed=4)
    dest = tmp_path / "grid.json"
    save_grid(grid, dest)
    back = load_grid(dest)
    assert back.root == grid.root
    assert [(b.id, b.kind, b.observed) for b in back.buses] == \
        [(b.id, b.kind, b.observed) for b in grid.buses]
    for ln in grid.lines:
        got = back.line(ln.a, ln.b)
        assert (got.r, got.x) == (ln.r, ln.x)
    assert grid_to_dict(grid_from_dict(json.loads(dest.read_text()))) == grid_to_dict(grid)
