import math

import pytest
from hypothesis import given, strategies as st

from leafgrid import fixtures
from leafgrid.alg1 import Alg1Config, InapplicableTest, intermediate_edge_test, run_alg1, sibling_parent_test
from leafgrid.grid import Line, tree_edit_distance
from leafgrid.harness import gen_random_grid, random_decoys
from leafgrid.moments import analytic_moments, phi

from helpers import generic_model, unit_model

UNIT = (1.0, 1.0, 0.0)


def leaf_moments(grid, model=None):
    return analytic_moments(grid, model or unit_model(grid)).subset(grid.leaves)


def recover(grid, extra=(), model=None, **kw):
    cfg = Alg1Config(permissible=list(grid.lines) + list(extra), root=grid.root, **kw)
    return run_alg1(leaf_moments(grid, model), cfg)


def test_sibling_test_true_parent(g1):
    m = leaf_moments(g1)
    ok, res = sibling_parent_test(phi(m, "a", "b"), UNIT, UNIT, g1.line("a", "h"),
                                  g1.line("b", "h"), 1e-6)
    assert ok and res == pytest.approx(0, abs=1e-12)
    assert phi(m, "a", "b") == pytest.approx(18)


def test_sibling_test_wrong_impedances(g1):
    m = leaf_moments(g1)
    wrong = Line("c", "h", g1.line("h", "b").r, g1.line("h", "b").x)
    ok, res = sibling_parent_test(phi(m, "a", "c"), UNIT, UNIT, g1.line("a", "h"), wrong, 1e-6)
    assert not ok and res > 1e-6
    assert sibling_parent_test(phi(m, "a", "c"), UNIT, UNIT, g1.line("a", "h"), wrong, math.inf)[0]


def test_intermediate_test_g2(g2):
    m = leaf_moments(g2)
    lhs = phi(m, "a", "c") - phi(m, "b", "c")
    assert lhs == pytest.approx(-10)
    ok, res = intermediate_edge_test(phi(m, "a", "c"), phi(m, "b", "c"), UNIT, UNIT,
                                     (2, 2), (3, 3), (1, 1), 1e-6)
    assert ok and res < 1e-12


def test_intermediate_test_perturbed_line_fails(g2):
    m = leaf_moments(g2)
    w = 1.5  # k1-k2 line inflated by 50%
    ok, _ = intermediate_edge_test(phi(m, "a", "c"), phi(m, "b", "c"), UNIT, UNIT,
                                   (1 + w, 1 + w), (2 + w, 2 + w), (w, w), 1e-3)
    assert not ok


def test_g1_with_decoy(g1):
    res = recover(g1, [Line("t", "a", 2.5, 1.5)])
    assert res.complete
    assert res.edge_set() == g1.edge_set()


def test_g2_exact(g2):
    res = recover(g2, random_decoys(g2, 4, seed=1))
    assert res.edge_set() == g2.edge_set()


def test_missing_true_line_reported_unresolved(g1):
    lines = [ln for ln in g1.lines if {ln.a, ln.b} != {"h", "c"}]
    res = run_alg1(leaf_moments(g1), Alg1Config(permissible=lines, root="t"))
    assert "c" in res.diagnostics["unresolved"]
    assert not res.complete
    assert res.diagnostics["tests"]["inapplicable"] > 0


def test_missing_line_raises_inapplicable_in_lookup(g1):
    from leafgrid.alg1 import _Lines
    with pytest.raises(InapplicableTest):
        _Lines(g1.lines).get("a", "b")


def test_config_validation():
    with pytest.raises(ValueError):
        Alg1Config(tau1=0)
    with pytest.raises(ValueError):
        Alg1Config(permissible=[Line("a", "b", 1, 1), Line("b", "a", 2, 2)])


def test_bus33_with_fifty_decoys():
    grid = fixtures.bus33_style()
    res = recover(grid, random_decoys(grid, 50, seed=7))
    assert res.complete and tree_edit_distance(res.grid, grid) == 0


@given(st.integers(0, 10**6), st.integers(4, 40))
def test_exact_recovery_random_grids(seed, n):
    grid = gen_random_grid(n, seed=seed)
    res = recover(grid, random_decoys(grid, 20, seed=seed), model=generic_model(grid, seed))
    assert res.edge_set() == grid.edge_set()


@given(st.integers(0, 10**6))
def test_passing_set_monotone_in_tolerance(seed):
    grid = gen_random_grid(12, seed=seed)
    m = leaf_moments(grid)
    decoys = random_decoys(grid, 10, seed=seed)
    lines = {frozenset((ln.a, ln.b)): ln for ln in list(grid.lines) + decoys}
    leaves = grid.leaves
    triples = []
    for k in grid.bus_ids:
        for i, a in enumerate(leaves):
            for b in leaves[i + 1:]:
                la, lb = lines.get(frozenset((a, k))), lines.get(frozenset((b, k)))
                if la and lb:
                    triples.append((phi(m, a, b), la, lb))
    passing = [sum(sibling_parent_test(f, UNIT, UNIT, la, lb, t)[0] for f, la, lb in triples)
               for t in (1e-9, 1e-3, 0.1, 1.0, math.inf)]
    assert passing == sorted(passing)
    assert passing[-1] == len(triples)


def test_deterministic(g2):
    extra = random_decoys(g2, 4, seed=3)
    a = recover(g2, extra)
    b = recover(g2, extra)
    assert a.edges == b.edges and a.diagnostics == b.diagnostics
