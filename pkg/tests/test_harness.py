import math

import pytest
from hypothesis import assume, given, strategies as st

from leafgrid.grid import GridError, validate
from leafgrid.harness import (ExperimentSpec, TargetUnreachable, gen_random_grid, impedance_error,
                              long_form, min_samples, random_decoys, rows_to_csv,
                              run_experiment, sample_complexity_sweep, summarize, without_timing,
                              ROW_FIELDS, SUMMARY_FIELDS)
from leafgrid.pipeline import run_alg3
from leafgrid.moments import analytic_moments
from leafgrid.grid import observable_tree

from helpers import unit_model


def depth(grid, bus):
    par = grid.parents()
    k = 0
    while bus != grid.root:
        bus = par[bus]
        k += 1
    return k


def test_random_grid_deterministic_and_valid():
    a = gen_random_grid(10, max_degree=5, seed=42)
    b = gen_random_grid(10, max_degree=5, seed=42)
    assert [(ln.a, ln.b, ln.r, ln.x) for ln in a.lines] == [(ln.a, ln.b, ln.r, ln.x) for ln in b.lines]
    assert validate(a, require_hidden_degree3=True) == []
    assert a.root == "b0"


def test_three_buses_cannot_have_degree3_junction():
    with pytest.raises(GridError):
        gen_random_grid(3)
    assert len(gen_random_grid(3, enforce_hidden_degree3=False).lines) == 2


@given(st.integers(0, 10**6), st.integers(4, 120), st.integers(3, 8))
def test_random_grid_properties(seed, n, max_degree):
    assume(max_degree > 3 or n % 2 == 0)  # all-degree-3 trees have an even bus count
    grid = gen_random_grid(n, max_degree=max_degree, seed=seed)
    assert len(grid) == n
    assert validate(grid, require_hidden_degree3=True) == []
    assert all(0.1 <= ln.r <= 0.2 and 0.1 <= ln.x <= 0.2 for ln in grid.lines)
    assert max(len(grid.neighbors(b)) for b in grid.bus_ids) <= max_degree


@given(st.integers(0, 10**6), st.integers(4, 60), st.integers(2, 4))
def test_bounded_depth(seed, n, max_depth):
    try:
        grid = gen_random_grid(n, max_degree=6, seed=seed, max_depth=max_depth)
    except GridError:
        return  # size does not fit under the cap at this degree bound
    assert validate(grid, require_hidden_degree3=True) == []
    assert max(depth(grid, b) for b in grid.bus_ids) <= max_depth


def test_bounded_depth_fits_forty_buses():
    for seed in range(20):
        grid = gen_random_grid(40, seed=seed, max_depth=3)
        assert max(depth(grid, b) for b in grid.bus_ids) <= 3


def test_decoys_are_new_lines():
    grid = gen_random_grid(20, seed=1)
    decoys = random_decoys(grid, 50, seed=2)
    assert len(decoys) == 50
    keys = {frozenset((d.a, d.b)) for d in decoys}
    assert len(keys) == 50 and not keys & grid.edge_set()


def test_impedance_error_zero_on_exact_recovery():
    grid = gen_random_grid(25, seed=8)
    res = run_alg3(analytic_moments(grid, unit_model(grid)))
    assert impedance_error(res, observable_tree(grid)) < 1e-9


def test_analytic_experiment_is_exact():
    spec = ExperimentSpec(trials=5, tolerances=[0.0], mode="exact")
    rows = run_experiment(spec)
    assert all(r["exact"] == 1 for r in rows)
    summary = summarize(rows)
    assert summary[0]["accuracy"] == 1.0 and summary[0]["edge_difference"] == 0


def test_alg1_experiment_is_exact():
    spec = ExperimentSpec(algorithm="alg1", trials=5, decoys=10)
    assert all(r["exact"] == 1 for r in run_experiment(spec))


def test_sampled_experiment_csv_is_reproducible():
    spec = ExperimentSpec(trials=4, sample_counts=[500, 2000], tolerances=[0.05, 0.1])
    a = rows_to_csv(without_timing(run_experiment(spec)), [f for f in ROW_FIELDS if f != "seconds"])
    b = rows_to_csv(without_timing(run_experiment(spec)), [f for f in ROW_FIELDS if f != "seconds"])
    assert a == b
    spec2 = ExperimentSpec(**{**spec.to_dict(), "workers": 2})
    c = rows_to_csv(without_timing(run_experiment(spec2)), [f for f in ROW_FIELDS if f != "seconds"])
    assert a == c
    summary = summarize(run_experiment(spec))
    assert len(summary) == 4 and len(long_form(summary)) == 12
    assert rows_to_csv(summary, SUMMARY_FIELDS).splitlines()[0].startswith("n_samples,")


def test_correlated_injections_degrade_gracefully():
    acc = []
    for c in (0.0, 0.1, 0.2):
        spec = ExperimentSpec(grid={"kind": "fixture", "name": "bus33"},
                              injection={"std": 1.0, "corr": c}, trials=3,
                              sample_counts=[5000], tolerances=[0.1], mode="adaptive",
                              tau=math.inf)
        rows = run_experiment(spec)
        acc.append(sum(r["edge_difference"] for r in rows) / len(rows))
    assert acc[0] <= acc[2]


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec(sample_counts=[10, 5])
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentSpec(algorithm="alg2")
    spec = ExperimentSpec(trials=3)
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec


def test_failed_trial_is_recorded():
    spec = ExperimentSpec(grid={"kind": "random", "n": 3}, trials=2)
    rows = run_experiment(spec)
    assert all(r["status"].startswith("error") for r in rows)
    assert summarize(rows)[0]["failures"] == 2


def test_sample_complexity_analytic_is_exact():
    spec = ExperimentSpec(trials=3, tolerances=[0.0], mode="exact")
    out = sample_complexity_sweep([6, 10], spec, analytic=True)
    assert out.get("exact") and [r["n_star"] for r in out["table"]] == [0, 0]


def test_min_samples_finds_threshold():
    spec = ExperimentSpec(trials=10, tolerances=[0.1], tau=math.inf)
    n_star, probes = min_samples(spec, target=0.9, n_start=250, n_cap=10**5)
    assert 250 <= n_star <= 10**5
    assert any(rate >= 0.9 for n, rate in probes if n == n_star)


def test_min_samples_unreachable():
    spec = ExperimentSpec(trials=2, tolerances=[0.0], tau=math.inf)
    with pytest.raises(TargetUnreachable):
        min_samples(spec, target=1.0, n_start=100, n_cap=400)
