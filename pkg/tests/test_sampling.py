import warnings

import numpy as np
import pytest

from leafgrid.grid import Line, RadialGrid
from leafgrid.harness import gen_random_grid
from leafgrid.sampling import (AssumptionWarning, InjectionModel, MaskError, ReplayError, SampleSet,
                               draw_injections, generate_samples, load_samples_csv,
                               read_load_csv, replay_model, replay_real_loads, save_samples_csv)

from helpers import unit_model


def test_same_seed_is_deterministic(g1):
    m = unit_model(g1)
    a = draw_injections(m, 100, seed=5)
    b = draw_injections(m, 100, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = draw_injections(m, 100, seed=6)
    assert not np.array_equal(a[0], c[0])


def test_pq_cross_moment_near_zero(g1):
    p, q = draw_injections(unit_model(g1), 10**6, seed=1)
    assert abs(np.mean(p[:, 0] * q[:, 0])) <= 0.01
    assert np.mean(p ** 2) == pytest.approx(1, abs=0.01)


def test_independent_buses_uncorrelated(g1):
    n = 100000
    p, _ = draw_injections(unit_model(g1), n, seed=2)
    corr = np.corrcoef(p.T)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() <= 3 * 4 / np.sqrt(n)


def test_common_factor_correlation(g1):
    m = InjectionModel.isotropic(g1.non_root, corr=0.2)
    p, q = draw_injections(m, 200000, seed=3)
    assert np.corrcoef(p.T)[0, 1] == pytest.approx(0.2, abs=0.01)
    s_pp, _, s_pq = m.covariances()
    assert s_pp[0, 1] == pytest.approx(0.2) and s_pq[0, 1] == pytest.approx(0.2)


def test_uniform_has_unit_variance(g1):
    m = InjectionModel.isotropic(g1.non_root, kind="uniform")
    p, _ = draw_injections(m, 200000, seed=4)
    assert np.var(p) == pytest.approx(1, abs=0.01)
    assert np.abs(p).max() <= np.sqrt(3)


def test_invalid_models():
    with pytest.raises(ValueError):
        InjectionModel(("a",), 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        InjectionModel(("a",), 1.0, 1.0, 0.0, corr=1.0)
    with pytest.raises(ValueError):
        InjectionModel(("a",), 1.0, 1.0, 0.0, kind="cauchy")


def test_mask_contract(g1):
    s = generate_samples(g1, unit_model(g1), 10, seed=0)
    assert s.observed_buses == ["a", "b", "c"]
    with pytest.raises(MaskError):
        s.column("v", "h")
    with pytest.raises(MaskError):
        s.observed("v", ["a", "h"])
    assert s.data["v"].shape == (10, 4)
    with pytest.raises(MaskError):
        s.with_mask(["zz"])


def test_zero_samples(g1):
    s = generate_samples(g1, unit_model(g1), 0)
    assert s.n == 0 and s.data["v"].shape == (0, 4)


def test_acpf_samples(g1):
    s = generate_samples(g1, unit_model(g1, 1e-3), 20, solver="acpf", seed=1)
    lc = generate_samples(g1, unit_model(g1, 1e-3), 20, solver="lcpf", seed=1)
    np.testing.assert_array_equal(s.data["p"], lc.data["p"])
    assert np.abs(s.data["v"] - lc.data["v"]).max() < 1e-3
    with pytest.raises(ValueError):
        generate_samples(g1, unit_model(g1), 5, solver="dc")


def test_model_bus_mismatch(g1, g2):
    with pytest.raises(ValueError):
        generate_samples(g1, unit_model(g2), 5)


def test_head_is_prefix(g1):
    s = generate_samples(g1, unit_model(g1), 50, seed=9)
    np.testing.assert_array_equal(s.head(20).data["v"], s.data["v"][:20])


def write_loads(path, rows, header=("a", "b")):
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def test_replay_constant_column_centred(tmp_path):
    src = write_loads(tmp_path / "loads.csv", [[2.0, 1.0], [2.0, 3.0], [2.0, 5.0]])
    with pytest.warns(AssumptionWarning):
        p, q = replay_real_loads(src, ["a", "b"])
    assert not p[:, 0].any()
    np.testing.assert_allclose(p[:, 1], [-2, 0, 2])
    np.testing.assert_allclose(q, p * np.tan(np.arccos(0.95)))


def test_replay_unit_power_factor_zero_q(tmp_path):
    src = write_loads(tmp_path / "loads.csv", [[1, 2], [3, 4]])
    with pytest.warns(AssumptionWarning, match="q == 0"):
        _, q = replay_real_loads(src, ["a", "b"], power_factor=1.0)
    assert not q.any()


def test_replay_exhausted(tmp_path):
    src = write_loads(tmp_path / "loads.csv", [[1, 2], [3, 4]])
    with pytest.raises(ReplayError, match="replay exhausted"):
        replay_real_loads(src, ["a"], n=5)


def test_replay_missing_column(tmp_path):
    src = write_loads(tmp_path / "loads.csv", [[1, 2]])
    with pytest.raises(ReplayError, match="no column"):
        replay_real_loads(src, ["zz"])


def test_replay_bad_rows(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2,3\n")
    with pytest.raises(ReplayError):
        read_load_csv(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("a,b\n1,oops\n")
    with pytest.raises(ReplayError):
        read_load_csv(tmp_path / "y.csv")


def test_replay_jitter_breaks_degeneracy(tmp_path):
    rng = np.random.default_rng(0)
    src = write_loads(tmp_path / "loads.csv", rng.normal(size=(500, 2)).tolist())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p, q = replay_real_loads(src, ["a", "b"], q_jitter=0.5, seed=1)
    det = np.mean(p * p, 0) * np.mean(q * q, 0) - np.mean(p * q, 0) ** 2
    assert np.all(det > 0.01)


def test_replay_model_drives_leaves(tmp_path):
    grid = RadialGrid.from_lines([Line("t", "h", 1, 1), Line("h", "a", 1, 1),
                                  Line("h", "b", 1, 1), Line("h", "c", 1, 1)], root="t")
    rng = np.random.default_rng(0)
    src = write_loads(tmp_path / "l.csv", rng.normal(size=(30, 3)).tolist(), header=("a", "b", "c"))
    model = replay_model(grid, src, q_jitter=0.3)
    s = generate_samples(grid, model, 30, seed=2)
    loads = read_load_csv(src)
    np.testing.assert_allclose(s.column("p", "a"), loads["a"] - loads["a"].mean())
    with pytest.raises(ReplayError, match="replay exhausted"):
        generate_samples(grid, model, 31, seed=2)


def test_csv_round_trip(tmp_path):
    grid = gen_random_grid(12, seed=1)
    s = generate_samples(grid, unit_model(grid), 7, seed=3)
    save_samples_csv(s, tmp_path / "s.csv")
    back = load_samples_csv(tmp_path / "s.csv")
    assert list(back.buses) == s.observed_buses
    for f in ("v", "theta", "p", "q"):
        np.testing.assert_array_equal(back.observed(f), s.observed(f))


def test_sampleset_shape_check():
    with pytest.raises(ValueError):
        SampleSet(("a",), {f: np.zeros((3, 2)) for f in ("v", "theta", "p", "q")}, {"a"})
