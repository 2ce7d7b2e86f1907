import numpy as np

from leafgrid.sampling import InjectionModel, rng_for


def unit_model(grid, std=1.0):
    return InjectionModel.isotropic(grid.non_root, std)


def generic_model(grid, seed):
    """Heterogeneous injection moments with a nonzero p-q covariance."""
    rng = rng_for(seed)
    k = len(grid.non_root)
    return InjectionModel(tuple(grid.non_root), rng.uniform(0.5, 1.5, k),
                          rng.uniform(0.5, 1.5, k), rng.uniform(-0.2, 0.2, k))


def rel_err(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
