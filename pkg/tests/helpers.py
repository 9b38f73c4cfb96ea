"""Independent oracles and small builders shared by the unit and acceptance tests."""

import numpy as np

from intkernels.data import Dataset
from intkernels.grid import Axis, Grid
from intkernels.integrate import FieldTensor

PRESSURE16 = np.linspace(500.0, 1000.0, 16)


def make_grid(nx=1, n_p=16, n_t=1, dx=1.0, dt=1.0, pressure=None):
    off = (np.arange(nx) - (nx - 1) / 2) * dx
    p = PRESSURE16[-n_p:] if pressure is None else np.asarray(pressure, dtype=float)
    if pressure is None and n_p != 16:
        p = np.linspace(500.0, 1000.0, n_p)
    return Grid((Axis("horizontal-x", off), Axis("horizontal-y", off), Axis("pressure", p),
                 Axis("time", np.arange(-(n_t - 1), 1) * dt)))


def random_field(rng, n, shape, masked=0.3):
    values = rng.standard_normal((n,) + tuple(shape))
    mask = rng.random(values.shape) >= masked
    return FieldTensor(values, mask)


def naive_integral(values, mask, kernel, quadrature):
    """Explicit loops over every sample and grid point, skipping masked points."""
    n, nx, ny, n_p, n_t = values.shape
    out = np.zeros(n)
    for s in range(n):
        acc = 0.0
        for r in range(n_t):
            for m in range(n_p):
                for ix in range(nx):
                    for iy in range(ny):
                        if mask is not None and not mask[s, ix, iy, m, r]:
                            continue
                        acc += kernel[ix, iy, m, r] * values[s, ix, iy, m, r] * quadrature[ix, iy, m, r]
        out[s] = acc
    return out


def central_fd(f, x: np.ndarray, idx, h=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``x[idx]`` (mutated in place, then restored)."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def centered_cosine(a, b):
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def tiny_dataset(rng, n_t=12, nx=5, ny=5, n_p=6, n_pred=2, n_loc=2, cut=True):
    """Random dataset with terrain-like masking (columns cut below a random level)."""
    mask = np.ones((nx, ny, n_p), dtype=bool)
    if cut:
        cutoff = rng.integers(2, n_p + 1, size=(nx, ny))
        mask &= np.arange(n_p)[None, None, :] < cutoff[..., None]
    mask = np.broadcast_to(mask, (n_t, nx, ny, n_p)).copy()
    preds = rng.standard_normal((n_pred, n_t, nx, ny, n_p))
    locs = rng.standard_normal((n_loc, n_t, nx, ny))
    target = rng.random((n_t, nx, ny))
    return Dataset(preds, mask, locs, target, np.linspace(500.0, 1000.0, n_p), np.arange(n_t, dtype=float),
                   np.arange(nx, dtype=float), np.arange(ny, dtype=float))


def small_config(variants=None, seeds=(1, 2), **overrides):
    """A few-second end-to-end config: 5x5 grid, 6 levels, 7 short years."""
    cfg = {
        "name": "small",
        "data": {"synthetic": {"n_years": 7, "steps_per_year": 6, "n_x": 5, "n_y": 5,
                               "pressure": [500.0, 600.0, 700.0, 800.0, 900.0, 1000.0], "min_valid_levels": 4,
                               "link": "softplus", "nonnegative": True}},
        "split": {"fractions": [5, 1, 1], "window": 3},
        "train": {"max_epochs": 2, "hidden": [8, 4]},
        "eval": {"n_bootstrap": 20},
        "seeds": list(seeds),
        "variants": variants if variants is not None else [
            {"level": "baseline", "domain": {"vertical": False}},
            {"level": "baseline", "domain": {"vertical": True}},
            {"level": "nonparametric", "domain": {"vertical": True}},
            {"level": "parametric", "domain": {"vertical": True}, "families": "mixture"},
            {"level": "parametric", "domain": {"vertical": True}, "families": ["mixture", "exponential", "mixture"]},
        ],
    }
    cfg.update(overrides)
    return cfg
