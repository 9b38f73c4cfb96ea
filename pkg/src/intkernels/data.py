"""Gridded datasets, synthetic generation with planted kernels, splitting and standardization."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .grid import Axis, Grid, cell_widths, effective_column_fraction
from .integrate import FieldTensor, integrate_feature
from .kernels import Kernel, KernelSpec
from .tensorio import read_tensor, write_tensor

LINKS = {
    "identity": lambda s: s,
    "softplus": lambda s: np.logaddexp(0.0, s),
    "exp": np.exp,
    "tanh": np.tanh,
}


class DataError(ValueError):
    pass


class StandardizerError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass
class Dataset:
    """Predictor fields and targets on a (time, x, y[, pressure]) grid.

    ``predictors`` is (n_predictors, T, X, Y, P); ``mask`` is (T, X, Y, P) with
    True where the field is defined; ``locals`` is (n_locals, T, X, Y).
    Pressure increases toward the surface, so the deepest valid level of a
    column is its last True entry.
    """

    predictors: np.ndarray
    mask: np.ndarray
    locals: np.ndarray
    target: np.ndarray
    pressure: np.ndarray
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    predictor_names: list[str] = field(default_factory=list)
    local_names: list[str] = field(default_factory=list)
    passthrough: list[bool] = field(default_factory=list)
    steps_per_year: int = 1

    def __post_init__(self):
        self.predictors = np.asarray(self.predictors, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.locals = np.asarray(self.locals, dtype=np.float64).reshape((-1,) + self.mask.shape[:3])
        n_p = self.predictors.shape[0]
        self.predictor_names = self.predictor_names or [f"predictor_{i}" for i in range(n_p)]
        self.local_names = self.local_names or [f"local_{j}" for j in range(self.locals.shape[0])]
        self.passthrough = list(self.passthrough) or [False] * self.locals.shape[0]
        if self.predictors.shape[1:] != self.mask.shape:
            raise DataError(f"predictor grid {self.predictors.shape[1:]} does not match mask {self.mask.shape}")
        if self.target.shape != self.mask.shape[:3]:
            raise DataError(f"target shape {self.target.shape} does not match grid {self.mask.shape[:3]}")
        if not self.mask.any(axis=-1).all():
            raise DataError("every column needs at least one valid pressure level")

    @property
    def n_times(self) -> int:
        return self.mask.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.predictors.shape[0]

    @property
    def n_locals(self) -> int:
        return self.locals.shape[0]

    @property
    def pressure_weights(self) -> np.ndarray:
        return cell_widths(self.pressure)

    def surface_index(self) -> np.ndarray:
        """Index of the deepest valid level per (t, x, y) column."""
        n_p = self.mask.shape[-1]
        return n_p - 1 - np.argmax(self.mask[..., ::-1], axis=-1)

    def column_fraction(self) -> np.ndarray:
        return effective_column_fraction(self.mask, self.pressure_weights)


# ----------------------------------------------------------------------------
# samples and splits

def sample_index(dataset: Dataset, times, halo: int) -> np.ndarray:
    """(n, 3) array of (t, ix, iy) for every interior cell at the given times."""
    nx, ny = dataset.mask.shape[1:3]
    ix = np.arange(halo, nx - halo)
    iy = np.arange(halo, ny - halo)
    t = np.asarray(times, dtype=np.int64)
    tt, xx, yy = np.meshgrid(t, ix, iy, indexing="ij")
    return np.stack([tt.ravel(), xx.ravel(), yy.ravel()], axis=1)


@dataclass
class Split:
    """Chronological partitions as half-open time-index ranges."""

    boundaries: dict[str, tuple[int, int]]
    window: int

    def times(self, part: str) -> np.ndarray:
        """Prediction times in ``part`` whose full temporal window stays inside it."""
        start, end = self.boundaries[part]
        return np.arange(start + self.window - 1, end)

    def to_json(self) -> dict:
        return {"boundaries": {k: list(v) for k, v in self.boundaries.items()}, "window": self.window}

    @classmethod
    def from_json(cls, obj) -> "Split":
        return cls({k: tuple(v) for k, v in obj["boundaries"].items()}, int(obj["window"]))


def chronological_split(n_times: int, fractions=(15, 3, 3), window: int = 7, steps_per_year: int = 1,
                        boundaries=None) -> Split:
    """Contiguous train/validation/test ranges over the time axis.

    ``fractions`` are relative sizes in whole years (``steps_per_year`` steps
    each); explicit ``boundaries`` (two interior time indices) override them.
    """
    if window < 1:
        raise SplitError("window must be at least 1")
    if boundaries is not None:
        b1, b2 = (int(b) for b in boundaries)
        if not 0 < b1 < b2 < n_times:
            raise SplitError(f"boundaries {boundaries} outside time range (0, {n_times})")
    else:
        f = np.asarray(fractions, dtype=np.float64)
        if f.shape != (3,) or np.any(f <= 0):
            raise SplitError(f"need three positive split fractions, got {fractions}")
        if n_times % steps_per_year:
            raise SplitError(f"{n_times} timesteps is not a whole number of {steps_per_year}-step years")
        n_years = n_times // steps_per_year
        years = np.floor(f / f.sum() * n_years + 0.5).astype(int)
        years[0] = n_years - years[1:].sum()
        if np.any(years <= 0):
            raise SplitError(f"split {fractions} of {n_years} years leaves an empty partition")
        b1 = years[0] * steps_per_year
        b2 = b1 + years[1] * steps_per_year
    split = Split({"train": (0, b1), "validation": (b1, b2), "test": (b2, n_times)}, window)
    for part in split.boundaries:
        if split.times(part).size == 0:
            raise SplitError(f"partition {part} is shorter than the {window}-step window")
    return split


# ----------------------------------------------------------------------------
# standardization

@dataclass
class Standardizer:
    predictor_mean: np.ndarray
    predictor_std: np.ndarray
    local_mean: np.ndarray
    local_std: np.ndarray
    passthrough: list[bool]
    target_mean: float
    target_std: float
    log1p_target: bool = True

    def transform_target(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.log1p_target:
            y = np.log1p(y)
        return (y - self.target_mean) / self.target_std

    def invert_target(self, z):
        y = np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean
        if self.log1p_target:
            y = np.maximum(np.expm1(y), 0.0)
        return y

    def apply(self, ds: Dataset) -> Dataset:
        """Standardized copy: masked predictor points are exactly zero."""
        pm = self.predictor_mean[:, None, None, None, None]
        ps = self.predictor_std[:, None, None, None, None]
        preds = np.where(ds.mask[None], (ds.predictors - pm) / ps, 0.0)
        loc = ds.locals.copy()
        for j, skip in enumerate(self.passthrough):
            if not skip:
                loc[j] = (loc[j] - self.local_mean[j]) / self.local_std[j]
        return replace(ds, predictors=preds, locals=loc, target=self.transform_target(ds.target))

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj) -> "Standardizer":
        obj = dict(obj)
        for k in ("predictor_mean", "predictor_std", "local_mean", "local_std"):
            obj[k] = np.asarray(obj[k], dtype=np.float64)
        return cls(**obj)


def _checked_std(values, name):
    std = float(np.std(values))
    if not std > 0 or not math.isfinite(std):
        raise StandardizerError(f"variable {name!r} has zero variance on the training split")
    return std


def fit_standardizer(ds: Dataset, split: Split, halo: int = 1, log1p_target: bool = True) -> Standardizer:
    """Means and standard deviations from the training partition only."""
    start, end = split.boundaries["train"]
    if end <= start:
        raise StandardizerError("training split is empty")
    mask = ds.mask[start:end]
    pm, ps = [], []
    for i, name in enumerate(ds.predictor_names):
        v = ds.predictors[i, start:end][mask]
        pm.append(float(np.mean(v)))
        ps.append(_checked_std(v, name))
    lm, ls = [], []
    for j, name in enumerate(ds.local_names):
        if ds.passthrough[j]:
            lm.append(0.0)
            ls.append(1.0)
            continue
        v = ds.locals[j, start:end]
        lm.append(float(np.mean(v)))
        ls.append(_checked_std(v, name))
    s = sample_index(ds, split.times("train"), halo)
    y = ds.target[s[:, 0], s[:, 1], s[:, 2]]
    if log1p_target:
        if np.any(y <= -1):
            raise StandardizerError("log1p target transform needs targets > -1")
        y = np.log1p(y)
    return Standardizer(np.array(pm), np.array(ps), np.array(lm), np.array(ls), list(ds.passthrough),
                        float(np.mean(y)), _checked_std(y, "target"), log1p_target)


# ----------------------------------------------------------------------------
# synthetic generation

def _default_planted():
    return [
        {"family": "gaussian", "dims": ["pressure"], "params": {"pressure": {"mu": 0.3, "sigma": 0.25}}},
        {"family": "gaussian", "dims": ["pressure"], "params": {"pressure": {"mu": -0.4, "sigma": 0.3}}},
        {"family": "exponential", "dims": ["pressure"], "params": {"pressure": {"tau0": 3.0, "alpha": 0.9}}},
    ]


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic dataset whose target is a known function of kernel features.

    The target at each interior cell is ``link(sum_i c_i * feature_i + sum_j d_j * local_j)``
    plus Gaussian noise, with features from the planted kernels applied to the
    latent (unit-variance, zero-filled) fields.
    """

    n_years: int = 21
    steps_per_year: int = 12
    n_x: int = 12
    n_y: int = 12
    pressure: list = field(default_factory=lambda: np.linspace(500.0, 1000.0, 16).tolist())
    dx: float = 1.0
    dt: float = 1.0
    predictor_names: list = field(default_factory=lambda: ["RH", "thetae", "thetae_sat"])
    planted: list = field(default_factory=_default_planted)
    coefficients: list = field(default_factory=lambda: [1.0, -0.6, 0.5])
    local_names: list = field(default_factory=lambda: ["shf", "lhf", "landfrac"])
    local_coefficients: list = field(default_factory=lambda: [0.3, 0.2, 0.0])
    passthrough: list = field(default_factory=lambda: [False, False, True])
    link: str = "identity"
    snr: float | None = 5.0
    noise_std: float = 0.0
    nonnegative: bool = False
    vertical_corr: float = 1.5
    temporal_corr: float = 0.5
    horizontal_corr: float = 0.7
    masked_fraction: float = 0.25
    min_valid_levels: int = 10
    offsets: list = field(default_factory=lambda: [70.0, 340.0, 350.0])
    scales: list = field(default_factory=lambda: [15.0, 8.0, 6.0])
    planted_window: int = 7
    planted_halo: int = 1
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown synthetic spec keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class GeneratedData:
    dataset: Dataset
    planted: list[KernelSpec]
    planted_weights: list[np.ndarray]
    planted_grid: Grid
    latent: np.ndarray


def _smooth_field(rng, shape, spec: SyntheticSpec) -> np.ndarray:
    """Unit-variance noise correlated along pressure, horizontally, and AR(1) in time."""
    e = rng.standard_normal(shape)
    if spec.vertical_corr > 0 and shape[-1] > 1:
        e = gaussian_filter1d(e, spec.vertical_corr, axis=-1, mode="nearest")
    if spec.horizontal_corr > 0:
        e = gaussian_filter1d(e, spec.horizontal_corr, axis=1, mode="wrap")
        e = gaussian_filter1d(e, spec.horizontal_corr, axis=2, mode="wrap")
    a = spec.temporal_corr
    if a > 0:
        out = np.empty_like(e)
        out[0] = e[0]
        c = math.sqrt(1.0 - a * a)
        for t in range(1, shape[0]):
            out[t] = a * out[t - 1] + c * e[t]
        e = out
    return e / np.std(e)


def planted_grid(spec: SyntheticSpec, pressure_axis: Axis) -> Grid:
    """Grid spanning the union of the planted kernels' dims."""
    dims = {d for k in spec.planted for d in k["dims"]}
    h = spec.planted_halo if "horizontal" in dims else 0
    w = spec.planted_window if "time" in dims else 1
    off = np.arange(-h, h + 1) * spec.dx
    return Grid((
        Axis("horizontal-x", off),
        Axis("horizontal-y", off),
        pressure_axis if "pressure" in dims else Axis("pressure", pressure_axis.values[-1:]),
        Axis("time", np.arange(-(w - 1), 1) * spec.dt),
    ))


def extract_windows(values: np.ndarray, mask: np.ndarray, samples: np.ndarray, halo: int, window: int,
                    full_column: bool, surface: np.ndarray | None = None):
    """Gather (S, X, Y, P, T) windows around each (t, ix, iy) sample.

    ``values`` is (T, X, Y, P). With ``full_column=False`` each column is
    reduced to its deepest valid level (``surface`` index per (t, x, y)).
    """
    t, ix, iy = samples[:, 0], samples[:, 1], samples[:, 2]
    off = np.arange(-halo, halo + 1)
    toff = np.arange(-(window - 1), 1)
    T = (t[:, None, None, None] + toff[None, None, None, :])
    X = (ix[:, None, None, None] + off[None, :, None, None])
    Y = (iy[:, None, None, None] + off[None, None, :, None])
    if full_column:
        v = values[T, X, Y]  # (S, X, Y, T, P)
        m = mask[T, X, Y]
        return np.moveaxis(v, 3, 4), np.moveaxis(m, 3, 4)
    p0 = surface[T, X, Y]
    v = values[T, X, Y, p0][..., None, :]  # (S, X, Y, 1, T)
    m = mask[T, X, Y, p0][..., None, :]
    return v, m


def generate(spec: SyntheticSpec) -> GeneratedData:
    """Fields, local inputs and targets with the planted kernels used to make them."""
    if spec.n_x < 2 * spec.planted_halo + 1 or spec.n_y < 2 * spec.planted_halo + 1:
        raise DataError("horizontal grid smaller than the planted neighbourhood")
    n_p = len(spec.pressure)
    n_t = spec.n_years * spec.steps_per_year
    if n_p < 1 or n_t < spec.planted_window:
        raise DataError("degenerate grid")
    n_pred = len(spec.predictor_names)
    if not (len(spec.planted) == len(spec.coefficients) == len(spec.offsets) == len(spec.scales) == n_pred):
        raise DataError("planted kernels, coefficients, offsets and scales need one entry per predictor")
    if not len(spec.local_coefficients) == len(spec.passthrough) == len(spec.local_names):
        raise DataError("local coefficients and pass-through flags need one entry per local")
    if spec.link not in LINKS:
        raise DataError(f"unknown link {spec.link!r}")

    rng = np.random.default_rng(spec.seed)
    shape = (n_t, spec.n_x, spec.n_y, n_p)

    mask = np.ones(shape[1:], dtype=bool)
    cut_cols = rng.random(shape[1:3]) < spec.masked_fraction
    lo = max(spec.min_valid_levels, 1)
    if lo >= n_p:
        # too few levels to cut any column while keeping min_valid_levels
        cut_cols[...] = False
        lo = n_p - 1
    cutoffs = rng.integers(lo, n_p, size=shape[1:3]) if n_p > 1 else np.ones(shape[1:3], dtype=int)
    levels = np.arange(n_p)
    mask &= ~(cut_cols[..., None] & (levels >= cutoffs[..., None]))
    mask = np.broadcast_to(mask, shape).copy()

    latent = np.stack([_smooth_field(rng, shape, spec) for _ in range(n_pred)])
    latent_filled = np.where(mask[None], latent, 0.0)

    n_loc = len(spec.local_names)
    locals_ = np.empty((n_loc,) + shape[:3])
    for j in range(n_loc):
        if spec.passthrough[j]:
            locals_[j] = np.broadcast_to(rng.random(shape[1:3]), shape[:3])
        else:
            locals_[j] = _smooth_field(rng, shape[:3] + (1,), replace(spec, vertical_corr=0.0))[..., 0]

    pressure_axis = Axis("pressure", np.asarray(spec.pressure, dtype=np.float64))
    pgrid = planted_grid(spec, pressure_axis)
    kspecs, kweights = [], []
    for i, k in enumerate(spec.planted):
        ks = KernelSpec(k["family"], tuple(k["dims"]), predictor_id=i, params=k.get("params"))
        kspecs.append(ks)
        kweights.append(Kernel.create(ks, pgrid).weights().normalized.copy())

    dims = {d for k in spec.planted for d in k["dims"]}
    halo = spec.planted_halo if "horizontal" in dims else 0
    window = spec.planted_window if "time" in dims else 1
    ds_probe = Dataset(latent_filled, mask, locals_, np.zeros(shape[:3]), pressure_axis.values,
                       np.arange(n_t) * spec.dt, np.arange(spec.n_x) * spec.dx, np.arange(spec.n_y) * spec.dx)
    samples = sample_index(ds_probe, np.arange(window - 1, n_t), halo)
    q = pgrid.weight_tensor()
    signal = np.zeros(len(samples))
    surface = ds_probe.surface_index()
    for i in range(n_pred):
        v, m = extract_windows(latent_filled[i], mask, samples, halo, window, "pressure" in dims, surface)
        signal += spec.coefficients[i] * integrate_feature(FieldTensor(v, m), kweights[i], q)
    t, ix, iy = samples.T
    for j in range(n_loc):
        signal += spec.local_coefficients[j] * locals_[j, t, ix, iy]
    clean = LINKS[spec.link](signal)
    noise_std = spec.noise_std
    if spec.snr:
        noise_std = float(np.std(clean)) / spec.snr
    y = clean + noise_std * rng.standard_normal(clean.shape)
    if spec.nonnegative:
        y = np.maximum(y, 0.0)
    target = np.full(shape[:3], np.nan)
    target[t, ix, iy] = y

    offsets = np.asarray(spec.offsets)[:, None, None, None, None]
    scales = np.asarray(spec.scales)[:, None, None, None, None]
    fields = offsets + scales * latent
    ds = Dataset(fields, mask, locals_, target, pressure_axis.values, ds_probe.times, ds_probe.x, ds_probe.y,
                 list(spec.predictor_names), list(spec.local_names), list(spec.passthrough), spec.steps_per_year)
    return GeneratedData(ds, kspecs, kweights, pgrid, latent)


# ----------------------------------------------------------------------------
# on-disk datasets

def save_dataset(directory, ds: Dataset, extra: dict | None = None) -> Path:
    """Write one tensor file per variable plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    coords = {"time": ds.times, "x": ds.x, "y": ds.y, "pressure": ds.pressure}
    tensors = []
    for i, name in enumerate(ds.predictor_names):
        path = f"predictor_{i}.ikt"
        write_tensor(d / path, ds.predictors[i], ["time", "x", "y", "pressure"], coords, ds.mask)
        tensors.append({"name": name, "role": "predictor", "path": path})
    for j, name in enumerate(ds.local_names):
        path = f"local_{j}.ikt"
        write_tensor(d / path, ds.locals[j], ["time", "x", "y"], coords)
        tensors.append({"name": name, "role": "local", "path": path, "passthrough": bool(ds.passthrough[j])})
    write_tensor(d / "target.ikt", ds.target, ["time", "x", "y"], coords)
    tensors.append({"name": "target", "role": "target", "path": "target.ikt"})
    manifest = {"format": "intkernels-dataset", "version": 1, "steps_per_year": ds.steps_per_year,
                "tensors": tensors, **(extra or {})}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d / "manifest.json"


def load_dataset(directory) -> tuple[Dataset, dict]:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != "intkernels-dataset":
        raise DataError(f"{d}: not a dataset manifest")
    preds, pnames, locs, lnames, passthrough = [], [], [], [], []
    mask = target = coords = None
    for entry in manifest["tensors"]:
        t = read_tensor(d / entry["path"])
        if entry["role"] == "predictor":
            preds.append(t.data.astype(np.float64))
            pnames.append(entry["name"])
            mask = t.mask if mask is None else mask
            coords = t.coords
        elif entry["role"] == "local":
            locs.append(t.data.astype(np.float64))
            lnames.append(entry["name"])
            passthrough.append(bool(entry.get("passthrough", False)))
        elif entry["role"] == "target":
            target = t.data.astype(np.float64)
        else:
            raise DataError(f"unknown tensor role {entry['role']!r}")
    if mask is None or target is None:
        raise DataError(f"{d}: dataset needs at least one predictor and a target")
    ds = Dataset(np.stack(preds), mask, np.stack(locs) if locs else np.zeros((0,) + target.shape), target,
                 coords["pressure"], coords["time"], coords["x"], coords["y"], pnames, lnames, passthrough,
                 int(manifest.get("steps_per_year", 1)))
    return ds, manifest
