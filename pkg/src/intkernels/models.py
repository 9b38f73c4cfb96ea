"""Model hierarchy: baseline, nonparametric-kernel and parametric-kernel models.

All three levels feed the same downstream network; they differ only in how
the nonlocal predictor window is reduced to network inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, extract_windows, sample_index
from .grid import Axis, Grid
from .integrate import FieldTensor, assemble_features, integrate_feature, kernel_grad
from .kernels import FAMILIES, Kernel, KernelError, KernelSpec
from .nn import HIDDEN_WIDTHS, Network, count_network_params, mse_grad, seed_streams

LEVELS = ("baseline", "nonparametric", "parametric")
MASK_SUMMARIES = ("fraction", "full", "none")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class NonlocalDomain:
    """Context available per dimension: ``horizontal`` is the odd neighbourhood
    width (1 = local), ``vertical`` the full column vs the deepest valid level,
    ``temporal`` the causal window length (1 = current step only)."""

    horizontal: int = 1
    vertical: bool = False
    temporal: int = 1

    def __post_init__(self):
        if self.horizontal < 1 or self.horizontal % 2 == 0:
            raise ModelError(f"horizontal neighbourhood must be odd and positive, got {self.horizontal}")
        if self.temporal < 1:
            raise ModelError(f"temporal window must be positive, got {self.temporal}")

    @property
    def halo(self) -> int:
        return (self.horizontal - 1) // 2

    @property
    def nonlocal_dims(self) -> tuple[str, ...]:
        dims = []
        if self.horizontal > 1:
            dims.append("horizontal")
        if self.vertical:
            dims.append("pressure")
        if self.temporal > 1:
            dims.append("time")
        return tuple(dims)

    @property
    def label(self) -> str:
        return "({},{},{})".format("x" if self.horizontal > 1 else "x0", "p" if self.vertical else "p0",
                                   "t" if self.temporal > 1 else "t0")

    def grid(self, pressure: np.ndarray, dx: float = 1.0, dt: float = 1.0) -> Grid:
        off = np.arange(-self.halo, self.halo + 1) * dx
        p = np.asarray(pressure, dtype=np.float64)
        return Grid((
            Axis("horizontal-x", off),
            Axis("horizontal-y", off),
            Axis("pressure", p if self.vertical else p[-1:]),
            Axis("time", np.arange(-(self.temporal - 1), 1) * dt),
        ))

    def to_json(self) -> dict:
        return {"horizontal": self.horizontal, "vertical": self.vertical, "temporal": self.temporal}


@dataclass
class ModelVariant:
    level: str
    domain: NonlocalDomain
    families: list[str] | str | None = None  # one per predictor for parametric models
    n_kernels: int = 1
    name: str = ""
    init_params: list | None = None  # optional per-predictor constrained params

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ModelError(f"unknown model level {self.level!r}")
        if self.level != "baseline" and not self.domain.nonlocal_dims:
            raise ModelError("kernel models need at least one nonlocal dimension")
        if self.n_kernels < 1:
            raise ModelError("need at least one kernel per predictor")
        if not self.name:
            self.name = default_variant_name(self)

    def family_for(self, i: int) -> str:
        if self.level == "nonparametric":
            return "nonparametric"
        fams = self.families
        fam = fams if isinstance(fams, str) else (fams[i] if fams else None)
        if fam not in FAMILIES or fam == "nonparametric":
            raise ModelError(f"parametric variant needs a parametric family for predictor {i}, got {fam!r}")
        return fam

    def to_json(self) -> dict:
        out = {"level": self.level, "domain": self.domain.to_json(), "n_kernels": self.n_kernels, "name": self.name}
        if self.families is not None:
            out["families"] = self.families
        if self.init_params is not None:
            out["init_params"] = self.init_params
        return out

    @classmethod
    def from_json(cls, obj) -> "ModelVariant":
        return cls(obj["level"], NonlocalDomain(**obj.get("domain", {})), obj.get("families"),
                   int(obj.get("n_kernels", 1)), obj.get("name", ""), obj.get("init_params"))


_FAMILY_TAGS = {"gaussian": "G", "mixture": "MG", "tophat": "TH", "exponential": "EXP"}


def default_variant_name(v: ModelVariant) -> str:
    if v.level == "baseline":
        return v.domain.label
    if v.level == "nonparametric":
        tag = "k"
    elif isinstance(v.families, str):
        tag = _FAMILY_TAGS.get(v.families, v.families)
    elif v.families and len(set(v.families)) == 1:
        tag = _FAMILY_TAGS.get(v.families[0], v.families[0])
    else:
        tag = "MIX"
    return f"{v.domain.label}^{tag}"


# ----------------------------------------------------------------------------
# inputs

@dataclass
class Batch:
    fields: list[FieldTensor]
    locals: np.ndarray
    mask_summary: np.ndarray | None
    samples: np.ndarray

    def __len__(self):
        return len(self.samples)


class SampleSet:
    """Samples of one split of a standardized dataset, windowed for one domain."""

    def __init__(self, dataset: Dataset, samples: np.ndarray, domain: NonlocalDomain,
                 mask_summary: str = "fraction"):
        if mask_summary not in MASK_SUMMARIES:
            raise ModelError(f"unknown mask summary {mask_summary!r}")
        self.dataset = dataset
        self.samples = np.asarray(samples, dtype=np.int64)
        self.domain = domain
        self.mask_summary = mask_summary
        self._surface = dataset.surface_index()
        self._fraction = dataset.column_fraction()

    def __len__(self):
        return len(self.samples)

    def batch(self, idx) -> Batch:
        s = self.samples[idx]
        ds, dom = self.dataset, self.domain
        fields = []
        for i in range(ds.n_predictors):
            v, m = extract_windows(ds.predictors[i], ds.mask, s, dom.halo, dom.temporal, dom.vertical,
                                   self._surface)
            fields.append(FieldTensor(v, m, predictor_id=i))
        t, ix, iy = s.T
        loc = ds.locals[:, t, ix, iy].T
        if self.mask_summary == "fraction":
            summary = self._fraction[t, ix, iy][:, None]
        elif self.mask_summary == "full":
            summary = ds.mask[t, ix, iy].astype(np.float64)
        else:
            summary = None
        return Batch(fields, loc, summary, s)

    def targets(self, idx) -> np.ndarray:
        s = self.samples[idx]
        return self.dataset.target[s[:, 0], s[:, 1], s[:, 2]]

    def take(self, idx):
        return self.batch(idx), self.targets(idx)

    @classmethod
    def from_split(cls, dataset: Dataset, split, part: str, domain: NonlocalDomain, halo: int | None = None,
                   mask_summary: str = "fraction") -> "SampleSet":
        """All interior cells at the partition's prediction times.

        ``halo`` defaults to the domain's own; pass the largest halo of a
        comparison so every model sees the same prediction points.
        """
        h = domain.halo if halo is None else halo
        if h < domain.halo:
            raise ModelError("sample halo smaller than the domain's neighbourhood")
        return cls(dataset, sample_index(dataset, split.times(part), h), domain, mask_summary)


def mask_summary_width(mask_summary: str, n_levels: int) -> int:
    return {"fraction": 1, "full": n_levels, "none": 0}[mask_summary]


# ----------------------------------------------------------------------------
# models

class HierarchyModel:
    """A baseline or kernel model over one nonlocal domain.

    ``params`` maps names to the trainable arrays: ``net.W0``... for the
    network and ``kernel.<i>.<l>.<key>`` for kernel parameters. Kernels can be
    frozen, in which case they are excluded from ``params``.
    """

    def __init__(self, variant: ModelVariant, grid: Grid, n_predictors: int, n_locals: int, seed: int = 42,
                 mask_summary: str = "fraction", n_levels: int = 16, hidden=HIDDEN_WIDTHS, dropout: float = 0.1,
                 freeze_kernels: bool = False, kernel_init_scale: float = 0.01):
        self.variant = variant
        self.grid = grid
        self.n_predictors = n_predictors
        self.n_locals = n_locals
        self.mask_summary = mask_summary
        self.n_levels = n_levels
        self.freeze_kernels = freeze_kernels
        self.quadrature = grid.weight_tensor()
        if grid.shape != variant.domain.grid(grid.axis("pressure").values).shape:
            raise ModelError(f"grid shape {grid.shape} inconsistent with domain {variant.domain.label}")
        streams = seed_streams(seed)
        self.kernels: list[list[Kernel]] = []
        if variant.level != "baseline":
            for i in range(n_predictors):
                row = []
                for ell in range(variant.n_kernels):
                    init = (variant.init_params or [None] * n_predictors)[i]
                    spec = KernelSpec(variant.family_for(i), variant.domain.nonlocal_dims, i, ell, init)
                    row.append(Kernel.create(spec, grid, streams["kernel"], kernel_init_scale))
                self.kernels.append(row)
        self.net = Network(self.input_width, hidden, dropout, streams["init"])
        self.params: dict[str, np.ndarray] = {f"net.{k}": v for k, v in self.net.params.items()}
        if not freeze_kernels:
            self.params.update(self.kernel_params())

    def kernel_params(self) -> dict[str, np.ndarray]:
        return {f"kernel.{i}.{ell}.{key}": v
                for i, row in enumerate(self.kernels) for ell, k in enumerate(row) for key, v in k.theta.items()}

    def all_params(self) -> dict[str, np.ndarray]:
        out = {f"net.{k}": v for k, v in self.net.params.items()}
        out.update(self.kernel_params())
        return out

    @property
    def points_per_predictor(self) -> int:
        return int(np.prod(self.grid.shape))

    @property
    def input_width(self) -> int:
        extra = self.n_locals + mask_summary_width(self.mask_summary, self.n_levels)
        if self.variant.level == "baseline":
            return self.n_predictors * self.points_per_predictor + extra
        return self.n_predictors * self.variant.n_kernels + extra

    def input_names(self) -> list[str]:
        names = []
        if self.variant.level == "baseline":
            X, Y, P, T = self.grid.shape
            for i in range(self.n_predictors):
                names += [f"field[{i},t{t},p{p},x{x},y{y}]"
                          for t in range(T) for p in range(P) for x in range(X) for y in range(Y)]
        else:
            names += [f"kernel[{i},{ell}]" for i in range(self.n_predictors) for ell in range(self.variant.n_kernels)]
        names += [f"local[{j}]" for j in range(self.n_locals)]
        w = mask_summary_width(self.mask_summary, self.n_levels)
        names += ["column_fraction"] if self.mask_summary == "fraction" else [f"mask[{j}]" for j in range(w)]
        return names

    # -- forward ------------------------------------------------------------

    def _extras(self, batch: Batch) -> list[np.ndarray]:
        out = [np.asarray(batch.locals, dtype=np.float64).reshape(len(batch), -1)]
        if self.mask_summary != "none":
            out.append(batch.mask_summary)
        return out

    def flatten(self, batch: Batch) -> np.ndarray:
        """Baseline inputs: each predictor window in (time, pressure, x, y) order, then extras."""
        cols = [np.transpose(f.values, (0, 4, 3, 1, 2)).reshape(len(batch), -1) for f in batch.fields]
        return np.concatenate(cols + self._extras(batch), axis=1)

    def features(self, batch: Batch):
        """Network inputs and, for kernel models, the normalized kernels used."""
        if self.variant.level == "baseline":
            return self.flatten(batch), None
        forwards = [[k.forward() for k in row] for row in self.kernels]
        locals_ = batch.locals
        fv = assemble_features(batch.fields, [[kw for kw, _ in row] for row in forwards], locals_,
                               self.quadrature, batch.mask_summary if self.mask_summary != "none" else None)
        return fv.values, forwards

    def predict(self, batch: Batch) -> np.ndarray:
        x, _ = self.features(batch)
        return self.net.predict(x)

    def loss_and_grad(self, batch: Batch, targets: np.ndarray, rng=None):
        """Batch-mean squared error and gradients for every trainable parameter."""
        x, forwards = self.features(batch)
        pred, cache = self.net.forward(x, train=rng is not None, rng=rng)
        loss, g_pred = mse_grad(pred, np.asarray(targets, dtype=np.float64))
        g_net, g_x = self.net.backward(cache, g_pred)
        grads = {f"net.{k}": v for k, v in g_net.items()}
        if forwards is not None and not self.freeze_kernels:
            L = self.variant.n_kernels
            for i, row in enumerate(self.kernels):
                for ell, k in enumerate(row):
                    kw, comps = forwards[i][ell]
                    gk = kernel_grad(batch.fields[i], g_x[:, i * L + ell], self.quadrature)
                    for key, g in k.vjp(kw, comps, gk).items():
                        grads[f"kernel.{i}.{ell}.{key}"] = g
        return loss, grads

    def kernel_features(self, batch: Batch) -> np.ndarray:
        out = []
        for i, row in enumerate(self.kernels):
            for k in row:
                out.append(integrate_feature(batch.fields[i], k.weights(), self.quadrature))
        return np.stack(out, axis=1) if out else np.zeros((len(batch), 0))


def build_model(variant: ModelVariant, dataset_or_pressure, n_predictors: int | None = None,
                n_locals: int | None = None, seed: int = 42, **kwargs) -> HierarchyModel:
    """Model for ``variant`` on the grid implied by its domain and the dataset's pressure levels."""
    if isinstance(dataset_or_pressure, Dataset):
        ds = dataset_or_pressure
        pressure = ds.pressure
        n_predictors = ds.n_predictors if n_predictors is None else n_predictors
        n_locals = ds.n_locals if n_locals is None else n_locals
        dx = float(ds.x[1] - ds.x[0]) if len(ds.x) > 1 else 1.0
        dt = float(ds.times[1] - ds.times[0]) if len(ds.times) > 1 else 1.0
    else:
        pressure = np.asarray(dataset_or_pressure, dtype=np.float64)
        dx = dt = 1.0
    if n_predictors is None or n_locals is None:
        raise ModelError("need predictor and local counts")
    grid = variant.domain.grid(pressure, dx, dt)
    try:
        return HierarchyModel(variant, grid, n_predictors, n_locals, seed, n_levels=len(pressure), **kwargs)
    except KernelError as exc:
        raise ModelError(str(exc)) from exc


def parameter_count(variant: ModelVariant, n_levels: int = 16, n_predictors: int = 3, n_locals: int = 3,
                    mask_summary: str = "fraction", hidden=HIDDEN_WIDTHS) -> dict[str, int]:
    """Exact trainable-parameter counts for the network and the kernels."""
    pressure = np.linspace(500.0, 1000.0, n_levels)
    grid = variant.domain.grid(pressure)
    extra = n_locals + mask_summary_width(mask_summary, n_levels)
    kernel = 0
    if variant.level == "baseline":
        width = n_predictors * int(np.prod(grid.shape)) + extra
    else:
        width = n_predictors * variant.n_kernels + extra
        for i in range(n_predictors):
            spec = KernelSpec(variant.family_for(i), variant.domain.nonlocal_dims, i)
            kernel += variant.n_kernels * Kernel.create(spec, grid).n_params
    network = count_network_params(width, hidden)
    return {"network": network, "kernel": kernel, "total": network + kernel, "input_width": width}
