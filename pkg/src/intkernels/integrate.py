"""Kernel-integrated features: the masked quadrature sum over a field window."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelWeights


class IntegrationError(ValueError):
    pass


@dataclass
class FieldTensor:
    """Standardized predictor values over (sample, x, y, pressure, time).

    Masked entries are zeroed on construction, so they drop out of every sum.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    predictor_id: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 5:
            raise IntegrationError(f"field values must be 5-D (sample, x, y, p, t), got {values.shape}")
        if self.mask is not None:
            mask = np.asarray(self.mask)
            if mask.shape != values.shape:
                raise IntegrationError(f"mask shape {mask.shape} does not match field {values.shape}")
            mask = mask.astype(bool)
            values = np.where(mask, values, 0.0)
            self.mask = mask
        self.values = values

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureVector:
    values: np.ndarray  # (samples, features)
    names: list[str] = field(default_factory=list)

    def __len__(self):
        return self.values.shape[1]


def _normalized(kernel) -> np.ndarray:
    return kernel.normalized if isinstance(kernel, KernelWeights) else np.asarray(kernel, dtype=np.float64)


def integrate_feature(field: FieldTensor, kernel, quadrature: np.ndarray) -> np.ndarray:
    """Sum of kernel * field * quadrature over every unmasked grid point, per sample."""
    k = _normalized(kernel)
    q = np.asarray(quadrature, dtype=np.float64)
    grid_shape = field.values.shape[1:]
    if k.shape != grid_shape or q.shape != grid_shape:
        raise IntegrationError(f"kernel {k.shape} / quadrature {q.shape} do not match field grid {grid_shape}")
    flat = field.values.reshape(field.n_samples, -1)
    # row-wise reduction: each sample's sum is independent of batch size and order
    return np.sum(flat * (k * q).ravel(), axis=1)


def kernel_grad(field: FieldTensor, grad_feature: np.ndarray, quadrature: np.ndarray) -> np.ndarray:
    """d loss / d normalized kernel, given d loss / d feature per sample."""
    flat = field.values.reshape(field.n_samples, -1)
    return (grad_feature @ flat).reshape(field.values.shape[1:]) * quadrature


def assemble_features(fields: list[FieldTensor], kernels: list[list], locals_: np.ndarray | None,
                      quadrature: np.ndarray, column_fraction: np.ndarray | None = None,
                      local_names: list[str] | None = None) -> FeatureVector:
    """Concatenate kernel features (by predictor, then kernel index), local inputs, column fraction."""
    if len(kernels) != len(fields):
        raise IntegrationError(f"{len(kernels)} kernel lists for {len(fields)} predictors")
    counts = {f.n_samples for f in fields}
    if locals_ is not None:
        locals_ = np.asarray(locals_, dtype=np.float64)
        if locals_.ndim == 1:
            locals_ = locals_[:, None]
        counts.add(locals_.shape[0])
    if column_fraction is not None:
        column_fraction = np.asarray(column_fraction, dtype=np.float64)
        if column_fraction.ndim == 1:
            column_fraction = column_fraction[:, None]
        counts.add(column_fraction.shape[0])
    if len(counts) > 1:
        raise IntegrationError(f"inconsistent sample counts {sorted(counts)}")
    if not counts:
        raise IntegrationError("nothing to assemble")
    n = counts.pop()

    cols, names = [], []
    for i, (f, ks) in enumerate(zip(fields, kernels)):
        for ell, k in enumerate(ks):
            cols.append(integrate_feature(f, k, quadrature)[:, None])
            names.append(f"kernel[{i},{ell}]")
    if locals_ is not None:
        cols.append(locals_)
        names += local_names or [f"local[{j}]" for j in range(locals_.shape[1])]
    if column_fraction is not None:
        cols.append(column_fraction)
        names += ["column_fraction"] if column_fraction.shape[1] == 1 else \
            [f"mask[{j}]" for j in range(column_fraction.shape[1])]
    values = np.concatenate(cols, axis=1) if cols else np.zeros((n, 0))
    return FeatureVector(values, names)
