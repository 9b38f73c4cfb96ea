"""Discrete coordinate axes, quadrature weights and normalized kernel coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXIS_NAMES = ("horizontal-x", "horizontal-y", "pressure", "time")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    """One integration coordinate.

    ``values`` are physical coordinates: degrees for horizontal axes, hPa for
    pressure (increasing toward the surface) and hours for time (increasing
    toward the prediction time).
    """

    name: str
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise GridError(f"unknown axis name {self.name!r}")
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1 or values.size < 1:
            raise GridError(f"axis {self.name} needs at least one coordinate")
        if values.size > 1 and not np.all(np.diff(values) > 0):
            raise GridError(f"axis {self.name} values must be strictly increasing")
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
            if w.shape != values.shape:
                raise GridError(f"axis {self.name}: {w.size} weights for {values.size} points")
            if not np.all(w > 0):
                raise GridError(f"axis {self.name}: quadrature weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def count(self) -> int:
        return int(self.values.size)

    def to_json(self) -> dict:
        out = {"name": self.name, "values": self.values.tolist()}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Axis":
        return cls(obj["name"], np.asarray(obj["values"]), obj.get("weights"))


def cell_widths(values: np.ndarray) -> np.ndarray:
    """Rectangle-rule widths: each point owns the span between its neighbour midpoints.

    End cells are mirrored so a uniform axis gets exactly equal widths. A single
    point gets width 1 (one window unit).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 1:
        return np.ones(1)
    gaps = np.diff(values)
    if np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        return np.full(values.size, gaps[0])
    left = np.concatenate([[gaps[0]], gaps])
    right = np.concatenate([gaps, [gaps[-1]]])
    return 0.5 * (left + right)


def normalize_coords(values: np.ndarray) -> np.ndarray:
    """Affine map of an increasing axis onto [-1, 1]; one-point axes map to 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 1:
        return np.zeros(1)
    lo, hi = values[0], values[-1]
    s = 2.0 * (values - lo) / (hi - lo) - 1.0
    s[0], s[-1] = -1.0, 1.0
    return s


@dataclass(frozen=True)
class Quadrature:
    weights: dict[str, np.ndarray]

    def tensor(self, names) -> np.ndarray:
        """Outer product of per-axis weights over ``names`` (in that order)."""
        out = np.ones(())
        for name in names:
            out = np.multiply.outer(out, self.weights[name])
        return out


@dataclass(frozen=True)
class NormalizedCoords:
    coords: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.coords[name]


def build_grid(axes: list[Axis], spacing_mode: str = "uniform") -> tuple[Quadrature, NormalizedCoords]:
    """Quadrature weights and [-1, 1] coordinates for each axis.

    ``spacing_mode="uniform"`` derives rectangle-rule cell widths from the
    coordinates; ``"explicit"`` takes the per-point weights carried by each axis.
    """
    if not axes:
        raise GridError("build_grid needs at least one axis")
    if spacing_mode not in ("uniform", "explicit"):
        raise GridError(f"unknown spacing mode {spacing_mode!r}")
    weights, coords = {}, {}
    for axis in axes:
        if axis.name in weights:
            raise GridError(f"duplicate axis {axis.name}")
        if spacing_mode == "explicit":
            if axis.weights is None:
                raise GridError(f"explicit spacing requires weights on axis {axis.name}")
            weights[axis.name] = axis.weights
        else:
            weights[axis.name] = cell_widths(axis.values)
        coords[axis.name] = normalize_coords(axis.values)
    return Quadrature(weights), NormalizedCoords(coords)


@dataclass(frozen=True)
class Grid:
    """The four-axis integration grid of one nonlocal domain.

    Axis order is fixed to (horizontal-x, horizontal-y, pressure, time) so every
    kernel and field window shares the same trailing layout.
    """

    axes: tuple[Axis, ...]
    spacing_mode: str = "uniform"
    quadrature: Quadrature = field(init=False)
    normalized: NormalizedCoords = field(init=False)

    def __post_init__(self):
        names = tuple(a.name for a in self.axes)
        if names != AXIS_NAMES:
            raise GridError(f"grid axes must be {AXIS_NAMES}, got {names}")
        q, c = build_grid(list(self.axes), self.spacing_mode)
        object.__setattr__(self, "quadrature", q)
        object.__setattr__(self, "normalized", c)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    def axis(self, name: str) -> Axis:
        return self.axes[AXIS_NAMES.index(name)]

    def weight_tensor(self) -> np.ndarray:
        """Full ΔA·Δp·Δt tensor of shape ``self.shape``."""
        return self.quadrature.tensor(AXIS_NAMES)

    def to_json(self) -> dict:
        return {"spacing_mode": self.spacing_mode, "axes": [a.to_json() for a in self.axes]}

    @classmethod
    def from_json(cls, obj: dict) -> "Grid":
        return cls(tuple(Axis.from_json(a) for a in obj["axes"]), obj.get("spacing_mode", "uniform"))


def effective_column_fraction(mask: np.ndarray, pressure_weights: np.ndarray) -> np.ndarray:
    """Fraction of the column's pressure thickness that is valid.

    ``mask`` has pressure as its last axis; the result drops that axis.
    """
    mask = np.asarray(mask)
    dp = np.asarray(pressure_weights, dtype=np.float64)
    if mask.shape[-1:] != dp.shape:
        raise GridError(f"mask pressure length {mask.shape[-1:]} does not match weights {dp.shape}")
    return (mask.astype(np.float64) @ dp) / dp.sum()
