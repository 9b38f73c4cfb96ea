"""Kernel families, their discretization on normalized coordinates, and normalization.

Every parametric family is evaluated per integration dimension and multi-dim
kernels are separable products of the per-dim components. Learnable
parameters live in an unconstrained space and are mapped to their admissible
ranges by smooth bounded maps, so Adam can update them freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid

FAMILIES = ("nonparametric", "gaussian", "mixture", "tophat", "exponential")
DIMS = ("horizontal", "pressure", "time")
# grid axes owned by each kernel dimension
DIM_AXES = {"horizontal": (0, 1), "pressure": (2,), "time": (3,)}

STABILITY = 1e-8
GUARD = 1e-8
TOPHAT_EPS = 0.02
TOPHAT_MAX_WIDTH = 1.5
MIX_SIGMA_BOUNDS = (0.1, 2.0)
TAU_BOUNDS = (1e-4, 100.0)


class KernelError(ValueError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _logit(p):
    return math.log(p / (1.0 - p))


# ----------------------------------------------------------------------------
# bounded reparameterizations: value(raw), d value / d raw, raw(value)

def _bounded(lo, hi):
    def fwd(r):
        sg = _sigmoid(r)
        return lo + (hi - lo) * sg, (hi - lo) * sg * (1.0 - sg)

    def inv(v):
        if not lo < v < hi:
            raise KernelError(f"value {v} outside open interval ({lo}, {hi})")
        return _logit((v - lo) / (hi - lo))

    return fwd, inv


def _log_bounded(lo, hi):
    llo, lhi = math.log(lo), math.log(hi)

    def fwd(r):
        sg = _sigmoid(r)
        v = np.exp(llo + (lhi - llo) * sg)
        return v, v * (lhi - llo) * sg * (1.0 - sg)

    def inv(v):
        if not lo < v < hi:
            raise KernelError(f"value {v} outside open interval ({lo}, {hi})")
        return _logit((math.log(v) - llo) / (lhi - llo))

    return fwd, inv


def _positive_fwd(r):
    v = np.exp(r)
    return v, v


mix_sigma_map, mix_sigma_inv = _bounded(*MIX_SIGMA_BOUNDS)
tau_map, tau_inv = _log_bounded(*TAU_BOUNDS)
alpha_map, alpha_inv = _bounded(0.0, 1.0)


# ----------------------------------------------------------------------------
# constrained parameter records

@dataclass
class GaussianParams:
    mu: float | np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise KernelError(f"gaussian width must be positive, got {self.sigma}")


@dataclass
class MixtureParams:
    w1: float
    mu1: float | np.ndarray
    sigma1: float
    w2: float
    mu2: float | np.ndarray
    sigma2: float

    def clamped(self) -> "MixtureParams":
        lo, hi = MIX_SIGMA_BOUNDS
        return MixtureParams(self.w1, self.mu1, float(np.clip(self.sigma1, lo, hi)),
                             self.w2, self.mu2, float(np.clip(self.sigma2, lo, hi)))


@dataclass
class TopHatParams:
    lower: float | np.ndarray
    upper: float | np.ndarray
    eps: float = TOPHAT_EPS

    @property
    def a(self):
        return np.minimum(self.lower, self.upper)

    @property
    def width(self):
        return np.abs(np.asarray(self.upper) - np.asarray(self.lower))

    @property
    def soft_width(self):
        return soft_clamp_width(self.width)

    @property
    def b(self):
        return self.a + self.soft_width


@dataclass
class ExponentialParams:
    tau0: float
    alpha: float = 0.5

    def clamped(self) -> "ExponentialParams":
        return ExponentialParams(float(np.clip(self.tau0, *TAU_BOUNDS)), self.alpha)


def soft_clamp_width(w):
    """Piecewise width clamp: identity up to 1.5, ``1.5 tanh(w / 1.5)`` beyond.

    The two branches do not meet at 1.5 (1.5 vs ~1.143); the jump is kept as is.
    """
    w = np.asarray(w, dtype=np.float64)
    return np.where(w <= TOPHAT_MAX_WIDTH, w, TOPHAT_MAX_WIDTH * np.tanh(w / TOPHAT_MAX_WIDTH))


def _soft_clamp_slope(w):
    w = np.asarray(w, dtype=np.float64)
    return np.where(w <= TOPHAT_MAX_WIDTH, 1.0, 1.0 / np.cosh(w / TOPHAT_MAX_WIDTH) ** 2)


# ----------------------------------------------------------------------------
# public point evaluators (constrained parameters)

def _as_points(coords, ncomp: int) -> np.ndarray:
    """Coordinates with a trailing component axis of length ``ncomp``."""
    s = np.asarray(coords, dtype=np.float64)
    if ncomp == 1:
        return s[..., None]
    if s.shape[-1:] != (ncomp,):
        raise KernelError(f"expected {ncomp}-component coordinates, got shape {s.shape}")
    return s


def _sqdist(s, mu):
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    s = _as_points(s, mu.size)
    return np.sum((s - mu) ** 2, axis=-1)


def eval_gaussian(params: GaussianParams, coords) -> np.ndarray:
    """``exp(-|s - mu|^2 / (2 sigma^2))``; ``coords`` (n,) or (..., 2) for horizontal."""
    if not params.sigma > 0:
        raise KernelError("gaussian width must be positive")
    return np.exp(-_sqdist(coords, params.mu) / (2.0 * params.sigma ** 2))


def eval_mixture(params: MixtureParams, coords) -> np.ndarray:
    p = params.clamped()
    g1 = np.exp(-_sqdist(coords, p.mu1) / (2.0 * p.sigma1 ** 2))
    g2 = np.exp(-_sqdist(coords, p.mu2) / (2.0 * p.sigma2 ** 2))
    return p.w1 * g1 + p.w2 * g2 + STABILITY


def eval_tophat(params: TopHatParams, coords) -> np.ndarray:
    """Sigmoid-product window on ``[a, b]``; 2-D coords take a product over components."""
    a = np.atleast_1d(params.a)
    b = np.atleast_1d(params.b)
    s = _as_points(coords, a.size)
    lo = _sigmoid((s - a) / params.eps)
    hi = _sigmoid((b - s) / params.eps)
    return np.prod(lo * hi, axis=-1) + STABILITY


def exponential_distance(dim: str, shape: tuple[int, ...], alpha: float = 0.5) -> np.ndarray:
    """Index-unit distance to the kernel anchor.

    horizontal: Euclidean offset from the neighbourhood centre; pressure: linear
    blend of distance from top (alpha -> 0) and from the surface (alpha -> 1);
    time: steps before the prediction time.
    """
    if dim == "horizontal":
        nx, ny = shape
        ix = np.arange(nx) - (nx - 1) / 2.0
        iy = np.arange(ny) - (ny - 1) / 2.0
        return np.sqrt(ix[:, None] ** 2 + iy[None, :] ** 2)
    (n,) = shape
    j = np.arange(n, dtype=np.float64)
    if dim == "pressure":
        return (1.0 - alpha) * j + alpha * (n - 1 - j)
    if dim == "time":
        return (n - 1) - j
    raise KernelError(f"unknown dimension {dim!r}")


def eval_exponential(params: ExponentialParams, axis, dim: str) -> np.ndarray:
    """``exp(-d / tau0)``; ``axis`` is an Axis (or a pair of horizontal Axes)."""
    if dim == "pressure" and not 0.0 < params.alpha < 1.0:
        raise KernelError(f"anchor alpha must lie in (0, 1), got {params.alpha}")
    p = params.clamped()
    if dim == "horizontal":
        shape = (axis[0].count, axis[1].count)
    else:
        shape = (axis.count,)
    return np.exp(-exponential_distance(dim, shape, p.alpha) / p.tau0)


# ----------------------------------------------------------------------------
# per-dim components in unconstrained parameters: value + jacobian

def _dim_shape(grid_shape, dim):
    return tuple(grid_shape[a] for a in DIM_AXES[dim])


def _dim_coords(grid: Grid, dim: str) -> np.ndarray:
    """Normalized coordinates over the dim's axes, trailing component axis."""
    c = grid.normalized
    if dim == "horizontal":
        sx, sy = c["horizontal-x"], c["horizontal-y"]
        return np.stack(np.meshgrid(sx, sy, indexing="ij"), axis=-1)
    name = "pressure" if dim == "pressure" else "time"
    return c[name][:, None]


def _gaussian_component(theta, s, prefix=""):
    mu = theta[prefix + "mu"]
    sigma, dsigma = _positive_fwd(theta[prefix + "sigma"])
    diff = s - mu
    r2 = np.sum(diff ** 2, axis=-1)
    g = np.exp(-r2 / (2.0 * sigma ** 2))
    jac = {
        prefix + "mu": g[..., None] * diff / sigma ** 2,
        prefix + "sigma": g * r2 / sigma ** 3 * dsigma,
    }
    return g, jac


def _mixture_component(theta, s):
    out = STABILITY
    jac = {}
    for c in ("1", "2"):
        w = theta["w" + c]
        mu = theta["mu" + c]
        sigma, dsigma = mix_sigma_map(theta["sigma" + c])
        diff = s - mu
        r2 = np.sum(diff ** 2, axis=-1)
        g = np.exp(-r2 / (2.0 * sigma ** 2))
        out = out + w * g
        jac["w" + c] = g
        jac["mu" + c] = (w * g)[..., None] * diff / sigma ** 2
        jac["sigma" + c] = w * g * r2 / sigma ** 3 * dsigma
    return out, jac


def _tophat_component(theta, s):
    lower, upper = theta["lower"], theta["upper"]
    a = np.minimum(lower, upper)
    w = np.abs(upper - lower)
    wt = soft_clamp_width(w)
    b = a + wt
    lower_is_min = lower <= upper
    da_dl = np.where(lower_is_min, 1.0, 0.0)
    da_du = 1.0 - da_dl
    dw_dl = np.where(lower_is_min, -1.0, 1.0)
    slope = _soft_clamp_slope(w)
    db_dl = da_dl + slope * dw_dl
    db_du = da_du - slope * dw_dl

    eps = TOPHAT_EPS
    A = _sigmoid((s - a) / eps)
    B = _sigmoid((b - s) / eps)
    per = A * B
    dper_da = -A * (1.0 - A) / eps * B
    dper_db = A * B * (1.0 - B) / eps
    total = np.prod(per, axis=-1)
    # product of the other components for each coordinate component
    n = per.shape[-1]
    others = np.stack([np.prod(np.delete(per, d, axis=-1), axis=-1) for d in range(n)], axis=-1)
    jac = {
        "lower": others * (dper_da * da_dl + dper_db * db_dl),
        "upper": others * (dper_da * da_du + dper_db * db_du),
    }
    return total + STABILITY, jac


def _exponential_component(theta, dim, shape):
    tau, dtau = tau_map(theta["tau0"])
    if dim == "pressure":
        alpha, dalpha = alpha_map(theta["alpha"])
    else:
        alpha, dalpha = 0.5, 0.0
    d = exponential_distance(dim, shape, float(alpha))
    k = np.exp(-d / tau)
    jac = {"tau0": k * d / tau ** 2 * dtau}
    if dim == "pressure":
        n = shape[0]
        dd_dalpha = (n - 1) - 2.0 * np.arange(n)
        jac["alpha"] = -k / tau * dd_dalpha * dalpha
    return k, jac


def _component_param_shapes(family: str, dim: str, grid_shape) -> dict[str, tuple]:
    ncomp = 2 if dim == "horizontal" else 1
    if family == "gaussian":
        return {"mu": (ncomp,), "sigma": ()}
    if family == "mixture":
        return {"w1": (), "mu1": (ncomp,), "sigma1": (), "w2": (), "mu2": (ncomp,), "sigma2": ()}
    if family == "tophat":
        return {"lower": (ncomp,), "upper": (ncomp,)}
    if family == "exponential":
        return {"tau0": (), "alpha": ()} if dim == "pressure" else {"tau0": ()}
    if family == "nonparametric":
        raise KernelError("nonparametric kernels are not separable")
    raise KernelError(f"unknown kernel family {family!r}")


def default_params(family: str, dim: str) -> dict:
    """Constrained starting values per family; centres at 0 in normalized coordinates."""
    ncomp = 2 if dim == "horizontal" else 1
    zero = np.zeros(ncomp)
    if family == "gaussian":
        return {"mu": zero, "sigma": 0.5}
    if family == "mixture":
        return {"w1": 1.0, "mu1": zero - 0.5, "sigma1": 0.5, "w2": 0.5, "mu2": zero + 0.5, "sigma2": 0.5}
    if family == "tophat":
        return {"lower": zero - 0.5, "upper": zero + 0.5}
    if family == "exponential":
        return {"tau0": 5.0, "alpha": 0.5} if dim == "pressure" else {"tau0": 5.0}
    raise KernelError(f"unknown kernel family {family!r}")


def to_unconstrained(family: str, dim: str, params: dict) -> dict[str, np.ndarray]:
    ncomp = 2 if dim == "horizontal" else 1
    out = {}
    for name, value in params.items():
        v = np.asarray(value, dtype=np.float64)
        if name.startswith("mu") or name in ("lower", "upper"):
            out[name] = np.broadcast_to(v, (ncomp,)).copy()
        elif family == "gaussian" and name == "sigma":
            if not v > 0:
                raise KernelError("gaussian width must be positive")
            out[name] = np.array(math.log(v))
        elif name.startswith("sigma"):
            out[name] = np.array(mix_sigma_inv(float(np.clip(v, 0.1 + 1e-9, 2.0 - 1e-9))))
        elif name == "tau0":
            out[name] = np.array(tau_inv(float(np.clip(v, 1e-4 * (1 + 1e-9), 100.0 * (1 - 1e-9)))))
        elif name == "alpha":
            if not 0.0 < v < 1.0:
                raise KernelError(f"anchor alpha must lie in (0, 1), got {float(v)}")
            out[name] = np.array(alpha_inv(float(v)))
        else:
            out[name] = v.copy()
    return out


def to_constrained(family: str, dim: str, theta: dict) -> dict:
    out = {}
    for name, v in theta.items():
        if family == "gaussian" and name == "sigma":
            out[name] = float(np.exp(v))
        elif family == "mixture" and name.startswith("sigma"):
            out[name] = float(mix_sigma_map(v)[0])
        elif name == "tau0":
            out[name] = float(tau_map(v)[0])
        elif name == "alpha":
            out[name] = float(alpha_map(v)[0])
        elif np.ndim(v) == 0:
            out[name] = float(v)
        else:
            out[name] = np.asarray(v, dtype=np.float64).tolist()
    return out


def eval_component(family: str, dim: str, theta: dict, grid: Grid):
    """Raw per-dim kernel values over the dim's axes and their jacobians."""
    shape = _dim_shape(grid.shape, dim)
    if family == "exponential":
        k, jac = _exponential_component(theta, dim, shape)
    else:
        s = _dim_coords(grid, dim)
        if family == "gaussian":
            k, jac = _gaussian_component(theta, s)
        elif family == "mixture":
            k, jac = _mixture_component(theta, s)
        elif family == "tophat":
            k, jac = _tophat_component(theta, s)
        else:
            raise KernelError(f"unknown kernel family {family!r}")
    return k.reshape(shape), {n: j.reshape(shape + np.shape(theta[n])) for n, j in jac.items()}


def _expand(arr, dim, ndim_extra=0):
    """Reshape a per-dim array (dim axes + param axes) to broadcast over the 4-axis grid."""
    axes = DIM_AXES[dim]
    shape = [1] * 4
    for i, a in enumerate(axes):
        shape[a] = arr.shape[i]
    return arr.reshape(tuple(shape) + arr.shape[len(axes):])


# ----------------------------------------------------------------------------
# normalization

@dataclass
class KernelWeights:
    raw: np.ndarray
    normalized: np.ndarray
    denominator: float
    degenerate: bool = False


def normalize(raw: np.ndarray, quadrature: np.ndarray) -> KernelWeights:
    """Scale ``raw`` so its quadrature-weighted sum is one.

    A vanishing signed integral is guarded by a sign-preserving 1e-8 offset and
    flagged as degenerate.
    """
    raw = np.asarray(raw, dtype=np.float64)
    z = float(np.sum(raw * quadrature))
    degenerate = abs(z) < GUARD
    if degenerate:
        z = z + math.copysign(GUARD, z)
    return KernelWeights(raw, raw / z, z, degenerate)


def normalize_vjp(weights: KernelWeights, grad_normalized: np.ndarray, quadrature: np.ndarray) -> np.ndarray:
    """Pull a gradient on the normalized kernel back to the raw kernel."""
    inner = float(np.sum(grad_normalized * weights.normalized))
    return (grad_normalized - inner * quadrature) / weights.denominator


def init_nonparametric(shape, rng_seed, scale: float = 0.01) -> np.ndarray:
    """Raw weights ``1 + scale * N(0, 1)``: a near-uniform kernel after normalization."""
    rng = np.random.default_rng(rng_seed)
    return 1.0 + scale * rng.standard_normal(shape)


# ----------------------------------------------------------------------------
# kernels on a grid

@dataclass
class KernelSpec:
    family: str
    dims: tuple[str, ...]
    predictor_id: int = 0
    feature_id: int = 0
    params: dict | None = None  # constrained values per dim: {dim: {name: value}}

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        dims = tuple(self.dims)
        if not dims or any(d not in DIMS for d in dims) or len(set(dims)) != len(dims):
            raise KernelError(f"kernel dims must be a nonempty subset of {DIMS}, got {dims}")
        self.dims = tuple(d for d in DIMS if d in dims)


@dataclass
class Kernel:
    """A kernel bound to a grid, holding its learnable unconstrained parameters.

    Parameters are flat arrays keyed ``"<dim>.<name>"`` (``"weights"`` for
    nonparametric kernels).
    """

    spec: KernelSpec
    grid: Grid
    theta: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, spec: KernelSpec, grid: Grid, rng_seed=0, init_scale: float = 0.01) -> "Kernel":
        for d in spec.dims:
            if all(grid.shape[a] == 1 for a in DIM_AXES[d]):
                raise KernelError(f"kernel dim {d} is local (single point) on this grid")
        theta = {}
        if spec.family == "nonparametric":
            shape = tuple(grid.shape[a] for d in spec.dims for a in DIM_AXES[d])
            if spec.params and "weights" in spec.params:
                theta["weights"] = np.asarray(spec.params["weights"], dtype=np.float64).reshape(shape)
            else:
                theta["weights"] = init_nonparametric(shape, rng_seed, init_scale)
        else:
            for d in spec.dims:
                given = (spec.params or {}).get(d)
                base = default_params(spec.family, d)
                if given:
                    base.update(given)
                for name, v in to_unconstrained(spec.family, d, base).items():
                    theta[f"{d}.{name}"] = v
        return cls(spec, grid, theta)

    @property
    def n_params(self) -> int:
        return int(sum(np.size(v) for v in self.theta.values()))

    def _split(self):
        per = {d: {} for d in self.spec.dims}
        for key, v in self.theta.items():
            d, name = key.split(".", 1)
            per[d][name] = v
        return per

    def _nonparametric_expand(self, arr):
        shape = [1] * 4
        i = 0
        for d in self.spec.dims:
            for a in DIM_AXES[d]:
                shape[a] = arr.shape[i]
                i += 1
        return arr.reshape(tuple(shape) + arr.shape[i:])

    def raw(self):
        """Raw kernel over the full grid plus per-dim components (for the VJP)."""
        if self.spec.family == "nonparametric":
            return np.broadcast_to(self._nonparametric_expand(self.theta["weights"]), self.grid.shape), None
        comps = {}
        out = np.ones((1, 1, 1, 1))
        for d, th in self._split().items():
            k, jac = eval_component(self.spec.family, d, th, self.grid)
            comps[d] = (k, jac)
            out = out * _expand(k, d)
        return np.broadcast_to(out, self.grid.shape), comps

    def weights(self) -> KernelWeights:
        raw, _ = self.raw()
        return normalize(raw, self.grid.weight_tensor())

    def forward(self):
        """Normalized weights plus whatever the backward pass needs."""
        raw, comps = self.raw()
        kw = normalize(raw, self.grid.weight_tensor())
        return kw, comps

    def vjp(self, kw: KernelWeights, comps, grad_normalized: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. ``theta`` given d loss / d normalized kernel."""
        g_raw = normalize_vjp(kw, grad_normalized, self.grid.weight_tensor())
        if self.spec.family == "nonparametric":
            keep = tuple(a for d in self.spec.dims for a in DIM_AXES[d])
            drop = tuple(a for a in range(4) if a not in keep)
            return {"weights": g_raw.sum(axis=drop).reshape(self.theta["weights"].shape)}
        grads = {}
        for d, (k, jac) in comps.items():
            others = np.ones((1, 1, 1, 1))
            for e, (ke, _) in comps.items():
                if e != d:
                    others = others * _expand(ke, e)
            drop = tuple(a for a in range(4) if a not in DIM_AXES[d])
            g_comp = (g_raw * others).sum(axis=drop)
            nd = g_comp.ndim
            for name, j in jac.items():
                grads[f"{d}.{name}"] = np.tensordot(g_comp, j, axes=(tuple(range(nd)), tuple(range(nd))))
        return grads

    def constrained(self) -> dict:
        if self.spec.family == "nonparametric":
            return {"weights": self.theta["weights"].tolist()}
        return {d: to_constrained(self.spec.family, d, th) for d, th in self._split().items()}

    def mixture_components(self) -> list[np.ndarray] | None:
        """Normalized per-component weights for a 1-dim mixture kernel (for plotting)."""
        if self.spec.family != "mixture" or len(self.spec.dims) != 1:
            return None
        (d,) = self.spec.dims
        th = self._split()[d]
        s = _dim_coords(self.grid, d)
        kw = self.weights()
        out = []
        for c in ("1", "2"):
            sigma = mix_sigma_map(th["sigma" + c])[0]
            g = th["w" + c] * np.exp(-np.sum((s - th["mu" + c]) ** 2, axis=-1) / (2 * sigma ** 2))
            out.append(np.broadcast_to(_expand(g.reshape(_dim_shape(self.grid.shape, d)), d),
                                       self.grid.shape) / kw.denominator)
        return out


def kernel_gradients(kernel: Kernel, normalized: bool = True) -> dict[str, np.ndarray]:
    """Full jacobian of the (normalized or raw) kernel w.r.t. each learnable parameter.

    Each entry has shape ``grid.shape + param.shape``.
    """
    raw, comps = kernel.raw()
    jac = {}
    if kernel.spec.family == "nonparametric":
        w = kernel.theta["weights"]
        eye = np.eye(w.size).reshape(w.shape + w.shape)
        j = kernel._nonparametric_expand(eye.reshape(w.shape + (w.size,)))
        jac["weights"] = np.broadcast_to(j, kernel.grid.shape + (w.size,)).reshape(kernel.grid.shape + w.shape)
    else:
        for d, (k, jd) in comps.items():
            others = np.ones((1, 1, 1, 1))
            for e, (ke, _) in comps.items():
                if e != d:
                    others = others * _expand(ke, e)
            for name, j in jd.items():
                pshape = j.shape[len(DIM_AXES[d]):]
                full = _expand(j, d) * others.reshape(others.shape + (1,) * len(pshape))
                jac[f"{d}.{name}"] = np.broadcast_to(full, kernel.grid.shape + pshape)
    if not normalized:
        return {n: np.array(j) for n, j in jac.items()}
    q = kernel.grid.weight_tensor()
    kw = normalize(raw, q)
    out = {}
    for n, j in jac.items():
        extra = j.ndim - 4
        qe = q.reshape(q.shape + (1,) * extra)
        dz = np.sum(j * qe, axis=(0, 1, 2, 3))
        out[n] = (j - kw.normalized.reshape(q.shape + (1,) * extra) * dz) / kw.denominator
    return out


def uniform_kernel(grid: Grid) -> np.ndarray:
    q = grid.weight_tensor()
    return np.full(grid.shape, 1.0 / q.sum())

