"""Skill metrics, bootstrap and across-seed uncertainty, regime composites and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


class R2UndefinedError(MetricError):
    pass


class EmptyRegimeError(MetricError):
    pass


def _pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise MetricError(f"prediction and truth lengths differ: {p.size} vs {t.size}")
    if p.size == 0:
        raise MetricError("empty inputs")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((t - p) ** 2))


def r2(pred, truth) -> float:
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise MetricError("R2 needs at least two samples")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise R2UndefinedError("R2 is undefined for constant truth")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


METRICS = {"r2": r2, "mse": mse}


def bootstrap_std(metric, pred, truth, n: int = 1000, seed: int = 0) -> float:
    """Standard deviation (ddof=1) of ``metric`` over ``n`` with-replacement resamples.

    Resamples on which R2 is undefined (constant truth) are skipped.
    """
    fn = METRICS[metric] if isinstance(metric, str) else metric
    p, t = _pair(pred, truth)
    if n < 1:
        raise MetricError("need at least one resample")
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n):
        idx = rng.integers(0, p.size, p.size)
        try:
            values.append(fn(p[idx], t[idx]))
        except R2UndefinedError:
            continue
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


@dataclass
class SeedSummary:
    mean: float
    std: float
    n: int
    single_seed: bool


def seed_aggregate(values) -> SeedSummary:
    """Mean and sample standard deviation (ddof=1) across seeds."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise MetricError("need at least one seed")
    if v.size == 1:
        return SeedSummary(float(v[0]), 0.0, 1, True)
    return SeedSummary(float(np.mean(v)), float(np.std(v, ddof=1)), int(v.size), False)


# ----------------------------------------------------------------------------
# regimes

REGIMES = ("dry", "typical", "wet")


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    # pct * n first: 0.55 * 100 is not exactly 55
    rank = min(max(int(math.ceil(pct * n / 100.0)), 1), n)
    return float(sorted_values[rank - 1])


def regime_timesteps(domain_mean) -> dict[str, np.ndarray]:
    """Timestep indices per regime from nearest-rank percentiles of the domain mean.

    dry <= 5th, typical within [45th, 55th], wet >= 95th. Typical takes
    precedence where thresholds coincide, so the regimes never overlap.
    """
    m = np.asarray(domain_mean, dtype=np.float64)
    s = np.sort(m)
    p5, p45, p55, p95 = (nearest_rank(s, q) for q in (5, 45, 55, 95))
    typical = (m >= p45) & (m <= p55)
    dry = (m <= p5) & ~typical
    wet = (m >= p95) & ~typical
    return {"dry": np.flatnonzero(dry), "typical": np.flatnonzero(typical), "wet": np.flatnonzero(wet)}


@dataclass
class RegimeComposite:
    regime: str
    timesteps: np.ndarray
    truth: np.ndarray | None
    predictions: dict[str, np.ndarray] = field(default_factory=dict)
    error: str | None = None


def regime_composites(preds: dict[str, np.ndarray], truth: np.ndarray, domain_mean=None,
                      strict: bool = False) -> dict[str, RegimeComposite]:
    """Per-cell means of truth and each model's predictions over each regime's timesteps.

    ``truth`` and predictions are (time, x, y); ``domain_mean`` defaults to the
    spatial mean of ``truth``. Empty regimes carry an ``error``; with
    ``strict=True`` they raise :class:`EmptyRegimeError`.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if domain_mean is None:
        domain_mean = truth.reshape(truth.shape[0], -1).mean(axis=1)
    out = {}
    for regime, steps in regime_timesteps(domain_mean).items():
        if steps.size == 0:
            msg = f"regime {regime!r} selects no timesteps"
            if strict:
                raise EmptyRegimeError(msg)
            out[regime] = RegimeComposite(regime, steps, None, {}, msg)
            continue
        out[regime] = RegimeComposite(regime, steps, truth[steps].mean(axis=0),
                                      {k: np.asarray(v, dtype=np.float64)[steps].mean(axis=0)
                                       for k, v in preds.items()})
    return out


# ----------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    model: str
    r2: float
    mse: float
    bootstrap_std_r2: float
    bootstrap_std_mse: float
    n_samples: int
    seed: int | None = None
    seed_std_r2: float = 0.0
    seed_std_mse: float = 0.0


def metric_report(model: str, pred, truth, n_boot: int = 1000, seed: int = 0, run_seed=None) -> MetricReport:
    p, t = _pair(pred, truth)
    return MetricReport(model, r2(p, t), mse(p, t), bootstrap_std("r2", p, t, n_boot, seed),
                        bootstrap_std("mse", p, t, n_boot, seed), int(p.size), run_seed)


def aggregate_reports(reports: list[MetricReport]) -> list[MetricReport]:
    """One row per model: across-seed means, mean bootstrap std and across-seed std."""
    by_model: dict[str, list[MetricReport]] = {}
    for r in reports:
        by_model.setdefault(r.model, []).append(r)
    out = []
    for model, rows in by_model.items():
        sr = seed_aggregate([r.r2 for r in rows])
        sm = seed_aggregate([r.mse for r in rows])
        out.append(MetricReport(model, sr.mean, sm.mean, float(np.mean([r.bootstrap_std_r2 for r in rows])),
                                float(np.mean([r.bootstrap_std_mse for r in rows])), rows[0].n_samples, None,
                                sr.std, sm.std))
    return out


CSV_FIELDS = ("model", "seed", "R2", "MSE", "bootstrap_std_R2", "bootstrap_std_MSE", "seed_std_R2",
              "seed_std_MSE", "n_samples", "config_hash")


def _fmt(x):
    return "" if x is None else (repr(float(x)) if isinstance(x, (float, np.floating)) else str(x))


def metrics_csv(reports: list[MetricReport], config_hash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        w.writerow([r.model, _fmt(r.seed), _fmt(r.r2), _fmt(r.mse), _fmt(r.bootstrap_std_r2),
                    _fmt(r.bootstrap_std_mse), _fmt(r.seed_std_r2), _fmt(r.seed_std_mse), r.n_samples, config_hash])
    return buf.getvalue()


def metrics_json(reports: list[MetricReport], config_hash: str) -> str:
    rows = [{"model": r.model, "seed": r.seed, "R2": r.r2, "MSE": r.mse, "bootstrap_std_R2": r.bootstrap_std_r2,
             "bootstrap_std_MSE": r.bootstrap_std_mse, "seed_std_R2": r.seed_std_r2,
             "seed_std_MSE": r.seed_std_mse, "n_samples": r.n_samples} for r in reports]
    return json.dumps({"config_hash": config_hash, "metrics": rows}, indent=2, sort_keys=True) + "\n"
