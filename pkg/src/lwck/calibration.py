"""Binned calibration statistics, ECE, reliability data, temperature scaling.

Bins are equal-width with boundaries ``a_k = k / M``. Bin ``m`` covers the
left-open interval ``(a_m, a_{m+1}]``; a prediction of exactly 0 goes to the
first bin. Multi-attribute predictions are pooled into one flat stream.
"""
from dataclasses import dataclass
import math

import numpy as np

from .objectives import weighted_bce

__all__ = [
    "PredictionSet",
    "CalibrationBins",
    "bin_stats",
    "ece",
    "reliability_data",
    "apply_temperature",
    "fit_temperature",
    "golden_section",
]

DEFAULT_BINS = 10


@dataclass(frozen=True)
class PredictionSet:
    p_hat: np.ndarray
    p: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        p_hat = np.asarray(self.p_hat, dtype=np.float64).reshape(-1)
        p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if p_hat.shape != p.shape:
            raise ValueError(f"p_hat and labels differ in length: {p_hat.size} vs {p.size}")
        if np.any((p_hat < 0) | (p_hat > 1)) or np.any(np.isnan(p_hat)):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any((p != 0) & (p != 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "p", p)
        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
            if logits.shape != p.shape:
                raise ValueError("logits length differs from labels")
            object.__setattr__(self, "logits", logits)

    def __len__(self):
        return self.p.size


@dataclass(frozen=True)
class CalibrationBins:
    """Per-bin statistics; ``acc``/``conf`` entries are ``None`` for empty bins."""

    boundaries: np.ndarray
    counts: np.ndarray
    acc: tuple
    conf: tuple

    @property
    def m(self):
        return self.counts.size


def _bin_index(p_hat, m):
    edges = np.arange(m + 1) / m
    idx = np.searchsorted(edges, p_hat, side="left") - 1
    return np.clip(idx, 0, m - 1), edges


def bin_stats(preds, m=DEFAULT_BINS):
    if m < 1:
        raise ValueError("bin count must be >= 1")
    if len(preds) == 0:
        raise ValueError("empty prediction set")
    idx, edges = _bin_index(preds.p_hat, m)
    counts = np.bincount(idx, minlength=m)
    label_sum = np.bincount(idx, weights=preds.p, minlength=m)
    conf_sum = np.bincount(idx, weights=preds.p_hat, minlength=m)
    acc = tuple(float(label_sum[k] / counts[k]) if counts[k] else None for k in range(m))
    conf = tuple(float(conf_sum[k] / counts[k]) if counts[k] else None for k in range(m))
    return CalibrationBins(edges, counts, acc, conf)


def ece(bins, n=None):
    total = int(bins.counts.sum())
    if n is None:
        n = total
    if n != total:
        raise ValueError(f"sample count {n} does not match binned total {total}")
    out = 0.0
    for c, a, f in zip(bins.counts, bins.acc, bins.conf):
        if c:
            out += c / n * abs(a - f)
    return out


def reliability_data(bins):
    records = []
    for k, (c, a, f) in enumerate(zip(bins.counts, bins.acc, bins.conf)):
        if not c:
            continue
        mid = 0.5 * (bins.boundaries[k] + bins.boundaries[k + 1])
        records.append({"bin": k, "midpoint": float(mid), "acc": a, "conf": f, "gap": a - f, "count": int(c)})
    return records


def apply_temperature(logits, t):
    if not t > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / t
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def golden_section(f, lo, hi, tol):
    """Minimize a unimodal ``f`` on ``[lo, hi]`` to bracket width ``tol``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_temperature(preds, t_min=0.05, t_max=20.0, tol=1e-4, w=0.5, eps=math.e):
    """Temperature minimizing the weighted BCE of ``sigmoid(logits / T)``.

    Falls back to whichever of the golden-section point and ``T = 1`` scores
    better, so the fit never worsens the objective relative to no scaling
    when 1 lies in the interval.
    """
    if preds.logits is None:
        raise ValueError("temperature fitting needs logits")
    if np.all(preds.p == preds.p[0]):
        raise ValueError("labels contain a single class; temperature is not identifiable")
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")

    def loss(t):
        return weighted_bce(preds.p, apply_temperature(preds.logits, t), w=w, eps=eps)

    t_star = golden_section(loss, t_min, t_max, tol)
    if t_min <= 1.0 <= t_max and loss(1.0) < loss(t_star):
        t_star = 1.0
    return t_star
