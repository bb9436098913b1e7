"""Whole-model compression: method choice, rank search, and accounting.

Layers with kernel size > 1 get the CP rewrite (with error-preserving
correction when configured), 1x1 layers get the SVD split. FLOPs count a
multiply-accumulate as 2 and ignore bias.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import fnmatch
import logging
import os

import numpy as np

from .conv import (
    cp_kernel_tensor,
    cp_layers,
    max_cp_rank,
    max_svd_rank,
    svd_layers,
)
from .cpd import AlsOptions, cp_als, reconstruct
from .epc import EpcConfig, decompose_with_epc
from .lowrank import singular_values, truncated_svd
from .tensor import frobenius_norm, relative_error

logger = logging.getLogger(__name__)

__all__ = [
    "count_params",
    "count_flops",
    "speedup",
    "RankSearchConfig",
    "RankSearchResult",
    "rank_search",
    "ModelManifest",
    "LayerRecord",
    "CompressionPlan",
    "CompressConfig",
    "compress_model",
    "thread_count",
]

METHODS = ("cpd-epc", "svd", "skip")
SWEEP_PROBES = 8


def count_params(spec):
    d = spec.kernel_size
    return spec.out_channels * (spec.in_channels // spec.groups) * d * d


def count_flops(spec):
    if spec.input_hw is None:
        raise ValueError(f"{spec.name}: input_hw is required for FLOP accounting")
    h_out, w_out = spec.output_hw()
    d = spec.kernel_size
    return 2 * h_out * w_out * spec.out_channels * (spec.in_channels // spec.groups) * d * d


def speedup(flops_original, flops_sublayers):
    flops_sublayers = list(flops_sublayers)
    if not flops_sublayers:
        raise ValueError("speedup needs at least one sub-layer")
    total = sum(flops_sublayers)
    if total <= 0:
        raise ValueError("sub-layer FLOPs must sum to a positive value")
    if flops_original <= 0:
        raise ValueError("original FLOPs must be positive")
    return flops_original / total


# -- rank search -------------------------------------------------------------


@dataclass
class RankSearchConfig:
    threshold: float
    metric: object = None
    min_rank: int = 1
    max_rank: int | None = None

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.max_rank is not None and self.min_rank > self.max_rank:
            raise ValueError("min_rank must be <= max_rank")


@dataclass
class RankSearchResult:
    rank: int
    score: float
    feasible: bool
    probes: dict = field(default_factory=dict)


def _default_max_rank(spec):
    return max_svd_rank(spec) if spec.kernel_size == 1 else max_cp_rank(spec)


def rank_search(layer, cfg):
    """Smallest rank in ``[min_rank, max_rank]`` whose metric is <= threshold.

    Binary search under a monotone-metric assumption, then a short downward
    sweep below the hit (at most ``SWEEP_PROBES`` probes) to catch
    non-monotone metrics. If even ``max_rank`` fails, the result is marked
    infeasible and carries ``metric(max_rank)``.
    """
    if cfg.metric is None:
        raise ValueError("rank_search needs a metric callback")
    lo = cfg.min_rank
    hi = cfg.max_rank if cfg.max_rank is not None else _default_max_rank(layer)
    if lo > hi:
        raise ValueError(f"empty rank range [{lo}, {hi}]")
    probes = {}

    def score(r):
        if r not in probes:
            probes[r] = float(cfg.metric(r))
        return probes[r]

    if score(hi) > cfg.threshold:
        return RankSearchResult(hi, probes[hi], False, probes)
    best = hi
    while lo < best:
        mid = (lo + best) // 2
        if score(mid) <= cfg.threshold:
            best = mid
        else:
            lo = mid + 1
    found = best
    for r in range(found - 1, max(cfg.min_rank, found - SWEEP_PROBES) - 1, -1):
        if score(r) <= cfg.threshold:
            best = r
    return RankSearchResult(best, probes[best], True, probes)


# -- model level ---------------------------------------------------------------


@dataclass
class ModelManifest:
    """Ordered layer specs plus their (T, S/groups, D, D) weights by name."""

    layers: list
    weights: dict

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        for layer in self.layers:
            if layer.name not in self.weights:
                raise ValueError(f"no weights for layer {layer.name!r}")
            w = np.asarray(self.weights[layer.name])
            if w.shape != layer.weight_shape:
                raise ValueError(f"{layer.name}: weights {w.shape} != expected {layer.weight_shape}")


@dataclass
class LayerRecord:
    name: str
    method: str
    rank: int
    params_before: int
    params_after: int
    flops_before: float
    flops_after: float
    speedup: float
    kernel_rel_error: float
    reason: str = ""
    sublayers: list = field(default_factory=list)

    @property
    def infeasible(self):
        return self.method == "skip" and self.reason.startswith(("infeasible", "error"))


@dataclass
class CompressionPlan:
    records: list

    @property
    def totals(self):
        pb = sum(r.params_before for r in self.records)
        pa = sum(r.params_after for r in self.records)
        fb = sum(r.flops_before for r in self.records)
        fa = sum(r.flops_after for r in self.records)
        return {
            "params_before": pb,
            "params_after": pa,
            "flops_before": fb,
            "flops_after": fa,
            "speedup": fb / fa if fa > 0 else 1.0,
        }


@dataclass
class CompressConfig:
    rank_threshold: float = 0.1
    epc: EpcConfig | None = field(default_factory=EpcConfig)
    als: AlsOptions = field(default_factory=AlsOptions)
    skip: tuple = ()
    force: bool = False
    epc_relative: bool = False
    metric_factory: object = None
    threads: int | None = None


def thread_count(requested=None):
    """Worker count: explicit value, else ``LWCK_THREADS`` (0 = auto)."""
    if requested is None:
        requested = int(os.environ.get("LWCK_THREADS", "0") or 0)
    if requested <= 0:
        requested = os.cpu_count() or 1
    return requested


def _sublayer_entry(layer):
    return {
        "kind": layer.kind,
        "spec": layer.spec,
        "params": count_params(layer.spec),
        "flops": count_flops(layer.spec),
    }


def _skip(spec, reason):
    p, f = count_params(spec), count_flops(spec)
    return LayerRecord(spec.name, "skip", 0, p, p, f, f, 1.0, 0.0, reason), None


class _SvdMetric:
    def __init__(self, weights):
        self.a = np.asarray(weights, dtype=np.float64)[:, :, 0, 0].T
        s = singular_values(self.a)
        self.tail = np.sqrt(np.maximum(np.cumsum((s ** 2)[::-1])[::-1], 0.0))
        self.norm = frobenius_norm(self.a)

    def __call__(self, r):
        return float(self.tail[r] / self.norm) if r < self.tail.size else 0.0


class _CpMetric:
    def __init__(self, weights, cfg):
        self.x = cp_kernel_tensor(weights)
        self.als = cfg.als
        self.epc = cfg.epc
        if self.epc is not None and cfg.epc_relative:
            self.epc = replace(self.epc, delta=self.epc.delta * frobenius_norm(self.x))
        self.cache = {}

    def decompose(self, r):
        if r not in self.cache:
            if self.epc is not None:
                self.cache[r] = decompose_with_epc(self.x, r, self.als, self.epc)
            else:
                self.cache[r] = cp_als(self.x, r, self.als)
        return self.cache[r]

    def __call__(self, r):
        return relative_error(self.x, reconstruct(self.decompose(r)))


def _compress_layer(spec, weights, cfg):
    if any(fnmatch.fnmatchcase(spec.name, pat) for pat in cfg.skip):
        return _skip(spec, "skip-list")
    if spec.groups != 1:
        return _skip(spec, "grouped convolution")
    weights = np.asarray(weights, dtype=np.float64)
    if not np.any(weights):
        return _skip(spec, "error: all-zero kernel")
    svd_path = spec.kernel_size == 1
    if svd_path:
        metric = _SvdMetric(weights)
    else:
        metric = _CpMetric(weights, cfg)
    user_metric = cfg.metric_factory(spec, weights) if cfg.metric_factory else metric
    result = rank_search(spec, RankSearchConfig(cfg.rank_threshold, user_metric))
    if not result.feasible:
        return _skip(spec, f"infeasible: metric({result.rank}) = {result.score:.4g}")
    r = result.rank
    if svd_path:
        svd = truncated_svd(metric.a, r)
        layers = svd_layers(spec, np.array(svd.u), svd.s[:, None] * svd.v.T)
        method = "svd"
    else:
        cpd = metric.decompose(r)
        if not cpd.feasible:
            return _skip(spec, f"infeasible: correction budget not met at rank {r}")
        layers = cp_layers(spec, cpd)
        method = "cpd-epc"
    subs = [_sublayer_entry(layer) for layer in layers]
    params_after = sum(s["params"] for s in subs)
    params_before = count_params(spec)
    if params_after > params_before and not cfg.force:
        return _skip(spec, f"no gain: {params_after} params at rank {r} vs {params_before}")
    flops_before = count_flops(spec)
    flops_after = sum(s["flops"] for s in subs)
    record = LayerRecord(
        spec.name,
        method,
        r,
        params_before,
        params_after,
        flops_before,
        flops_after,
        speedup(flops_before, [s["flops"] for s in subs]),
        float(metric(r)),
        sublayers=subs,
    )
    return record, layers


def _guarded(spec, weights, cfg):
    try:
        return _compress_layer(spec, weights, cfg)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        logger.warning("layer %s failed: %s", spec.name, exc)
        return _skip(spec, f"error: {exc}")


def compress_model(manifest, config=None):
    """Compress every layer of ``manifest``.

    Returns ``(plan, factorized)`` where ``factorized`` maps layer name to its
    list of :class:`~lwck.conv.FactorizedLayer` (skipped layers are absent).
    Per-layer failures become ``skip`` records; the run never aborts.
    """
    cfg = config or CompressConfig()
    jobs = [(spec, manifest.weights[spec.name]) for spec in manifest.layers]
    workers = min(thread_count(cfg.threads), max(len(jobs), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _guarded(job[0], job[1], cfg), jobs))
    else:
        results = [_guarded(spec, w, cfg) for spec, w in jobs]
    records, factorized = [], {}
    for (spec, _), (record, layers) in zip(jobs, results):
        records.append(record)
        if layers is not None:
            factorized[spec.name] = layers
    return CompressionPlan(records), factorized
