"""Factor-norm penalty and weighted binary cross-entropy."""
from dataclasses import dataclass, field
import math

import numpy as np

__all__ = ["PenaltyConfig", "penalty", "penalty_gradient", "weighted_bce", "PROB_CLAMP"]

PROB_CLAMP = 1e-12


@dataclass
class PenaltyConfig:
    """``layer_sets[L]`` holds the weight arrays of the factorized layers that
    replaced source layer ``L`` (3 for a CP rewrite, 2 for an SVD split)."""

    lam: float
    layer_sets: list = field(default_factory=list)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.layer_sets = [[np.asarray(w, dtype=np.float64) for w in ws] for ws in self.layer_sets]
        for ws in self.layer_sets:
            if len(ws) not in (2, 3):
                raise ValueError(f"expected 2 or 3 factorized layers per source layer, got {len(ws)}")


def penalty(cfg):
    return cfg.lam * sum(float(np.sum(w * w)) for ws in cfg.layer_sets for w in ws)


def penalty_gradient(cfg):
    return [[2.0 * cfg.lam * w for w in ws] for ws in cfg.layer_sets]


def weighted_bce(p, q_hat, w=0.5, eps=math.e):
    """Mean negative weighted log-likelihood of labels ``p`` under ``q_hat``.

    Per sample the positive-class term is scaled by
    ``eps ** (p + (1 - 2p) * w)``; the negative-class term is unweighted. The
    sum is negated so that minimizing drives ``q_hat`` toward ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q_hat, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    q = np.clip(q, PROB_CLAMP, 1.0 - PROB_CLAMP)
    weight = np.power(eps, p + (1.0 - 2.0 * p) * w)
    ll = weight * p * np.log(q) + (1.0 - p) * np.log1p(-q)
    return float(-np.mean(ll))
