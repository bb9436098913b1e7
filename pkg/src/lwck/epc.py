"""Error-preserving correction of CP decompositions.

Given a decomposition whose rank-1 terms have grown large and cancel each
other, find factors with the smallest ``sum(coeffs**2)`` whose reconstruction
stays within an absolute Frobenius budget ``delta`` of the data.

The solver alternates over modes. With every other factor held at unit
column norm, the objective restricted to mode ``n`` is ``||A||_F^2`` for the
full (coefficient-carrying) factor ``A``, and the constraint is
``||X_(n) - A K^T||_F <= delta``. That subproblem is solved exactly through
its Lagrangian: ``A(mu) = X_(n) K (K^T K + mu I)^-1`` with ``mu >= 0`` chosen
so the error sits on the budget. Each accepted update is feasible and no
larger in norm than the previous factor, so sensitivity never increases.
"""
from dataclasses import dataclass, replace
from functools import reduce
import logging

import numpy as np
from scipy.optimize import brentq

from .cpd import (
    AlsOptions,
    CPDecomposition,
    canonicalize,
    cp_als,
    reconstruct,
    sensitivity,
)
from .tensor import frobenius_norm, khatri_rao, unfold

logger = logging.getLogger(__name__)

__all__ = ["EpcConfig", "needs_correction", "epc_correct", "decompose_with_epc", "default_threshold"]

CONTRACT_TOL = 1e-9
_MAX_BACKTRACK = 60


@dataclass(frozen=True)
class EpcConfig:
    """Correction settings.

    delta: absolute Frobenius error budget.
    norm_threshold: sensitivity at or above which correction triggers; when
        ``None`` it is derived from the data as ``10 * ||x||_F^2``.
    max_outer_iters: correction/refinement rounds in :func:`decompose_with_epc`.
    step_tol: stop sweeping once the relative sensitivity drop per sweep is
        below this.
    max_sweeps: cap on mode sweeps inside one :func:`epc_correct` call.
    """

    delta: float = 0.0
    norm_threshold: float | None = None
    max_outer_iters: int = 10
    step_tol: float = 1e-12
    max_sweeps: int = 2000

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.norm_threshold is not None and self.norm_threshold < 0:
            raise ValueError("norm_threshold must be >= 0")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")

    def resolved(self, x):
        if self.norm_threshold is not None:
            return self
        return replace(self, norm_threshold=default_threshold(x))


def default_threshold(x):
    return 10.0 * frobenius_norm(x) ** 2


def needs_correction(cpd, cfg):
    if cfg.norm_threshold is None:
        raise ValueError("norm_threshold unset; call cfg.resolved(x) first")
    return sensitivity(cpd) >= cfg.norm_threshold


def _abs_error(x, factors, coeffs):
    return frobenius_norm(x - reconstruct(CPDecomposition(factors, coeffs)))


def _min_norm_update(xn, kr, a_prev, delta):
    """Smallest-norm ``A`` with ``||xn - A kr^T|| <= delta``, safeguarded so
    the returned factor is feasible and no larger than ``a_prev``."""
    xnorm2 = float(np.sum(xn * xn))
    if xnorm2 <= delta * delta:
        return np.zeros_like(a_prev)

    gram = kr.T @ kr
    g, v = np.linalg.eigh(gram)
    g = np.clip(g, 0.0, None)
    b = xn @ kr @ v
    bn2 = np.sum(b * b, axis=0)
    live = g > g.max() * 1e-14
    # least-squares residual, evaluated directly for accuracy at small errors
    a_ls = (b[:, live] / g[live]) @ v[:, live].T
    res0 = xn - a_ls @ kr.T
    e0 = float(np.sum(res0 * res0))

    def excess(mu):
        return e0 + np.sum(bn2[live] / g[live] * (mu / (g[live] + mu)) ** 2) - delta * delta

    if excess(0.0) >= 0.0:
        a_new = a_ls
    else:
        hi = max(float(g.max()), 1.0)
        while excess(hi) <= 0.0 and hi < 1e300:
            hi *= 4.0
        if excess(hi) <= 0.0:
            # budget reaches A = 0 up to rounding; backtracking restores feasibility
            a_new = np.zeros_like(a_prev)
        else:
            mu = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            a_new = (b / (g + mu)) @ v.T

    prev_norm2 = float(np.sum(a_prev * a_prev))
    if float(np.sum(a_new * a_new)) > prev_norm2:
        return a_prev
    # back off toward the previous (feasible) factor until feasible
    t = 1.0
    for _ in range(_MAX_BACKTRACK):
        cand = a_prev + t * (a_new - a_prev)
        r = xn - cand @ kr.T
        if float(np.sum(r * r)) <= delta * delta:
            return cand
        t *= 0.5
    return a_prev


def _correct_sweeps(x, factors, coeffs, delta, cfg):
    n_modes = len(factors)
    factors = [np.array(f) for f in factors]
    coeffs = np.array(coeffs)
    f_prev = float(np.sum(coeffs ** 2))
    for sweep in range(1, cfg.max_sweeps + 1):
        for n in range(n_modes):
            others = [factors[m] for m in range(n_modes) if m != n]
            kr = reduce(khatri_rao, others)
            a = _min_norm_update(unfold(x, n), kr, factors[n] * coeffs, delta)
            norms = np.linalg.norm(a, axis=0)
            alive = norms > 0
            factors[n][:, alive] = a[:, alive] / norms[alive]
            coeffs = norms
        f_now = float(np.sum(coeffs ** 2))
        if f_prev - f_now <= cfg.step_tol * max(f_prev, np.finfo(float).tiny):
            break
        f_prev = f_now
    logger.debug("epc: %d sweeps, sensitivity %.6e", sweep, float(np.sum(coeffs ** 2)))
    return factors, coeffs


def epc_correct(x, cpd, cfg):
    """Reduce ``sensitivity(cpd)`` while keeping ``||x - Y||_F <= cfg.delta``.

    If the incoming decomposition violates the budget, ALS sweeps first try
    to bring it inside; when that fails the best attempt is returned with
    ``feasible=False`` and uncorrected.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = float(cfg.delta)
    factors, coeffs = list(cpd.factors), cpd.coeffs
    err = _abs_error(x, factors, coeffs)
    if err > delta + CONTRACT_TOL:
        refined = cp_als(x, cpd.rank, AlsOptions(max_iters=cfg.max_sweeps), init=cpd)
        err = _abs_error(x, refined.factors, refined.coeffs)
        if err > delta + CONTRACT_TOL:
            logger.info("epc: budget %.3e infeasible, best error %.3e", delta, err)
            return CPDecomposition(refined.factors, refined.coeffs, history=(err,), feasible=False)
        factors, coeffs = list(refined.factors), refined.coeffs
    # an entry point within the contract tolerance keeps its own error as budget
    delta = max(delta, err)
    factors, coeffs = _correct_sweeps(x, factors, coeffs, delta, cfg)
    factors, coeffs = canonicalize(factors, coeffs)
    return CPDecomposition(factors, coeffs)


def decompose_with_epc(x, r, opts=None, cfg=None):
    """Plain ALS, then correction rounds while the terms stay too large.

    The budget is ``max(cfg.delta, ALS error)`` so the ALS result is always a
    feasible starting point. Each round corrects, then tries an ALS
    refinement from the corrected point and keeps it only when it does not
    raise sensitivity.
    """
    x = np.asarray(x, dtype=np.float64)
    opts = opts or AlsOptions()
    cfg = (cfg or EpcConfig()).resolved(x)
    cpd = cp_als(x, r, opts)
    err0 = _abs_error(x, cpd.factors, cpd.coeffs)
    if cfg.max_outer_iters == 0 or not needs_correction(cpd, cfg):
        return cpd
    budget = replace(cfg, delta=max(cfg.delta, err0))
    for _ in range(cfg.max_outer_iters):
        before = sensitivity(cpd)
        corrected = epc_correct(x, cpd, budget)
        refined = cp_als(x, r, opts, init=corrected)
        if (
            sensitivity(refined) <= sensitivity(corrected)
            and _abs_error(x, refined.factors, refined.coeffs) <= budget.delta
        ):
            cpd = refined
        else:
            cpd = corrected
        if not needs_correction(cpd, budget):
            break
        if before - sensitivity(cpd) <= cfg.step_tol * before:
            break  # stalled above the threshold; further rounds are no-ops
    return CPDecomposition(cpd.factors, cpd.coeffs, history=cpd.history)
