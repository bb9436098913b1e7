"""Rank-R CP decomposition of 3rd-order tensors by alternating least squares.

Factors are kept with unit-length columns throughout; component magnitudes
live in ``coeffs``. With unit columns the squared Frobenius norm of the r-th
rank-1 term is exactly ``coeffs[r] ** 2``, which is what :func:`sensitivity`
sums.
"""
from dataclasses import dataclass, field
from functools import reduce
import logging

import numpy as np

from .tensor import frobenius_norm, khatri_rao, unfold

logger = logging.getLogger(__name__)

__all__ = ["AlsOptions", "CPDecomposition", "cp_als", "reconstruct", "sensitivity", "rank_cap"]

_JITTER = 1e-12
_COND_LIMIT = 1e12
_EXTRAPOLATE_AFTER = 2


@dataclass(frozen=True)
class AlsOptions:
    """ALS stopping and start settings.

    Sweeping stops after ``max_iters`` sweeps or once a sweep lowers the
    relative error by less than ``tol`` times its previous value. ``init`` is
    ``"svd"`` (leading left singular vectors of each unfolding, padded with
    seeded uniform columns) or ``"random"`` (seeded uniform columns).
    """

    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    init: str = "svd"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.init not in ("svd", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class CPDecomposition:
    """Unit-column factor matrices plus nonnegative component coefficients.

    ``history`` holds the relative reconstruction error after each ALS sweep
    (empty when the decomposition was not produced by ALS). ``feasible`` is
    cleared by the error-preserving correction when it could not meet its
    error budget.
    """

    factors: tuple
    coeffs: np.ndarray
    history: tuple = field(default=(), compare=False)
    feasible: bool = field(default=True, compare=False)

    def __post_init__(self):
        factors = tuple(np.array(f, dtype=np.float64) for f in self.factors)
        coeffs = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        r = coeffs.size
        for f in factors:
            if f.ndim != 2 or f.shape[1] != r:
                raise ValueError(f"factor shape {f.shape} inconsistent with rank {r}")
            f.flags.writeable = False
        coeffs.flags.writeable = False
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def rank(self):
        return self.coeffs.size

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    def term(self, r):
        """Materialize the r-th rank-1 component."""
        cols = [f[:, r] for f in self.factors]
        return self.coeffs[r] * reduce(np.multiply.outer, cols)


def reconstruct(cpd):
    letters = "abcdefghijklmnopqrstuvwxyz"[: len(cpd.factors)]
    spec = ",".join(f"{c}z" for c in letters) + ",z->" + letters
    return np.einsum(spec, *cpd.factors, cpd.coeffs)


def sensitivity(cpd):
    return float(np.sum(cpd.coeffs ** 2))


def rank_cap(dims):
    """Largest rank :func:`cp_als` accepts: product of the two largest dims."""
    a, b = sorted(dims)[-2:]
    return a * b


def _normalize(m):
    norms = np.linalg.norm(m, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return m / safe, norms


def canonicalize(factors, coeffs):
    """Fix signs and order: leading factors get a nonnegative largest-magnitude
    entry per column (the last factor absorbs the flip), coefficients are made
    nonnegative and sorted descending."""
    factors = [np.array(f, dtype=np.float64) for f in factors]
    coeffs = np.array(coeffs, dtype=np.float64)
    last = factors[-1]
    for f in factors[:-1]:
        idx = np.argmax(np.abs(f), axis=0)
        neg = f[idx, np.arange(f.shape[1])] < 0
        f[:, neg] *= -1
        last[:, neg] *= -1
    neg = coeffs < 0
    coeffs[neg] *= -1
    last[:, neg] *= -1
    order = np.argsort(-coeffs, kind="stable")
    return [f[:, order] for f in factors], coeffs[order]


def _init_factors(x, r, seed, method):
    # uniform columns are drawn column by column so that rank-r and
    # rank-(r+k) starts share their first r columns
    rng = np.random.default_rng(seed)
    cols = [[] for _ in x.shape]
    for _ in range(r):
        for n, d in enumerate(x.shape):
            cols[n].append(rng.uniform(size=d))
    factors = [np.column_stack(c) for c in cols]
    if method == "svd":
        for n in range(x.ndim):
            u = np.linalg.svd(unfold(x, n), full_matrices=False)[0]
            k = min(r, u.shape[1])
            factors[n][:, :k] = u[:, :k]
    return [_normalize(f)[0] for f in factors]


def _solve_gram(gram, rhs):
    """Solve ``a @ gram = rhs`` for ``a`` (gram symmetric R x R)."""
    if np.linalg.cond(gram) > _COND_LIMIT:
        gram = gram + _JITTER * np.eye(gram.shape[0])
    try:
        return np.linalg.solve(gram, rhs.T).T
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, rhs.T, rcond=None)[0].T


def als_sweep(x, factors, coeffs=None):
    """One ALS pass over every mode; returns (unit factors, coeffs)."""
    factors = list(factors)
    n_modes = len(factors)
    for n in range(n_modes):
        others = [factors[m] for m in range(n_modes) if m != n]
        kr = reduce(khatri_rao, others)
        gram = reduce(np.multiply, [f.T @ f for f in others])
        new = _solve_gram(gram, unfold(x, n) @ kr)
        unit, norms = _normalize(new)
        # keep the previous direction for a column that collapsed to zero
        dead = norms == 0
        unit[:, dead] = factors[n][:, dead]
        factors[n] = unit
        coeffs = norms
    return factors, coeffs


def _absorb(factors, coeffs):
    out = [np.array(f) for f in factors]
    out[-1] = out[-1] * coeffs
    return out


def _split(points):
    factors = []
    coeffs = np.ones(points[0].shape[1])
    for p in points:
        unit, norms = _normalize(p)
        factors.append(unit)
        coeffs = coeffs * norms
    return factors, coeffs


def cp_als(x, r, opts=None, init=None, callback=None):
    """Fit a rank-``r`` CP model to the 3rd-order tensor ``x``.

    Parameters
    ----------
    x : ndarray, 3rd order, not all-zero
    r : int, 1 <= r <= product of the two largest dims
    opts : AlsOptions, optional
    init : CPDecomposition, optional
        Warm start; only its factor directions are used.
    callback : callable(sweep, CPDecomposition), optional
        Invoked after every sweep.

    Returns
    -------
    CPDecomposition with ``history`` set to the relative error per sweep.
    """
    opts = opts or AlsOptions()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"cp_als expects a 3rd-order tensor, got order {x.ndim}")
    if r < 1:
        raise ValueError("rank must be >= 1")
    cap = rank_cap(x.shape)
    if r > cap:
        raise ValueError(f"rank {r} exceeds hard cap {cap} for dims {x.shape}")
    xnorm = frobenius_norm(x)
    if xnorm == 0.0:
        raise ValueError("cannot decompose an all-zero tensor")

    if init is not None:
        if init.rank != r or init.dims != x.shape:
            raise ValueError("warm start does not match requested rank/dims")
        factors = [np.array(f) for f in init.factors]
    else:
        factors = _init_factors(x, r, opts.seed, opts.init)

    history = []
    coeffs = np.zeros(r)
    prev = np.inf
    last_point = None
    for sweep in range(1, opts.max_iters + 1):
        kept = factors, coeffs
        factors, coeffs = als_sweep(x, factors)
        current = CPDecomposition(factors, coeffs)
        err = frobenius_norm(x - reconstruct(current)) / xnorm
        point = _absorb(factors, coeffs)
        if last_point is not None and sweep > _EXTRAPOLATE_AFTER:
            # extrapolation step along the last move, accepted only if it helps
            step = sweep ** (1.0 / 3.0)
            trial = [p + step * (p - q) for p, q in zip(point, last_point)]
            t_factors, t_coeffs = _split(trial)
            t_err = frobenius_norm(x - reconstruct(CPDecomposition(t_factors, t_coeffs))) / xnorm
            if t_err < err:
                factors, coeffs, err, point = t_factors, t_coeffs, t_err, trial
                current = CPDecomposition(factors, coeffs)
        if err > prev:
            # rounding-level increase at convergence: keep the previous iterate
            factors, coeffs = kept
            break
        last_point = point
        history.append(err)
        if callback is not None:
            callback(sweep, current)
        if prev - err < opts.tol * prev or err == 0.0:
            break
        prev = err
    logger.debug("cp_als rank %d: %d sweeps, rel error %.3e", r, len(history), history[-1])
    factors, coeffs = canonicalize(factors, coeffs)
    return CPDecomposition(factors, coeffs, history=tuple(history))
