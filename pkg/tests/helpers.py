"""Builders shared by the test modules."""
import numpy as np

from lwck import io as lwio
from lwck.conv import ConvLayerSpec

# criterion number -> one-line verdict, printed in the terminal summary
ACCEPTANCE = {}


def unit_columns(rng, n, r):
    m = rng.standard_normal((n, r))
    return m / np.linalg.norm(m, axis=0)


def cp_tensor(rng, dims, r, coeffs=None):
    """Tensor built from ``r`` random unit rank-1 terms; returns (x, factors, coeffs)."""
    factors = [unit_columns(rng, n, r) for n in dims]
    if coeffs is None:
        coeffs = rng.uniform(1.0, 3.0, r)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    x = np.einsum("az,bz,cz,z->abc", *factors, coeffs)
    return x, factors, coeffs


def cp_conv_weights(rng, d, s, t, r):
    """(T, S, D, D) weights whose D^2 x S x T tensor has CP rank <= r."""
    a, b, c = (rng.standard_normal((n, r)) for n in (d * d, s, t))
    k = np.einsum("az,sz,tz->ast", a, b, c)
    return k.reshape(d, d, s, t).transpose(3, 2, 0, 1).copy()


def lowrank_pointwise(rng, s, t, r):
    return (rng.standard_normal((t, r)) @ rng.standard_normal((r, s))).reshape(t, s, 1, 1)


def synthetic_manifest(tmp_path, seed=0):
    """Three rank-limited layers (7x7 s2 p3, 1x1, 3x3) written to ``tmp_path``."""
    rng = np.random.default_rng(seed)
    specs = [
        ConvLayerSpec("conv1", 3, 16, 7, stride=2, padding=3, input_hw=(32, 32)),
        ConvLayerSpec("reduce", 16, 24, 1, input_hw=(16, 16)),
        ConvLayerSpec("conv3", 24, 32, 3, padding=1, input_hw=(16, 16)),
    ]
    weights = [
        cp_conv_weights(rng, 7, 3, 16, 3),
        lowrank_pointwise(rng, 16, 24, 4),
        cp_conv_weights(rng, 3, 24, 32, 4),
    ]
    entries = []
    for spec, w in zip(specs, weights):
        lwio.write_tensor(w, tmp_path / f"{spec.name}.lwt")
        entries.append((spec, f"{spec.name}.lwt"))
    path = tmp_path / "manifest.json"
    lwio.write_manifest(entries, path)
    return path, dict(zip([s.name for s in specs], weights)), specs


def diverging_instance(seed, eps=1e-2, noise_frac=0.05, scale=1e3, dims=(4, 3, 2)):
    """Two near-collinear rank-1 terms of norm ``scale`` that nearly cancel,
    plus dense noise. Returns ``(x, cpd)`` with ``cpd`` the two-term model."""
    from lwck.cpd import CPDecomposition, canonicalize, reconstruct
    from lwck.tensor import frobenius_norm

    rng = np.random.default_rng(seed)

    def unit(v):
        return v / np.linalg.norm(v)

    base = [unit(rng.standard_normal(n)) for n in dims]
    pert = [unit(b + eps * unit(rng.standard_normal(b.size))) for b in base]
    factors = [np.column_stack([b, p]) for b, p in zip(base, pert)]
    cpd = CPDecomposition(*canonicalize(factors, np.array([scale, -scale])))
    y = reconstruct(cpd)
    noise = rng.standard_normal(dims)
    noise *= noise_frac * frobenius_norm(y) / frobenius_norm(noise)
    return y + noise, cpd


def synthetic_predictions(seed, n, t_true=1.0, spread=2.0):
    """Labels drawn at sigmoid(z); reported logits are ``t_true * z``."""
    from lwck.calibration import PredictionSet, apply_temperature

    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, spread, n)
    labels = (rng.uniform(size=n) < apply_temperature(z, 1.0)).astype(float)
    logits = t_true * z
    return PredictionSet(apply_temperature(logits, 1.0), labels, logits)
