"""Reference convolution engine and the factorized layer rewrites.

Weights use the (out_channels, in_channels / groups, D, D) layout. A CP
rewrite produces pointwise -> depthwise -> pointwise; an SVD rewrite of a 1x1
layer produces pointwise -> pointwise. Convolution is cross-correlation (no
kernel flip) and there are no bias terms.
"""
from dataclasses import dataclass, replace

import numpy as np

from ._backend import kernels
from .cpd import AlsOptions, cp_als
from .epc import decompose_with_epc
from .lowrank import svd_split
from .tensor import reshape_kernel

__all__ = [
    "ConvLayerSpec",
    "FactorizedLayer",
    "conv2d_forward",
    "forward_sequence",
    "kernel_to_dst",
    "cp_kernel_tensor",
    "cp_layers",
    "cp_factorize_conv",
    "svd_layers",
    "svd_factorize_conv",
    "max_cp_rank",
    "max_svd_rank",
]

KINDS = ("pointwise", "depthwise", "standard")


@dataclass(frozen=True)
class ConvLayerSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    input_hw: tuple | None = None

    def __post_init__(self):
        for attr in ("in_channels", "out_channels", "kernel_size", "stride", "groups"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"{self.name}: {attr} must be >= 1")
        if self.padding < 0:
            raise ValueError(f"{self.name}: padding must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(f"{self.name}: channels not divisible by groups={self.groups}")
        if self.input_hw is not None:
            hw = tuple(int(v) for v in self.input_hw)
            if len(hw) != 2 or min(hw) < 1:
                raise ValueError(f"{self.name}: input_hw must be two positive ints")
            object.__setattr__(self, "input_hw", hw)

    @property
    def weight_shape(self):
        d = self.kernel_size
        return (self.out_channels, self.in_channels // self.groups, d, d)

    def output_hw(self, input_hw=None):
        hw = input_hw if input_hw is not None else self.input_hw
        if hw is None:
            raise ValueError(f"{self.name}: input_hw is not set")
        d, s, p = self.kernel_size, self.stride, self.padding
        return tuple((v + 2 * p - d) // s + 1 for v in hw)


@dataclass(frozen=True)
class FactorizedLayer:
    kind: str
    spec: ConvLayerSpec
    weights: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        spec = self.spec
        if self.kind == "pointwise" and (spec.kernel_size != 1 or spec.groups != 1):
            raise ValueError("pointwise layers need kernel_size 1 and groups 1")
        if self.kind == "depthwise" and not (
            spec.groups == spec.in_channels == spec.out_channels
        ):
            raise ValueError("depthwise layers need groups == in_channels == out_channels")
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != spec.weight_shape:
            raise ValueError(f"{spec.name}: weights {w.shape} != expected {spec.weight_shape}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def conv2d_forward(x, spec, weights):
    """Direct cross-correlation of a ``C x H x W`` input."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise ValueError(f"{spec.name}: input {x.shape} does not have {spec.in_channels} channels")
    if weights.shape != spec.weight_shape:
        raise ValueError(f"{spec.name}: weights {weights.shape} != expected {spec.weight_shape}")
    return kernels.conv2d_direct(x, weights, spec.stride, spec.padding, spec.groups)


def forward_sequence(x, layers):
    out = np.asarray(x, dtype=np.float64)
    for layer in layers:
        if out.shape[0] != layer.spec.in_channels:
            raise ValueError(
                f"chain mismatch at {layer.spec.name}: got {out.shape[0]} channels, "
                f"expected {layer.spec.in_channels}"
            )
        out = conv2d_forward(out, layer.spec, layer.weights)
    return out


def kernel_to_dst(weights):
    """(T, S, D, D) conv weights -> (D, D, S, T) kernel tensor."""
    return np.transpose(np.asarray(weights, dtype=np.float64), (2, 3, 1, 0))


def cp_kernel_tensor(weights):
    """The D^2 x S x T tensor the CP model is fitted to."""
    return reshape_kernel(kernel_to_dst(weights))


def _sub(spec, suffix, **kw):
    return replace(spec, name=f"{spec.name}.{suffix}", **kw)


def cp_layers(spec, cpd):
    """Map a CP decomposition of the D^2 x S x T kernel onto three layers.

    Coefficients are absorbed into the first pointwise layer; stride and
    padding go to the depthwise layer.
    """
    hw_factor, in_factor, out_factor = cpd.factors
    d, r = spec.kernel_size, cpd.rank
    first = FactorizedLayer(
        "pointwise",
        _sub(spec, 0, out_channels=r, kernel_size=1, stride=1, padding=0, groups=1),
        (in_factor * cpd.coeffs).T.reshape(r, spec.in_channels, 1, 1),
    )
    depth = FactorizedLayer(
        "depthwise",
        _sub(spec, 1, in_channels=r, out_channels=r, groups=r),
        hw_factor.T.reshape(r, 1, d, d),
    )
    out_hw = spec.output_hw() if spec.input_hw is not None else None
    last = FactorizedLayer(
        "pointwise",
        _sub(spec, 2, in_channels=r, kernel_size=1, stride=1, padding=0, groups=1, input_hw=out_hw),
        out_factor.reshape(spec.out_channels, r, 1, 1),
    )
    return [first, depth, last]


def cp_factorize_conv(spec, weights, r, epc_cfg=None, opts=None):
    """Rewrite a D > 1 convolution as pointwise/depthwise/pointwise at rank ``r``."""
    if spec.kernel_size == 1:
        raise ValueError(f"{spec.name}: kernel size 1 uses svd_factorize_conv")
    if spec.groups != 1:
        raise ValueError(f"{spec.name}: grouped layers are not factorized")
    if r < 1:
        raise ValueError("rank must be >= 1")
    x = cp_kernel_tensor(weights)
    opts = opts or AlsOptions()
    cpd = decompose_with_epc(x, r, opts, epc_cfg) if epc_cfg is not None else cp_als(x, r, opts)
    return cp_layers(spec, cpd)


def svd_layers(spec, w1, w2):
    r = w1.shape[1]
    first = FactorizedLayer(
        "pointwise",
        _sub(spec, 0, out_channels=r),
        w1.T.reshape(r, spec.in_channels, 1, 1),
    )
    out_hw = spec.output_hw() if spec.input_hw is not None else None
    second = FactorizedLayer(
        "pointwise",
        _sub(spec, 1, in_channels=r, stride=1, padding=0, input_hw=out_hw),
        w2.T.reshape(spec.out_channels, r, 1, 1),
    )
    return [first, second]


def svd_factorize_conv(spec, weights, r):
    """Rewrite a 1x1 convolution as two pointwise layers at rank ``r``.

    Any stride/padding of the original stays on the first layer.
    """
    if spec.kernel_size != 1:
        raise ValueError(f"{spec.name}: svd_factorize_conv needs kernel size 1")
    if spec.groups != 1:
        raise ValueError(f"{spec.name}: grouped layers are not factorized")
    a = np.asarray(weights, dtype=np.float64)[:, :, 0, 0].T
    w1, w2 = svd_split(a, r)
    return svd_layers(spec, w1, w2)


def max_svd_rank(spec):
    return min(spec.in_channels, spec.out_channels)


def max_cp_rank(spec):
    """Upper bound for the CP rank search: ``D^2 * min(S, T)``."""
    d2 = spec.kernel_size ** 2
    return d2 * min(spec.in_channels, spec.out_channels)
