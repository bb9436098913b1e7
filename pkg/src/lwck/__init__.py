"""Compress convolution layers into factorized sequences.

CP decomposition with error-preserving correction for kernels larger than
1x1, truncated SVD for 1x1 kernels, rank search and FLOP/parameter
accounting, plus confidence-calibration analytics.
"""
from ._backend import kernels as _kernels
from .calibration import (
    CalibrationBins,
    PredictionSet,
    apply_temperature,
    bin_stats,
    ece,
    fit_temperature,
    reliability_data,
)
from .conv import (
    ConvLayerSpec,
    FactorizedLayer,
    conv2d_forward,
    cp_factorize_conv,
    forward_sequence,
    max_cp_rank,
    max_svd_rank,
    svd_factorize_conv,
)
from .cpd import AlsOptions, CPDecomposition, cp_als, reconstruct, sensitivity
from .epc import EpcConfig, decompose_with_epc, epc_correct, needs_correction
from .lowrank import TruncatedSVD, svd_split, truncated_svd
from .objectives import PenaltyConfig, penalty, penalty_gradient, weighted_bce
from .planner import (
    CompressConfig,
    CompressionPlan,
    ModelManifest,
    RankSearchConfig,
    compress_model,
    count_flops,
    count_params,
    rank_search,
    speedup,
)
from .tensor import frobenius_norm, khatri_rao, refold, relative_error, reshape_kernel, unfold

__version__ = "0.1.0"
BACKEND = _kernels.NAME
