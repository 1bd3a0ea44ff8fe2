"""RNN-transducer lattice losses, forced alignment, and band restriction."""

from .kernels import BACKEND, warmup
from .ops import (
    DEFAULT_PATH_LIMIT,
    band_mask,
    band_mask_from_emit_frames,
    brute_force_loss,
    iter_path_log_probs,
    normalize,
    restricted_grad,
    restricted_loss,
    rnnt_backward,
    rnnt_forward,
    rnnt_grad,
    rnnt_loss_full,
    viterbi_align,
)
from .types import (
    AlignmentPath,
    BandMask,
    ForwardBackwardGrids,
    LatticeError,
    LogitLattice,
    MaskError,
    validate_path,
)

__all__ = [
    "AlignmentPath",
    "BACKEND",
    "BandMask",
    "DEFAULT_PATH_LIMIT",
    "ForwardBackwardGrids",
    "LatticeError",
    "LogitLattice",
    "MaskError",
    "band_mask",
    "band_mask_from_emit_frames",
    "brute_force_loss",
    "iter_path_log_probs",
    "normalize",
    "restricted_grad",
    "restricted_loss",
    "rnnt_backward",
    "rnnt_forward",
    "rnnt_grad",
    "rnnt_loss_full",
    "validate_path",
    "viterbi_align",
    "warmup",
]
