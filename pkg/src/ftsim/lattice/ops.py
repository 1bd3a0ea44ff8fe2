"""Transducer loss family: full-sum, band-restricted, Viterbi, and the oracle.

All operations are pure functions in double precision.  Losses accept raw
or already-normalized lattices (per-cell log-softmax is idempotent);
gradients are always with respect to the raw logits as given.
"""

import math

import numpy as np

from . import kernels
from .types import (
    AlignmentPath,
    BandMask,
    ForwardBackwardGrids,
    LatticeError,
    LogitLattice,
    MaskError,
)

DEFAULT_PATH_LIMIT = 10_000


def normalize(lattice: LogitLattice) -> LogitLattice:
    """Per-cell log-softmax so every cell holds log-probabilities."""
    if not np.all(np.isfinite(lattice.raw_logits)):
        raise LatticeError("cannot normalize a lattice with non-finite scores")
    return LogitLattice(
        raw_logits=_log_softmax(lattice.raw_logits),
        targets=lattice.targets,
        blank_id=lattice.blank_id,
    )


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    stable = z - m
    return stable - np.log(np.exp(stable).sum(axis=-1, keepdims=True))


def _cell_log_probs(lattice: LogitLattice):
    """Normalized log-probs split into the blank plane and the emit plane.

    logp_emit[t, u] is the log-probability of target token u+1; its last
    column is -inf because no emission leaves row U.
    """
    logp = _log_softmax(lattice.raw_logits)
    T, U1, _ = logp.shape
    logp_blank = np.ascontiguousarray(logp[:, :, lattice.blank_id])
    logp_emit = np.full((T, U1), kernels.NEG_INF)
    if U1 > 1:
        logp_emit[:, :-1] = np.take_along_axis(
            logp[:, :-1, :], lattice.targets[None, :, None], axis=2
        )[:, :, 0]
    return logp, logp_blank, logp_emit


def _full_valid(lattice: LogitLattice) -> np.ndarray:
    return np.ones((lattice.t_len, lattice.u_len + 1), dtype=np.uint8)


def rnnt_forward(lattice: LogitLattice) -> ForwardBackwardGrids:
    """Forward log-sums over all alignments; total includes the final blank."""
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    alpha, total = kernels.fb_forward(logp_blank, logp_emit, _full_valid(lattice))
    return ForwardBackwardGrids(log_alpha=alpha, log_beta=None, total_log_prob=total)


def rnnt_backward(lattice: LogitLattice) -> ForwardBackwardGrids:
    """Backward log-sums; log_beta[0, 0] equals the forward total."""
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    beta = kernels.fb_backward(logp_blank, logp_emit, _full_valid(lattice))
    return ForwardBackwardGrids(
        log_alpha=None, log_beta=beta, total_log_prob=float(beta[0, 0])
    )


def rnnt_loss_full(lattice: LogitLattice) -> float:
    """Negative log-probability summed over all monotone alignments."""
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    _, total = kernels.fb_forward(logp_blank, logp_emit, _full_valid(lattice))
    # total can round a hair above 0 when one path carries all the mass
    return max(0.0, -float(total))


def rnnt_grad(lattice: LogitLattice) -> np.ndarray:
    """Gradient of rnnt_loss_full with respect to the raw logits."""
    return restricted_grad(lattice, BandMask.full(lattice.t_len, lattice.u_len))


def restricted_loss(lattice: LogitLattice, mask: BandMask) -> float:
    """Negative log-sum over alignments confined to the mask's valid cells."""
    valid = _check_mask(lattice, mask)
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    _, total = kernels.fb_forward(logp_blank, logp_emit, valid)
    return max(0.0, -float(total))


def restricted_grad(lattice: LogitLattice, mask: BandMask) -> np.ndarray:
    """Gradient of restricted_loss; exactly zero at cells outside the mask."""
    valid = _check_mask(lattice, mask)
    logp, logp_blank, logp_emit = _cell_log_probs(lattice)
    alpha, total = kernels.fb_forward(logp_blank, logp_emit, valid)
    beta = kernels.fb_backward(logp_blank, logp_emit, valid)
    occ_blank, occ_emit = kernels.fb_occupancy(
        alpha, beta, logp_blank, logp_emit, valid, total
    )

    T, U1, V = logp.shape
    dlogp = np.zeros((T, U1, V))
    dlogp[:, :, lattice.blank_id] = -occ_blank
    if U1 > 1:
        np.put_along_axis(
            dlogp[:, :-1, :], lattice.targets[None, :, None], -occ_emit[:, :-1, None],
            axis=2,
        )
    # chain through the per-cell softmax: dL/dz = dL/dy - p * sum_v dL/dy_v
    row_sum = dlogp.sum(axis=-1, keepdims=True)
    grad = dlogp - np.exp(logp) * row_sum
    grad[~mask.valid.astype(bool)] = 0.0
    return grad


def _check_mask(lattice: LogitLattice, mask: BandMask) -> np.ndarray:
    T, U1 = lattice.t_len, lattice.u_len + 1
    if mask.valid.shape != (T, U1):
        raise MaskError(
            f"mask shape {mask.valid.shape} does not match grid ({T}, {U1})"
        )
    if not (mask.valid[0, 0] and mask.valid[T - 1, U1 - 1]):
        raise MaskError("start and end cells must be valid")
    valid = np.ascontiguousarray(mask.valid.astype(np.uint8))
    if not _mask_connected(valid):
        raise MaskError("mask is disconnected: no valid route from (0,0) to (T-1,U)")
    return valid


def _mask_connected(valid: np.ndarray) -> bool:
    T, U1 = valid.shape
    reach = np.zeros((T, U1), dtype=bool)
    reach[0, 0] = True
    for t in range(T):
        for u in range(U1):
            if not valid[t, u] or reach[t, u]:
                continue
            if t > 0 and reach[t - 1, u]:
                reach[t, u] = True
            elif u > 0 and reach[t, u - 1]:
                reach[t, u] = True
    return bool(reach[T - 1, U1 - 1])


def viterbi_align(lattice: LogitLattice) -> AlignmentPath:
    """Most probable single alignment, blank preferred on predecessor ties."""
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    best, moves = kernels.viterbi_pass(logp_blank, logp_emit)
    steps = []
    t, u = 0, 0
    for move in moves:
        if move == 0:
            steps.append((t, u, lattice.blank_id))
            t += 1
        else:
            steps.append((t, u, int(lattice.targets[u])))
            u += 1
    return AlignmentPath(steps=steps, log_prob=float(best))


def band_mask(path: AlignmentPath, b_left: int, b_right: int, T: int, U: int,
              blank_id: int) -> BandMask:
    """Validity region: emissions allowed within the band around the path."""
    if b_left < 0 or b_right < 0:
        raise MaskError("band widths must be nonnegative")
    emit_frames = path.emit_frames(blank_id)
    if emit_frames.shape[0] != U:
        raise MaskError(
            f"path has {emit_frames.shape[0]} emissions but grid expects U = {U}"
        )
    if emit_frames.size and emit_frames.max() >= T:
        raise MaskError("path emission frame outside the grid")
    return band_mask_from_emit_frames(emit_frames, b_left, b_right, T, U)


def band_mask_from_emit_frames(emit_frames: np.ndarray, b_left: int, b_right: int,
                               T: int, U: int) -> BandMask:
    """Band mask built directly from per-token emission frames."""
    emit_frames = np.asarray(emit_frames, dtype=np.int64)
    lo = emit_frames - b_left
    hi = emit_frames + b_right
    valid = kernels.reach_mask(T, U + 1, lo, hi)
    return BandMask(valid=valid.astype(bool), b_left=b_left, b_right=b_right)


def iter_path_log_probs(lattice: LogitLattice, path_limit: int = DEFAULT_PATH_LIMIT):
    """Yield the log-probability of every monotone alignment, by brute force.

    Deliberately independent of the forward-backward kernels: walks the
    grid recursively, collecting per-step log-probabilities.  Each path's
    total is folded from its last step to its first so that the maximum
    over paths is bit-identical to the backward Viterbi recursion.
    """
    T, U = lattice.t_len, lattice.u_len
    n_paths = math.comb(T + U, U)
    if n_paths > path_limit:
        raise LatticeError(
            f"{n_paths} alignments exceed the enumeration limit {path_limit}"
        )
    _, logp_blank, logp_emit = _cell_log_probs(lattice)
    U1 = U + 1

    def walk(t, u, buf):
        if t == T - 1 and u == U1 - 1:
            s = logp_blank[t, u]
            for x in reversed(buf):
                s = x + s
            yield float(s)
            return
        if t < T - 1:
            buf.append(logp_blank[t, u])
            yield from walk(t + 1, u, buf)
            buf.pop()
        if u < U1 - 1:
            buf.append(logp_emit[t, u])
            yield from walk(t, u + 1, buf)
            buf.pop()

    yield from walk(0, 0, [])


def brute_force_loss(lattice: LogitLattice,
                     path_limit: int = DEFAULT_PATH_LIMIT) -> float:
    """Enumeration oracle: -log-sum-exp over every alignment's log-prob."""
    lps = np.array(list(iter_path_log_probs(lattice, path_limit)))
    m = lps.max()
    return max(0.0, -float(m + np.log(np.exp(lps - m).sum())))
