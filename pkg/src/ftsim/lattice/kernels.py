"""Hot dynamic-programming kernels over the T x (U+1) decoding grid.

Every kernel is written as plain loops over float64 arrays so the same
source compiles under numba and also runs as ordinary Python/numpy.  The
backend is chosen once at import time via the FTSIM_BACKEND environment
variable ("numba", the default, or "numpy").  Set FTSIM_BACKEND=numpy to
force the interpreted fallback, e.g. when debugging or on platforms
without a working numba install.

Grid conventions shared by all kernels:
  * cell (t, u) means "frame t, u tokens emitted so far", u in [0, U]
  * a blank step leaves (t, u) toward (t+1, u); the terminating blank
    leaves (T-1, U)
  * an emit step leaves (t, u) toward (t, u+1)
  * logp_blank[t, u] is the log-probability of the blank symbol at the
    cell; logp_emit[t, u] is the log-probability of the (u+1)-th target
    token, with the last column fixed at -inf (nothing left to emit)
  * valid is a uint8 mask; transitions are only taken between valid cells
"""

import math
import os

import numpy as np

NEG_INF = -np.inf

_BACKEND_REQUEST = os.environ.get("FTSIM_BACKEND", "numba").strip().lower()
if _BACKEND_REQUEST not in ("numba", "numpy"):
    raise ValueError(
        f"FTSIM_BACKEND must be 'numba' or 'numpy', got {_BACKEND_REQUEST!r}"
    )

if _BACKEND_REQUEST == "numba":
    try:
        from numba import njit as _njit

        def _jit(fn):
            return _njit(cache=True, nogil=True)(fn)

        BACKEND = "numba"
    except ImportError:
        def _jit(fn):
            return fn

        BACKEND = "numpy"
else:
    def _jit(fn):
        return fn

    BACKEND = "numpy"


@_jit
def _lse2(a, b):
    # log(exp(a) + exp(b)) with max-subtraction; tolerates -inf on either side
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@_jit
def fb_forward(logp_blank, logp_emit, valid):
    """Masked forward pass.

    Returns (alpha, total) where alpha[t, u] is the log-sum over partial
    paths from (0, 0) to (t, u) confined to valid cells, and total is the
    full-sequence log-probability including the terminating blank.
    """
    T, U1 = logp_blank.shape
    alpha = np.full((T, U1), NEG_INF)
    if valid[0, 0]:
        alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if (t == 0 and u == 0) or not valid[t, u]:
                continue
            acc = NEG_INF
            if t > 0 and valid[t - 1, u]:
                acc = alpha[t - 1, u] + logp_blank[t - 1, u]
            if u > 0 and valid[t, u - 1]:
                acc = _lse2(acc, alpha[t, u - 1] + logp_emit[t, u - 1])
            alpha[t, u] = acc
    total = NEG_INF
    if valid[T - 1, U1 - 1] and alpha[T - 1, U1 - 1] > NEG_INF:
        total = alpha[T - 1, U1 - 1] + logp_blank[T - 1, U1 - 1]
    return alpha, total


@_jit
def fb_backward(logp_blank, logp_emit, valid):
    """Masked backward pass: beta[t, u] sums paths from (t, u) to termination."""
    T, U1 = logp_blank.shape
    beta = np.full((T, U1), NEG_INF)
    if valid[T - 1, U1 - 1]:
        beta[T - 1, U1 - 1] = logp_blank[T - 1, U1 - 1]
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if (t == T - 1 and u == U1 - 1) or not valid[t, u]:
                continue
            acc = NEG_INF
            if t < T - 1 and valid[t + 1, u]:
                acc = logp_blank[t, u] + beta[t + 1, u]
            if u < U1 - 1 and valid[t, u + 1]:
                acc = _lse2(acc, logp_emit[t, u] + beta[t, u + 1])
            beta[t, u] = acc
    return beta


@_jit
def fb_occupancy(alpha, beta, logp_blank, logp_emit, valid, total):
    """Posterior transition occupancies under the masked path distribution.

    occ_blank[t, u] is the probability mass of paths taking the blank step
    out of (t, u); occ_emit[t, u] likewise for the emit step.  Rows of the
    loss gradient follow directly from these.
    """
    T, U1 = logp_blank.shape
    occ_blank = np.zeros((T, U1))
    occ_emit = np.zeros((T, U1))
    for t in range(T):
        for u in range(U1):
            if not valid[t, u] or alpha[t, u] == NEG_INF:
                continue
            if t == T - 1 and u == U1 - 1:
                occ_blank[t, u] = math.exp(alpha[t, u] + logp_blank[t, u] - total)
            elif t < T - 1 and valid[t + 1, u] and beta[t + 1, u] > NEG_INF:
                occ_blank[t, u] = math.exp(
                    alpha[t, u] + logp_blank[t, u] + beta[t + 1, u] - total
                )
            if u < U1 - 1 and valid[t, u + 1] and beta[t, u + 1] > NEG_INF:
                occ_emit[t, u] = math.exp(
                    alpha[t, u] + logp_emit[t, u] + beta[t, u + 1] - total
                )
    return occ_blank, occ_emit


@_jit
def viterbi_pass(logp_blank, logp_emit):
    """Best single path over the full grid, with blank-preferred tie-break.

    The DP runs from the terminal cell backwards; the path is then read
    off forward from (0, 0), taking the blank step whenever its
    continuation score ties the emit step's.  Returns (score, moves)
    where score includes the terminating blank and moves is an int8 array
    of T+U steps from (0, 0), 0 = blank, 1 = emit.
    """
    T, U1 = logp_blank.shape
    score = np.full((T, U1), NEG_INF)
    score[T - 1, U1 - 1] = logp_blank[T - 1, U1 - 1]
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if t == T - 1 and u == U1 - 1:
                continue
            via_blank = NEG_INF
            via_emit = NEG_INF
            if t < T - 1:
                via_blank = logp_blank[t, u] + score[t + 1, u]
            if u < U1 - 1:
                via_emit = logp_emit[t, u] + score[t, u + 1]
            score[t, u] = via_blank if via_blank >= via_emit else via_emit
    best = score[0, 0]

    n_steps = (T - 1) + (U1 - 1) + 1
    moves = np.zeros(n_steps, dtype=np.int8)
    t = 0
    u = 0
    pos = 0
    while t < T - 1 or u < U1 - 1:
        via_blank = NEG_INF
        via_emit = NEG_INF
        if t < T - 1:
            via_blank = logp_blank[t, u] + score[t + 1, u]
        if u < U1 - 1:
            via_emit = logp_emit[t, u] + score[t, u + 1]
        if via_blank >= via_emit:
            moves[pos] = 0
            t += 1
        else:
            moves[pos] = 1
            u += 1
        pos += 1
    # terminating blank out of (T-1, U) is the implicit final move 0
    return best, moves


@_jit
def reach_mask(T, U1, emit_lo, emit_hi):
    """Cells reachable from (0, 0) and co-reachable to (T-1, U).

    Emission out of row u is only permitted at frames t with
    emit_lo[u] <= t <= emit_hi[u]; blanks are unrestricted.
    """
    fwd = np.zeros((T, U1), dtype=np.uint8)
    fwd[0, 0] = 1
    for t in range(T):
        for u in range(U1):
            if fwd[t, u]:
                continue
            if t > 0 and fwd[t - 1, u]:
                fwd[t, u] = 1
            elif u > 0 and fwd[t, u - 1] and emit_lo[u - 1] <= t <= emit_hi[u - 1]:
                fwd[t, u] = 1
    bwd = np.zeros((T, U1), dtype=np.uint8)
    bwd[T - 1, U1 - 1] = 1
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if bwd[t, u]:
                continue
            if t < T - 1 and bwd[t + 1, u]:
                bwd[t, u] = 1
            elif u < U1 - 1 and bwd[t, u + 1] and emit_lo[u] <= t <= emit_hi[u]:
                bwd[t, u] = 1
    valid = (fwd & bwd).astype(np.uint8)
    valid[0, 0] = 1
    valid[T - 1, U1 - 1] = 1
    return valid


def warmup():
    """Trigger JIT compilation of every kernel on a tiny instance."""
    lp_b = np.log(np.full((2, 2), 0.5))
    lp_e = np.full((2, 2), NEG_INF)
    lp_e[:, 0] = np.log(0.5)
    ones = np.ones((2, 2), dtype=np.uint8)
    alpha, total = fb_forward(lp_b, lp_e, ones)
    beta = fb_backward(lp_b, lp_e, ones)
    fb_occupancy(alpha, beta, lp_b, lp_e, ones, total)
    viterbi_pass(lp_b, lp_e)
    reach_mask(2, 2, np.zeros(1, dtype=np.int64), np.ones(1, dtype=np.int64))
