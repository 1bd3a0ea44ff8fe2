"""Domain types for the transducer decoding grid."""

from dataclasses import dataclass, field

import numpy as np


class LatticeError(ValueError):
    """Raised for malformed lattices or alignment data."""


class MaskError(ValueError):
    """Raised for malformed or disconnected band masks."""


@dataclass(frozen=True)
class LogitLattice:
    """Per-cell output scores over the T x (U+1) grid for one utterance.

    raw_logits holds unnormalized scores (or log-probabilities after
    :func:`ftsim.lattice.normalize`); targets are the U non-blank token
    ids whose emissions index the grid rows.
    """

    raw_logits: np.ndarray  # [T, U+1, V] float64
    targets: np.ndarray  # [U] int64, non-blank
    blank_id: int

    def __post_init__(self):
        logits = np.ascontiguousarray(np.asarray(self.raw_logits, dtype=np.float64))
        targets = np.ascontiguousarray(np.asarray(self.targets, dtype=np.int64))
        object.__setattr__(self, "raw_logits", logits)
        object.__setattr__(self, "targets", targets)
        if logits.ndim != 3:
            raise LatticeError(f"raw_logits must be 3-D, got shape {logits.shape}")
        T, U1, V = logits.shape
        if T < 1 or U1 < 1 or V < 2:
            raise LatticeError(f"lattice needs T >= 1, U >= 0, V >= 2, got {logits.shape}")
        if targets.ndim != 1 or targets.shape[0] != U1 - 1:
            raise LatticeError(
                f"targets must have length U = {U1 - 1}, got shape {targets.shape}"
            )
        if not 0 <= self.blank_id < V:
            raise LatticeError(f"blank_id {self.blank_id} outside vocabulary of size {V}")
        if targets.size and (
            targets.min() < 0 or targets.max() >= V or np.any(targets == self.blank_id)
        ):
            raise LatticeError("targets must be non-blank token ids inside the vocabulary")
        if not np.all(np.isfinite(logits)):
            raise LatticeError("lattice scores must be finite")

    @property
    def t_len(self) -> int:
        return self.raw_logits.shape[0]

    @property
    def u_len(self) -> int:
        return self.raw_logits.shape[1] - 1

    @property
    def vocab(self) -> int:
        return self.raw_logits.shape[2]


@dataclass
class ForwardBackwardGrids:
    """Forward/backward log-sums over the grid plus the total log-probability."""

    log_alpha: np.ndarray | None
    log_beta: np.ndarray | None
    total_log_prob: float


@dataclass
class AlignmentPath:
    """One monotone route through the grid: T blank steps and U emit steps.

    Each step is (t, u, label) describing the transition taken out of cell
    (t, u); the last step is the terminating blank out of (T-1, U).
    """

    steps: list[tuple[int, int, int]]
    log_prob: float

    def emit_frames(self, blank_id: int) -> np.ndarray:
        """Frame index at which each target token is emitted, in order."""
        return np.array(
            [t for t, _, label in self.steps if label != blank_id], dtype=np.int64
        )

    def tokens(self, blank_id: int) -> np.ndarray:
        return np.array(
            [label for _, _, label in self.steps if label != blank_id], dtype=np.int64
        )


def validate_path(path: AlignmentPath, T: int, U: int, blank_id: int,
                  targets: np.ndarray | None = None) -> None:
    """Check the AlignmentPath invariants; raise LatticeError on violation."""
    if len(path.steps) != T + U:
        raise LatticeError(f"path must have T+U = {T + U} steps, got {len(path.steps)}")
    t, u = 0, 0
    emitted = []
    for st, su, label in path.steps:
        if (st, su) != (t, u):
            raise LatticeError(f"path step at ({st}, {su}) but cursor at ({t}, {u})")
        if label == blank_id:
            t += 1
        else:
            emitted.append(label)
            u += 1
        if t > T or u > U:
            raise LatticeError("path leaves the grid")
    if (t, u) != (T, U):
        raise LatticeError(f"path ends at ({t}, {u}), expected ({T}, {U})")
    if path.steps[-1][2] != blank_id or path.steps[-1][:2] != (T - 1, U):
        raise LatticeError("last step must be the terminating blank from (T-1, U)")
    if targets is not None and list(targets) != emitted:
        raise LatticeError("path emissions do not match the target sequence")


@dataclass
class BandMask:
    """Validity region of the grid induced by a band around an alignment."""

    valid: np.ndarray  # [T, U+1] bool
    b_left: int
    b_right: int

    def __post_init__(self):
        self.valid = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        if self.valid.ndim != 2:
            raise MaskError(f"mask must be 2-D, got shape {self.valid.shape}")
        if self.b_left < 0 or self.b_right < 0:
            raise MaskError("band widths must be nonnegative")

    @classmethod
    def full(cls, T: int, U: int) -> "BandMask":
        """Unrestricted mask covering the whole grid."""
        b = max(T, U)
        return cls(valid=np.ones((T, U + 1), dtype=bool), b_left=b, b_right=b)

    def cell_count(self) -> int:
        return int(self.valid.sum())
