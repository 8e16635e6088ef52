"""Borda counts, objective ranks and their frame-to-frame changes.

The Borda count of a point is the sum of its normalized pairwise margins
against every other point in the frame; antisymmetry of the margins makes
the counts sum to zero per dimension.  The objective rank is the ascending
fractional rank of the Borda counts (ties get the average of the tied
positions), which is invariant under any strictly increasing transform of
the counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractViolation
from .normalization import NormalizedField


@dataclass
class BordaState:
    H: np.ndarray  # (D, N) Borda counts
    R: np.ndarray  # (D, N) objective ranks in [1, N]
    frame_ref: int = 0


@dataclass
class DeltaBorda:
    dH: np.ndarray  # (D, N)
    dt_span: float


def borda_counts(field: NormalizedField) -> np.ndarray:
    """Per-dimension Borda counts: row sums of the margin matrices, (D, N)."""
    return field.margins.sum(axis=2)


def objective_ranks(h: np.ndarray) -> np.ndarray:
    """Ascending fractional ranks of one dimension's Borda counts."""
    return rankdata(np.asarray(h, dtype=float), method="average")


def borda_state(field: NormalizedField, frame_ref: int = 0) -> BordaState:
    h = borda_counts(field)
    r = np.vstack([objective_ranks(h[d]) for d in range(h.shape[0])])
    return BordaState(H=h, R=r, frame_ref=frame_ref)


def delta_borda(current: BordaState, previous: BordaState, dt_span: float) -> DeltaBorda:
    """Elementwise Borda change between two frames matched by point index."""
    if current.H.shape != previous.H.shape:
        raise ContractViolation(
            f"frame shape mismatch: {current.H.shape} vs {previous.H.shape}"
        )
    if dt_span <= 0.0:
        raise ContractViolation("dt_span must be positive")
    return DeltaBorda(dH=current.H - previous.H, dt_span=dt_span)
