"""Local curvature, stability thresholds, category classification, chains.

Curvature is the energy-exchange-rate proxy kappa = |dH| / x**2: the Borda
change of a point over the squared length scale associated with it.  A
sentinel (unbounded) length scale means no exchange, kappa = 0.

Two thresholds gate each point and dimension.  The short-term threshold is
the inverse of the current frame pair's root magnitude (median across the
2**D roots); the long-term threshold is the inverse of the running mean of
those magnitudes over all frame pairs seen so far.  On the first analyzed
pair the two coincide.

Point categories:

    1  fully stable, no ratio above 1
    2  short-term violation only
    3  long-term violation only (also the resolution for points with
       disjoint short-only and long-only violations; flagged)
    4  jointly unstable dimensions exist but the instability vanishes when
       the dilatational (mean) part of the Borda change is removed
    5  one jointly unstable dimension
    6  two jointly unstable dimensions
    7  three or more jointly unstable dimensions

Categories 8 and 9 are frame-level escalations applied to chain members
once critical chain lengths are known (8: chain longer than the short-term
critical length, 9: longer than the long-term one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lengthscale import LengthScaleRoots

# Escalated categories assigned at frame level.
CHAIN_SHORT_CATEGORY = 8
CHAIN_LONG_CATEGORY = 9
UNSTABLE_MIN_CATEGORY = 5


def local_curvature(dh_value: float, x_value: float) -> float:
    """kappa = |dH| / x**2 for a finite root, 0 for the +inf sentinel."""
    if math.isinf(x_value):
        return 0.0
    return abs(dh_value) / (x_value * x_value)


def curvature_tensor(dh_matrix, roots: LengthScaleRoots) -> np.ndarray:
    """kappa per (point, root, dimension) for a whole frame pair.

    dh_matrix: (D, N).  Returns (N, 2**D, D) with exact zeros on sentinel
    dimensions and wherever dH is exactly zero.
    """
    dh_pts = np.abs(np.asarray(dh_matrix, dtype=float).T)  # (N, D)
    x2 = np.square(roots.roots)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = dh_pts[:, None, :] / x2
    kappa = np.where(np.isinf(x2) | roots.sentinel[:, None, :], 0.0, kappa)
    return kappa


@dataclass
class ThresholdHistory:
    """Running per-point, per-dimension mean of root magnitudes.

    Entries with no defined observation yet have count 0.  The update is
    functional: update_thresholds returns a new history object.
    """

    count: np.ndarray  # (N, D) int64
    mean: np.ndarray   # (N, D)

    @classmethod
    def empty(cls, n_points: int, n_dims: int) -> "ThresholdHistory":
        return cls(
            count=np.zeros((n_points, n_dims), dtype=np.int64),
            mean=np.zeros((n_points, n_dims)),
        )


@dataclass
class ThresholdUpdate:
    kappa_short: np.ndarray  # (N, D), NaN where undefined
    kappa_long: np.ndarray   # (N, D), NaN where undefined
    defined: np.ndarray      # (N, D) bool
    history: ThresholdHistory


def update_thresholds(
    roots: LengthScaleRoots, history: ThresholdHistory | None
) -> ThresholdUpdate:
    """Short- and long-term curvature thresholds plus the advanced history.

    The per-point magnitude statistic is the median of |x| across the 2**D
    roots.  Sentinel dimensions contribute nothing: thresholds stay
    undefined there and the history entry is not advanced.
    """
    n, d = roots.sentinel.shape
    if history is None:
        history = ThresholdHistory.empty(n, d)
    if history.count.shape != (n, d):
        raise ValueError("history shape does not match the frame")

    magnitude = np.median(np.abs(roots.roots), axis=1)  # (N, D); inf on sentinels
    defined = np.isfinite(magnitude)

    count = history.count.copy()
    mean = history.mean.copy()
    count[defined] += 1
    # incremental mean only where a new defined magnitude arrived
    step = np.where(defined & (count > 0), (magnitude - mean), 0.0)
    denom = np.where(count > 0, count, 1)
    mean = np.where(defined, mean + step / denom, mean)

    with np.errstate(divide="ignore"):
        kappa_short = np.where(defined, 1.0 / magnitude, np.nan)
        long_defined = count > 0
        kappa_long = np.where(long_defined, 1.0 / np.where(long_defined, mean, 1.0), np.nan)
    return ThresholdUpdate(
        kappa_short=kappa_short,
        kappa_long=kappa_long,
        defined=defined & long_defined,
        history=ThresholdHistory(count=count, mean=mean),
    )


@dataclass
class PdiRecord:
    """Point-level classification with per-dimension breakdown flags."""

    category: int
    short_unstable: np.ndarray  # (D,) bool
    long_unstable: np.ndarray   # (D,) bool
    mode_mixity_controllable: bool = False
    mixed_disjoint: bool = False


@dataclass
class FrameClassification:
    categories: np.ndarray       # (N,) int, point-level values in 1..7
    short_unstable: np.ndarray   # (N, D) bool
    long_unstable: np.ndarray    # (N, D) bool
    jointly_unstable: np.ndarray # (N, D) bool
    mode_mixity: np.ndarray      # (N,) bool
    mixed_disjoint: np.ndarray   # (N,) bool


def classify_frame(
    kappa_median: np.ndarray,
    kappa_short: np.ndarray,
    kappa_long: np.ndarray,
    defined: np.ndarray,
    dh_points: np.ndarray,
) -> FrameClassification:
    """Vectorized point classification for one frame pair.

    kappa_median, kappa_short, kappa_long, defined, dh_points: (N, D).
    Dimensions with undefined thresholds are excluded from every ratio.
    """
    n, d = kappa_median.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        short_ratio = np.where(defined, kappa_median / kappa_short, 0.0)
        long_ratio = np.where(defined, kappa_median / kappa_long, 0.0)
    short_flag = defined & (short_ratio > 1.0)
    long_flag = defined & (long_ratio > 1.0)
    joint = short_flag & long_flag

    any_short = short_flag.any(axis=1)
    any_long = long_flag.any(axis=1)
    n_joint = joint.sum(axis=1)

    categories = np.ones(n, dtype=int)
    categories[any_short & ~any_long] = 2
    categories[any_long & ~any_short] = 3
    mixed = any_short & any_long & (n_joint == 0)
    categories[mixed] = 3  # disjoint short/long violations; flagged below
    categories[n_joint == 1] = 5
    categories[n_joint == 2] = 6
    categories[n_joint >= 3] = 7

    # Mode-mixity check: remove the dilatational (mean) part of the Borda
    # change and see whether the jointly unstable dimensions calm down.
    mode_mixity = np.zeros(n, dtype=bool)
    candidates = n_joint > 0
    if candidates.any():
        dil = dh_points.mean(axis=1, keepdims=True)
        deviatoric = np.abs(dh_points - dil)
        abs_dh = np.abs(dh_points)
        scale = np.where(abs_dh > 0.0, deviatoric / np.where(abs_dh > 0.0, abs_dh, 1.0), 0.0)
        kappa_dev = kappa_median * scale
        calm = (kappa_dev < kappa_short) & (kappa_dev < kappa_long)
        mode_mixity = candidates & np.all(np.where(joint, calm, True), axis=1)
        categories[mode_mixity] = 4

    return FrameClassification(
        categories=categories,
        short_unstable=short_flag,
        long_unstable=long_flag,
        jointly_unstable=joint,
        mode_mixity=mode_mixity,
        mixed_disjoint=mixed,
    )


def classify_pdi(kappa_per_dim, thresholds, dh_vector) -> PdiRecord:
    """Classify one point.

    kappa_per_dim: (D,) per-dimension curvature (median across roots).
    thresholds: (kappa_short, kappa_long) arrays of shape (D,); NaN entries
    mark undefined thresholds and exclude that dimension.
    dh_vector: (D,) Borda change of the point.
    """
    kappa_short, kappa_long = (np.atleast_1d(np.asarray(t, dtype=float)) for t in thresholds)
    kappa_per_dim = np.atleast_1d(np.asarray(kappa_per_dim, dtype=float))
    dh_vector = np.atleast_1d(np.asarray(dh_vector, dtype=float))
    defined = np.isfinite(kappa_short) & np.isfinite(kappa_long)
    cls = classify_frame(
        kappa_per_dim[None, :],
        kappa_short[None, :],
        kappa_long[None, :],
        defined[None, :],
        dh_vector[None, :],
    )
    return PdiRecord(
        category=int(cls.categories[0]),
        short_unstable=cls.short_unstable[0],
        long_unstable=cls.long_unstable[0],
        mode_mixity_controllable=bool(cls.mode_mixity[0]),
        mixed_disjoint=bool(cls.mixed_disjoint[0]),
    )


@dataclass(frozen=True)
class Chain:
    """A maximal run of consecutive points with category >= 5."""

    start_index: int
    length: int
    dimensions: tuple[int, ...] = ()


def detect_chains(categories, unstable_dims=None) -> list[Chain]:
    """Maximal runs of consecutive unstable points (category >= 5)."""
    categories = np.asarray(categories, dtype=int)
    unstable = categories >= UNSTABLE_MIN_CATEGORY
    chains: list[Chain] = []
    start = None
    for i, flag in enumerate(unstable.tolist() + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            length = i - start
            dims: tuple[int, ...] = ()
            if unstable_dims is not None:
                dims = tuple(
                    np.nonzero(np.asarray(unstable_dims)[start:i].any(axis=0))[0].tolist()
                )
            chains.append(Chain(start_index=start, length=length, dimensions=dims))
            start = None
    return chains


def escalate_chain_categories(
    categories, chains, critical_short: float, critical_long: float
) -> np.ndarray:
    """Frame-level escalation of chain members to categories 8 and 9."""
    out = np.asarray(categories, dtype=int).copy()
    for chain in chains:
        stop = chain.start_index + chain.length
        if chain.length > critical_long:
            out[chain.start_index:stop] = CHAIN_LONG_CATEGORY
        elif chain.length > critical_short:
            out[chain.start_index:stop] = CHAIN_SHORT_CATEGORY
    return out
