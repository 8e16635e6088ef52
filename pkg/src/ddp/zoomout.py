"""Zoom-out aggregation, residual curvature, critical chain lengths, GTI.

A frame pair is re-analyzed at increasing aggregation levels (81, 27, 9
points for the defaults): consecutive groups of `factor` points are
replaced by their per-dimension mean and the whole normalization, ranking,
length-scale and curvature stack is rerun on the coarsened frames.  The
curvature remaining at the coarsest (9-point) level is the residual
curvature, a magnitude-only measure of the energy exchange rate of the
frame as a whole.

Critical chain lengths come from an intersection construction on the
per-level statistics.  With x the aggregation level (finest = 1) and a log
x axis, the curvature polyline is mirrored about log x = 0, the two
threshold lines (inverse instantaneous and inverse long-run length scale)
are fit by least squares across levels and extended backwards, and each
line's intersection with the mirrored curvature polyline is converted back
from log x to a fraction of the frame, then scaled by the frame length.
When several intersections exist, the process zone jumps to a farther
candidate whenever the curvature there is lower.  The inverse
instantaneous line yields the long-term critical chain length and the
inverse long-run line the short-term one.  No intersection means the
frame cannot support a global transition: the critical length is set to
the unreachable N + 1.

The global transition indicator (GTI) fires when the longest unstable
chain exceeds the short-term critical length and the combined residual
curvature dropped by at least the drop threshold within one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import PipelineConfig
from .curvature import (
    LengthScaleRoots,
    ThresholdHistory,
    ThresholdUpdate,
    curvature_tensor,
    update_thresholds,
)
from .errors import ContractViolation
from .ingest import DataBurst
from .lengthscale import solve_roots
from .normalization import build_field
from .ranking import BordaState, borda_state, delta_borda


def aggregate(burst: DataBurst, factor: int) -> DataBurst:
    """Coarsen a burst by replacing groups of `factor` points by their mean."""
    n = burst.n_points
    if factor < 2:
        raise ContractViolation("aggregation factor must be at least 2")
    if n % factor:
        raise ContractViolation(f"{n} points are not divisible by factor {factor}")
    coarse = burst.values.reshape(n // factor, factor, burst.n_dims).mean(axis=1)
    return replace(burst, values=coarse, dt=burst.dt * factor, time_indices=None)


@dataclass
class FrameLevelState:
    """Per-burst, per-level normalization and ranking results."""

    borda: BordaState
    datum: np.ndarray            # (D,)
    datum_residual: np.ndarray   # (D,)
    fit_excluded_fraction: np.ndarray   # (D,)
    margin_zeroed_fraction: np.ndarray  # (D,)
    unfittable: np.ndarray       # (D,) bool
    dt: float


def frame_level_state(burst: DataBurst, config: PipelineConfig) -> FrameLevelState:
    field = build_field(burst.values, config.epsilon_denominator)
    n = field.n_points
    iu = np.triu_indices(n, k=1)
    n_pairs = max(len(iu[0]), 1)
    fit_frac = np.array([field.fit_excluded[d][iu].mean() if n_pairs else 0.0
                         for d in range(field.n_dims)])
    zero_frac = np.array([field.margin_zeroed[d][iu].sum() / n_pairs
                          for d in range(field.n_dims)])
    return FrameLevelState(
        borda=borda_state(field, frame_ref=burst.burst_index),
        datum=field.datum,
        datum_residual=field.datum_residual,
        fit_excluded_fraction=fit_frac,
        margin_zeroed_fraction=zero_frac,
        unfittable=field.unfittable,
        dt=burst.dt,
    )


@dataclass
class ZoomLevel:
    point_count: int
    x_coordinate: float
    valid_dims: np.ndarray        # (D,) bool
    kappa_per_dim: np.ndarray     # (D,) NaN where invalid
    kappa_combined: float
    inv_ltilde_per_dim: np.ndarray
    inv_ltilde_combined: float
    inv_l_per_dim: np.ndarray
    inv_l_combined: float


@dataclass
class ZoomProfile:
    levels: list[ZoomLevel]
    coarsest_kappa: np.ndarray    # (9, 2**D, D)
    coarsest_valid: np.ndarray    # (D,) bool
    finest_points: int


@dataclass
class FinestFrameData:
    """Finest-level arrays a caller needs for point classification."""

    dh: np.ndarray            # (D, N)
    roots: LengthScaleRoots
    kappa: np.ndarray         # (N, 2**D, D)
    kappa_median: np.ndarray  # (N, D)
    kappa_short: np.ndarray   # (N, D)
    kappa_long: np.ndarray    # (N, D)
    defined: np.ndarray       # (N, D)
    valid_dims: np.ndarray    # (D,)


@dataclass
class ZoomOutcome:
    profile: ZoomProfile
    finest: FinestFrameData
    histories: dict[int, ThresholdHistory]
    fallback_fraction: float
    current_state: FrameLevelState
    previous_state: FrameLevelState


def _nanmedian(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(np.median(finite)) if finite.size else float("nan")


def _summarize_level(
    kappa: np.ndarray,
    thresholds: ThresholdUpdate,
    defined: np.ndarray,
    valid: np.ndarray,
    point_count: int,
    x_coordinate: float,
) -> ZoomLevel:
    d = valid.size
    kappa_pd = np.full(d, np.nan)
    ltilde_pd = np.full(d, np.nan)
    long_pd = np.full(d, np.nan)
    for dim in range(d):
        if not valid[dim]:
            continue
        kappa_pd[dim] = np.median(kappa[:, :, dim])
        mask = defined[:, dim]
        if mask.any():
            ltilde_pd[dim] = np.median(thresholds.kappa_short[mask, dim])
            long_pd[dim] = np.median(thresholds.kappa_long[mask, dim])
    return ZoomLevel(
        point_count=point_count,
        x_coordinate=x_coordinate,
        valid_dims=valid,
        kappa_per_dim=kappa_pd,
        kappa_combined=_nanmedian(kappa_pd),
        inv_ltilde_per_dim=ltilde_pd,
        inv_ltilde_combined=_nanmedian(ltilde_pd),
        inv_l_per_dim=long_pd,
        inv_l_combined=_nanmedian(long_pd),
    )


def zoom_profile(
    previous: DataBurst,
    current: DataBurst,
    config: PipelineConfig,
    histories: dict[int, ThresholdHistory] | None = None,
    state_cache: dict[tuple[int, int], FrameLevelState] | None = None,
    roots_by_level: list[LengthScaleRoots] | None = None,
) -> ZoomOutcome:
    """Run the full per-level analysis for one frame pair.

    `histories` carries the per-level threshold state of earlier pairs of
    the same subject and is returned advanced, never mutated.  A shared
    `state_cache` keyed by (burst_index, level) avoids re-normalizing
    bursts that appear in several pairs.  `roots_by_level` lets a caller
    inject pre-solved roots (the batch path); otherwise they are solved
    here.
    """
    if previous.n_points != current.n_points or previous.n_dims != current.n_dims:
        raise ContractViolation("frame pair shapes do not match")
    counts = config.zoom_point_counts()
    if current.n_points != counts[0]:
        raise ContractViolation(
            f"burst has {current.n_points} points but the config expects {counts[0]}"
        )
    histories = dict(histories) if histories else {}
    state_cache = state_cache if state_cache is not None else {}

    prev_level, cur_level = previous, current
    levels: list[ZoomLevel] = []
    finest: FinestFrameData | None = None
    coarsest_kappa = None
    coarsest_valid = None
    fallback_vectors = 0
    total_vectors = 0
    first_states: tuple[FrameLevelState, FrameLevelState] | None = None

    for li, n_l in enumerate(counts):
        if li > 0:
            prev_level = aggregate(prev_level, config.aggregation_factor)
            cur_level = aggregate(cur_level, config.aggregation_factor)

        def _state(b: DataBurst) -> FrameLevelState:
            key = (b.burst_index, li)
            st = state_cache.get(key)
            if st is None:
                st = frame_level_state(b, config)
                state_cache[key] = st
            return st

        st_prev = _state(prev_level)
        st_cur = _state(cur_level)
        if li == 0:
            first_states = (st_prev, st_cur)
        valid = ~(st_prev.unfittable | st_cur.unfittable)
        dt_span = config.stride_n * cur_level.dt
        dh = delta_borda(st_cur.borda, st_prev.borda, dt_span).dH
        dh[~valid, :] = 0.0

        if roots_by_level is not None:
            roots = roots_by_level[li]
        else:
            roots = solve_roots(st_cur.borda.R, dh, config)
        thresholds = update_thresholds(roots, histories.get(li))
        histories[li] = thresholds.history
        kappa = curvature_tensor(dh, roots)
        defined = thresholds.defined & valid[None, :]
        levels.append(
            _summarize_level(
                kappa, thresholds, defined, valid, n_l, float(config.aggregation_factor ** li)
            )
        )
        fallback_vectors += int(np.sum(roots.convergence == 2))
        total_vectors += roots.convergence.size

        if li == 0:
            finest = FinestFrameData(
                dh=dh,
                roots=roots,
                kappa=kappa,
                kappa_median=np.median(kappa, axis=1),
                kappa_short=thresholds.kappa_short,
                kappa_long=thresholds.kappa_long,
                defined=defined,
                valid_dims=valid,
            )
        if li == len(counts) - 1:
            coarsest_kappa = kappa
            coarsest_valid = valid

    return ZoomOutcome(
        profile=ZoomProfile(
            levels=levels,
            coarsest_kappa=coarsest_kappa,
            coarsest_valid=coarsest_valid,
            finest_points=counts[0],
        ),
        finest=finest,
        histories=histories,
        fallback_fraction=fallback_vectors / total_vectors if total_vectors else 0.0,
        current_state=first_states[1],
        previous_state=first_states[0],
    )


@dataclass
class ResidualCurvatureRecord:
    """Curvature left at the coarsest level, per dimension and per root."""

    rc: np.ndarray          # (D, 2**D), NaN rows for partial dimensions
    rc_per_dim: np.ndarray  # (D,)
    rc_combined: float
    modulation: list        # BoxplotStats | None per dimension


def residual_curvature(profile: ZoomProfile) -> ResidualCurvatureRecord:
    """Residual curvature of a frame pair from its coarsest zoom level."""
    from .report import boxplot_stats

    if profile.levels[-1].point_count != 9:
        raise ContractViolation("zoom profile did not reach the 9-point level")
    kappa = profile.coarsest_kappa     # (9, 2**D, D)
    valid = profile.coarsest_valid
    d = valid.size
    rc = np.median(kappa, axis=0).T    # (D, 2**D)
    rc[~valid, :] = np.nan
    rc_per_dim = np.full(d, np.nan)
    modulation: list = [None] * d
    for dim in range(d):
        if valid[dim]:
            rc_per_dim[dim] = np.median(rc[dim])
            modulation[dim] = boxplot_stats(rc[dim])
    return ResidualCurvatureRecord(
        rc=rc,
        rc_per_dim=rc_per_dim,
        rc_combined=_nanmedian(rc_per_dim),
        modulation=modulation,
    )


def line_polyline_intersections(
    ts: np.ndarray, ys: np.ndarray, intercept: float, slope: float
) -> list[tuple[float, float]]:
    """Intersections of the line y = intercept + slope*t with a polyline.

    Returns (t, y) pairs sorted by t descending (nearest the origin first).
    Parallel overlaps contribute no isolated intersection.
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    found: list[tuple[float, float]] = []
    for i in range(len(ts) - 1):
        t0, t1 = ts[i], ts[i + 1]
        y0, y1 = ys[i], ys[i + 1]
        if t1 == t0:
            continue
        seg_slope = (y1 - y0) / (t1 - t0)
        denom = slope - seg_slope
        if denom == 0.0:
            continue
        t_star = (y0 - seg_slope * t0 - intercept) / denom
        lo, hi = (t0, t1) if t0 <= t1 else (t1, t0)
        if lo - 1e-12 <= t_star <= hi + 1e-12:
            found.append((float(t_star), float(intercept + slope * t_star)))
    found.sort(key=lambda p: -p[0])
    deduped: list[tuple[float, float]] = []
    for cand in found:
        if not deduped or abs(cand[0] - deduped[-1][0]) > 1e-12:
            deduped.append(cand)
    return deduped


def _resolve_process_zone(candidates: list[tuple[float, float]]) -> tuple[float, float]:
    """Walk from the nearest intersection to farther ones with lower curvature."""
    current = candidates[0]
    for cand in candidates[1:]:
        if cand[1] < current[1]:
            current = cand
    return current


def critical_chain_lengths(
    profile: ZoomProfile, config: PipelineConfig
) -> tuple[float, float]:
    """(short, long) critical chain lengths in points of the finest frame.

    Built from the combined per-level statistics.  Returns the unreachable
    sentinel N + 1 for a line with no intersection (or a profile with
    fewer than two usable levels).
    """
    n = profile.finest_points
    sentinel = float(n + 1)
    usable = [
        lv
        for lv in profile.levels
        if math.isfinite(lv.kappa_combined)
        and math.isfinite(lv.inv_ltilde_combined)
        and math.isfinite(lv.inv_l_combined)
    ]
    if len(usable) < 2:
        return sentinel, sentinel

    t = np.log([lv.x_coordinate for lv in usable])
    kappa = np.array([lv.kappa_combined for lv in usable])
    # mirror the curvature polyline about log x = 0
    ts_mirror = -t[::-1]
    ys_mirror = kappa[::-1]

    def _critical_for(values: np.ndarray) -> float:
        slope, intercept = np.polyfit(t, values, 1)
        candidates = line_polyline_intersections(ts_mirror, ys_mirror, intercept, slope)
        if not candidates:
            return sentinel
        t_star, _ = _resolve_process_zone(candidates)
        return float(math.exp(t_star) * n)

    long_critical = _critical_for(np.array([lv.inv_ltilde_combined for lv in usable]))
    short_critical = _critical_for(np.array([lv.inv_l_combined for lv in usable]))
    return short_critical, long_critical


@dataclass
class GtiRecord:
    chain_max_length: int
    critical_short: float
    critical_long: float
    energy_drop_fraction: float | None
    triggered: bool
    imminent: bool


def gti(
    rc_history,
    chains,
    criticals: tuple[float, float],
    drop_threshold: float = 0.8,
) -> GtiRecord:
    """Global transition indicator for the newest frame pair.

    rc_history is the per-pair sequence of ResidualCurvatureRecord with the
    current pair last.  The drop fraction needs at least two records and a
    positive previous value; otherwise it stays undefined and the
    indicator cannot fire.  Rising residual curvature clamps to drop 0.
    """
    critical_short, critical_long = criticals
    chain_max = max((c.length for c in chains), default=0)
    drop: float | None = None
    if len(rc_history) >= 2:
        prev = rc_history[-2].rc_combined
        cur = rc_history[-1].rc_combined
        if math.isfinite(prev) and prev > 0.0 and math.isfinite(cur):
            drop = max(0.0, (prev - cur) / prev)
    triggered = drop is not None and drop >= drop_threshold and chain_max > critical_short
    imminent = triggered and chain_max >= 1
    record = GtiRecord(
        chain_max_length=chain_max,
        critical_short=critical_short,
        critical_long=critical_long,
        energy_drop_fraction=drop,
        triggered=triggered,
        imminent=imminent,
    )
    if record.triggered:
        assert record.chain_max_length > record.critical_short
        assert record.energy_drop_fraction is not None
        assert record.energy_drop_fraction >= drop_threshold
    return record
