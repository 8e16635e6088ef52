"""End-to-end analysis: subjects in, subject reports and dump tables out.

Per subject the flow is: prescale each burst per dimension, build the
normalization and ranking state for every burst at every zoom level, solve
all length-scale roots in one batch (they do not depend on earlier frame
pairs), then walk the frame pairs in order, threading the running
threshold history and the residual-curvature history through the
classification, chain, critical-length and GTI stages.

Subjects are independent; DDP_MAX_PARALLEL_SUBJECTS > 1 turns on a thread
pool across subjects.  Results keep the input subject order either way, so
the emitted output is byte-identical.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .curvature import classify_frame, detect_chains, escalate_chain_categories
from .errors import ValidationError
from .ingest import DataBurst, Dataset, SubjectMeta, prescale_burst
from .lengthscale import Convergence, solve_roots
from .report import (
    FrameResult,
    SubjectReport,
    boxplot_stats,
    energy_exchange_amplitude,
)
from .zoomout import (
    FrameLevelState,
    critical_chain_lengths,
    frame_level_state,
    gti,
    residual_curvature,
    zoom_profile,
)

log = logging.getLogger(__name__)

DUMP_KINDS = ("borda", "roots", "pdi", "zoom")
_CONV_NAMES = {int(c): c.name.lower() for c in Convergence}


@dataclass
class AnalysisResult:
    subjects: list[SubjectReport]
    dumps: dict[str, str] = field(default_factory=dict)


def _num(x) -> str:
    v = float(x)
    return repr(v) if np.isfinite(v) else "nan"


def analyze_subject(
    subject_id: str,
    bursts: list[DataBurst],
    meta: SubjectMeta,
    config: PipelineConfig,
    dumps: tuple[str, ...] = (),
) -> tuple[SubjectReport, dict[str, list[str]]]:
    for b in bursts:
        if b.n_points != config.N or b.n_dims != config.D:
            raise ValidationError(
                f"burst {b.burst_index} of subject {subject_id} is "
                f"{b.n_points}x{b.n_dims}, config expects {config.N}x{config.D}"
            )
    dump_rows: dict[str, list[str]] = {k: [] for k in dumps}

    scaled: list[DataBurst] = []
    factors: list[np.ndarray] = []
    for b in bursts:
        sb, div = prescale_burst(b)
        scaled.append(sb)
        factors.append(div)

    stride = config.stride_n
    pair_positions = [(t - stride, t) for t in range(stride, len(scaled))]
    counts = config.zoom_point_counts()
    n_levels = len(counts)

    frames: list[FrameResult] = []
    if pair_positions:
        # normalization and ranking state for every burst at every level
        state_cache: dict[tuple[int, int], FrameLevelState] = {}
        from .zoomout import aggregate

        for b in scaled:
            cur = b
            for li in range(n_levels):
                if li > 0:
                    cur = aggregate(cur, config.aggregation_factor)
                state_cache[(b.burst_index, li)] = frame_level_state(cur, config)

        # one batched root solve across every (pair, level)
        problems: list[tuple[int, int, np.ndarray, np.ndarray]] = []
        for pi, (p0, p1) in enumerate(pair_positions):
            for li in range(n_levels):
                st_prev = state_cache[(scaled[p0].burst_index, li)]
                st_cur = state_cache[(scaled[p1].burst_index, li)]
                valid = ~(st_prev.unfittable | st_cur.unfittable)
                dh = st_cur.borda.H - st_prev.borda.H
                dh[~valid, :] = 0.0
                problems.append((pi, li, st_cur.borda.R, dh))
        r_all = np.concatenate([p[2] for p in problems], axis=1)
        dh_all = np.concatenate([p[3] for p in problems], axis=1)
        roots_all = solve_roots(r_all, dh_all, config)
        roots_map = {}
        offset = 0
        for pi, li, r_mat, _ in problems:
            n_l = r_mat.shape[1]
            roots_map[(pi, li)] = roots_all.slice_points(offset, offset + n_l)
            offset += n_l

        histories = None
        rc_records = []
        for pi, (p0, p1) in enumerate(pair_positions):
            outcome = zoom_profile(
                scaled[p0],
                scaled[p1],
                config,
                histories=histories,
                state_cache=state_cache,
                roots_by_level=[roots_map[(pi, li)] for li in range(n_levels)],
            )
            histories = outcome.histories
            fin = outcome.finest
            cls = classify_frame(
                fin.kappa_median, fin.kappa_short, fin.kappa_long, fin.defined, fin.dh.T
            )
            chains = detect_chains(cls.categories, cls.jointly_unstable)
            criticals = critical_chain_lengths(outcome.profile, config)
            rc = residual_curvature(outcome.profile)
            rc_records.append(rc)
            gti_record = gti(rc_records, chains, criticals, config.drop_threshold)
            final_categories = escalate_chain_categories(cls.categories, chains, *criticals)

            partial = sorted(
                {
                    d
                    for lv in outcome.profile.levels
                    for d in np.nonzero(~lv.valid_dims)[0].tolist()
                }
            )
            cur_idx = scaled[p1].burst_index
            frames.append(
                FrameResult(
                    previous_burst_index=scaled[p0].burst_index,
                    current_burst_index=cur_idx,
                    dt_span=stride * scaled[p1].dt,
                    datum=outcome.current_state.datum,
                    datum_residual=outcome.current_state.datum_residual,
                    rc=rc,
                    critical_short=criticals[0],
                    critical_long=criticals[1],
                    gti=gti_record,
                    categories=final_categories,
                    chains=chains,
                    mixed_disjoint_points=np.nonzero(cls.mixed_disjoint)[0].tolist(),
                    fallback_fraction=outcome.fallback_fraction,
                    fit_excluded_fraction=outcome.current_state.fit_excluded_fraction,
                    margin_zeroed_fraction=outcome.current_state.margin_zeroed_fraction,
                    partial_dims=partial,
                    levels=outcome.profile.levels,
                    short_unstable=cls.short_unstable,
                    long_unstable=cls.long_unstable,
                )
            )
            _collect_dumps(
                dump_rows, subject_id, cur_idx, outcome, cls, final_categories, config
            )

    return _assemble_report(subject_id, bursts, meta, factors, frames, config), dump_rows


def _collect_dumps(rows, subject_id, burst_index, outcome, cls, categories, config):
    fin = outcome.finest
    if "borda" in rows:
        st = outcome.current_state
        for d in range(config.D):
            for a in range(st.borda.H.shape[1]):
                rows["borda"].append(
                    f"{subject_id},{burst_index},{d},{a},"
                    f"{_num(st.borda.H[d, a])},{_num(st.borda.R[d, a])},{_num(fin.dh[d, a])}"
                )
    if "roots" in rows:
        n, nroots, _ = fin.roots.roots.shape
        for a in range(n):
            for ri in range(nroots):
                vec = ",".join(_num(v) for v in fin.roots.roots[a, ri])
                conv = _CONV_NAMES[int(fin.roots.convergence[a, ri])]
                rows["roots"].append(f"{subject_id},{burst_index},{a},{ri},{vec},{conv}")
    if "pdi" in rows:
        for a in range(categories.shape[0]):
            short = ";".join(map(str, np.nonzero(cls.short_unstable[a])[0].tolist()))
            long_ = ";".join(map(str, np.nonzero(cls.long_unstable[a])[0].tolist()))
            rows["pdi"].append(
                f"{subject_id},{burst_index},{a},{categories[a]},{short},{long_},"
                f"{int(cls.mode_mixity[a])},{int(cls.mixed_disjoint[a])}"
            )
    if "zoom" in rows:
        for li, lv in enumerate(outcome.profile.levels):
            per_dim = ",".join(_num(v) for v in lv.kappa_per_dim)
            rows["zoom"].append(
                f"{subject_id},{burst_index},{li},{lv.point_count},"
                f"{_num(lv.x_coordinate)},{_num(lv.kappa_combined)},"
                f"{_num(lv.inv_ltilde_combined)},{_num(lv.inv_l_combined)},{per_dim}"
            )


def _assemble_report(subject_id, bursts, meta, factors, frames, config):
    d = config.D
    per_dim_values: list[list[float]] = [[] for _ in range(d)]
    for fr in frames:
        for dim in range(d):
            vals = fr.rc.rc[dim]
            per_dim_values[dim].extend(vals[np.isfinite(vals)].tolist())
    rc_values_per_dim = [np.array(v) for v in per_dim_values]
    rc_median_per_dim = np.array(
        [float(np.median(v)) if v.size else float("nan") for v in rc_values_per_dim]
    )
    pooled = np.concatenate(rc_values_per_dim) if rc_values_per_dim else np.empty(0)
    rc_combined_median = float(np.median(pooled)) if pooled.size else float("nan")

    histogram: dict[int, int] = {}
    for fr in frames:
        for cat, count in fr.pdi_counts.items():
            histogram[cat] = histogram.get(cat, 0) + count

    boxplots = [
        boxplot_stats(v) if v.size else None for v in rc_values_per_dim
    ]
    modulation_iqr = [b.iqr if b is not None else None for b in boxplots]

    amplitudes: dict[int, float] = {}
    if meta.com_displacement:
        for fr in frames:
            com = meta.com_displacement.get(fr.current_burst_index)
            if com is None or not np.all(np.isfinite(fr.rc.rc_per_dim)):
                continue
            amplitudes[fr.current_burst_index] = energy_exchange_amplitude(
                fr.rc.rc_per_dim, com, meta.mass
            )

    return SubjectReport(
        subject_id=subject_id,
        group_label=bursts[0].group_label if bursts else "unlabeled",
        mass=meta.mass,
        mass_defaulted=meta.mass_defaulted,
        n_bursts=len(bursts),
        prescale_factors=factors,
        frames=frames,
        rc_values_per_dim=rc_values_per_dim,
        rc_median_per_dim=rc_median_per_dim,
        rc_combined_median=rc_combined_median,
        pdi_histogram=histogram,
        boxplot_per_dim=boxplots,
        modulation_iqr_per_dim=modulation_iqr,
        energy_exchange_amplitudes=amplitudes,
        injection=meta.injection,
    )


_DUMP_HEADERS = {
    "borda": "subject_id,burst_index,dimension,point,H,R,dH",
    "pdi": "subject_id,burst_index,point,category,short_dims,long_dims,mode_mixity,mixed_disjoint",
    "zoom": "subject_id,burst_index,level,point_count,x_coordinate,kappa_combined,"
            "inv_ltilde_combined,inv_l_combined",
}


def _dump_header(kind: str, config: PipelineConfig) -> str:
    if kind == "roots":
        dims = ",".join(f"x_{name}" for name in config.dimension_names())
        return f"subject_id,burst_index,point,root_index,{dims},convergence"
    header = _DUMP_HEADERS[kind]
    if kind == "zoom":
        header += "," + ",".join(f"kappa_{name}" for name in config.dimension_names())
    return header


def analyze_dataset(
    dataset: Dataset,
    config: PipelineConfig,
    dumps: tuple[str, ...] = (),
) -> AnalysisResult:
    """Analyze every subject of a dataset, optionally collecting dump tables."""
    for kind in dumps:
        if kind not in DUMP_KINDS:
            raise ValidationError(f"unknown dump kind {kind!r}; choose from {DUMP_KINDS}")
    subjects = dataset.subjects()
    jobs = [
        (sid, dataset.bursts_for(sid), dataset.metadata.get(sid, SubjectMeta()))
        for sid in subjects
    ]

    max_workers = 1
    env = os.environ.get("DDP_MAX_PARALLEL_SUBJECTS", "").strip()
    if env:
        try:
            max_workers = max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer DDP_MAX_PARALLEL_SUBJECTS=%r", env)

    def run(job):
        sid, bursts, meta = job
        return analyze_subject(sid, bursts, meta, config, dumps=dumps)

    if max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    reports = [rep for rep, _ in results]
    dump_tables: dict[str, str] = {}
    for kind in dumps:
        lines = [_dump_header(kind, config)]
        for _, rows in results:
            lines.extend(rows[kind])
        dump_tables[kind] = "\n".join(lines) + "\n"
    return AnalysisResult(subjects=reports, dumps=dump_tables)
