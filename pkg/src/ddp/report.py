"""Subject- and group-level statistics plus JSON/CSV emission.

Conventions, stated once so outputs are reproducible:

* quantiles interpolate linearly between order statistics
* boxplot whiskers sit at mean +/- 2.7 population standard deviations and
  outliers are exactly the values outside them
* histogram bins are right-closed: (-inf, e1], (e1, e2], ..., (ek, inf),
  so the top bin agrees with a strict "greater than threshold" count
* group medians pool every residual-curvature root value of the group;
  the combined entry pools across dimensions as well
* undefined statistics are emitted as null, never as zero
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, NamedTuple

import numpy as np

from .config import PipelineConfig
from .errors import GroupUnavailable
from .ingest import GROUP_LABELS, Injection

if TYPE_CHECKING:
    from .curvature import Chain
    from .zoomout import GtiRecord, ResidualCurvatureRecord, ZoomLevel

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class BoxplotStats:
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


def boxplot_stats(values) -> BoxplotStats:
    """Box, whiskers and outliers of a value collection."""
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("boxplot_stats needs at least one finite value")
    q25, q75 = np.percentile(v, [25.0, 75.0])
    mu = float(np.mean(v))
    sigma = float(np.std(v))
    lo, hi = mu - 2.7 * sigma, mu + 2.7 * sigma
    outliers = tuple(float(x) for x in np.sort(v[(v < lo) | (v > hi)]))
    return BoxplotStats(
        q25=float(q25), q75=float(q75),
        whisker_low=lo, whisker_high=hi,
        outliers=outliers,
    )


def percent_change(reference: float, value: float) -> float:
    """(value - reference) / reference in percent."""
    return (value - reference) / reference * 100.0


def energy_exchange_amplitude(rc_vector, com_displacement, mass: float) -> float:
    """|rc . com| / mass: mass-normalized energy exchange amplitude."""
    rc = np.asarray(rc_vector, dtype=float)
    com = np.asarray(com_displacement, dtype=float)
    if rc.shape != com.shape:
        raise ValueError("rc vector and com displacement lengths differ")
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    return float(abs(np.dot(rc, com)) / mass)


@dataclass(frozen=True)
class DimStats:
    n: int
    median: float
    percent_above: float
    bin_counts: tuple[int, ...]


def dim_stats(values, threshold: float, bin_edges) -> DimStats:
    """Median, strict percent-above-threshold and right-closed bin counts."""
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise GroupUnavailable("no finite values to summarize")
    edges = list(bin_edges)
    counts = [int(np.sum(v <= edges[0]))]
    for lo, hi in zip(edges, edges[1:]):
        counts.append(int(np.sum((v > lo) & (v <= hi))))
    counts.append(int(np.sum(v > edges[-1])))
    return DimStats(
        n=int(v.size),
        median=float(np.median(v)),
        percent_above=float(np.sum(v > threshold) / v.size * 100.0),
        bin_counts=tuple(counts),
    )


class SubjectPool(NamedTuple):
    """The minimum a group aggregation needs to know about one subject."""

    subject_id: str
    group_label: str
    rc_values_per_dim: list[np.ndarray]


@dataclass
class GroupSlice:
    per_dim: list[DimStats | None]
    combined: DimStats
    n_subjects: int


@dataclass
class GroupStats:
    threshold: float
    bin_edges: tuple[float, ...]
    groups: dict[str, GroupSlice]
    unavailable: list[str]
    percent_change_per_dim: list[float | None] | None
    percent_change_combined: float | None


def group_stats(
    reports: Iterable,
    config: PipelineConfig,
    threshold: float | None = None,
) -> GroupStats:
    """Group-level residual-curvature statistics.

    Pools every rc root value per dimension per group.  The default
    threshold is rc_threshold_multiplier times the overall median of all
    pooled values (across groups and dimensions); pass ``threshold`` to pin
    it.  Percent change compares post_aclr medians against control when
    both groups are present.  Raises GroupUnavailable when nothing at all
    can be pooled; groups that are merely empty are listed as unavailable.
    """
    pools: dict[str, list[list[np.ndarray]]] = {}
    subject_counts: dict[str, int] = {}
    for rep in reports:
        label = rep.group_label
        per_dim = [np.asarray(v, dtype=float) for v in rep.rc_values_per_dim]
        slot = pools.setdefault(label, [[] for _ in range(config.D)])
        for d in range(config.D):
            vals = per_dim[d] if d < len(per_dim) else np.empty(0)
            slot[d].append(vals[np.isfinite(vals)])
        subject_counts[label] = subject_counts.get(label, 0) + 1

    merged: dict[str, list[np.ndarray]] = {
        label: [np.concatenate(cols) if cols else np.empty(0) for cols in slot]
        for label, slot in pools.items()
    }
    everything = np.concatenate(
        [col for slot in merged.values() for col in slot] or [np.empty(0)]
    )
    if everything.size == 0:
        raise GroupUnavailable("no residual-curvature values in any group")
    if threshold is None:
        threshold = config.rc_threshold_multiplier * float(np.median(everything))

    groups: dict[str, GroupSlice] = {}
    unavailable: list[str] = []
    for label in GROUP_LABELS:
        if label not in merged:
            continue
        slot = merged[label]
        pooled = np.concatenate(slot)
        if pooled.size == 0:
            unavailable.append(label)
            continue
        per_dim: list[DimStats | None] = []
        for col in slot:
            per_dim.append(dim_stats(col, threshold, config.bin_edges) if col.size else None)
        groups[label] = GroupSlice(
            per_dim=per_dim,
            combined=dim_stats(pooled, threshold, config.bin_edges),
            n_subjects=subject_counts[label],
        )

    pc_per_dim: list[float | None] | None = None
    pc_combined: float | None = None
    if "control" in groups and "post_aclr" in groups:
        ctrl, post = groups["control"], groups["post_aclr"]
        pc_per_dim = []
        for c, p in zip(ctrl.per_dim, post.per_dim):
            if c is None or p is None or c.median == 0.0:
                pc_per_dim.append(None)
            else:
                pc_per_dim.append(percent_change(c.median, p.median))
        if ctrl.combined.median != 0.0:
            pc_combined = percent_change(ctrl.combined.median, post.combined.median)

    return GroupStats(
        threshold=float(threshold),
        bin_edges=tuple(config.bin_edges),
        groups=groups,
        unavailable=unavailable,
        percent_change_per_dim=pc_per_dim,
        percent_change_combined=pc_combined,
    )


@dataclass
class FrameResult:
    """Everything the pipeline derives from one frame pair."""

    previous_burst_index: int
    current_burst_index: int
    dt_span: float
    datum: np.ndarray
    datum_residual: np.ndarray
    rc: "ResidualCurvatureRecord"
    critical_short: float
    critical_long: float
    gti: "GtiRecord"
    categories: np.ndarray          # (N,) final categories incl. 8/9
    chains: list["Chain"]
    mixed_disjoint_points: list[int]
    fallback_fraction: float
    fit_excluded_fraction: np.ndarray
    margin_zeroed_fraction: np.ndarray
    partial_dims: list[int]
    levels: list["ZoomLevel"]
    short_unstable: np.ndarray      # (N, D) bool
    long_unstable: np.ndarray       # (N, D) bool

    @property
    def pdi_counts(self) -> dict[int, int]:
        cats, counts = np.unique(self.categories, return_counts=True)
        return {int(c): int(k) for c, k in zip(cats, counts)}


@dataclass
class SubjectReport:
    subject_id: str
    group_label: str
    mass: float
    mass_defaulted: bool
    n_bursts: int
    prescale_factors: list[np.ndarray]
    frames: list[FrameResult]
    rc_values_per_dim: list[np.ndarray]
    rc_median_per_dim: np.ndarray
    rc_combined_median: float
    pdi_histogram: dict[int, int]
    boxplot_per_dim: list[BoxplotStats | None]
    modulation_iqr_per_dim: list[float | None]
    energy_exchange_amplitudes: dict[int, float]
    injection: Injection | None = None


# ---------------------------------------------------------------------------
# serialization


def _clean(x):
    """Floats become JSON-safe: non-finite maps to None."""
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    return x


def _boxplot_json(b: BoxplotStats | None):
    if b is None:
        return None
    return {
        "q25": _clean(b.q25),
        "q75": _clean(b.q75),
        "whisker_low": _clean(b.whisker_low),
        "whisker_high": _clean(b.whisker_high),
        "outliers": _clean(b.outliers),
    }


def _frame_json(fr: FrameResult) -> dict:
    return {
        "previous_burst_index": fr.previous_burst_index,
        "current_burst_index": fr.current_burst_index,
        "dt_span": _clean(fr.dt_span),
        "datum": _clean(fr.datum),
        "datum_residual": _clean(fr.datum_residual),
        "rc_per_dim": _clean(fr.rc.rc_per_dim),
        "rc_combined": _clean(fr.rc.rc_combined),
        "rc_roots": _clean(fr.rc.rc),
        "critical_short": _clean(fr.critical_short),
        "critical_long": _clean(fr.critical_long),
        "gti": {
            "chain_max_length": fr.gti.chain_max_length,
            "critical_short": _clean(fr.gti.critical_short),
            "critical_long": _clean(fr.gti.critical_long),
            "energy_drop_fraction": _clean(fr.gti.energy_drop_fraction),
            "triggered": fr.gti.triggered,
            "imminent": fr.gti.imminent,
        },
        "pdi_counts": {str(k): v for k, v in sorted(fr.pdi_counts.items())},
        "chains": [
            {"start_index": c.start_index, "length": c.length,
             "dimensions": list(c.dimensions)}
            for c in fr.chains
        ],
        "mixed_disjoint_points": list(fr.mixed_disjoint_points),
        "fallback_fraction": _clean(fr.fallback_fraction),
        "fit_excluded_fraction": _clean(fr.fit_excluded_fraction),
        "margin_zeroed_fraction": _clean(fr.margin_zeroed_fraction),
        "partial_dims": list(fr.partial_dims),
        "levels": [
            {
                "point_count": lv.point_count,
                "x_coordinate": _clean(lv.x_coordinate),
                "kappa_per_dim": _clean(lv.kappa_per_dim),
                "kappa_combined": _clean(lv.kappa_combined),
                "inv_ltilde_per_dim": _clean(lv.inv_ltilde_per_dim),
                "inv_ltilde_combined": _clean(lv.inv_ltilde_combined),
                "inv_l_per_dim": _clean(lv.inv_l_per_dim),
                "inv_l_combined": _clean(lv.inv_l_combined),
            }
            for lv in fr.levels
        ],
    }


def subject_json(rep: SubjectReport) -> dict:
    doc = {
        "subject_id": rep.subject_id,
        "group_label": rep.group_label,
        "mass": _clean(rep.mass),
        "mass_defaulted": rep.mass_defaulted,
        "n_bursts": rep.n_bursts,
        "prescale_factors": _clean(rep.prescale_factors),
        "rc_median_per_dim": _clean(rep.rc_median_per_dim),
        "rc_combined_median": _clean(rep.rc_combined_median),
        "rc_values_per_dim": _clean(rep.rc_values_per_dim),
        "pdi_histogram": {str(k): v for k, v in sorted(rep.pdi_histogram.items())},
        "boxplot_per_dim": [_boxplot_json(b) for b in rep.boxplot_per_dim],
        "modulation_iqr_per_dim": _clean(rep.modulation_iqr_per_dim),
        "energy_exchange_amplitudes": {
            str(k): _clean(v) for k, v in sorted(rep.energy_exchange_amplitudes.items())
        },
        "frames": [_frame_json(fr) for fr in rep.frames],
    }
    if rep.injection is not None:
        doc["injection"] = {
            "burst_index": rep.injection.burst_index,
            "time_index": rep.injection.time_index,
            "dimension": rep.injection.dimension,
            "drop_fraction": _clean(rep.injection.drop_fraction),
        }
    return doc


def _group_stats_json(gs: GroupStats | None):
    if gs is None:
        return None
    return {
        "threshold": _clean(gs.threshold),
        "bin_edges": _clean(gs.bin_edges),
        "unavailable": gs.unavailable,
        "groups": {
            label: {
                "n_subjects": sl.n_subjects,
                "per_dim": [
                    None if d is None else {
                        "n": d.n,
                        "median": _clean(d.median),
                        "percent_above": _clean(d.percent_above),
                        "bin_counts": list(d.bin_counts),
                    }
                    for d in sl.per_dim
                ],
                "combined": {
                    "n": sl.combined.n,
                    "median": _clean(sl.combined.median),
                    "percent_above": _clean(sl.combined.percent_above),
                    "bin_counts": list(sl.combined.bin_counts),
                },
            }
            for label, sl in gs.groups.items()
        },
        "percent_change_per_dim": _clean(gs.percent_change_per_dim),
        "percent_change_combined": _clean(gs.percent_change_combined),
    }


def report_json(
    reports: list[SubjectReport],
    stats: GroupStats | None,
    config: PipelineConfig,
) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": _clean(asdict(config)),
        "dimension_names": list(config.dimension_names()),
        "subjects": [subject_json(r) for r in reports],
        "group_stats": _group_stats_json(stats),
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _csv_num(x) -> str:
    v = float(x)
    return repr(v) if math.isfinite(v) else "nan"


def roots_table_csv(reports: list[SubjectReport]) -> str:
    """One row per (subject, burst, dimension, root) with its rc value."""
    lines = ["subject_id,group_label,burst_index,dimension,root_index,rc"]
    for rep in reports:
        for fr in rep.frames:
            d, nroots = fr.rc.rc.shape
            for dim in range(d):
                for ri in range(nroots):
                    lines.append(
                        f"{rep.subject_id},{rep.group_label},{fr.current_burst_index},"
                        f"{dim},{ri},{_csv_num(fr.rc.rc[dim, ri])}"
                    )
    return "\n".join(lines) + "\n"


def group_stats_csv(gs: GroupStats, config: PipelineConfig) -> str:
    names = list(config.dimension_names())
    bins = list(gs.bin_edges)
    bin_headers = [f"bin_le_{bins[0]}"] + [
        f"bin_{lo}_to_{hi}" for lo, hi in zip(bins, bins[1:])
    ] + [f"bin_gt_{bins[-1]}"]
    lines = ["group,dimension,n,median,percent_above_threshold," + ",".join(bin_headers)]
    for label, sl in gs.groups.items():
        rows = list(zip(names, sl.per_dim)) + [("combined", sl.combined)]
        for name, st in rows:
            if st is None:
                lines.append(f"{label},{name},0,nan,nan," + ",".join("0" for _ in bin_headers))
            else:
                lines.append(
                    f"{label},{name},{st.n},{_csv_num(st.median)},"
                    f"{_csv_num(st.percent_above)},"
                    + ",".join(str(c) for c in st.bin_counts)
                )
    if gs.percent_change_per_dim is not None:
        for name, pc in zip(names, gs.percent_change_per_dim):
            val = "nan" if pc is None else _csv_num(pc)
            lines.append(f"percent_change,{name},,{val},,{','.join('' for _ in bin_headers)}")
        pc = gs.percent_change_combined
        val = "nan" if pc is None else _csv_num(pc)
        lines.append(f"percent_change,combined,,{val},,{','.join('' for _ in bin_headers)}")
    return "\n".join(lines) + "\n"


def emit(
    reports: list[SubjectReport],
    stats: GroupStats | None,
    fmt: str,
    destination,
    config: PipelineConfig,
) -> list[Path]:
    """Write the analysis to disk; returns the written paths.

    json: one document (destination itself when it ends in .json, else
    report.json inside the destination directory).  csv: rc_roots.csv plus
    group_stats.csv (when stats exist) inside the destination directory.
    Output is deterministic byte for byte for identical inputs.
    """
    dest = Path(destination)
    written: list[Path] = []
    if fmt == "json":
        path = dest if dest.suffix == ".json" else dest / "report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_json(reports, stats, config), encoding="utf-8")
        written.append(path)
    elif fmt == "csv":
        directory = dest.parent if dest.suffix else dest
        directory.mkdir(parents=True, exist_ok=True)
        roots_path = directory / "rc_roots.csv"
        roots_path.write_text(roots_table_csv(reports), encoding="utf-8")
        written.append(roots_path)
        if stats is not None:
            gs_path = directory / "group_stats.csv"
            gs_path.write_text(group_stats_csv(stats, config), encoding="utf-8")
            written.append(gs_path)
    else:
        raise ValueError(f"unknown format {fmt!r}; use json or csv")
    return written


def subject_pools_from_json(doc: dict) -> list[SubjectPool]:
    """Rebuild the minimal per-subject pools a stats run needs."""
    pools = []
    for sub in doc.get("subjects", []):
        values = [
            np.array([v for v in col if v is not None], dtype=float)
            for col in sub.get("rc_values_per_dim", [])
        ]
        pools.append(
            SubjectPool(
                subject_id=sub["subject_id"],
                group_label=sub["group_label"],
                rc_values_per_dim=values,
            )
        )
    return pools
