import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddp import (
    GroupUnavailable,
    PipelineConfig,
    analyze_dataset,
    boxplot_stats,
    emit,
    energy_exchange_amplitude,
    group_stats,
    percent_change,
    synthesize,
)
from ddp.report import SubjectPool, dim_stats, report_json, roots_table_csv

from oracles import quantile_oracle

CFG = PipelineConfig()


def test_boxplot_quartiles_linear_interpolation():
    b = boxplot_stats([1.0, 2.0, 3.0, 4.0])
    assert b.q25 == pytest.approx(1.75)
    assert b.q75 == pytest.approx(3.25)
    assert b.q25 == pytest.approx(quantile_oracle([1, 2, 3, 4], 0.25))
    assert b.q75 == pytest.approx(quantile_oracle([1, 2, 3, 4], 0.75))


def test_boxplot_constant_sequence():
    b = boxplot_stats([2.0, 2.0, 2.0])
    assert b.q25 == b.q75 == 2.0
    assert b.whisker_low == b.whisker_high == 2.0
    assert b.outliers == ()


def test_boxplot_rejects_empty():
    with pytest.raises(ValueError):
        boxplot_stats([])


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=40))
@settings(max_examples=60, deadline=None)
def test_boxplot_whisker_width_and_outliers(values):
    b = boxplot_stats(values)
    v = np.asarray(values, dtype=float)
    sigma = float(np.std(v))
    assert (b.whisker_high - b.whisker_low) == pytest.approx(5.4 * sigma, abs=1e-9)
    outside = sorted(v[(v < b.whisker_low) | (v > b.whisker_high)])
    assert list(b.outliers) == [pytest.approx(x) for x in outside]
    assert b.q25 <= b.q75


def test_dim_stats_worked_example():
    st_ = dim_stats([0.1, 0.5, 3.5, 4.0], threshold=3.0, bin_edges=(0.3, 1.5, 3.0))
    assert st_.median == pytest.approx(2.0)
    assert st_.percent_above == pytest.approx(50.0)
    assert st_.bin_counts == (1, 1, 0, 2)


def test_dim_stats_singleton():
    st_ = dim_stats([0.3], threshold=3.0, bin_edges=(0.3, 1.5, 3.0))
    assert st_.median == pytest.approx(0.3)
    assert st_.percent_above == 0.0
    assert st_.bin_counts == (1, 0, 0, 0)


def test_dim_stats_rejects_empty():
    with pytest.raises(GroupUnavailable):
        dim_stats([], threshold=1.0, bin_edges=(0.3,))


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=60))
@settings(max_examples=60, deadline=None)
def test_dim_stats_bins_partition(values):
    st_ = dim_stats(values, threshold=3.0, bin_edges=(0.3, 1.5, 3.0))
    assert sum(st_.bin_counts) == st_.n == len(values)
    assert 0.0 <= st_.percent_above <= 100.0
    assert min(values) <= st_.median <= max(values)


def _pool(label, values_per_dim):
    return SubjectPool(
        subject_id=f"{label}-x",
        group_label=label,
        rc_values_per_dim=[np.asarray(v, dtype=float) for v in values_per_dim],
    )


def test_group_stats_medians_and_change():
    cfg = PipelineConfig(D=2)
    ctrl = _pool("control", [[0.364, 0.364], [0.3, 0.3]])
    post = _pool("post_aclr", [[0.480, 0.480], [0.3, 0.3]])
    gs = group_stats([ctrl, post], cfg, threshold=3.0)
    assert gs.groups["control"].per_dim[0].median == pytest.approx(0.364)
    assert gs.groups["post_aclr"].per_dim[0].median == pytest.approx(0.480)
    change = gs.percent_change_per_dim[0]
    assert change == pytest.approx(31.868131868131865, rel=1e-12)
    assert abs(change - 32.05) < 0.5


def test_group_stats_threshold_from_overall_median():
    cfg = PipelineConfig(D=1, rc_threshold_multiplier=10.0)
    gs = group_stats([_pool("control", [[0.2, 0.3, 0.4]])], cfg)
    assert gs.threshold == pytest.approx(3.0)


def test_group_stats_empty_group_listed_unavailable():
    cfg = PipelineConfig(D=1)
    gs = group_stats(
        [_pool("control", [[0.5]]), _pool("post_aclr", [[]])], cfg, threshold=1.0
    )
    assert "post_aclr" in gs.unavailable
    assert "control" in gs.groups
    assert gs.percent_change_per_dim is None


def test_group_stats_nothing_to_pool():
    with pytest.raises(GroupUnavailable):
        group_stats([_pool("control", [[]])], PipelineConfig(D=1))


def test_percent_change_formula():
    assert percent_change(0.364, 0.480) == pytest.approx(31.868131868131865)


def test_energy_amplitude_direct():
    assert energy_exchange_amplitude([1, 0, 0, 0], [2, 0, 0, 0], 2.0) == pytest.approx(1.0)


def test_energy_amplitude_orthogonal():
    assert energy_exchange_amplitude([1, 0, 0, 0], [0, 1, 0, 0], 2.0) == 0.0


def test_energy_amplitude_mass_normalization():
    a1 = energy_exchange_amplitude([1, 2, 3, 4], [4, 3, 2, 1], 1.0)
    a2 = energy_exchange_amplitude([1, 2, 3, 4], [4, 3, 2, 1], 2.0)
    assert a2 == pytest.approx(a1 / 2.0)


@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
    st.floats(0.1, 10.0),
    st.floats(0.1, 10.0),
)
@settings(max_examples=60, deadline=None)
def test_energy_amplitude_homogeneity(rc, com, scale, mass):
    base = energy_exchange_amplitude(rc, com, mass)
    scaled = energy_exchange_amplitude([scale * x for x in rc], com, mass)
    assert scaled == pytest.approx(scale * base, rel=1e-9, abs=1e-12)
    heavier = energy_exchange_amplitude(rc, com, mass * scale)
    assert heavier == pytest.approx(base / scale, rel=1e-9, abs=1e-12)


def test_energy_amplitude_length_mismatch():
    with pytest.raises(ValueError):
        energy_exchange_amplitude([1, 2], [1, 2, 3], 1.0)


@pytest.fixture(scope="module")
def small_analysis():
    cfg = PipelineConfig(seed=21, N=27)
    ds = synthesize("stable", cfg, n_bursts=3, n_subjects=2, group_label="control")
    ds2 = synthesize(
        "stable", PipelineConfig(seed=22, N=27), n_bursts=3, n_subjects=2,
        group_label="post_aclr", subject_prefix="PST",
    )
    merged = type(ds)(bursts=ds.bursts + ds2.bursts, metadata={**ds.metadata, **ds2.metadata})
    result = analyze_dataset(merged, cfg)
    stats = group_stats(result.subjects, cfg)
    return cfg, result, stats


def test_emit_json_deterministic(tmp_path, small_analysis):
    cfg, result, stats = small_analysis
    p1 = emit(result.subjects, stats, "json", tmp_path / "a.json", cfg)[0]
    p2 = emit(result.subjects, stats, "json", tmp_path / "b.json", cfg)[0]
    assert p1.read_bytes() == p2.read_bytes()


def test_emit_json_round_trips(small_analysis):
    cfg, result, stats = small_analysis
    text = report_json(result.subjects, stats, cfg)
    doc = json.loads(text)
    assert doc["schema_version"] == "1.0"
    rep = result.subjects[0]
    frame = doc["subjects"][0]["frames"][0]
    original = rep.frames[0].rc.rc_combined
    assert frame["rc_combined"] == pytest.approx(original, rel=1e-15)
    # every serialized float survives a parse round trip bit for bit
    assert json.loads(json.dumps(doc)) == doc


def test_emit_csv_row_count(tmp_path, small_analysis):
    cfg, result, stats = small_analysis
    paths = emit(result.subjects, stats, "csv", tmp_path, cfg)
    roots_csv = next(p for p in paths if p.name == "rc_roots.csv")
    lines = roots_csv.read_text().strip().splitlines()
    n_pairs = sum(len(r.frames) for r in result.subjects)
    assert len(lines) - 1 == n_pairs * cfg.D * 2 ** cfg.D


def test_emit_rejects_unknown_format(tmp_path, small_analysis):
    cfg, result, stats = small_analysis
    with pytest.raises(ValueError):
        emit(result.subjects, stats, "parquet", tmp_path, cfg)


def test_roots_table_has_explicit_nan_for_undefined(small_analysis):
    import copy

    cfg, result, _ = small_analysis
    rep = copy.deepcopy(result.subjects[0])
    rep.frames[0].rc.rc[0, :] = np.nan
    text = roots_table_csv([rep])
    assert ",nan" in text


def test_json_has_no_bare_nan(small_analysis):
    cfg, result, stats = small_analysis
    rep = result.subjects[0]
    text = report_json([rep], stats, cfg)
    json.loads(text)  # strict JSON: would fail on NaN/Infinity tokens
