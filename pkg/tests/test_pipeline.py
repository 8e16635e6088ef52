import json
import os

import numpy as np
import pytest

from ddp import (
    DataBurst,
    Dataset,
    PipelineConfig,
    ValidationError,
    analyze_dataset,
    synthesize,
)
from ddp.cli import main
from ddp.report import report_json


def test_analyze_frame_count_matches_pairs():
    cfg = PipelineConfig(seed=13, N=27)
    ds = synthesize("stable", cfg, n_bursts=5)
    res = analyze_dataset(ds, cfg)
    assert len(res.subjects) == 1
    assert len(res.subjects[0].frames) == 4


def test_analyze_respects_stride():
    cfg = PipelineConfig(seed=13, N=27, stride_n=2)
    ds = synthesize("stable", cfg, n_bursts=5)
    res = analyze_dataset(ds, cfg)
    frames = res.subjects[0].frames
    assert len(frames) == 3
    assert frames[0].previous_burst_index == 0
    assert frames[0].current_burst_index == 2
    assert frames[0].dt_span == pytest.approx(2.0)


def test_analyze_subject_without_history_reports_empty():
    cfg = PipelineConfig(seed=1, N=27)
    ds = synthesize("stable", cfg, n_bursts=1)
    res = analyze_dataset(ds, cfg)
    rep = res.subjects[0]
    assert rep.frames == []
    assert rep.pdi_histogram == {}
    assert np.all(np.isnan(rep.rc_median_per_dim))


def test_analyze_rejects_wrong_burst_size():
    cfg = PipelineConfig(N=81)
    ds = Dataset(bursts=[DataBurst(values=np.ones((27, 4)), burst_index=b) for b in range(2)])
    with pytest.raises(ValidationError):
        analyze_dataset(ds, cfg)


def test_prescale_factors_recorded_per_burst():
    cfg = PipelineConfig(seed=3, N=27)
    ds = synthesize("stable", cfg, n_bursts=3)
    rep = analyze_dataset(ds, cfg).subjects[0]
    assert len(rep.prescale_factors) == 3
    for div, burst in zip(rep.prescale_factors, ds.bursts):
        np.testing.assert_allclose(div, np.max(np.abs(burst.values), axis=0))


def test_energy_amplitudes_when_com_present():
    cfg = PipelineConfig(seed=9, N=27)
    ds = synthesize("stable", cfg, n_bursts=3, include_com=True)
    rep = analyze_dataset(ds, cfg).subjects[0]
    assert set(rep.energy_exchange_amplitudes) == {1, 2}
    assert all(v >= 0.0 for v in rep.energy_exchange_amplitudes.values())


def test_parallel_env_matches_serial(monkeypatch):
    cfg = PipelineConfig(seed=17, N=27)
    ds = synthesize("stable", cfg, n_bursts=3, n_subjects=4)
    serial = report_json(analyze_dataset(ds, cfg).subjects, None, cfg)
    monkeypatch.setenv("DDP_MAX_PARALLEL_SUBJECTS", "3")
    parallel = report_json(analyze_dataset(ds, cfg).subjects, None, cfg)
    assert serial == parallel


def test_dump_tables_shapes():
    cfg = PipelineConfig(seed=23, N=27)
    ds = synthesize("stable", cfg, n_bursts=3)
    res = analyze_dataset(ds, cfg, dumps=("borda", "roots", "pdi", "zoom"))
    n_pairs = 2
    borda = res.dumps["borda"].strip().splitlines()
    assert len(borda) - 1 == n_pairs * cfg.D * cfg.N
    roots = res.dumps["roots"].strip().splitlines()
    assert len(roots) - 1 == n_pairs * cfg.N * 2 ** cfg.D
    pdi = res.dumps["pdi"].strip().splitlines()
    assert len(pdi) - 1 == n_pairs * cfg.N
    zoom = res.dumps["zoom"].strip().splitlines()
    assert len(zoom) - 1 == n_pairs * 2  # levels 27 and 9
    assert borda[0].startswith("subject_id,burst_index,dimension,point")


def test_dump_unknown_kind_rejected():
    cfg = PipelineConfig(seed=23, N=27)
    ds = synthesize("stable", cfg, n_bursts=2)
    with pytest.raises(ValidationError):
        analyze_dataset(ds, cfg, dumps=("everything",))


# --- command line ---------------------------------------------------------


def test_cli_synth_analyze_stats_round_trip(tmp_path, capsys):
    corpus_a = tmp_path / "control"
    corpus_b = tmp_path / "post"
    assert main(["synth", "--profile", "stable", "--seed", "3", "--out", str(corpus_a),
                 "--subjects", "2", "--bursts", "3", "--burst-len", "27",
                 "--group", "control", "--prefix", "CTL"]) == 0
    assert main(["synth", "--profile", "stable", "--seed", "4", "--out", str(corpus_b),
                 "--subjects", "2", "--bursts", "3", "--burst-len", "27",
                 "--group", "post_aclr", "--prefix", "PST"]) == 0
    assert len(list(corpus_a.glob("*.xyzm"))) == 2

    # one subject per file; merge both corpora in a single directory
    merged = tmp_path / "all"
    merged.mkdir()
    for f in list(corpus_a.glob("*.xyzm")):
        (merged / f"a_{f.name}").write_text(f.read_text())
    for f in list(corpus_b.glob("*.xyzm")):
        (merged / f"b_{f.name}").write_text(f.read_text())

    report_path = tmp_path / "report.json"
    assert main(["analyze", "--input", str(merged), "--burst-len", "27",
                 "--out", str(report_path), "--dump", "zoom"]) == 0
    assert report_path.exists()
    assert (tmp_path / "dump_zoom.csv").exists()
    doc = json.loads(report_path.read_text())
    assert len(doc["subjects"]) == 4
    assert doc["group_stats"] is not None

    stats_csv = tmp_path / "stats.csv"
    assert main(["stats", "--reports", str(tmp_path), "--groups", "control,post_aclr",
                 "--format", "csv", "--out", str(stats_csv)]) == 0
    text = stats_csv.read_text()
    assert text.startswith("group,dimension,")
    assert "control," in text and "post_aclr," in text
    capsys.readouterr()


def test_cli_synth_burst_writes_injections(tmp_path):
    out = tmp_path / "c"
    assert main(["synth", "--profile", "burst", "--seed", "5", "--out", str(out),
                 "--bursts", "4", "--burst-len", "27"]) == 0
    inj = json.loads((out / "injections.json").read_text())
    assert list(inj) == ["SYN000"]
    assert inj["SYN000"]["burst_index"] == 2


def test_cli_analyze_missing_input(tmp_path, capsys):
    assert main(["analyze", "--input", str(tmp_path / "nope.xyzm")]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["synth", "--profile", "drift", "--seed", "8", "--out", str(a),
          "--bursts", "3", "--burst-len", "27"])
    main(["synth", "--profile", "drift", "--seed", "8", "--out", str(b),
          "--bursts", "3", "--burst-len", "27"])
    fa = sorted(a.glob("*.xyzm"))[0]
    fb = sorted(b.glob("*.xyzm"))[0]
    assert fa.read_bytes() == fb.read_bytes()
