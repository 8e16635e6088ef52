"""Command-line interface.

    ddp analyze --input <path|dir> [--stride n] [--burst-len N] [--dims D]
                [--out report.json] [--format json|csv]
                [--dump borda|roots|pdi|zoom]
    ddp synth   --profile stable|burst|drift --seed S --out corpus/
                [--subjects K] [--bursts B] [--group LABEL] [--com]
    ddp stats   --reports <dir> [--groups control,post_aclr]
                [--format csv|json] [--out PATH]

DDP_MAX_PARALLEL_SUBJECTS caps subject-level parallelism during analyze.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import DdpError
from .ingest import (
    GROUP_LABELS,
    SYNTH_PROFILES,
    Dataset,
    emit_xyzm,
    parse_xyzm_file,
    synthesize,
)
from .pipeline import DUMP_KINDS, analyze_dataset
from .report import (
    emit,
    group_stats,
    group_stats_csv,
    _group_stats_json,
    subject_pools_from_json,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddp", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="analyze xyzm input and emit a report")
    p_an.add_argument("--input", required=True, help="xyzm file or directory of .xyzm files")
    p_an.add_argument("--burst-len", type=int, default=81, dest="burst_len")
    p_an.add_argument("--dims", type=int, default=4)
    p_an.add_argument("--stride", type=int, default=1)
    p_an.add_argument("--out", default="report.json")
    p_an.add_argument("--format", choices=("json", "csv"), default="json")
    p_an.add_argument("--dump", action="append", choices=DUMP_KINDS, default=[],
                      help="also write a per-point debug table (repeatable)")

    p_sy = sub.add_parser("synth", help="write a deterministic synthetic corpus")
    p_sy.add_argument("--profile", required=True, choices=SYNTH_PROFILES)
    p_sy.add_argument("--seed", type=int, default=0)
    p_sy.add_argument("--out", required=True, help="output directory")
    p_sy.add_argument("--subjects", type=int, default=1)
    p_sy.add_argument("--bursts", type=int, default=10)
    p_sy.add_argument("--burst-len", type=int, default=81, dest="burst_len")
    p_sy.add_argument("--dims", type=int, default=4)
    p_sy.add_argument("--group", choices=GROUP_LABELS, default="unlabeled")
    p_sy.add_argument("--prefix", default="SYN", help="subject id prefix")
    p_sy.add_argument("--com", action="store_true",
                      help="include synthetic center-of-mass displacement")

    p_st = sub.add_parser("stats", help="pool subject reports into group statistics")
    p_st.add_argument("--reports", required=True, help="directory of report .json files")
    p_st.add_argument("--groups", default="control,post_aclr",
                      help="comma-separated group labels to include")
    p_st.add_argument("--format", choices=("csv", "json"), default="csv")
    p_st.add_argument("--out", default=None, help="output path (default: stdout)")
    return parser


def _load_inputs(path_str: str, config: PipelineConfig) -> Dataset:
    path = Path(path_str)
    if path.is_dir():
        files = sorted(path.glob("*.xyzm"))
        if not files:
            raise DdpError(f"no .xyzm files in {path}")
    else:
        if not path.exists():
            raise DdpError(f"input {path} does not exist")
        files = [path]
    merged_bursts = []
    merged_meta = {}
    next_index: dict[str, int] = {}
    for f in files:
        ds = parse_xyzm_file(f, config)
        for sid in ds.subjects():
            base = next_index.get(sid)
            for burst in ds.bursts_for(sid):
                if base is not None:
                    # subject continues across files: shift indices to stay increasing
                    burst.burst_index = base + burst.burst_index + 1
                merged_bursts.append(burst)
            next_index[sid] = merged_bursts[-1].burst_index
            meta = ds.metadata[sid]
            if sid in merged_meta:
                old = merged_meta[sid]
                old.com_displacement.update(meta.com_displacement)
                if not meta.mass_defaulted:
                    old.mass, old.mass_defaulted = meta.mass, False
            else:
                merged_meta[sid] = meta
    return Dataset(bursts=merged_bursts, metadata=merged_meta)


def _cmd_analyze(args) -> int:
    config = PipelineConfig(D=args.dims, N=args.burst_len, stride_n=args.stride)
    dataset = _load_inputs(args.input, config)
    result = analyze_dataset(dataset, config, dumps=tuple(dict.fromkeys(args.dump)))
    labeled = {r.group_label for r in result.subjects} - {"unlabeled"}
    stats = None
    if labeled:
        stats = group_stats(result.subjects, config)
    written = emit(result.subjects, stats, args.format, args.out, config)
    out_dir = Path(args.out).parent if Path(args.out).suffix else Path(args.out)
    for kind, text in result.dumps.items():
        dump_path = out_dir / f"dump_{kind}.csv"
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        dump_path.write_text(text, encoding="utf-8")
        written.append(dump_path)
    for path in written:
        print(path)
    return 0


def _cmd_synth(args) -> int:
    config = PipelineConfig(D=args.dims, N=args.burst_len, seed=args.seed)
    dataset = synthesize(
        args.profile,
        config,
        n_bursts=args.bursts,
        n_subjects=args.subjects,
        group_label=args.group,
        include_com=args.com,
        subject_prefix=args.prefix,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    injections = {}
    for sid in dataset.subjects():
        single = Dataset(
            bursts=dataset.bursts_for(sid),
            metadata={sid: dataset.metadata[sid]},
        )
        path = out_dir / f"{sid}.xyzm"
        path.write_text(emit_xyzm(single), encoding="utf-8")
        print(path)
        inj = dataset.metadata[sid].injection
        if inj is not None:
            injections[sid] = {
                "burst_index": inj.burst_index,
                "time_index": inj.time_index,
                "dimension": inj.dimension,
                "drop_fraction": inj.drop_fraction,
            }
    if injections:
        inj_path = out_dir / "injections.json"
        inj_path.write_text(json.dumps(injections, indent=2) + "\n", encoding="utf-8")
        print(inj_path)
    return 0


def _cmd_stats(args) -> int:
    wanted = [g.strip() for g in args.groups.split(",") if g.strip()]
    for g in wanted:
        if g not in GROUP_LABELS:
            raise DdpError(f"unknown group {g!r}; choose from {GROUP_LABELS}")
    reports_dir = Path(args.reports)
    files = sorted(reports_dir.glob("*.json")) if reports_dir.is_dir() else [reports_dir]
    if not files:
        raise DdpError(f"no report .json files in {reports_dir}")
    pools = []
    config = None
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        if config is None and "config" in doc:
            cfg = doc["config"]
            config = PipelineConfig(
                D=cfg["D"], N=cfg["N"], stride_n=cfg["stride_n"],
                aggregation_factor=cfg["aggregation_factor"],
                drop_threshold=cfg["drop_threshold"],
                rc_threshold_multiplier=cfg["rc_threshold_multiplier"],
                bin_edges=tuple(cfg["bin_edges"]),
                epsilon_denominator=cfg["epsilon_denominator"],
                refinement_max_iter=cfg["refinement_max_iter"],
                refinement_tol=cfg["refinement_tol"],
                seed=cfg["seed"],
            )
        pools.extend(p for p in subject_pools_from_json(doc) if p.group_label in wanted)
    if config is None:
        config = PipelineConfig()
    if not pools:
        raise DdpError(f"no subjects in groups {wanted} across {len(files)} report files")
    stats = group_stats(pools, config)
    if args.format == "csv":
        text = group_stats_csv(stats, config)
    else:
        text = json.dumps(_group_stats_json(stats), indent=2, allow_nan=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "stats":
            return _cmd_stats(args)
    except DdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
