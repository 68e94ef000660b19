"""Command-line entry point (``bench``).

Output is canonical JSON on stdout; ``--human`` renders tables instead.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .benchmarks import BASELINES, Workspace, create_toy_group, run_baseline
from .config import load_config
from .datamodel import parse_predictions, parse_samples, parse_trials
from .errors import BenchError, UnknownGroup
from .metrics import aggregate_seeds, canonical_json
from .registry import DataViewConfig, FetcherSpec, SequenceFetcher, apply_view
from .splits import cold_split, random_split, record_key, stratified_split, temporal_split
from .synthetic import PlantedPartitionConfig

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


def _fractions(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three fractions: train,valid,test")
    return parts


def _parent(text: str) -> tuple[str, int]:
    name, sep, version = text.rpartition(":")
    if not sep or not name or not version.isdigit():
        raise argparse.ArgumentTypeError("parent must look like NAME:VERSION")
    return name, int(version)


def build_parser() -> argparse.ArgumentParser:
    def shared(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not reset options given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        parser = argparse.ArgumentParser(add_help=False)
        parser.add_argument("--config", help="JSON config file (default: $CTXBENCH_CONFIG)", **kw)
        parser.add_argument("--data-dir", help="workspace directory (default from config)", **kw)
        parser.add_argument("--human", action="store_true", help="print tables instead of JSON", **kw)
        return parser

    common = shared(True)
    p = argparse.ArgumentParser(prog="bench", description="Context-aware benchmark toolkit", parents=[shared(False)])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="train a baseline per seed and evaluate it")
    run.add_argument("--group", required=True)
    run.add_argument("--baseline", required=True, choices=BASELINES)
    run.add_argument("--seeds", type=int, nargs="+", default=[0])
    run.add_argument("--out", help="directory for report files (default: config output)")
    run.add_argument("--submit", action="store_true", help="also record the runs on the leaderboard")

    ev = sub.add_parser("evaluate", parents=[common], help="score a predictions CSV against a group")
    ev.add_argument("--group", required=True)
    ev.add_argument("--preds", required=True, type=Path)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--submit", metavar="SUBMISSION_ID", help="record on the leaderboard under this id")

    toy = sub.add_parser("toy", parents=[common], help="create a planted-partition toy group")
    toy.add_argument("--group", default="toy")
    toy.add_argument("--seed", type=int, default=0)

    reg = sub.add_parser("registry", parents=[common], help="dataset registry")
    rsub = reg.add_subparsers(dest="action", required=True)
    add = rsub.add_parser("add", parents=[common])
    add.add_argument("name")
    add.add_argument("file", type=Path)
    add.add_argument("--schema", help='JSON column map, e.g. {"a": "int"}')
    add.add_argument("--parent", type=_parent)
    view = rsub.add_parser("view", parents=[common], help="show a manifest (and optionally rows)")
    view.add_argument("name")
    view.add_argument("version", nargs="?", default="latest")
    view.add_argument("--rows", type=int, default=0, help="include up to N rows")
    view.add_argument("--filter")
    lin = rsub.add_parser("lineage", parents=[common])
    lin.add_argument("name")
    lin.add_argument("version", nargs="?", default="latest")
    rsub.add_parser("list", parents=[common])
    av = rsub.add_parser("apply-view", parents=[common], help="run a data-view config file")
    av.add_argument("config_file", type=Path)
    av.add_argument("--version", default="latest")
    av.add_argument("--output-name")

    sp = sub.add_parser("split", parents=[common], help="split generation")
    ssub = sp.add_subparsers(dest="action", required=True)
    mk = ssub.add_parser("make", parents=[common])
    mk.add_argument("--kind", required=True, choices=["cold", "temporal", "stratified", "random"])
    mk.add_argument("--input", required=True, type=Path, help="samples CSV, or trials CSV for temporal")
    mk.add_argument("--seed", type=int)
    mk.add_argument("--output", type=Path, help="write the split here instead of stdout")
    mk.add_argument("--fractions", type=_fractions, default=(0.8, 0.1, 0.1))
    mk.add_argument("--cutoff", default="2014-01-01")
    mk.add_argument("--test-fraction", type=float, default=0.9)
    mk.add_argument("--cold-key", choices=["entity", "context"], default="entity")

    srv = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    srv.add_argument("--port", type=int)
    srv.add_argument("--host")
    return p


# ---------------------------------------------------------------------------
# rendering


def _table(rows: list[dict]) -> str:
    if not rows:
        return "(empty)"
    cols = list(rows[0])
    cells = [[_cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()
    return "\n".join([line(cols), line(["-" * w for w in widths])] + [line(r) for r in cells])


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


def _human(obj) -> str:
    if isinstance(obj, list) and all(isinstance(r, dict) for r in obj):
        return _table(obj)
    if isinstance(obj, dict):
        width = max((len(k) for k in obj), default=0)
        return "\n".join(f"{k.ljust(width)}  {_cell(v)}" for k, v in obj.items())
    return str(obj)


def emit(obj, human: bool) -> None:
    if human:
        print(_human(json.loads(obj) if isinstance(obj, str) else obj))
    else:
        print(obj if isinstance(obj, str) else canonical_json(obj))


# ---------------------------------------------------------------------------
# commands


def cmd_run(args, ws: Workspace, cfg) -> int:
    group = ws.group(args.group)
    out = Path(args.out or cfg.output) / group.group_id / args.baseline
    out.mkdir(parents=True, exist_ok=True)
    reports, files = [], []
    for seed in args.seeds:
        preds = run_baseline(ws, group, args.baseline, seed)
        if args.submit:
            report, _ = ws.submit(group, preds, seed, f"{args.baseline}-baseline")
        else:
            report = ws.evaluate(group, preds, seed)
        path = out / f"seed-{seed}.json"
        path.write_text(report.to_json() + "\n", encoding="utf-8")
        reports.append(report)
        files.append(str(path))
    aggs = aggregate_seeds(reports)
    agg_doc = [a.to_dict() for a in aggs]
    (out / "aggregate.json").write_text(canonical_json(agg_doc) + "\n", encoding="utf-8")
    (out / "aggregate.txt").write_text(
        "\n".join(f"{a.metric}\t{a}" for a in aggs) + "\n", encoding="utf-8")
    if args.human:
        print("\n".join(f"{a.metric:<16}{a}" for a in aggs))
    else:
        emit({"group": group.group_id, "baseline": args.baseline, "seeds": args.seeds, "reports": files,
              "aggregate": agg_doc}, False)
    return EXIT_OK


def cmd_evaluate(args, ws: Workspace) -> int:
    group = ws.group(args.group)
    preds = parse_predictions(args.preds.read_bytes())
    if args.submit:
        report, _ = ws.submit(group, preds, args.seed, args.submit)
    else:
        report = ws.evaluate(group, preds, args.seed)
    emit(report.flat() if args.human else report.to_json(), args.human)
    return EXIT_OK


def cmd_registry(args, ws: Workspace) -> int:
    reg = ws.registry
    if args.action == "add":
        schema = json.loads(args.schema) if args.schema else None
        emit(reg.register(args.name, args.file.read_bytes(), schema, args.parent).to_dict(), args.human)
    elif args.action == "view":
        doc = reg.get(args.name, args.version).to_dict()
        if args.rows or args.filter:
            table = reg.read_table(args.name, args.version, args.filter)
            rows = table.rows[:args.rows] if args.rows else table.rows
            if args.human:
                emit([dict(zip(table.columns, r)) for r in rows], True)
                return EXIT_OK
            doc = {"manifest": doc, "columns": list(table.columns), "rows": [list(r) for r in rows]}
        emit(doc, args.human)
    elif args.action == "lineage":
        emit([m.to_dict() for m in reg.lineage(args.name, args.version)], args.human)
    elif args.action == "list":
        emit([m.to_dict() for m in reg.list_datasets()], args.human)
    else:
        view_cfg = DataViewConfig.from_json(args.config_file.read_text(encoding="utf-8"))
        result = apply_view(view_cfg, reg, args.version, SequenceFetcher(FetcherSpec.from_env()), args.output_name)
        emit(result.manifest.to_dict(), args.human)
    return EXIT_OK


def make_split(kind: str, data: bytes, seed: int, fractions=(0.8, 0.1, 0.1), cutoff="2014-01-01",
               test_fraction=0.9, cold_key="entity"):
    if kind == "temporal":
        return temporal_split(parse_trials(data), cutoff, seed)
    samples = parse_samples(data)
    if kind == "cold":
        return cold_split(samples, fractions, seed, key=lambda s: getattr(s, cold_key))
    if kind == "stratified":
        return stratified_split(samples, test_fraction, seed, key=record_key)
    return random_split(samples, fractions, seed, key=record_key)


def cmd_split(args, cfg) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    spec = make_split(args.kind, args.input.read_bytes(), seed, args.fractions, args.cutoff, args.test_fraction,
                      args.cold_key)
    if args.output:
        args.output.write_text(spec.to_json() + "\n", encoding="utf-8")
    if args.human:
        emit({k: len(v) if isinstance(v, list) else v for k, v in spec.to_dict().items()}, True)
    elif not args.output:
        emit(spec.to_json(), False)
    else:
        emit({"output": str(args.output), "kind": spec.kind, "seed": spec.seed}, False)
    return EXIT_OK


def cmd_serve(args, ws: Workspace, cfg) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(ws), host=args.host or cfg.host, port=args.port or cfg.port, log_level="info")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with code 2 on usage errors
    try:
        cfg = load_config(args.config, data_dir=args.data_dir)
        if args.command == "split":
            return cmd_split(args, cfg)
        ws = Workspace(cfg.data_dir)
        if args.command == "run":
            return cmd_run(args, ws, cfg)
        if args.command == "evaluate":
            return cmd_evaluate(args, ws)
        if args.command == "toy":
            group = create_toy_group(ws, args.group, PlantedPartitionConfig(seed=args.seed))
            emit(group.to_dict(), args.human)
            return EXIT_OK
        if args.command == "registry":
            return cmd_registry(args, ws)
        return cmd_serve(args, ws, cfg)
    except UnknownGroup as exc:
        print(f"bench: {exc}", file=sys.stderr)
        print(canonical_json(exc.to_dict()), file=sys.stderr)
        return EXIT_USAGE
    except BenchError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        print(canonical_json(exc.to_dict()), file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, OSError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
