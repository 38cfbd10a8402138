"""Command line entry point: ``run``, ``compare``, ``inspect-memory`` and ``sweep``.

Exit codes: 0 success, 1 runtime or input error, 2 usage or config schema
error (the offending field path is printed), 3 numeric failure inside a stage.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import sys
from pathlib import Path

from .experiment import ConfigError, StageFailure, load_config, run_experiment, write_outputs
from .memory import BankFormatError, load_bank, memory_footprint

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

COMPARE_FIELDS = ("report", "fidelity", "avg_accuracy", "last_accuracy", "pd", "ci_total", "footprint_floats")


class UsageError(ValueError):
    pass


def _apply_seed(raw: dict, seed: int | None) -> dict:
    if seed is None:
        return raw
    out = copy.deepcopy(raw)
    out.setdefault("stream", {})["seed"] = seed
    out.setdefault("train", {})["seed"] = seed
    return out


def _set_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {dotted}: {key} is not an object")
    node[leaf] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_grid(specs: list[str]) -> list[tuple[str, list]]:
    """``["a.b=1,2", "c=x"]`` -> ``[("a.b", [1, 2]), ("c", ["x"])]``."""
    axes = []
    for spec in specs:
        key, sep, values = spec.partition("=")
        if not sep or not key or not values:
            raise UsageError(f"bad --grid entry {spec!r}; expected key=v1,v2")
        axes.append((key.strip(), [_parse_value(v.strip()) for v in values.split(",")]))
    return axes


def _slug(assignment: dict) -> str:
    parts = [f"{k.rsplit('.', 1)[-1]}={v}" for k, v in assignment.items()]
    return "_".join(parts).replace("/", "-") or "run"


def _run_one(raw: dict, out_dir: Path) -> Path:
    result = run_experiment(raw)
    return write_outputs(result, raw, out_dir)["report"]


def cmd_run(args) -> int:
    raw = _apply_seed(load_config(args.config), args.seed_override)
    out = Path(args.out or raw.get("out", {}).get("dir", "out"))
    report = _run_one(raw, out)
    if not args.quiet:
        summary = json.loads(report.read_text(encoding="utf-8"))["summary"]
        print(f"wrote {report}")
        print(
            f"avg_accuracy={summary['avg_accuracy']:.2f} last_accuracy={summary['last_accuracy']:.2f} "
            f"pd={summary['pd']:.2f} ci_total={summary['ci_total']:.4f}"
        )
    return EXIT_OK


def _stream_shape(doc: dict) -> list[int]:
    return [s["n_classes"] for s in doc["stages"]]


def compare_reports(paths) -> str:
    """CSV table of the headline metrics, one row per report."""
    if len(paths) < 2:
        raise UsageError("compare needs at least two reports")
    docs = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    shape = _stream_shape(docs[0])
    for p, doc in zip(paths, docs):
        if _stream_shape(doc) != shape:
            raise ValueError(f"stream shape of {p} {_stream_shape(doc)} differs from {shape}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_FIELDS)
    for p, doc in zip(paths, docs):
        s = doc["summary"]
        writer.writerow(
            [
                str(p),
                doc["fidelity"],
                f"{s['avg_accuracy']:.2f}",
                f"{s['last_accuracy']:.2f}",
                f"{s['pd']:.2f}",
                f"{s['ci_total']:.6f}",
                s["footprint_floats"],
            ]
        )
    return buf.getvalue()


def cmd_compare(args) -> int:
    sys.stdout.write(compare_reports(args.reports))
    return EXIT_OK


def inspect_memory(path) -> str:
    bank = load_bank(path)
    lines = [f"dim {bank.dim}, {len(bank)} classes"]
    if len(bank):
        lines.append(f"{'class':>6} {'fidelity':>9} {'K':>3} {'footprint':>11}  weights")
    for cid in bank.classes:
        mem = bank.entries[cid]
        weights = " ".join(f"{w:.4f}" for w in mem.weights)
        lines.append(f"{cid:>6} {mem.fidelity:>9} {mem.n_components:>3} {memory_footprint(mem):>11,}  [{weights}]")
    if len(bank):
        lines.append(f"total footprint {bank.footprint():,} floats")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    sys.stdout.write(inspect_memory(args.bank))
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _apply_seed(load_config(args.config), args.seed_override)
    axes = parse_grid(args.grid)
    if not axes:
        raise UsageError("sweep needs at least one --grid entry")
    out = Path(args.out or base.get("out", {}).get("dir", "out"))
    reports = []
    for combo in itertools.product(*(values for _, values in axes)):
        assignment = {key: value for (key, _), value in zip(axes, combo)}
        raw = copy.deepcopy(base)
        for key, value in assignment.items():
            _set_path(raw, key, value)
        report = _run_one(raw, out / _slug(assignment))
        reports.append(report)
        if not args.quiet:
            print(f"wrote {report}", file=sys.stderr)
    if len(reports) >= 2:
        sys.stdout.write(compare_reports(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmrcil", description="Class-incremental runs over frozen features with mixture class memories.")
    parser.add_argument("--quiet", action="store_true", help="only print errors and requested tables")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: config out.dir)")
        p.add_argument("--seed-override", type=int, help="replace both stream and train seeds")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("run", help="execute one config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of config overrides")
    common(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="dotted config key and comma separated values; repeat for a product")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="CSV table of report summaries")
    p.add_argument("reports", nargs="*", help="report.json files (two or more)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect-memory", help="summarise a memory bank file")
    p.add_argument("bank")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"numeric failure in {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BankFormatError as exc:
        print(f"corrupt memory bank: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
