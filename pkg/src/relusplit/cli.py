"""Command-line front end.

    relusplit verify  --net N.nnet --property 3 --splitter be --out stats.json
    relusplit compare --nets-manifest nets.json --property 3 --out table.csv \
                      --histogram-out depths.csv

Exit codes: 0 for a completed verdict, 2 on timeout, 1 on error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import acas
from .network import InputBox, NetworkError, load_json_network, load_nnet
from .verifier import (DEFAULT_TIMEOUT_S, OutputSpec, Verdict, VerificationOutcome,
                       VerifyConfig, verify_boxes)

EXIT_OK, EXIT_ERROR, EXIT_TIMEOUT = 0, 1, 2
CSV_FIELDS = ("property", "network", "splitter", "verdict", "nodes",
              "depth_mean", "depth_std", "wall_ms", "error")
_NET_NAME = re.compile(r"run2a_(\d+)_(\d+)_batch")

log = logging.getLogger("relusplit")


class CliError(Exception):
    pass


@dataclass(frozen=True)
class Task:
    """One (network, property) verification problem."""

    label: str
    net_path: Path
    network_id: Optional[tuple]
    property_name: str
    source: object   # AcasProperty or a raw (boxes, spec) pair


def load_network(path):
    path = Path(path)
    if path.suffix.lower() == ".json":
        return load_json_network(path)
    return load_nnet(path)


def network_id_from_name(path) -> Optional[tuple]:
    m = _NET_NAME.search(Path(path).name)
    return (int(m.group(1)), int(m.group(2))) if m else None


def load_raw_spec(data: dict):
    """Raw problem in network coordinates: ``{"boxes": [{"lower", "upper"}], "disjuncts": [{"A", "b"}]}``."""
    boxes = data.get("boxes")
    if boxes is None and "box" in data:
        boxes = [data["box"]]
    if not boxes or "disjuncts" not in data:
        raise CliError("raw spec needs 'boxes' (or 'box') and 'disjuncts'")
    boxes = [InputBox(np.array(b["lower"], float), np.array(b["upper"], float)) for b in boxes]
    spec = OutputSpec(tuple((d["A"], d["b"]) for d in data["disjuncts"]), name=data.get("name", "custom"))
    return boxes, spec


def read_spec_file(path):
    """A property document (has ``desired``) or a raw spec; returns a list of sources."""
    data = json.loads(Path(path).read_text())
    items = data if isinstance(data, list) else [data]
    out = []
    for item in items:
        if "desired" in item:
            out.append(acas.property_from_dict(item))
        else:
            out.append(load_raw_spec(item))
    return out


def compile_task(task: Task):
    net = load_network(task.net_path)
    if isinstance(task.source, acas.AcasProperty):
        boxes, spec = acas.compile_forbidden_set(task.source, net, task.network_id)
    else:
        boxes, spec = task.source
    return net, boxes, spec


def _property_name(source) -> str:
    if isinstance(source, acas.AcasProperty):
        return f"phi{source.id}"
    return source[1].name or "custom"


def build_tasks(args) -> list:
    if (args.property is None) == (args.spec is None):
        raise CliError("give exactly one of --property or --spec")
    if args.property is not None:
        sources = [acas.get_property(args.property)]
    else:
        sources = read_spec_file(args.spec)

    nets = []
    for p in args.net or []:
        nets.append((Path(p).stem, Path(p), network_id_from_name(p), False))
    if args.nets_manifest:
        manifest = acas.load_manifest(args.nets_manifest)
        for (x, y), p in sorted(manifest.items()):
            nets.append((f"N{x},{y}", Path(p), (x, y), True))
    if not nets:
        raise CliError("no network given; use --net or --nets-manifest")

    tasks = []
    for source in sources:
        for label, path, nid, swept in nets:
            if swept and isinstance(source, acas.AcasProperty) and not source.tests_network(*nid):
                continue   # manifest sweeps run only the networks a property is tested on
            tasks.append(Task(label, path, nid, _property_name(source), source))
    if not tasks:
        raise CliError("no network in the manifest is tested by this property")
    return tasks


def run_task(task: Task, config: VerifyConfig) -> VerificationOutcome:
    net, boxes, spec = compile_task(task)
    return verify_boxes(net, boxes, spec, config)


def verdict_text(outcome: VerificationOutcome, acas_naming: bool) -> str:
    v = outcome.verdict
    if acas_naming and v is not Verdict.TIMEOUT:
        return f"{acas.acas_label(v)} ({v.value})"
    return v.value


def write_histogram(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["property", "network", "splitter", "depth", "count"])
        w.writerows(rows)


def _config(args, splitter: str) -> VerifyConfig:
    if not args.timeout_s > 0:
        raise CliError("--timeout-s must be positive")
    return VerifyConfig(timeout=args.timeout_s, splitter=splitter, width_floor=args.width_floor,
                        early_counterexample=args.early_counterexample)


def cmd_verify(args) -> int:
    tasks = build_tasks(args)
    if len(tasks) != 1:
        raise CliError(f"verify runs one task, got {len(tasks)}; use compare for sweeps")
    task = tasks[0]
    outcome = run_task(task, _config(args, args.splitter))
    s = outcome.stats
    is_acas = isinstance(task.source, acas.AcasProperty)
    print(f"property: {task.property_name}  network: {task.label}  splitter: {args.splitter}")
    print(f"verdict: {verdict_text(outcome, is_acas)}")
    print(f"nodes: {s.nodes_explored}")
    print(f"depth: {s.depth_mean:.3f} +- {s.depth_std:.3f}")
    print(f"wall: {1000.0 * s.wall_time:.1f} ms")
    if s.inconclusive:
        print(f"inconclusive leaves: {s.inconclusive}")
    if outcome.witness is not None:
        print("witness: " + " ".join(f"{v:.10g}" for v in outcome.witness))
    if args.out:
        data = outcome.to_json()
        data.update(property=task.property_name, network=task.label, splitter=args.splitter)
        Path(args.out).write_text(json.dumps(data, indent=2) + "\n")
    if args.histogram_out:
        write_histogram(args.histogram_out, [[task.property_name, task.label, args.splitter, d, c]
                                             for d, c in s.depth_histogram()])
    return EXIT_TIMEOUT if outcome.verdict is Verdict.TIMEOUT else EXIT_OK


def _fmt(v) -> str:
    return "" if v is None or v != v else f"{v:.6f}"


def cmd_compare(args) -> int:
    tasks = build_tasks(args)
    rows, hist = [], []
    totals = {s: {"nodes": 0, "wall_ms": 0.0, "depths": [], "timeouts": 0, "errors": 0}
              for s in ("be", "iog")}
    for task in tasks:
        for splitter in ("be", "iog"):
            row = {"property": task.property_name, "network": task.label, "splitter": splitter}
            agg = totals[splitter]
            try:
                out = run_task(task, _config(args, splitter))
            except Exception as exc:   # a failed task becomes a row, never aborts the sweep
                log.error("%s on %s (%s) failed: %s", task.property_name, task.label, splitter, exc)
                row.update(verdict="error", nodes="", depth_mean="", depth_std="", wall_ms="",
                           error=f"{type(exc).__name__}: {exc}")
                agg["errors"] += 1
                rows.append(row)
                continue
            s = out.stats
            row.update(verdict=out.verdict.value, nodes=s.nodes_explored,
                       depth_mean=_fmt(s.depth_mean), depth_std=_fmt(s.depth_std),
                       wall_ms=f"{1000.0 * s.wall_time:.3f}", error="")
            rows.append(row)
            agg["nodes"] += s.nodes_explored
            agg["wall_ms"] += 1000.0 * s.wall_time
            agg["depths"].extend(s.leaf_depths)
            agg["timeouts"] += out.verdict is Verdict.TIMEOUT
            hist.extend([task.property_name, task.label, splitter, d, c]
                        for d, c in s.depth_histogram())
            if args.verbose:
                print(f"{task.property_name} {task.label} {splitter}: {out.verdict.value} "
                      f"nodes={s.nodes_explored}", file=sys.stderr)

    name = tasks[0].property_name if len({t.property_name for t in tasks}) == 1 else "all"
    for splitter, agg in totals.items():
        d = np.asarray(agg["depths"], dtype=float)
        rows.append({"property": name, "network": "TOTAL", "splitter": splitter,
                     "verdict": f"timeouts={agg['timeouts']};errors={agg['errors']}",
                     "nodes": agg["nodes"],
                     "depth_mean": _fmt(float(d.mean()) if d.size else None),
                     "depth_std": _fmt(float(d.std()) if d.size else None),
                     "wall_ms": f"{agg['wall_ms']:.3f}", "error": ""})
    be, iog = totals["be"], totals["iog"]
    time_ratio = be["wall_ms"] / iog["wall_ms"] if iog["wall_ms"] > 0 else float("nan")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            w.writeheader()
            w.writerows(rows)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)
    if args.histogram_out:
        write_histogram(args.histogram_out, hist)
    print(f"nodes: be={be['nodes']} iog={iog['nodes']}  time ratio be/iog: {time_ratio:.3f}")
    for label, agg in (("be", be), ("iog", iog)):
        d = np.asarray(agg["depths"], dtype=float)
        if d.size:
            print(f"depth {label}: {d.mean():.2f} +- {d.std():.2f}")
    return EXIT_ERROR if be["errors"] or iog["errors"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relusplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--net", action="append", help="network file (.nnet or .json); repeatable")
    common.add_argument("--nets-manifest", help="JSON map {\"x_y\": path} of ACAS networks")
    common.add_argument("--property", type=int, choices=range(1, 11), metavar="{1..10}",
                     help="ACAS property id")
    common.add_argument("--spec", help="property or raw spec JSON document")
    common.add_argument("--timeout-s", type=float, default=DEFAULT_TIMEOUT_S)
    common.add_argument("--width-floor", type=float, default=VerifyConfig.width_floor)
    common.add_argument("--out", help="stats JSON (verify) or CSV (compare)")
    common.add_argument("--histogram-out", help="depth histogram CSV")
    common.add_argument("--early-counterexample", action="store_true",
                        help="accept witnesses found at inexact nodes")
    common.add_argument("-v", "--verbose", action="count", default=0)

    v = sub.add_parser("verify", parents=[common], help="run one verification")
    v.add_argument("--splitter", choices=("be", "iog"), default="be")
    v.set_defaults(func=cmd_verify)
    c = sub.add_parser("compare", parents=[common], help="run BE and IOG on every task")
    c.set_defaults(func=cmd_compare)
    sub.add_parser("catalog", help="print the ACAS property catalog as JSON").set_defaults(
        func=lambda args: print(json.dumps([acas.property_to_dict(p)
                                            for p in acas.property_catalog()], indent=2)) or 0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, acas.PropertyError, NetworkError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
