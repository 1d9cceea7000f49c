"""Command-line entry point: run, partition, compare, inspect.

Exit codes: 0 success, 1 runtime failure, 2 invalid input. The output root
defaults to ``$FEDSELECT_OUTPUT_ROOT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, FLRunConfig, apply_overrides
from .data import PartitionError
from .io import atomic_write_json, atomic_write_text, read_metrics_csv
from .orchestrator import build_dataset, build_partition, rounds_to_target, run_simulation
from .seeding import stream

log = logging.getLogger("fedselect")
OUTPUT_ROOT_ENV = "FEDSELECT_OUTPUT_ROOT"


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


def _setup_logging(args) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if args.json_logs:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("fedselect")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(args) -> FLRunConfig:
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config {args.config}: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be a JSON object"])
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        overrides[key] = _parse_value(value)
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "rounds", None) is not None:
        overrides["rounds"] = args.rounds
    return FLRunConfig.from_dict(apply_overrides(doc, overrides))


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out) if args.out else _output_root() / f"{Path(args.config).stem}-{cfg.policy}-s{cfg.seed}"
    log.info("running %s for %d rounds -> %s", cfg.policy, cfg.rounds, out)
    result = run_simulation(cfg, out)
    if result.records:
        last = result.records[-1]
        log.info(
            "final accuracy %.4f, cumulative latency %.6g s", last.global_accuracy, last.cumulative_latency
        )
    print(out)
    return 0


def cmd_partition(args) -> int:
    cfg = _load_config(args)
    source = build_dataset(cfg)
    perm = stream(cfg.seed, "validation").permutation(len(source))
    n_val = max(1, int(round(cfg.validation_fraction * len(source))))
    train = source.subset(np.sort(perm[n_val:]))
    plan = build_partition(train, cfg)
    num_classes = int(source.labels.max()) + 1
    hist = plan.label_histogram(train.labels, num_classes)
    out = Path(args.out) if args.out else _output_root() / f"{Path(args.config).stem}-partition"
    atomic_write_text(out / "partition.json", plan.to_json() + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client", "size", "distinct_labels", *[f"label_{c}" for c in range(num_classes)]])
    for k, row in enumerate(hist):
        w.writerow([k, int(row.sum()), int((row > 0).sum()), *row.tolist()])
    atomic_write_text(out / "label_histogram.csv", buf.getvalue())
    if not args.quiet:
        width = max(5, len(str(int(hist.max()))))
        print("client  size  labels  " + " ".join(f"{c:>{width}}" for c in range(num_classes)))
        for k, row in enumerate(hist):
            print(f"{k:>6}  {int(row.sum()):>4}  {int((row > 0).sum()):>6}  " + " ".join(f"{v:>{width}}" for v in row))
    print(out)
    return 0


def _load_run(run_dir: Path) -> tuple[dict, list[dict]]:
    manifest_path = run_dir / "manifest.json"
    metrics_path = run_dir / "metrics.csv"
    if not manifest_path.exists() or not metrics_path.exists():
        raise ConfigError([f"{run_dir} is not a completed run (missing manifest.json or metrics.csv)"])
    manifest = json.loads(manifest_path.read_text())
    try:
        rows = read_metrics_csv(metrics_path)
    except ValueError as exc:
        raise ConfigError([f"schema mismatch: {exc}"]) from exc
    return manifest, rows


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise ConfigError(["compare needs at least two run directories"])
    runs = [(Path(d), *_load_run(Path(d))) for d in args.runs]
    metric = args.metric
    header = ["run", "policy", "seed", "rounds", f"final_{metric}", "cumulative_latency", "latency_reduction_pct"]
    header += [f"rounds_to_{t:g}" for t in args.target]
    base_latency = runs[0][2][-1]["cumulative_latency"] if runs[0][2] else None
    table = []
    for path, manifest, rows in runs:
        if not rows:
            raise ConfigError([f"{path} has no rounds"])
        last = rows[-1]
        red = 100.0 * (1.0 - last["cumulative_latency"] / base_latency) if base_latency else 0.0
        line = [
            path.name,
            manifest["config"].get("policy", "?"),
            manifest.get("seed", ""),
            last["round"],
            f"{last[metric]:.4f}",
            f"{last['cumulative_latency']:.6g}",
            f"{red:.2f}",
        ]
        for t in args.target:
            r = rounds_to_target(rows, t, metric)
            line.append("" if r is None else r)
        table.append([str(c) for c in line])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(table)
    if args.out:
        atomic_write_text(Path(args.out), buf.getvalue())
    widths = [max(len(h), *(len(r[i]) for r in table)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(wd) for h, wd in zip(header, widths)))
    for r in table:
        print("  ".join(c.ljust(wd) for c, wd in zip(r, widths)))
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.checkpoint)
    if path.is_dir():
        path = path / "checkpoint_final.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read checkpoint {path}: {exc}"]) from exc
    print(f"checkpoint   {path}")
    print(f"round        {doc['round']}")
    print(f"policy       {doc.get('policy')}")
    print(f"global size  {len(doc['global_params'])} parameters")
    agent = doc.get("agent")
    if agent:
        eps = agent["epsilon"]
        print(f"agent steps  {agent['step_counter']}")
        print(f"q-network    {' -> '.join(str(v) for v in agent['q_spec'])}")
        print(f"epsilon      {eps['current']:.4f} ({eps['eps_init']} -> {eps['eps_end']} over {eps['decay_rounds']})")
        print(f"pca          {len(agent['projector']['components'])} components")
    ledger = doc.get("ledger", {})
    top = sorted(ledger.items(), key=lambda kv: -kv[1])[:5]
    print("top reputation " + ", ".join(f"{k}:{v:.4f}" for k, v in top))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedselect", description=__doc__.splitlines()[0])
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors")
    parser.add_argument("--json-logs", action="store_true", help="log records as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation")
    run.add_argument("--config", required=True)
    run.add_argument("--policy", choices=("flash-rl", "random", "full"))
    run.add_argument("--seed", type=int)
    run.add_argument("--rounds", type=int)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (dotted keys ok)")
    run.add_argument("--out", help="run directory (default: $FEDSELECT_OUTPUT_ROOT/<name>)")
    run.set_defaults(func=cmd_run)

    part = sub.add_parser("partition", help="write a partition plan and label histogram")
    part.add_argument("--config", required=True)
    part.add_argument("--seed", type=int)
    part.add_argument("--set", action="append", metavar="KEY=VALUE")
    part.add_argument("--out")
    part.set_defaults(func=cmd_partition)

    cmp_ = sub.add_parser("compare", help="compare completed runs (first is the baseline)")
    cmp_.add_argument("runs", nargs="+")
    cmp_.add_argument("--target", type=float, action="append", default=[], help="rounds-to-target threshold")
    cmp_.add_argument("--metric", default="global_accuracy", choices=("global_accuracy", "global_macro_f1"))
    cmp_.add_argument("--out", help="write the table as CSV")
    cmp_.set_defaults(func=cmd_compare)

    insp = sub.add_parser("inspect", help="summarize a checkpoint file or run directory")
    insp.add_argument("checkpoint")
    insp.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        return args.func(args)
    except (ConfigError, PartitionError) as exc:
        problems = getattr(exc, "problems", [str(exc)])
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
