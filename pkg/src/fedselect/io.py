"""Atomic file output and the metrics CSV format."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

METRIC_COLUMNS = (
    "round",
    "selected",
    "global_accuracy",
    "global_macro_f1",
    "round_latency",
    "cumulative_latency",
    "mean_reward",
    "agent_loss",
    "epsilon",
)


def atomic_write_text(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(i) for i in v)
    return str(v)


def records_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append(
                {
                    "round": int(r["round"]),
                    "selected": [int(i) for i in r["selected"].split()],
                    **{
                        c: (float(r[c]) if r[c] != "" else None)
                        for c in METRIC_COLUMNS[2:]
                    },
                }
            )
        return rows
