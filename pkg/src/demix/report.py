"""Run aggregation: combined CSV / Markdown summaries and SVG charts.

A "run directory" is what the trainer leaves behind (``config.json``,
``metrics.csv``, ``steps.csv``, checkpoints).  A "sweep directory" holds
``sweep.csv`` / ``runs.csv`` from the bias-count sweep.  Aggregating run
directories whose recorded training-data hashes differ is a hard error;
a report must describe one dataset.
"""

from __future__ import annotations

import csv
import io
import json
import os

from .data import DataFormatError
from .svg import line_chart


def _is_sweep_dir(path: str) -> bool:
    return os.path.isfile(os.path.join(path, "sweep.csv"))


def _is_run_dir(path: str) -> bool:
    return os.path.isfile(os.path.join(path, "metrics.csv"))


def load_run(run_dir: str) -> dict:
    cfg_path = os.path.join(run_dir, "config.json")
    metrics_path = os.path.join(run_dir, "metrics.csv")
    if not os.path.isfile(metrics_path):
        raise DataFormatError(f"{run_dir}: not a run directory (no metrics.csv)")
    with open(cfg_path) as f:
        config = json.load(f)
    with open(metrics_path, newline="") as f:
        raw = f.read()
    rows = list(csv.DictReader(io.StringIO(raw)))
    return {
        "dir": run_dir,
        "name": os.path.basename(os.path.normpath(run_dir)),
        "config": config,
        "metrics_raw": raw,
        "metrics": rows,
        "data_hash": (config.get("provenance") or {}).get("train_data"),
    }


def load_sweep(sweep_dir: str) -> list[dict]:
    with open(os.path.join(sweep_dir, "sweep.csv"), newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["count"] = int(r["count"])
        r["mean_acc"] = float(r["mean_acc"])
        r["std_acc"] = float(r["std_acc"])
    return rows


def aggregate(paths: list[str]) -> dict:
    """Split paths into runs and sweeps; reject mixed dataset hashes."""
    runs, sweeps = [], []
    for p in paths:
        if _is_sweep_dir(p):
            sweeps.append({"dir": p, "rows": load_sweep(p)})
        elif _is_run_dir(p):
            runs.append(load_run(p))
        else:
            raise DataFormatError(f"{p}: neither a run directory nor a sweep directory")
    hashes = {r["data_hash"] for r in runs if r["data_hash"]}
    if len(hashes) > 1:
        raise DataFormatError(
            "runs reference different training datasets: " + ", ".join(sorted(h[:12] for h in hashes))
        )
    return {"runs": runs, "sweeps": sweeps}


def report_csv(agg: dict) -> str:
    """Single-run reports reproduce the run's metrics.csv byte for byte."""
    runs = agg["runs"]
    if len(runs) == 1 and not agg["sweeps"]:
        return runs[0]["metrics_raw"]
    buf = io.StringIO()
    w = csv.writer(buf)
    if runs:
        fields = list(csv.DictReader(io.StringIO(runs[0]["metrics_raw"])).fieldnames)
        w.writerow(["run"] + fields)
        for r in runs:
            for row in r["metrics"]:
                w.writerow([r["name"]] + [row.get(k, "") for k in fields])
    for s in agg["sweeps"]:
        w.writerow([])
        w.writerow(["count", "method", "mean_acc", "std_acc", "n_runs"])
        for row in s["rows"]:
            w.writerow([row["count"], row["method"], row["mean_acc"], row["std_acc"], row["n_runs"]])
    return buf.getvalue()


def report_markdown(agg: dict) -> str:
    lines = ["# Run report", ""]
    if agg["runs"]:
        lines += ["| run | method | epochs | best val acc | final val acc |", "|---|---|---|---|---|"]
        for r in agg["runs"]:
            rows = r["metrics"]
            best = max((float(x["val_acc"]) for x in rows), default=float("nan"))
            final = float(rows[-1]["val_acc"]) if rows else float("nan")
            lines.append(
                f"| {r['name']} | {r['config'].get('method', '?')} | {len(rows)} "
                f"| {100 * best:.2f} | {100 * final:.2f} |"
            )
        lines.append("")
    for s in agg["sweeps"]:
        lines += [f"## Sweep `{s['dir']}`", "", "| biases | method | mean acc | std |", "|---|---|---|---|"]
        for row in s["rows"]:
            lines.append(f"| {row['count']} | {row['method']} | {100 * row['mean_acc']:.2f} "
                         f"| {100 * row['std_acc']:.2f} |")
        lines.append("")
    return "\n".join(lines)


def sweep_chart(rows: list[dict]) -> str:
    """Accuracy vs number of active biases, one polyline per method."""
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        series.setdefault(row["method"], []).append((float(row["count"]), float(row["mean_acc"])))
    return line_chart(series, xlabel="active biases", ylabel="test accuracy",
                      title="accuracy vs bias count")


def report_svg(agg: dict) -> str:
    """Sweeps chart accuracy vs bias count; plain runs chart val accuracy vs epoch."""
    if agg["sweeps"]:
        rows = [row for s in agg["sweeps"] for row in s["rows"]]
        return sweep_chart(rows)
    series = {}
    for r in agg["runs"]:
        series[r["name"]] = [(float(x["epoch"]), float(x["val_acc"])) for x in r["metrics"]]
    return line_chart(series, xlabel="epoch", ylabel="val accuracy", title="validation accuracy")
