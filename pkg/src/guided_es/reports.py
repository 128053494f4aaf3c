"""CSV / JSON run reports and matplotlib figures written next to them."""
from __future__ import annotations

import csv
import io
import json
import math
import subprocess
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("step", "loss", "cos_es", "cos_ours", "ratio", "consec_cos", "update_norm", "wall_ms")


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def records_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        buf.write(",".join(fmt_value(getattr(r, c)) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def read_run_csv(path) -> list[dict]:
    """Rows as dicts; ``step`` is an int, empty cells are None."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for raw in reader:
            row = {k: (float(v) if v != "" else None) for k, v in raw.items()}
            row["step"] = int(raw["step"])
            rows.append(row)
    return rows


def git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def emit_reports(records, out_dir, *, config: dict | None = None, seed: int | None = None,
                 summary: dict | None = None, figure: bool = True) -> dict[str, Path]:
    """Write run.csv, seeds.csv, summary.json and (optionally) loss.svg into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    paths = {"csv": out / "run.csv", "seeds": out / "seeds.csv", "summary": out / "summary.json"}
    with open(paths["csv"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(records_to_csv(records))
    with open(paths["seeds"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,seed,permuted\n")
        for r in records:
            fh.write(f"{r.step},{'' if r.seed is None else r.seed},{int(bool(getattr(r, 'permuted', False)))}\n")
    doc = {"config": config or {}, "seed": seed, "summary": summary or {}, "git": git_describe()}
    with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if figure and records:
        from . import figures
        paths["figure"] = figures.loss_curve(records, out / "loss.svg")
    return paths


def write_checks(checks, out_dir, *, config: dict | None = None, seed: int | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "checks.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,passed,measured,expected,stderr,detail\n")
        for c in checks:
            fh.write(",".join([c.name, str(int(c.passed)), fmt_value(c.measured), fmt_value(c.expected),
                               fmt_value(c.stderr), '"' + c.detail.replace('"', "'") + '"']) + "\n")
    doc = {"config": config or {}, "seed": seed, "git": git_describe(),
           "checks": [{"name": c.name, "passed": c.passed, "measured": c.measured,
                       "expected": c.expected, "stderr": c.stderr, "detail": c.detail} for c in checks]}
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
