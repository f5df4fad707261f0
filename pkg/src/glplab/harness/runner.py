"""Run an experiment config: per-seed metric files, merged metrics.csv, summary.json, verdict.txt."""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from .config import ExperimentConfig, serialize_config
from .experiments import DRIVERS, Check, SeedResult, format_row

OUT_ENV = "GLPLAB_OUT"
DEFAULT_OUT = "glplab_runs"


class RunError(RuntimeError):
    pass


@dataclass
class RunReport:
    out_dir: Path
    passed: bool
    checks: list[Check]
    results: list[SeedResult]

    @property
    def value(self) -> float | None:
        """Headline number of the run where one exists (max gradient error for grad-check)."""
        errs = [r.values.get("max_error") for r in self.results if "max_error" in r.values]
        return max(errs) if errs else None


def output_dir(cfg: ExperimentConfig, out=None) -> Path:
    root = out or cfg.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    return Path(root)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as err:
        raise RunError(f"cannot write {path}: {err.strerror or err}") from err


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(format_row(r) for r in rows)
    return buf.getvalue()


def versions() -> dict:
    return {"python": sys.version.split()[0], "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": platform.platform()}


def run_experiment(cfg: ExperimentConfig, out=None, echo=None) -> RunReport:
    """Run every seed of ``cfg`` and write results under ``out`` (or ``cfg.out``,
    ``$GLPLAB_OUT``, ``./glplab_runs`` in that order).

    A seed that raises ``AssertionError`` is recorded as a failed check rather than
    aborting the run; other exceptions propagate.
    """
    driver = DRIVERS[cfg.kind]
    out_dir = output_dir(cfg, out)
    seed_dir = out_dir / "seeds"
    try:
        seed_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise RunError(f"cannot create output directory {seed_dir}: {err.strerror or err}") from err

    results, checks = [], []
    start = time.perf_counter()
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        try:
            res = driver.run_seed(cfg, seed)
        except AssertionError as err:
            res = SeedResult(seed, [], f"seed {seed}: assertion failed: {err}", failure=str(err) or "assertion failed")
            checks.append(Check(f"seed {seed} assertions", False, res.failure))
        res.wall_time = time.perf_counter() - t0
        _atomic_write(seed_dir / f"seed_{seed}.csv", _csv_text(driver.header, res.rows))
        for name, write in res.artifacts.items():
            path = out_dir / name
            try:
                write(path)
            except OSError as err:
                raise RunError(f"cannot write {path}: {err.strerror or err}") from err
        results.append(res)
        if echo:
            echo(res.summary)

    good = [r for r in results if r.failure is None]
    if good:
        checks = driver.verdict(cfg, good) + checks
    passed = bool(checks) and all(c.passed for c in checks)

    rows = [row for r in results for row in r.rows]
    _atomic_write(out_dir / "metrics.csv", _csv_text(driver.header, rows))
    summary = {
        "kind": cfg.kind,
        "seeds": list(cfg.seeds),
        "config": cfg.to_dict(),
        "config_text": serialize_config(cfg),
        "versions": versions(),
        "wall_time_s": {str(r.seed): r.wall_time for r in results},
        "total_wall_time_s": time.perf_counter() - start,
        "per_seed": {str(r.seed): {"summary": r.summary, **r.extra} for r in results},
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        "passed": passed,
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, default=float) + "\n")
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in checks]
    lines.append(f"VERDICT {'PASS' if passed else 'FAIL'}")
    _atomic_write(out_dir / "verdict.txt", "\n".join(lines) + "\n")
    return RunReport(out_dir, passed, checks, results)
