"""Suite orchestration and tidy plot-data export."""
from __future__ import annotations

import glob as globmod
import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import write_json
from .config import ExperimentSuite, SimConfig, dump_config
from .engine import RunResult, run_any
from .errors import SchemaError
from .trace import COLUMNS, read_trace_csv, records_to_csv

log = logging.getLogger(__name__)


def point_label(assignment: dict) -> str:
    if not assignment:
        return "base"
    parts = [f"{k.split('.')[-1]}={v}" for k, v in assignment.items()]
    return re.sub(r"[^A-Za-z0-9_.=+-]", "_", "_".join(parts))


def run_problems(result: RunResult) -> list[str]:
    """Invariant violations worth failing a suite over."""
    problems = []
    if result.staleness_violations and not result.config.observe_gamma:
        problems.append(f"{result.staleness_violations} staleness violations")
    if not result.counts.balanced:
        problems.append(f"message counts do not reconcile: {result.counts}")
    b = result.bound
    if b is not None and not b.heuristic and not b.vacuous and len(b.violations):
        problems.append(f"{len(b.violations)} bound violations")
    return problems


@dataclass
class SuiteResult:
    summary: dict
    failures: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def run_suite(suite: ExperimentSuite, out_dir: str | Path | None = None) -> SuiteResult:
    out = Path(out_dir or suite.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(suite, out / "suite.yaml")
    points, failures = [], []
    for assignment, configs in suite.points():
        label = point_label(assignment)
        runs = []
        for rep, cfg in enumerate(configs):
            name = f"{label}_rep{rep}"
            try:
                res = run_any(cfg)
            except Exception as exc:
                log.error("run %s failed: %s", name, exc)
                failures.append({"run": name, "error": f"{type(exc).__name__}: {exc}"})
                continue
            records_to_csv(res.records, out / f"{name}.csv")
            for p in run_problems(res):
                failures.append({"run": name, "error": p})
            runs.append(res.summary())
        points.append({"label": label, "assignment": assignment, "runs": runs,
                       **_aggregate(runs)})
    summary = {"suite": suite.name, "replications": suite.replications,
               "points": points, "failures": failures}
    write_json(out / "summary.json", summary)
    return SuiteResult(summary, failures)


def _aggregate(runs: list[dict]) -> dict:
    def mean(key):
        vals = [r[key] for r in runs if r.get(key) is not None and not _isnan(r[key])]
        return float(np.mean(vals)) if vals else None

    return {"completed": len(runs), "mean_final_loss": mean("final_loss"),
            "mean_final_accuracy": mean("final_accuracy"),
            "mean_epoch_gamma": mean("mean_epoch_gamma"),
            "mean_max_gamma_realized": mean("max_gamma_realized")}


def _isnan(x) -> bool:
    return isinstance(x, float) and math.isnan(x)


# --------------------------------------------------------------------------
# plot data

_REP = re.compile(r"_rep\d+$")


def emit_plotdata(paths: Sequence[str | Path], layout: dict, out_path: str | Path | None = None) -> list[dict]:
    """Reshape traces into long format with columns ``series, x, y, y_min, y_max, n``.

    ``layout`` names the ``x`` column and the ``metrics`` to export. Files
    whose names differ only by a ``_repN`` suffix are treated as
    replications of one series and summarised by mean and envelope.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise SchemaError("no trace files to export")
    x_col = layout.get("x", "iteration")
    metrics = layout.get("metrics", ["global_loss"])
    for name in [x_col, *metrics]:
        if name not in COLUMNS:
            raise SchemaError(f"unknown trace column {name!r}")
    groups: dict[str, list] = defaultdict(list)
    for p in paths:
        groups[_REP.sub("", p.stem)].append(read_trace_csv(p))
    rows = []
    for series in sorted(groups):
        traces = groups[series]
        length = min(len(t) for t in traces)
        for metric in metrics:
            for k in range(length):
                ys = np.array([getattr(t[k], metric) for t in traces], dtype=float)
                rows.append({"series": f"{series}:{metric}", "x": getattr(traces[0][k], x_col),
                             "y": float(np.mean(ys)), "y_min": float(ys.min()),
                             "y_max": float(ys.max()), "n": len(traces)})
    if out_path is not None:
        with open(out_path, "w") as fh:
            fh.write("series,x,y,y_min,y_max,n\n")
            for r in rows:
                fh.write(f"{r['series']},{r['x']},{r['y']!r},{r['y_min']!r},{r['y_max']!r},{r['n']}\n")
    return rows


def expand_globs(patterns: Sequence[str]) -> list[str]:
    out = []
    for pat in patterns:
        hits = sorted(globmod.glob(pat))
        out.extend(hits if hits else [])
    return out


def load_plot_layout(path: str | Path) -> dict:
    import yaml

    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: plot layout must be a mapping")
    return data
