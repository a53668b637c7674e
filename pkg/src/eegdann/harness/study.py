"""Leave-one-subject-out study: all folds, strata summaries and paired ablation tests.

Output files in the study directory::

    config.txt     the RunConfig
    folds.csv      one row per fold and configuration (columns: FOLD_COLUMNS)
    study.json     the StudyReport
    <config>/<subject>_seed<k>/   per-fold run directories
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..data.regions import RegionMap
from ..data.windows import WindowSet
from .config import RunConfig
from .pipeline import FoldReport, run_pipeline
from .stats import paired_ttest

log = logging.getLogger(__name__)

FOLD_COLUMNS = ("config", "held_out", "seed", "accuracy", "f1", "f1_undefined", "student_accuracy",
                "n_source", "n_target", "wall_clock")


def fold_plan(config: RunConfig, subjects: list) -> list[tuple[str, int]]:
    """``(held-out subject, seed)`` pairs for a study."""
    if len(subjects) < 2:
        raise ValueError("a study needs at least two subjects")
    if config.fold_per_seed:
        return [(subjects[(config.seed + j) % len(subjects)], config.seed + j) for j in range(config.n_seeds)]
    chosen = list(config.folds) or list(subjects)
    unknown = [s for s in chosen if s not in subjects]
    if unknown:
        raise ValueError(f"unknown fold subjects {unknown}")
    return [(s, config.seed) for s in chosen]


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else None, "n": int(v.size)}


def summarize(folds: list[FoldReport], top_k: int = 10) -> dict:
    """All-subject and top-k (by accuracy, descending) mean and sample std."""
    ranked = sorted(folds, key=lambda f: (-f.accuracy, f.held_out, f.seed))
    k = min(top_k, len(ranked))
    out = {
        "all": {"accuracy": _mean_std([f.accuracy for f in folds]), "f1": _mean_std([f.f1 for f in folds])},
        "top": {"k": k, "accuracy": _mean_std([f.accuracy for f in ranked[:k]]),
                "f1": _mean_std([f.f1 for f in ranked[:k]]), "subjects": [f.held_out for f in ranked[:k]]},
    }
    if k < top_k:
        out["top"]["note"] = f"top-{top_k} stratum reduced to top-{k}: only {len(ranked)} folds"
    return out


@dataclass
class StudyReport:
    config_name: str
    folds: list
    summary: dict
    param_counts: dict
    comparisons: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_json(self, timing: bool = True) -> dict:
        def fold(f: FoldReport) -> dict:
            d = f.to_json()
            if not timing:
                d.pop("wall_clock")
            return d
        comparisons = {}
        for name, c in self.comparisons.items():
            comparisons[name] = {**c, "folds": [fold(f) for f in c["folds"]]}
        return _clean({"config_name": self.config_name, "folds": [fold(f) for f in self.folds],
                       "summary": self.summary, "param_counts": self.param_counts,
                       "comparisons": comparisons, "failures": self.failures})

    def comparable(self) -> str:
        """Canonical JSON of every reported value except timings."""
        return json.dumps(self.to_json(timing=False), sort_keys=True)

    def table(self) -> str:
        lines = [f"{'subject':>10} {'seed':>5} {'acc':>7} {'f1':>7}"]
        for f in self.folds:
            lines.append(f"{f.held_out:>10} {f.seed:>5} {f.accuracy:7.4f} {f.f1:7.4f}")
        a, t = self.summary["all"]["accuracy"], self.summary["top"]
        lines.append(f"all subjects: acc {_fmt(a)}")
        lines.append(f"top-{t['k']} subjects: acc {_fmt(t['accuracy'])}")
        if "note" in t:
            lines.append(t["note"])
        pc = self.param_counts
        lines.append(f"parameters: teacher {pc['teacher']}, student+fusion {pc['extractor']} "
                     f"(ratio {pc['ratio']:.3f})")
        for name, c in self.comparisons.items():
            tt = c["ttest_accuracy"]
            lines.append(f"vs {name}: acc {_fmt(c['summary']['all']['accuracy'])}, "
                         f"t={tt['t']:.3f} p={tt['p']:.4f}" + (" (degenerate)" if tt["degenerate"] else ""))
        return "\n".join(lines)


def _fmt(stat: dict) -> str:
    if stat["mean"] is None:
        return "n/a"
    std = "n/a" if stat["std"] is None else f"{stat['std']:.4f}"
    return f"{stat['mean']:.4f} ({std})"


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _ttest_dict(a, b) -> dict:
    r = paired_ttest(a, b)
    return {"t": r.t, "p": r.p, "dof": r.dof, "degenerate": r.degenerate}


def _run_folds(config: RunConfig, windows: WindowSet, plan, region_map, out: Optional[Path], cache: dict):
    reports, failures = [], []
    for held_out, seed in plan:
        run_dir = out / config.name / f"{held_out}_seed{seed}" if out is not None else None
        try:
            reports.append(run_pipeline(config, windows, held_out, run_dir, region_map, seed, cache))
        except Exception as exc:  # recorded per fold; the study carries on
            log.exception("fold %s seed %d failed", held_out, seed)
            failures.append({"config": config.name, "held_out": held_out, "seed": seed,
                             "error": f"{type(exc).__name__}: {exc}"})
    return reports, failures


def study(config: RunConfig, windows: WindowSet, region_map: Optional[RegionMap] = None,
          out_dir: Union[str, Path, None] = None) -> StudyReport:
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.txt")
    plan = fold_plan(config, windows.subjects)
    cache: dict = {}
    folds, failures = _run_folds(config, windows, plan, region_map, out, cache)
    comparisons = {}
    for name in config.compare:
        other = config.ablation(name)
        other_folds, other_failures = _run_folds(other, windows, plan, region_map, out, cache)
        failures += other_failures
        pairs = {(f.held_out, f.seed): f for f in other_folds}
        matched = [(f, pairs[(f.held_out, f.seed)]) for f in folds if (f.held_out, f.seed) in pairs]
        entry = {"summary": summarize(other_folds, config.top_k), "folds": other_folds}
        if len(matched) >= 2:
            entry["ttest_accuracy"] = _ttest_dict([a.accuracy for a, _ in matched],
                                                  [b.accuracy for _, b in matched])
            entry["ttest_student_accuracy"] = _ttest_dict([a.student_accuracy for a, _ in matched],
                                                          [b.student_accuracy for _, b in matched])
        else:
            entry["ttest_accuracy"] = entry["ttest_student_accuracy"] = {
                "t": float("nan"), "p": float("nan"), "dof": 0, "degenerate": True}
        comparisons[name] = entry

    counts = dict(folds[0].param_counts) if folds else {}
    if counts:
        counts["ratio"] = counts["extractor"] / counts["teacher"]
    report = StudyReport(config.name, folds, summarize(folds, config.top_k), counts, comparisons, failures)
    if out is not None:
        write_reports(report, out)
    return report


def write_reports(report: StudyReport, out: Union[str, Path]) -> None:
    out = Path(out)
    (out / "study.json").write_text(json.dumps(report.to_json(), indent=1), encoding="utf-8")
    with open(out / "folds.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOLD_COLUMNS)
        groups = [(report.config_name, report.folds)] + [(n, c["folds"]) for n, c in report.comparisons.items()]
        for name, folds in groups:
            for f in folds:
                writer.writerow([name, f.held_out, f.seed, repr(f.accuracy), repr(f.f1), f.f1_undefined,
                                 repr(f.student_accuracy), f.n_source, f.n_target, f"{f.wall_clock:.3f}"])
