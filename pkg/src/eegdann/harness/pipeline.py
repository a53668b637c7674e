"""One leave-one-subject-out fold: teacher -> student -> adaptation -> evaluation.

Run directory layout (one per fold)::

    config.txt    the RunConfig used
    seed.txt      the fold seed
    teacher.ckpt  teacher.csv    (kd_on only)
    student.ckpt  student.csv
    dann.ckpt     dann.csv       (dann_on only)
    fold.json     the FoldReport
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, astuple, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..autodiff import checkpoint
from ..dann import DannModel, train_dann
from ..data.bundle import Bundle, load_bundle
from ..data.preprocess import preprocess_trial
from ..data.regions import RegionMap, default_region_map
from ..data.synth import synth_subjects
from ..data.windows import WindowSet
from ..distill import train_student
from ..nn import param_count
from ..student import Student
from ..teacher import Teacher, train_teacher
from ..training import TrainResult, predict_logits
from .config import RunConfig
from .metrics import compute_metrics

log = logging.getLogger(__name__)

TEACHER_CSV = ("epoch", "train_loss", "val_loss", "val_acc")


class PipelineError(ValueError):
    pass


@dataclass
class FoldReport:
    held_out: str
    seed: int
    accuracy: float
    f1: float
    f1_undefined: bool
    student_accuracy: float        # the student read-out before adaptation
    n_source: int
    n_target: int
    param_counts: dict
    traces: dict = field(default_factory=dict)
    wall_clock: float = 0.0        # seconds; excluded from report comparisons

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "FoldReport":
        return cls(**d)


def load_region_map(config: RunConfig, bundle: Optional[Bundle] = None) -> RegionMap:
    if config.region_map:
        return RegionMap.from_json(json.loads(Path(config.region_map).read_text(encoding="utf-8")))
    if bundle is not None and bundle.region_map is not None:
        return bundle.region_map
    return default_region_map()


def load_trials(config: RunConfig) -> Bundle:
    if config.data:
        return load_bundle(config.data)
    return Bundle(synth_subjects(config.synth_subjects, config.synth_trials, config.synth_shift, config.synth_seed))


def windows_from_trials(trials, task: str, threshold_at_five: bool = False) -> WindowSet:
    windows = [w for t in trials for w in preprocess_trial(t, task, threshold_at_five)]
    if not windows:
        raise PipelineError("no windows survived preprocessing and label binarization")
    return WindowSet.from_windows(windows)


def load_windows(config: RunConfig) -> tuple[WindowSet, RegionMap]:
    bundle = load_trials(config)
    return windows_from_trials(bundle.trials, config.task, config.threshold_at_five), load_region_map(config, bundle)


def loso_split(windows: WindowSet, held_out: str) -> tuple[WindowSet, WindowSet]:
    """Source = every other subject (labeled); target = the held-out subject."""
    mask = windows.subject == held_out
    if not mask.any():
        raise PipelineError(f"unknown subject {held_out!r}; have {windows.subjects}")
    if mask.all():
        raise PipelineError("leave-one-subject-out needs at least two subjects")
    return windows.subset(~mask), windows.subset(mask)


def stage_seed(seed: int, stage: int) -> int:
    return 10 * int(seed) + stage


def _write_trace(path: Path, rows: list, columns: tuple) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else repr(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _trace_summary(result: TrainResult) -> dict:
    return {"best_epoch": result.best_epoch, "epochs_run": result.epochs_run,
            "history": [{k: float(v) for k, v in row.items()} for row in result.history]}


def run_pipeline(
    config: RunConfig,
    windows: WindowSet,
    held_out: str,
    run_dir: Union[str, Path, None] = None,
    region_map: Optional[RegionMap] = None,
    seed: Optional[int] = None,
    cache: Optional[dict] = None,
) -> FoldReport:
    """Train and evaluate one fold. Target labels are used only for the final score.

    ``cache`` (shared across calls) reuses teacher and student states for
    configurations that share a fold, seed and upstream settings.
    """
    start = time.perf_counter()
    seed = config.seed if seed is None else seed
    region_map = region_map or default_region_map()
    source, target = loso_split(windows, held_out)
    unlabeled_target = target.unlabeled()
    cache = cache if cache is not None else {}
    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.txt")
        (out / "seed.txt").write_text(f"{seed}\n", encoding="utf-8")

    teacher_cfg = config.teacher_config()
    counts = {"teacher": param_count(Teacher(teacher_cfg, region_map))}
    traces = {}

    teacher = None
    if config.kd_on:
        key = ("teacher", held_out, seed, teacher_cfg, astuple(config.schedule("teacher")))
        teacher = Teacher(teacher_cfg, region_map)
        if key in cache:
            teacher.load_state_dict(cache[key][0])
            t_result = cache[key][1]
        else:
            teacher, t_result = train_teacher(source, config.schedule("teacher"), teacher_cfg, region_map,
                                              stage_seed(seed, 1))
            cache[key] = (teacher.state_dict(), t_result)
        traces["teacher"] = _trace_summary(t_result)
        if out is not None:
            checkpoint.save(out / "teacher.ckpt", teacher.state_dict())
            _write_trace(out / "teacher.csv", t_result.history, TEACHER_CSV)

    student_cfg = config.student_config()
    key = ("student", held_out, seed, student_cfg, astuple(config.schedule("student")), config.kd_on,
           config.kd_lambda if config.kd_on else None,
           (teacher_cfg, astuple(config.schedule("teacher"))) if config.kd_on else None)
    student = Student(student_cfg, region_map, np.random.default_rng(stage_seed(seed, 2)))
    if key in cache:
        student.load_state_dict(cache[key][0])
        s_training = cache[key][1]
    else:
        s_training = train_student(student, source, config.schedule("student"), stage_seed(seed, 3),
                                   teacher=teacher, lam=config.kd_lambda)
        cache[key] = (student.state_dict(), s_training)
    traces["student"] = _trace_summary(s_training.result)
    counts["student"] = param_count(student)
    if out is not None:
        checkpoint.save(out / "student.ckpt", student.state_dict())
        s_training.write_csv(out / "student.csv")
    student_logits = predict_logits(lambda x: student(x).logit, target.X)
    student_acc = compute_metrics(student_logits > 0, target.y).accuracy

    if config.dann_on:
        d = train_dann(student, source, unlabeled_target.X, config.schedule("dann"), stage_seed(seed, 4),
                       grl_coeff=config.grl_coeff, ramp=config.grl_ramp, fim=config.fim_on,
                       fuse_dim=config.fuse_dim, freeze_student=config.freeze_student,
                       domain_lr_scale=config.dann_domain_lr_scale)
        model: Optional[DannModel] = d.model
        traces["dann"] = _trace_summary(d.result)
        counts["extractor"] = model.extractor.param_count()
        if out is not None:
            checkpoint.save(out / "dann.ckpt", model.state_dict())
            d.write_csv(out / "dann.csv")
        logits = predict_logits(model.emotion_logits, target.X)
    else:
        counts["extractor"] = DannModel(student, config.fuse_dim, config.fim_on).extractor.param_count()
        logits = student_logits

    m = compute_metrics(logits > 0, target.y)
    report = FoldReport(
        held_out=str(held_out), seed=int(seed), accuracy=m.accuracy, f1=m.f1, f1_undefined=m.f1_undefined,
        student_accuracy=student_acc, n_source=len(source), n_target=len(target),
        param_counts=counts, traces=traces, wall_clock=time.perf_counter() - start,
    )
    if out is not None:
        (out / "fold.json").write_text(json.dumps(report.to_json(), indent=1), encoding="utf-8")
    log.info("fold %s seed %d [%s]: acc %.3f f1 %.3f", held_out, seed, config.name, m.accuracy, m.f1)
    return report
