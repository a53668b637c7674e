"""Command-line entry point: ``eegdann <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autodiff import checkpoint
from ..dann import DannModel, export_embeddings, train_dann
from ..data.bundle import Bundle, save_bundle
from ..data.psd import BANDS, subject_psd_correlation
from ..data.synth import synth_subjects
from ..data.windows import WindowSet
from ..distill import train_student
from ..student import Student
from ..teacher import Teacher, train_teacher
from ..training import predict_logits
from .config import RunConfig, bench_config
from .metrics import compute_metrics
from .pipeline import load_region_map, load_trials, load_windows, loso_split, stage_seed, windows_from_trials
from .study import study

log = logging.getLogger("eegdann")


def build_config(args) -> RunConfig:
    config = bench_config() if args.preset == "bench" else RunConfig()
    if args.config:
        config = RunConfig.load(args.config, config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.task is not None:
        changes["task"] = args.task
    if getattr(args, "data", None):
        changes["data"] = args.data
    if args.no_kd:
        changes["kd_on"] = False
    if args.no_dann:
        changes["dann_on"] = False
    if args.no_fim:
        changes["fim_on"] = False
    return config.replace(**changes)


def _windows(args, config: RunConfig):
    if getattr(args, "windows", None):
        with np.load(args.windows) as z:
            ws = WindowSet(z["X"], z["y"], z["subject"])
        return ws, load_region_map(config)
    return load_windows(config)


def _fold(args, config):
    ws, region_map = _windows(args, config)
    held = args.held_out or ws.subjects[config.seed % len(ws.subjects)]
    source, target = loso_split(ws, held)
    return source, target, region_map, held


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_student(path, config, region_map) -> Student:
    student = Student(config.student_config(), region_map)
    student.load_state_dict(checkpoint.load(path))
    return student


def _load_dann(path, config, region_map) -> DannModel:
    model = DannModel(Student(config.student_config(), region_map), config.fuse_dim, config.fim_on)
    model.load_state_dict(checkpoint.load(path))
    model.eval()
    return model


def cmd_synth(args, config):
    trials = synth_subjects(config.synth_subjects, config.synth_trials, config.synth_shift,
                            args.seed if args.seed is not None else config.synth_seed)
    root = save_bundle(_out(args), Bundle(trials))
    print(f"wrote {len(trials)} trials to {root}")


def cmd_preprocess(args, config):
    bundle = load_trials(config)
    ws = windows_from_trials(bundle.trials, config.task, config.threshold_at_five)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, X=ws.X.astype(np.float32), y=ws.y, subject=ws.subject)
    print(f"wrote {len(ws)} windows from {len(ws.subjects)} subjects to {out}")


def cmd_train_teacher(args, config):
    source, _, region_map, held = _fold(args, config)
    teacher, result = train_teacher(source, config.schedule("teacher"), config.teacher_config(), region_map,
                                    stage_seed(config.seed, 1))
    out = _out(args)
    checkpoint.save(out / "teacher.ckpt", teacher.state_dict())
    config.save(out / "config.txt")
    print(f"teacher for held-out {held}: best epoch {result.best_epoch}, val loss {result.best_val_loss:.4f}")


def cmd_distill(args, config):
    source, _, region_map, held = _fold(args, config)
    teacher = None
    if config.kd_on:
        if not args.teacher:
            raise SystemExit("distill needs --teacher unless --no-kd is given")
        teacher = Teacher(config.teacher_config(), region_map)
        teacher.load_state_dict(checkpoint.load(args.teacher))
    student = Student(config.student_config(), region_map, np.random.default_rng(stage_seed(config.seed, 2)))
    training = train_student(student, source, config.schedule("student"), stage_seed(config.seed, 3),
                             teacher=teacher, lam=config.kd_lambda)
    out = _out(args)
    checkpoint.save(out / "student.ckpt", student.state_dict())
    training.write_csv(out / "student.csv")
    config.save(out / "config.txt")
    print(f"student for held-out {held}: best epoch {training.result.best_epoch}")


def cmd_adapt(args, config):
    source, target, region_map, held = _fold(args, config)
    student = _load_student(args.student, config, region_map)
    d = train_dann(student, source, target.unlabeled().X, config.schedule("dann"), stage_seed(config.seed, 4),
                   grl_coeff=config.grl_coeff, ramp=config.grl_ramp, fim=config.fim_on,
                   fuse_dim=config.fuse_dim, freeze_student=config.freeze_student,
                   domain_lr_scale=config.dann_domain_lr_scale)
    out = _out(args)
    checkpoint.save(out / "dann.ckpt", d.model.state_dict())
    d.write_csv(out / "dann.csv")
    config.save(out / "config.txt")
    print(f"adapted model for held-out {held}: best epoch {d.result.best_epoch}")


def cmd_evaluate(args, config):
    _, target, region_map, held = _fold(args, config)
    if args.kind == "dann":
        fn = _load_dann(args.model, config, region_map).emotion_logits
    else:
        student = _load_student(args.model, config, region_map)
        fn = lambda x: student(x).logit  # noqa: E731
    m = compute_metrics(predict_logits(fn, target.X) > 0, target.y)
    print(json.dumps({"held_out": held, "accuracy": m.accuracy, "f1": m.f1, "f1_undefined": m.f1_undefined}))


def cmd_loso(args, config):
    ws, region_map = load_windows(config)
    report = study(config, ws, region_map, args.out)
    print(report.table())


def cmd_analyze_psd(args, config):
    ws, _ = load_windows(config)
    by_subject = {s: ws.X[ws.subject == s] for s in ws.subjects}
    corr, undefined = subject_psd_correlation(by_subject, args.band)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = list(by_subject)
    lines = ["subject," + ",".join(names)]
    for name, row in zip(names, corr):
        lines.append(name + "," + ",".join("undefined" if np.isnan(v) else repr(float(v)) for v in row))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if undefined.any():
        print("constant feature vectors (undefined rows): " + ", ".join(np.array(names)[undefined]))
    print(f"wrote {len(names)}x{len(names)} {args.band} correlation matrix to {out}")


def cmd_export_embeddings(args, config):
    source, target, region_map, held = _fold(args, config)
    model = _load_dann(args.model, config, region_map)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = export_embeddings(model, source, 0, out)
    n += export_embeddings(model, target, 1, out, append=True)
    print(f"wrote {n} embeddings (held-out {held}) to {out}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--preset", choices=("default", "bench"), default="default",
                        help="base configuration before --config is applied")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=("arousal", "valence"))
    common.add_argument("--data", help="bundle directory (default: synthetic data from the config)")
    common.add_argument("--no-kd", action="store_true")
    common.add_argument("--no-dann", action="store_true")
    common.add_argument("--no-fim", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    fold = argparse.ArgumentParser(add_help=False)
    fold.add_argument("--held-out", help="target subject id (default: rotated by --seed)")
    fold.add_argument("--windows", help="npz written by the preprocess subcommand")

    parser = argparse.ArgumentParser(prog="eegdann", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, *parents, **kw):
        p = sub.add_parser(name, parents=[common, *parents], **kw)
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, help="generate a synthetic bundle").add_argument("--out", required=True)
    add("preprocess", cmd_preprocess, help="bundle -> windows npz").add_argument("--out", required=True)
    add("train-teacher", cmd_train_teacher, fold, help="train the teacher on one fold").add_argument(
        "--out", required=True)
    p = add("distill", cmd_distill, fold, help="train the student (with KD unless --no-kd)")
    p.add_argument("--teacher")
    p.add_argument("--out", required=True)
    p = add("adapt", cmd_adapt, fold, help="domain-adversarial adaptation of a student")
    p.add_argument("--student", required=True)
    p.add_argument("--out", required=True)
    p = add("evaluate", cmd_evaluate, fold, help="score a checkpoint on the held-out subject")
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=("dann", "student"), default="dann")
    add("loso", cmd_loso, help="full leave-one-subject-out study").add_argument("--out", required=True)
    p = add("analyze-psd", cmd_analyze_psd, help="between-subject band-power correlation matrix")
    p.add_argument("--band", choices=tuple(BANDS), default="beta")
    p.add_argument("--out", required=True)
    p = add("export-embeddings", cmd_export_embeddings, fold, help="fused features as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args)
        args.func(args, config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
