"""Run configuration: every hyperparameter as a flat ``key = value`` entry.

File format: UTF-8 text, one ``key = value`` per line, ``#`` starts a
comment, blank lines ignored. Booleans are ``true``/``false``; list values
are comma-separated. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from ..dann import DEFAULT_FUSE_DIM
from ..distill import DEFAULT_LAMBDA
from ..student import StudentConfig
from ..teacher import TeacherConfig
from ..training import Schedule

ABLATIONS = ("full", "no_kd", "no_dann", "no_kd_no_dann", "no_fim")


@dataclass(frozen=True)
class RunConfig:
    # data
    task: str = "arousal"
    data: str = ""                   # bundle directory; empty means generate synthetic data
    region_map: str = ""             # optional JSON file overriding the default partition
    threshold_at_five: bool = False
    synth_subjects: int = 6
    synth_trials: int = 8
    synth_shift: float = 0.5
    synth_seed: int = 0
    # protocol
    seed: int = 0
    folds: tuple = ()                # held-out subject ids; empty means every subject
    fold_per_seed: bool = False      # run n_seeds folds; fold j uses seed+j and rotates the held-out subject
    n_seeds: int = 1
    top_k: int = 10
    compare: tuple = ()              # ablations paired against this run
    # stages
    kd_on: bool = True
    dann_on: bool = True
    fim_on: bool = True
    # teacher
    teacher_temporal_dim: int = 64
    teacher_electrode_dim: int = 32
    teacher_brain_dim: int = 64
    teacher_temporal_blocks: int = 1
    teacher_electrode_blocks: int = 2
    teacher_brain_blocks: int = 2
    teacher_heads: int = 4
    teacher_temporal_mlp_dim: int = 256
    teacher_electrode_mlp_dim: int = 2048
    teacher_brain_mlp_dim: int = 2048
    teacher_epochs: int = 60
    teacher_batch_size: int = 512
    teacher_lr: float = 1e-3
    # student
    student_temporal_hidden: int = 64
    student_electrode_hidden: int = 32
    student_brain_hidden: int = 32
    student_epochs: int = 60
    student_batch_size: int = 512
    student_lr: float = 1e-3
    kd_lambda: float = DEFAULT_LAMBDA
    # adaptation
    fuse_dim: int = DEFAULT_FUSE_DIM
    grl_coeff: float = 1.0
    grl_ramp: bool = False
    freeze_student: bool = False
    dann_epochs: int = 80
    dann_batch_size: int = 256
    dann_lr: float = 1e-3
    dann_domain_lr_scale: float = 1.0   # domain-head learning-rate multiplier
    # shared
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.task not in ("arousal", "valence"):
            raise ValueError(f"task must be arousal or valence, got {self.task!r}")
        if self.student_epochs < 1:
            raise ValueError("every configuration trains a student; student_epochs must be at least 1")
        for name in self.compare:
            if name not in ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        if not 0.0 <= self.kd_lambda <= 1.0:
            raise ValueError(f"kd_lambda must lie in [0, 1], got {self.kd_lambda}")
        if self.grl_coeff < 0:
            raise ValueError(f"grl_coeff must be non-negative, got {self.grl_coeff}")
        if self.dann_domain_lr_scale <= 0:
            raise ValueError(f"dann_domain_lr_scale must be positive, got {self.dann_domain_lr_scale}")
        if self.top_k < 1 or self.n_seeds < 1:
            raise ValueError("top_k and n_seeds must be positive")
        self.teacher_config()
        self.student_config()

    def teacher_config(self) -> TeacherConfig:
        return TeacherConfig(
            temporal_dim=self.teacher_temporal_dim, electrode_dim=self.teacher_electrode_dim,
            brain_dim=self.teacher_brain_dim, temporal_blocks=self.teacher_temporal_blocks,
            electrode_blocks=self.teacher_electrode_blocks, brain_blocks=self.teacher_brain_blocks,
            temporal_heads=self.teacher_heads, electrode_heads=self.teacher_heads,
            brain_heads=self.teacher_heads, temporal_mlp_dim=self.teacher_temporal_mlp_dim,
            electrode_mlp_dim=self.teacher_electrode_mlp_dim, brain_mlp_dim=self.teacher_brain_mlp_dim,
        )

    def student_config(self) -> StudentConfig:
        return StudentConfig(temporal_hidden=self.student_temporal_hidden,
                             electrode_hidden=self.student_electrode_hidden,
                             brain_hidden=self.student_brain_hidden)

    def schedule(self, stage: str) -> Schedule:
        return Schedule(epochs=getattr(self, f"{stage}_epochs"), batch_size=getattr(self, f"{stage}_batch_size"),
                        lr=getattr(self, f"{stage}_lr"), patience=self.patience, val_fraction=self.val_fraction)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def ablation(self, name: str) -> "RunConfig":
        flags = {
            "full": dict(kd_on=True, dann_on=True, fim_on=True),
            "no_kd": dict(kd_on=False, dann_on=True, fim_on=True),
            "no_dann": dict(kd_on=True, dann_on=False, fim_on=True),
            "no_kd_no_dann": dict(kd_on=False, dann_on=False, fim_on=True),
            "no_fim": dict(kd_on=True, dann_on=True, fim_on=False),
        }
        if name not in flags:
            raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        return self.replace(compare=(), **flags[name])

    @property
    def name(self) -> str:
        parts = [p for p, on in (("no_kd", not self.kd_on), ("no_dann", not self.dann_on),
                                 ("no_fim", not self.fim_on)) if on]
        return "_".join(parts) or "full"

    # serialization
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig" = None) -> "RunConfig":
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
        changes = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {n}: unknown config key {key!r}")
            changes[key] = _parse(value, types[key], key)
        return dataclasses.replace(base, **changes)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path], base: "RunConfig" = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, kind: type, key: str):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError(value)
            return low == "true"
        if kind is tuple:
            return tuple(v.strip() for v in value.split(",") if v.strip())
        return kind(value)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {value!r} as {kind.__name__}") from None


def bench_config() -> RunConfig:
    """Desk-scale preset for the synthetic benchmark: small batches, few epochs."""
    return RunConfig(
        synth_subjects=6, synth_trials=4, synth_shift=0.5,
        fold_per_seed=True, n_seeds=5, compare=("no_kd", "no_dann"),
        teacher_epochs=10, teacher_batch_size=32,
        student_epochs=10, student_batch_size=32,
        dann_epochs=10, dann_batch_size=32, dann_lr=3e-4, grl_ramp=True,
        patience=10,
    )
