"""Feature-based distillation of the frozen teacher into the student."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import ShapeError, Tensor, no_grad
from .data.windows import WindowSet
from .nn import Module, parameter, xavier_uniform
from .student import Student
from .teacher import Teacher
from .training import Schedule, TrainResult, bce_from_logits, fit, predict_logits, stratified_split

DEFAULT_LAMBDA = 0.3
CSV_COLUMNS = ("epoch", "L_c", "L_Tem", "L_Spa", "L_stu", "val_acc")


class DistillHeads(Module):
    """Bias-free maps from student feature widths to the teacher's."""

    def __init__(self, student_tem: int, teacher_tem: int, student_spa: int, teacher_spa: int,
                 rng: np.random.Generator):
        super().__init__()
        self.w_tem = parameter(xavier_uniform(rng, student_tem, teacher_tem))
        self.w_spa = parameter(xavier_uniform(rng, student_spa, teacher_spa))

    @classmethod
    def for_models(cls, student: Student, teacher: Teacher, rng: np.random.Generator) -> "DistillHeads":
        s, t = student.config, teacher.config
        return cls(2 * s.temporal_hidden, t.temporal_dim, 2 * s.brain_hidden, t.brain_dim, rng)


@dataclass
class KDLossReport:
    l_tem: float
    l_spa: float
    l_c: float
    l_stu: float
    lam: float


def project_features(f_tem: Tensor, f_spa: Tensor, heads: DistillHeads) -> tuple[Tensor, Tensor]:
    if f_tem.shape[-1] != heads.w_tem.shape[0] or f_spa.shape[-1] != heads.w_spa.shape[0]:
        raise ShapeError(
            f"features {f_tem.shape}/{f_spa.shape} do not fit projections "
            f"{heads.w_tem.shape}/{heads.w_spa.shape}"
        )
    return f_tem @ heads.w_tem, f_spa @ heads.w_spa


def distill_losses(f_tem_p: Tensor, f_spa_p: Tensor, z_tem, z_spa) -> tuple[Tensor, Tensor]:
    """Element-and-batch mean squared errors against teacher features.

    Teacher features are taken as constants: any graph they carry is dropped.
    """
    z_tem = Tensor(z_tem.data if isinstance(z_tem, Tensor) else z_tem)
    z_spa = Tensor(z_spa.data if isinstance(z_spa, Tensor) else z_spa)
    return T.mse_loss(f_tem_p, z_tem), T.mse_loss(f_spa_p, z_spa)


def kd_total_loss(l_c, l_tem, l_spa, lam: float = DEFAULT_LAMBDA):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"trade-off lambda must lie in [0, 1], got {lam}")
    return l_c + lam * l_tem + (1.0 - lam) * l_spa


def teacher_targets(teacher: Teacher, X: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Frozen-teacher ``(Z_Tem, Z_Spa)`` for every window, computed without a graph."""
    teacher.eval()
    tems, spas = [], []
    with no_grad():
        for i in range(0, len(X), batch_size):
            out = teacher(Tensor(X[i:i + batch_size]))
            tems.append(out.z_tem.data)
            spas.append(out.z_spa.data)
    return np.concatenate(tems), np.concatenate(spas)


@dataclass
class StudentTraining:
    result: TrainResult
    heads: Optional[DistillHeads]
    reports: list = field(default_factory=list)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.result.history:
                writer.writerow([row.get(c, "") for c in CSV_COLUMNS])


def train_student(
    student: Student,
    source: WindowSet,
    schedule: Schedule,
    seed: int = 0,
    teacher: Optional[Teacher] = None,
    heads: Optional[DistillHeads] = None,
    lam: float = DEFAULT_LAMBDA,
) -> StudentTraining:
    """Train the student on labeled source windows.

    With a teacher, the loss is ``L_c + lam*L_Tem + (1-lam)*L_Spa`` and only
    the student and the projection heads are updated. Without one, it is the
    plain classification loss. Early stopping watches source-validation BCE.
    """
    if source.y is None or len(source) == 0:
        raise ValueError("student training needs labeled source windows")
    kd_total_loss(0.0, 0.0, 0.0, lam)
    rng = np.random.default_rng(seed)
    tr, va = stratified_split(source.y, schedule.val_fraction, rng)
    if va.size == 0:
        va = tr
    X, y = source.X, source.y.astype(np.float64)

    modules: list[Module] = [student]
    z_tem = z_spa = None
    if teacher is not None:
        if teacher.region_map != student.region_map:
            raise ValueError("teacher and student use different region maps")
        if heads is None:
            heads = DistillHeads.for_models(student, teacher, rng)
        modules.append(heads)
        z_tem, z_spa = teacher_targets(teacher, X[tr])
    params = [p for m in modules for p in m.parameters()]
    reports: list[KDLossReport] = []

    def step(idx):
        rows = tr[idx]
        out = student(Tensor(X[rows]))
        l_c = T.bce_with_logits(out.logit, y[rows])
        if teacher is None:
            return l_c, {"L_c": l_c.item(), "L_stu": l_c.item()}
        f_tem, f_spa = project_features(out.f_tem, out.f_spa, heads)
        l_tem, l_spa = distill_losses(f_tem, f_spa, z_tem[idx], z_spa[idx])
        loss = kd_total_loss(l_c, l_tem, l_spa, lam)
        return loss, {"L_c": l_c.item(), "L_Tem": l_tem.item(), "L_Spa": l_spa.item(), "L_stu": loss.item()}

    def validate():
        z = predict_logits(lambda x: student(x).logit, X[va])
        return {"val_loss": bce_from_logits(z, y[va]), "val_acc": float(np.mean((z > 0) == (y[va] > 0.5)))}

    def record(epoch, row):
        if teacher is not None:
            # Rebuild the epoch total from the epoch means so the report decomposes exactly.
            row["L_stu"] = kd_total_loss(row["L_c"], row["L_Tem"], row["L_Spa"], lam)
            reports.append(KDLossReport(row["L_Tem"], row["L_Spa"], row["L_c"], row["L_stu"], lam))

    # Index batches address ``tr``; teacher targets were cached in the same order.
    result = fit(modules, params, step, tr.size, validate, schedule, rng, record)
    return StudentTraining(result, heads, reports)
