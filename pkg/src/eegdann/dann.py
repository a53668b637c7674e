"""Domain-adversarial adaptation of the distilled student.

The extractor is the student followed by the feature interaction module
(two affine + leaky-ReLU branches, concatenated and batch-normalized). An
emotion head reads source rows; a domain head reads every row through a
gradient reversal layer, so one minimization step trains the domain head to
separate domains while pushing the extractor to confuse it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import ShapeError, Tensor, grl, no_grad
from .data.windows import WindowSet
from .nn import BatchNorm1d, Linear, Module, param_count
from .student import Student
from .training import Schedule, TrainResult, bce_from_logits, fit, predict_logits, stratified_split

DEFAULT_FUSE_DIM = 128
DOMAIN_HIDDEN = 64
CSV_COLUMNS = ("epoch", "L_c", "L_d", "L", "domain_acc", "grl_coeff", "val_loss", "val_acc", "target_acc")


class FeatureFusion(Module):
    def __init__(self, tem_in: int, spa_in: int, fuse_dim: int, rng: np.random.Generator):
        super().__init__()
        self.tem = Linear(tem_in, fuse_dim, rng)
        self.spa = Linear(spa_in, fuse_dim, rng)
        self.bn = BatchNorm1d(2 * fuse_dim)

    @property
    def out_dim(self) -> int:
        return self.bn.gamma.shape[0]

    def forward(self, f_tem: Tensor, f_spa: Tensor) -> Tensor:
        flat = f_tem.reshape(f_tem.shape[0], -1)
        if flat.shape[1] != self.tem.weight.shape[0]:
            raise ShapeError(f"temporal features {f_tem.shape} do not flatten to {self.tem.weight.shape[0]}")
        t = T.leaky_relu(self.tem(flat))
        s = T.leaky_relu(self.spa(f_spa))
        return self.bn(T.concat([t, s], axis=-1))


def fuse_features(f_tem: Tensor, f_spa: Tensor, fusion: FeatureFusion, mode: str = "train") -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    fusion.train(mode == "train")
    return fusion(f_tem, f_spa)


class SpatialProjection(Module):
    """Stand-in for the fusion module when it is ablated: F_Spa mapped to the head width."""

    def __init__(self, spa_in: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(spa_in, out_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.proj.weight.shape[1]

    def forward(self, f_tem: Tensor, f_spa: Tensor) -> Tensor:
        return self.proj(f_spa)


class Extractor(Module):
    def __init__(self, student: Student, fuse_dim: int = DEFAULT_FUSE_DIM, fim: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = student.config
        self.student = student
        if fim:
            self.fusion = FeatureFusion(c.n_channels * 2 * c.temporal_hidden, 2 * c.brain_hidden, fuse_dim, rng)
        else:
            self.fusion = SpatialProjection(2 * c.brain_hidden, 2 * fuse_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.fusion.out_dim

    def forward(self, x: Tensor) -> Tensor:
        f_tem = self.student.temporal_features(x)
        f_spa, _ = self.student.spatial(f_tem)
        return self.fusion(f_tem, f_spa)

    def param_count(self) -> int:
        """Student (without its own read-out layer) plus the fusion module."""
        return param_count(self) - param_count(self.student.head)


class EmotionHead(Module):
    def __init__(self, in_dim: int, rng: np.random.Generator):
        super().__init__()
        self.out = Linear(in_dim, 1, rng)

    def forward(self, f: Tensor) -> Tensor:
        z = self.out(f)
        return z.reshape(z.shape[:-1])


class DomainHead(Module):
    def __init__(self, in_dim: int, rng: np.random.Generator, hidden: int = DOMAIN_HIDDEN):
        super().__init__()
        self.fc = Linear(in_dim, hidden, rng)
        self.out = Linear(hidden, 1, rng)

    def forward(self, f: Tensor) -> Tensor:
        z = self.out(T.leaky_relu(self.fc(f)))
        return z.reshape(z.shape[:-1])


class DannModel(Module):
    def __init__(self, student: Student, fuse_dim: int = DEFAULT_FUSE_DIM, fim: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.extractor = Extractor(student, fuse_dim, fim, rng)
        self.emotion = EmotionHead(self.extractor.out_dim, rng)
        self.domain = DomainHead(self.extractor.out_dim, rng)

    def emotion_logits(self, x: Tensor) -> Tensor:
        return self.emotion(self.extractor(x))


@dataclass
class DannLoss:
    l_c: Tensor         # source emotion BCE
    l_d: Tensor         # domain BCE over all rows
    objective: Tensor   # l_c + l_d, minimized; the GRL supplies the sign flip for the extractor
    domain_acc: float

    @property
    def value(self) -> float:
        """The saddle-point objective ``L_c - L_d``."""
        return self.l_c.item() - self.l_d.item()


def dann_loss(model: DannModel, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray,
              grl_coeff: float = 1.0) -> DannLoss:
    """Emotion loss on source rows, domain loss on source+target rows (labels 0/1).

    Both domains pass through the extractor as one batch, so batch-norm
    statistics mix them.
    """
    ns, nt = len(xs), len(xt)
    if ns == 0 or nt == 0:
        raise ValueError("a domain batch needs at least one source and one target row")
    feats = model.extractor(Tensor(np.concatenate([xs, xt])))
    l_c = T.bce_with_logits(model.emotion(feats[:ns]), np.asarray(ys, dtype=np.float64))
    domain_label = np.concatenate([np.zeros(ns), np.ones(nt)])
    zd = model.domain(grl(feats, grl_coeff))
    l_d = T.bce_with_logits(zd, domain_label)
    acc = float(np.mean((zd.data > 0) == (domain_label > 0.5)))
    return DannLoss(l_c, l_d, l_c + l_d, acc)


def grl_ramp(progress: float) -> float:
    """Warm-up ``2 / (1 + exp(-10 p)) - 1`` for training progress ``p`` in [0, 1]."""
    return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0


@dataclass
class DannTraining:
    model: DannModel
    result: TrainResult
    history: list = field(default_factory=list)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.result.history:
                writer.writerow([row.get(c, "") for c in CSV_COLUMNS])


def train_dann(
    student: Student,
    source: WindowSet,
    target_X: np.ndarray,
    schedule: Schedule,
    seed: int = 0,
    grl_coeff: float = 1.0,
    ramp: bool = False,
    fim: bool = True,
    fuse_dim: int = DEFAULT_FUSE_DIM,
    freeze_student: bool = False,
    domain_lr_scale: float = 1.0,
    report: Optional[Callable[[DannModel], float]] = None,
) -> DannTraining:
    """Adversarial training on labeled source windows and unlabeled target signals.

    Only the target signal array is accepted, so target labels cannot reach
    the training path. Each step draws half a batch from each domain.
    ``report`` (e.g. target accuracy with labels held by the caller) is
    called once per epoch and logged, never used for model selection.
    ``domain_lr_scale`` multiplies the domain head's learning rate; with
    Adam the reversed gradient moves every extractor weight at the full
    step size, so a head on the same rate tends to fall behind.
    """
    if source.y is None or len(source) == 0:
        raise ValueError("DANN needs labeled source windows")
    if len(target_X) == 0:
        raise ValueError("DANN needs target windows")
    rng = np.random.default_rng(seed)
    model = DannModel(student, fuse_dim, fim, rng)
    tr, va = stratified_split(source.y, schedule.val_fraction, rng)
    if va.size == 0:
        va = tr
    X, y = source.X, source.y.astype(np.float64)
    half = max(1, schedule.batch_size // 2)
    target_order = rng.permutation(len(target_X))
    cursor = [0]
    steps_per_epoch = max(1, math.ceil(tr.size / half))
    total_steps = steps_per_epoch * schedule.epochs
    step_count = [0]
    epoch_coeff = [grl_coeff]

    def next_target(k):
        out = np.empty(k, dtype=np.intp)
        for i in range(k):
            if cursor[0] == len(target_order):
                target_order[:] = rng.permutation(len(target_X))
                cursor[0] = 0
            out[i] = target_order[cursor[0]]
            cursor[0] += 1
        return out

    def step(idx):
        coeff = grl_coeff * grl_ramp(step_count[0] / max(1, total_steps - 1)) if ramp else grl_coeff
        step_count[0] += 1
        epoch_coeff[0] = coeff
        rows = tr[idx]
        xt = target_X[next_target(len(rows))]
        loss = dann_loss(model, X[rows], y[rows], xt, coeff)
        return loss.objective, {"L_c": loss.l_c.item(), "L_d": loss.l_d.item(),
                                "L": loss.value, "domain_acc": loss.domain_acc}

    def validate():
        z = predict_logits(model.emotion_logits, X[va])
        row = {"val_loss": bce_from_logits(z, y[va]), "val_acc": float(np.mean((z > 0) == (y[va] > 0.5))),
               "grl_coeff": epoch_coeff[0]}
        if report is not None:
            row["target_acc"] = float(report(model))
        return row

    modules = [model]
    frozen = {p.node_id for p in student.parameters()} if freeze_student else set()
    params = [p for p in model.parameters() if p.node_id not in frozen]
    if domain_lr_scale <= 0:
        raise ValueError(f"domain_lr_scale must be positive, got {domain_lr_scale}")
    head = {p.node_id for p in model.domain.parameters()}
    scales = [domain_lr_scale if p.node_id in head else 1.0 for p in params]
    sched = Schedule(schedule.epochs, half, schedule.lr, schedule.patience, schedule.val_fraction)
    result = fit(modules, params, step, tr.size, validate, sched, rng, lr_scales=scales)
    return DannTraining(model, result, result.history)


def export_embeddings(model: DannModel, windows: WindowSet, domain_label: int, path: Union[str, Path],
                      append: bool = False) -> int:
    """Write eval-mode fused features as CSV rows ``subject_id, domain_label, emotion_label, f0..``."""
    model.eval()
    with no_grad():
        feats = np.concatenate([model.extractor(Tensor(windows.X[i:i + 64])).data
                                for i in range(0, len(windows), 64)])
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(["subject_id", "domain_label", "emotion_label"] + [f"f{i}" for i in range(feats.shape[1])])
        for i, row in enumerate(feats):
            label = "" if windows.y is None else int(windows.y[i])
            writer.writerow([windows.subject[i], domain_label, label] + [repr(float(v)) for v in row])
    return len(feats)
