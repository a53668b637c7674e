"""Mini-batch loop with best-validation checkpointing and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .autodiff import Adam, Tensor, no_grad
from .nn import Module

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    epochs: int = 60
    batch_size: int = 512
    lr: float = 1e-3
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    epochs_run: int = 0
    early_stopped: bool = False


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``fraction`` of each class (at least one row per class that has two or more)."""
    y = np.asarray(y)
    train, val = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        k = int(round(fraction * idx.size))
        if fraction > 0 and idx.size >= 2:
            k = min(max(k, 1), idx.size - 1)
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def minibatches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 2) -> Iterator[np.ndarray]:
    """Shuffled index batches; a trailing batch smaller than ``min_size`` joins the previous one."""
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < min_size:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    yield from chunks


def predict_logits(fn: Callable[[Tensor], Tensor], X: np.ndarray, batch_size: int = 128) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(X), batch_size):
            out.append(np.asarray(fn(Tensor(X[i:i + batch_size])).data).reshape(-1))
    return np.concatenate(out) if out else np.zeros(0)


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z))


def unique_parameters(modules: Sequence[Module]) -> list[Tensor]:
    seen, out = set(), []
    for m in modules:
        for p in m.parameters():
            if p.node_id not in seen:
                seen.add(p.node_id)
                out.append(p)
    return out


def fit(
    modules: Sequence[Module],
    params: Sequence[Tensor],
    step: Callable[[np.ndarray], tuple[Tensor, dict]],
    n_train: int,
    validate: Callable[[], dict],
    schedule: Schedule,
    rng: np.random.Generator,
    epoch_hook: Optional[Callable[[int, dict], None]] = None,
    lr_scales: Optional[Sequence[float]] = None,
) -> TrainResult:
    """Train ``params`` with Adam; keep the state of ``modules`` at the lowest ``val_loss``.

    ``step(idx)`` returns the loss to minimize plus per-batch float metrics,
    which are averaged over the epoch weighted by batch size. ``validate()``
    must return a dict containing ``val_loss``. ``lr_scales`` holds optional
    per-parameter learning-rate multipliers.
    """
    if n_train < 1:
        raise ValueError("training set is empty")
    opt = Adam(params, lr=schedule.lr, lr_scales=lr_scales)
    result = TrainResult()
    best_state = [m.state_dict() for m in modules]
    stale = 0
    for epoch in range(schedule.epochs):
        for m in modules:
            m.train()
        sums: dict[str, float] = {}
        seen = 0
        for idx in minibatches(n_train, schedule.batch_size, rng):
            opt.zero_grad()
            loss, metrics = step(idx)
            loss.backward()
            opt.step()
            seen += idx.size
            for k, v in metrics.items():
                sums[k] = sums.get(k, 0.0) + v * idx.size
        for m in modules:
            m.eval()
        row = {"epoch": epoch, **{k: v / seen for k, v in sums.items()}, **validate()}
        if epoch_hook is not None:
            epoch_hook(epoch, row)
        result.history.append(row)
        result.epochs_run = epoch + 1
        log.debug("epoch %d %s", epoch, row)
        if row["val_loss"] < result.best_val_loss:
            result.best_val_loss = row["val_loss"]
            result.best_epoch = epoch
            best_state = [m.state_dict() for m in modules]
            stale = 0
        else:
            stale += 1
            if stale >= schedule.patience:
                result.early_stopped = True
                break
    for m, state in zip(modules, best_state):
        m.load_state_dict(state)
        m.eval()
    return result
