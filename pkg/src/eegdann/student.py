"""Bi-LSTM student mirroring the teacher's temporal/electrode/brain hierarchy."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import ShapeError, Tensor
from .data.regions import RegionMap, default_region_map
from .nn import BiLSTM, Linear, Module, param_breakdown, param_count


@dataclass(frozen=True)
class StudentConfig:
    n_channels: int = 32
    signal_length: int = 768
    patch_count: int = 6
    patch_length: int = 128
    temporal_hidden: int = 64
    electrode_hidden: int = 32
    brain_hidden: int = 32

    def __post_init__(self):
        for key, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"{key} must be positive, got {value}")
        if self.signal_length != self.patch_count * self.patch_length:
            raise ValueError(
                f"signal_length {self.signal_length} != patch_count {self.patch_count} "
                f"x patch_length {self.patch_length}"
            )


@dataclass
class StudentOutput:
    f_tem: Tensor           # (B, N, 2*d_t)
    f_regions: list         # nine (B, 2*d_e) tensors
    f_spa: Tensor           # (B, 2*d_b)
    logit: Tensor           # (B,)
    prediction: Tensor      # (B,)


def bilstm_sequence(seq: Tensor, lstm: BiLSTM) -> Tensor:
    """``(..., S, I)`` -> ``(..., 2H)`` final forward and backward states."""
    return lstm(seq)


class Student(Module):
    def __init__(self, config: StudentConfig = StudentConfig(), region_map: Optional[RegionMap] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.region_map = region_map or default_region_map()
        c = config
        self.temporal = BiLSTM(c.patch_length, c.temporal_hidden, rng)
        self.electrode = [BiLSTM(2 * c.temporal_hidden, c.electrode_hidden, rng)
                          for _ in self.region_map.regions]
        self.brain = BiLSTM(2 * c.electrode_hidden, c.brain_hidden, rng)
        self.head = Linear(2 * c.brain_hidden, 1, rng)

    def temporal_features(self, x: Tensor) -> Tensor:
        """``(B, N, d)`` -> ``F_Tem`` ``(B, N, 2*d_t)``; each channel is a K-step patch sequence."""
        c = self.config
        if x.shape[-2:] != (c.n_channels, c.signal_length):
            raise ShapeError(f"expected (..., {c.n_channels}, {c.signal_length}) input, got {x.shape}")
        patches = x.reshape(tuple(x.shape[:-1]) + (c.patch_count, c.patch_length))
        return self.temporal(patches)

    def spatial(self, f_tem: Tensor) -> tuple[Tensor, list[Tensor]]:
        regions = [lstm(T.take(f_tem, idx, axis=-2))
                   for lstm, idx in zip(self.electrode, self.region_map.regions)]
        return self.brain(T.stack(regions, axis=-2)), regions

    def forward(self, x) -> StudentOutput:
        x = T.as_tensor(x)
        f_tem = self.temporal_features(x)
        f_spa, regions = self.spatial(f_tem)
        logit = self.head(f_spa)
        logit = logit.reshape(logit.shape[:-1])
        return StudentOutput(f_tem, regions, f_spa, logit, T.sigmoid(logit))

    def param_counts(self) -> dict[str, int]:
        counts = param_breakdown(self)
        counts["total"] = param_count(self)
        return counts
