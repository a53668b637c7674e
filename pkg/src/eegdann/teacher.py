"""Transformer teacher: shared per-channel temporal encoder, nine region
encoders, one brain-region encoder and a sigmoid read-out of the class token.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import ShapeError, Tensor
from .data.regions import RegionMap, default_region_map
from .data.windows import WindowSet
from .training import Schedule, TrainResult, bce_from_logits, fit, predict_logits, stratified_split
from .nn import Linear, Module, TransformerBlock, param_breakdown, param_count, parameter, xavier_uniform


@dataclass(frozen=True)
class TeacherConfig:
    n_channels: int = 32
    signal_length: int = 768
    patch_count: int = 6
    patch_length: int = 128
    temporal_dim: int = 64
    temporal_blocks: int = 1
    electrode_dim: int = 32
    electrode_blocks: int = 2
    brain_dim: int = 64
    brain_blocks: int = 2
    temporal_heads: int = 4
    electrode_heads: int = 4
    brain_heads: int = 4
    # Feed-forward widths per level. The spatial levels use the common
    # 2048-wide encoder default; the temporal level keeps 4x its model width.
    temporal_mlp_dim: int = 256
    electrode_mlp_dim: int = 2048
    brain_mlp_dim: int = 2048
    shared_region_encoders: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        for key, value in asdict(self).items():
            if isinstance(value, int) and not isinstance(value, bool) and value <= 0:
                raise ValueError(f"{key} must be positive, got {value}")
        if self.signal_length != self.patch_count * self.patch_length:
            raise ValueError(
                f"signal_length {self.signal_length} != patch_count {self.patch_count} "
                f"x patch_length {self.patch_length}"
            )
        for dim, heads, level in (
            (self.temporal_dim, self.temporal_heads, "temporal"),
            (self.electrode_dim, self.electrode_heads, "electrode"),
            (self.brain_dim, self.brain_heads, "brain"),
        ):
            if dim % heads:
                raise ValueError(f"{level} dim {dim} not divisible by {heads} heads")


@dataclass
class TeacherOutput:
    z_tem: Tensor       # (B, N, D_T)
    z_spa: Tensor       # (B, D_B)
    logit: Tensor       # (B,)
    prediction: Tensor  # (B,)


class PatchEmbedding(Module):
    """Bias-free linear embedding plus a class token and a learned positional table."""

    def __init__(self, in_dim: int, dim: int, max_tokens: int, rng: np.random.Generator):
        super().__init__()
        self.weight = parameter(xavier_uniform(rng, in_dim, dim))
        self.cls = parameter(rng.normal(0.0, 0.02, dim))
        self.pos = parameter(rng.normal(0.0, 0.02, (max_tokens + 1, dim)))

    def forward(self, tokens: Tensor) -> Tensor:
        *lead, s, _ = tokens.shape
        if s + 1 > self.pos.shape[0]:
            raise ShapeError(f"{s} tokens exceed the positional table of {self.pos.shape[0] - 1}")
        dim = self.weight.shape[1]
        cls = T.expand(self.cls, tuple(lead) + (1, dim))
        pos = self.pos if s + 1 == self.pos.shape[0] else self.pos[: s + 1]
        return T.concat([cls, tokens @ self.weight], axis=-2) + pos


def embed_patches(signal: Tensor, embedding: PatchEmbedding, patch_count: int, patch_length: int) -> Tensor:
    """Split ``(..., d)`` into ``patch_count`` patches and embed to ``(..., K+1, D)``."""
    d = signal.shape[-1]
    if d != patch_count * patch_length:
        raise ShapeError(f"signal length {d} is not {patch_count} patches of {patch_length}")
    patches = signal.reshape(tuple(signal.shape[:-1]) + (patch_count, patch_length))
    return embedding(patches)


class Encoder(Module):
    def __init__(self, in_dim: int, dim: int, max_tokens: int, blocks: int, heads: int,
                 mlp_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.embedding = PatchEmbedding(in_dim, dim, max_tokens, rng)
        self.blocks = [TransformerBlock(dim, heads, mlp_dim, rng, dropout) for _ in range(blocks)]

    def encode(self, z: Tensor) -> Tensor:
        for block in self.blocks:
            z = block(z)
        return z

    def forward(self, tokens: Tensor) -> Tensor:
        return self.encode(self.embedding(tokens))


class Teacher(Module):
    def __init__(self, config: TeacherConfig = TeacherConfig(), region_map: Optional[RegionMap] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.region_map = region_map or default_region_map()
        c = config
        self.temporal = Encoder(c.patch_length, c.temporal_dim, c.patch_count, c.temporal_blocks,
                                c.temporal_heads, c.temporal_mlp_dim, rng, c.dropout)
        sizes = self.region_map.sizes
        if c.shared_region_encoders:
            self.electrode = [Encoder(c.temporal_dim, c.electrode_dim, max(sizes), c.electrode_blocks,
                                      c.electrode_heads, c.electrode_mlp_dim, rng, c.dropout)]
        else:
            self.electrode = [
                Encoder(c.temporal_dim, c.electrode_dim, m, c.electrode_blocks, c.electrode_heads,
                        c.electrode_mlp_dim, rng, c.dropout)
                for m in sizes
            ]
        self.brain = Encoder(c.electrode_dim, c.brain_dim, len(sizes), c.brain_blocks, c.brain_heads,
                             c.brain_mlp_dim, rng, c.dropout)
        self.head = Linear(c.brain_dim, 1, rng)

    def _region_encoder(self, r: int) -> Encoder:
        return self.electrode[0] if self.config.shared_region_encoders else self.electrode[r]

    def temporal_features(self, x: Tensor) -> Tensor:
        """``(B, N, d)`` -> ``Z_Tem`` of shape ``(B, N, D_T)``; the mean includes the class row."""
        c = self.config
        if x.shape[-2:] != (c.n_channels, c.signal_length):
            raise ShapeError(f"expected (..., {c.n_channels}, {c.signal_length}) input, got {x.shape}")
        z = self.temporal.encode(embed_patches(x, self.temporal.embedding, c.patch_count, c.patch_length))
        return z.mean(axis=-2)

    def region_sequences(self, z_tem: Tensor) -> list[Tensor]:
        """Embedded token sequences ``(B, M+1, D_E)`` per region, before the region blocks."""
        return [self._region_encoder(r).embedding(T.take(z_tem, idx, axis=-2))
                for r, idx in enumerate(self.region_map.regions)]

    def spatial(self, z_tem: Tensor) -> tuple[Tensor, Tensor]:
        """``Z_Tem`` -> (``Z_Spa`` of shape ``(B, D_B)``, class logit ``(B,)``)."""
        regions = [self._region_encoder(r).encode(seq).mean(axis=-2)
                   for r, seq in enumerate(self.region_sequences(z_tem))]
        zb = self.brain(T.stack(regions, axis=-2))
        z_spa = zb.mean(axis=-2)
        logit = self.head(zb[..., 0, :])
        return z_spa, logit.reshape(logit.shape[:-1])

    def forward(self, x) -> TeacherOutput:
        x = T.as_tensor(x)
        z_tem = self.temporal_features(x)
        z_spa, logit = self.spatial(z_tem)
        return TeacherOutput(z_tem, z_spa, logit, T.sigmoid(logit))

    def param_counts(self) -> dict[str, int]:
        counts = param_breakdown(self)
        counts["total"] = param_count(self)
        return counts


def train_teacher(
    source: WindowSet,
    schedule: Schedule,
    config: TeacherConfig = TeacherConfig(),
    region_map: Optional[RegionMap] = None,
    seed: int = 0,
    teacher: Optional[Teacher] = None,
) -> tuple[Teacher, TrainResult]:
    """Fit the teacher on labeled source windows with BCE; returns the best-validation state."""
    if source.y is None or len(source) == 0:
        raise ValueError("teacher training needs a non-empty labeled source set")
    rng = np.random.default_rng(seed)
    if teacher is None:
        teacher = Teacher(config, region_map, rng)
    tr, va = stratified_split(source.y, schedule.val_fraction, rng)
    if va.size == 0:
        va = tr
    X, y = source.X, source.y.astype(np.float64)

    def step(idx):
        rows = tr[idx]
        loss = T.bce_with_logits(teacher(Tensor(X[rows])).logit, y[rows])
        return loss, {"train_loss": loss.item()}

    def validate():
        z = predict_logits(lambda x: teacher(x).logit, X[va], batch_size=64)
        return {"val_loss": bce_from_logits(z, y[va]), "val_acc": float(np.mean((z > 0) == (y[va] > 0.5)))}

    result = fit([teacher], teacher.parameters(), step, tr.size, validate, schedule, rng)
    return teacher, result
