"""Window containers: single samples and stacked sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class EEGWindow:
    X: np.ndarray          # (32, 768)
    label: int             # 0 = low, 1 = high
    subject_id: str
    window_index: int


@dataclass
class WindowSet:
    """Stacked windows. ``y`` is ``None`` for unlabeled (target-domain) data."""

    X: np.ndarray                   # (n, channels, samples)
    y: Optional[np.ndarray]         # (n,) in {0, 1}
    subject: np.ndarray             # (n,) subject ids

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.subject = np.asarray(self.subject)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (len(self.X),):
                raise ValueError(f"{len(self.X)} windows but labels of shape {self.y.shape}")
        if self.subject.shape != (len(self.X),):
            raise ValueError(f"{len(self.X)} windows but subject ids of shape {self.subject.shape}")

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.X[idx], None if self.y is None else self.y[idx], self.subject[idx])

    def unlabeled(self) -> "WindowSet":
        return WindowSet(self.X, None, self.subject)

    @property
    def subjects(self) -> list:
        return sorted(set(self.subject.tolist()))

    @classmethod
    def from_windows(cls, windows: Sequence[EEGWindow]) -> "WindowSet":
        if not windows:
            raise ValueError("no windows")
        return cls(np.stack([w.X for w in windows]),
                   np.array([w.label for w in windows]),
                   np.array([w.subject_id for w in windows]))

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        labeled = all(p.y is not None for p in parts)
        return cls(np.concatenate([p.X for p in parts]),
                   np.concatenate([p.y for p in parts]) if labeled else None,
                   np.concatenate([p.subject for p in parts]))
