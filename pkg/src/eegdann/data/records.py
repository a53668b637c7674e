from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TARGET_RATE = 128


@dataclass
class TrialRecord:
    """One recorded trial: a channel-major sample matrix plus its self-assessment ratings.

    The first ``baseline_samples`` columns are the pre-stimulus baseline.
    """

    subject_id: str
    trial_index: int
    data: np.ndarray            # (channels, samples)
    sampling_rate: int
    baseline_samples: int
    valence: float
    arousal: float

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"trial data must be (channels, samples), got shape {self.data.shape}")
        if not 0 <= self.baseline_samples < self.data.shape[1]:
            raise ValueError(
                f"baseline span {self.baseline_samples} must be below the {self.data.shape[1]} samples"
            )
        for name in ("valence", "arousal"):
            value = getattr(self, name)
            if not 1.0 <= value <= 9.0:
                raise ValueError(f"{name} rating {value} outside [1, 9]")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def needs_downsampling(self) -> bool:
        return self.sampling_rate != TARGET_RATE

    def rating(self, task: str) -> float:
        if task not in ("arousal", "valence"):
            raise ValueError(f"task must be 'arousal' or 'valence', got {task!r}")
        return getattr(self, task)

    def replace(self, **changes) -> "TrialRecord":
        fields = dict(subject_id=self.subject_id, trial_index=self.trial_index, data=self.data,
                      sampling_rate=self.sampling_rate, baseline_samples=self.baseline_samples,
                      valence=self.valence, arousal=self.arousal)
        fields.update(changes)
        return TrialRecord(**fields)
