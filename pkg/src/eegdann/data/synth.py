"""Deterministic multi-subject EEG-like generator with controllable subject shift.

Each trial is pink background noise plus class-bearing band-limited
activity. Arousal drives frontal channels (30-45 Hz when high, 8-12 Hz when
low); valence drives parietal channels (12-30 Hz when high, 4-8 Hz when
low). The baseline span carries background only. A subject then sees its
latent signals through ``diag(g) (I + s Q)`` with ``Q`` a random orthogonal
matrix and log-gains ``g ~ s N(0, 0.5)``, plus subject-specific background
rhythms whose size also scales with ``s``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .records import TARGET_RATE, TrialRecord
from .regions import RegionMap, default_region_map

AROUSAL_BANDS = {1: (30.0, 45.0), 0: (8.0, 12.0)}
VALENCE_BANDS = {1: (12.0, 30.0), 0: (4.0, 8.0)}
AROUSAL_REGIONS = ("prefrontal", "frontal")
VALENCE_REGIONS = ("left_parietal", "right_parietal", "midline_parietal")
CLASS_AMPLITUDE = 1.0
SENSOR_NOISE = 0.3
GAIN_SPREAD = 0.5
# Subject-specific background rhythms (alpha, gamma) per unit of shift.
SUBJECT_RHYTHM = 1.5
# Subject-specific tilt of the task channels toward one class band, per unit of shift.
SUBJECT_BIAS = 2.0
# Spread of the subject's overall log-amplitude, per unit of shift.
SUBJECT_GAIN = 1.0


def band_noise(rng: np.random.Generator, shape: tuple, band: tuple, fs: float = TARGET_RATE) -> np.ndarray:
    """Gaussian noise restricted to ``band`` (Hz) and scaled to unit RMS along the last axis."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[..., (freqs < band[0]) | (freqs > band[1])] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))


def pink_noise(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """1/f noise with unit RMS along the last axis."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    f[0] = 1.0
    spec = spec / np.sqrt(f)
    spec[..., 0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _channels(region_map: RegionMap, names: tuple) -> np.ndarray:
    return np.array(sorted(c for name in names for c in region_map.regions[region_map.names.index(name)]))


def _rating(rng: np.random.Generator, label: int) -> float:
    return float(rng.uniform(6.0, 9.0) if label else rng.uniform(1.0, 4.0))


def synth_subjects(
    n_subjects: int = 6,
    trials_per_subject: int = 8,
    shift_strength: float = 0.5,
    seed: int = 0,
    duration_s: float = 60.0,
    baseline_s: float = 3.0,
    region_map: Optional[RegionMap] = None,
) -> list[TrialRecord]:
    """Generate ``n_subjects * trials_per_subject`` float32 trials at 128 Hz.

    Arousal and valence labels are balanced within each subject and drawn
    independently. Subject ``k`` uses its own generator seeded from
    ``(seed, k)``, so adding subjects leaves earlier ones unchanged.
    """
    if shift_strength < 0:
        raise ValueError(f"shift_strength must be non-negative, got {shift_strength}")
    if n_subjects < 1 or trials_per_subject < 1:
        raise ValueError("need at least one subject and one trial")
    region_map = region_map or default_region_map()
    n_ch = sum(region_map.sizes)
    fs = TARGET_RATE
    n_base = int(round(baseline_s * fs))
    n_stim = int(round(duration_s * fs))
    arousal_ch = _channels(region_map, AROUSAL_REGIONS)
    valence_ch = _channels(region_map, VALENCE_REGIONS)
    s = float(shift_strength)

    trials = []
    for k in range(n_subjects):
        rng = np.random.default_rng([seed, k])
        mix = np.eye(n_ch) + s * random_orthogonal(rng, n_ch)
        gains = np.exp(s * GAIN_SPREAD * rng.standard_normal(n_ch) + s * SUBJECT_GAIN * rng.standard_normal())
        lens = gains[:, None] * mix
        alpha_w = s * SUBJECT_RHYTHM * np.abs(rng.standard_normal(n_ch))
        gamma_w = s * SUBJECT_RHYTHM * np.abs(rng.standard_normal(n_ch))
        bias = s * SUBJECT_BIAS * rng.standard_normal(2)
        arousal = rng.permutation(np.arange(trials_per_subject) % 2)
        valence = rng.permutation(np.arange(trials_per_subject) % 2)
        for t in range(trials_per_subject):
            n = n_base + n_stim
            latent = pink_noise(rng, (n_ch, n))
            latent += alpha_w[:, None] * band_noise(rng, (n_ch, n), AROUSAL_BANDS[0])
            latent += gamma_w[:, None] * band_noise(rng, (n_ch, n), AROUSAL_BANDS[1])
            for b, ch, bands in ((bias[0], arousal_ch, AROUSAL_BANDS), (bias[1], valence_ch, VALENCE_BANDS)):
                latent[ch] += abs(b) * band_noise(rng, (ch.size, n), bands[int(b > 0)])
            a, v = int(arousal[t]), int(valence[t])
            latent[arousal_ch, n_base:] += CLASS_AMPLITUDE * band_noise(
                rng, (arousal_ch.size, n_stim), AROUSAL_BANDS[a])
            latent[valence_ch, n_base:] += CLASS_AMPLITUDE * band_noise(
                rng, (valence_ch.size, n_stim), VALENCE_BANDS[v])
            x = lens @ latent + SENSOR_NOISE * rng.standard_normal((n_ch, n))
            trials.append(TrialRecord(
                subject_id=f"S{k + 1:02d}", trial_index=t, data=x.astype(np.float32),
                sampling_rate=fs, baseline_samples=n_base,
                valence=_rating(rng, v), arousal=_rating(rng, a),
            ))
    return trials


def class_band_ratio(x: np.ndarray, region_map: Optional[RegionMap] = None, task: str = "arousal") -> float:
    """Log power ratio (high-class band over low-class band) on the task's channels.

    Positive for high-class activity, negative for low-class activity.
    ``x`` is a ``(channels, samples)`` stimulus span at 128 Hz.
    """
    region_map = region_map or default_region_map()
    bands, names = (AROUSAL_BANDS, AROUSAL_REGIONS) if task == "arousal" else (VALENCE_BANDS, VALENCE_REGIONS)
    ch = _channels(region_map, names)
    spec = np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64)[ch], axis=-1)) ** 2
    freqs = np.fft.rfftfreq(x.shape[-1], 1.0 / TARGET_RATE)

    def power(band):
        return spec[:, (freqs >= band[0]) & (freqs <= band[1])].sum()

    return float(np.log(power(bands[1]) / power(bands[0])))
