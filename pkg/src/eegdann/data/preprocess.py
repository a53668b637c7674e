"""Preprocessing chain: downsample -> bandpass -> baseline subtraction ->
6-s windows -> label binarization.

Filters are linear-phase windowed-sinc FIRs (Hamming, 255 taps) applied
with reflected edges and the group delay removed, so outputs line up with
inputs sample for sample.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .records import TARGET_RATE, TrialRecord
from .windows import EEGWindow

NUM_TAPS = 255
BAND = (4.0, 45.0)
ANTI_ALIAS_CUTOFF = 45.0
WINDOW_SECONDS = 6
WINDOW_SAMPLES = WINDOW_SECONDS * TARGET_RATE


def _sinc_lowpass(cutoff: float, fs: float, numtaps: int) -> np.ndarray:
    n = np.arange(numtaps) - (numtaps - 1) / 2.0
    fc = cutoff / fs
    return 2.0 * fc * np.sinc(2.0 * fc * n)


def fir_lowpass(cutoff: float, fs: float, numtaps: int = NUM_TAPS) -> np.ndarray:
    """Hamming-windowed sinc lowpass normalized to unit DC gain."""
    h = _sinc_lowpass(cutoff, fs, numtaps) * np.hamming(numtaps)
    return h / h.sum()


def fir_bandpass(low: float, high: float, fs: float, numtaps: int = NUM_TAPS) -> np.ndarray:
    """Hamming-windowed sinc bandpass with unit gain at the band centre."""
    if not 0 < low < high < fs / 2:
        raise ValueError(f"band ({low}, {high}) Hz invalid at {fs} Hz")
    h = (_sinc_lowpass(high, fs, numtaps) - _sinc_lowpass(low, fs, numtaps)) * np.hamming(numtaps)
    n = np.arange(numtaps) - (numtaps - 1) / 2.0
    centre = 0.5 * (low + high)
    return h / np.sum(h * np.cos(2.0 * np.pi * centre * n / fs))


def apply_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-delay filtering along the last axis with reflect padding (odd ``taps`` only)."""
    if taps.size % 2 != 1:
        raise ValueError("zero-delay filtering needs an odd number of taps")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] <= taps.size:
        raise ValueError(f"signal of {x.shape[-1]} samples is shorter than the {taps.size}-tap filter")
    half = taps.size // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad, mode="reflect")
    flat = xp.reshape(-1, xp.shape[-1])
    out = np.stack([np.convolve(row, taps, mode="valid") for row in flat])
    return out.reshape(x.shape)


def frequency_response(taps: np.ndarray, freqs, fs: float) -> np.ndarray:
    """Magnitude of the FIR response at the given frequencies."""
    k = np.arange(taps.size)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    return np.abs(np.exp(-2j * np.pi * np.outer(freqs, k) / fs) @ taps)


def downsample(x: np.ndarray, rate: int, target: int = TARGET_RATE) -> np.ndarray:
    """Anti-alias lowpass at 45 Hz (source rate) then keep every ``rate/target``-th sample."""
    if rate % target:
        raise ValueError(f"cannot decimate {rate} Hz to {target} Hz by an integer factor")
    factor = rate // target
    if factor == 1:
        return np.asarray(x, dtype=np.float64)
    y = apply_fir(x, fir_lowpass(ANTI_ALIAS_CUTOFF, rate))
    n = (y.shape[-1] // factor) * factor
    return y[..., :n:factor]


def bandpass(x: np.ndarray, rate: int = TARGET_RATE, band: tuple = BAND) -> np.ndarray:
    return apply_fir(x, fir_bandpass(band[0], band[1], rate))


def baseline_subtract(trial: TrialRecord) -> TrialRecord:
    """Subtract each channel's baseline mean from its stimulus span; drop the baseline."""
    b = trial.baseline_samples
    if b <= 0:
        raise ValueError("trial has no baseline span to subtract")
    data = np.asarray(trial.data, dtype=np.float64)
    base = data[:, :b].mean(axis=1, keepdims=True)
    return trial.replace(data=data[:, b:] - base, baseline_samples=0)


def window_segments(trial: TrialRecord, length: int = WINDOW_SAMPLES) -> np.ndarray:
    """Non-overlapping windows ``(n_windows, channels, length)``; the remainder is dropped."""
    if trial.sampling_rate != TARGET_RATE:
        raise ValueError(f"windowing expects {TARGET_RATE} Hz, trial is at {trial.sampling_rate} Hz")
    data = np.asarray(trial.data[:, trial.baseline_samples:], dtype=np.float64)
    n = data.shape[1] // length
    return data[:, : n * length].reshape(data.shape[0], n, length).transpose(1, 0, 2).copy()


def binarize_labels(rating: float, threshold_at_five: bool = False) -> Optional[int]:
    """1-4 -> 0 (low), 6-9 -> 1 (high), otherwise ``None`` (discard).

    With ``threshold_at_five`` the gap closes: ratings above 5 are high.
    """
    if not 1.0 <= rating <= 9.0:
        raise ValueError(f"rating {rating} outside [1, 9]")
    if threshold_at_five:
        return int(rating > 5.0)
    if rating <= 4.0:
        return 0
    if rating >= 6.0:
        return 1
    return None


def preprocess_trial(trial: TrialRecord, task: str = "arousal", threshold_at_five: bool = False) -> list[EEGWindow]:
    label = binarize_labels(trial.rating(task), threshold_at_five)
    if label is None:
        return []
    x = np.asarray(trial.data, dtype=np.float64)
    rate = trial.sampling_rate
    baseline = trial.baseline_samples
    if rate != TARGET_RATE:
        x = downsample(x, rate)
        baseline = baseline * TARGET_RATE // rate
        rate = TARGET_RATE
    x = bandpass(x, rate)
    cleaned = baseline_subtract(trial.replace(data=x, sampling_rate=rate, baseline_samples=baseline))
    return [EEGWindow(w, label, trial.subject_id, k) for k, w in enumerate(window_segments(cleaned))]
