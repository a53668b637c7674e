"""Welch band powers and the between-subject Pearson correlation matrix."""

from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy.signal import welch

from .records import TARGET_RATE

SEGMENT = 256
BANDS = {"theta": (4.0, 8.0), "alpha": (8.0, 12.0), "beta": (12.0, 30.0), "gamma": (30.0, 45.0)}


def welch_psd(x: np.ndarray, fs: int = TARGET_RATE) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < SEGMENT:
        raise ValueError(f"signal of {x.shape[-1]} samples is shorter than one {SEGMENT}-sample segment")
    return welch(x, fs=fs, window="hamming", nperseg=SEGMENT, noverlap=SEGMENT // 2, axis=-1)


def psd_band_power(x: np.ndarray, band, fs: int = TARGET_RATE) -> np.ndarray:
    """Power in ``band`` (inclusive edges) per channel: PSD summed over bins times bin width."""
    lo, hi = BANDS[band] if isinstance(band, str) else band
    freqs, pxx = welch_psd(x, fs)
    mask = (freqs >= lo) & (freqs <= hi)
    return pxx[..., mask].sum(axis=-1) * (freqs[1] - freqs[0])


def subject_features(windows_by_subject: Mapping[str, np.ndarray], band) -> dict[str, np.ndarray]:
    """Mean per-channel band power over each subject's ``(n, channels, samples)`` windows."""
    return {sid: psd_band_power(w, band).mean(axis=0) for sid, w in windows_by_subject.items()}


def pearson_matrix(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r between the rows of ``features``.

    Returns ``(matrix, undefined)``; a constant row has its row and column
    set to NaN and is flagged in ``undefined``. Each entry is
    ``<ci, cj> / sqrt(<ci, ci> <cj, cj>)`` on centred rows, so identical rows
    give exactly 1.
    """
    feats = np.asarray(features, dtype=np.float64)
    centred = feats - feats.mean(axis=1, keepdims=True)
    n = len(feats)
    dots = np.array([[np.dot(centred[i], centred[j]) for j in range(n)] for i in range(n)])
    sq = np.diag(dots).copy()
    undefined = sq == 0
    corr = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if not (undefined[i] or undefined[j]):
                corr[i, j] = 1.0 if i == j else min(1.0, max(-1.0, dots[i, j] / np.sqrt(sq[i] * sq[j])))
    return corr, undefined


def subject_psd_correlation(windows_by_subject: Mapping[str, np.ndarray], band) -> tuple[np.ndarray, np.ndarray]:
    """Between-subject Pearson matrix of mean per-channel band powers (see :func:`pearson_matrix`)."""
    if len(windows_by_subject) < 2:
        raise ValueError("correlation analysis needs at least two subjects")
    return pearson_matrix(np.stack(list(subject_features(windows_by_subject, band).values())))
