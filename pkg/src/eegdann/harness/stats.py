"""Paired t-test across per-subject accuracies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    dof: int
    degenerate: bool = False   # differences had zero variance


def t_two_tailed_p(t: float, dof: int) -> float:
    """Two-tailed p of Student's t: ``I_x(dof/2, 1/2)`` with ``x = dof / (dof + t^2)``."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be positive, got {dof}")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < dof:
        # Near t = 0 the complementary form avoids rounding in 1 - x.
        return float(1.0 - betainc(0.5, dof / 2.0, t2 / (dof + t2)))
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t2)))


def paired_ttest(a, b) -> TTest:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTest(0.0, 1.0, n - 1, True)
        return TTest(math.copysign(math.inf, mean), 0.0, n - 1, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, t_two_tailed_p(t, n - 1), n - 1)
