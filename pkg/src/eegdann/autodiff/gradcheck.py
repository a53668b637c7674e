"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, no_grad


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ShapeError(f"gradient check needs a scalar function, got shape {out.shape}")
    value = out.item()
    if not np.isfinite(value):
        raise ValueError(f"function value is not finite: {value}")
    return value


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``coords`` restricts the comparison to the given flat indices.
    """
    x0 = np.array(x.data, dtype=np.float64)
    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    _scalar(out)
    if out.requires_grad:
        out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(x0)

    idx = np.arange(x0.size) if coords is None else np.asarray(coords, dtype=np.intp)
    numeric = np.empty(idx.size)
    with no_grad():
        for j, i in enumerate(idx):
            xp = x0.copy()
            xp.flat[i] += h
            xm = x0.copy()
            xm.flat[i] -= h
            numeric[j] = (_scalar(f(Tensor(xp))) - _scalar(f(Tensor(xm)))) / (2.0 * h)
    return _relative_error(analytic.reshape(-1)[idx], numeric)


def grad_check_param(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    h: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """Same check for a tensor that ``loss_fn`` reads from its closure (a model weight).

    ``param.data`` is perturbed in place and restored afterwards.
    """
    saved_grad = param.grad
    param.grad = None
    out = loss_fn()
    _scalar(out)
    if out.requires_grad:
        out.backward()
    analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
    param.grad = saved_grad

    idx = np.arange(param.size) if coords is None else np.asarray(coords, dtype=np.intp)
    numeric = np.empty(idx.size)
    flat = param.data.reshape(-1)
    with no_grad():
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(loss_fn())
            flat[i] = orig - h
            fm = _scalar(loss_fn())
            flat[i] = orig
            numeric[j] = (fp - fm) / (2.0 * h)
    return _relative_error(analytic.reshape(-1)[idx], numeric)
