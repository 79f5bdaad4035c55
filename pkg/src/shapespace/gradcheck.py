"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationError, ValidationError
from .tensor import Tensor


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               n_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               coords: Optional[Sequence[int]] = None) -> float:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Returns ``max_i |a_i - n_i| / max(1, |a_i|, |n_i|)``.  When ``n_coords`` is
    given, only that many randomly chosen coordinates are probed; ``coords``
    names the flat indices to probe explicitly.  ``f`` may close over other
    tensors, whose values are left untouched.
    """
    if h <= 0:
        raise ValidationError(f"step must be positive, got {h}")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    value = out.item()
    if not np.isfinite(value):
        raise EvaluationError(f"f(x) is not finite: {value}")
    out.backward()
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    if coords is not None:
        coords = np.asarray(coords, dtype=np.int64)
    elif n_coords is not None and n_coords < x.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(x.size, size=n_coords, replace=False)
    else:
        coords = np.arange(x.size)

    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x).item()
        flat[i] = orig - h
        f_minus = f(x).item()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"f is not finite near coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * h)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, err)
    return worst
