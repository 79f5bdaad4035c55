"""Adam with coupled L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              weight_decay: Union[float, Sequence[float]] = 0.0) -> Sequence[Tensor]:
    """Apply one bias-corrected Adam update in place and return ``params``.

    ``weight_decay`` is either one coefficient for all parameters or one per
    parameter; it adds ``weight_decay * theta`` to the gradient before the
    moment update.  ``None`` gradients count as zero.
    """
    if np.isscalar(weight_decay):
        decays = [float(weight_decay)] * len(params)
    else:
        decays = [float(d) for d in weight_decay]
    if len(grads) != len(params) or len(decays) != len(params):
        raise ShapeError("params, grads and weight decays must align")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for i, (p, g, wd) in enumerate(zip(params, grads, decays)):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise ShapeError(f"gradient/moment shape mismatch for parameter {p.name or i}")
        if wd:
            g = g + wd * p.data
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params
