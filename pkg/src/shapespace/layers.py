"""Differentiable layer primitives: convolution, pooling, unpooling, dense
layers, dropout and the three training losses.

Image tensors follow the ``(batch, channel, height, width)`` layout.  Most
functions also accept unbatched inputs and return results of the same rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError
from .tensor import DTYPE, Tensor, as_tensor


@dataclass
class ConvSpec:
    """Kernel of shape ``(out_channels, in_channels, kh, kw)`` plus geometry."""

    kernel: Tensor
    stride: int = 1
    padding: int = 0
    bias: Optional[Tensor] = None

    def __post_init__(self):
        self.kernel = as_tensor(self.kernel)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-d (out, in, kh, kw), got shape {self.kernel.shape}")
        if min(self.kernel.shape) < 1:
            raise ShapeError(f"kernel extents must be positive, got {self.kernel.shape}")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValidationError(f"padding must be >= 0, got {self.padding}")
        if self.bias is not None:
            self.bias = as_tensor(self.bias)


@dataclass(frozen=True)
class PoolSpec:
    pool_width: int
    stride: int

    def __post_init__(self):
        if self.pool_width < 1 or self.stride < 1:
            raise ValidationError(f"pool width and stride must be >= 1, got {self.pool_width}, {self.stride}")


def conv_output_extent(size: int, kernel: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _to_batched(x: Tensor, rank: int):
    """Reshape ``x`` to 4-d; returns the tensor and a function restoring rank."""
    if x.ndim == 4:
        return x, lambda t: t
    if x.ndim < 2 or x.ndim > 4 or (rank == 3 and x.ndim == 2):
        raise ShapeError(f"expected a {rank}-d or 4-d image tensor, got shape {x.shape}")
    lead = 4 - x.ndim
    x4 = x.reshape((1,) * lead + x.shape)

    def restore(t):
        return t.reshape(t.shape[lead:])

    return x4, restore


def _correlate(xp: np.ndarray, kernel: np.ndarray, s: int):
    """Valid cross-correlation of padded ``xp`` with stride ``s``; also returns the im2col matrix."""
    n, c = xp.shape[:2]
    o, _, kh, kw = kernel.shape
    ho, wo = (xp.shape[2] - kh) // s + 1, (xp.shape[3] - kw) // s + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = (cols @ kernel.reshape(o, -1).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return out, cols


def _correlate_backward(g: np.ndarray, cols: np.ndarray, kernel: np.ndarray, xp_shape, s: int, need_dx: bool):
    """Gradients of :func:`_correlate` with respect to the padded input and the kernel."""
    n, o, ho, wo = g.shape
    c, kh, kw = kernel.shape[1:]
    gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
    dk = (gm.T @ cols).reshape(kernel.shape)
    if not need_dx:
        return None, dk
    dcols = gm @ kernel.reshape(o, -1)
    dcols = np.ascontiguousarray(dcols.reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
    dxp = np.zeros(xp_shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[i, j]
    return dxp, dk


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlate ``x`` with the kernel of ``spec``.

    ``out[n, o, y, x] = sum_{c,i,j} K[o, c, i, j] * in[n, c, y*s + i - p, x*s + j - p]``
    with zero padding, plus an optional per-channel bias.
    """
    x = as_tensor(x)
    x4, restore = _to_batched(x, 3)
    kernel = spec.kernel
    n, c, h, w = x4.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input channel axis has {c} channels but kernel axis 1 expects {kc}")
    s, p = spec.stride, spec.padding
    if conv_output_extent(h, kh, s, p) < 1:
        raise ShapeError(f"conv2d: height axis {h} (padding {p}) is smaller than kernel height {kh}")
    if conv_output_extent(w, kw, s, p) < 1:
        raise ShapeError(f"conv2d: width axis {w} (padding {p}) is smaller than kernel width {kw}")

    xp = np.pad(x4.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x4.data
    out, cols = _correlate(xp, kernel.data, s)
    parents = [x4, kernel]
    if spec.bias is not None:
        out = out + spec.bias.data.reshape(1, o, 1, 1)
        parents.append(spec.bias)

    def backward(g):
        dxp, dk = _correlate_backward(g, cols, kernel.data, xp.shape, s, x4.requires_grad)
        dx = dxp[:, :, p:p + h, p:p + w] if (p and dxp is not None) else dxp
        grads = [dx, dk]
        if spec.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return restore(Tensor._make(np.ascontiguousarray(out), parents, backward))


def max_pool(x: Tensor, spec: Union[PoolSpec, int], stride: Optional[int] = None):
    """Max pooling over square windows.

    Returns the pooled tensor and, for every output cell, the flat index
    (``row * width + col``) of the input cell holding the maximum.  Ties go
    to the first cell of the window in row-major order, and only that cell
    receives gradient.
    """
    if not isinstance(spec, PoolSpec):
        spec = PoolSpec(spec, spec if stride is None else stride)
    x = as_tensor(x)
    x4, restore = _to_batched(x, 2)
    n, c, h, w = x4.shape
    k, s = spec.pool_width, spec.stride
    if h < k or w < k:
        raise ShapeError(f"max_pool: pool width {k} exceeds spatial extent {(h, w)}")
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    windows = sliding_window_view(x4.data, (k, k), axis=(2, 3))[:, :, ::s, ::s].reshape(n, c, ho, wo, k * k)
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * s + local // k
    cols = np.arange(wo)[None, :] * s + local % k
    argmax = rows * w + cols

    def backward(g):
        base = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
        flat = np.bincount((base + argmax).ravel(), weights=g.ravel(), minlength=n * c * h * w)
        return (flat.reshape(n, c, h, w),)

    pooled = restore(Tensor._make(np.ascontiguousarray(out), (x4,), backward))
    return pooled, argmax.reshape(pooled.shape)


def unpool(x: Tensor, s: int) -> Tensor:
    """Upsample by ``s``: each value goes to the top-left of an ``s x s`` block of zeros."""
    if s < 1:
        raise ValidationError(f"unpool factor must be >= 1, got {s}")
    x = as_tensor(x)
    x4, restore = _to_batched(x, 2)
    n, c, h, w = x4.shape
    out = np.zeros((n, c, h * s, w * s), dtype=DTYPE)
    out[:, :, ::s, ::s] = x4.data
    return restore(Tensor._make(out, (x4,), lambda g: (np.ascontiguousarray(g[:, :, ::s, ::s]),)))


def upconv(x: Tensor, spec: ConvSpec, scale: int) -> Tensor:
    """Unpooling by ``scale`` followed by a stride-1 convolution.

    Equal to ``conv2d(unpool(x, scale), spec)`` but skips the zeros the
    unpooling introduces: output pixels with row phase ``ry`` and column
    phase ``rx`` only see the kernel taps ``K[:, :, iy::scale, ix::scale]``
    applied to the low-resolution input.
    """
    if spec.stride != 1:
        raise ValidationError("upconv needs a stride-1 convolution")
    if scale == 1:
        return conv2d(x, spec)
    x = as_tensor(x)
    x4, restore = _to_batched(x, 3)
    kernel = spec.kernel
    n, c, h, w = x4.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"upconv: input channel axis has {c} channels but kernel axis 1 expects {kc}")
    s, p = scale, spec.padding
    ho, wo = conv_output_extent(h * s, kh, 1, p), conv_output_extent(w * s, kw, 1, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"upconv: kernel {kh}x{kw} larger than padded unpooled input")

    def phases(extent, k, out_extent):
        # (phase, first tap, input offset, tap count, output count) per phase
        res = []
        for r in range(s):
            count = len(range(r, out_extent, s))
            i0 = (p - r) % s
            taps = len(range(i0, k, s))
            res.append((r, i0, (r + i0 - p) // s, taps, count))
        return res

    rows, colsp = phases(h, kh, ho), phases(w, kw, wo)
    lo_y = max(0, -min(r[2] for r in rows))
    lo_x = max(0, -min(r[2] for r in colsp))
    hi_y = max(0, max(r[2] + r[4] + r[3] - 1 for r in rows) - h)
    hi_x = max(0, max(r[2] + r[4] + r[3] - 1 for r in colsp) - w)
    xp = np.pad(x4.data, ((0, 0), (0, 0), (lo_y, hi_y), (lo_x, hi_x)))
    out = np.zeros((n, o, ho, wo), dtype=DTYPE)
    cache = []
    for ry, iy, dy, ty, cy in rows:
        for rx, ix, dx, tx, cx in colsp:
            if ty == 0 or tx == 0 or cy == 0 or cx == 0:
                continue
            sub = np.ascontiguousarray(kernel.data[:, :, iy::s, ix::s])
            ys, xs = dy + lo_y, dx + lo_x
            view = xp[:, :, ys:ys + cy + ty - 1, xs:xs + cx + tx - 1]
            res, cols = _correlate(view, sub, 1)
            out[:, :, ry::s, rx::s] = res
            cache.append((ry, rx, iy, ix, ys, xs, sub, view.shape, cols))
    parents = [x4, kernel]
    if spec.bias is not None:
        out += spec.bias.data.reshape(1, o, 1, 1)
        parents.append(spec.bias)

    def backward(g):
        dk = np.zeros(kernel.shape, dtype=DTYPE)
        dxp = np.zeros(xp.shape, dtype=DTYPE) if x4.requires_grad else None
        for ry, rx, iy, ix, ys, xs, sub, vshape, cols in cache:
            gp = np.ascontiguousarray(g[:, :, ry::s, rx::s])
            dview, dsub = _correlate_backward(gp, cols, sub, vshape, 1, x4.requires_grad)
            dk[:, :, iy::s, ix::s] += dsub
            if dxp is not None:
                dxp[:, :, ys:ys + vshape[2], xs:xs + vshape[3]] += dview
        dx = None if dxp is None else dxp[:, :, lo_y:lo_y + h, lo_x:lo_x + w]
        grads = [dx, dk]
        if spec.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return restore(Tensor._make(out, parents, backward))


def dense(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None, activation: str = "linear") -> Tensor:
    """Affine map ``x @ W + b`` followed by ``relu`` or the identity.

    ``weights`` has shape ``(in_features, out_features)``; ``x`` is a single
    vector or a batch whose trailing axes flatten to ``in_features``.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x.flatten()
    if weights.ndim != 2:
        raise ShapeError(f"dense weights must be 2-d, got shape {weights.shape}")
    if x2.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: flattened input has {x2.shape[1]} features, weight axis 0 expects {weights.shape[0]}")
    out = x2 @ weights
    if bias is not None:
        out = out + bias
    if activation == "relu":
        out = out.relu()
    elif activation != "linear":
        raise ValidationError(f"unknown activation {activation!r}")
    return out.reshape(-1) if single else out


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero units with probability ``rate`` and rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch.

    ``logits`` is ``(classes,)`` with an integer label or ``(batch, classes)``
    with one label per row.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    labels = np.atleast_1d(np.asarray(labels))
    if z.shape[1] < 2:
        raise ShapeError(f"need at least 2 classes, got {z.shape[1]}")
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"expected {z.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise IndexError(f"class label out of range [0, {z.shape[1]})")
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(log_norm - shifted[rows, labels])

    def backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        grad = g * probs / z.shape[0]
        return (grad.reshape(logits.shape),)

    return Tensor._make(loss, (logits,), backward)


def sigmoid_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of ``max(z, 0) - z*t + log(1 + exp(-|z|))`` over all elements."""
    logits = as_tensor(logits)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"sigmoid_cross_entropy: logits {logits.shape} vs target {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValidationError("sigmoid_cross_entropy targets must lie in [0, 1]")
    z = logits.data
    loss = np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def backward(g):
        return (g * (_sigmoid(z) - t) / z.size,)

    return Tensor._make(loss, (logits,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if t.shape != pred.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    loss = np.mean(diff * diff)

    def backward(g):
        return (g * 2.0 * diff / diff.size,)

    return Tensor._make(loss, (pred,), backward)
