"""Mapping, classification, rank-correlation and cluster-separation metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import DataError, EvaluationError, ValidationError
from .layers import sigmoid_cross_entropy
from .mds import check_dissimilarities, upper_triangle


@dataclass(frozen=True)
class MappingMetrics:
    mse: float
    med: float
    relative_med: Optional[float]
    r2: float


def mapping_metrics(pred, truth, baseline_med: Optional[float] = None,
                    reference: str = "zero") -> MappingMetrics:
    """MSE over all entries, mean Euclidean distance over rows and R².

    R² is ``1 - mse / mse_ref``.  The default reference is the predictor that
    always outputs the origin; ``reference="mean"`` uses the column means of
    ``truth`` instead.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    if truth.shape[0] == 0:
        raise DataError("no rows to evaluate")
    err = pred - truth
    mse = float(np.mean(err ** 2))
    med = float(np.mean(np.sqrt(np.sum(err ** 2, axis=1))))
    if reference == "zero":
        ref = float(np.mean(truth ** 2))
    elif reference == "mean":
        ref = float(np.mean((truth - truth.mean(axis=0)) ** 2))
    else:
        raise ValidationError(f"unknown R² reference {reference!r}")
    r2 = 1.0 - mse / ref if ref > 0 else (1.0 if mse == 0 else -np.inf)
    rel = med / baseline_med if baseline_med is not None else None
    return MappingMetrics(mse, med, rel, r2)


def zero_baseline_med(truth) -> float:
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    return float(np.mean(np.sqrt(np.sum(truth ** 2, axis=1))))


def accuracy(predicted, true, sources: Optional[Sequence[str]] = None, source: Optional[str] = None) -> float:
    """Fraction of exact matches, optionally only over rows of one source."""
    predicted, true = np.asarray(predicted), np.asarray(true)
    if predicted.shape != true.shape:
        raise ValidationError("predicted and true labels are not aligned")
    if source is not None:
        mask = np.asarray(sources) == source
        predicted, true = predicted[mask], true[mask]
    if true.size == 0:
        raise DataError("no examples to score")
    return float(np.mean(predicted == true))


# -- Kendall's tau -------------------------------------------------------

def _tie_pairs(sorted_values: np.ndarray) -> int:
    """Number of tied pairs in an already sorted array."""
    _, counts = np.unique(sorted_values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _count_inversions(a: np.ndarray) -> int:
    """Strict inversions (i < j with a[i] > a[j]) by bottom-up merge sort."""
    a = list(a)
    n = len(a)
    buf = [0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid, hi = min(lo + width, n), min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inversions += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k:hi] = a[i:mid] + a[j:hi] if i < mid else a[j:hi]
            a[lo:hi] = buf[lo:hi]
        width *= 2
    return inversions


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall rank correlation (tau-b) in O(n log n).

    Integer pair counts are exact, so the result agrees bit for bit with a
    direct pair count.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("kendall_tau needs two 1-d sequences of equal length")
    n = x.size
    if n < 2:
        raise ValidationError("kendall_tau needs at least two values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("kendall_tau inputs must be finite")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _tie_pairs(xs)
    # pairs tied in both x and y
    txy = 0
    start = 0
    for end in list(np.flatnonzero(np.diff(xs) != 0) + 1) + [n]:
        if end - start > 1:
            txy += _tie_pairs(ys[start:end])
        start = end
    ty = _tie_pairs(np.sort(ys))
    if tx == n0 or ty == n0:
        raise EvaluationError("correlation undefined: one input is constant")
    discordant = _count_inversions(ys)
    concordant = n0 - tx - ty + txy - discordant
    return float((concordant - discordant) / np.sqrt(float(n0 - tx) * float(n0 - ty)))


def feature_distances(features, distance: str = "euclidean") -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if distance == "euclidean":
        sq = np.sum(f ** 2, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * f @ f.T, 0.0)
        return np.sqrt(d2)
    if distance == "cosine":
        return cosine_distances(f)
    raise ValidationError(f"unknown distance {distance!r}")


def feature_space_tau(features, dissimilarities, distance: str = "euclidean") -> float:
    """Kendall's tau between pairwise feature distances and dissimilarities."""
    f = np.asarray(features, dtype=np.float64)
    d = check_dissimilarities(dissimilarities, atol=1e-9)
    if f.shape[0] != d.shape[0]:
        raise ValidationError(f"{f.shape[0]} feature vectors for {d.shape[0]} stimuli")
    if np.allclose(f, f[0]):
        raise EvaluationError("features are constant across stimuli")
    return kendall_tau(upper_triangle(feature_distances(f, distance)), upper_triangle(d))


# -- silhouette ----------------------------------------------------------

def cosine_distances(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise ValidationError("cosine distance is undefined for zero vectors")
    u = f / norms[:, None]
    d = 1.0 - np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(d, 0.0)
    return d


def silhouette_cosine(features, labels) -> float:
    """Mean silhouette coefficient under cosine distance; singletons score 0."""
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if f.shape[0] != labels.shape[0]:
        raise ValidationError("one label per feature vector is required")
    uniq, codes = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValidationError("silhouette needs at least two clusters")
    d = cosine_distances(f)
    onehot = np.zeros((f.shape[0], uniq.size))
    onehot[np.arange(f.shape[0]), codes] = 1.0
    sizes = onehot.sum(axis=0)
    sums = d @ onehot
    own = sizes[codes]
    rows = np.arange(f.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[rows, codes] / (own - 1)
        other = sums / sizes
    other[rows, codes] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(s))


def reconstruction_error(net, images, batch_size: int = 64) -> float:
    """Mean sigmoid cross-entropy of the decoder output against clean inputs."""
    images = np.asarray(images, dtype=np.float64)
    total = 0.0
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        logits = net.decode(net.encode(chunk, training=False), training=False)
        total += sigmoid_cross_entropy(logits, chunk).item() * len(chunk)
    return total / len(images)


# -- result tables -------------------------------------------------------

TABLE2_COLUMNS = ("configuration", "task", "regressor", "beta_lambda", "tau", "mse", "med", "r2")
TABLE3_COLUMNS = ("configuration", "noise_level", "silhouette")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_table(path, rows: Sequence[Dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def metrics_dict(m: MappingMetrics) -> Dict[str, Optional[float]]:
    return asdict(m)
