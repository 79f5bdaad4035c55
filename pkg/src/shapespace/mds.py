"""Classical (Torgerson) multidimensional scaling and target-space handling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, ValidationError


def check_dissimilarities(d, atol: float = 1e-12) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"dissimilarity matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValidationError("dissimilarity matrix contains non-finite entries")
    if not np.allclose(d, d.T, rtol=0.0, atol=atol):
        raise ValidationError("dissimilarity matrix is not symmetric")
    if np.any(np.abs(np.diag(d)) > atol):
        raise ValidationError("dissimilarity matrix has a non-zero diagonal")
    if np.any(d < -atol):
        raise ValidationError("dissimilarity matrix has negative entries")
    return d


@dataclass
class TargetSpace:
    """Coordinates of ``n`` stimuli in a ``dim``-dimensional similarity space.

    ``normalization_scale`` is the factor already applied to the raw MDS
    coordinates; ``clamped_axes`` counts requested axes whose eigenvalue was
    negative and therefore collapsed to zero.
    """

    coords: np.ndarray
    normalization_scale: float = 1.0
    dissimilarities: Optional[np.ndarray] = None
    ids: Optional[List[str]] = None
    clamped_axes: int = 0

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def classical_mds(d, dim: int, ids: Optional[Sequence[str]] = None) -> TargetSpace:
    """Embed a dissimilarity matrix in ``dim`` dimensions.

    Double-centres the squared dissimilarities, keeps the ``dim`` largest
    eigenpairs and scales eigenvectors by the square root of their (clamped)
    eigenvalues.  Each axis is oriented so that its largest-magnitude
    coordinate is positive.
    """
    d = check_dissimilarities(d)
    n = d.shape[0]
    if not 1 <= dim <= n - 1:
        raise ValidationError(f"dim must lie in [1, {n - 1}] for {n} stimuli, got {dim}")
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * centering @ (d * d) @ centering
    b = 0.5 * (b + b.T)
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1][:dim]
    evals, evecs = evals[order], evecs[:, order]
    clamped = int(np.sum(evals < 0))
    coords = evecs * np.sqrt(np.maximum(evals, 0.0))
    for axis in range(dim):
        pivot = np.argmax(np.abs(coords[:, axis]))
        if coords[pivot, axis] < 0:
            coords[:, axis] = -coords[:, axis]
    coords -= coords.mean(axis=0)
    return TargetSpace(coords=coords, dissimilarities=d, ids=None if ids is None else list(ids),
                       clamped_axes=clamped)


def normalize_space(space: TargetSpace) -> TargetSpace:
    """Rescale so the mean squared coordinate is 1.

    Afterwards a predictor that always outputs the origin has a mean squared
    error of exactly one, whatever the dimensionality.
    """
    mean_sq = float(np.mean(space.coords ** 2))
    if not mean_sq > 0.0:
        raise DataError("cannot normalise a degenerate space with all-zero coordinates")
    scale = 1.0 / np.sqrt(mean_sq)
    return replace(space, coords=space.coords * scale, normalization_scale=space.normalization_scale * scale)


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    return np.sqrt(sq)


def upper_triangle(m: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(m.shape[0], k=1)
    return m[i, j]


# -- CSV files -----------------------------------------------------------

def write_dissimilarities(path, d: np.ndarray, ids: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *ids])
        for sid, row in zip(ids, d):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def read_dissimilarities(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0][1:]
    d = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if [r[0] for r in rows[1:]] != ids:
        raise DataError(f"{path}: row ids do not match the header")
    return check_dissimilarities(d, atol=1e-9), ids


def write_space(path, space: TargetSpace, ids: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"dim_{k + 1}" for k in range(space.dim))])
        for sid, row in zip(ids, space.coords):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def read_space(path) -> TargetSpace:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise DataError(f"{path}: missing header row")
    ids = [r[0] for r in rows[1:]]
    coords = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return TargetSpace(coords=coords, ids=ids)
