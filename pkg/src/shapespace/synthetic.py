"""Procedural line drawings with known shape features.

Every stimulus is a closed curve controlled by four latent features:

* ``aspect``: minor/major axis ratio in [0.35, 1]
* ``curvature``: 1 for an ellipse, 0 for a boxy superellipse
* ``orientation``: rotation of the major axis in [-45, 45] degrees
* ``size``: fraction of the canvas used, irrelevant to dissimilarity

Classes additionally carry a number of lobes which decorates the outline.
Dissimilarities between psychological stimuli are weighted Euclidean
distances of the normalised features plus symmetric Gaussian noise, so a
learnable mapping from pixels to the MDS space exists by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .datasets import EXTRA, PSYCH, SKETCHY, TUBERLIN, StimulusRecord
from .mds import classical_mds, normalize_space

ASPECT_RANGE = (0.35, 1.0)
ORIENTATION_RANGE = (-45.0, 45.0)
SIZE_RANGE = (0.75, 1.0)
LOBE_CHOICES = (0, 3, 4, 5, 6)


@dataclass(frozen=True)
class SyntheticConfig:
    n_categories: int = 12
    per_category: int = 5
    n_extra: int = 70
    n_tuberlin: int = 160
    n_sketchy: int = 120
    n_classes: int = 24
    tuberlin_classes: Tuple[int, int] = (0, 20)
    sketchy_classes: Tuple[int, int] = (8, 24)
    image_size: int = 64
    line_width: float = 2.0
    weight_aspect: float = 1.0
    weight_curvature: float = 1.0
    weight_orientation: float = 0.5
    noise_sigma: float = 0.05
    similar_jitter: float = 0.05
    variable_jitter: float = 0.2
    reference_dim: int = 4


@dataclass(frozen=True)
class SyntheticShapeParams:
    aspect: float
    curvature: float
    orientation: float
    size: float
    category: int
    lobes: int = 0
    wobble: float = 0.0

    def features(self) -> np.ndarray:
        """Features scaled to comparable unit ranges."""
        lo, hi = ASPECT_RANGE
        return np.array([(self.aspect - lo) / (hi - lo), self.curvature,
                         self.orientation / (ORIENTATION_RANGE[1] - ORIENTATION_RANGE[0])])


def _class_means(n_classes: int, rng: np.random.Generator):
    means = []
    for _ in range(n_classes):
        means.append(dict(
            aspect=rng.uniform(*ASPECT_RANGE),
            curvature=rng.uniform(0.0, 1.0),
            orientation=rng.uniform(*ORIENTATION_RANGE),
            lobes=int(rng.choice(LOBE_CHOICES)),
        ))
    return means


def _sample_params(mean: dict, category: int, jitter: float, rng: np.random.Generator,
                   wobble: float = 0.0) -> SyntheticShapeParams:
    a_lo, a_hi = ASPECT_RANGE
    o_lo, o_hi = ORIENTATION_RANGE
    return SyntheticShapeParams(
        aspect=float(np.clip(mean["aspect"] + rng.normal(0.0, jitter) * (a_hi - a_lo), a_lo, a_hi)),
        curvature=float(np.clip(mean["curvature"] + rng.normal(0.0, jitter), 0.0, 1.0)),
        orientation=float(np.clip(mean["orientation"] + rng.normal(0.0, jitter) * (o_hi - o_lo), o_lo, o_hi)),
        size=float(rng.uniform(*SIZE_RANGE)),
        category=category,
        lobes=mean["lobes"],
        wobble=wobble,
    )


def outline(params: SyntheticShapeParams, n_points: int = 180, rng=None) -> np.ndarray:
    """Closed outline as ``(n_points + 1, 2)`` (x, y) points in [-1, 1]."""
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    exponent = 2.0 + 6.0 * (1.0 - params.curvature)
    c, s = np.cos(t), np.sin(t)
    x = np.sign(c) * np.abs(c) ** (2.0 / exponent)
    y = params.aspect * np.sign(s) * np.abs(s) ** (2.0 / exponent)
    radius = 1.0 + (0.12 * np.cos(params.lobes * t) if params.lobes else 0.0)
    if params.wobble and rng is not None:
        for freq in range(2, 7):
            radius = radius + params.wobble / freq * np.cos(freq * t + rng.uniform(0, 2 * np.pi))
    x, y = x * radius, y * radius
    theta = np.deg2rad(params.orientation)
    xr = np.cos(theta) * x - np.sin(theta) * y
    yr = np.sin(theta) * x + np.cos(theta) * y
    pts = np.stack([xr, yr], axis=1)
    pts /= np.abs(pts).max()
    return np.vstack([pts, pts[:1]])


def render_polyline(points: np.ndarray, size: int, line_width: float) -> np.ndarray:
    """Anti-aliased black polyline (pixel coordinates) on a white square canvas."""
    reach = line_width / 2.0 + 1.0
    best = np.full((size, size), np.inf)
    for (ax, ay), (bx, by) in zip(points[:-1], points[1:]):
        x0 = max(int(np.floor(min(ax, bx) - reach)), 0)
        x1 = min(int(np.ceil(max(ax, bx) + reach)), size - 1)
        y0 = max(int(np.floor(min(ay, by) - reach)), 0)
        y1 = min(int(np.ceil(max(ay, by) + reach)), size - 1)
        if x0 > x1 or y0 > y1:
            continue
        yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        dx, dy = bx - ax, by - ay
        denom = max(dx * dx + dy * dy, 1e-12)
        proj = np.clip(((xx - ax) * dx + (yy - ay) * dy) / denom, 0.0, 1.0)
        dist = np.hypot(xx - ax - proj * dx, yy - ay - proj * dy)
        patch = best[y0:y1 + 1, x0:x1 + 1]
        np.minimum(patch, dist, out=patch)
    ink = np.clip(line_width / 2.0 + 0.5 - best, 0.0, 1.0)
    return 1.0 - ink


def render(params: SyntheticShapeParams, image_size: int = 64, line_width: float = 2.0, rng=None) -> np.ndarray:
    pts = outline(params, rng=rng)
    half = (image_size - 1) / 2.0
    scale = params.size * (half - line_width - 1.0)
    return render_polyline(pts * scale + half, image_size, line_width)


def latent_dissimilarities(params: List[SyntheticShapeParams], weights=(1.0, 1.0, 0.5),
                           noise_sigma: float = 0.0, rng=None) -> np.ndarray:
    """Weighted Euclidean feature distances plus symmetric noise, clipped at zero."""
    feats = np.array([p.features() for p in params])
    diff = feats[:, None, :] - feats[None, :, :]
    d = np.sqrt(np.sum(np.asarray(weights) * diff * diff, axis=-1))
    if noise_sigma > 0:
        n = len(params)
        noise = np.triu(rng.normal(0.0, noise_sigma, size=(n, n)), k=1)
        d = np.maximum(d + noise + noise.T, 0.0)
    np.fill_diagonal(d, 0.0)
    return d


def generate_synthetic_corpus(config: SyntheticConfig = SyntheticConfig(), rng=None):
    """Render all four sources and the psychological dissimilarity matrix.

    Returns ``(records, dissimilarities)``; psychological records carry
    coordinates of the normalised ``config.reference_dim`` MDS space and the
    dissimilarity matrix rows follow their order in ``records``.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    means = _class_means(config.n_classes, rng)
    records: List[StimulusRecord] = []
    psych_params = []

    def add(source, idx, params, wobble_rng=None):
        rid = f"{source}_{idx:04d}"
        img = render(params, config.image_size, config.line_width, rng=wobble_rng)
        records.append(StimulusRecord(id=rid, source=source, path=f"images/{rid}.png",
                                      class_label=params.category, image=img))

    for cat in range(config.n_categories):
        jitter = config.similar_jitter if cat < config.n_categories // 2 else config.variable_jitter
        for k in range(config.per_category):
            p = _sample_params(means[cat % config.n_classes], cat % config.n_classes, jitter, rng)
            psych_params.append(p)
            add(PSYCH, cat * config.per_category + k, p)

    for i in range(config.n_extra):
        cls = int(rng.integers(config.n_classes))
        add(EXTRA, i, _sample_params(means[cls], cls, config.variable_jitter, rng))

    for source, count, (lo, hi), wobble in ((TUBERLIN, config.n_tuberlin, config.tuberlin_classes, 0.06),
                                            (SKETCHY, config.n_sketchy, config.sketchy_classes, 0.03)):
        for i in range(count):
            cls = lo + i % (hi - lo)
            add(source, i, _sample_params(means[cls], cls, config.variable_jitter, rng, wobble), wobble_rng=rng)

    weights = (config.weight_aspect, config.weight_curvature, config.weight_orientation)
    d = latent_dissimilarities(psych_params, weights, config.noise_sigma, rng)
    space = normalize_space(classical_mds(d, config.reference_dim))
    psych = [r for r in records if r.source == PSYCH]
    for rec, row in zip(psych, space.coords):
        rec.coords = tuple(float(v) for v in row)
    return records, d
