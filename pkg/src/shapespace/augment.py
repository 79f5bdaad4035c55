"""Line-drawing augmentation and salt-and-pepper corruption.

Images are 2-d float arrays in [0, 1] with 1 for the white background and 0
for black ink.  Each augmented copy is produced by the fixed pipeline

    horizontal flip -> rotation, then horizontal shear -> crop to bounding box
    -> rescale and place on a white canvas

where flips and rotation/shear are disabled for psychological stimuli so the
orientation of the drawn object survives.  Resampling is bilinear with white
fill outside the source.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import PSYCH, SOURCES, StimulusRecord
from .errors import ConfigError, DataError, ValidationError

INK_THRESHOLD = 0.95


@dataclass(frozen=True)
class AugmentPolicy:
    allow_flip: bool = True
    allow_rotate_shear: bool = True
    max_angle_degrees: float = 15.0
    rescale_min: int = 48
    rescale_max: int = 64
    canvas_size: int = 64
    copies_per_original: int = 20
    flip_probability: float = 0.5
    ink_threshold: float = INK_THRESHOLD

    def __post_init__(self):
        if not 1 <= self.rescale_min <= self.rescale_max <= self.canvas_size:
            raise ConfigError(
                f"need 1 <= rescale_min <= rescale_max <= canvas_size, got "
                f"{self.rescale_min}, {self.rescale_max}, {self.canvas_size}")
        if self.copies_per_original < 0:
            raise ConfigError("copies_per_original must be non-negative")
        if self.max_angle_degrees < 0:
            raise ConfigError("max_angle_degrees must be non-negative")


# Copies per original for (psych, extra, tuberlin_like, sketchy_like).
PAPER_FACTORS = (2000, 2000, 12, 4)
DESK_FACTORS = (20, 20, 3, 4)


def policy_presets(scale: str = "desk", factors: Optional[Sequence[int]] = None) -> Dict[str, AugmentPolicy]:
    """Per-source policies at ``desk`` (64 px canvas) or ``paper`` (224 px) scale."""
    if scale == "desk":
        geometry = dict(rescale_min=48, rescale_max=64, canvas_size=64)
        factors = DESK_FACTORS if factors is None else factors
    elif scale == "paper":
        geometry = dict(rescale_min=168, rescale_max=224, canvas_size=224)
        factors = PAPER_FACTORS if factors is None else factors
    else:
        raise ConfigError(f"unknown scale {scale!r}")
    if len(factors) != len(SOURCES):
        raise ConfigError(f"need one augmentation factor per source {SOURCES}, got {list(factors)}")
    policies = {}
    for source, copies in zip(SOURCES, factors):
        geometric = source != PSYCH
        policies[source] = AugmentPolicy(allow_flip=geometric, allow_rotate_shear=geometric,
                                         copies_per_original=int(copies), **geometry)
    return policies


@dataclass
class TransformLog:
    flipped: bool = False
    rotation: float = 0.0
    shear: float = 0.0
    size: int = 0
    offset: Tuple[int, int] = (0, 0)


@dataclass
class AugmentedInstance:
    id: str
    image: np.ndarray = field(repr=False)
    origin_id: str = ""
    source: str = ""
    fold_id: Optional[int] = None
    transform_log: TransformLog = field(default_factory=TransformLog)

    def log_json(self) -> dict:
        log = self.transform_log
        return {"id": self.id, "origin_id": self.origin_id, "source": self.source, "fold": self.fold_id,
                "flipped": log.flipped, "rotation": log.rotation, "shear": log.shear,
                "size": log.size, "offset": list(log.offset)}


# -- resampling ----------------------------------------------------------

def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coordinates; outside the image reads white."""
    padded = np.pad(img, 1, constant_values=1.0)
    h, w = padded.shape
    ys = np.clip(ys + 1.0, 0.0, h - 1.0)
    xs = np.clip(xs + 1.0, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2)
    wy, wx = ys - y0, xs - x0
    top = padded[y0, x0] * (1.0 - wx) + padded[y0, x0 + 1] * wx
    bottom = padded[y0 + 1, x0] * (1.0 - wx) + padded[y0 + 1, x0 + 1] * wx
    return top * (1.0 - wy) + bottom * wy


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize with pixel-centre alignment and edge clamping."""
    in_h, in_w = img.shape
    ys = np.clip((np.arange(height) + 0.5) * (in_h / height) - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(width) + 0.5) * (in_w / width) - 0.5, 0.0, in_w - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(in_h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(in_w - 2, 0))
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    rows0, rows1 = img[y0], img[y1]
    top = rows0[:, x0] * (1.0 - wx) + rows0[:, x1] * wx
    bottom = rows1[:, x0] * (1.0 - wx) + rows1[:, x1] * wx
    return top * (1.0 - wy) + bottom * wy


# -- individual transforms -----------------------------------------------

def horizontal_flip(img: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> Tuple[np.ndarray, bool]:
    """Mirror about the vertical axis with probability ``p``; returns (image, flipped)."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"flip probability must lie in [0, 1], got {p}")
    flipped = bool(rng.random() < p)
    return (img[:, ::-1].copy() if flipped else img), flipped


def affine_rotate_shear(img: np.ndarray, rotation_deg: float, shear_deg: float) -> np.ndarray:
    """Rotate about the image centre, then shear horizontally.

    The output canvas grows to hold the transformed source rectangle.
    """
    if rotation_deg == 0.0 and shear_deg == 0.0:
        return img.copy()
    theta, phi = np.deg2rad(rotation_deg), np.deg2rad(shear_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, np.tan(phi)], [0.0, 1.0]])
    forward = shear @ rot  # acts on (x, y) column vectors

    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    corners = np.array([[-cx, -cx, cx, cx], [-cy, cy, -cy, cy]])
    moved = forward @ corners
    out_w = int(np.ceil(moved[0].max() - moved[0].min() + 1.0 - 1e-9))
    out_h = int(np.ceil(moved[1].max() - moved[1].min() + 1.0 - 1e-9))
    ocx, ocy = (out_w - 1) / 2.0, (out_h - 1) / 2.0

    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    inverse = np.linalg.inv(forward)
    src = inverse @ np.stack([xx.ravel() - ocx, yy.ravel() - ocy])
    out = _sample_bilinear(img, src[1] + cy, src[0] + cx)
    return np.clip(out.reshape(out_h, out_w), 0.0, 1.0)


def rotate_shear(img: np.ndarray, rng: np.random.Generator, max_angle: float = 15.0) -> Tuple[np.ndarray, float, float]:
    """Draw rotation and shear angles independently from U[-max_angle, max_angle].

    Returns (image, rotation, shear) with angles in degrees.
    """
    if max_angle < 0:
        raise ValidationError(f"max_angle must be non-negative, got {max_angle}")
    rotation = float(rng.uniform(-max_angle, max_angle))
    shear = float(rng.uniform(-max_angle, max_angle))
    return affine_rotate_shear(img, rotation, shear), rotation, shear


def bounding_box(img: np.ndarray, ink_threshold: float = INK_THRESHOLD) -> Tuple[int, int, int, int]:
    """Inclusive (top, left, bottom, right) of all pixels darker than the threshold."""
    ink = img < ink_threshold
    rows = np.flatnonzero(ink.any(axis=1))
    if rows.size == 0:
        raise DataError("image contains no ink")
    cols = np.flatnonzero(ink.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def crop_to_content(img: np.ndarray, ink_threshold: float = INK_THRESHOLD) -> np.ndarray:
    top, left, bottom, right = bounding_box(img, ink_threshold)
    return img[top:bottom + 1, left:right + 1]


def _scaled_extents(shape: Tuple[int, int], longer: int) -> Tuple[int, int]:
    h, w = shape
    if h >= w:
        return longer, max(1, int(round(w * longer / h)))
    return max(1, int(round(h * longer / w))), longer


def placement_counts(shape: Tuple[int, int], policy: AugmentPolicy) -> Dict[int, int]:
    """Number of distinct offsets on the canvas for each admissible longer-side size."""
    counts = {}
    c = policy.canvas_size
    for size in range(policy.rescale_min, policy.rescale_max + 1):
        sh, sw = _scaled_extents(shape, size)
        counts[size] = (c - sh + 1) * (c - sw + 1)
    return counts


def rescale_and_place(cropped: np.ndarray, rng: np.random.Generator,
                      policy: AugmentPolicy) -> Tuple[np.ndarray, int, Tuple[int, int]]:
    """Rescale so the longer side takes a random size and paste at a random offset.

    Every (size, row offset, column offset) configuration is equally likely,
    which favours small sizes.  Returns (canvas, size, (top, left)).
    """
    if cropped.size == 0:
        raise DataError("cannot place an empty image")
    counts = placement_counts(cropped.shape, policy)
    sizes = np.array(list(counts), dtype=np.int64)
    weights = np.array(list(counts.values()), dtype=np.float64)
    size = int(rng.choice(sizes, p=weights / weights.sum()))
    sh, sw = _scaled_extents(cropped.shape, size)
    top = int(rng.integers(0, policy.canvas_size - sh + 1))
    left = int(rng.integers(0, policy.canvas_size - sw + 1))
    canvas = np.ones((policy.canvas_size, policy.canvas_size))
    scaled = cropped if (sh, sw) == cropped.shape else resize_bilinear(cropped, sh, sw)
    canvas[top:top + sh, left:left + sw] = np.clip(scaled, 0.0, 1.0)
    return canvas, size, (top, left)


def salt_pepper(img: np.ndarray, rng: np.random.Generator, noise_level: float) -> np.ndarray:
    """Set each pixel independently, with probability ``noise_level``, to 0 or 1 (equally likely)."""
    if not 0.0 <= noise_level <= 1.0:
        raise ValidationError(f"noise level must lie in [0, 1], got {noise_level}")
    if noise_level == 0.0:
        return img
    corrupt = rng.random(img.shape) < noise_level
    values = (rng.random(img.shape) < 0.5).astype(np.float64)
    return np.where(corrupt, values, img)


# -- corpus level --------------------------------------------------------

def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def copy_rng(seed: int, stimulus_id: str, copy_index: int) -> np.random.Generator:
    """Generator for one augmented copy; independent of processing order."""
    return np.random.default_rng([int(seed), stable_hash(stimulus_id), int(copy_index)])


def check_policy(record: StimulusRecord, policy: AugmentPolicy) -> None:
    if record.source == PSYCH and (policy.allow_flip or policy.allow_rotate_shear):
        raise ConfigError(f"psychological stimulus {record.id!r} must not be flipped, rotated or sheared")


def augment_image(img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> Tuple[np.ndarray, TransformLog]:
    log = TransformLog()
    if policy.allow_flip:
        img, log.flipped = horizontal_flip(img, rng, policy.flip_probability)
    if policy.allow_rotate_shear:
        img, log.rotation, log.shear = rotate_shear(img, rng, policy.max_angle_degrees)
    cropped = crop_to_content(img, policy.ink_threshold)
    out, log.size, log.offset = rescale_and_place(cropped, rng, policy)
    return out, log


def augment_stimulus(record: StimulusRecord, policy: AugmentPolicy, seed: int = 0,
                     image: Optional[np.ndarray] = None, root=None) -> List[AugmentedInstance]:
    """Produce ``policy.copies_per_original`` augmented copies of one original.

    Copy ``k`` draws from its own generator seeded by (seed, record id, k).
    """
    check_policy(record, policy)
    if policy.copies_per_original == 0:
        return []
    img = record.load_image(root) if image is None else image
    out = []
    for k in range(policy.copies_per_original):
        pixels, log = augment_image(img, policy, copy_rng(seed, record.id, k))
        out.append(AugmentedInstance(id=f"{record.id}#{k}", image=pixels, origin_id=record.id,
                                     source=record.source, fold_id=record.fold_id, transform_log=log))
    return out


def augment_corpus(records: Iterable[StimulusRecord], policies: Dict[str, AugmentPolicy], seed: int = 0,
                   root=None) -> List[AugmentedInstance]:
    instances = []
    for rec in records:
        if rec.fold_id is None:
            raise ConfigError(f"record {rec.id!r} has no fold; assign folds before augmenting")
        instances.extend(augment_stimulus(rec, policies[rec.source], seed, root=root))
    return instances


def fold_violations(instances: Iterable[AugmentedInstance], records: Iterable[StimulusRecord]) -> List[str]:
    """Ids of instances whose fold differs from their origin's (or whose origin is unknown)."""
    folds = {r.id: r.fold_id for r in records}
    return [inst.id for inst in instances
            if inst.origin_id not in folds or folds[inst.origin_id] != inst.fold_id]


def write_transform_log(path, instances: Iterable[AugmentedInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.log_json(), sort_keys=True) + "\n")
