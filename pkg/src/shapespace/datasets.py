"""Stimulus records, JSON-lines manifests and cross-validation folds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, ValidationError
from .imageio import read_image

PSYCH = "psych"
EXTRA = "extra_linedrawing"
TUBERLIN = "tuberlin_like"
SKETCHY = "sketchy_like"
SOURCES = (PSYCH, EXTRA, TUBERLIN, SKETCHY)


@dataclass
class StimulusRecord:
    """One original image.

    ``coords`` holds target-space coordinates and is present exactly for
    psychological stimuli.  ``image`` optionally caches the pixels so that
    in-memory corpora need no files.
    """

    id: str
    source: str
    path: str
    class_label: int
    fold_id: Optional[int] = None
    coords: Optional[Tuple[float, ...]] = None
    image: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def load_image(self, root=None) -> np.ndarray:
        if self.image is not None:
            return self.image
        path = Path(self.path)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        return read_image(path)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "path": self.path,
            "class": self.class_label,
            "fold": self.fold_id,
            "coords": None if self.coords is None else [float(c) for c in self.coords],
        }


def validate_record(rec: StimulusRecord, n_classes: Optional[int] = None, where: str = ""):
    prefix = f"{where}: " if where else ""
    if rec.source not in SOURCES:
        raise ValidationError(f"{prefix}unknown source {rec.source!r} for record {rec.id!r}")
    if not isinstance(rec.class_label, (int, np.integer)) or rec.class_label < 0:
        raise ValidationError(f"{prefix}class label of {rec.id!r} must be a non-negative integer")
    if n_classes is not None and rec.class_label >= n_classes:
        raise ValidationError(f"{prefix}class label {rec.class_label} of {rec.id!r} exceeds class count {n_classes}")
    if rec.source == PSYCH and rec.coords is None:
        raise ValidationError(f"{prefix}psychological record {rec.id!r} lacks target coordinates")
    if rec.source != PSYCH and rec.coords is not None:
        raise ValidationError(f"{prefix}record {rec.id!r} from {rec.source} must not carry coordinates")
    if rec.fold_id is not None and rec.fold_id < 0:
        raise ValidationError(f"{prefix}negative fold id for {rec.id!r}")


def load_manifest(path, check_files: bool = True, n_classes: Optional[int] = None) -> List[StimulusRecord]:
    """Read a JSON-lines manifest with fields id/source/path/class/fold/coords.

    Image paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name} row {lineno}"
            try:
                row = json.loads(line)
                rec = StimulusRecord(
                    id=str(row["id"]),
                    source=row["source"],
                    path=row["path"],
                    class_label=row["class"],
                    fold_id=row.get("fold"),
                    coords=None if row.get("coords") is None else tuple(float(c) for c in row["coords"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: malformed row ({exc})") from exc
            validate_record(rec, n_classes, where)
            if rec.id in seen:
                raise ValidationError(f"{where}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            if check_files and not (path.parent / rec.path).is_file():
                raise DataError(f"{where}: missing image file {rec.path}")
            records.append(rec)
    return records


def write_manifest(path, records: Iterable[StimulusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def assign_folds(records: Sequence[StimulusRecord], k: int = 5, rng=None) -> List[StimulusRecord]:
    """Split every source into ``k`` folds of (almost) equal size.

    Records of a source are shuffled and dealt round-robin, so fold sizes
    within a source differ by at most one.  Input order is preserved.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    rng = _rng(rng)
    folds: Dict[int, int] = {}
    for source in SOURCES:
        idx = [i for i, r in enumerate(records) if r.source == source]
        for pos, i in enumerate(rng.permutation(len(idx))):
            folds[idx[i]] = pos % k
    return [replace(r, fold_id=folds[i]) for i, r in enumerate(records)]


@dataclass(frozen=True)
class Rotation:
    train: Tuple[int, ...]
    validation: int
    test: int


@dataclass(frozen=True)
class FoldSchedule:
    """Cross-validation rotations: rotation ``r`` tests on fold ``r`` and
    validates on fold ``r + 1`` (mod ``k``); the rest is training data."""

    rotations: Tuple[Rotation, ...]

    @classmethod
    def standard(cls, k: int = 5) -> "FoldSchedule":
        if k < 3:
            raise ConfigError(f"a train/validation/test schedule needs at least 3 folds, got {k}")
        rots = []
        for r in range(k):
            val = (r + 1) % k
            rots.append(Rotation(tuple(f for f in range(k) if f not in (r, val)), val, r))
        return cls(tuple(rots))

    @property
    def k(self) -> int:
        return len(self.rotations)

    def usage(self) -> Dict[int, Dict[str, int]]:
        counts = {f: {"train": 0, "validation": 0, "test": 0} for f in range(self.k)}
        for rot in self.rotations:
            counts[rot.test]["test"] += 1
            counts[rot.validation]["validation"] += 1
            for f in rot.train:
                counts[f]["train"] += 1
        return counts

    def validate(self) -> None:
        for fold, use in self.usage().items():
            if use != {"train": self.k - 2, "validation": 1, "test": 1}:
                raise ConfigError(f"fold {fold} has usage {use}")
