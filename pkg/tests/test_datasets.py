import json
from collections import Counter

import numpy as np
import pytest

from shapespace.datasets import (PSYCH, SOURCES, TUBERLIN, FoldSchedule, StimulusRecord, assign_folds,
                                 load_manifest, write_manifest)
from shapespace.errors import ConfigError, DataError, ValidationError
from shapespace.imageio import write_image
from shapespace.synthetic import SyntheticConfig, SyntheticShapeParams, generate_synthetic_corpus, latent_dissimilarities


def _records(n, source=TUBERLIN):
    coords = (0.0,) if source == PSYCH else None
    return [StimulusRecord(f"{source}{i}", source, f"{i}.png", 0, None, coords) for i in range(n)]


# -- manifests -----------------------------------------------------------

def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert load_manifest(tmp_path / "m.jsonl") == []


def test_unknown_source_names_row(tmp_path):
    rows = [{"id": "a", "source": "tuberlin_like", "path": "a.png", "class": 0},
            {"id": "b", "source": "quickdraw", "path": "b.png", "class": 0}]
    (tmp_path / "m.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    with pytest.raises(ValidationError, match="row 2"):
        load_manifest(tmp_path / "m.jsonl", check_files=False)


def test_psych_without_coords_and_duplicates(tmp_path):
    (tmp_path / "m.jsonl").write_text(json.dumps({"id": "a", "source": "psych", "path": "a.png", "class": 0}))
    with pytest.raises(ValidationError, match="coordinates"):
        load_manifest(tmp_path / "m.jsonl", check_files=False)
    row = json.dumps({"id": "a", "source": "tuberlin_like", "path": "a.png", "class": 0})
    (tmp_path / "m.jsonl").write_text(row + "\n" + row)
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(tmp_path / "m.jsonl", check_files=False)


def test_malformed_row_and_missing_file(tmp_path):
    (tmp_path / "m.jsonl").write_text("{not json")
    with pytest.raises(ValidationError, match="row 1"):
        load_manifest(tmp_path / "m.jsonl")
    (tmp_path / "m.jsonl").write_text(json.dumps({"id": "a", "source": "tuberlin_like", "path": "a.png", "class": 0}))
    with pytest.raises(DataError, match="missing"):
        load_manifest(tmp_path / "m.jsonl")


def test_class_count_check(tmp_path):
    (tmp_path / "m.jsonl").write_text(json.dumps({"id": "a", "source": "tuberlin_like", "path": "a", "class": 5}))
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "m.jsonl", check_files=False, n_classes=5)


def test_manifest_round_trip(tmp_path):
    recs = [StimulusRecord("p1", PSYCH, "images/p1.png", 3, 2, (0.5, -1.25)),
            StimulusRecord("t1", TUBERLIN, "images/t1.png", 7, 0, None)]
    (tmp_path / "images").mkdir()
    for r in recs:
        write_image(tmp_path / r.path, np.ones((4, 4)))
    write_manifest(tmp_path / "m.jsonl", recs)
    assert load_manifest(tmp_path / "m.jsonl") == recs


# -- folds ---------------------------------------------------------------

def test_sixty_psych_records_fill_five_equal_folds():
    out = assign_folds(_records(60, PSYCH), 5, np.random.default_rng(0))
    assert sorted(Counter(r.fold_id for r in out).values()) == [12] * 5


def test_remainder_spreads_round_robin():
    out = assign_folds(_records(7), 5, np.random.default_rng(0))
    assert sorted(Counter(r.fold_id for r in out).values()) == [1, 1, 1, 2, 2]


def test_folds_per_source_and_deterministic():
    recs = _records(13) + _records(9, PSYCH)
    a = assign_folds(recs, 5, np.random.default_rng(4))
    b = assign_folds(recs, 5, np.random.default_rng(4))
    assert [r.fold_id for r in a] == [r.fold_id for r in b]
    for source in (TUBERLIN, PSYCH):
        sizes = Counter(r.fold_id for r in a if r.source == source).values()
        assert max(sizes) - min(sizes) <= 1
    assert [r.id for r in a] == [r.id for r in recs]


def test_fold_count_validation():
    with pytest.raises(ConfigError):
        assign_folds(_records(3), 1)


def test_schedule_usage():
    schedule = FoldSchedule.standard(5)
    schedule.validate()
    for fold, use in schedule.usage().items():
        assert use == {"train": 3, "validation": 1, "test": 1}
    for rot in schedule.rotations:
        assert len(rot.train) == 3 and {rot.test, rot.validation}.isdisjoint(rot.train)


# -- synthetic corpus ----------------------------------------------------

def test_default_corpus_shape():
    records, d = generate_synthetic_corpus(SyntheticConfig(), np.random.default_rng(0))
    counts = Counter(r.source for r in records)
    assert counts[PSYCH] == 60 and counts["extra_linedrawing"] == 70
    assert set(counts) == set(SOURCES)
    assert d.shape == (60, 60)
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0) and np.all(d >= 0)
    psych = [r for r in records if r.source == PSYCH]
    assert all(r.coords is not None and len(r.coords) == 4 for r in psych)
    assert all(r.coords is None for r in records if r.source != PSYCH)
    assert all(r.image.shape == (64, 64) and r.image.min() >= 0 and r.image.max() <= 1 for r in records)
    assert all(r.image.min() < 0.5 for r in records)
    assert len({r.class_label for r in psych}) == 12


def test_identical_latents_have_zero_dissimilarity():
    p = SyntheticShapeParams(0.5, 0.3, 10.0, 0.9, 0)
    d = latent_dissimilarities([p, p, SyntheticShapeParams(0.9, 0.8, -20.0, 0.9, 1)])
    assert d[0, 1] == 0.0 and d[0, 2] > 0


def test_corpus_deterministic():
    a, da = generate_synthetic_corpus(SyntheticConfig(n_extra=2, n_tuberlin=4, n_sketchy=4), np.random.default_rng(3))
    b, db = generate_synthetic_corpus(SyntheticConfig(n_extra=2, n_tuberlin=4, n_sketchy=4), np.random.default_rng(3))
    np.testing.assert_array_equal(da, db)
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))
