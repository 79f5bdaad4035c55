import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shapespace.errors import DataError, ValidationError
from shapespace.mds import (TargetSpace, classical_mds, normalize_space, pairwise_distances, read_dissimilarities,
                            read_space, write_dissimilarities, write_space)
from shapespace.metrics import kendall_tau
from shapespace.mds import upper_triangle


def test_line_configuration():
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    space = classical_mds(d, 1)
    np.testing.assert_allclose(pairwise_distances(space.coords), d, atol=1e-9)


def test_unit_square():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    d = pairwise_distances(pts)
    np.testing.assert_allclose(pairwise_distances(classical_mds(d, 2).coords), d, atol=1e-9)


@given(st.integers(3, 30), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_euclidean_recovery_and_centering(n, rank, seed):
    rank = min(rank, n - 1)
    pts = np.random.default_rng(seed).normal(size=(n, rank))
    d = pairwise_distances(pts)
    space = classical_mds(d, rank)
    rec = pairwise_distances(space.coords)
    scale = max(d.max(), 1e-300)
    assert np.max(np.abs(rec - d)) / scale < 1e-8
    assert np.all(np.abs(space.coords.mean(axis=0)) < 1e-9)


def test_sign_convention():
    pts = np.random.default_rng(2).normal(size=(10, 3))
    space = classical_mds(pairwise_distances(pts), 3)
    for axis in range(3):
        col = space.coords[:, axis]
        assert col[np.argmax(np.abs(col))] > 0


def test_full_dim_embedding_preserves_rank_order():
    pts = np.random.default_rng(5).normal(size=(8, 3))
    d = pairwise_distances(pts)
    rec = pairwise_distances(classical_mds(d, 7).coords)
    assert kendall_tau(upper_triangle(rec), upper_triangle(d)) == pytest.approx(1.0)


def test_non_euclidean_clamps_axes():
    d = np.ones((4, 4)) - np.eye(4)
    d[0, 1] = d[1, 0] = 3.0
    space = classical_mds(d, 3)
    assert space.clamped_axes >= 1
    assert np.all(np.isfinite(space.coords))


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        classical_mds(np.array([[0, 1], [2, 0]], dtype=float), 1)
    with pytest.raises(ValidationError):
        classical_mds(np.zeros((3, 3)), 3)
    with pytest.raises(DataError):
        normalize_space(TargetSpace(np.zeros((4, 2))))


@given(st.integers(1, 10), st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100))
def test_normalization_contract(dim, seed, factor):
    coords = np.random.default_rng(seed).normal(size=(12, dim))
    space = normalize_space(TargetSpace(coords))
    assert abs(np.mean(space.coords ** 2) - 1.0) < 1e-12
    again = normalize_space(space)
    assert again.normalization_scale == pytest.approx(space.normalization_scale, rel=1e-12)
    np.testing.assert_allclose(again.coords, space.coords, rtol=1e-12)
    np.testing.assert_allclose(normalize_space(TargetSpace(coords * factor)).coords, space.coords, rtol=1e-9)


def test_already_normalized_has_unit_scale():
    coords = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert normalize_space(TargetSpace(coords)).normalization_scale == pytest.approx(1.0)


def test_csv_round_trips(tmp_path):
    pts = np.random.default_rng(1).normal(size=(5, 2))
    d = pairwise_distances(pts)
    ids = [f"s{i}" for i in range(5)]
    write_dissimilarities(tmp_path / "d.csv", d, ids)
    back, back_ids = read_dissimilarities(tmp_path / "d.csv")
    assert back_ids == ids
    np.testing.assert_array_equal(back, d)
    space = normalize_space(classical_mds(d, 2))
    write_space(tmp_path / "s.csv", space, ids)
    loaded = read_space(tmp_path / "s.csv")
    assert loaded.ids == ids
    np.testing.assert_array_equal(loaded.coords, space.coords)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "id,dim_1,dim_2"
