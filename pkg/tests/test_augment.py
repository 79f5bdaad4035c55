import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shapespace.augment import (DESK_FACTORS, PAPER_FACTORS, AugmentPolicy, affine_rotate_shear, augment_corpus,
                                augment_stimulus, bounding_box, crop_to_content, fold_violations, horizontal_flip,
                                placement_counts, policy_presets, rescale_and_place, rotate_shear, salt_pepper)
from shapespace.datasets import PSYCH, SOURCES, TUBERLIN, StimulusRecord
from shapespace.errors import ConfigError, DataError

pixels = arrays(np.float64, (12, 10), elements=st.floats(0, 1, width=64))


def _asymmetric(size=16):
    img = np.ones((size, size))
    img[3:12, 2] = 0.0
    img[3, 2:9] = 0.0
    return img


def _record(source=TUBERLIN, fold=3, rid="s1"):
    coords = (0.0, 0.0) if source == PSYCH else None
    img = np.ones((64, 64))
    img[20:40, 15:50] = 0.0
    img[22:38, 17:48] = 1.0
    return StimulusRecord(rid, source, "x.png", 1, fold, coords, image=img)


# -- flip ----------------------------------------------------------------

def test_flip_never_with_p0(rng):
    img = _asymmetric()
    for _ in range(20):
        out, flipped = horizontal_flip(img, rng, 0.0)
        assert not flipped and np.array_equal(out, img)


def test_flip_is_involution(rng):
    img = _asymmetric()
    once, _ = horizontal_flip(img, rng, 1.0)
    twice, _ = horizontal_flip(once, rng, 1.0)
    assert not np.array_equal(once, img)
    np.testing.assert_array_equal(twice, img)


def test_flip_frequency(rng):
    flips = sum(horizontal_flip(np.ones((2, 2)), rng, 0.5)[1] for _ in range(10_000))
    assert 0.48 <= flips / 10_000 <= 0.52


# -- rotation and shear --------------------------------------------------

def test_zero_angle_is_identity(rng):
    img = _asymmetric()
    out, rot, shear = rotate_shear(img, rng, 0.0)
    assert rot == 0.0 and shear == 0.0
    np.testing.assert_array_equal(out, img)


@pytest.mark.parametrize("angle", [-15.0, -7.5, 3.0, 11.0, 15.0])
def test_rotated_pixel_lands_at_predicted_position(angle):
    img = np.ones((21, 21))
    img[10, 15] = 0.0
    out = affine_rotate_shear(img, angle, 0.0)
    theta = np.deg2rad(angle)
    cy, cx = (out.shape[0] - 1) / 2, (out.shape[1] - 1) / 2
    px, py = 5 * np.cos(theta), 5 * np.sin(theta)
    darkest = np.unravel_index(np.argmin(out), out.shape)
    assert np.hypot(darkest[0] - (cy + py), darkest[1] - (cx + px)) <= 1.0
    assert np.sum(out == out.min()) == 1


def test_rotation_preserves_ink_mass():
    img = np.ones((40, 40))
    img[10:30, 10:13] = img[10:30, 27:30] = img[10:13, 10:30] = img[27:30, 10:30] = 0.0
    out = affine_rotate_shear(img, 15.0, 0.0)
    mass_in, mass_out = np.sum(1 - img), np.sum(1 - out)
    assert abs(mass_out - mass_in) / mass_in < 0.05


def test_output_contains_transformed_content(rng):
    img = np.zeros((30, 50))
    out, _, _ = rotate_shear(img, rng, 15.0)
    assert out.shape[0] >= 30 and out.shape[1] >= 50


@given(pixels, st.floats(-15, 15), st.floats(-15, 15))
def test_transforms_keep_pixel_range(img, rot, shear):
    out = affine_rotate_shear(img, rot, shear)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_angles_uniform_and_independent(rng):
    draws = np.array([rotate_shear(np.ones((3, 3)), rng, 15.0)[1:] for _ in range(4000)])
    assert np.all(np.abs(draws) <= 15.0)
    assert abs(np.corrcoef(draws.T)[0, 1]) < 0.05
    assert abs(draws[:, 0].std() - 30 / np.sqrt(12)) < 0.5


# -- bounding box and placement ------------------------------------------

def test_single_pixel_box():
    img = np.ones((10, 8))
    img[4, 6] = 0.0
    assert bounding_box(img) == (4, 6, 4, 6)


def test_all_black_box():
    assert bounding_box(np.zeros((5, 7))) == (0, 0, 4, 6)


def test_blank_image_raises():
    with pytest.raises(DataError):
        bounding_box(np.ones((4, 4)))


@pytest.mark.parametrize("seed", range(10))
def test_box_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    img = np.ones((20, 25))
    pts = rng.integers(0, [20, 25], size=(rng.integers(1, 8), 2))
    img[pts[:, 0], pts[:, 1]] = rng.random(len(pts)) * 0.9
    ys, xs = [], []
    for r in range(20):
        for c in range(25):
            if img[r, c] < 0.95:
                ys.append(r)
                xs.append(c)
    assert bounding_box(img) == (min(ys), min(xs), max(ys), max(xs))


def test_full_canvas_places_identically(rng):
    policy = AugmentPolicy(rescale_min=16, rescale_max=16, canvas_size=16)
    img = _asymmetric()
    out, size, offset = rescale_and_place(img, rng, policy)
    assert size == 16 and offset == (0, 0)
    np.testing.assert_array_equal(out, img)


def test_configuration_counts_at_full_scale():
    policy = AugmentPolicy(rescale_min=168, rescale_max=224, canvas_size=224)
    counts = placement_counts((10, 10), policy)
    assert sorted(counts) == list(range(168, 225))
    assert all(counts[s] == (224 - s + 1) ** 2 for s in counts)


def test_size_histogram_matches_configuration_weights():
    policy = AugmentPolicy(rescale_min=48, rescale_max=64, canvas_size=64)
    square = np.zeros((4, 4))
    counts = placement_counts(square.shape, policy)
    sizes = np.array(list(counts))
    p = np.array(list(counts.values()), dtype=float)
    p /= p.sum()
    rng = np.random.default_rng(1)
    n = 20_000
    draws = np.array([rescale_and_place(square, rng, policy)[1] for _ in range(n)])
    hist = np.array([np.sum(draws == s) for s in sizes])
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(hist - n * p) <= 3 * sigma + 1)
    assert hist[0] > hist[-1]
    # the per-bin check alone has a ~4% false alarm rate over 17 bins; the
    # pooled goodness-of-fit statistic must also be unremarkable
    chi2 = np.sum((hist - n * p) ** 2 / (n * p))
    assert chi2 < 39.3  # 99.9% quantile, 16 degrees of freedom


def test_placement_stays_on_canvas_and_respects_sizes(rng):
    policy = AugmentPolicy(rescale_min=20, rescale_max=30, canvas_size=32)
    img = crop_to_content(_asymmetric())
    for _ in range(50):
        out, size, (top, left) = rescale_and_place(img, rng, policy)
        assert out.shape == (32, 32) and 20 <= size <= 30
        t, l, b, r = bounding_box(out)
        assert max(b - t, r - l) + 1 <= size


# -- salt and pepper -----------------------------------------------------

def test_salt_pepper_levels(rng):
    img = np.full((100, 1000), 0.5)
    assert salt_pepper(img, rng, 0.0) is img
    full = salt_pepper(img, rng, 1.0)
    assert set(np.unique(full)) <= {0.0, 1.0}
    frac = np.mean(salt_pepper(img, rng, 0.1) != 0.5)
    assert 0.09 <= frac <= 0.11


# -- policies and corpus -------------------------------------------------

def test_factor_presets():
    assert PAPER_FACTORS == (2000, 2000, 12, 4)
    assert DESK_FACTORS[0] == 20
    paper = policy_presets("paper")
    assert [paper[s].copies_per_original for s in SOURCES] == [2000, 2000, 12, 4]
    assert paper[PSYCH].canvas_size == 224 and paper[PSYCH].rescale_min == 168
    assert not paper[PSYCH].allow_flip and not paper[PSYCH].allow_rotate_shear


def test_policy_invariants():
    with pytest.raises(ConfigError):
        AugmentPolicy(rescale_min=60, rescale_max=50, canvas_size=64)
    with pytest.raises(ConfigError):
        AugmentPolicy(rescale_min=48, rescale_max=70, canvas_size=64)


def test_psych_copies_have_no_geometry():
    out = augment_stimulus(_record(PSYCH), policy_presets("desk")[PSYCH], seed=3)
    assert len(out) == 20
    assert all(not i.transform_log.flipped and i.transform_log.rotation == 0.0 and i.transform_log.shear == 0.0
               for i in out)


def test_psych_with_geometry_is_rejected():
    with pytest.raises(ConfigError):
        augment_stimulus(_record(PSYCH), AugmentPolicy(copies_per_original=5))


def test_zero_copies_and_fold_inheritance():
    assert augment_stimulus(_record(), AugmentPolicy(copies_per_original=0)) == []
    out = augment_stimulus(_record(fold=2), AugmentPolicy(copies_per_original=100))
    assert len(out) == 100 and {i.fold_id for i in out} == {2}
    assert all(i.image.min() >= 0 and i.image.max() <= 1 and i.image.shape == (64, 64) for i in out)


def test_copies_are_order_independent_and_reproducible():
    policy = AugmentPolicy(copies_per_original=4)
    a = augment_corpus([_record(rid="a"), _record(rid="b")], {TUBERLIN: policy}, seed=9)
    b = augment_corpus([_record(rid="b"), _record(rid="a")], {TUBERLIN: policy}, seed=9)
    by_id = {i.id: i.image for i in b}
    assert all(np.array_equal(i.image, by_id[i.id]) for i in a)


def test_corpus_fold_audit(tiny_corpus):
    records, _, instances = tiny_corpus
    assert fold_violations(instances, records) == []
    bad = [instances[0].__class__(**{**instances[0].__dict__, "fold_id": (instances[0].fold_id + 1) % 5})]
    assert fold_violations(bad, records) == [instances[0].id]


def test_unfolded_records_are_rejected():
    with pytest.raises(ConfigError):
        augment_corpus([_record(fold=None)], {TUBERLIN: AugmentPolicy(copies_per_original=1)})
