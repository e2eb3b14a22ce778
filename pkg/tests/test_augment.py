import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import midss.augment as aug
from midss.augment import (
    AugmentRanges,
    GeoParams,
    IntensityParams,
    apply_geo,
    apply_strong,
    gaussian_blur,
    make_views,
    sample_strong,
    sample_weak,
)
from midss.grid import is_one_hot, make_rng, one_hot

ZERO = AugmentRanges(rotation=0, crop_pad=0, flip_prob=0, elastic_max=0, brightness=0, contrast=0, blur_sigma=0)


def test_zero_ranges_give_identity():
    g = sample_weak(make_rng(0), (16, 16), ZERO)
    assert g.is_identity()
    img = make_rng(1).uniform(-1, 1, size=(16, 16, 1))
    assert np.array_equal(apply_geo(img, g), img)


def test_same_rng_same_params():
    a = sample_weak(make_rng(5), (8, 8))
    b = sample_weak(make_rng(5), (8, 8))
    assert (a.crop_offset, a.rotation, a.flip_h, a.flip_v) == (b.crop_offset, b.rotation, b.flip_h, b.flip_v)
    assert np.array_equal(a.elastic_field, b.elastic_field)


def test_rotation_draws_are_centered():
    rng = make_rng(11)
    rot = [sample_weak(rng, (4, 4)).rotation for _ in range(1000)]
    assert max(abs(r) for r in rot) <= 25
    assert abs(np.mean(rot)) <= 2.0


def test_elastic_magnitude_bounded():
    rng = make_rng(2)
    for _ in range(20):
        g = sample_weak(rng, (16, 16))
        assert np.max(np.abs(g.elastic_field)) <= 4.0 + 1e-12


@pytest.mark.parametrize("flag", ["flip_h", "flip_v"])
def test_flip_involution(flag):
    img = make_rng(3).normal(size=(6, 7, 2))
    g = GeoParams(**{flag: True})
    assert np.array_equal(apply_geo(apply_geo(img, g), g), img)


def test_flip_h_mirrors_columns():
    img = np.arange(12, dtype=float).reshape(3, 4, 1)
    assert np.array_equal(apply_geo(img, GeoParams(flip_h=True)), img[:, ::-1])


@pytest.mark.parametrize("r0,c0", [(0, 0), (1, 4), (3, 2), (6, 6)])
def test_rot90_delta(r0, c0):
    n = 7
    img = np.zeros((n, n, 1))
    img[r0, c0] = 1.0
    out = apply_geo(img, GeoParams(rotation=90.0), "nearest")
    expected = np.zeros_like(img)
    expected[n - 1 - c0, r0] = 1.0
    assert np.array_equal(out, expected)
    bil = apply_geo(img, GeoParams(rotation=90.0), "bilinear")
    assert np.allclose(bil, expected, atol=1e-12)


def test_crop_offset_shifts_with_border_replication():
    img = np.arange(16, dtype=float).reshape(4, 4, 1)
    out = apply_geo(img, GeoParams(crop_offset=(1, 0)))
    assert np.array_equal(out[1:], img[:-1])
    assert np.array_equal(out[0], img[0])


@given(st.integers(0, 10_000))
def test_labels_stay_one_hot(seed):
    rng = make_rng(seed)
    labels = one_hot(rng.integers(0, 3, size=(12, 12)), 3)
    g = sample_weak(rng, (12, 12))
    assert is_one_hot(apply_geo(labels, g, "nearest"))


def test_strong_examples():
    img = make_rng(4).uniform(-1, 1, size=(8, 8, 1))
    assert np.array_equal(apply_strong(img, IntensityParams()), img)
    out = apply_strong(np.zeros((5, 5, 1)), IntensityParams(brightness_shift=0.5))
    assert np.all(out == 0.5)
    assert apply_strong(np.ones((2, 2, 1)), IntensityParams(contrast_scale=3)).max() == 1.0


def test_blur_preserves_interior_mean():
    img = np.zeros((32, 32))
    img[12:20, 10:22] = make_rng(0).uniform(0, 1, size=(8, 12))
    out = gaussian_blur(img, 1.5)
    assert abs(out.mean() - img.mean()) <= 1e-6


def test_gaussian_kernel_normalized_and_truncated():
    k = aug.gaussian_kernel(1.3)
    assert len(k) == 2 * int(np.ceil(3 * 1.3)) + 1
    assert abs(k.sum() - 1) < 1e-15


def test_views_zero_intensity_equal():
    u = make_rng(6).uniform(-1, 1, size=(16, 16, 1))
    u_w, u_s = make_views(u, make_rng(1), ZERO)
    assert np.array_equal(u_w, u_s)
    r = AugmentRanges(brightness=0, contrast=0, blur_sigma=0)
    u_w, u_s = make_views(u, make_rng(1), r)
    assert np.array_equal(u_w, u_s)


def test_views_deterministic():
    u = make_rng(6).uniform(-1, 1, size=(16, 16, 1))
    a = make_views(u, make_rng(2))
    b = make_views(u, make_rng(2))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_views_share_one_geometric_draw(monkeypatch):
    calls = []
    real = aug.sample_weak

    def counting(*args, **kw):
        calls.append(1)
        return real(*args, **kw)

    monkeypatch.setattr(aug, "sample_weak", counting)
    u = make_rng(6).uniform(-1, 1, size=(16, 16, 1))
    u_w, u_s, g, p = make_views(u, make_rng(3), return_params=True)
    assert len(calls) == 1
    assert np.array_equal(u_s, apply_strong(apply_geo(u, g), p))
    assert np.array_equal(u_w, apply_geo(u, g))


def test_weak_labeled_alignment():
    labels = (np.add.outer(np.arange(16), np.arange(16)) > 15).astype(int)
    img = np.where(labels == 1, 1.0, -1.0)[..., None]
    x, y = aug.weak_labeled(img, one_hot(labels, 2), make_rng(8), AugmentRanges(elastic_max=0))
    agree = (x[..., 0] > 0) == (y[..., 1] == 1)
    assert agree.mean() > 0.95


def test_strong_params_in_range():
    rng = make_rng(1)
    for _ in range(100):
        p = sample_strong(rng)
        assert -0.2 <= p.brightness_shift <= 0.2
        assert 0.8 <= p.contrast_scale <= 1.2
        assert 0 <= p.blur_sigma <= 1
