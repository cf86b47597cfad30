import numpy as np
import pytest

from pointshot.errors import ValidationError
from pointshot.maskprep import (
    RenderPair,
    build_pretraining_set,
    extract_mask,
    make_noise_image,
    make_render_pair,
    make_synthetic_renders,
    save_renders,
    sparsify_mask,
)


def test_extract_mask_opaque_and_transparent():
    opaque = np.ones((4, 4, 4), dtype=np.float32)
    transparent = np.zeros((4, 4, 4), dtype=np.float32)
    np.testing.assert_array_equal(extract_mask(opaque), 1.0)
    np.testing.assert_array_equal(extract_mask(transparent), 0.0)


def test_extract_mask_checkerboard():
    rgba = np.zeros((4, 4, 4), dtype=np.float32)
    checker = np.indices((4, 4)).sum(axis=0) % 2
    rgba[:, :, 3] = checker
    np.testing.assert_array_equal(extract_mask(rgba), checker.astype(np.float32))


def test_extract_mask_threshold_strict():
    rgba = np.zeros((1, 2, 4), dtype=np.float32)
    rgba[0, 0, 3] = 0.5  # exactly at threshold: not kept (strict >)
    rgba[0, 1, 3] = 0.51
    np.testing.assert_array_equal(extract_mask(rgba)[0], [0.0, 1.0])


def test_extract_mask_validation():
    with pytest.raises(ValidationError):
        extract_mask(np.zeros((4, 4, 3)))
    with pytest.raises(ValidationError):
        extract_mask(np.zeros((4, 4, 4)), alpha_threshold=1.0)


# ---------------------------------------------------------------------------
# Noise images
# ---------------------------------------------------------------------------

def test_noise_exact_count():
    noise = make_noise_image(4, 4, seed=0)
    assert noise.sum() == 8.0
    assert set(np.unique(noise)) <= {0.0, 1.0}


def test_noise_deterministic():
    np.testing.assert_array_equal(
        make_noise_image(16, 16, seed=3), make_noise_image(16, 16, seed=3)
    )


def test_noise_exact_half_any_seed():
    for seed in range(20):
        assert make_noise_image(64, 64, seed=seed).sum() == 2048.0


def test_noise_bernoulli_fraction_band():
    # 100 seeds at 64x64: every draw's keep fraction within [0.45, 0.55].
    fractions = [
        make_noise_image(64, 64, seed=s, mode="bernoulli").mean() for s in range(100)
    ]
    assert min(fractions) >= 0.45
    assert max(fractions) <= 0.55


def test_noise_pairwise_overlap():
    # Independent exact-half shuffles overlap on ~1/4 of pixels:
    # 4096/4 = 1024 expected ones in common.
    images = [make_noise_image(64, 64, seed=s) for s in range(10)]
    overlaps = [
        (images[i] * images[j]).sum()
        for i in range(10)
        for j in range(i + 1, 10)
    ]
    assert abs(np.mean(overlaps) - 1024.0) <= 64.0


def test_noise_validation():
    with pytest.raises(ValidationError):
        make_noise_image(1, 1, seed=0)
    with pytest.raises(ValidationError):
        make_noise_image(4, 4, seed=0, mode="gaussian")


# ---------------------------------------------------------------------------
# Sparsification
# ---------------------------------------------------------------------------

def test_sparsify_zeros_absorb():
    noise = make_noise_image(8, 8, seed=0)
    np.testing.assert_array_equal(sparsify_mask(np.zeros((8, 8)), noise), 0.0)


def test_sparsify_identity_under_full_mask():
    noise = make_noise_image(8, 8, seed=1)
    np.testing.assert_array_equal(sparsify_mask(np.ones((8, 8)), noise), noise)


def test_sparsify_exact_half_on_full_mask():
    for seed in (0, 7, 99):
        out = sparsify_mask(np.ones((64, 64)), make_noise_image(64, 64, seed=seed))
        assert out.sum() == 2048.0


def test_sparsify_commutative():
    a = make_noise_image(8, 8, seed=0)
    b = make_noise_image(8, 8, seed=1)
    np.testing.assert_array_equal(sparsify_mask(a, b), sparsify_mask(b, a))


def test_sparsify_expected_survival():
    # Surviving ones ~ half the mask's ones; mean over 100 seeds within
    # 3 sigma of the hypergeometric prediction.
    rng = np.random.default_rng(0)
    mask = (rng.random((32, 32)) < 0.6).astype(np.float32)
    ones = mask.sum()
    survived = [
        sparsify_mask(mask, make_noise_image(32, 32, seed=s)).sum() for s in range(100)
    ]
    n = 32 * 32
    # Hypergeometric: draw n/2 kept pixels from n, count hits among `ones`.
    expected = ones / 2.0
    var = ones * 0.5 * 0.5 * (n - ones) / (n - 1)
    assert abs(np.mean(survived) - expected) <= 3.0 * np.sqrt(var / 100)


def test_sparsify_shape_mismatch():
    with pytest.raises(ValidationError):
        sparsify_mask(np.ones((4, 4)), np.ones((8, 8)))


# ---------------------------------------------------------------------------
# Pair construction
# ---------------------------------------------------------------------------

def test_make_render_pair_input_subset_of_silhouette():
    renders = make_synthetic_renders(4, resolution=32, seed=0)
    for i, rgba in enumerate(renders):
        pair = make_render_pair(rgba, seed=i, resolution=32)
        silhouette = extract_mask(rgba)
        assert np.all(pair.input <= silhouette)
        assert pair.input.shape == (32, 32)
        assert pair.target.shape == (32, 32, 3)


def test_make_render_pair_background_black():
    rgba = make_synthetic_renders(1, resolution=32, seed=5)[0]
    pair = make_render_pair(rgba, seed=0, resolution=32)
    outside = extract_mask(rgba) == 0.0
    assert np.all(pair.target[outside] == 0.0)


def test_make_render_pair_resizes_then_thresholds():
    rgba = np.zeros((64, 64, 4), dtype=np.float32)
    rgba[16:48, 16:48, 3] = 1.0
    rgba[16:48, 16:48, :3] = 0.7
    pair = make_render_pair(rgba, seed=0, resolution=32)
    # Mask must stay strictly binary after the resize.
    assert set(np.unique(pair.input)) <= {0.0, 1.0}
    assert pair.target.max() <= 1.0


def test_render_pair_shape_validation():
    with pytest.raises(ValidationError):
        RenderPair(np.zeros((4, 4)), np.zeros((8, 8, 3)))


def test_build_pretraining_set(tmp_path):
    renders = make_synthetic_renders(8, resolution=32, seed=0)
    save_renders(renders, tmp_path)
    pairs = build_pretraining_set(tmp_path, resolution=32, seed=0)
    assert len(pairs) == 8
    again = build_pretraining_set(tmp_path, resolution=32, seed=0)
    for a, b in zip(pairs, again):
        np.testing.assert_array_equal(a.input, b.input)
        np.testing.assert_array_equal(a.target, b.target)


def test_build_pretraining_set_empty_dir(tmp_path):
    with pytest.raises(ValidationError):
        build_pretraining_set(tmp_path)


def test_build_pretraining_set_missing_dir():
    with pytest.raises(FileNotFoundError):
        build_pretraining_set("/nonexistent/renders")


def test_make_synthetic_renders_deterministic():
    a = make_synthetic_renders(3, resolution=16, seed=2)
    b = make_synthetic_renders(3, resolution=16, seed=2)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra, rb)
