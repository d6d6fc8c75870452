import numpy as np
import pytest

from matting.morphology import dilate, erode, gaussian_blur, gaussian_kernel
from matting.shared.errors import MattingError


def chebyshev_erode(m, k):
    """Brute-force erosion: every pixel within distance k must exist and be set."""
    height, width = m.shape
    out = np.zeros_like(m)
    for y in range(height):
        for x in range(width):
            if y - k < 0 or x - k < 0 or y + k >= height or x + k >= width:
                continue
            out[y, x] = m[y - k:y + k + 1, x - k:x + k + 1].all()
    return out


def dense_blur(img, sigma):
    """Full 2-D correlation with the outer-product kernel over a symmetrically padded image."""
    kernel = gaussian_kernel(sigma)
    kernel2d = np.outer(kernel, kernel)
    radius = len(kernel) // 2
    padded = np.pad(img, radius, mode="symmetric")
    out = np.zeros_like(img)
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            out[y, x] = np.sum(padded[y:y + 2 * radius + 1, x:x + 2 * radius + 1] * kernel2d)
    return out


def random_masks(count, seed=0, shape=(20, 24)):
    gen = np.random.default_rng(seed)
    for _ in range(count):
        yield gen.random(shape) < gen.uniform(0.3, 0.9)


def test_radius_zero_is_identity():
    for m in random_masks(5):
        np.testing.assert_array_equal(erode(m, 0), m)
        np.testing.assert_array_equal(dilate(m, 0), m)


def test_erosion_matches_brute_force():
    for k, m in enumerate(random_masks(6, seed=1)):
        np.testing.assert_array_equal(erode(m, k % 3 + 1), chebyshev_erode(m, k % 3 + 1))


def test_erosion_is_additive():
    gen = np.random.default_rng(2)
    for m in random_masks(100, seed=3):
        a, b = (int(v) for v in gen.integers(0, 4, size=2))
        np.testing.assert_array_equal(erode(erode(m, a), b), erode(m, a + b))


def test_dilation_is_additive():
    gen = np.random.default_rng(4)
    for m in random_masks(30, seed=5):
        a, b = (int(v) for v in gen.integers(0, 4, size=2))
        np.testing.assert_array_equal(dilate(dilate(m, a), b), dilate(m, a + b))


def test_dilation_is_dual_to_erosion_of_the_complement():
    for m in random_masks(100, seed=6):
        np.testing.assert_array_equal(dilate(m, 2), ~erode(~m, 2, outside=True))


def test_full_mask_shrinks_from_the_border():
    m = np.ones((9, 9), dtype=bool)
    out = erode(m, 2)
    assert out.sum() == 25
    assert out[2:7, 2:7].all()
    assert erode(m, 2, outside=True).all()


def test_negative_radius_is_rejected():
    with pytest.raises(MattingError):
        erode(np.ones((3, 3), dtype=bool), -1)


class TestGaussian:
    def test_kernel_is_normalised(self):
        kernel = gaussian_kernel(1.5)
        assert kernel.sum() == pytest.approx(1.0, abs=1e-12)
        assert len(kernel) == 2 * 5 + 1

    def test_matches_dense_convolution(self, rng):
        img = rng.random((16, 16))
        np.testing.assert_allclose(gaussian_blur(img, 2.0), dense_blur(img, 2.0), atol=1e-9, rtol=0)

    def test_unit_impulse_response_sums_to_one(self):
        impulse = np.zeros((9, 9))
        impulse[4, 4] = 1.0
        assert gaussian_blur(impulse, 1.0).sum() == pytest.approx(1.0, abs=1e-9)

    def test_mean_is_preserved_away_from_the_border(self, rng):
        img = np.zeros((24, 24))
        img[8:16, 8:16] = rng.random((8, 8))
        assert gaussian_blur(img, 1.0).mean() == pytest.approx(img.mean(), abs=1e-9)

    def test_blur_keeps_constant_images(self):
        np.testing.assert_allclose(gaussian_blur(np.full((10, 12), 0.3), 2.0), 0.3, atol=1e-12)

    def test_blur_stays_in_unit_range(self, rng):
        out = gaussian_blur(rng.random((16, 16)) > 0.5, 1.0)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_sigma_must_be_positive(self):
        with pytest.raises(MattingError):
            gaussian_kernel(0.0)
