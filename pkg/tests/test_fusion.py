import numpy as np
import pytest

from matting.fusion import hard_fusion, soft_fusion
from matting.shared.errors import MattingError, ProbabilityError, ShapeError
from matting.trimap import BG, FG, UNK


def probs_field(gen, shape=(8, 8)):
    raw = gen.random(shape + (3,))
    return raw / raw.sum(axis=-1, keepdims=True)


class TestSoftFusion:
    def test_certain_foreground(self, rng):
        probs = np.zeros((3, 3, 3))
        probs[..., 2] = 1.0
        for variant in ("A", "B"):
            np.testing.assert_array_equal(soft_fusion(rng.random((3, 3)), probs, variant), 1.0)

    def test_fully_unknown_keeps_prediction(self, rng):
        alpha = rng.random((3, 3))
        probs = np.zeros((3, 3, 3))
        probs[..., 1] = 1.0
        for variant in ("A", "B"):
            np.testing.assert_allclose(soft_fusion(alpha, probs, variant), alpha, atol=1e-15)

    def test_worked_pixel(self):
        probs = np.array([[[0.5, 0.2, 0.3]]])
        alpha = np.array([[0.7]])
        for variant in ("A", "B"):
            assert soft_fusion(alpha, probs, variant)[0, 0] == pytest.approx(0.44, abs=1e-12)

    def test_variants_agree_on_normalised_fields(self):
        gen = np.random.default_rng(17)
        for _ in range(20):
            probs = probs_field(gen)
            alpha = gen.random((8, 8))
            np.testing.assert_allclose(soft_fusion(alpha, probs, "A"), soft_fusion(alpha, probs, "B"), atol=1e-12)

    def test_variant_b_is_monotone_in_alpha(self, rng):
        probs = probs_field(rng)
        low = rng.random((8, 8)) * 0.5
        assert (soft_fusion(low + 0.3, probs, "B") >= soft_fusion(low, probs, "B")).all()

    def test_outputs_in_unit_range(self, rng):
        probs = probs_field(rng)
        alpha = rng.normal(0.5, 1.0, size=(8, 8))
        for variant in ("A", "B"):
            out = soft_fusion(alpha, probs, variant)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_bad_inputs(self, rng):
        with pytest.raises(ProbabilityError):
            soft_fusion(rng.random((2, 2)), np.full((2, 2, 3), 0.5))
        with pytest.raises(ShapeError):
            soft_fusion(rng.random((2, 3)), probs_field(rng, (2, 2)))
        with pytest.raises(MattingError):
            soft_fusion(rng.random((2, 2)), probs_field(rng, (2, 2)), "C")


class TestHardFusion:
    def test_all_foreground(self, rng):
        np.testing.assert_array_equal(hard_fusion(rng.random((4, 4)), np.full((4, 4), FG)), 1.0)

    def test_all_unknown_clamps(self):
        alpha = np.array([[-0.2, 0.4], [1.3, 0.9]])
        np.testing.assert_array_equal(hard_fusion(alpha, np.full((2, 2), UNK)), [[0.0, 0.4], [1.0, 0.9]])

    def test_mixed_case(self):
        alpha = np.array([[0.1, 0.5, 0.9], [1.2, -0.1, 0.3], [0.6, 0.6, 0.6]])
        t = np.array([[FG, UNK, BG], [UNK, UNK, FG], [BG, BG, UNK]])
        expected = [[1.0, 0.5, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 0.6]]
        np.testing.assert_array_equal(hard_fusion(alpha, t), expected)

    def test_idempotent(self, rng):
        alpha = rng.normal(0.5, 0.5, size=(6, 6))
        t = rng.integers(0, 3, size=(6, 6))
        once = hard_fusion(alpha, t)
        np.testing.assert_array_equal(hard_fusion(once, t), once)

    def test_extent_mismatch(self, rng):
        with pytest.raises(ShapeError):
            hard_fusion(rng.random((3, 3)), np.full((3, 4), UNK))
