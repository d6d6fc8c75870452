import numpy as np
import pytest

from matting.metrics import (
    batch_report,
    connectivity_error,
    gaussian_derivative_kernels,
    gradient_error,
    gradient_magnitude,
    matting_scores,
    mse,
    sad,
    trimap_scores,
)
from matting.shared.errors import EmptyMaskError, ShapeError
from matting.trimap import BG, FG, UNK


def dense_gradient_magnitude(img, sigma=1.4):
    """Full 2-D Gaussian-derivative convolution with symmetric (reflected) borders."""
    gauss, dgauss = gaussian_derivative_kernels(sigma)
    radius = len(gauss) // 2
    padded = np.pad(img, radius, mode="symmetric")
    kernel_x = np.outer(gauss, dgauss)
    kernel_y = np.outer(dgauss, gauss)
    height, width = img.shape
    gx, gy = np.zeros_like(img), np.zeros_like(img)
    for y in range(height):
        for x in range(width):
            window = padded[y:y + 2 * radius + 1, x:x + 2 * radius + 1][::-1, ::-1]
            gx[y, x] = (window * kernel_x).sum()
            gy[y, x] = (window * kernel_y).sum()
    return np.sqrt(gx ** 2 + gy ** 2)


def largest_component_union_find(binary):
    """Largest 4-connected component; equal sizes go to the component whose first pixel comes first."""
    height, width = binary.shape
    parent = list(range(height * width))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for y in range(height):
        for x in range(width):
            if not binary[y, x]:
                continue
            if x + 1 < width and binary[y, x + 1]:
                union(y * width + x, y * width + x + 1)
            if y + 1 < height and binary[y + 1, x]:
                union(y * width + x, (y + 1) * width + x)
    sizes = {}
    for i in range(height * width):
        if binary.flat[i]:
            root = find(i)
            sizes[root] = sizes.get(root, 0) + 1
    out = np.zeros(binary.shape, dtype=bool)
    if not sizes:
        return out
    best = min(sizes, key=lambda root: (-sizes[root], root))
    for i in range(height * width):
        if binary.flat[i] and find(i) == best:
            out.flat[i] = True
    return out


def naive_connectivity(pred, gt, mask, step=0.1):
    thresholds = [i * step for i in range(int(round(1 / step)) + 1)]
    level = np.full(gt.shape, -1.0)
    for i in range(1, len(thresholds)):
        source = largest_component_union_find((pred >= thresholds[i]) & (gt >= thresholds[i]))
        for y in range(gt.shape[0]):
            for x in range(gt.shape[1]):
                if level[y, x] == -1 and not source[y, x]:
                    level[y, x] = thresholds[i - 1]
    level[level == -1] = 1.0
    total = 0.0
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            if not mask[y, x]:
                continue
            d_pred, d_gt = pred[y, x] - level[y, x], gt[y, x] - level[y, x]
            phi_pred = 1.0 - (d_pred if d_pred >= 0.15 else 0.0)
            phi_gt = 1.0 - (d_gt if d_gt >= 0.15 else 0.0)
            total += abs(phi_pred - phi_gt)
    return total / 1000.0


class TestSadMse:
    def test_identical(self, rng):
        gt = rng.random((8, 8))
        assert sad(gt, gt) == 0.0 and mse(gt, gt) == 0.0

    def test_two_masked_pixels(self):
        pred = np.array([[0.1, 0.3, 0.9]])
        gt = np.zeros((1, 3))
        mask = np.array([[True, True, False]])
        assert sad(pred, gt, mask) == pytest.approx(0.0004, abs=1e-15)

    def test_single_pixel_mse(self):
        assert mse(np.array([[0.6]]), np.array([[0.5]])) == pytest.approx(0.01, abs=1e-15)

    def test_loop_oracles(self, rng):
        pred, gt = rng.random((16, 16)), rng.random((16, 16))
        mask = rng.random((16, 16)) < 0.5
        total, squares, count = 0.0, 0.0, 0
        for y in range(16):
            for x in range(16):
                if mask[y, x]:
                    total += abs(pred[y, x] - gt[y, x])
                    squares += (pred[y, x] - gt[y, x]) ** 2
                    count += 1
        assert sad(pred, gt, mask) == pytest.approx(total / 1000.0, abs=1e-12)
        assert mse(pred, gt, mask) == pytest.approx(squares / count, abs=1e-12)

    def test_empty_mask(self, rng):
        empty = np.zeros((4, 4), dtype=bool)
        assert sad(rng.random((4, 4)), rng.random((4, 4)), empty) == 0.0
        with pytest.raises(EmptyMaskError):
            mse(rng.random((4, 4)), rng.random((4, 4)), empty)

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            sad(np.zeros((2, 2)), np.zeros((2, 3)))


class TestGradientError:
    def test_identical_and_constant_images(self, rng):
        gt = rng.random((12, 12))
        assert gradient_error(gt, gt) == 0.0
        assert gradient_error(np.full((12, 12), 0.2), np.full((12, 12), 0.9)) == pytest.approx(0.0, abs=1e-20)

    def test_matches_dense_filter(self):
        gen = np.random.default_rng(31)
        for _ in range(50):
            pred, gt = gen.random((16, 16)), gen.random((16, 16))
            mask = gen.random((16, 16)) < 0.5
            np.testing.assert_allclose(gradient_magnitude(pred), dense_gradient_magnitude(pred), atol=1e-10)
            expected = ((dense_gradient_magnitude(pred) - dense_gradient_magnitude(gt)) ** 2)[mask].sum() / 1000.0
            assert gradient_error(pred, gt, mask) == pytest.approx(expected, abs=1e-6)

    def test_kernels_have_unit_norm(self):
        gauss, dgauss = gaussian_derivative_kernels(1.4)
        assert np.sqrt(np.sum(np.outer(gauss, dgauss) ** 2)) == pytest.approx(1.0)
        assert dgauss.sum() == pytest.approx(0.0, abs=1e-12)


class TestConnectivityError:
    def test_identical(self, rng):
        gt = rng.random((10, 10))
        assert connectivity_error(gt, gt) == 0.0

    def test_identical_binary_masks(self):
        gt = np.zeros((8, 8))
        gt[2:6, 2:6] = 1.0
        assert connectivity_error(gt, gt) == 0.0

    def test_matches_union_find_oracle(self):
        gen = np.random.default_rng(31)
        for _ in range(50):
            gt = gen.random((16, 16))
            pred = np.clip(gt + gen.normal(0.0, 0.3, size=(16, 16)), 0.0, 1.0)
            mask = gen.random((16, 16)) < 0.7
            assert connectivity_error(pred, gt, mask) == pytest.approx(naive_connectivity(pred, gt, mask), abs=1e-6)

    def test_disconnected_blob_is_penalised(self):
        gt = np.zeros((8, 8))
        gt[1:4, 1:4] = 1.0
        pred = gt.copy()
        pred[6, 6] = 1.0
        assert connectivity_error(pred, gt) > 0.0


class TestMattingScores:
    def test_all_zero_for_perfect_prediction(self, soft_disk):
        scores = matting_scores(soft_disk, soft_disk, soft_disk > 0.2)
        assert (scores.sad, scores.mse, scores.grad, scores.conn) == (0.0, 0.0, 0.0, 0.0)
        assert scores.mask_pixels == int((soft_disk > 0.2).sum())

    def test_empty_mask_leaves_mse_undefined(self, soft_disk):
        scores = matting_scores(soft_disk, soft_disk * 0.5, np.zeros(soft_disk.shape, dtype=bool))
        assert scores.mse is None and scores.sad == 0.0


class TestTrimapScores:
    def test_perfect(self):
        t = np.array([[BG, UNK], [FG, FG]])
        scores = trimap_scores(t, t)
        assert scores.accuracy == 1.0 and scores.miou == 1.0
        assert (scores.iou_bg, scores.iou_unk, scores.iou_fg) == (1.0, 1.0, 1.0)

    def test_foreground_iou(self):
        gt = np.array([[FG, FG, BG], [FG, FG, BG], [BG, BG, BG]])
        pred = np.array([[FG, FG, BG], [BG, BG, BG], [BG, BG, BG]])
        scores = trimap_scores(pred, gt)
        assert scores.iou_fg == 0.5
        assert scores.iou_unk is None
        assert scores.accuracy == pytest.approx(7 / 9)
        assert scores.miou == pytest.approx((0.5 + 5 / 7) / 2)

    def test_accuracy_is_one_minus_hamming(self, rng):
        pred, gt = rng.integers(0, 3, size=(9, 7)), rng.integers(0, 3, size=(9, 7))
        assert trimap_scores(pred, gt).accuracy == pytest.approx(1.0 - (pred != gt).sum() / 63)


def test_batch_report_aggregates_numeric_columns():
    rows = [{"name": "a.png", "sad": 1.0, "mse": 0.1}, {"name": "b.png", "sad": 3.0, "mse": 0.3}]
    frame, aggregate = batch_report(rows)
    assert list(frame["name"]) == ["a.png", "b.png"]
    assert aggregate == {"sad": pytest.approx(2.0), "mse": pytest.approx(0.2)}
