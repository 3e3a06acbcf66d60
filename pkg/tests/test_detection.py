import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epdistill import (
    BinaryHeatmap,
    KeypointList,
    Raster,
    bilinear_sample,
    extract_keypoints,
    merge_flip_cache,
    nms,
    unfold_softmax_fast,
    unfold_softmax_grad,
    unfold_softmax_naive,
    unfold_softmax_patch_losses,
)
from epdistill.errors import (
    KernelTooLargeError,
    NumericOverflowError,
    OutOfBoundsError,
    ShapeMismatchError,
)

from helpers import central_difference, max_relative_error


def random_instance(rng, h, w, density=0.01, lo=-5.0, hi=5.0):
    logits = rng.uniform(lo, hi, size=(h, w))
    target = (rng.random((h, w)) < density).astype(float)
    return logits, target


class TestUnfoldSoftmaxNaive:
    def test_zero_logits_empty_target(self):
        loss = unfold_softmax_naive(np.zeros((9, 9)), np.zeros((9, 9)), 5)
        assert abs(loss - math.log(26)) < 1e-12

    def test_single_patch_center_keypoint(self):
        target = np.zeros((5, 5))
        target[2, 2] = 1.0
        loss = unfold_softmax_naive(np.zeros((5, 5)), target, 5)
        assert abs(loss - math.log(26)) < 1e-12

    def test_single_patch_confident_spike(self):
        logits = np.zeros((5, 5))
        target = np.zeros((5, 5))
        logits[1, 3] = 10.0
        target[1, 3] = 1.0
        expected = -(10.0 - math.log(math.exp(10.0) + 25.0))
        loss = unfold_softmax_naive(logits, target, 5)
        assert abs(loss - expected) < 1e-12
        assert abs(loss - 1.13e-3) < 1e-5

    def test_multiple_targets_in_patch_sum(self):
        logits = np.arange(25, dtype=float).reshape(5, 5) / 25.0
        target = np.zeros((5, 5))
        target[0, 0] = 1.0
        target[4, 4] = 1.0
        l1 = logits[0, 0] + logits[4, 4]
        expected = -(l1 - math.log(np.exp(logits).sum() + 1.0))
        assert abs(unfold_softmax_naive(logits, target, 5) - expected) < 1e-12

    def test_shape_mismatch_and_kernel_errors(self):
        with pytest.raises(ShapeMismatchError):
            unfold_softmax_naive(np.zeros((5, 5)), np.zeros((5, 6)), 3)
        with pytest.raises(KernelTooLargeError):
            unfold_softmax_naive(np.zeros((4, 4)), np.zeros((4, 4)), 5)
        with pytest.raises(ValueError):
            unfold_softmax_naive(np.zeros((5, 5)), np.zeros((5, 5)), 2)

    def test_accepts_raster_types(self):
        loss = unfold_softmax_naive(
            Raster(np.zeros((7, 7))), BinaryHeatmap(np.zeros((7, 7))), 5
        )
        assert abs(loss - math.log(26)) < 1e-12

    def test_stable_for_large_logits(self):
        logits = np.full((7, 7), 200.0)
        target = np.ones((7, 7))
        loss = unfold_softmax_naive(logits, target, 3)
        assert np.isfinite(loss)


class TestUnfoldSoftmaxFast:
    def test_matches_naive_on_reference_cases(self):
        cases = []
        cases.append((np.zeros((9, 9)), np.zeros((9, 9))))
        t = np.zeros((5, 5)); t[2, 2] = 1.0
        cases.append((np.zeros((5, 5)), t))
        x = np.zeros((5, 5)); y = np.zeros((5, 5)); x[1, 3] = 10.0; y[1, 3] = 1.0
        cases.append((x, y))
        for logits, target in cases:
            naive = unfold_softmax_naive(logits, target, 5)
            fast = unfold_softmax_fast(logits, target, 5)
            assert abs(naive - fast) < 1e-6

    def test_matches_naive_on_random_raster(self):
        rng = np.random.default_rng(0)
        logits, target = random_instance(rng, 32, 32, density=0.01)
        assert abs(
            unfold_softmax_fast(logits, target, 5)
            - unfold_softmax_naive(logits, target, 5)
        ) < 1e-6

    def test_k1_reduces_to_logistic_loss(self):
        rng = np.random.default_rng(1)
        logits, target = random_instance(rng, 8, 8, density=0.2)
        expected = float(
            np.mean(-(logits * target - np.log(np.exp(logits) + 1.0)))
        )
        assert abs(unfold_softmax_fast(logits, target, 1) - expected) < 1e-9
        assert abs(unfold_softmax_naive(logits, target, 1) - expected) < 1e-9

    def test_overflow_guard(self):
        logits = np.zeros((6, 6))
        logits[3, 3] = 100.0
        with pytest.raises(NumericOverflowError):
            unfold_softmax_fast(logits, np.zeros((6, 6)), 5)
        # the stabilized path handles the same input
        assert np.isfinite(unfold_softmax_naive(logits, np.zeros((6, 6)), 5))

    @settings(max_examples=60, deadline=None)
    @given(
        h=st.integers(min_value=7, max_value=64),
        w=st.integers(min_value=7, max_value=64),
        k=st.sampled_from([1, 3, 5]),
        density=st.floats(min_value=0.0, max_value=0.05),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_equivalence_property(self, h, w, k, density, seed):
        rng = np.random.default_rng(seed)
        logits, target = random_instance(rng, h, w, density=density)
        naive = unfold_softmax_naive(logits, target, k)
        fast = unfold_softmax_fast(logits, target, k)
        assert abs(naive - fast) < 1e-6


class TestLossStructure:
    def test_constant_shift_changes_loss(self):
        # the appended zero logit breaks shift invariance
        rng = np.random.default_rng(2)
        logits, target = random_instance(rng, 16, 16, density=0.05)
        base = unfold_softmax_naive(logits, target, 5)
        shifted = unfold_softmax_naive(logits + 5.0, target, 5)
        assert abs(base - shifted) > 1e-3

    def test_translation_consistency_of_patch_losses(self):
        rng = np.random.default_rng(3)
        logits, target = random_instance(rng, 20, 24, density=0.05)
        per_patch = unfold_softmax_patch_losses(logits, target, 5)
        dy, dx = 3, 4
        rolled = unfold_softmax_patch_losses(
            np.roll(logits, (dy, dx), axis=(0, 1)),
            np.roll(target, (dy, dx), axis=(0, 1)),
            5,
        )
        # patches fully inside the unwrapped region just move by (dy, dx)
        np.testing.assert_allclose(
            rolled[dy:, dx:], per_patch[: per_patch.shape[0] - dy, : per_patch.shape[1] - dx],
            atol=1e-12,
        )


class TestUnfoldSoftmaxGrad:
    def test_interior_pixel_uniform_case(self):
        h = w = 11
        k = 5
        n_patches = (h - k + 1) * (w - k + 1)
        grad = unfold_softmax_grad(np.zeros((h, w)), np.zeros((h, w)), k)
        expected = 25.0 / (26.0 * n_patches)
        assert abs(grad[5, 5] - expected) < 1e-12

    def test_saturated_logit_with_target(self):
        logits = np.zeros((7, 7))
        target = np.zeros((7, 7))
        logits[3, 3] = 40.0
        target[3, 3] = 1.0
        grad = unfold_softmax_grad(logits, target, 5)
        assert abs(grad[3, 3]) < 1e-9

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        logits, target = random_instance(rng, 9, 8, density=0.1, lo=-2.0, hi=2.0)

        def loss_of(flat):
            return unfold_softmax_naive(flat.reshape(9, 8), target, 3)

        numeric = central_difference(loss_of, logits.ravel()).reshape(9, 8)
        analytic = unfold_softmax_grad(logits, target, 3)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_returns_raster_for_raster_input(self):
        out = unfold_softmax_grad(Raster(np.zeros((6, 6))), np.zeros((6, 6)), 3)
        assert isinstance(out, Raster)


def greedy_nms_oracle(points, radius):
    order = sorted(range(len(points)), key=lambda i: (-points[i][2], i))
    kept = []
    for i in order:
        x, y, _ = points[i]
        ok = True
        for j in kept:
            if max(abs(points[j][0] - x), abs(points[j][1] - y)) <= radius:
                ok = False
                break
        if ok:
            kept.append(i)
    return [tuple(points[i]) for i in kept]


class TestNms:
    def test_duplicate_location_keeps_higher_score(self):
        kps = KeypointList([[4.0, 7.0, 5.0], [4.0, 7.0, 3.0]])
        out = nms(kps, 2)
        assert len(out) == 1
        assert out.score[0] == 5.0

    def test_distant_points_all_survive(self):
        kps = KeypointList([[0.0, 0.0, 1.0], [10.0, 0.0, 2.0], [0.0, 10.0, 3.0]])
        out = nms(kps, 2)
        assert len(out) == 3
        assert list(out.score) == [3.0, 2.0, 1.0]  # sorted descending

    def test_matches_greedy_oracle(self):
        rng = np.random.default_rng(5)
        pts = np.column_stack([
            rng.uniform(0, 40, 200),
            rng.uniform(0, 30, 200),
            rng.standard_normal(200),
        ])
        out = nms(KeypointList(pts), 2)
        expected = greedy_nms_oracle([tuple(p) for p in pts], 2)
        assert [tuple(p) for p in out.points] == expected

    def test_survivor_separation_and_coverage(self):
        rng = np.random.default_rng(6)
        pts = np.column_stack([
            rng.uniform(0, 20, 120), rng.uniform(0, 20, 120), rng.random(120)
        ])
        radius = 3
        out = nms(KeypointList(pts), radius)
        xy = out.points[:, :2]
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert np.max(np.abs(xy[i] - xy[j])) > radius
        # every input point is either kept or within radius of a kept point
        for p in pts:
            d = np.max(np.abs(xy - p[:2]), axis=1)
            assert np.any(d <= radius)

    def test_empty_input(self):
        assert len(nms(KeypointList(), 2)) == 0


class TestMergeFlipCache:
    def test_empty_flipped_equals_plain_nms(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack([
            rng.uniform(0, 63, 30), rng.uniform(0, 47, 30), rng.random(30)
        ])
        k1 = KeypointList(pts)
        merged, heat = merge_flip_cache(k1, KeypointList(), 64, 48, radius=2)
        plain = nms(k1, 2)
        np.testing.assert_array_equal(merged.points, plain.points)
        assert heat.values.sum() == len(plain)

    def test_duplicate_encoding_suppresses_to_primary_count(self):
        rng = np.random.default_rng(8)
        xs = rng.uniform(0, 63, 20)
        ys = rng.uniform(0, 47, 20)
        sc = rng.random(20)
        k1 = KeypointList(np.column_stack([xs, ys, sc]))
        k1_clean = nms(k1, 2)  # make the primary set already separated
        flipped = k1_clean.points.copy()
        flipped[:, 0] = 63.0 - flipped[:, 0]  # same physical points, pre-flipped
        merged, _ = merge_flip_cache(
            k1_clean, KeypointList(flipped), 64, 48, radius=2
        )
        assert len(merged) == len(k1_clean)

    def test_mirror_symmetric_input_gives_mirror_symmetric_heatmap(self):
        # keep points away from the mirror axis so a point and its mirror
        # never fall inside one suppression window
        rng = np.random.default_rng(9)
        width, height, radius = 64, 32, 2
        xs = rng.uniform(0, width / 2 - radius - 1, 25)
        ys = rng.uniform(0, height - 1, 25)
        sc = rng.random(25)
        k1 = KeypointList(np.column_stack([xs, ys, sc]))
        _, heat = merge_flip_cache(k1, k1, width, height, radius=radius)
        np.testing.assert_array_equal(heat.values, heat.values[:, ::-1])

    def test_role_swap_symmetry(self):
        rng = np.random.default_rng(10)
        width, height = 48, 40
        a = np.column_stack([
            rng.uniform(0, width - 1, 15), rng.uniform(0, height - 1, 15),
            rng.uniform(1, 2, 15),
        ])
        b = np.column_stack([
            rng.uniform(0, width - 1, 15), rng.uniform(0, height - 1, 15),
            rng.uniform(3, 4, 15),  # distinct score ranges: no tie ambiguity
        ])
        _, heat_ab = merge_flip_cache(KeypointList(a), KeypointList(b), width, height)
        # swap roles: b plays the primary list, a plays the flipped one
        b_unflipped = b.copy()
        b_unflipped[:, 0] = (width - 1) - b_unflipped[:, 0]
        a_flipped = a.copy()
        a_flipped[:, 0] = (width - 1) - a_flipped[:, 0]
        _, heat_ba = merge_flip_cache(
            KeypointList(b_unflipped), KeypointList(a_flipped), width, height
        )
        np.testing.assert_array_equal(heat_ab.values, heat_ba.values)

    def test_out_of_bounds(self):
        k1 = KeypointList([[70.0, 5.0, 1.0]])
        with pytest.raises(OutOfBoundsError):
            merge_flip_cache(k1, KeypointList(), 64, 48)

    def test_heatmap_marks_rounded_survivors(self):
        k1 = KeypointList([[10.4, 20.6, 1.0]])
        _, heat = merge_flip_cache(k1, KeypointList(), 64, 48)
        assert heat.values[21, 10] == 1
        assert heat.values.sum() == 1


def window_scan_oracle(values, threshold, nms_size, top_k):
    h, w = values.shape
    found = []
    for y in range(h):
        for x in range(w):
            v = values[y, x]
            if v <= threshold:
                continue
            strict = True
            for dy in range(-nms_size, nms_size + 1):
                for dx in range(-nms_size, nms_size + 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and values[yy, xx] >= v:
                        strict = False
                        break
                if not strict:
                    break
            if strict:
                found.append((x, y, v))
    found.sort(key=lambda t: -t[2])
    return found[:top_k]


class TestExtractKeypoints:
    def test_single_spike(self):
        values = np.full((30, 40), -10.0)
        values[12, 10] = 3.0
        out = extract_keypoints(values, threshold=-5.0, nms_size=2, top_k=4096)
        assert len(out) == 1
        assert (out.x[0], out.y[0], out.score[0]) == (10.0, 12.0, 3.0)

    def test_constant_map_has_no_strict_maxima(self):
        assert len(extract_keypoints(np.zeros((16, 16)))) == 0

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(11)
        values = rng.standard_normal((40, 50)) * 3.0 - 2.0
        out = extract_keypoints(values, threshold=-5.0, nms_size=2, top_k=4096)
        expected = window_scan_oracle(values, -5.0, 2, 4096)
        assert [tuple(p) for p in out.points] == expected

    def test_threshold_and_top_k(self):
        rng = np.random.default_rng(12)
        values = rng.standard_normal((30, 30))
        out = extract_keypoints(values, threshold=0.5, nms_size=1, top_k=5)
        assert len(out) <= 5
        assert np.all(out.score > 0.5)
        assert np.all(np.diff(out.score) <= 0)


class TestBilinearSample:
    def make_channels(self, rng, c, h, w):
        return [rng.standard_normal((h, w)) for _ in range(c)]

    def test_grid_node_returns_cell_vector(self):
        rng = np.random.default_rng(13)
        chans = self.make_channels(rng, 4, 6, 8)
        kps = KeypointList([[3.0 * 2, 4.0 * 2, 1.0]])  # maps to cell (3, 4) at s=2
        out = bilinear_sample(chans, kps, s=2)
        vec = np.array([ch[4, 3] for ch in chans])
        np.testing.assert_allclose(out.data[0], vec / np.linalg.norm(vec), atol=1e-12)

    def test_midpoint_averages_neighbors(self):
        rng = np.random.default_rng(14)
        chans = self.make_channels(rng, 3, 5, 5)
        kps = KeypointList([[1.5, 2.0, 1.0]])  # s=1: midway between x=1 and x=2
        out = bilinear_sample(chans, kps, s=1)
        v = np.array([ch[2, 1] for ch in chans])
        w = np.array([ch[2, 2] for ch in chans])
        mid = (v + w) / 2.0
        np.testing.assert_allclose(out.data[0], mid / np.linalg.norm(mid), atol=1e-12)

    def test_matches_four_tap_oracle(self):
        rng = np.random.default_rng(15)
        c, h, w, s = 6, 10, 12, 4
        chans = self.make_channels(rng, c, h, w)
        xs = rng.uniform(0, (w - 1) * s, 50)
        ys = rng.uniform(0, (h - 1) * s, 50)
        kps = KeypointList(np.column_stack([xs, ys, np.ones(50)]))
        out = bilinear_sample(chans, kps, s=s)
        for n in range(50):
            cx, cy = xs[n] / s, ys[n] / s
            x0, y0 = int(np.floor(cx)), int(np.floor(cy))
            fx, fy = cx - x0, cy - y0
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            vec = np.array([
                ch[y0, x0] * (1 - fy) * (1 - fx)
                + ch[y0, x1] * (1 - fy) * fx
                + ch[y1, x0] * fy * (1 - fx)
                + ch[y1, x1] * fy * fx
                for ch in chans
            ])
            np.testing.assert_allclose(
                out.data[n], vec / np.linalg.norm(vec), atol=1e-6
            )

    def test_out_of_bounds_default_and_clamp(self):
        rng = np.random.default_rng(16)
        chans = self.make_channels(rng, 3, 4, 4)
        kps = KeypointList([[100.0, 0.0, 1.0]])
        with pytest.raises(OutOfBoundsError):
            bilinear_sample(chans, kps, s=2)
        out = bilinear_sample(chans, kps, s=2, clamp=True)
        vec = np.array([ch[0, 3] for ch in chans])
        np.testing.assert_allclose(out.data[0], vec / np.linalg.norm(vec), atol=1e-12)
