"""Keypoint detection side: patchwise softmax loss, NMS, caching, sampling.

The detection loss scores every k x k patch of a logit map against a binary
target heatmap with a softmax cross-entropy in which an extra constant-zero
logit is appended to each patch as the "no keypoint here" bin.  Two
implementations are provided: a direct per-patch form (numerically stabilized)
and the production two-convolution form, which trades stability for speed and
is kept bit-faithful to its pseudocode, overflow fragility included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .descriptors import DescriptorSet, l2_normalize_rows
from .errors import (
    KernelTooLargeError,
    NumericOverflowError,
    OutOfBoundsError,
    ShapeMismatchError,
)

# literal exp() in the fast path overflows float32 around e^88; guard below that
FAST_EXP_LIMIT = 80.0


@dataclass(frozen=True)
class Raster:
    """A single-channel H x W grid of finite real values."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"raster must be 2-D and nonempty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("raster values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryHeatmap:
    """An H x W grid of {0, 1} marking keypoint cells."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"heatmap must be 2-D and nonempty, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("heatmap values must be 0 or 1")
        v = v.astype(np.uint8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class KeypointList:
    """Pixel keypoints with scores, stored as an (n, 3) array of (x, y, score)."""

    __slots__ = ("_points",)

    def __init__(self, points=None):
        if points is None:
            pts = np.empty((0, 3), dtype=float)
        else:
            pts = np.asarray(points, dtype=float)
            if pts.size == 0:
                pts = pts.reshape(0, 3)
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise ValueError(f"expected (n, 3) keypoint data, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoint coordinates and scores must be finite")
        pts.setflags(write=False)
        self._points = pts

    @classmethod
    def from_arrays(cls, x, y, score) -> "KeypointList":
        return cls(np.stack([np.asarray(x, float), np.asarray(y, float),
                             np.asarray(score, float)], axis=1))

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def x(self) -> np.ndarray:
        return self._points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self._points[:, 1]

    @property
    def score(self) -> np.ndarray:
        return self._points[:, 2]

    def __len__(self) -> int:
        return self._points.shape[0]

    def __repr__(self) -> str:
        return f"KeypointList(n={len(self)})"


def _grid(obj) -> np.ndarray:
    if isinstance(obj, (Raster, BinaryHeatmap)):
        return np.asarray(obj.values, dtype=float)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got ndim={arr.ndim}")
    return arr


def _check_patch_args(logits, target, k: int):
    x = _grid(logits)
    y = _grid(target)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"logits {x.shape} vs target {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("target heatmap must be binary")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {k}")
    if k > min(x.shape):
        raise KernelTooLargeError(f"kernel {k} exceeds raster {x.shape}")
    return x, y


def _box_sum_valid(a: np.ndarray, k: int) -> np.ndarray:
    """Valid-mode correlation with a k x k ones kernel (no padding)."""
    ph, pw = a.shape[0] - k + 1, a.shape[1] - k + 1
    out = np.zeros((ph, pw))
    for di in range(k):
        for dj in range(k):
            out += a[di:di + ph, dj:dj + pw]
    return out


def _patch_log_partition(x: np.ndarray, k: int) -> np.ndarray:
    """Per-patch log(sum_i exp(x_i) + 1), computed with a max shift."""
    win = sliding_window_view(x, (k, k))
    m = np.maximum(win.max(axis=(2, 3)), 0.0)  # the appended 0 logit joins the max
    return np.log(np.exp(win - m[:, :, None, None]).sum(axis=(2, 3)) + np.exp(-m)) + m


def unfold_softmax_patch_losses(logits, target, k: int = 5) -> np.ndarray:
    """Per-patch detection loss over every valid k x k position.

    For patch p the loss is ``-(sum_i x_i*y_i - log(sum_i exp(x_i) + 1))``:
    softmax cross-entropy over the patch logits plus one appended zero logit
    standing for "no keypoint in this patch".  Target pixels inside a patch
    all contribute to the first term; no deduplication is applied.
    """
    x, y = _check_patch_args(logits, target, k)
    win_xy = sliding_window_view(x * y, (k, k))
    l1 = win_xy.sum(axis=(2, 3))
    return -(l1 - _patch_log_partition(x, k))


def unfold_softmax_naive(logits, target, k: int = 5) -> float:
    """Mean patchwise detection loss, direct stabilized evaluation."""
    return float(unfold_softmax_patch_losses(logits, target, k).mean())


def unfold_softmax_fast(logits, target, k: int = 5) -> float:
    """Two-convolution form of the patchwise detection loss.

    ``l1 = boxsum(x * y)``, ``l2 = boxsum(exp(x)) + 1``, loss is
    ``-mean(l1 - log(l2))``.  The exp() here is literal, so logits above
    ``FAST_EXP_LIMIT`` raise :class:`NumericOverflowError` instead of
    silently producing inf; use the naive form for extreme inputs.
    """
    x, y = _check_patch_args(logits, target, k)
    if np.any(x > FAST_EXP_LIMIT):
        raise NumericOverflowError(
            f"logit above {FAST_EXP_LIMIT} would overflow the literal exp()"
        )
    l1 = _box_sum_valid(x * y, k)
    l2 = _box_sum_valid(np.exp(x), k) + 1.0
    return float(-(l1 - np.log(l2)).mean())


def unfold_softmax_grad(logits, target, k: int = 5):
    """Analytic gradient of the mean patchwise loss w.r.t. the logits.

    d loss / d x_j = -(1/P) * sum over patches p containing j of
    (y_j - exp(x_j) / l2_p), with P the number of valid patches.  Computed
    with the same max-shift stabilization as the naive loss.
    """
    x, y = _check_patch_args(logits, target, k)
    h, w = x.shape
    ph, pw = h - k + 1, w - k + 1
    n_patches = ph * pw
    log_l2 = _patch_log_partition(x, k)
    win = sliding_window_view(x, (k, k))
    soft = np.exp(win - log_l2[:, :, None, None])  # per-patch softmax of each pixel
    scatter = np.zeros((h, w))
    count = np.zeros((h, w))
    for di in range(k):
        for dj in range(k):
            scatter[di:di + ph, dj:dj + pw] += soft[:, :, di, dj]
            count[di:di + ph, dj:dj + pw] += 1.0
    grad = -(y * count - scatter) / n_patches
    if isinstance(logits, Raster):
        return Raster(grad)
    return grad


def nms(kps: KeypointList, radius: float) -> KeypointList:
    """Greedy non-maximum suppression with a Chebyshev (square) window.

    Points are visited in score-descending order (ties keep input order); a
    point survives iff no already-kept point lies within ``radius`` in
    Chebyshev distance.  Output is sorted score-descending.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if len(kps) == 0:
        return KeypointList()
    order = np.argsort(-kps.score, kind="stable")
    pts = kps.points[order]
    kept = np.zeros(len(pts), dtype=bool)
    kept_xy = np.empty((len(pts), 2))
    n_kept = 0
    for i, (px, py, _) in enumerate(pts):
        if n_kept:
            d = np.max(np.abs(kept_xy[:n_kept] - (px, py)), axis=1)
            if np.any(d <= radius):
                continue
        kept[i] = True
        kept_xy[n_kept] = (px, py)
        n_kept += 1
    return KeypointList(pts[kept])


def merge_flip_cache(
    k1: KeypointList,
    k2_flipped: KeypointList,
    image_width: int,
    image_height: int,
    radius: float = 2.0,
) -> tuple[KeypointList, BinaryHeatmap]:
    """Merge detections from an image and its horizontal mirror into one cache.

    ``k2_flipped`` was detected on the mirrored image; its x coordinates are
    mapped back via ``x -> width-1-x``.  Both lists are concatenated with
    their scores, suppressed with :func:`nms`, and the survivors rasterized to
    a binary heatmap (nearest-integer cells; collisions keep the higher score,
    which is the earlier survivor).
    """

    def _check_bounds(kps: KeypointList, what: str):
        ok = (
            (kps.x >= 0) & (kps.x <= image_width - 1)
            & (kps.y >= 0) & (kps.y <= image_height - 1)
        )
        bad = np.flatnonzero(~ok)
        if bad.size:
            i = int(bad[0])
            raise OutOfBoundsError(
                i, f"{what} keypoint {i} at ({kps.x[i]}, {kps.y[i]}) "
                   f"outside {image_width}x{image_height}"
            )

    pts2 = k2_flipped.points.copy()
    if len(k2_flipped):
        pts2[:, 0] = (image_width - 1) - pts2[:, 0]
    k2 = KeypointList(pts2)
    _check_bounds(k1, "primary")
    _check_bounds(k2, "unflipped")

    merged = KeypointList(np.concatenate([k1.points, k2.points], axis=0))
    survivors = nms(merged, radius)
    heat = np.zeros((image_height, image_width), dtype=np.uint8)
    xi = np.floor(survivors.x + 0.5).astype(int)
    yi = np.floor(survivors.y + 0.5).astype(int)
    heat[yi, xi] = 1
    return survivors, BinaryHeatmap(heat)


def extract_keypoints(
    score_map,
    threshold: float = -5.0,
    nms_size: int = 2,
    top_k: int = 4096,
) -> KeypointList:
    """Inference-time keypoint extraction from a score map.

    Keeps pixels that are strict local maxima of their
    ``(2*nms_size+1)^2`` neighborhood and exceed ``threshold``, sorted by
    descending score (row-major order on ties) and truncated to ``top_k``.
    Plateaus produce no keypoints: a maximum must be strictly greater than
    every other value in its window.
    """
    if nms_size < 1:
        raise ValueError(f"nms_size must be >= 1, got {nms_size}")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    v = _grid(score_map)
    w = 2 * nms_size + 1
    padded = np.pad(v, nms_size, mode="constant", constant_values=-np.inf)
    win = sliding_window_view(padded, (w, w))
    wmax = win.max(axis=(2, 3))
    n_at_max = (win == wmax[:, :, None, None]).sum(axis=(2, 3))
    strict = (v == wmax) & (n_at_max == 1) & (v > threshold)
    ys, xs = np.nonzero(strict)
    scores = v[ys, xs]
    order = np.argsort(-scores, kind="stable")[:top_k]
    return KeypointList.from_arrays(xs[order], ys[order], scores[order])


def bilinear_sample(desc_map, kps: KeypointList, s: int, clamp: bool = False) -> DescriptorSet:
    """Sample a multi-channel description map at keypoint locations.

    ``desc_map`` is a list of C rasters at 1/s of full resolution; keypoints
    are given in full-resolution pixels and divided by ``s`` before bilinear
    interpolation under the cell-center convention (cell i sits at continuous
    coordinate i).  Sampled vectors are L2-normalized per row.

    Coordinates that scale outside the map raise :class:`OutOfBoundsError`
    unless ``clamp=True``, which clips them to the border.
    """
    if s not in (1, 2, 4):
        raise ValueError(f"downscale factor must be 1, 2 or 4, got {s}")
    channels = np.stack([_grid(c) for c in desc_map])
    _, h, w = channels.shape
    cx = kps.x / s
    cy = kps.y / s
    if clamp:
        cx = np.clip(cx, 0.0, w - 1.0)
        cy = np.clip(cy, 0.0, h - 1.0)
    else:
        bad = np.flatnonzero((cx < 0) | (cx > w - 1) | (cy < 0) | (cy > h - 1))
        if bad.size:
            i = int(bad[0])
            raise OutOfBoundsError(
                i, f"keypoint {i} scales to ({cx[i]}, {cy[i]}) outside {h}x{w} map"
            )
    x0 = np.floor(cx).astype(int)
    y0 = np.floor(cy).astype(int)
    fx = cx - x0
    fy = cy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    vals = (
        channels[:, y0, x0] * (1 - fy) * (1 - fx)
        + channels[:, y0, x1] * (1 - fy) * fx
        + channels[:, y1, x0] * fy * (1 - fx)
        + channels[:, y1, x1] * fy * fx
    )
    return l2_normalize_rows(vals.T)
