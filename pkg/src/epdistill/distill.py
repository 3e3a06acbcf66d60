"""Gram-preserving compression and orthogonal-alignment losses.

The distillation objective is to make a set of student descriptors reproduce
the pairwise cosine matrix of a (higher-dimensional) teacher set.  Because a
Gram matrix is invariant under any right-orthogonal factor, the teacher can be
compressed to the student dimension by truncated SVD with no Gram error
whenever the set has at most as many rows as the target dimension, and the
student only has to match the compressed target *up to an orthogonal map*.
That map has a closed-form optimum (the orthogonal Procrustes solution), which
is re-solved every optimization step and held constant under differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .descriptors import DescriptorSet, _as_matrix
from .errors import (
    BadDimensionError,
    NeedTwoViewsError,
    ShapeMismatchError,
    SvdFailureError,
)

ORTHO_TOL = 1e-6


class OrthogonalMap:
    """A d x d orthogonal matrix, validated on construction."""

    __slots__ = ("_data",)

    def __init__(self, data):
        mat = np.array(np.asarray(data, dtype=float))
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {mat.shape}")
        resid = mat @ mat.T - np.eye(mat.shape[0])
        if np.sqrt(np.sum(resid * resid)) > ORTHO_TOL:
            raise ValueError("matrix is not orthogonal within tolerance")
        mat.setflags(write=False)
        self._data = mat

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    def __repr__(self) -> str:
        return f"OrthogonalMap(dim={self.dim})"


def _as_map(omega) -> np.ndarray:
    return omega.data if isinstance(omega, OrthogonalMap) else np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class CompressedTeacher:
    """Teacher set compressed to the student dimension.

    ``data`` is the rows x c_desc target matrix; its rows are generally *not*
    unit norm (they are only when the compression is lossless).
    ``singular_values`` are the leading singular values of the teacher matrix,
    nonincreasing.
    """

    data: np.ndarray
    singular_values: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined training loss. All must be nonnegative."""

    w_op: float = 0.5
    w_sim: float = 0.1
    w_detect: float = 1.0

    def __post_init__(self):
        if self.w_op < 0 or self.w_sim < 0 or self.w_detect < 0:
            raise ValueError("loss weights must be nonnegative")


def _svd(matrix: np.ndarray):
    try:
        return np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise SvdFailureError(str(exc)) from exc


def _fix_signs(u: np.ndarray, vt: np.ndarray):
    """Flip singular-vector pairs so each u column's largest-|.| entry is positive.

    Removes the per-column sign ambiguity of the SVD so compressed targets are
    deterministic across runs and platforms.
    """
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[lead, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def lra_compress(teacher, c_desc: int) -> CompressedTeacher:
    """Compress a teacher set to ``c_desc`` columns by truncated SVD.

    The output rows are the teacher rows re-expressed in the basis of the
    leading left singular directions, scaled by the singular values:
    column i of the result is ``sigma_i * u_i``.  Its Gram matrix is the best
    rank-``c_desc`` approximation of the teacher Gram matrix, and is *equal*
    to it whenever ``teacher.rows <= c_desc`` (compression is then lossless).

    Parameters
    ----------
    teacher : DescriptorSet or (rows, dim) array
    c_desc : int
        Target dimension, ``2 <= c_desc <= teacher.dim``.
    """
    mat = _as_matrix(teacher)
    if not 2 <= c_desc <= mat.shape[1]:
        raise BadDimensionError(
            f"target dim must be in [2, {mat.shape[1]}], got {c_desc}"
        )
    u, s, vt = _svd(mat)
    u, _ = _fix_signs(u, vt)
    k = min(c_desc, s.shape[0])
    compressed = np.zeros((mat.shape[0], c_desc))
    compressed[:, :k] = u[:, :k] * s[:k]
    sigma = np.zeros(c_desc)
    sigma[:k] = s[:k]
    return CompressedTeacher(data=compressed, singular_values=sigma)


def pca_compress(teacher, c_desc: int) -> np.ndarray:
    """Mean-centered projection onto the top ``c_desc`` principal directions.

    The classical post-hoc compression alternative: subtract the mean row,
    then project onto the leading right singular vectors of the centered
    matrix.  Unlike :func:`lra_compress` this is not Gram-lossless (centering
    moves the vectors off the sphere), which is exactly the contrast the
    compression ablation probes.
    """
    mat = _as_matrix(teacher)
    if mat.shape[0] < 2:
        raise BadDimensionError("need at least 2 rows to center")
    if not 2 <= c_desc <= mat.shape[1]:
        raise BadDimensionError(
            f"target dim must be in [2, {mat.shape[1]}], got {c_desc}"
        )
    centered = mat - mat.mean(axis=0, keepdims=True)
    u, s, vt = _svd(centered)
    # fix signs on the *right* vectors here; they define the projection
    v = vt.T
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    v = v * signs
    k = min(c_desc, v.shape[1])
    out = np.zeros((mat.shape[0], c_desc))
    out[:, :k] = centered @ v[:, :k]
    return out


def procrustes_solve(target, student) -> OrthogonalMap:
    """Closed-form solution of the orthogonal Procrustes problem.

    Returns the orthogonal map Q minimizing ``||target @ Q - student||_F``
    over the full orthogonal group (rotations and reflections).  With
    ``M = student.T @ target = U S V^T``, the minimizer is ``Q = V @ U^T``.

    Parameters
    ----------
    target : (rows, d) array
        The matrix being aligned (e.g. a compressed teacher).
    student : DescriptorSet or (rows, d) array
        The matrix to align to.
    """
    t = _as_matrix(target)
    s = _as_matrix(student)
    if t.shape != s.shape:
        raise ShapeMismatchError(f"shapes differ: {t.shape} vs {s.shape}")
    u, _, vt = _svd(s.T @ t)
    return OrthogonalMap(vt.T @ u.T)


def op_loss(target, students) -> tuple[float, list[OrthogonalMap]]:
    """Mean squared alignment residual over views, each optimally rotated.

    For every student view the Procrustes map is solved in closed form and the
    squared Frobenius residual ``||target @ Q_i - student_i||_F^2`` recorded;
    the loss is the mean over the N views.  Returns the loss and the per-view
    maps so a training step can reuse them as frozen constants.
    """
    t = _as_matrix(target)
    views = [_as_matrix(s) for s in students]
    if not views:
        raise ValueError("need at least one student view")
    maps = []
    total = 0.0
    for v in views:
        q = procrustes_solve(t, v)
        resid = t @ q.data - v
        total += float(np.sum(resid * resid))
        maps.append(q)
    return total / len(views), maps


def op_loss_grad(target, student, omega, n_views: int) -> np.ndarray:
    """Gradient of one view's alignment term w.r.t. the student matrix.

    The orthogonal map is treated as a constant (it is re-solved each step,
    not differentiated through), so the term is an ordinary quadratic:
    d/dS of (1/N) ||T Q - S||_F^2 = (2/N) (S - T Q).
    """
    t = _as_matrix(target)
    s = _as_matrix(student)
    q = _as_map(omega)
    if t.shape != s.shape or q.shape != (t.shape[1], t.shape[1]):
        raise ShapeMismatchError(
            f"incompatible shapes: target {t.shape}, student {s.shape}, map {q.shape}"
        )
    return (2.0 / n_views) * (s - t @ q)


def sim_loss(students) -> float:
    """Pairwise view-consistency penalty.

    Sum of squared Frobenius distances over unordered view pairs i < j,
    divided by N(N-1).  Zero iff all views are identical.
    """
    views = [_as_matrix(s) for s in students]
    n = len(views)
    if n < 2:
        raise NeedTwoViewsError(f"need >= 2 views, got {n}")
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise ShapeMismatchError("all views must share one shape")
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            diff = views[i] - views[j]
            total += float(np.sum(diff * diff))
    return total / (n * (n - 1))


def sim_loss_grad(students) -> list[np.ndarray]:
    """Per-view gradients of :func:`sim_loss`.

    d/dS_i = (2 / (N(N-1))) * sum_{j != i} (S_i - S_j).  The gradients sum to
    zero across views (the loss only sees pairwise differences).
    """
    views = [_as_matrix(s) for s in students]
    n = len(views)
    if n < 2:
        raise NeedTwoViewsError(f"need >= 2 views, got {n}")
    stack = np.stack(views)
    mean = stack.mean(axis=0)
    scale = 2.0 / (n * (n - 1))
    return [scale * n * (v - mean) for v in views]


def total_loss(l_op: float, l_sim: float, l_detect: float, weights: LossWeights) -> float:
    """Weighted sum of the three loss components."""
    for name, v in (("l_op", l_op), ("l_sim", l_sim), ("l_detect", l_detect)):
        if not np.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    return weights.w_op * l_op + weights.w_sim * l_sim + weights.w_detect * l_detect
