"""Unit-norm descriptor sets: normalization, Gram/cosine structure, MNN matching.

Descriptors follow the usual local-feature convention: each one is a
fixed-length vector scaled to unit Euclidean norm, so the dot product of two
descriptors is their cosine similarity and ``D @ D.T`` is the full pairwise
cosine matrix of a set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, RowCountMismatchError, ZeroRowError

NORM_TOL = 1e-6
_ZERO_NORM = 1e-12


def _as_matrix(obj) -> np.ndarray:
    """Accept a DescriptorSet or anything array-like; return a 2-D float array."""
    if isinstance(obj, DescriptorSet):
        return obj.data
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


class DescriptorSet:
    """An immutable rows x dim matrix whose rows are unit vectors.

    The default constructor normalizes each row (raising :class:`ZeroRowError`
    for degenerate rows).  Use :meth:`validated` for data that is already
    supposed to be unit-norm, e.g. read back from a file: it raises instead of
    silently rescaling.
    """

    __slots__ = ("_data",)

    def __init__(self, data, normalize: bool = True):
        mat = np.array(_as_matrix(data), dtype=float)
        if mat.shape[0] < 1 or mat.shape[1] < 2:
            raise ValueError(f"need rows >= 1 and dim >= 2, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("descriptor data must be finite")
        norms = np.linalg.norm(mat, axis=1)
        if normalize:
            bad = np.flatnonzero(norms <= _ZERO_NORM)
            if bad.size:
                raise ZeroRowError(int(bad[0]))
            mat /= norms[:, None]
        else:
            off = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if off.size:
                i = int(off[0])
                raise ValueError(
                    f"row {i} has norm {norms[i]:.9f}, expected 1 within {NORM_TOL}"
                )
        mat.setflags(write=False)
        self._data = mat

    @classmethod
    def validated(cls, data) -> "DescriptorSet":
        """Strict constructor: rows must already be unit norm within 1e-6."""
        return cls(data, normalize=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def __len__(self) -> int:
        return self.rows

    def __repr__(self) -> str:
        return f"DescriptorSet(rows={self.rows}, dim={self.dim})"


@dataclass(frozen=True)
class MatchList:
    """Mutual-nearest-neighbor matches between two descriptor sets.

    ``pairs[k] = (i, j)`` means row i of A and row j of B picked each other as
    nearest neighbor; ``similarities[k]`` is their cosine.  The pairing is
    one-to-one by construction.
    """

    pairs: np.ndarray  # (n, 2) int
    similarities: np.ndarray  # (n,) float

    def __len__(self) -> int:
        return self.pairs.shape[0]


def l2_normalize_rows(matrix) -> DescriptorSet:
    """Scale every row of ``matrix`` to unit Euclidean norm.

    Raises
    ------
    ZeroRowError
        If any row has norm <= 1e-12.
    """
    return DescriptorSet(matrix, normalize=True)


def gram(dset) -> np.ndarray:
    """Pairwise dot-product matrix ``D @ D.T`` of a descriptor set.

    For unit rows this is the cosine similarity matrix: symmetric, unit
    diagonal, and positive semidefinite.  Plain (non-unit) matrices are
    accepted as well, e.g. compressed teacher targets.
    """
    mat = _as_matrix(dset)
    g = mat @ mat.T
    # enforce exact symmetry against BLAS rounding asymmetry
    return (g + g.T) / 2.0


def gram_gap(a, b) -> float:
    """Squared Frobenius distance between the Gram matrices of two sets.

    The two sets must have the same number of rows but may have different
    dims; that cross-dimensional comparison is the whole point of measuring
    structure preservation under compression.
    """
    ma, mb = _as_matrix(a), _as_matrix(b)
    if ma.shape[0] != mb.shape[0]:
        raise RowCountMismatchError(
            f"row counts differ: {ma.shape[0]} vs {mb.shape[0]}"
        )
    diff = gram(ma) - gram(mb)
    return float(np.sum(diff * diff))


def mnn_match(a, b) -> MatchList:
    """Mutual-nearest-neighbor matching by cosine similarity.

    A pair (i, j) is kept iff j is the most similar B-row for A-row i *and*
    i is the most similar A-row for B-row j.  Ties break toward the lowest
    index.  Inputs must share the descriptor dimension.
    """
    ma, mb = _as_matrix(a), _as_matrix(b)
    if ma.shape[1] != mb.shape[1]:
        raise DimMismatchError(f"dims differ: {ma.shape[1]} vs {mb.shape[1]}")
    sims = ma @ mb.T
    best_b = np.argmax(sims, axis=1)  # per A-row; argmax takes lowest index on ties
    best_a = np.argmax(sims, axis=0)  # per B-row
    i_idx = np.flatnonzero(best_a[best_b] == np.arange(ma.shape[0]))
    j_idx = best_b[i_idx]
    pairs = np.stack([i_idx, j_idx], axis=1).astype(np.intp)
    return MatchList(pairs=pairs, similarities=sims[i_idx, j_idx].astype(float))
