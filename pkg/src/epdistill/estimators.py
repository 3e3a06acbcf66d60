"""Scikit-learn style wrappers so the core algorithms compose with pipelines.

Three estimators cover the fit/transform-shaped parts of the library:
dimension reduction of descriptor sets (:class:`DescriptorCompressor`),
orthogonal alignment between two embeddings (:class:`ProcrustesAligner`) and
the toy distillation trainer (:class:`ToyDescriptorDistiller`).  Losses,
detection utilities and the CLI stay plain functions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .distill import LossWeights, _fix_signs, _svd, procrustes_solve
from .errors import BadDimensionError, ShapeMismatchError
from .harness import DistillConfig, ToyStudent, student_forward, train


class DescriptorCompressor(BaseEstimator, TransformerMixin):
    """Project descriptor sets to a lower dimension, Gram-preserving or PCA.

    With ``method="lra"`` the projection basis is the set of leading right
    singular vectors of the fitted matrix, so ``fit_transform(X)`` equals the
    truncated-SVD compression of X and reproduces its Gram matrix exactly
    whenever ``X.shape[0] <= n_components``.  With ``method="pca"`` the data
    is mean-centered first, matching the classical post-hoc compressor.

    Parameters
    ----------
    n_components : int, default=32
        Output dimension.
    method : {"lra", "pca"}, default="lra"

    Attributes
    ----------
    components_ : ndarray of shape (n_features, n_components)
        Projection basis (columns).
    singular_values_ : ndarray of shape (n_components,)
        Leading singular values of the fitted (centered, for PCA) matrix.
    mean_ : ndarray of shape (n_features,)
        Per-feature mean subtracted before projecting; zeros for "lra".
    """

    def __init__(self, n_components: int = 32, method: str = "lra"):
        self.n_components = n_components
        self.method = method

    def fit(self, X, y=None):
        if self.method not in ("lra", "pca"):
            raise ValueError(f"method must be 'lra' or 'pca', got {self.method!r}")
        X = check_array(X, dtype=float)
        if not 2 <= self.n_components <= X.shape[1]:
            raise BadDimensionError(
                f"n_components must be in [2, {X.shape[1]}], got {self.n_components}"
            )
        if self.method == "pca":
            if X.shape[0] < 2:
                raise BadDimensionError("need at least 2 rows to center")
            self.mean_ = X.mean(axis=0)
        else:
            self.mean_ = np.zeros(X.shape[1])
        centered = X - self.mean_
        u, s, vt = _svd(centered)
        if self.method == "lra":
            u, vt = _fix_signs(u, vt)
        else:
            # sign convention follows the right singular vectors for PCA
            v = vt.T
            lead = np.argmax(np.abs(v), axis=0)
            signs = np.sign(v[lead, np.arange(v.shape[1])])
            signs[signs == 0] = 1.0
            vt = (v * signs).T
        k = min(self.n_components, vt.shape[0])
        components = np.zeros((X.shape[1], self.n_components))
        components[:, :k] = vt[:k].T
        self.components_ = components
        sigma = np.zeros(self.n_components)
        sigma[:k] = s[:k]
        self.singular_values_ = sigma
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.components_.shape[0]:
            raise ShapeMismatchError(
                f"X has {X.shape[1]} features, expected {self.components_.shape[0]}"
            )
        return (X - self.mean_) @ self.components_


class ProcrustesAligner(BaseEstimator, TransformerMixin):
    """Learn the orthogonal map that best carries X onto Y.

    ``fit(X, Y)`` solves the orthogonal Procrustes problem
    ``min_Q ||X Q - Y||_F`` in closed form; ``transform`` applies the map.

    Attributes
    ----------
    rotation_ : ndarray of shape (d, d)
        The solved orthogonal map.
    residual_ : float
        Squared Frobenius alignment error on the fitted pair.
    """

    def fit(self, X, Y):
        X = check_array(X, dtype=float)
        Y = check_array(Y, dtype=float)
        if X.shape != Y.shape:
            raise ShapeMismatchError(f"shapes differ: {X.shape} vs {Y.shape}")
        omega = procrustes_solve(X, Y)
        self.rotation_ = omega.data
        diff = X @ self.rotation_ - Y
        self.residual_ = float(np.sum(diff * diff))
        return self

    def transform(self, X):
        check_is_fitted(self, "rotation_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.rotation_.shape[0]:
            raise ShapeMismatchError(
                f"X has {X.shape[1]} features, expected {self.rotation_.shape[0]}"
            )
        return X @ self.rotation_


class ToyDescriptorDistiller(BaseEstimator, TransformerMixin):
    """Train the linear toy student and use it as a transformer.

    ``fit(X)`` runs the gradient-descent distillation loop against the given
    teacher descriptor matrix (rows must be unit-norm); with ``X=None`` a
    synthetic teacher mini-set is drawn from ``seed``.  ``transform(X)`` maps
    inputs through the learned weights and row-normalizes, producing
    ``n_components``-dimensional unit descriptors.

    Attributes
    ----------
    weights_ : ndarray of shape (teacher_dim, n_components)
    report_ : TrainReport
        Per-step loss and structure metrics of the fit.
    """

    def __init__(
        self,
        n_components: int = 32,
        n_views: int = 4,
        noise_sigma: float = 0.05,
        steps: int = 200,
        learning_rate: float = 0.05,
        w_op: float = 0.5,
        w_sim: float = 0.1,
        compression: str = "lra",
        use_sim_loss: bool = True,
        seed: int = 0,
        teacher_dim: int = 128,
        resample_teacher: bool = False,
    ):
        self.n_components = n_components
        self.n_views = n_views
        self.noise_sigma = noise_sigma
        self.steps = steps
        self.learning_rate = learning_rate
        self.w_op = w_op
        self.w_sim = w_sim
        self.compression = compression
        self.use_sim_loss = use_sim_loss
        self.seed = seed
        self.teacher_dim = teacher_dim
        self.resample_teacher = resample_teacher

    def _config(self, teacher_dim: int) -> DistillConfig:
        return DistillConfig(
            c_desc=self.n_components,
            n_views=self.n_views,
            noise_sigma=self.noise_sigma,
            steps=self.steps,
            learning_rate=self.learning_rate,
            weights=LossWeights(w_op=self.w_op, w_sim=self.w_sim, w_detect=1.0),
            compression=self.compression,
            use_sim_loss=self.use_sim_loss,
            seed=self.seed,
            teacher_dim=teacher_dim,
            resample_teacher=self.resample_teacher,
        )

    def fit(self, X=None, y=None):
        if X is None:
            report = train(self._config(self.teacher_dim))
        else:
            X = check_array(X, dtype=float)
            report = train(self._config(X.shape[1]), teacher=X)
        self.weights_ = report.weights
        self.report_ = report
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.weights_.shape[0]:
            raise ShapeMismatchError(
                f"X has {X.shape[1]} features, expected {self.weights_.shape[0]}"
            )
        return student_forward(ToyStudent(self.weights_), X).data
