"""Toy gradient-descent harness for cross-dimensional descriptor distillation.

A linear student (one weight matrix followed by row normalization) is trained
to reproduce the cosine structure of a small synthetic teacher set at a lower
dimension.  The teacher mini-set is drawn once per run and its noisy views are
regenerated every step; compression (truncated-SVD or PCA), per-view
orthogonal alignment and the combined loss all run through the library ops,
so this doubles as an end-to-end exercise of the distillation math.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .descriptors import DescriptorSet, _as_matrix, gram_gap, l2_normalize_rows
from .distill import (
    LossWeights,
    lra_compress,
    op_loss,
    op_loss_grad,
    pca_compress,
    sim_loss,
    sim_loss_grad,
    total_loss,
)
from .errors import BadDimensionError, DivergenceError, ZeroRowError

DIVERGENCE_FACTOR = 1e3


class _DiscardType:
    """Sentinel for mini-sets rejected by the covisibility gate."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DISCARD"

    def __bool__(self):
        return False


DISCARD = _DiscardType()


@dataclass
class ToyStudent:
    """Linear description head: project with ``weights`` then L2-normalize rows."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        self.weights = w


@dataclass
class DistillConfig:
    c_desc: int = 32
    n_views: int = 4
    noise_sigma: float = 0.05
    steps: int = 2000
    learning_rate: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    compression: str = "lra"  # "lra" or "pca"
    use_sim_loss: bool = True
    seed: int = 0
    teacher_dim: int = 128
    # resample a new teacher mini-set every step instead of keeping one per
    # run; per-step resampling makes the objective stochastic, so the default
    # keeps it fixed and lets the descent converge
    resample_teacher: bool = False

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("need at least one view")
        if self.steps < 1:
            raise ValueError("need at least one step")
        if not 2 <= self.c_desc <= self.teacher_dim:
            raise BadDimensionError(
                f"c_desc must be in [2, {self.teacher_dim}], got {self.c_desc}"
            )
        if self.compression not in ("lra", "pca"):
            raise ValueError(f"compression must be 'lra' or 'pca', got {self.compression!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    l_op: float
    l_sim: float
    total: float
    gram_gap: float
    mean_view_cosine: float


CSV_HEADER = "step,l_op,l_sim,total,gram_gap,mean_view_cosine"


@dataclass
class TrainReport:
    records: list[StepRecord]
    weights: np.ndarray

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    def to_csv(self, fileobj=None) -> str:
        """Render the per-step records as CSV; optionally also write them out."""
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.records:
            buf.write(
                f"{r.step},{r.l_op:.17g},{r.l_sim:.17g},{r.total:.17g},"
                f"{r.gram_gap:.17g},{r.mean_view_cosine:.17g}\n"
            )
        text = buf.getvalue()
        if fileobj is not None:
            fileobj.write(text)
        return text


def gen_teacher_batch(c_desc: int, dim: int, seed: int) -> DescriptorSet:
    """Synthetic teacher mini-set: ``c_desc`` rows uniform on the unit sphere."""
    if c_desc < 2 or dim < c_desc:
        raise BadDimensionError(
            f"need 2 <= c_desc <= dim, got c_desc={c_desc}, dim={dim}"
        )
    rng = np.random.default_rng(seed)
    return l2_normalize_rows(rng.standard_normal((c_desc, dim)))


def select_top_covisible(cached: DescriptorSet, covisible_count: int, c_desc: int):
    """Keep the top ``c_desc`` score-ordered descriptors, or discard the set.

    A mini-set only trains if at least ``c_desc`` of its cached descriptors
    are covisible in every view; otherwise the sentinel :data:`DISCARD` is
    returned (a value, not an error).
    """
    if covisible_count < c_desc:
        return DISCARD
    if cached.rows < c_desc:
        raise BadDimensionError(
            f"cache has {cached.rows} rows, cannot select top {c_desc}"
        )
    return DescriptorSet.validated(cached.data[:c_desc])


def gen_views(teacher_inputs, n_views: int, sigma: float, seed: int) -> list[np.ndarray]:
    """Simulated augmented views of the student inputs.

    View 0 is the pristine input; each further view adds an independent
    random perturbation of L2 norm ``sigma`` per row and re-normalizes, so
    the expected cosine to the pristine row is about 1/sqrt(1 + sigma^2).
    Deterministic per seed.
    """
    base = _as_matrix(teacher_inputs)
    views = [base.copy()]
    rng = np.random.default_rng(seed)
    for _ in range(n_views - 1):
        noise = rng.standard_normal(base.shape)
        noise /= np.linalg.norm(noise, axis=1, keepdims=True)
        views.append(l2_normalize_rows(base + sigma * noise).data.copy())
    return views


def student_forward(student: ToyStudent, inputs) -> DescriptorSet:
    """Project inputs through the student weights and L2-normalize rows."""
    return l2_normalize_rows(_as_matrix(inputs) @ student.weights)


def student_backward(student: ToyStudent, inputs_list, upstream_grads) -> np.ndarray:
    """Accumulate the weight gradient across views.

    For each view with pre-normalization output v = X W and y = v/||v||, the
    row-normalization Jacobian maps an upstream gradient g to
    (g - (g.y) y)/||v||; the linear layer then contributes X^T times that.
    """
    w = student.weights
    grad = np.zeros_like(w)
    for inputs, upstream in zip(inputs_list, upstream_grads):
        x = _as_matrix(inputs)
        g = np.asarray(upstream, dtype=float)
        v = x @ w
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = np.flatnonzero(norms.ravel() <= 1e-12)
        if bad.size:
            raise ZeroRowError(int(bad[0]))
        y = v / norms
        g_pre = (g - (g * y).sum(axis=1, keepdims=True) * y) / norms
        grad += x.T @ g_pre
    return grad


def _compress(teacher: DescriptorSet, config: DistillConfig) -> np.ndarray:
    if config.compression == "lra":
        return lra_compress(teacher, config.c_desc).data
    return pca_compress(teacher, config.c_desc)


def train(config: DistillConfig, teacher=None, initial_weights=None) -> TrainReport:
    """Run the toy distillation loop and record per-step metrics.

    Each step: build the (fixed or resampled) teacher mini-set, draw noisy
    views, compress the teacher to the student dimension, solve the per-view
    orthogonal maps, and take one plain gradient-descent step on the student
    weights with the maps held frozen.  Fully deterministic per config.

    ``teacher`` optionally overrides the synthetic mini-set with a caller-
    provided descriptor matrix (rows x teacher_dim); it is then kept fixed
    for the whole run.  ``initial_weights`` warm-starts the student instead
    of the seeded random init.
    """
    master = np.random.default_rng(config.seed)
    if teacher is not None:
        teacher_mat = _as_matrix(teacher)
        dim_in = teacher_mat.shape[1]
        fixed_teacher = DescriptorSet.validated(teacher_mat)
    else:
        dim_in = config.teacher_dim
        fixed_teacher = None
    weights = master.standard_normal((dim_in, config.c_desc)) / np.sqrt(dim_in)
    if initial_weights is not None:
        weights = np.array(_as_matrix(initial_weights))
        if weights.shape != (dim_in, config.c_desc):
            raise BadDimensionError(
                f"initial weights must be {(dim_in, config.c_desc)}, got {weights.shape}"
            )
    step_seeds = master.integers(0, 2**31 - 1, size=(config.steps, 2))

    student = ToyStudent(weights)
    records: list[StepRecord] = []
    initial_total = None
    current_teacher = fixed_teacher

    for step in range(config.steps):
        if fixed_teacher is None and (config.resample_teacher or step == 0):
            current_teacher = gen_teacher_batch(
                config.c_desc, config.teacher_dim, int(step_seeds[step, 0])
            )
        target = _compress(current_teacher, config)
        views = gen_views(
            current_teacher, config.n_views, config.noise_sigma,
            int(step_seeds[step, 1]),
        )
        students = [student_forward(student, v) for v in views]

        l_op, omegas = op_loss(target, students)
        if config.use_sim_loss and config.n_views >= 2:
            l_sim = sim_loss(students)
        else:
            l_sim = 0.0
        tot = total_loss(l_op, l_sim, 0.0, config.weights)
        gap = gram_gap(students[0], current_teacher)
        if config.n_views >= 2:
            cosines = [
                float(np.mean((students[0].data * students[k].data).sum(axis=1)))
                for k in range(1, config.n_views)
            ]
            mvc = float(np.mean(cosines))
        else:
            mvc = 1.0
        records.append(StepRecord(step, l_op, l_sim, tot, gap, mvc))

        if initial_total is None:
            initial_total = tot
        elif tot > DIVERGENCE_FACTOR * max(initial_total, 1e-12):
            raise DivergenceError(
                f"total loss {tot:.3e} exceeded {DIVERGENCE_FACTOR:g} x initial "
                f"{initial_total:.3e} at step {step}"
            )

        upstreams = []
        sim_grads = (
            sim_loss_grad(students)
            if (config.use_sim_loss and config.n_views >= 2)
            else None
        )
        for i in range(config.n_views):
            g = config.weights.w_op * op_loss_grad(
                target, students[i], omegas[i], config.n_views
            )
            if sim_grads is not None:
                g = g + config.weights.w_sim * sim_grads[i]
            upstreams.append(g)
        grad_w = student_backward(student, views, upstreams)
        student = ToyStudent(student.weights - config.learning_rate * grad_w)

    return TrainReport(records=records, weights=student.weights)
