"""Local objectives, their gradients, and the constraint-set projection.

Parameters are plain 1-D ``float64`` numpy arrays. Every node owns a
``LocalTask`` describing its data, its share ``fraction`` of the global
dataset and the constraint ``r(w) <= K`` its parameters must satisfy.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ContractViolation, EstimationError, InvalidTaskError

# Feasibility slack used so that projecting an already-projected point is
# the identity (bit-for-bit), despite rounding in the radial/threshold step.
_FEASIBILITY_RTOL = 1e-12


class LossKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    MLP = "mlp"


class RegularizerKind(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class Regularizer:
    """Constraint ``r(w) <= bound``.

    ``L1`` uses ``r(w) = ||w||_1``; ``L2`` uses the weight-decay form
    ``r(w) = 0.5 * ||w||_2^2``, i.e. a Euclidean ball of radius ``sqrt(2K)``.
    """

    kind: RegularizerKind = RegularizerKind.L2
    bound: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "kind", RegularizerKind(self.kind))
        if not self.bound > 0:
            raise InvalidTaskError(f"regularizer bound must be positive, got {self.bound}")

    def value(self, w: np.ndarray) -> float:
        if self.kind is RegularizerKind.L1:
            return float(np.abs(w).sum())
        return 0.5 * float(w @ w)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Gradient Lipschitz constant ``L1``, descent/gradient norm ratio
    bounds ``L2 <= L3`` and the dissimilarity bound ``delta``."""

    L1: float
    L2: float
    L3: float
    delta: float

    def __post_init__(self):
        if min(self.L1, self.L2, self.L3) <= 0 or self.delta < 0:
            raise ContractViolation(f"invalid constants {self}")
        if self.L2 > self.L3 * (1 + 1e-12):
            raise ContractViolation(f"L2={self.L2} exceeds L3={self.L3}")


@dataclass
class LocalTask:
    """One node's learning problem.

    For ``QUADRATIC`` the rows of ``features`` are the samples ``xi`` and
    ``f(x | xi) = curvature/2 * ||x - xi||^2``; ``labels`` is ignored.
    ``LOGISTIC`` expects labels in {0, 1}; ``MLP`` expects integer class
    labels in ``[0, classes)``.
    """

    features: np.ndarray
    labels: np.ndarray | None
    fraction: float
    loss_kind: LossKind = LossKind.QUADRATIC
    regularizer: Regularizer = field(default_factory=Regularizer)
    curvature: float = 1.0
    hidden: int = 32
    classes: int = 2

    def __post_init__(self):
        self.loss_kind = LossKind(self.loss_kind)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] == 0 or self.features.size == 0:
            raise InvalidTaskError("task has an empty dataset")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.features.shape[0]:
                raise InvalidTaskError("labels and features disagree on sample count")
        if not 0 < self.fraction <= 1:
            raise InvalidTaskError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.loss_kind is not LossKind.QUADRATIC and self.labels is None:
            raise InvalidTaskError(f"{self.loss_kind.value} loss needs labels")
        if self.curvature <= 0:
            raise InvalidTaskError("curvature must be positive")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        """Model dimension implied by the loss kind."""
        if self.loss_kind is LossKind.MLP:
            return mlp_dim(self.n_features, self.hidden, self.classes)
        return self.n_features

    @cached_property
    def _sample_mean(self) -> np.ndarray:
        return self.features.mean(axis=0)

    @cached_property
    def _sample_spread(self) -> float:
        return float(((self.features - self._sample_mean) ** 2).sum(axis=1).mean())

    @cached_property
    def _signed_labels(self) -> np.ndarray:
        return np.where(self.labels > 0, 1.0, -1.0)


def check_vector(point: np.ndarray, dim: int | None = None) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if point.ndim != 1:
        raise ContractViolation(f"expected a 1-D parameter vector, got shape {point.shape}")
    if dim is not None and point.shape[0] != dim:
        raise ContractViolation(f"dimension mismatch: expected {dim}, got {point.shape[0]}")
    if not np.all(np.isfinite(point)):
        raise ContractViolation("parameter vector contains non-finite entries")
    return point


def validate_fractions(tasks: Sequence[LocalTask], atol: float = 1e-12) -> None:
    total = sum(t.fraction for t in tasks)
    if abs(total - 1.0) > atol:
        raise InvalidTaskError(f"dataset fractions sum to {total!r}, expected 1")


# --------------------------------------------------------------------------
# tiny MLP: tanh hidden layer, softmax output

def mlp_dim(n_in: int, hidden: int, classes: int) -> int:
    return hidden * n_in + hidden + classes * hidden + classes


def _mlp_unpack(point: np.ndarray, n_in: int, hidden: int, classes: int):
    a = hidden * n_in
    b = a + hidden
    c = b + classes * hidden
    return (
        point[:a].reshape(hidden, n_in),
        point[a:b],
        point[b:c].reshape(classes, hidden),
        point[c:],
    )


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _mlp_forward(task: LocalTask, point: np.ndarray):
    W1, b1, W2, b2 = _mlp_unpack(point, task.n_features, task.hidden, task.classes)
    h = np.tanh(task.features @ W1.T + b1)
    logits = h @ W2.T + b2
    return W1, W2, h, logits


def _mlp_loss_grad(task: LocalTask, point: np.ndarray, need_grad: bool):
    W1, W2, h, logits = _mlp_forward(task, point)
    logp = _log_softmax(logits)
    y = task.labels.astype(int)
    n = task.n_samples
    loss = -float(logp[np.arange(n), y].mean())
    if not need_grad:
        return loss, None
    delta_out = np.exp(logp)
    delta_out[np.arange(n), y] -= 1.0
    delta_out /= n
    gW2 = delta_out.T @ h
    gb2 = delta_out.sum(axis=0)
    delta_h = (delta_out @ W2) * (1.0 - h * h)
    gW1 = delta_h.T @ task.features
    gb1 = delta_h.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


# --------------------------------------------------------------------------
# losses and gradients

def local_loss(task: LocalTask, point: np.ndarray) -> float:
    """Average per-sample loss ``F_i(point)``; always non-negative."""
    point = check_vector(point, task.dim)
    kind = task.loss_kind
    if kind is LossKind.QUADRATIC:
        diff = point - task._sample_mean
        return 0.5 * task.curvature * (float(diff @ diff) + task._sample_spread)
    if kind is LossKind.LOGISTIC:
        margins = task._signed_labels * (task.features @ point)
        return float(np.logaddexp(0.0, -margins).mean())
    return _mlp_loss_grad(task, point, need_grad=False)[0]


def full_gradient(task: LocalTask, point: np.ndarray) -> np.ndarray:
    """Gradient of ``F_i`` with respect to the aggregated point."""
    point = check_vector(point, task.dim)
    kind = task.loss_kind
    if kind is LossKind.QUADRATIC:
        return task.curvature * (point - task._sample_mean)
    if kind is LossKind.LOGISTIC:
        y = task._signed_labels
        margins = y * (task.features @ point)
        # d/dm log(1 + e^{-m}) = -sigmoid(-m)
        weights = -y * _sigmoid(-margins)
        return task.features.T @ weights / task.n_samples
    return _mlp_loss_grad(task, point, need_grad=True)[1]


def local_gradient(task: LocalTask, point: np.ndarray) -> np.ndarray:
    """Gradient with respect to the node's own block: ``fraction * grad F_i``.

    The node's parameter enters the aggregated point with weight
    ``fraction``, hence the chain-rule factor.
    """
    return task.fraction * full_gradient(task, point)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict(task: LocalTask, point: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class predictions of the model at ``point`` (classification tasks only)."""
    if task.loss_kind is LossKind.LOGISTIC:
        return (features @ point > 0).astype(int)
    if task.loss_kind is LossKind.MLP:
        W1, b1, W2, b2 = _mlp_unpack(point, task.n_features, task.hidden, task.classes)
        return np.argmax(np.tanh(features @ W1.T + b1) @ W2.T + b2, axis=1)
    raise ContractViolation("quadratic tasks have no notion of accuracy")


# --------------------------------------------------------------------------
# projection onto {y : r(y) <= K}

def project_l1_ball(candidate: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{y : ||y||_1 <= radius}`` (sort-threshold)."""
    if np.abs(candidate).sum() <= radius * (1 + _FEASIBILITY_RTOL):
        return candidate
    u = np.sort(np.abs(candidate))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(candidate) * np.maximum(np.abs(candidate) - theta, 0.0)


def project_l2_ball(candidate: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(candidate))
    if norm <= radius * (1 + _FEASIBILITY_RTOL):
        return candidate
    return candidate * (radius / norm)


def project(regularizer: Regularizer, candidate: np.ndarray) -> np.ndarray:
    """Closest point to ``candidate`` satisfying ``r(y) <= K``."""
    candidate = np.asarray(candidate, dtype=float)
    if regularizer.kind is RegularizerKind.L1:
        return project_l1_ball(candidate, regularizer.bound)
    return project_l2_ball(candidate, np.sqrt(2.0 * regularizer.bound))


def descent_direction(task: LocalTask, w: np.ndarray, v: np.ndarray, eta: float,
                      *, check_sign: bool = __debug__) -> np.ndarray:
    """Projected-gradient step direction ``([w - eta*grad]^+ - w) / eta``.

    The gradient is the node-block gradient evaluated at the aggregated
    point ``v``.
    """
    if not eta > 0:
        raise ContractViolation(f"learning rate must be positive, got {eta}")
    grad = local_gradient(task, v)
    s = (project(task.regularizer, w - eta * grad) - w) / eta
    if check_sign:
        inner = float(s @ grad)
        if inner > 1e-12 * max(1.0, float(grad @ grad)):
            raise AssertionError(f"descent direction is ascending: s.grad = {inner}")
    return s


# --------------------------------------------------------------------------
# Assumption constants

def smoothness_bound(tasks: Sequence[LocalTask]) -> float:
    """Upper bound on the Lipschitz constant of the gradient of ``sum_i a_i F_i``.

    Exact for quadratic tasks (the fraction-weighted curvature). For the
    logistic loss the Hessian is at most ``X^T X / (4 n)`` per node, so the
    bound is a quarter of the largest eigenvalue of the weighted second
    moment of the features. The MLP loss has no such bound.
    """
    kinds = {t.loss_kind for t in tasks}
    if kinds == {LossKind.QUADRATIC}:
        return float(sum(t.fraction * t.curvature for t in tasks))
    if kinds == {LossKind.LOGISTIC}:
        moment = sum(t.fraction * (t.features.T @ t.features) / t.n_samples for t in tasks)
        return 0.25 * float(np.linalg.eigvalsh(moment)[-1])
    raise EstimationError(f"no closed-form smoothness bound for {sorted(k.value for k in kinds)}")


def estimate_constants(tasks: Sequence[LocalTask], probe_points: np.ndarray,
                       eta: float = 0.01) -> SmoothnessConstants:
    """Empirical smoothness constants over a set of probe points.

    ``L1`` is exact for quadratic tasks (the curvature). Otherwise it is the
    largest observed gradient difference quotient over probe pairs. ``L2``
    and ``L3`` are the smallest and largest observed ``||s_i|| / ||grad_i||``
    ratios with ``w_i = v_i = probe``, and ``delta`` the largest observed
    ``||s_i - s_j|| / min(||s_i||, ||s_j||)``.
    """
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if probes.shape[0] < 2:
        raise EstimationError("need at least two probe points")

    lipschitz = []
    for task in tasks:
        if task.loss_kind is LossKind.QUADRATIC:
            lipschitz.append(task.curvature)
            continue
        grads = [full_gradient(task, p) for p in probes]
        best = None
        for a, b in itertools.combinations(range(len(probes)), 2):
            dist = np.linalg.norm(probes[a] - probes[b])
            if dist == 0:
                continue
            q = np.linalg.norm(grads[a] - grads[b]) / dist
            best = q if best is None else max(best, q)
        if best is None:
            raise EstimationError("all probe pairs are coincident")
        lipschitz.append(best)

    ratios, deltas = [], [0.0]
    for p in probes:
        directions = []
        for task in tasks:
            g = local_gradient(task, p)
            s = descent_direction(task, p, p, eta, check_sign=False)
            gn = np.linalg.norm(g)
            if gn > 0:
                ratios.append(np.linalg.norm(s) / gn)
            directions.append(s)
        for si, sj in itertools.combinations(directions, 2):
            m = min(np.linalg.norm(si), np.linalg.norm(sj))
            if m > 0:
                deltas.append(np.linalg.norm(si - sj) / m)
    if not ratios:
        raise EstimationError("every probe point is stationary for every task")
    return SmoothnessConstants(L1=float(max(lipschitz)), L2=float(min(ratios)),
                               L3=float(max(ratios)), delta=float(max(deltas)))
