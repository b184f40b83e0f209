"""Privacy loss assembly and gradient verification utilities.

The protection loss is the perceptual distance between candidate and
original plus, for each optimization embedding, K times the Euclidean
distance between the candidate's embedding and the target's embedding.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .backends import EmbeddingBackend, PerceptualDistance
from .errors import ContractViolation, NumericError
from .types import ImageRecord, l2_distances


class LossParts(NamedTuple):
    total: float
    perceptual: float
    embedding: float


def _target_vectors(target: ImageRecord, embeddings: Sequence[EmbeddingBackend]):
    return [e.embed(target).vector for e in embeddings]


def privacy_loss(candidate: np.ndarray, original: np.ndarray, target: ImageRecord,
                 embeddings: Sequence[EmbeddingBackend],
                 perceptual: PerceptualDistance, K: float) -> LossParts:
    """Loss for one candidate image; returns (total, perceptual, embedding) terms."""
    parts, _ = _loss_impl(candidate, original, target, embeddings, perceptual, K,
                          want_grad=False)
    return parts


def privacy_loss_grad(candidate: np.ndarray, original: np.ndarray, target: ImageRecord,
                      embeddings: Sequence[EmbeddingBackend],
                      perceptual: PerceptualDistance,
                      K: float) -> tuple[LossParts, np.ndarray]:
    """Loss plus its gradient with respect to the candidate pixels."""
    parts, grad = _loss_impl(candidate, original, target, embeddings, perceptual, K,
                             want_grad=True)
    return parts, grad


def _loss_impl(candidate, original, target, embeddings, perceptual, K, want_grad):
    if K < 0:
        raise ContractViolation("K must be non-negative")
    candidate = np.asarray(candidate, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if candidate.shape != original.shape:
        raise ContractViolation(
            f"candidate shape {candidate.shape} != original shape {original.shape}"
        )

    perceptual_term = float(perceptual.distance(candidate, original))
    if not np.isfinite(perceptual_term):
        raise NumericError("non-finite perceptual distance", backend=perceptual.name)
    grad = perceptual.grad_first(candidate, original) if want_grad else None

    embedding_term = 0.0
    for backend in embeddings:
        emb = np.asarray(backend.embed_pixels(candidate), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(emb)):
            raise NumericError("non-finite embedding output", backend=backend.name)
        target_vec = backend.embed(target).vector
        dist = float(l2_distances(emb[None, :], target_vec)[0])
        embedding_term += dist
        if want_grad:
            # Subgradient 0 at exactly-zero distance.
            if dist > 0.0:
                cot = (emb - target_vec) / dist
                grad = grad + K * backend.embed_vjp(candidate, cot)

    total = perceptual_term + K * embedding_term
    if not np.isfinite(total):
        raise NumericError("non-finite total loss")
    parts = LossParts(total=total, perceptual=perceptual_term, embedding=embedding_term)
    return parts, (np.asarray(grad, dtype=np.float64) if want_grad else None)


def gradient_check(loss_fn: Callable[[np.ndarray], float],
                   grad_fn: Callable[[np.ndarray], np.ndarray],
                   point: np.ndarray, epsilon: float = 1e-4) -> float:
    """Max per-component error of ``grad_fn`` against central finite differences.

    Components where both gradients are below 1e-6 in magnitude are compared
    absolutely instead of relatively (relative error is meaningless near a
    stationary point). Reports, never raises, on large error.
    """
    if epsilon <= 0:
        raise ContractViolation("epsilon must be positive")
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_fn(point), dtype=np.float64).reshape(-1)
    flat = point.reshape(-1).copy()
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + epsilon
        hi = float(loss_fn(flat.reshape(point.shape)))
        flat[i] = saved - epsilon
        lo = float(loss_fn(flat.reshape(point.shape)))
        flat[i] = saved
        fd = (hi - lo) / (2.0 * epsilon)
        scale = max(abs(analytic[i]), abs(fd))
        err = abs(analytic[i] - fd)
        if scale > 1e-6:
            err = err / scale
        worst = max(worst, err)
    return worst
