"""Pluggable differentiable backends: embeddings, generators, perceptual distances.

Backends are deterministic (identical inputs give bitwise-identical outputs)
and stateless after construction. Gradient-capable backends expose
vector-Jacobian products so optimizers can backpropagate through them
without an autodiff framework; real network-backed implementations plug in
through the same interfaces.
"""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import ContractViolation, NumericError
from .types import EmbeddingVector, ImageRecord


class EmbeddingBackend(ABC):
    """Maps an image to a fixed-dimension vector.

    Subclasses set ``name``, ``dim`` and ``supports_gradient`` and implement
    ``embed_pixels``; gradient-capable ones also implement ``embed_vjp``.
    """

    name: str
    dim: int
    supports_gradient: bool = False

    @abstractmethod
    def embed_pixels(self, pixels: np.ndarray) -> np.ndarray:
        """Raw forward pass on an H x W x C pixel array."""

    def embed(self, image: ImageRecord) -> EmbeddingVector:
        vec = np.asarray(self.embed_pixels(image.pixels), dtype=np.float64).reshape(-1)
        if vec.size != self.dim:
            raise ContractViolation(
                f"backend {self.name!r} declared dim {self.dim} but produced {vec.size}"
            )
        if not np.all(np.isfinite(vec)):
            raise NumericError(f"non-finite embedding for image {image.id!r}", backend=self.name)
        return EmbeddingVector(backend_name=self.name, vector=vec, image_id=image.id)

    def embed_vjp(self, pixels: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Pull a cotangent on the embedding back to pixel space."""
        raise NotImplementedError(f"backend {self.name!r} does not support gradients")


class GeneratorBackend(ABC):
    """Maps a latent vector to an image whose pixels lie in [0, 1]."""

    name: str
    latent_dim: int

    @abstractmethod
    def generate(self, z: np.ndarray) -> np.ndarray:
        """Forward pass; output must satisfy the pixel-range invariants."""

    @abstractmethod
    def sample_latent(self, seed: int) -> np.ndarray:
        """Seeded random latent initializer."""

    def generate_vjp(self, z: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Pull a cotangent on the generated image back to latent space."""
        raise NotImplementedError(f"generator {self.name!r} does not support gradients")


class PerceptualDistance(ABC):
    """Differentiable scalar distance between two same-shape images."""

    name: str

    @abstractmethod
    def distance(self, a: np.ndarray, b: np.ndarray) -> float: ...

    def grad_first(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gradient of ``distance(a, b)`` with respect to ``a``."""
        raise NotImplementedError(f"perceptual distance {self.name!r} does not support gradients")


def _flat(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64).reshape(-1)


class RandomProjectionEmbedding(EmbeddingBackend):
    """Flattens pixels and applies a fixed seeded random projection.

    The projection matrix is drawn once at construction, so the backend is
    deterministic afterwards. Pass ``matrix`` to pin an explicit projection.
    """

    supports_gradient = True

    def __init__(self, name="toy-projection", image_shape=(8, 8, 3), dim=16,
                 seed=0, matrix=None):
        n = int(np.prod(image_shape))
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=np.float64)
            if matrix.shape[1] != n:
                raise ContractViolation(
                    f"projection matrix columns {matrix.shape[1]} != pixel count {n}"
                )
            dim = matrix.shape[0]
        else:
            rng = np.random.default_rng(seed)
            matrix = rng.standard_normal((dim, n)) / np.sqrt(n)
        self.name = name
        self.image_shape = tuple(int(s) for s in image_shape)
        self.dim = int(dim)
        self.matrix = _frozen_matrix(matrix)

    def embed_pixels(self, pixels):
        return self.matrix @ _flat(pixels)

    def embed_vjp(self, pixels, cotangent):
        cot = np.asarray(cotangent, dtype=np.float64).reshape(-1)
        return (self.matrix.T @ cot).reshape(np.asarray(pixels).shape)


class IdentityEmbedding(EmbeddingBackend):
    """Embedding that returns the flattened pixels unchanged."""

    supports_gradient = True

    def __init__(self, image_shape, name="toy-identity"):
        self.name = name
        self.image_shape = tuple(int(s) for s in image_shape)
        self.dim = int(np.prod(image_shape))

    def embed_pixels(self, pixels):
        return _flat(pixels)

    def embed_vjp(self, pixels, cotangent):
        return np.asarray(cotangent, dtype=np.float64).reshape(np.asarray(pixels).shape)


class LinearGenerator(GeneratorBackend):
    """Toy generator ``G(z) = clip(A z + b, 0, 1)`` reshaped to an image.

    ``sample_latent`` draws uniformly from [0, 1] so that, for the identity
    map, initial outputs start inside the clip region rather than saturated.
    """

    def __init__(self, image_shape, matrix=None, offset=None, seed=0,
                 latent_dim=None, name="toy-linear"):
        self.name = name
        self.image_shape = tuple(int(s) for s in image_shape)
        n = int(np.prod(image_shape))
        if matrix is None:
            if latent_dim is None or latent_dim == n:
                matrix = np.eye(n)
            else:
                rng = np.random.default_rng(seed)
                matrix = rng.standard_normal((n, latent_dim)) / np.sqrt(latent_dim)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[0] != n:
            raise ContractViolation(f"matrix rows {matrix.shape[0]} != pixel count {n}")
        self.matrix = _frozen_matrix(matrix)
        self.latent_dim = int(matrix.shape[1])
        if offset is None:
            offset = np.zeros(n)
        self.offset = _frozen_matrix(np.asarray(offset, dtype=np.float64).reshape(-1))

    @classmethod
    def identity(cls, image_shape, name="toy-linear-identity"):
        """Generator whose latent is the image itself (modulo clipping)."""
        return cls(image_shape, matrix=np.eye(int(np.prod(image_shape))), name=name)

    def _raw(self, z):
        return self.matrix @ np.asarray(z, dtype=np.float64).reshape(-1) + self.offset

    def generate(self, z):
        return np.clip(self._raw(z), 0.0, 1.0).reshape(self.image_shape)

    def sample_latent(self, seed):
        return np.random.default_rng(seed).uniform(size=self.latent_dim)

    def generate_vjp(self, z, cotangent):
        raw = self._raw(z)
        mask = (raw > 0.0) & (raw < 1.0)
        cot = np.asarray(cotangent, dtype=np.float64).reshape(-1)
        return self.matrix.T @ (cot * mask)


class MeanSquaredDistance(PerceptualDistance):
    """Mean squared pixel difference; the default toy perceptual distance."""

    def __init__(self, name="toy-mse"):
        self.name = name

    def distance(self, a, b):
        diff = _flat(a) - _flat(b)
        return float((diff * diff).mean())

    def grad_first(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        return 2.0 * (a - np.asarray(b, dtype=np.float64)) / a.size


class SumSquaredDistance(PerceptualDistance):
    """Plain sum of squared pixel differences (unnormalized quadratic)."""

    def __init__(self, name="toy-squared"):
        self.name = name

    def distance(self, a, b):
        diff = _flat(a) - _flat(b)
        return float((diff * diff).sum())

    def grad_first(self, a, b):
        return 2.0 * (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))


def _frozen_matrix(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out
