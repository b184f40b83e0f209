"""Core domain types: image records, embedding vectors, hyperparameters.

Pixels live in [0, 1] as float64 arrays of shape H x W x C; 8-bit conversion
happens only at file I/O boundaries. All types are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ContractViolation


class Role(str, Enum):
    """Part an image plays in an experiment."""

    ORIGINAL = "original"
    MODIFIED = "modified"
    CONFOUNDER = "confounder"
    TARGET_CANDIDATE = "target-candidate"


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def check_pixels(pixels: np.ndarray) -> np.ndarray:
    """Validate an H x W x C pixel array and return a read-only float64 copy."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise ContractViolation(f"pixels must be a non-empty H x W x C array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("pixels contain non-finite values")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        raise ContractViolation("pixel values must lie in [0, 1]")
    return _frozen(arr)


@dataclass(frozen=True)
class ImageRecord:
    """One image with its identity label, role, and provenance."""

    id: str
    identity: str
    pixels: np.ndarray
    role: Role = Role.ORIGINAL
    source: str = ""

    def __post_init__(self):
        if not self.id:
            raise ContractViolation("image id must be non-empty")
        if not self.identity:
            raise ContractViolation("identity must be non-empty")
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "pixels", check_pixels(self.pixels))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension vector produced by a named embedding backend."""

    backend_name: str
    vector: np.ndarray
    image_id: str

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vec.size == 0:
            raise ContractViolation("embedding vector must be non-empty")
        if not np.all(np.isfinite(vec)):
            raise ContractViolation(f"embedding from {self.backend_name!r} contains non-finite values")
        object.__setattr__(self, "vector", _frozen(vec))

    @property
    def dim(self) -> int:
        return int(self.vector.size)


_scratch = threading.local()


def l2_distances(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distances from ``vector`` to each row of ``matrix``.

    Every distance in the toolkit (losses and retrieval alike) goes through
    this one kernel so that scalar and batched paths agree bit for bit. The
    difference buffer is reused per thread: fresh multi-megabyte temporaries
    would otherwise dominate large-gallery evaluations via allocator churn.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    vector = np.asarray(vector, dtype=np.float64)
    buffers = getattr(_scratch, "buffers", None)
    if buffers is None:
        buffers = _scratch.buffers = {}
    buf = buffers.get(matrix.shape)
    if buf is None:
        if len(buffers) >= 8:
            buffers.pop(next(iter(buffers)))
        buf = buffers[matrix.shape] = np.empty(matrix.shape)
    np.subtract(matrix, vector, out=buf)
    np.multiply(buf, buf, out=buf)
    return np.sqrt(buf.sum(axis=-1))


def embedding_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Euclidean distance between two embeddings of the same backend."""
    if a.backend_name != b.backend_name:
        raise ContractViolation(
            f"backend mismatch: {a.backend_name!r} vs {b.backend_name!r}"
        )
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(l2_distances(a.vector[None, :], b.vector)[0])


@dataclass(frozen=True)
class Hyperparameters:
    """Optimization settings for one protection job.

    ``K`` weights the embedding terms against the perceptual term, ``rho``
    caps per-pixel noise for the pixel-cloak baseline, and ``batch_size``
    is the number of independent jobs advanced together.
    """

    K: float = 0.03
    num_iterations: int = 128
    learning_rate: float = 0.01
    batch_size: int = 32
    rho: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ContractViolation("K must be non-negative")
        if self.num_iterations < 0:
            raise ContractViolation("num_iterations must be non-negative")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be positive")
        if self.rho < 0:
            raise ContractViolation("rho must be non-negative")


HYPERPARAMETER_PRESETS: Mapping[str, Hyperparameters] = {
    "stylegan_standard": Hyperparameters(K=0.03, num_iterations=128),
    "vqgan_standard": Hyperparameters(K=0.03, num_iterations=1000),
}


def hyperparameter_preset(name: str, **overrides) -> Hyperparameters:
    """Resolve a named preset, optionally overriding individual fields."""
    try:
        base = HYPERPARAMETER_PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(HYPERPARAMETER_PRESETS))
        raise ContractViolation(f"unknown preset {name!r} (known: {known})") from None
    if not overrides:
        return base
    from dataclasses import replace

    return replace(base, **overrides)
