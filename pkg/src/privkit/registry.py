"""Named registry for embedding, generator, and perceptual backends.

Names are scoped per kind, so an embedding and a generator may share a
name. Instances are expected to be read-only after registration; backends
that hold mutable state must synchronize internally.
"""
from __future__ import annotations

from .backends import EmbeddingBackend, GeneratorBackend, PerceptualDistance
from .errors import RegistrationError

_KINDS = {
    "embedding": EmbeddingBackend,
    "generator": GeneratorBackend,
    "perceptual": PerceptualDistance,
}


class BackendRegistry:
    def __init__(self):
        self._by_kind: dict[str, dict[str, object]] = {k: {} for k in _KINDS}

    def register(self, backend):
        """Register a backend under its own name; returns the instance."""
        kind = self._kind_of(backend)
        table = self._by_kind[kind]
        if backend.name in table:
            raise RegistrationError(f"{kind} backend {backend.name!r} already registered")
        table[backend.name] = backend
        return backend

    def embedding(self, name: str) -> EmbeddingBackend:
        return self._get("embedding", name)

    def generator(self, name: str) -> GeneratorBackend:
        return self._get("generator", name)

    def perceptual(self, name: str) -> PerceptualDistance:
        return self._get("perceptual", name)

    def names(self, kind: str | None = None) -> list[str]:
        """Registered names, either for one kind or across all kinds."""
        if kind is not None:
            self._check_kind(kind)
            return sorted(self._by_kind[kind])
        return sorted(name for table in self._by_kind.values() for name in table)

    def _get(self, kind, name):
        try:
            return self._by_kind[kind][name]
        except KeyError:
            raise RegistrationError(f"no {kind} backend named {name!r}") from None

    @staticmethod
    def _kind_of(backend) -> str:
        for kind, cls in _KINDS.items():
            if isinstance(backend, cls):
                return kind
        raise RegistrationError(f"{type(backend).__name__} is not a recognized backend type")

    @staticmethod
    def _check_kind(kind):
        if kind not in _KINDS:
            raise RegistrationError(f"unknown backend kind {kind!r}")
