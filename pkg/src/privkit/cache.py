"""On-disk embedding cache.

Layout: one directory per backend holding ``manifest.json`` (UTF-8 JSON with
records of ``{image_id, identity, dim, offset}``) and ``vectors.bin``, a
packed file of little-endian 32-bit floats, row-major, one row per manifest
record in order. ``offset`` is the byte offset of the record's row.

Vectors round-trip through the on-disk float32 precision even on first
computation, so cached and freshly computed evaluations agree exactly.
Writes are atomic (temp file then rename).
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .types import EmbeddingVector, ImageRecord

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"


def content_hash(pixels: np.ndarray) -> str:
    """Stable hex digest of pixel content, shape and dtype."""
    arr = np.ascontiguousarray(np.asarray(pixels))
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _atomic_write_bytes(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class EmbeddingCache:
    """Vectors for one backend, keyed by caller-chosen string keys.

    Keys are image ids for dataset exports and content hashes for the lazy
    evaluation cache; the file format is the same either way.
    """

    def __init__(self, root, backend_name: str, dim: int):
        self.dir = Path(root) / backend_name
        self.backend_name = backend_name
        self.dim = int(dim)
        self._keys: list[str] = []
        self._identities: dict[str, str] = {}
        self._rows: dict[str, np.ndarray] = {}
        if (self.dir / MANIFEST_NAME).exists():
            self._load()

    def _load(self):
        manifest = json.loads((self.dir / MANIFEST_NAME).read_text(encoding="utf-8"))
        if manifest.get("dim") != self.dim:
            raise ConfigError(
                f"cache at {self.dir} holds dim {manifest.get('dim')}, expected {self.dim}"
            )
        blob = (self.dir / VECTORS_NAME).read_bytes()
        rowbytes = 4 * self.dim
        for rec in manifest["records"]:
            key, offset = rec["image_id"], int(rec["offset"])
            row = np.frombuffer(blob[offset:offset + rowbytes], dtype="<f4")
            if row.size != self.dim:
                raise ConfigError(f"cache row for {key!r} is truncated")
            self._keys.append(key)
            self._identities[key] = rec.get("identity", "")
            self._rows[key] = row.astype(np.float64)

    def __contains__(self, key: str) -> bool:
        return key in self._rows

    def __len__(self) -> int:
        return len(self._keys)

    def get(self, key: str) -> np.ndarray | None:
        row = self._rows.get(key)
        return None if row is None else row.copy()

    def put(self, key: str, identity: str, vector: np.ndarray) -> np.ndarray:
        """Store a vector (quantized to float32) and return the stored values."""
        quantized = np.asarray(vector, dtype=np.float64).reshape(-1).astype("<f4")
        if quantized.size != self.dim:
            raise ConfigError(f"vector for {key!r} has dim {quantized.size}, cache is {self.dim}")
        stored = quantized.astype(np.float64)
        if key not in self._rows:
            self._keys.append(key)
        self._identities[key] = identity
        self._rows[key] = stored
        return stored.copy()

    def embed(self, backend, image: ImageRecord) -> EmbeddingVector:
        """Embedding for ``image``, computed through the cache by content hash."""
        key = content_hash(image.pixels)
        row = self._rows.get(key)
        if row is None:
            row = self.put(key, image.identity, backend.embed(image).vector)
        return EmbeddingVector(backend_name=self.backend_name, vector=row, image_id=image.id)

    def flush(self):
        """Persist manifest and vector file atomically."""
        self.dir.mkdir(parents=True, exist_ok=True)
        rowbytes = 4 * self.dim
        records = []
        blob = bytearray()
        for i, key in enumerate(self._keys):
            records.append({
                "image_id": key,
                "identity": self._identities[key],
                "dim": self.dim,
                "offset": i * rowbytes,
            })
            blob += self._rows[key].astype("<f4").tobytes()
        manifest = {"backend": self.backend_name, "dim": self.dim, "records": records}
        _atomic_write_bytes(self.dir / VECTORS_NAME, bytes(blob))
        _atomic_write_bytes(
            self.dir / MANIFEST_NAME,
            json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"),
        )
