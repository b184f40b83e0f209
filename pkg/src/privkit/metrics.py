"""Retrieval-based privacy metrics over query and gallery embedding sets.

Two metrics are reported per embedding backend: recall at k (percentage of
queries whose identity appears among the k nearest gallery items) and the
dataset-size-relative percentage metric (how many gallery images sit
strictly between a query and its closest same-identity gallery image,
normalized by query and gallery counts). Both are exact; there is no
approximate nearest-neighbor path.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .backends import EmbeddingBackend
from .errors import ConfigError, ContractViolation
from .types import EmbeddingVector, ImageRecord, l2_distances


@dataclass(frozen=True)
class Gallery:
    """Immutable set of (image_id, identity, vector) rows for one backend."""

    backend_name: str
    ids: tuple[str, ...]
    identities: tuple[str, ...]
    matrix: np.ndarray  # (n, dim), read-only

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.ids):
            raise ContractViolation("gallery matrix must have one row per id")
        if len(self.identities) != len(self.ids):
            raise ContractViolation("gallery needs one identity per id")
        if len(set(self.ids)) != len(self.ids):
            raise ContractViolation("gallery image ids must be unique")
        if not np.all(np.isfinite(matrix)):
            raise ContractViolation("gallery vectors must be finite")
        matrix = matrix.copy()
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "identities", tuple(self.identities))
        # Row permutation sorted by id: one string sort per gallery lets every
        # per-query ranking use a stable float sort for the (distance, id) rule.
        ids_array = np.array(self.ids, dtype=str)
        object.__setattr__(self, "_id_order", np.argsort(ids_array, kind="stable"))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def identity_map(self) -> dict[str, str]:
        return dict(zip(self.ids, self.identities))

    def vector_of(self, image_id: str) -> EmbeddingVector:
        try:
            row = self.ids.index(image_id)
        except ValueError:
            raise ContractViolation(f"image id {image_id!r} not in gallery") from None
        return EmbeddingVector(self.backend_name, self.matrix[row], image_id)

    @classmethod
    def from_embeddings(cls, records: Sequence[tuple[str, str, EmbeddingVector]],
                        backend_name: str | None = None) -> "Gallery":
        """Build from (image_id, identity, EmbeddingVector) records."""
        if not records:
            raise ContractViolation("gallery needs at least one record")
        name = backend_name or records[0][2].backend_name
        for _, _, vec in records:
            if vec.backend_name != name:
                raise ContractViolation(
                    f"mixed backends in gallery: {vec.backend_name!r} vs {name!r}"
                )
            if vec.dim != records[0][2].dim:
                raise ContractViolation("mixed dimensions in gallery")
        return cls(
            backend_name=name,
            ids=tuple(r[0] for r in records),
            identities=tuple(r[1] for r in records),
            matrix=np.stack([r[2].vector for r in records]),
        )

    @classmethod
    def from_images(cls, images: Sequence[ImageRecord], backend: EmbeddingBackend,
                    cache=None) -> "Gallery":
        if cache is None:
            records = [(img.id, img.identity, backend.embed(img)) for img in images]
        else:
            records = [(img.id, img.identity, cache.embed(backend, img)) for img in images]
        return cls.from_embeddings(records, backend_name=backend.name)


def merge_galleries(a: Gallery, b: Gallery) -> Gallery:
    if a.backend_name != b.backend_name:
        raise ContractViolation("cannot merge galleries from different backends")
    if a.dim != b.dim:
        raise ContractViolation("cannot merge galleries of different dimensions")
    dupes = set(a.ids) & set(b.ids)
    if dupes:
        raise ContractViolation(f"duplicate ids in merge: {sorted(dupes)[:5]}")
    return Gallery(
        backend_name=a.backend_name,
        ids=a.ids + b.ids,
        identities=a.identities + b.identities,
        matrix=np.vstack([a.matrix, b.matrix]),
    )


def _check_query(q: EmbeddingVector, M: Gallery):
    if q.backend_name != M.backend_name:
        raise ContractViolation(
            f"query backend {q.backend_name!r} != gallery backend {M.backend_name!r}"
        )
    if q.dim != M.dim:
        raise ContractViolation(f"query dim {q.dim} != gallery dim {M.dim}")


def _ranked(vector: np.ndarray, M: Gallery) -> tuple[np.ndarray, np.ndarray]:
    """Gallery indices sorted ascending by (distance, image_id); ties are
    resolved by id so the ordering is unique and order-invariant."""
    dists = l2_distances(M.matrix, vector)
    perm = M._id_order
    order = perm[np.argsort(dists[perm], kind="stable")]
    return order, dists


def nearest_neighbors(q: EmbeddingVector, M: Gallery, k: int) -> list[tuple[str, float]]:
    """The k gallery items closest to the query, ascending by (distance, id)."""
    _check_query(q, M)
    if not 1 <= k <= len(M):
        raise ContractViolation(f"k must be in [1, {len(M)}], got {k}")
    order, dists = _ranked(q.vector, M)
    return [(M.ids[i], float(dists[i])) for i in order[:k]]


def _identity_lookup(identity_of: Mapping[str, str] | None, gallery: Gallery):
    if identity_of is None:
        return gallery.identity_map()
    return identity_of


def _gallery_codes(M: Gallery, ident: Mapping[str, str]):
    """Integer identity codes per gallery row, plus the name->code table.

    Lets rank-finding run as numpy comparisons instead of per-row Python."""
    names = [ident[gid] for gid in M.ids]
    coding = {name: i for i, name in enumerate(dict.fromkeys(names))}
    return np.array([coding[name] for name in names], dtype=np.int64), coding


def recall_at_k(L: Gallery, M: Gallery, k: int,
                identity_of: Mapping[str, str] | None = None) -> float:
    """Percentage of queries whose identity appears among their k nearest
    gallery items."""
    if len(L) < 1:
        raise ContractViolation("query set must be non-empty")
    if not 1 <= k <= len(M):
        raise ContractViolation(f"k must be in [1, {len(M)}], got {k}")
    gallery_ident = _identity_lookup(identity_of, M)
    query_ident = identity_of if identity_of is not None else L.identity_map()
    codes, coding = _gallery_codes(M, gallery_ident)
    hits = 0
    for row, qid in enumerate(L.ids):
        order, _ = _ranked(L.matrix[row], M)
        qcode = coding.get(query_ident[qid], -1)
        if np.any(codes[order[:k]] == qcode):
            hits += 1
    return 100.0 * hits / len(L)


def between(q: EmbeddingVector, match: tuple[str, float], M: Gallery) -> int:
    """Number of gallery images strictly closer to the query than the match.

    The reference distance is recomputed from the gallery row, so the
    match's carried distance is informational only.
    """
    _check_query(q, M)
    match_id = match[0]
    if match_id not in M.ids:
        raise ContractViolation(f"match id {match_id!r} is not in the gallery")
    row = M.ids.index(match_id)
    ref = float(l2_distances(M.matrix[row][None, :], q.vector)[0])
    dists = l2_distances(M.matrix, q.vector)
    return int((dists < ref).sum())


class PercentageResult(NamedTuple):
    value: float
    n_excluded: int


def percentage_metric_detail(L: Gallery, M: Gallery,
                             identity_of: Mapping[str, str] | None = None,
                             same_identity: bool = True) -> PercentageResult:
    """Percentage metric plus the count of queries excluded because their
    identity has no gallery image.

    ``same_identity=False`` switches the reference match from the closest
    same-identity image to the single global nearest neighbor (which makes
    the metric identically zero; kept for sensitivity analysis).
    """
    if len(L) < 1:
        raise ContractViolation("query set must be non-empty")
    gallery_ident = _identity_lookup(identity_of, M)
    query_ident = identity_of if identity_of is not None else L.identity_map()
    codes, coding = _gallery_codes(M, gallery_ident)
    total = 0
    included = 0
    excluded = 0
    perm = M._id_order
    for row, qid in enumerate(L.ids):
        dists = l2_distances(M.matrix, L.matrix[row])
        if same_identity:
            # Rows in ascending-id order; argmin takes the first minimum, so
            # distance ties resolve to the smallest id.
            rows = perm[codes[perm] == coding.get(query_ident[qid], -1)]
            if rows.size == 0:
                excluded += 1
                continue
            match_row = rows[np.argmin(dists[rows])]
        else:
            match_row = perm[np.argmin(dists[perm])]
        ref = dists[match_row]
        total += int((dists < ref).sum())
        included += 1
    if included == 0:
        raise ContractViolation("no query identity is present in the gallery")
    return PercentageResult(value=100.0 * total / (included * len(M)), n_excluded=excluded)


def percentage_metric(L: Gallery, M: Gallery,
                      identity_of: Mapping[str, str] | None = None,
                      same_identity: bool = True) -> float:
    return percentage_metric_detail(L, M, identity_of, same_identity).value


class EvalContexts(NamedTuple):
    """Query/gallery pairs for the two evaluation directions."""

    mi: tuple[Gallery, Gallery]  # modified as query vs originals + confounders
    oi: tuple[Gallery, Gallery]  # originals as query vs modified + confounders


def build_contexts(originals: Gallery, modified: Gallery,
                   confounders: Gallery | None = None) -> EvalContexts:
    """Assemble both evaluation contexts from per-role galleries.

    Confounders are capped at one fifth of the original count so the galleries
    stay dominated by experiment images.
    """
    if set(originals.ids) != set(modified.ids):
        raise ContractViolation("originals and modified must be in 1:1 id correspondence")
    n_conf = len(confounders) if confounders is not None else 0
    if n_conf * 5 > len(originals):
        raise ConfigError(
            f"{n_conf} confounders exceed one fifth of {len(originals)} originals"
        )
    mi_gallery = merge_galleries(originals, confounders) if confounders else originals
    oi_gallery = merge_galleries(modified, confounders) if confounders else modified
    return EvalContexts(mi=(modified, mi_gallery), oi=(originals, oi_gallery))


@dataclass(frozen=True)
class MetricReport:
    """Recall and percentage values for one embedding backend."""

    backend_name: str
    k_values: tuple[int, ...]
    recall_mi: dict[int, float]
    recall_oi: dict[int, float]
    percentage: float
    n_queries: int
    n_gallery: int
    n_confounders: int
    n_percentage_excluded: int = 0

    def __post_init__(self):
        for mapping in (self.recall_mi, self.recall_oi):
            values = [mapping[k] for k in self.k_values]
            if any(not 0.0 <= v <= 100.0 for v in values):
                raise ContractViolation("recall values must lie in [0, 100]")
            if any(b < a for a, b in zip(values, values[1:])):
                raise ContractViolation("recall must be non-decreasing in k")
        if not 0.0 <= self.percentage <= 100.0:
            raise ContractViolation("percentage must lie in [0, 100]")


def compute_metric_report(originals: Gallery, modified: Gallery,
                          confounders: Gallery | None,
                          k_values: Sequence[int]) -> MetricReport:
    """Both metrics in both contexts for one backend.

    The percentage value is computed in the modified-as-query direction,
    the one an attacker holding the published image would exercise.
    """
    contexts = build_contexts(originals, modified, confounders)
    k_values = tuple(sorted(set(int(k) for k in k_values)))
    if not k_values:
        raise ContractViolation("k_values must be non-empty")

    def _recalls(queries: Gallery, gallery: Gallery) -> dict[int, float]:
        if k_values[-1] > len(gallery):
            raise ContractViolation(
                f"k={k_values[-1]} exceeds gallery size {len(gallery)}"
            )
        ident = gallery.identity_map() | queries.identity_map()
        codes, coding = _gallery_codes(gallery, ident)
        ranks = []
        for row, qid in enumerate(queries.ids):
            order, _ = _ranked(queries.matrix[row], gallery)
            positions = np.nonzero(codes[order] == coding.get(ident[qid], -1))[0]
            ranks.append(int(positions[0]) + 1 if positions.size else None)
        return {
            k: 100.0 * sum(1 for r in ranks if r is not None and r <= k) / len(queries)
            for k in k_values
        }

    pct = percentage_metric_detail(*contexts.mi)
    return MetricReport(
        backend_name=originals.backend_name,
        k_values=k_values,
        recall_mi=_recalls(*contexts.mi),
        recall_oi=_recalls(*contexts.oi),
        percentage=pct.value,
        n_queries=len(modified),
        n_gallery=len(contexts.mi[1]),
        n_confounders=len(confounders) if confounders is not None else 0,
        n_percentage_excluded=pct.n_excluded,
    )
