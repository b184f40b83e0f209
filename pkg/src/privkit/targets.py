"""Pairing of each original image with a distant target identity.

A target is drawn uniformly (seeded) from the furthest ``far_fraction`` of
the candidate pool by embedding distance, after excluding candidates that
share the original's identity. Distance ties are broken by ascending image
id before the quantile cut, so results are reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import EmbeddingBackend
from .errors import ContractViolation, SelectionError
from .types import EmbeddingVector, ImageRecord, embedding_distance


@dataclass(frozen=True)
class TargetPair:
    original_id: str
    target_id: str
    selection_embedding: str
    distance: float
    pool_rank: int  # 1 = furthest eligible candidate


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _pick_far(original_vec: EmbeddingVector,
              candidates: Sequence[tuple[str, str, EmbeddingVector]],
              embedding_name: str, original_identity: str,
              far_fraction: float, seed: int) -> TargetPair:
    eligible = [(cid, vec) for cid, ident, vec in candidates if ident != original_identity]
    if not eligible:
        raise SelectionError(
            f"no eligible target candidates for identity {original_identity!r}"
        )
    scored = sorted(
        ((embedding_distance(original_vec, vec), cid) for cid, vec in eligible),
        key=lambda item: (-item[0], item[1]),
    )
    top = scored[: math.ceil(far_fraction * len(scored))]
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(len(top)))
    dist, target_id = top[rank]
    return TargetPair(
        original_id=original_vec.image_id,
        target_id=target_id,
        selection_embedding=embedding_name,
        distance=float(dist),
        pool_rank=rank + 1,
    )


def select_target(original: ImageRecord, pool: Sequence[ImageRecord],
                  embedding: EmbeddingBackend, far_fraction: float = 0.1,
                  seed: int = 0) -> TargetPair:
    """Pick a far-away target for one original from the candidate pool."""
    if not 0.0 < far_fraction <= 1.0:
        raise ContractViolation("far_fraction must lie in (0, 1]")
    candidates = [(p.id, p.identity, embedding.embed(p)) for p in pool]
    return _pick_far(embedding.embed(original), candidates, embedding.name,
                     original.identity, far_fraction, seed)


def select_targets_batch(originals: Sequence[ImageRecord], pool: Sequence[ImageRecord],
                         embedding: EmbeddingBackend, far_fraction: float = 0.1,
                         seed: int = 0) -> list[TargetPair]:
    """One TargetPair per original; the pool is embedded once and reused."""
    if not 0.0 < far_fraction <= 1.0:
        raise ContractViolation("far_fraction must lie in (0, 1]")
    overlap = {o.id for o in originals} & {p.id for p in pool}
    if overlap:
        raise ContractViolation(f"pool overlaps originals by id: {sorted(overlap)[:5]}")
    candidates = [(p.id, p.identity, embedding.embed(p)) for p in pool]
    pairs = []
    for i, original in enumerate(originals):
        pairs.append(_pick_far(embedding.embed(original), candidates, embedding.name,
                               original.identity, far_fraction, _child_seed(seed, i)))
    return pairs


def save_target_pairs(path, pairs: Sequence[TargetPair]) -> Path:
    """Persist pairs as UTF-8 JSON lines, one object per pair."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(asdict(p), sort_keys=True) for p in pairs]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def load_target_pairs(path) -> list[TargetPair]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            pairs.append(TargetPair(**json.loads(line)))
    return pairs
