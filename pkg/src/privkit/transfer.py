"""Black-box transfer evaluation across embedding backends.

Images are protected under one set of embeddings and evaluated against a
superset; the transfer-recall scalar is the arithmetic mean of recall@10 in
the modified-as-query context over the backends the protection was *not*
optimized for.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .cache import EmbeddingCache
from .errors import ConfigError, ContractViolation
from .metrics import Gallery, MetricReport, compute_metric_report
from .registry import BackendRegistry
from .types import Hyperparameters, ImageRecord

TRANSFER_K = 10


@dataclass(frozen=True)
class TransferPlan:
    """Which embeddings to optimize for, which to evaluate with, and which k."""

    optimize_embeddings: tuple[str, ...]
    evaluate_embeddings: tuple[str, ...]
    k_values: tuple[int, ...] = (1, 3, 5, 10, 50, 100)
    method_configs: tuple[tuple[str, str, Hyperparameters], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "optimize_embeddings", tuple(self.optimize_embeddings))
        object.__setattr__(self, "evaluate_embeddings", tuple(self.evaluate_embeddings))
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        missing = set(self.optimize_embeddings) - set(self.evaluate_embeddings)
        if missing:
            raise ContractViolation(
                f"optimize embeddings {sorted(missing)} missing from evaluate set"
            )
        if TRANSFER_K not in self.k_values:
            raise ContractViolation(f"k_values must include {TRANSFER_K}")

    @property
    def transfer_embeddings(self) -> tuple[str, ...]:
        """Evaluation backends excluded from optimization, in stable order."""
        return tuple(sorted(set(self.evaluate_embeddings) - set(self.optimize_embeddings)))


@dataclass(frozen=True)
class TransferReport:
    per_embedding: dict[str, MetricReport]
    transfer_recall: float | None
    optimized_set: tuple[str, ...]


def run_transfer_eval(plan: TransferPlan, originals: Sequence[ImageRecord],
                      modified: Sequence[ImageRecord],
                      confounders: Sequence[ImageRecord],
                      registry: BackendRegistry,
                      cache_dir: Path | str | None = None,
                      workers: int = 1) -> TransferReport:
    """Per-embedding metric reports plus the transfer-recall aggregate.

    ``cache_dir`` enables the content-hash embedding cache; per-embedding
    evaluations are independent and run on a thread pool when workers > 1.
    ``transfer_recall`` is None when every evaluated backend was optimized.
    """
    if not plan.evaluate_embeddings:
        raise ConfigError("plan evaluates no embeddings")

    def _evaluate(name: str) -> MetricReport:
        try:
            backend = registry.embedding(name)
        except Exception as exc:
            raise ConfigError(f"embedding backend {name!r} unavailable: {exc}") from exc
        cache = None
        if cache_dir is not None:
            cache = EmbeddingCache(cache_dir, backend.name, backend.dim)
        report = compute_metric_report(
            Gallery.from_images(originals, backend, cache),
            Gallery.from_images(modified, backend, cache),
            Gallery.from_images(confounders, backend, cache) if confounders else None,
            plan.k_values,
        )
        if cache is not None:
            cache.flush()
        return report

    names = list(dict.fromkeys(plan.evaluate_embeddings))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = dict(zip(names, pool.map(_evaluate, names)))
    else:
        reports = {name: _evaluate(name) for name in names}

    held_out = plan.transfer_embeddings
    transfer = None
    if held_out:
        transfer = sum(reports[name].recall_mi[TRANSFER_K] for name in held_out) / len(held_out)
    return TransferReport(per_embedding=reports, transfer_recall=transfer,
                          optimized_set=plan.optimize_embeddings)


@dataclass(frozen=True)
class BudgetMatch:
    variant: tuple[float, int]
    transfer_recall: float
    gap: float
    within_tolerance: bool


def match_privacy_budget(reference_transfer_recall: float,
                         variant_grid: Sequence[tuple[float, int]],
                         evaluate_fn: Callable[[tuple[float, int]], float],
                         tolerance: float) -> BudgetMatch:
    """Pick the (K, iterations) variant whose transfer recall is closest to a
    reference value.

    ``evaluate_fn`` maps a variant to its transfer recall. Always returns the
    closest variant; ``within_tolerance`` flags whether it actually matched.
    Ties in gap resolve to the earlier grid entry.
    """
    if not variant_grid:
        raise ContractViolation("variant grid must be non-empty")
    best = None
    for variant in variant_grid:
        recall = float(evaluate_fn(variant))
        gap = abs(recall - reference_transfer_recall)
        if best is None or gap < best.gap:
            best = BudgetMatch(variant=tuple(variant), transfer_recall=recall,
                               gap=gap, within_tolerance=gap <= tolerance)
    return best
