"""Run configuration: one JSON file describing an entire experiment.

The config names the dataset manifests, declares backends (toy families by
type or external factories by import path), lists method variants, and
fixes the transfer plan. Every default is overridable; the canonical JSON
hash plus the seed are embedded in every artifact so reruns are exactly
reproducible.
"""
from __future__ import annotations

import hashlib
import importlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    IdentityEmbedding,
    LinearGenerator,
    MeanSquaredDistance,
    RandomProjectionEmbedding,
    SumSquaredDistance,
)
from .errors import ConfigError
from .registry import BackendRegistry
from .transfer import TransferPlan
from .types import HYPERPARAMETER_PRESETS, Hyperparameters

DEFAULT_FAR_FRACTION = 0.1


def parse_variant_name(name: str) -> tuple[str, float, int]:
    """Split ``<Method>_<K>_<iterations>`` into its parts."""
    parts = name.split("_")
    if len(parts) != 3:
        raise ConfigError(f"variant name {name!r} is not <Method>_<K>_<iterations>")
    prefix, k_text, iter_text = parts
    try:
        return prefix, float(k_text), int(iter_text)
    except ValueError as exc:
        raise ConfigError(f"variant name {name!r}: {exc}") from exc


def format_variant_name(prefix: str, K: float, iterations: int) -> str:
    k_text = f"{K:g}"
    return f"{prefix}_{k_text}_{iterations}"


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str  # embedding | generator | perceptual
    type: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class VariantSpec:
    """One named protection method configuration."""

    name: str
    method: str  # privacygan | pixel_cloak | composition
    hyper: Hyperparameters
    generator: str | None = None
    embeddings: tuple[str, ...] = ()
    perceptual: str | None = None
    stages: tuple[str, ...] = ()  # composition only: prior variant names in order
    reuse_target: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: Path
    datasets: dict[str, str]
    backends: tuple[BackendSpec, ...]
    variants: tuple[VariantSpec, ...]
    plan: TransferPlan
    target_embedding: str
    far_fraction: float
    extract: dict
    config_hash: str
    base_dir: Path

    def variant(self, name: str) -> VariantSpec:
        for v in self.variants:
            if v.name == name:
                return v
        known = ", ".join(v.name for v in self.variants)
        raise ConfigError(f"unknown variant {name!r} (known: {known})")

    def dataset_path(self, key: str) -> Path:
        try:
            raw = self.datasets[key]
        except KeyError:
            raise ConfigError(f"config.datasets is missing {key!r}") from None
        path = Path(raw)
        return path if path.is_absolute() else self.base_dir / path


def config_hash_of(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_TOY_FACTORIES = {
    "random_projection_embedding": RandomProjectionEmbedding,
    "identity_embedding": IdentityEmbedding,
    "linear_generator": LinearGenerator,
    "linear_generator_identity": LinearGenerator.identity,
    "mean_squared_distance": MeanSquaredDistance,
    "sum_squared_distance": SumSquaredDistance,
}


def _build_backend(spec: BackendSpec):
    params = dict(spec.params)
    if "image_shape" in params:
        params["image_shape"] = tuple(int(v) for v in params["image_shape"])
    if spec.type == "import":
        locator = params.pop("locator", None)
        if not locator or ":" not in locator:
            raise ConfigError(f"backend {spec.name!r}: import type needs 'module:factory'")
        module_name, attr = locator.split(":", 1)
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"backend {spec.name!r}: cannot import {locator!r}: {exc}") from exc
        return factory(name=spec.name, **params)
    try:
        factory = _TOY_FACTORIES[spec.type]
    except KeyError:
        known = ", ".join(sorted(_TOY_FACTORIES))
        raise ConfigError(
            f"backend {spec.name!r}: unknown type {spec.type!r} (known: {known}, import)"
        ) from None
    return factory(name=spec.name, **params)


def build_registry(config: RunConfig) -> BackendRegistry:
    registry = BackendRegistry()
    for spec in config.backends:
        backend = _build_backend(spec)
        if backend.name != spec.name:
            raise ConfigError(f"backend factory for {spec.name!r} returned name {backend.name!r}")
        registry.register(backend)
    return registry


def _parse_hyper(raw: dict | None, variant_name: str, seed: int) -> Hyperparameters:
    raw = dict(raw or {})
    preset_name = raw.pop("preset", None)
    if preset_name is not None:
        if preset_name not in HYPERPARAMETER_PRESETS:
            known = ", ".join(sorted(HYPERPARAMETER_PRESETS))
            raise ConfigError(f"unknown hyperparameter preset {preset_name!r} (known: {known})")
        base = HYPERPARAMETER_PRESETS[preset_name]
        merged = {
            "K": base.K, "num_iterations": base.num_iterations,
            "learning_rate": base.learning_rate, "batch_size": base.batch_size,
            "rho": base.rho, "seed": seed,
        }
    else:
        merged = {"seed": seed}
        if "K" not in raw or "num_iterations" not in raw:
            try:
                _, k_value, iterations = parse_variant_name(variant_name)
                merged.update(K=k_value, num_iterations=iterations)
            except ConfigError:
                pass
    merged.update(raw)
    try:
        return Hyperparameters(**merged)
    except TypeError as exc:
        raise ConfigError(f"variant {variant_name!r}: bad hyperparameters: {exc}") from exc


def _parse_variant(raw: dict, seed: int) -> VariantSpec:
    try:
        name = raw["name"]
        method = raw["method"]
    except KeyError as exc:
        raise ConfigError(f"variant entry is missing {exc}") from exc
    if method not in ("privacygan", "pixel_cloak", "composition"):
        raise ConfigError(f"variant {name!r}: unknown method {method!r}")
    hyper = _parse_hyper(raw.get("hyper"), name, seed)
    return VariantSpec(
        name=name,
        method=method,
        hyper=hyper,
        generator=raw.get("generator"),
        embeddings=tuple(raw.get("embeddings", ())),
        perceptual=raw.get("perceptual"),
        stages=tuple(raw.get("stages", ())),
        reuse_target=bool(raw.get("reuse_target", True)),
    )


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    seed = int(raw.get("seed", 0))
    output_dir = raw.get("output_dir")
    if not output_dir:
        raise ConfigError("config must set output_dir")

    backends = tuple(
        BackendSpec(name=b["name"], kind=b.get("kind", "embedding"),
                    type=b["type"], params=b.get("params", {}))
        for b in raw.get("backends", ())
    )
    names = [b.name for b in backends]
    if len(set(names)) != len(names):
        raise ConfigError("backend names must be unique")

    variants = tuple(_parse_variant(v, seed) for v in raw.get("variants", ()))
    vnames = [v.name for v in variants]
    if len(set(vnames)) != len(vnames):
        raise ConfigError("variant names must be unique")

    plan_raw = raw.get("plan", {})
    try:
        plan = TransferPlan(
            optimize_embeddings=tuple(plan_raw.get("optimize_embeddings", ())),
            evaluate_embeddings=tuple(plan_raw.get("evaluate_embeddings", ())),
            k_values=tuple(plan_raw.get("k_values", (1, 3, 5, 10, 50, 100))),
        )
    except Exception as exc:
        raise ConfigError(f"bad transfer plan: {exc}") from exc

    target_raw = raw.get("target_selection", {})
    base_dir = path.parent.resolve()
    out_path = Path(output_dir)
    return RunConfig(
        seed=seed,
        output_dir=out_path if out_path.is_absolute() else base_dir / out_path,
        datasets=dict(raw.get("datasets", {})),
        backends=backends,
        variants=variants,
        plan=plan,
        target_embedding=target_raw.get("embedding", ""),
        far_fraction=float(target_raw.get("far_fraction", DEFAULT_FAR_FRACTION)),
        extract=dict(raw.get("extract", {})),
        config_hash=config_hash_of(raw),
        base_dir=base_dir,
    )
