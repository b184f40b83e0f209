"""Command-line entry points: extract, targets, protect, evaluate, report.

Every command takes a single JSON config (--config), honors --seed /
--workers / --overwrite, exits 0 on success, 2 on configuration errors and
3 on runtime failures (partial outputs are kept), and emits a
machine-readable JSON error object on stderr when failing. Artifacts embed
the config hash and seed; reruns with identical inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imageio
from .config import RunConfig, VariantSpec, build_registry, load_config
from .dataset import Role, load_manifest, save_manifest
from .errors import (
    ConfigError,
    ContractViolation,
    EvaluationError,
    PrivkitError,
    RegistrationError,
)
from .extract import extract_dataset
from .metrics import MetricReport
from .optimize import (
    Method,
    ProtectionJob,
    ProtectionResult,
    compose_protect,
    protect,
    save_loss_trace,
    save_run_manifest,
)
from .registry import BackendRegistry
from .reports import (
    comparison_csv,
    comparison_markdown,
    plot_recall_curves,
    transfer_report_csv,
    transfer_report_markdown,
)
from .targets import load_target_pairs, save_target_pairs, select_targets_batch
from .transfer import TransferReport, run_transfer_eval
from .types import ImageRecord

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CACHE_ENV = "PRIVKIT_CACHE_DIR"


def _stamp(config: RunConfig) -> dict:
    return {"config_hash": config.config_hash, "seed": config.seed}


def _stamp_comment(config: RunConfig) -> str:
    return f"config_hash={config.config_hash} seed={config.seed}"


def _guard_overwrite(path: Path, overwrite: bool):
    if path.exists() and not overwrite:
        raise ConfigError(f"refusing to overwrite {path} (pass --overwrite)")


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_images_from_manifest(manifest_path: Path, roles=None) -> list[ImageRecord]:
    """Materialize manifest records as ImageRecords with pixels from disk."""
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    wanted = {Role(r) for r in roles} if roles is not None else None
    images = []
    for rec in manifest.records:
        if wanted is not None and rec.role not in wanted:
            continue
        images.append(ImageRecord(
            id=rec.image_id, identity=rec.identity,
            pixels=imageio.load_png(base / rec.source),
            role=rec.role, source=rec.source,
        ))
    return images


def _child_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _variant_digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")


def cmd_extract(config: RunConfig, overwrite: bool, workers: int) -> int:
    opts = config.extract
    if not opts.get("frames_dir") or not opts.get("detections"):
        raise ConfigError("config.extract must set frames_dir and detections")
    frames_dir = config.base_dir / opts["frames_dir"]
    detections = config.base_dir / opts["detections"]
    if not detections.exists():
        raise ConfigError(f"no videos found: detector output {detections} is missing")
    out = config.output_dir / "extract"
    _guard_overwrite(out / "manifest.json", overwrite)
    manifest, report = extract_dataset(
        frames_dir, detections, out,
        per_identity=int(opts.get("per_identity", 5)),
        confounder_count=int(opts.get("confounder_count", 0)),
        max_primary=opts.get("max_primary"),
        seed=config.seed,
        dataset_name=opts.get("name", "extracted"),
    )
    save_manifest(out / "manifest.json", manifest, extra=_stamp(config))
    _write_json(out / "report.json", {**report.to_json(), **_stamp(config)})
    print(f"[extract] {report.n_primary} primary and {report.n_confounders} "
          f"confounder records -> {out}")
    return EXIT_OK


def cmd_targets(config: RunConfig, overwrite: bool, workers: int) -> int:
    if not config.target_embedding:
        raise ConfigError("config.target_selection must name an embedding backend")
    registry = build_registry(config)
    backend = registry.embedding(config.target_embedding)
    originals = load_images_from_manifest(config.dataset_path("originals"),
                                          roles=(Role.ORIGINAL,))
    pool = load_images_from_manifest(config.dataset_path("target_pool"))
    out = config.output_dir / "targets"
    _guard_overwrite(out / "targets.jsonl", overwrite)
    pairs = select_targets_batch(originals, pool, backend,
                                 far_fraction=config.far_fraction, seed=config.seed)
    save_target_pairs(out / "targets.jsonl", pairs)
    _write_json(out / "targets_meta.json", {
        **_stamp(config),
        "embedding": backend.name,
        "far_fraction": config.far_fraction,
        "n_pairs": len(pairs),
    })
    print(f"[targets] {len(pairs)} pairs -> {out / 'targets.jsonl'}")
    return EXIT_OK


def _build_job(variant: VariantSpec, config: RunConfig, registry: BackendRegistry,
               original: ImageRecord, target: ImageRecord, seed: int) -> ProtectionJob:
    embeddings = variant.embeddings or config.plan.optimize_embeddings
    if not embeddings:
        raise ConfigError(f"variant {variant.name!r}: no optimization embeddings configured")
    perceptual = variant.perceptual
    if perceptual is None:
        registered = registry.names("perceptual")
        if not registered:
            raise ConfigError(f"variant {variant.name!r}: no perceptual backend available")
        perceptual = registered[0]
    return ProtectionJob(
        original=original, target=target, embeddings=tuple(embeddings),
        perceptual=perceptual, hyper=replace(variant.hyper, seed=seed),
        method=Method(variant.method), registry=registry, generator=variant.generator,
    )


def _run_variant_job(variant: VariantSpec, config: RunConfig, registry: BackendRegistry,
                     original: ImageRecord, target: ImageRecord,
                     image_index: int) -> ProtectionResult:
    if variant.method == "composition":
        if len(variant.stages) < 2:
            raise ConfigError(f"variant {variant.name!r}: composition needs >= 2 stages")
        stage_specs = [config.variant(s) for s in variant.stages]
        digest = _variant_digest(variant.name)
        result = None
        for stage_idx, stage in enumerate(stage_specs):
            seed = _child_seed(config.seed, digest, stage_idx, image_index)
            template = _build_job(stage, config, registry, original, target, seed)
            result = protect(template) if result is None else compose_protect(result, template)
        return result
    seed = _child_seed(config.seed, _variant_digest(variant.name), 0, image_index)
    return protect(_build_job(variant, config, registry, original, target, seed))


def cmd_protect(config: RunConfig, variant_name: str, overwrite: bool,
                workers: int) -> int:
    variant = config.variant(variant_name)
    registry = build_registry(config)
    originals = load_images_from_manifest(config.dataset_path("originals"),
                                          roles=(Role.ORIGINAL,))
    out = config.output_dir / "protect" / variant.name
    _guard_overwrite(out / "summary.json", overwrite)

    pool_images = load_images_from_manifest(config.dataset_path("target_pool"))
    pool = {img.id: img for img in pool_images}
    targets_path = config.output_dir / "targets" / "targets.jsonl"
    if targets_path.exists():
        pairs = {p.original_id: p for p in load_target_pairs(targets_path)}
    else:
        # Targets were not run yet: auto-select with the config seed.
        if not config.target_embedding:
            raise ConfigError(
                f"no target pairs at {targets_path} and config.target_selection "
                "names no embedding; run targets first"
            )
        backend = registry.embedding(config.target_embedding)
        auto = select_targets_batch(originals, pool_images, backend,
                                    far_fraction=config.far_fraction,
                                    seed=config.seed)
        save_target_pairs(targets_path, auto)
        print(f"[protect {variant.name}] auto-selected {len(auto)} target pairs")
        pairs = {p.original_id: p for p in auto}

    def _one(item):
        index, original = item
        pair = pairs.get(original.id)
        if pair is None:
            raise ConfigError(f"no target pair for image {original.id!r}; run targets first")
        target = pool.get(pair.target_id)
        if target is None:
            raise ConfigError(f"target image {pair.target_id!r} missing from pool")
        return _run_variant_job(variant, config, registry, original, target, index)

    results: dict[str, ProtectionResult] = {}
    failures: dict[str, str] = {}
    batch = max(1, variant.hyper.batch_size)
    items = list(enumerate(originals))
    for start in range(0, len(items), batch):
        chunk = items[start:start + batch]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool_exec:
                outcomes = list(pool_exec.map(_try_one(_one, failures), chunk))
        else:
            outcomes = [_try_one(_one, failures)(item) for item in chunk]
        for item, outcome in zip(chunk, outcomes):
            if outcome is not None:
                results[item[1].id] = outcome
        done = min(start + batch, len(items))
        print(f"[protect {variant.name}] {done}/{len(items)} jobs "
              f"({len(failures)} failed)")

    for image_id, result in results.items():
        imageio.save_png(out / "images" / f"{image_id}.png", result.output.pixels)
        save_run_manifest(out / "manifests" / f"{image_id}.json", result,
                          extra={**_stamp(config), "variant": variant.name,
                                 "target_reuse": variant.reuse_target})
        save_loss_trace(out / "traces" / f"{image_id}.csv", result,
                        header_comment=_stamp_comment(config))
    _write_json(out / "summary.json", {
        **_stamp(config),
        "variant": variant.name,
        "n_images": len(items),
        "n_protected": len(results),
        "failures": dict(sorted(failures.items())),
    })
    if failures:
        print(f"[protect {variant.name}] completed with {len(failures)} failures",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _try_one(fn, failures: dict):
    def _wrapped(item):
        try:
            return fn(item)
        except PrivkitError as exc:
            failures[item[1].id] = str(exc)
            return None
    return _wrapped


def _load_modified(config: RunConfig, variant_name: str,
                   originals: list[ImageRecord]) -> list[ImageRecord]:
    images_dir = config.output_dir / "protect" / variant_name / "images"
    missing = [o.id for o in originals if not (images_dir / f"{o.id}.png").exists()]
    if missing:
        raise EvaluationError(
            f"variant {variant_name!r} is missing protected outputs for: "
            + ", ".join(missing[:10])
        )
    return [
        ImageRecord(id=o.id, identity=o.identity,
                    pixels=imageio.load_png(images_dir / f"{o.id}.png"),
                    role=Role.MODIFIED, source=f"protect/{variant_name}/images/{o.id}.png")
        for o in originals
    ]


def _report_to_json(report: TransferReport) -> dict:
    return {
        "optimized_set": list(report.optimized_set),
        "transfer_recall": report.transfer_recall,
        "per_embedding": {
            name: {
                "backend_name": rep.backend_name,
                "k_values": list(rep.k_values),
                "recall_mi": {str(k): rep.recall_mi[k] for k in rep.k_values},
                "recall_oi": {str(k): rep.recall_oi[k] for k in rep.k_values},
                "percentage": rep.percentage,
                "n_queries": rep.n_queries,
                "n_gallery": rep.n_gallery,
                "n_confounders": rep.n_confounders,
                "n_percentage_excluded": rep.n_percentage_excluded,
            }
            for name, rep in report.per_embedding.items()
        },
    }


def _report_from_json(payload: dict) -> TransferReport:
    per_embedding = {
        name: MetricReport(
            backend_name=rep["backend_name"],
            k_values=tuple(rep["k_values"]),
            recall_mi={int(k): v for k, v in rep["recall_mi"].items()},
            recall_oi={int(k): v for k, v in rep["recall_oi"].items()},
            percentage=rep["percentage"],
            n_queries=rep["n_queries"],
            n_gallery=rep["n_gallery"],
            n_confounders=rep["n_confounders"],
            n_percentage_excluded=rep.get("n_percentage_excluded", 0),
        )
        for name, rep in payload["per_embedding"].items()
    }
    return TransferReport(per_embedding=per_embedding,
                          transfer_recall=payload["transfer_recall"],
                          optimized_set=tuple(payload["optimized_set"]))


def _cache_dir(config: RunConfig) -> Path:
    return Path(os.environ.get(CACHE_ENV) or config.output_dir / "cache")


def cmd_evaluate(config: RunConfig, variant_name: str | None, overwrite: bool,
                 workers: int) -> int:
    registry = build_registry(config)
    originals = load_images_from_manifest(config.dataset_path("originals"),
                                          roles=(Role.ORIGINAL,))
    confounders = []
    if "confounders" in config.datasets:
        confounders = load_images_from_manifest(config.dataset_path("confounders"),
                                                roles=(Role.CONFOUNDER,))
    names = [variant_name] if variant_name else [v.name for v in config.variants]
    for name in names:
        config.variant(name)  # validate early
    for name in names:
        out = config.output_dir / "evaluate" / name
        _guard_overwrite(out / "report.json", overwrite)
        modified = _load_modified(config, name, originals)
        report = run_transfer_eval(config.plan, originals, modified, confounders,
                                   registry, cache_dir=_cache_dir(config),
                                   workers=workers)
        _write_json(out / "report.json", {**_report_to_json(report), **_stamp(config),
                                          "variant": name})
        (out / "report.csv").write_text(
            transfer_report_csv(report, header_comment=_stamp_comment(config)),
            encoding="utf-8")
        (out / "report.md").write_text(
            transfer_report_markdown(report, title=f"Variant {name}",
                                     footer=_stamp_comment(config)),
            encoding="utf-8")
        plot_recall_curves(report, out / "recall_curves.svg", title=name)
        shown = ("n/a" if report.transfer_recall is None
                 else f"{report.transfer_recall:.2f}")
        print(f"[evaluate {name}] transfer recall {shown} -> {out}")
    return EXIT_OK


def cmd_report(config: RunConfig, overwrite: bool) -> int:
    reports: dict[str, TransferReport] = {}
    for variant in config.variants:
        payload_path = config.output_dir / "evaluate" / variant.name / "report.json"
        if payload_path.exists():
            payload = json.loads(payload_path.read_text(encoding="utf-8"))
            reports[variant.name] = _report_from_json(payload)
    if not reports:
        raise ConfigError("no evaluation reports found; run evaluate first")
    out = config.output_dir / "report"
    _guard_overwrite(out / "comparison.md", overwrite)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.md").write_text(
        comparison_markdown(reports, footer=_stamp_comment(config)), encoding="utf-8")
    (out / "comparison.csv").write_text(
        comparison_csv(reports, header_comment=_stamp_comment(config)), encoding="utf-8")
    print(f"[report] {len(reports)} variants -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privkit",
        description="Privacy-protect facial images and evaluate retrieval metrics.",
    )
    parser.add_argument("--config", required=True, help="path to the run config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="worker threads")
    parser.add_argument("--overwrite", action="store_true",
                        help="allow overwriting previous outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("extract", help="build dataset manifests from frames + detections")
    sub.add_parser("targets", help="pair originals with distant target images")
    protect_p = sub.add_parser("protect", help="run a protection variant")
    protect_p.add_argument("--variant", required=True)
    evaluate_p = sub.add_parser("evaluate", help="compute metric reports per variant")
    evaluate_p.add_argument("--variant", default=None)
    sub.add_parser("report", help="consolidate variant reports into comparison tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.command == "extract":
            return cmd_extract(config, args.overwrite, args.workers)
        if args.command == "targets":
            return cmd_targets(config, args.overwrite, args.workers)
        if args.command == "protect":
            return cmd_protect(config, args.variant, args.overwrite, args.workers)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.variant, args.overwrite, args.workers)
        if args.command == "report":
            return cmd_report(config, args.overwrite)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ContractViolation, RegistrationError) as exc:
        _emit_error(exc)
        return EXIT_CONFIG
    except PrivkitError as exc:
        _emit_error(exc)
        return EXIT_RUNTIME


def _emit_error(exc: Exception):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
