"""Protection optimizers: latent-space generation and the pixel-cloak baseline.

Both methods run a fixed number of Adam steps (betas 0.9/0.999, eps 1e-8)
and record a loss trace with one entry per iteration plus the final state.
Runs are deterministic given the job seed; a NaN loss aborts the job and
surfaces the partial trace instead of silently clipping.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .backends import GeneratorBackend, PerceptualDistance
from .errors import ConfigError, ContractViolation, NumericError
from .loss import LossParts, privacy_loss, privacy_loss_grad
from .registry import BackendRegistry
from .types import Hyperparameters, ImageRecord, Role, l2_distances


class Method(str, Enum):
    PRIVACYGAN = "privacygan"
    PIXEL_CLOAK = "pixel_cloak"
    COMPOSITION = "composition"


@dataclass(frozen=True)
class ProtectionJob:
    """One (original, target, backends, hyperparameters) optimization instance."""

    original: ImageRecord
    target: ImageRecord
    embeddings: tuple[str, ...]
    perceptual: str
    hyper: Hyperparameters
    method: Method
    registry: BackendRegistry
    generator: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "embeddings", tuple(self.embeddings))
        if not self.embeddings:
            raise ContractViolation("job needs at least one embedding backend")
        for name in self.embeddings:
            backend = self.registry.embedding(name)
            if not backend.supports_gradient:
                raise ConfigError(f"embedding backend {name!r} does not support gradients")
        perceptual = self.registry.perceptual(self.perceptual)
        if self.method is Method.PRIVACYGAN:
            if self.generator is None:
                raise ContractViolation("privacygan jobs require a generator")
            generator = self.registry.generator(self.generator)
            # Fail before iteration 0, not at the first backward pass.
            if type(generator).generate_vjp is GeneratorBackend.generate_vjp:
                raise ConfigError(
                    f"generator {self.generator!r} does not support gradients"
                )
            if type(perceptual).grad_first is PerceptualDistance.grad_first:
                raise ConfigError(
                    f"perceptual distance {self.perceptual!r} does not support gradients"
                )

    def resolve(self):
        embeddings = [self.registry.embedding(n) for n in self.embeddings]
        perceptual = self.registry.perceptual(self.perceptual)
        generator = self.registry.generator(self.generator) if self.generator else None
        return generator, embeddings, perceptual


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    total: float
    perceptual: float
    embedding: float


@dataclass(frozen=True)
class ProtectionResult:
    job: ProtectionJob
    output: ImageRecord
    loss_trace: tuple[TracePoint, ...]
    method_chain: tuple[str, ...]
    final_latent: np.ndarray | None = None
    final_cloak_linf: float | None = None

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1].total


class Adam:
    """First-order adaptive update with bias correction."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _trace_point(i: int, parts: LossParts) -> TracePoint:
    return TracePoint(i, parts.total, parts.perceptual, parts.embedding)


def _check_finite(parts: LossParts, trace: list[TracePoint]):
    if not np.isfinite(parts.total):
        raise NumericError("loss diverged to a non-finite value", trace=trace)


def _with_trace(exc: NumericError, trace: list[TracePoint]) -> NumericError:
    if not exc.trace:
        exc.trace = tuple(trace)
    return exc


def privacygan_protect(job: ProtectionJob) -> ProtectionResult:
    """Optimize a latent code so the generated image stays perceptually close
    to the original while its embeddings move toward the target's."""
    if job.method is not Method.PRIVACYGAN:
        raise ContractViolation(f"expected a privacygan job, got {job.method.value!r}")
    generator, embeddings, perceptual = job.resolve()
    hyper = job.hyper
    z = np.asarray(generator.sample_latent(hyper.seed), dtype=np.float64)
    adam = Adam(hyper.learning_rate)
    trace: list[TracePoint] = []
    try:
        for i in range(hyper.num_iterations):
            pixels = generator.generate(z)
            parts, dpixels = privacy_loss_grad(pixels, job.original.pixels, job.target,
                                               embeddings, perceptual, hyper.K)
            _check_finite(parts, trace)
            trace.append(_trace_point(i, parts))
            z = adam.step(z, generator.generate_vjp(z, dpixels))
        pixels = generator.generate(z)
        parts = privacy_loss(pixels, job.original.pixels, job.target,
                             embeddings, perceptual, hyper.K)
        _check_finite(parts, trace)
        trace.append(_trace_point(hyper.num_iterations, parts))
    except NumericError as exc:
        raise _with_trace(exc, trace)
    output = ImageRecord(
        id=job.original.id, identity=job.original.identity, pixels=pixels,
        role=Role.MODIFIED, source=f"privacygan:{generator.name}",
    )
    return ProtectionResult(job=job, output=output, loss_trace=tuple(trace),
                            method_chain=(Method.PRIVACYGAN.value,), final_latent=z)


def _cloak_loss_grad(cloak, original, target, embeddings, rho, want_grad=True):
    clamped = np.clip(cloak, -rho, rho)
    raw = original + clamped
    published = np.clip(raw, 0.0, 1.0)
    total = 0.0
    grad = np.zeros_like(cloak) if want_grad else None
    for backend in embeddings:
        emb = np.asarray(backend.embed_pixels(published), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(emb)):
            raise NumericError("non-finite embedding output", backend=backend.name)
        target_vec = backend.embed(target).vector
        dist = float(l2_distances(emb[None, :], target_vec)[0])
        total += dist
        if want_grad and dist > 0.0:
            dpub = backend.embed_vjp(published, (emb - target_vec) / dist)
            grad = grad + dpub
    if want_grad:
        clip_mask = (raw > 0.0) & (raw < 1.0)
        clamp_mask = np.abs(cloak) < rho if rho > 0 else np.zeros_like(cloak, dtype=bool)
        grad = grad * clip_mask * clamp_mask
    return total, published, grad


def pixel_cloak_protect(job: ProtectionJob) -> ProtectionResult:
    """Optimize bounded per-pixel noise pulling the published image's
    embeddings toward the target (the data-poisoning baseline)."""
    if job.method is not Method.PIXEL_CLOAK:
        raise ContractViolation(f"expected a pixel_cloak job, got {job.method.value!r}")
    _, embeddings, _ = job.resolve()
    hyper = job.hyper
    original = job.original.pixels
    cloak = np.zeros_like(original)
    adam = Adam(hyper.learning_rate)
    trace: list[TracePoint] = []
    try:
        for i in range(hyper.num_iterations):
            total, _, grad = _cloak_loss_grad(cloak, original, job.target,
                                              embeddings, hyper.rho)
            parts = LossParts(total=total, perceptual=0.0, embedding=total)
            _check_finite(parts, trace)
            trace.append(_trace_point(i, parts))
            cloak = adam.step(cloak, grad)
        total, published, _ = _cloak_loss_grad(cloak, original, job.target, embeddings,
                                               hyper.rho, want_grad=False)
        parts = LossParts(total=total, perceptual=0.0, embedding=total)
        _check_finite(parts, trace)
        trace.append(_trace_point(hyper.num_iterations, parts))
    except NumericError as exc:
        raise _with_trace(exc, trace)
    output = ImageRecord(
        id=job.original.id, identity=job.original.identity, pixels=published,
        role=Role.MODIFIED, source="pixel_cloak",
    )
    linf = float(np.abs(published - original).max())
    return ProtectionResult(job=job, output=output, loss_trace=tuple(trace),
                            method_chain=(Method.PIXEL_CLOAK.value,), final_cloak_linf=linf)


def protect(job: ProtectionJob) -> ProtectionResult:
    """Dispatch a job to its method's optimizer."""
    if job.method is Method.PRIVACYGAN:
        return privacygan_protect(job)
    if job.method is Method.PIXEL_CLOAK:
        return pixel_cloak_protect(job)
    raise ContractViolation(
        "composition jobs are built with compose_protect, not dispatched directly"
    )


def compose_protect(first: ProtectionResult, second_template: ProtectionJob) -> ProtectionResult:
    """Run a second protection method on top of a first method's output.

    The second job's original is replaced by the first result's output; the
    template's target is kept (callers re-select beforehand if they want a
    fresh one). The returned result's chain lists all stages in order.
    """
    if first.output.pixels.shape != second_template.original.pixels.shape:
        raise ContractViolation(
            f"stage output shape {first.output.pixels.shape} does not match "
            f"second stage original shape {second_template.original.pixels.shape}"
        )
    second_job = replace(second_template, original=first.output)
    second = protect(second_job)
    return replace(second, method_chain=first.method_chain + second.method_chain)


def save_loss_trace(path, result: ProtectionResult, header_comment: str | None = None) -> Path:
    """Loss trace as CSV: iteration, total, perceptual, embedding."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "perceptual", "embedding"])
        for pt in result.loss_trace:
            writer.writerow([pt.iteration, repr(pt.total), repr(pt.perceptual),
                             repr(pt.embedding)])
    return path


def run_manifest(result: ProtectionResult, extra: dict | None = None) -> dict:
    """JSON-serializable record of everything needed to reproduce a job."""
    job = result.job
    manifest = {
        "image_id": job.original.id,
        "identity": job.original.identity,
        "target_id": job.target.id,
        "method_chain": list(result.method_chain),
        "generator": job.generator,
        "embeddings": list(job.embeddings),
        "perceptual": job.perceptual,
        "hyperparameters": {
            "K": job.hyper.K,
            "num_iterations": job.hyper.num_iterations,
            "learning_rate": job.hyper.learning_rate,
            "batch_size": job.hyper.batch_size,
            "rho": job.hyper.rho,
            "seed": job.hyper.seed,
        },
        "update_rule": {"name": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "final_loss": result.final_loss,
        "final_perceptual": result.loss_trace[-1].perceptual,
        "final_embedding": result.loss_trace[-1].embedding,
        "final_cloak_linf": result.final_cloak_linf,
    }
    if extra:
        manifest.update(extra)
    return manifest


def save_run_manifest(path, result: ProtectionResult, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(run_manifest(result, extra), indent=2, sort_keys=True),
                    encoding="utf-8")
    return path
