"""Dataset construction rules: frame selection, subsampling, confounders.

Video-derived identities contribute images only if at least five frames
pass the brightness and crop-geometry conditions while staying more than
ten frame indices apart pairwise; photo datasets are subsampled to exactly
five images per identity, dropping identities with fewer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, SelectionError
from .types import ImageRecord, Role

CROP_MIN_SIZE = 456
CROP_MARGIN = 100
BRIGHTNESS_MIN = 70.0
FRAME_MIN_GAP = 10
PER_IDENTITY = 5

# Integer Rec. 601 weights over 1000 so an all-white frame maps to exactly 255.
_LUMA = (299.0, 587.0, 114.0)


@dataclass(frozen=True)
class FrameCandidate:
    """One detector hit: a face box in one frame of one identity's video."""

    video_id: str
    identity: str
    frame_index: int
    crop_box: tuple[int, int, int, int]  # x, y, w, h
    brightness: float  # mean frame luma on the 0-255 scale

    def __post_init__(self):
        if self.frame_index < 0:
            raise ContractViolation("frame_index must be non-negative")
        x, y, w, h = (int(v) for v in self.crop_box)
        if w <= 0 or h <= 0:
            raise ContractViolation("crop box must have positive size")
        object.__setattr__(self, "crop_box", (x, y, w, h))
        if not 0.0 <= self.brightness <= 255.0:
            raise ContractViolation("brightness must lie in [0, 255]")


def compute_brightness(frame: np.ndarray) -> float:
    """Mean luma of a frame, scaled to [0, 255].

    Uses Rec. 601 weights for 3-channel frames; single-channel frames are
    treated as luma directly. Computed on the full frame, not the crop.
    """
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise ContractViolation("frame must be a non-empty H x W x C array")
    if arr.shape[2] == 1:
        luma = arr[..., 0]
    elif arr.shape[2] == 3:
        r, g, b = _LUMA
        luma = (r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]) / 1000.0
    else:
        raise ContractViolation(f"expected 1 or 3 channels, got {arr.shape[2]}")
    return float(255.0 * luma.mean())


def crop_box_fits(crop_box, frame_width: int, frame_height: int,
                  min_size: int = CROP_MIN_SIZE, margin: int = CROP_MARGIN) -> bool:
    """Whether the box is at least min_size square and can be expanded by
    ``margin`` pixels on every side without leaving the frame."""
    x, y, w, h = (int(v) for v in crop_box)
    if w < min_size or h < min_size:
        return False
    return (x - margin >= 0 and y - margin >= 0
            and x + w + margin <= frame_width
            and y + h + margin <= frame_height)


@dataclass(frozen=True)
class FrameSelection:
    """Outcome of frame selection for one identity; rejection is a value."""

    frames: tuple[FrameCandidate, ...]
    rejection: str | None = None

    @property
    def accepted(self) -> bool:
        return self.rejection is None


def _max_spaced(indices: Sequence[int], min_gap: int) -> int:
    """Largest subset of sorted indices with pairwise difference > min_gap.

    For a gap constraint on a line, earliest-first greedy is optimal."""
    count, last = 0, None
    for idx in indices:
        if last is None or idx - last > min_gap:
            count += 1
            last = idx
    return count


def select_frames(candidates: Sequence[FrameCandidate], *,
                  min_gap: int = FRAME_MIN_GAP,
                  brightness_min: float = BRIGHTNESS_MIN,
                  count: int = PER_IDENTITY,
                  seed: int = 0,
                  frame_size: tuple[int, int] | None = None) -> FrameSelection:
    """Pick ``count`` frames for one identity, pairwise more than ``min_gap``
    indices apart, each bright enough and (when ``frame_size`` is given)
    with a geometrically valid crop box.

    When more frames qualify than needed, the choice is a seeded uniform pick
    among candidates that keep a feasible completion, so rich videos are never
    spuriously rejected. Output order follows frame index and is invariant to
    input ordering.
    """
    eligible = [c for c in candidates if c.brightness >= brightness_min]
    if frame_size is not None:
        width, height = frame_size
        eligible = [c for c in eligible if crop_box_fits(c.crop_box, width, height)]
    eligible.sort(key=lambda c: (c.frame_index, c.video_id))
    if len(eligible) < count:
        return FrameSelection(frames=(), rejection=(
            f"only {len(eligible)} of {len(candidates)} candidates pass the "
            f"brightness/crop conditions, need {count}"
        ))
    if _max_spaced([c.frame_index for c in eligible], min_gap) < count:
        return FrameSelection(frames=(), rejection=(
            f"no {count} frames with pairwise index gap > {min_gap}"
        ))

    rng = np.random.default_rng(seed)
    chosen: list[FrameCandidate] = []
    pool = list(eligible)
    for _ in range(count):
        need = count - len(chosen) - 1
        options = []
        for cand in pool:
            if any(abs(cand.frame_index - c.frame_index) <= min_gap for c in chosen):
                continue
            rest = [
                p.frame_index for p in pool
                if p is not cand
                and abs(p.frame_index - cand.frame_index) > min_gap
                and all(abs(p.frame_index - c.frame_index) > min_gap for c in chosen)
            ]
            if _max_spaced(rest, min_gap) >= need:
                options.append(cand)
        pick = options[int(rng.integers(len(options)))]
        chosen.append(pick)
        pool.remove(pick)
    chosen.sort(key=lambda c: c.frame_index)
    return FrameSelection(frames=tuple(chosen))


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    identity: str
    source: str
    role: Role

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class DatasetManifest:
    """Named list of dataset records with per-identity accounting."""

    name: str
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ContractViolation("manifest image ids must be unique")

    def by_role(self, role: Role) -> tuple[ManifestRecord, ...]:
        role = Role(role)
        return tuple(r for r in self.records if r.role is role)

    def per_identity_count(self, role: Role = Role.ORIGINAL) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.by_role(role):
            counts[r.identity] = counts.get(r.identity, 0) + 1
        return counts

    def identities(self, role: Role) -> set[str]:
        return {r.identity for r in self.by_role(role)}


def subsample_identities(images: Sequence[ImageRecord], per_identity: int = PER_IDENTITY,
                         seed: int = 0, name: str = "subsample") -> DatasetManifest:
    """Keep exactly ``per_identity`` seeded-uniform images per identity,
    dropping identities with fewer images entirely."""
    if per_identity < 1:
        raise ContractViolation("per_identity must be at least 1")
    groups: dict[str, list[ImageRecord]] = {}
    for img in images:
        groups.setdefault(img.identity, []).append(img)
    rng = np.random.default_rng(seed)
    records = []
    for identity in sorted(groups):
        members = sorted(groups[identity], key=lambda img: img.id)
        if len(members) < per_identity:
            continue
        picks = rng.choice(len(members), size=per_identity, replace=False)
        for idx in sorted(int(i) for i in picks):
            img = members[idx]
            records.append(ManifestRecord(image_id=img.id, identity=img.identity,
                                          source=img.source, role=Role.ORIGINAL))
    return DatasetManifest(name=name, records=tuple(records))


def select_confounders(pool: Sequence[ManifestRecord], primary: DatasetManifest,
                       count: int, seed: int = 0) -> tuple[ManifestRecord, ...]:
    """Seeded draw of confounder records from identities disjoint from the
    primary set; the count is capped at one fifth of the primary records."""
    n_primary = len(primary.by_role(Role.ORIGINAL))
    if count * 5 > n_primary:
        raise ContractViolation(
            f"{count} confounders exceed one fifth of {n_primary} primary records"
        )
    primary_identities = primary.identities(Role.ORIGINAL)
    eligible = sorted(
        (r for r in pool if r.identity not in primary_identities),
        key=lambda r: r.image_id,
    )
    if len(eligible) < count:
        raise SelectionError(
            f"confounder pool has {len(eligible)} eligible records, need {count}"
        )
    rng = np.random.default_rng(seed)
    picks = sorted(int(i) for i in rng.choice(len(eligible), size=count, replace=False))
    return tuple(
        ManifestRecord(image_id=eligible[i].image_id, identity=eligible[i].identity,
                       source=eligible[i].source, role=Role.CONFOUNDER)
        for i in picks
    )


def validate_manifest(manifest: DatasetManifest,
                      expect_per_identity: int | None = None) -> list[str]:
    """Re-check manifest invariants from scratch; returns human-readable
    problems (empty list means valid)."""
    problems = []
    counts = manifest.per_identity_count(Role.ORIGINAL)
    if expect_per_identity is not None:
        for identity, n in sorted(counts.items()):
            if n != expect_per_identity:
                problems.append(
                    f"identity {identity!r} has {n} primary records, "
                    f"expected {expect_per_identity}"
                )
    overlap = manifest.identities(Role.ORIGINAL) & manifest.identities(Role.CONFOUNDER)
    if overlap:
        problems.append(f"confounder identities overlap primary: {sorted(overlap)[:5]}")
    n_conf = len(manifest.by_role(Role.CONFOUNDER))
    n_primary = len(manifest.by_role(Role.ORIGINAL))
    if n_conf * 5 > n_primary:
        problems.append(f"{n_conf} confounders exceed one fifth of {n_primary} primary records")
    return problems


def save_manifest(path, manifest: DatasetManifest, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "name": manifest.name,
        "records": [
            {"image_id": r.image_id, "identity": r.identity,
             "source": r.source, "role": r.role.value}
            for r in manifest.records
        ],
        "per_identity_count": manifest.per_identity_count(Role.ORIGINAL),
    }
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(path) -> DatasetManifest:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    records = tuple(
        ManifestRecord(image_id=r["image_id"], identity=r["identity"],
                       source=r["source"], role=Role(r["role"]))
        for r in payload["records"]
    )
    return DatasetManifest(name=payload["name"], records=records)
