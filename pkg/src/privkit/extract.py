"""Face-crop extraction from pre-decoded video frames.

Inputs are a directory of frame PNGs laid out as ``<frames_dir>/<video_id>/
<frame_index>.png`` plus a detector-output file of UTF-8 JSON lines
``{"video_id", "frame_index", "box": [x, y, w, h], "identity"?}``. Face
detection itself is out of scope; any detector that emits this file plugs
in. Identity defaults to the video id (one person per video).

Outputs are PNG crops named ``{identity}_{frame_index}.png`` plus a dataset
manifest covering primary and confounder records. Frames are streamed, not
held: each is decoded for screening and again only if one of its crops is
selected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import imageio
from .dataset import (
    DatasetManifest,
    FrameCandidate,
    FrameSelection,
    ManifestRecord,
    compute_brightness,
    crop_box_fits,
    select_confounders,
    select_frames,
)
from .errors import ConfigError
from .types import Role


@dataclass(frozen=True)
class Detection:
    video_id: str
    frame_index: int
    box: tuple[int, int, int, int]
    identity: str


def read_detections(path) -> list[Detection]:
    detections = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            detections.append(Detection(
                video_id=str(obj["video_id"]),
                frame_index=int(obj["frame_index"]),
                box=tuple(int(v) for v in obj["box"]),
                identity=str(obj.get("identity") or obj["video_id"]),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad detection record at line {lineno}: {exc}") from exc
    return detections


def frame_path(frames_dir, video_id: str, frame_index: int) -> Path:
    return Path(frames_dir) / video_id / f"{frame_index}.png"


def _child_seed(seed: int, label: str) -> int:
    digest = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")
    return int(np.random.SeedSequence([seed, digest]).generate_state(1)[0])


class _FrameReader:
    """Loads frames on demand, keeping only the most recent one around.

    Detections arrive grouped by video and frame, so a single-slot cache
    avoids re-decoding when several boxes share a frame without holding the
    whole dataset in memory.
    """

    def __init__(self, frames_dir):
        self.frames_dir = Path(frames_dir)
        self._key = None
        self._pixels = None

    def load(self, video_id: str, frame_index: int) -> np.ndarray | None:
        key = (video_id, frame_index)
        if key != self._key:
            path = frame_path(self.frames_dir, video_id, frame_index)
            if not path.exists():
                return None
            self._key = key
            self._pixels = imageio.load_png(path)
        return self._pixels


@dataclass
class ExtractionReport:
    """Per-identity outcomes plus counts, returned alongside the manifest."""

    accepted: list[str]
    rejected: dict[str, str]
    n_primary: int
    n_confounders: int

    def to_json(self) -> dict:
        return {
            "accepted_identities": sorted(self.accepted),
            "rejected_identities": dict(sorted(self.rejected.items())),
            "n_primary_records": self.n_primary,
            "n_confounder_records": self.n_confounders,
        }


def extract_dataset(frames_dir, detections_path, output_dir, *,
                    per_identity: int = 5, confounder_count: int = 0,
                    max_primary: int | None = None, seed: int = 0,
                    dataset_name: str = "extracted") -> tuple[DatasetManifest, ExtractionReport]:
    """Run the full extraction: candidate screening, frame selection, primary
    and confounder assembly, crop writing.

    Raises ConfigError when no usable detections exist.
    """
    detections = read_detections(detections_path)
    if not detections:
        raise ConfigError("no videos found: detector output is empty")

    by_identity: dict[str, list[Detection]] = {}
    for det in detections:
        by_identity.setdefault(det.identity, []).append(det)

    reader = _FrameReader(frames_dir)
    selections: dict[str, FrameSelection] = {}
    rejected: dict[str, str] = {}
    for identity in sorted(by_identity):
        candidates = []
        missing = 0
        for det in sorted(by_identity[identity],
                          key=lambda d: (d.video_id, d.frame_index)):
            frame = reader.load(det.video_id, det.frame_index)
            if frame is None:
                missing += 1
                continue
            height, width = frame.shape[0], frame.shape[1]
            if not crop_box_fits(det.box, width, height):
                continue
            candidates.append(FrameCandidate(
                video_id=det.video_id, identity=identity,
                frame_index=det.frame_index, crop_box=det.box,
                brightness=compute_brightness(frame),
            ))
        if not candidates:
            rejected[identity] = (
                f"no candidates with valid geometry ({missing} frames missing on disk)"
            )
            continue
        selection = select_frames(candidates, count=per_identity,
                                  seed=_child_seed(seed, identity))
        if selection.accepted:
            selections[identity] = selection
        else:
            rejected[identity] = selection.rejection

    if not selections:
        raise ConfigError("no videos found: no identity passed the selection conditions")

    accepted = sorted(selections)
    rng = np.random.default_rng(seed)
    if max_primary is not None and max_primary < len(accepted):
        picks = sorted(int(i) for i in rng.choice(len(accepted), size=max_primary,
                                                  replace=False))
        primary_identities = [accepted[i] for i in picks]
    else:
        primary_identities = accepted
    primary_set = set(primary_identities)
    leftover = [i for i in accepted if i not in primary_set]

    output_dir = Path(output_dir)
    crops_dir = output_dir / "crops"

    def _records_for(identities: Sequence[str], role: Role) -> list[ManifestRecord]:
        return [
            ManifestRecord(
                image_id=f"{identity}_{cand.frame_index}", identity=identity,
                source=str(Path("crops") / f"{identity}_{cand.frame_index}.png"),
                role=role,
            )
            for identity in identities
            for cand in selections[identity].frames
        ]

    primary_records = _records_for(primary_identities, Role.ORIGINAL)
    manifest = DatasetManifest(name=dataset_name, records=tuple(primary_records))

    confounder_records: tuple[ManifestRecord, ...] = ()
    if confounder_count > 0:
        pool = _records_for(leftover, Role.CONFOUNDER)
        confounder_records = select_confounders(pool, manifest, confounder_count,
                                                seed=seed)
        manifest = DatasetManifest(name=dataset_name,
                                   records=tuple(primary_records) + confounder_records)

    # Write crops for every record, streaming frames once more.
    for record in manifest.records:
        identity = record.identity
        frame_index = int(record.image_id.rsplit("_", 1)[1])
        cand = next(c for c in selections[identity].frames
                    if c.frame_index == frame_index)
        frame = reader.load(cand.video_id, cand.frame_index)
        x, y, w, h = cand.crop_box
        imageio.save_png(crops_dir / f"{identity}_{frame_index}.png",
                         frame[y:y + h, x:x + w])

    report = ExtractionReport(
        accepted=accepted, rejected=rejected,
        n_primary=len(primary_records), n_confounders=len(confounder_records),
    )
    return manifest, report
