"""Extraction pipeline: annotations + audio -> embedding corpus directory.

Output format (the consumer contract):
    manifest.jsonl  line 1: {"dim": D, "languages": [...], "provenance": "..."}
                    then per clip: {"clip_id", "language", "label", "split",
                                    "frames", "blob"}
    <clip_id>.f32   little-endian float32, row-major [frames, dim]

Bookkeeping on the side:
    parts.jsonl     append-only log of finished blobs (frames + sha256),
                    used to skip byte-identical work on re-runs
    skipped.jsonl   clips whose audio could not be decoded, with reasons
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import AnnotationRow, load_annotations
from .audio import TARGET_SAMPLE_RATE, AudioDecodeError, load_audio
from .encoders import SUPPORTED_MODELS, get_encoder

MANIFEST_NAME = "manifest.jsonl"
PARTS_NAME = "parts.jsonl"
SKIPPED_NAME = "skipped.jsonl"

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionJob:
    audio_root: Path
    annotations: Path
    model_id: str
    out_dir: Path
    batch_size: int = 8
    backend: str = "torch"

    def __post_init__(self):
        if self.model_id not in SUPPORTED_MODELS:
            raise ValueError(f"unknown model {self.model_id!r}; supported: "
                             f"{', '.join(sorted(SUPPORTED_MODELS))}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    language: str
    label: str
    split: str
    frames: int
    blob: str


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_parts(path: Path) -> dict[str, dict]:
    parts: dict[str, dict] = {}
    if path.is_file():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entry = json.loads(line)
                    parts[entry["clip_id"]] = entry
    return parts


def write_manifest(out_dir: Path, dim: int, provenance: str, entries: list[ClipEntry]) -> Path:
    """Manifest in the consumer's exact schema; languages listed sorted."""
    languages = sorted({e.language for e in entries})
    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": dim, "languages": languages,
                             "provenance": provenance}) + "\n")
        for e in entries:
            fh.write(json.dumps({"clip_id": e.clip_id, "language": e.language,
                                 "label": e.label, "split": e.split, "frames": e.frames,
                                 "blob": e.blob}) + "\n")
    return manifest


def extract(job: ExtractionJob) -> Path:
    """Run the encoder over every annotated clip and emit the corpus directory.

    Undecodable clips are recorded in skipped.jsonl and excluded from the
    manifest; a missing audio file is a hard error (annotation/audio
    mismatch). Re-runs skip clips whose blob already exists and still matches
    its recorded checksum.
    """
    rows = load_annotations(job.annotations)
    audio_root = Path(job.audio_root)
    missing = [r.clip_id for r in rows if not (audio_root / r.audio_path).is_file()]
    if missing:
        raise ExtractionError(
            f"{len(missing)} annotation row(s) have no audio file, e.g. {missing[:5]}")

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = get_encoder(job.model_id, job.backend)
    parts = _load_parts(out_dir / PARTS_NAME)

    entries: list[ClipEntry] = []
    skipped: list[dict] = []
    reused = 0
    with open(out_dir / PARTS_NAME, "a", encoding="utf-8") as parts_fh:
        for batch in _batches(rows, job.batch_size):
            pending: list[AnnotationRow] = []
            clips: list[np.ndarray] = []
            for row in batch:
                blob = out_dir / f"{row.clip_id}.f32"
                prior = parts.get(row.clip_id)
                if prior and blob.is_file() and _sha256_file(blob) == prior["sha256"]:
                    reused += 1
                    entries.append(ClipEntry(clip_id=row.clip_id, language=row.language,
                                             label=row.label, split=row.split,
                                             frames=int(prior["frames"]),
                                             blob=blob.name))
                    continue
                try:
                    clips.append(load_audio(audio_root / row.audio_path))
                    pending.append(row)
                except AudioDecodeError as exc:
                    log.warning("skipping %s: %s", row.clip_id, exc)
                    skipped.append({"clip_id": row.clip_id, "reason": str(exc)})
            if not pending:
                continue
            for row, states in zip(pending, encoder.encode_many(clips, TARGET_SAMPLE_RATE)):
                blob = out_dir / f"{row.clip_id}.f32"
                states.astype("<f4").tofile(blob)
                entry = {"clip_id": row.clip_id, "frames": int(states.shape[0]),
                         "sha256": _sha256_file(blob)}
                parts_fh.write(json.dumps(entry) + "\n")
                entries.append(ClipEntry(clip_id=row.clip_id, language=row.language,
                                         label=row.label, split=row.split,
                                         frames=int(states.shape[0]), blob=blob.name))

    with open(out_dir / SKIPPED_NAME, "w", encoding="utf-8") as fh:
        for item in skipped:
            fh.write(json.dumps(item) + "\n")

    write_manifest(out_dir, encoder.dim, encoder.provenance, entries)
    log.info("extracted %d clips (%d reused, %d skipped) -> %s",
             len(entries), reused, len(skipped), out_dir)
    return out_dir


def _batches(rows: list[AnnotationRow], size: int):
    for start in range(0, len(rows), size):
        yield rows[start:start + size]
