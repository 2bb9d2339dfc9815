"""Annotation CSV: one row per clip mapping it to language, label, split, audio file.

Columns: clip_id, language, label, split, and optionally audio_path (relative
to the audio root; defaults to <clip_id>.wav).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

LABELS = ("non_abusive", "abusive")
SPLITS = ("train", "test")
REQUIRED_COLUMNS = ("clip_id", "language", "label", "split")


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRow:
    clip_id: str
    language: str
    label: str
    split: str
    audio_path: str


def load_annotations(path: str | Path) -> list[AnnotationRow]:
    path = Path(path)
    if not path.is_file():
        raise AnnotationError(f"annotation file not found: {path}")
    rows: list[AnnotationRow] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise AnnotationError(f"annotation file missing columns: {', '.join(missing)}")
        for lineno, raw in enumerate(reader, start=2):
            clip_id = (raw["clip_id"] or "").strip()
            if not clip_id:
                raise AnnotationError(f"line {lineno}: empty clip_id")
            if clip_id in seen:
                raise AnnotationError(f"line {lineno}: duplicate clip_id {clip_id!r}")
            seen.add(clip_id)
            label = raw["label"].strip()
            if label not in LABELS:
                raise AnnotationError(f"line {lineno}: unknown label {label!r}")
            split = raw["split"].strip()
            if split not in SPLITS:
                raise AnnotationError(f"line {lineno}: unknown split {split!r}")
            audio_path = (raw.get("audio_path") or "").strip() or f"{clip_id}.wav"
            rows.append(AnnotationRow(clip_id=clip_id, language=raw["language"].strip(),
                                      label=label, split=split, audio_path=audio_path))
    if not rows:
        raise AnnotationError(f"annotation file has no rows: {path}")
    return rows
