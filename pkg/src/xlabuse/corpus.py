"""On-disk embedding corpus: JSONL manifest plus one raw float32 blob per clip.

Format:
    manifest.jsonl  line 1: {"dim": D, "languages": [...], "provenance": "..."}
                    then one line per clip:
                    {"clip_id", "language", "label", "split", "frames", "blob"}
    <clip_id>.f32   little-endian float32, row-major [frames, dim]

Also provides a deterministic synthetic corpus generator for desk-scale runs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import derive_seed, make_rng

LABELS = ("non_abusive", "abusive")
SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.jsonl"

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """A corpus directory or record violates the format contract."""

    def __init__(self, message: str, clip_id: str | None = None):
        super().__init__(message)
        self.clip_id = clip_id


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    language: str
    label: str
    split: str
    frames: int
    dim: int
    blob_path: str

    def __post_init__(self):
        if not self.clip_id:
            raise CorpusError("empty clip_id")
        if self.label not in LABELS:
            raise CorpusError(f"clip {self.clip_id}: unknown label {self.label!r}", self.clip_id)
        if self.split not in SPLITS:
            raise CorpusError(f"clip {self.clip_id}: unknown split {self.split!r}", self.clip_id)
        if self.frames < 1:
            raise CorpusError(f"clip {self.clip_id}: frames must be >= 1", self.clip_id)
        if self.dim < 1:
            raise CorpusError(f"clip {self.clip_id}: dim must be >= 1", self.clip_id)

    @property
    def nbytes(self) -> int:
        return self.frames * self.dim * 4


@dataclass(frozen=True)
class EmbeddingTensor:
    """Per-clip frame matrix, shape [frames, dim], float32."""

    values: np.ndarray
    clip_id: str


@dataclass
class Corpus:
    """An immutable collection of clip records with access to their tensors.

    Tensors live either in memory (synthetic corpora) or on disk under
    ``root`` (ingested corpora); ``tensor()`` hides the difference.
    """

    dim: int
    languages: list[str]
    records: list[ClipRecord]
    provenance: str
    root: Path | None = None
    tensors: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {r.clip_id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def record(self, clip_id: str) -> ClipRecord:
        return self._by_id[clip_id]

    def count(self, language: str | None = None, label: str | None = None,
              split: str | None = None) -> int:
        return sum(
            1 for r in self.records
            if (language is None or r.language == language)
            and (label is None or r.label == label)
            and (split is None or r.split == split)
        )

    def degenerate_languages(self) -> list[str]:
        """Languages where some class has zero train records (flagged, not rejected)."""
        out = []
        for lang in self.languages:
            if any(self.count(lang, label, "train") == 0 for label in LABELS):
                out.append(lang)
        return out

    def tensor(self, clip_id: str) -> EmbeddingTensor:
        rec = self._by_id[clip_id]
        if clip_id in self.tensors:
            values = self.tensors[clip_id]
        elif self.root is not None:
            raw = np.fromfile(self.root / rec.blob_path, dtype="<f4")
            values = raw.reshape(rec.frames, rec.dim)
        else:
            raise CorpusError(f"clip {clip_id}: no tensor data attached", clip_id)
        return EmbeddingTensor(values=values, clip_id=clip_id)

    def validate(self) -> None:
        if len(self.languages) < 1:
            raise CorpusError("corpus must declare at least one language")
        seen: set[str] = set()
        for rec in self.records:
            if rec.clip_id in seen:
                raise CorpusError(f"duplicate clip_id {rec.clip_id!r}", rec.clip_id)
            seen.add(rec.clip_id)
            if rec.dim != self.dim:
                raise CorpusError(
                    f"clip {rec.clip_id}: dim {rec.dim} != corpus dim {self.dim}", rec.clip_id)
            if rec.language not in self.languages:
                raise CorpusError(
                    f"clip {rec.clip_id}: language {rec.language!r} not declared", rec.clip_id)
        degenerate = self.degenerate_languages()
        if degenerate:
            log.warning("degenerate languages (missing a train class): %s", ", ".join(degenerate))


def write_corpus(corpus: Corpus, directory: str | Path) -> Path:
    """Write manifest + blobs. Returns the manifest path."""
    corpus.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8") as fh:
        header = {"dim": corpus.dim, "languages": list(corpus.languages),
                  "provenance": corpus.provenance}
        fh.write(json.dumps(header) + "\n")
        for rec in corpus.records:
            values = corpus.tensor(rec.clip_id).values
            if values.shape != (rec.frames, rec.dim):
                raise CorpusError(
                    f"clip {rec.clip_id}: tensor shape {values.shape} does not match "
                    f"declared [{rec.frames}, {rec.dim}]", rec.clip_id)
            blob = directory / rec.blob_path
            blob.parent.mkdir(parents=True, exist_ok=True)
            values.astype("<f4").tofile(blob)
            row = {"clip_id": rec.clip_id, "language": rec.language, "label": rec.label,
                   "split": rec.split, "frames": rec.frames, "blob": rec.blob_path}
            fh.write(json.dumps(row) + "\n")
    return manifest


def read_corpus(directory: str | Path) -> Corpus:
    """Load and fully validate a corpus directory.

    Checks: manifest present, unique clip ids, blob sizes matching the
    declared [frames, dim], finite values in every blob.
    """
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise CorpusError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise CorpusError("manifest is empty")
    header = json.loads(lines[0])
    for key in ("dim", "languages", "provenance"):
        if key not in header:
            raise CorpusError(f"manifest header missing {key!r}")
    dim = int(header["dim"])
    if dim < 1:
        raise CorpusError("header dim must be >= 1")

    records = []
    seen: set[str] = set()
    for ln in lines[1:]:
        row = json.loads(ln)
        rec = ClipRecord(clip_id=row["clip_id"], language=row["language"], label=row["label"],
                         split=row["split"], frames=int(row["frames"]), dim=dim,
                         blob_path=row["blob"])
        if rec.clip_id in seen:
            raise CorpusError(f"duplicate clip_id {rec.clip_id!r}", rec.clip_id)
        seen.add(rec.clip_id)
        blob = directory / rec.blob_path
        if not blob.is_file():
            raise CorpusError(f"clip {rec.clip_id}: missing blob {rec.blob_path}", rec.clip_id)
        size = blob.stat().st_size
        if size != rec.nbytes:
            raise CorpusError(
                f"clip {rec.clip_id}: blob is {size} bytes, expected "
                f"{rec.frames}x{rec.dim}x4 = {rec.nbytes}", rec.clip_id)
        values = np.fromfile(blob, dtype="<f4")
        if not np.all(np.isfinite(values)):
            raise CorpusError(f"clip {rec.clip_id}: blob contains NaN/Inf", rec.clip_id)
        records.append(rec)

    corpus = Corpus(dim=dim, languages=list(header["languages"]), records=records,
                    provenance=str(header["provenance"]), root=directory)
    corpus.validate()
    return corpus


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic corpus: Gaussian clusters per (language, class)."""

    num_languages: int
    train_per_class: int
    test_per_class: int
    dim: int
    frames_range: tuple[int, int] = (4, 12)
    class_separation: float = 8.0
    language_separation: float = 16.0
    noise_sigma: float = 1.0

    def __post_init__(self):
        if self.num_languages < 1:
            raise ValueError("num_languages must be >= 1")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ValueError("counts must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        t_min, t_max = self.frames_range
        if t_min < 1 or t_max < t_min:
            raise ValueError("frames_range must satisfy 1 <= T_min <= T_max")
        if self.class_separation < 0 or self.language_separation < 0:
            raise ValueError("separations must be >= 0")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return v / n


def synth_corpus(spec: SynthSpec, seed: int) -> Corpus:
    """Deterministic synthetic corpus: per (language, class) a Gaussian cluster.

    Language centers sit ``language_separation`` from the origin in random
    directions; within a language the two class means are
    ``class_separation`` apart. Frames are i.i.d. N(mean, noise_sigma^2 I).
    """
    languages = [f"lang{i:02d}" for i in range(spec.num_languages)]
    records: list[ClipRecord] = []
    tensors: dict[str, np.ndarray] = {}
    t_min, t_max = spec.frames_range
    for lang in languages:
        rng = make_rng(derive_seed(seed, "synth", lang))
        center = _unit(rng.standard_normal(spec.dim)) * spec.language_separation
        class_dir = _unit(rng.standard_normal(spec.dim))
        for label, sign in (("abusive", +1.0), ("non_abusive", -1.0)):
            mean = center + sign * 0.5 * spec.class_separation * class_dir
            for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
                for i in range(count):
                    clip_id = f"{lang}_{label}_{split}_{i:04d}"
                    frames = int(rng.integers(t_min, t_max + 1))
                    values = mean + spec.noise_sigma * rng.standard_normal((frames, spec.dim))
                    tensors[clip_id] = values.astype(np.float32)
                    records.append(ClipRecord(
                        clip_id=clip_id, language=lang, label=label, split=split,
                        frames=frames, dim=spec.dim, blob_path=f"{clip_id}.f32"))
    return Corpus(dim=spec.dim, languages=languages, records=records,
                  provenance="synthetic", tensors=tensors)
