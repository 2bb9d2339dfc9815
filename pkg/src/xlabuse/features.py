"""Clip-level feature aggregation: temporal mean or per-frame L2-norm then mean.

A frame matrix [T, D] collapses to one length-D vector per clip. Accumulation
runs in float64 over the float32 inputs so test oracles can assert 1e-12
agreement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import LABELS, Corpus, EmbeddingTensor
from .model import Batch

METHODS = ("temporal_mean", "l2_norm")
FEATURES_MANIFEST = "features.jsonl"
ZERO_NORM_THRESHOLD = 1e-12

log = logging.getLogger(__name__)


class EmptyTensorError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # float64, shape (D,)
    clip_id: str
    method: str
    zero_frames: int = 0  # frames that had ~zero norm and contributed zeros


@dataclass(frozen=True)
class ClipInfo:
    language: str
    label: str
    split: str


def temporal_mean(tensor: EmbeddingTensor) -> FeatureVector:
    """Per-column mean over the frame axis."""
    if tensor.values.shape[0] == 0:
        raise EmptyTensorError(f"clip {tensor.clip_id}: tensor has no frames")
    values = tensor.values.astype(np.float64, copy=False).mean(axis=0)
    return FeatureVector(values=values, clip_id=tensor.clip_id, method="temporal_mean")


def unit_normalize_frames(tensor: EmbeddingTensor) -> tuple[np.ndarray, int]:
    """Each frame divided by its Euclidean norm; ~zero-norm frames become zeros.

    Returns the normalized [T, D] float64 matrix and the zero-frame count.
    Zero-norm frames (digital silence) get a zero vector rather than an
    epsilon-inflated arbitrary direction, so the subsequent mean is unbiased.
    """
    frames = tensor.values.astype(np.float64, copy=False)
    norms = np.sqrt(np.einsum("td,td->t", frames, frames))
    ok = norms >= ZERO_NORM_THRESHOLD
    out = np.zeros_like(frames)
    if ok.any():
        out[ok] = frames[ok] / norms[ok, None]
    zero_frames = int((~ok).sum())
    return out, zero_frames


def l2_norm_mean(tensor: EmbeddingTensor) -> FeatureVector:
    """Unit-normalize every frame, then take the per-column mean."""
    if tensor.values.shape[0] == 0:
        raise EmptyTensorError(f"clip {tensor.clip_id}: tensor has no frames")
    normalized, zero_frames = unit_normalize_frames(tensor)
    if zero_frames:
        log.warning("clip %s: %d zero-norm frame(s) contributed zero vectors",
                    tensor.clip_id, zero_frames)
    return FeatureVector(values=normalized.mean(axis=0), clip_id=tensor.clip_id,
                         method="l2_norm", zero_frames=zero_frames)


_AGGREGATORS = {"temporal_mean": temporal_mean, "l2_norm": l2_norm_mean}


@dataclass
class FeatureSet:
    """One aggregated vector per corpus clip, keyed by clip_id."""

    method: str
    dim: int
    languages: list[str]
    provenance: str
    vectors: dict[str, FeatureVector]
    info: dict[str, ClipInfo]
    errors: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.vectors)

    def clip_ids(self, language: str | None = None, label: str | None = None,
                 split: str | None = None) -> list[str]:
        return sorted(
            cid for cid, info in self.info.items()
            if (language is None or info.language == language)
            and (label is None or info.label == label)
            and (split is None or info.split == split)
        )

    def batch(self, ids: list[str] | tuple[str, ...]) -> Batch:
        inputs = np.stack([self.vectors[cid].values for cid in ids])
        targets = np.array([LABELS.index(self.info[cid].label) for cid in ids], dtype=np.int64)
        return Batch(inputs=inputs, targets=targets)

    def matrix(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.vectors[cid].values for cid in ids])


def normalize_corpus(corpus: Corpus, method: str) -> FeatureSet:
    """Aggregate every clip; per-clip failures are collected, not fail-fast."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    aggregate = _AGGREGATORS[method]
    vectors: dict[str, FeatureVector] = {}
    info: dict[str, ClipInfo] = {}
    errors: list[tuple[str, str]] = []
    for rec in corpus.records:
        try:
            vectors[rec.clip_id] = aggregate(corpus.tensor(rec.clip_id))
            info[rec.clip_id] = ClipInfo(language=rec.language, label=rec.label, split=rec.split)
        except Exception as exc:  # collected into the report
            errors.append((rec.clip_id, str(exc)))
    return FeatureSet(method=method, dim=corpus.dim, languages=list(corpus.languages),
                      provenance=corpus.provenance, vectors=vectors, info=info, errors=errors)


def write_features(fs: FeatureSet, directory: str | Path) -> Path:
    """features.jsonl mirror of the corpus manifest plus one .fv.f64 blob per clip."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / FEATURES_MANIFEST
    with open(manifest, "w", encoding="utf-8") as fh:
        header = {"dim": fs.dim, "method": fs.method, "languages": list(fs.languages),
                  "provenance": fs.provenance}
        fh.write(json.dumps(header) + "\n")
        for cid in sorted(fs.vectors):
            vec, meta = fs.vectors[cid], fs.info[cid]
            blob_name = f"{cid}.fv.f64"
            vec.values.astype("<f8").tofile(directory / blob_name)
            row = {"clip_id": cid, "language": meta.language, "label": meta.label,
                   "split": meta.split, "blob": blob_name}
            fh.write(json.dumps(row) + "\n")
    return manifest


def read_features(directory: str | Path) -> FeatureSet:
    directory = Path(directory)
    manifest = directory / FEATURES_MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"no {FEATURES_MANIFEST} in {directory}")
    with open(manifest, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    header = json.loads(lines[0])
    dim, method = int(header["dim"]), header["method"]
    vectors: dict[str, FeatureVector] = {}
    info: dict[str, ClipInfo] = {}
    for ln in lines[1:]:
        row = json.loads(ln)
        cid = row["clip_id"]
        values = np.fromfile(directory / row["blob"], dtype="<f8")
        if values.size != dim:
            raise ValueError(f"clip {cid}: feature blob has {values.size} values, expected {dim}")
        vectors[cid] = FeatureVector(values=values, clip_id=cid, method=method)
        info[cid] = ClipInfo(language=row["language"], label=row["label"], split=row["split"])
    return FeatureSet(method=method, dim=dim, languages=list(header["languages"]),
                      provenance=str(header["provenance"]), vectors=vectors, info=info)
