"""Per-language test-time scoring and the (language x shot x method) result grid."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import FeatureSet
from .meta import TrainConfig, inner_adapt, meta_train
from .model import ModelParams, predict
from .sampling import SupportSet, build_pool
from .seeding import derive_seed


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary counts with `abusive` as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_pairs(cls, predictions: np.ndarray, targets: np.ndarray) -> "ConfusionMatrix":
        predictions = np.asarray(predictions, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        if predictions.shape != targets.shape:
            raise EvaluationError("predictions and targets must align")
        return cls(tp=int(np.sum((predictions == 1) & (targets == 1))),
                   fp=int(np.sum((predictions == 1) & (targets == 0))),
                   tn=int(np.sum((predictions == 0) & (targets == 0))),
                   fn=int(np.sum((predictions == 0) & (targets == 1))))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def accuracy(cm: ConfusionMatrix) -> float:
    """Percent correct."""
    if cm.total == 0:
        raise EvaluationError("empty confusion matrix")
    return 100.0 * (cm.tp + cm.tn) / cm.total


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0  # empty class convention: F1 = 0


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the two per-class F1 scores, in percent."""
    if cm.total == 0:
        raise EvaluationError("empty confusion matrix")
    f1_pos = _f1(cm.tp, cm.fp, cm.fn)
    f1_neg = _f1(cm.tn, cm.fn, cm.fp)
    return 100.0 * (f1_pos + f1_neg) / 2.0


@dataclass(frozen=True)
class MetricsCell:
    language: str
    shot: int
    method: str
    model: str
    accuracy: float
    macro_f1: float

    def as_dict(self) -> dict:
        return {"language": self.language, "shot": self.shot, "method": self.method,
                "model": self.model, "accuracy": self.accuracy, "macro_f1": self.macro_f1}


def evaluate_language(params: ModelParams, features: FeatureSet, language: str,
                      support: SupportSet, config: TrainConfig,
                      adapt: bool = True) -> MetricsCell:
    """Adapt on the language's support set, then score its entire test split.

    Train-split clips are only ever read through the provided support set.
    """
    test_ids = features.clip_ids(language=language, split="test")
    if not test_ids:
        raise EvaluationError(f"language {language!r} has no test clips")
    if adapt:
        support_batch = features.batch(support.members)
        params, _ = inner_adapt(params, support_batch, config.task_lr, config.inner_steps)
    test_batch = features.batch(test_ids)
    preds = predict(params, test_batch.inputs, batch_size=config.batch_size)
    cm = ConfusionMatrix.from_pairs(preds, test_batch.targets)
    return MetricsCell(language=language, shot=support.k, method=features.method,
                       model=features.provenance, accuracy=accuracy(cm), macro_f1=macro_f1(cm))


def config_digest(config: TrainConfig, extra: dict | None = None) -> str:
    payload = dict(config.as_dict())
    if extra:
        payload.update(extra)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class ReportGrid:
    cells: list[MetricsCell]
    digest: str
    languages: list[str]
    shots: list[int]
    methods: list[str]
    failures: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        expected = len(self.languages) * len(self.shots) * len(self.methods)
        return not self.failures and len(self.cells) == expected

    def cell(self, language: str, shot: int, method: str) -> MetricsCell:
        for c in self.cells:
            if (c.language, c.shot, c.method) == (language, shot, method):
                return c
        raise KeyError((language, shot, method))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["language", "shot", "method", "model", "accuracy", "macro_f1"])
            for c in self.cells:
                writer.writerow([c.language, c.shot, c.method, c.model,
                                 f"{c.accuracy:.2f}", f"{c.macro_f1:.2f}"])

    def as_dict(self) -> dict:
        return {"digest": self.digest, "complete": self.complete,
                "languages": self.languages, "shots": self.shots, "methods": self.methods,
                "failures": self.failures, "cells": [c.as_dict() for c in self.cells]}

    def write_json(self, path: str | Path, notes: list[str] | None = None) -> None:
        payload = self.as_dict()
        if notes:
            payload["notes"] = notes
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_grid(featuresets: dict[str, FeatureSet], shots: list[int],
             config: TrainConfig, adapt: bool = True) -> ReportGrid:
    """Train one model per (method, shot) cell and score every language.

    Cell seeds are hash-derived from (config.seed, method, shot), so each cell
    is independently reproducible. Failing cells are recorded, not fatal.
    """
    if not featuresets:
        raise EvaluationError("need at least one feature set")
    methods = sorted(featuresets)
    languages = list(next(iter(featuresets.values())).languages)
    cells: list[MetricsCell] = []
    failures: list[str] = []
    for method in methods:
        features = featuresets[method]
        for shot in shots:
            cell_seed = derive_seed(config.seed, "grid", method, shot)
            cell_config = replace(config, seed=cell_seed)
            try:
                pool = build_pool(features, shot, cell_seed)
                params, _ = meta_train(pool, features, cell_config)
            except Exception as exc:
                failures.append(f"{method}/k={shot}: {exc}")
                continue
            for language in languages:
                try:
                    cells.append(evaluate_language(params, features, language,
                                                   pool.sets[language], cell_config,
                                                   adapt=adapt))
                except Exception as exc:
                    failures.append(f"{method}/k={shot}/{language}: {exc}")
    digest = config_digest(config, {"shots": shots, "methods": methods, "adapt": adapt})
    return ReportGrid(cells=cells, digest=digest, languages=languages,
                      shots=list(shots), methods=methods, failures=failures)


@dataclass(frozen=True)
class BaselineDelta:
    language: str
    ours: float
    baseline: float | None

    @property
    def delta(self) -> float | None:
        return None if self.baseline is None else self.ours - self.baseline

    def as_row(self) -> list[str]:
        if self.baseline is None:
            return [self.language, f"{self.ours:.2f}", "n/a", "n/a"]
        return [self.language, f"{self.ours:.2f}", f"{self.baseline:.2f}",
                f"{self.delta:+.2f}"]


def compare_to_baseline(grid: ReportGrid, baseline: dict[str, float]) -> list[BaselineDelta]:
    """Best macro-F1 per language vs an external baseline; missing rows become n/a."""
    out = []
    for language in grid.languages:
        scores = [c.macro_f1 for c in grid.cells if c.language == language]
        if not scores:
            continue
        out.append(BaselineDelta(language=language, ours=max(scores),
                                 baseline=baseline.get(language)))
    return out


def read_baseline_csv(path: str | Path) -> dict[str, float]:
    """baseline.csv: header `language,macro_f1` then one row per language."""
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["language"]] = float(row["macro_f1"])
    return out


def write_baseline_csv(deltas: list[BaselineDelta], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["language", "ours", "baseline", "delta"])
        for d in deltas:
            writer.writerow(d.as_row())
