"""Compare an extracted corpus against its annotation file, count by count."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .annotations import load_annotations
from .extract import MANIFEST_NAME


@dataclass(frozen=True)
class CountRow:
    language: str
    label: str
    split: str
    in_corpus: int
    in_annotations: int

    @property
    def match(self) -> bool:
        return self.in_corpus == self.in_annotations


@dataclass
class VerifyReport:
    rows: list[CountRow]
    corpus_total: int
    annotation_total: int
    discrepancies: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.discrepancies

    def count(self, language: str, label: str | None = None, split: str | None = None) -> int:
        return sum(r.in_corpus for r in self.rows
                   if r.language == language
                   and (label is None or r.label == label)
                   and (split is None or r.split == split))

    def summary(self) -> str:
        lines = [f"corpus clips: {self.corpus_total}, annotated clips: {self.annotation_total}"]
        for row in self.rows:
            marker = "" if row.match else "  <- MISMATCH"
            lines.append(f"  {row.language}/{row.label}/{row.split}: "
                         f"{row.in_corpus} vs {row.in_annotations}{marker}")
        if self.discrepancies:
            lines.append(f"{len(self.discrepancies)} discrepancies")
        return "\n".join(lines)


def verify(corpus_dir: str | Path, annotations: str | Path) -> VerifyReport:
    """Per-(language, label, split) counts, corpus vs annotations. Never raises
    on mismatches; they land in the report."""
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / MANIFEST_NAME
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {corpus_dir}")
    with open(manifest, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    corpus_counts: Counter = Counter()
    corpus_ids = set()
    for ln in lines[1:]:
        row = json.loads(ln)
        corpus_counts[(row["language"], row["label"], row["split"])] += 1
        corpus_ids.add(row["clip_id"])

    ann_counts: Counter = Counter()
    ann_ids = set()
    for row in load_annotations(annotations):
        ann_counts[(row.language, row.label, row.split)] += 1
        ann_ids.add(row.clip_id)

    rows = []
    discrepancies = []
    for key in sorted(set(corpus_counts) | set(ann_counts)):
        row = CountRow(language=key[0], label=key[1], split=key[2],
                       in_corpus=corpus_counts.get(key, 0),
                       in_annotations=ann_counts.get(key, 0))
        rows.append(row)
        if not row.match:
            discrepancies.append(
                f"{key[0]}/{key[1]}/{key[2]}: corpus {row.in_corpus} vs "
                f"annotations {row.in_annotations}")
    only_in_annotations = sorted(ann_ids - corpus_ids)
    if only_in_annotations:
        discrepancies.append(
            f"{len(only_in_annotations)} annotated clip(s) absent from corpus, "
            f"e.g. {only_in_annotations[:5]}")
    only_in_corpus = sorted(corpus_ids - ann_ids)
    if only_in_corpus:
        discrepancies.append(
            f"{len(only_in_corpus)} corpus clip(s) not annotated, e.g. {only_in_corpus[:5]}")

    return VerifyReport(rows=rows, corpus_total=len(corpus_ids),
                        annotation_total=len(ann_ids), discrepancies=discrepancies)
