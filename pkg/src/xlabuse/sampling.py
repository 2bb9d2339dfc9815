"""Stratified k-shot sampling and episode construction.

Per language, a support set of k train clips with exactly k/2 per class is
drawn uniformly without replacement. The pool over L languages therefore has
k*L members. Episodes split each language's support set class-stratified into
an adaptation half and a held-out (meta-objective) half, re-randomized per
epoch. Per-language seeds are hash-derived, so adding or removing a language
never changes another language's draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .features import FeatureSet
from .seeding import derive_seed, make_rng

# Class iteration order for all sampling decisions (alphabetical, fixed).
CLASS_ORDER = ("abusive", "non_abusive")


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SupportSet:
    language: str
    k: int
    by_label: dict[str, tuple[str, ...]]

    @property
    def members(self) -> tuple[str, ...]:
        return tuple(cid for label in CLASS_ORDER for cid in self.by_label[label])

    def as_dict(self) -> dict:
        return {"language": self.language, "k": self.k,
                "members": {label: list(ids) for label, ids in self.by_label.items()}}


@dataclass(frozen=True)
class SupportPool:
    k: int
    languages: tuple[str, ...]
    sets: dict[str, SupportSet]
    seed: int

    def __len__(self) -> int:
        return sum(len(s.members) for s in self.sets.values())

    def as_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "languages": list(self.languages),
                "sets": {lang: s.as_dict() for lang, s in self.sets.items()}}


@dataclass(frozen=True)
class Episode:
    language: str
    support_ids: tuple[str, ...]
    query_ids: tuple[str, ...]

    def as_dict(self) -> dict:
        return {"language": self.language, "support": list(self.support_ids),
                "query": list(self.query_ids)}


def build_support_set(features: FeatureSet, language: str, k: int, seed: int) -> SupportSet:
    """Draw k train clips of one language, exactly k/2 per class, without replacement."""
    if k < 2 or k % 2 != 0:
        raise SamplingError(f"k must be a positive even count, got {k}")
    rng = make_rng(derive_seed(seed, "support", language))
    per_class = k // 2
    chosen: dict[str, tuple[str, ...]] = {}
    for label in CLASS_ORDER:
        candidates = features.clip_ids(language=language, label=label, split="train")
        if len(candidates) < per_class:
            raise SamplingError(
                f"language {language!r}, class {label!r}: need {per_class} train clips, "
                f"have {len(candidates)}")
        picks = rng.choice(len(candidates), size=per_class, replace=False)
        chosen[label] = tuple(candidates[i] for i in picks)
    return SupportSet(language=language, k=k, by_label=chosen)


def build_pool(features: FeatureSet, k: int, seed: int) -> SupportPool:
    """One support set per language; failures are aggregated before raising."""
    sets: dict[str, SupportSet] = {}
    problems: list[str] = []
    for lang in features.languages:
        try:
            sets[lang] = build_support_set(features, lang, k, seed)
        except SamplingError as exc:
            problems.append(str(exc))
    if problems:
        raise SamplingError("pool construction failed:\n" + "\n".join(problems))
    return SupportPool(k=k, languages=tuple(features.languages), sets=sets, seed=seed)


def _split_sizes(class_sizes: list[int], fraction: float) -> list[int]:
    """Largest-remainder allocation of the support side across classes.

    Total support count is round(sum * fraction); per-class quotas are kept as
    balanced as the total allows (ties go to the earlier class in CLASS_ORDER).
    """
    total = sum(class_sizes)
    n_support = int(round(total * fraction))
    quotas = [m * fraction for m in class_sizes]
    base = [math.floor(q) for q in quotas]
    leftover = n_support - sum(base)
    order = sorted(range(len(class_sizes)), key=lambda i: quotas[i] - base[i], reverse=True)
    for i in order[:leftover]:
        base[i] += 1
    return base


def make_episodes(pool: SupportPool, support_fraction: float, epoch_seed: int) -> list[Episode]:
    """Split each language's support set into adaptation and meta-objective halves.

    The split is class-stratified and re-randomized per epoch; both sides must
    keep at least one clip per class.
    """
    if not 0.0 < support_fraction < 1.0:
        raise SamplingError(f"support_fraction must be in (0, 1), got {support_fraction}")
    episodes = []
    for lang in pool.languages:
        sset = pool.sets[lang]
        rng = make_rng(derive_seed(epoch_seed, "episode", lang))
        sizes = _split_sizes([len(sset.by_label[label]) for label in CLASS_ORDER],
                             support_fraction)
        support: list[str] = []
        query: list[str] = []
        for label, n_sup in zip(CLASS_ORDER, sizes):
            ids = list(sset.by_label[label])
            n_query = len(ids) - n_sup
            if n_sup < 1 or n_query < 1:
                raise SamplingError(
                    f"language {lang!r}, class {label!r}: fraction {support_fraction} "
                    f"leaves {n_sup} support / {n_query} query clips; both sides need >= 1")
            perm = rng.permutation(len(ids))
            support.extend(ids[i] for i in perm[:n_sup])
            query.extend(ids[i] for i in perm[n_sup:])
        episodes.append(Episode(language=lang, support_ids=tuple(support),
                                query_ids=tuple(query)))
    return episodes
