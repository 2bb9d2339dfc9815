"""Exact O(N^2) t-SNE to 2 dimensions, plus cluster-separation summaries.

Per-point Gaussian bandwidths are found by binary search so every row of the
conditional affinity matrix hits the target entropy log2(perplexity). The
embedding minimizes KL(P || Q) with the Student-t kernel, momentum, per-
coordinate gains, and early exaggeration.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureSet
from .seeding import derive_seed, make_rng

EPS = np.finfo(np.float64).eps
ENTROPY_TOL = 1e-5
MAX_BISECTIONS = 50

log = logging.getLogger(__name__)


class ProjectionDiverged(RuntimeError):
    def __init__(self, message: str, kl_trace: list[tuple[int, float]]):
        super().__init__(message)
        self.kl_trace = kl_trace


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    initial_lr: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    standardize: bool = False
    seed: int = 0

    def validate(self, n_points: int) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if n_points < 4:
            raise ValueError("need at least 4 points")
        if not self.perplexity < n_points / 3:
            raise ValueError(
                f"perplexity {self.perplexity} too large for {n_points} points "
                f"(must be < N/3)")

    def as_dict(self) -> dict:
        return {"perplexity": self.perplexity, "iterations": self.iterations,
                "initial_lr": self.initial_lr, "early_exaggeration": self.early_exaggeration,
                "exaggeration_iters": self.exaggeration_iters,
                "momentum_start": self.momentum_start, "momentum_final": self.momentum_final,
                "momentum_switch": self.momentum_switch, "standardize": self.standardize,
                "seed": self.seed}


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("nd,nd->n", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _row_affinities(d2_row: np.ndarray, beta: float) -> np.ndarray:
    p = np.exp(-d2_row * beta)
    s = p.sum()
    return p / s if s > 0 else np.full_like(p, 1.0 / len(p))


def _row_entropy_bits(d2_row: np.ndarray, beta: float) -> float:
    p = _row_affinities(d2_row, beta)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def conditional_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-stochastic conditional affinities with rows tuned to the target entropy.

    Each row's Gaussian precision is binary-searched until the row entropy hits
    log2(perplexity) within 1e-5 bits. Duplicate points are jittered by 1e-10
    (with a warning) so the bandwidth search stays well posed.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ValueError("need at least 4 points")
    if not perplexity < n / 3:
        raise ValueError(f"perplexity {perplexity} must be < N/3 = {n / 3:.1f}")
    d2 = _squared_distances(x)
    off_diag = d2 + np.diag(np.full(n, np.inf))
    if np.any(off_diag < 1e-300):
        log.warning("duplicate points detected; applying 1e-10 jitter")
        jitter = make_rng(0).standard_normal(x.shape) * 1e-10
        d2 = _squared_distances(x + jitter)

    target = math.log2(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(MAX_BISECTIONS):
            h = _row_entropy_bits(row, beta)
            if abs(h - target) <= ENTROPY_TOL:
                break
            if h > target:  # too flat: raise precision
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        p = _row_affinities(row, beta)
        cond[i, :i] = p[:i]
        cond[i, i + 1:] = p[i:]
    return cond


def pairwise_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint affinities: non-negative, summing to 1."""
    cond = conditional_affinities(x, perplexity)
    return (cond + cond.T) / (2.0 * cond.shape[0])


@dataclass
class Projection:
    coords: np.ndarray  # [N, 2]
    clip_ids: list[str]
    languages: list[str]
    labels: list[str]
    kl_trace: list[tuple[int, float]]
    final_kl: float
    config: TsneConfig

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_id", "language", "label", "x", "y"])
            for cid, lang, lab, (px, py) in zip(self.clip_ids, self.languages, self.labels,
                                                self.coords):
                writer.writerow([cid, lang, lab, repr(float(px)), repr(float(py))])

    def write_meta(self, path: str | Path) -> None:
        payload = {"config": self.config.as_dict(), "final_kl": self.final_kl,
                   "kl_trace": [[i, kl] for i, kl in self.kl_trace]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], EPS))))


def embed_matrix(x: np.ndarray, config: TsneConfig) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Gradient-descend a 2-D embedding of the rows of x; returns (coords, KL trace).

    The KL trace is always measured against the unexaggerated P so entries are
    comparable across the exaggeration boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    config.validate(n)
    if config.standardize:
        std = x.std(axis=0)
        x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)

    p = pairwise_affinities(x, config.perplexity)
    rng = make_rng(derive_seed(config.seed, "tsne-init"))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    kl_trace: list[tuple[int, float]] = []
    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        p_run = p * config.early_exaggeration if exaggerate else p
        momentum = config.momentum_start if it < config.momentum_switch else config.momentum_final

        d2 = _squared_distances(y)
        w = 1.0 / (1.0 + d2)
        np.fill_diagonal(w, 0.0)
        q = w / max(w.sum(), EPS)

        if it % 50 == 0:
            kl_trace.append((it, _kl_divergence(p, np.maximum(q, EPS))))

        pqw = (p_run - q) * w
        grad = 4.0 * (np.diag(pqw.sum(axis=1)) - pqw) @ y

        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - config.initial_lr * gains * grad
        y = y + update
        y = y - y.mean(axis=0)

        if not np.all(np.isfinite(y)):
            raise ProjectionDiverged(f"embedding diverged at iteration {it}", kl_trace)

    d2 = _squared_distances(y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    q = w / max(w.sum(), EPS)
    kl_trace.append((config.iterations, _kl_divergence(p, np.maximum(q, EPS))))
    return y, kl_trace


def project(features: FeatureSet, config: TsneConfig) -> Projection:
    """Project every feature vector to 2-D, carrying clip metadata along."""
    ids = features.clip_ids()
    x = features.matrix(ids)
    coords, kl_trace = embed_matrix(x, config)
    return Projection(coords=coords, clip_ids=ids,
                      languages=[features.info[c].language for c in ids],
                      labels=[features.info[c].label for c in ids],
                      kl_trace=kl_trace, final_kl=kl_trace[-1][1], config=config)


@dataclass
class GroupStats:
    name: str
    size: int
    centroid: np.ndarray
    mean_intra_distance: float


@dataclass
class ClusterSummary:
    group_key: str
    groups: list[GroupStats]
    centroid_distances: dict[tuple[str, str], float]
    silhouette: float
    singleton_groups: list[str]

    def min_centroid_distance(self) -> float:
        return min(self.centroid_distances.values())

    def max_intra_distance(self) -> float:
        return max(g.mean_intra_distance for g in self.groups)


def silhouette_score(coords: np.ndarray, groups: list[str]) -> float:
    """Mean silhouette over points; singleton-group points contribute 0."""
    groups_arr = np.asarray(groups)
    names = sorted(set(groups))
    if len(names) < 2:
        raise ValueError("silhouette needs at least 2 groups")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    scores = np.zeros(len(groups))
    for i in range(len(groups)):
        own = groups_arr == groups_arr[i]
        n_own = own.sum()
        if n_own <= 1:
            continue  # singleton: contributes 0
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, groups_arr == other].mean()
                for other in names if other != groups_arr[i])
        denom = max(a, b)
        scores[i] = (b - a) / denom if denom > 0 else 0.0
    return float(scores.mean())


def cluster_summary(projection: Projection, group_key: str) -> ClusterSummary:
    """Centroids, spreads, pairwise centroid gaps, and silhouette by language or label."""
    if group_key == "language":
        groups = projection.languages
    elif group_key == "label":
        groups = projection.labels
    else:
        raise ValueError("group_key must be 'language' or 'label'")
    names = sorted(set(groups))
    if len(names) < 2:
        raise ValueError("cluster summary needs at least 2 groups")

    groups_arr = np.asarray(groups)
    stats = []
    singletons = []
    centroids = {}
    for name in names:
        pts = projection.coords[groups_arr == name]
        centroid = pts.mean(axis=0)
        centroids[name] = centroid
        intra = float(np.linalg.norm(pts - centroid, axis=1).mean())
        stats.append(GroupStats(name=name, size=len(pts), centroid=centroid,
                                mean_intra_distance=intra))
        if len(pts) == 1:
            singletons.append(name)
    if singletons:
        log.warning("singleton groups flagged: %s", ", ".join(singletons))

    distances = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            distances[(a, b)] = float(np.linalg.norm(centroids[a] - centroids[b]))

    return ClusterSummary(group_key=group_key, groups=stats, centroid_distances=distances,
                          silhouette=silhouette_score(projection.coords, list(groups)),
                          singleton_groups=singletons)
