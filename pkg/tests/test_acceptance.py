"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import functools
import math
import os
import time

import numpy as np
import pytest

from conftest import make_feature_set
from test_evaluation import oracle_metrics
from test_meta import bilevel_fd_gradient, flatten, max_rel_err, random_task
from test_model import finite_difference_grads, max_relative_error, random_instance

from xlabuse.corpus import EmbeddingTensor, SynthSpec, synth_corpus
from xlabuse.evaluation import (ConfusionMatrix, MetricsCell, ReportGrid, accuracy,
                                compare_to_baseline, evaluate_language, macro_f1, run_grid)
from xlabuse.features import (l2_norm_mean, normalize_corpus, read_features, temporal_mean,
                              unit_normalize_frames)
from xlabuse.meta import TrainConfig, meta_train
from xlabuse.model import loss_and_grad
from xlabuse.projection import TsneConfig, embed_matrix, silhouette_score
from xlabuse.sampling import build_pool
from xlabuse.seeding import make_rng


def criterion(name, budget_seconds=None):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[{name}] FAIL after {time.perf_counter() - start:.1f}s")
                raise
            elapsed = time.perf_counter() - start
            suffix = f": {detail}" if detail else ""
            print(f"\n[{name}] PASS in {elapsed:.1f}s{suffix}")
            if budget_seconds is not None:
                assert elapsed < budget_seconds, f"{name} exceeded {budget_seconds}s budget"
        return wrapper
    return decorate


@criterion("A1 normalization oracle", budget_seconds=5.0)
def test_a1_normalization_oracle():
    rng = make_rng(101)
    worst_mean = worst_l2 = worst_norm = 0.0
    for _ in range(200):
        t = int(rng.integers(1, 41))
        d = int(rng.choice([8, 768, 1024]))
        values = rng.normal(size=(t, d)).astype(np.float32) * rng.uniform(0.5, 20.0)
        tensor = EmbeddingTensor(values=values, clip_id="x")

        acc = [0.0] * d
        for row in values:
            rowf = row.tolist()
            for j in range(d):
                acc[j] += rowf[j]
        oracle_mean = np.array([v / t for v in acc])
        worst_mean = max(worst_mean,
                         float(np.abs(temporal_mean(tensor).values - oracle_mean).max()))

        acc = [0.0] * d
        for row in values:
            rowf = row.tolist()
            norm = math.sqrt(sum(v * v for v in rowf))
            for j in range(d):
                acc[j] += rowf[j] / norm
        oracle_l2 = np.array([v / t for v in acc])
        worst_l2 = max(worst_l2,
                       float(np.abs(l2_norm_mean(tensor).values - oracle_l2).max()))

        frames, zero = unit_normalize_frames(tensor)
        assert zero == 0
        worst_norm = max(worst_norm, float(np.abs(np.linalg.norm(frames, axis=1) - 1.0).max()))

    assert worst_mean < 1e-12, worst_mean
    assert worst_l2 < 1e-12, worst_l2
    assert worst_norm < 1e-6, worst_norm
    return f"max dev mean {worst_mean:.2e}, l2 {worst_l2:.2e}, frame norm {worst_norm:.2e}"


@criterion("A2 sampler invariants", budget_seconds=5.0)
def test_a2_sampler_invariants():
    rng = make_rng(202)
    for _ in range(100):
        num_languages = int(rng.integers(1, 5))
        k = 2 * int(rng.integers(1, 7))
        per_class = k // 2 + int(rng.integers(0, 6))
        seed = int(rng.integers(0, 2**63))
        features = make_feature_set(num_languages=num_languages, train_per_class=per_class,
                                    test_per_class=1, dim=4, seed=int(rng.integers(0, 2**31)))
        pool = build_pool(features, k=k, seed=seed)
        assert len(pool) == k * num_languages
        for lang, sset in pool.sets.items():
            members = sset.members
            assert len(set(members)) == len(members) == k
            labels = [features.info[c].label for c in members]
            assert labels.count("abusive") == labels.count("non_abusive") == k // 2
            assert all(features.info[c].split == "train" for c in members)
        replay = build_pool(features, k=k, seed=seed)
        assert replay.as_dict() == pool.as_dict()
    return "100 random (seed, k, L) configurations"


@criterion("A3 learner gradient check", budget_seconds=30.0)
def test_a3_gradient_check():
    rng = make_rng(303)
    worst = 0.0
    for _ in range(50):
        params, batch = random_instance(rng)
        _, grads = loss_and_grad(params, batch)
        numeric = finite_difference_grads(params, batch)
        worst = max(worst, max_relative_error(grads, numeric))
    assert worst < 1e-4, worst
    return f"max relative error {worst:.3e} over 50 instances"


@criterion("A4 bilevel gradient check", budget_seconds=60.0)
def test_a4_bilevel_gradient_check():
    from xlabuse.meta import _task_meta_gradient

    rng = make_rng(404)
    worst = 0.0
    for _ in range(20):
        params, task = random_task(rng, dim=3, hidden=(4, 3))
        config = TrainConfig(task_lr=0.01, inner_steps=1, meta_mode="second_order")
        _, analytic, _ = _task_meta_gradient(params, task, config)
        numeric = bilevel_fd_gradient(params, task, config)
        worst = max(worst, max_rel_err(analytic, numeric))
    assert worst < 1e-3, worst

    params, task = random_task(rng, dim=3, hidden=(4, 3))
    _, fo, _ = _task_meta_gradient(params, task, TrainConfig(task_lr=0.0,
                                                             meta_mode="first_order"))
    _, so, _ = _task_meta_gradient(params, task, TrainConfig(task_lr=0.0,
                                                             meta_mode="second_order"))
    assert np.array_equal(flatten(fo), flatten(so))
    return f"max relative error {worst:.3e} over 20 instances; modes identical at lr 0"


@criterion("A5 metric oracle")
def test_a5_metric_oracle():
    rng = make_rng(505)
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        preds = rng.integers(0, 2, size=n)
        targets = rng.integers(0, 2, size=n)
        cm = ConfusionMatrix.from_pairs(preds, targets)
        acc_oracle, f1_oracle = oracle_metrics(preds.tolist(), targets.tolist())
        assert accuracy(cm) == acc_oracle
        assert macro_f1(cm) == f1_oracle

    hand = ConfusionMatrix(tp=40, fp=10, tn=30, fn=20)
    assert abs(macro_f1(hand) - 69.70) <= 0.01
    return "1000 random sets exact; hand case 69.70 +/- 0.01"


@criterion("A6 end-to-end synthetic", budget_seconds=120.0)
def test_a6_end_to_end():
    spec = SynthSpec(num_languages=10, train_per_class=30, test_per_class=30, dim=64,
                     class_separation=8.0, noise_sigma=1.0)
    corpus = synth_corpus(spec, seed=0)
    features = normalize_corpus(corpus, "temporal_mean")
    pool = build_pool(features, k=50, seed=0)
    config = TrainConfig(task_lr=0.001, meta_lr=0.001, epochs=150, batch_size=128, seed=0)
    params, log = meta_train(pool, features, config)

    accuracies = [evaluate_language(params, features, lang, pool.sets[lang], config).accuracy
                  for lang in features.languages]
    mean_accuracy = float(np.mean(accuracies))
    assert mean_accuracy >= 95.0, accuracies
    losses = log.meta_losses()
    assert losses[-1] < 0.2 * losses[0]
    return f"mean test accuracy {mean_accuracy:.2f}%, loss {losses[0]:.3f} -> {losses[-1]:.5f}"


@criterion("A7 grid shape and replay")
def test_a7_grid_shape(tmp_path):
    spec = SynthSpec(num_languages=10, train_per_class=100, test_per_class=20, dim=16,
                     class_separation=8.0, noise_sigma=1.0)
    corpus = synth_corpus(spec, seed=1)
    featuresets = {m: normalize_corpus(corpus, m) for m in ("temporal_mean", "l2_norm")}
    config = TrainConfig(epochs=5, seed=7)
    shots = [50, 100, 150, 200]

    grid = run_grid(featuresets, shots, config)
    assert grid.complete
    assert len(grid.cells) == 10 * 4 * 2 == 80
    grid.write_csv(tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "language,shot,method,model,accuracy,macro_f1"
    assert len(lines) == 81

    replay = run_grid(featuresets, shots, config)
    replay.write_csv(tmp_path / "replay.csv")
    assert (tmp_path / "report.csv").read_bytes() == (tmp_path / "replay.csv").read_bytes()
    return "80 cells, byte-identical replay"


@criterion("A8 t-SNE blobs", budget_seconds=60.0)
def test_a8_tsne_blobs():
    rng = make_rng(808)
    points, labels = [], []
    for blob in range(3):
        center = np.zeros(64)
        center[blob] = 10.0
        points.append(center + rng.standard_normal((100, 64)))
        labels.extend([f"blob{blob}"] * 100)
    x = np.vstack(points)

    config = TsneConfig(seed=3)  # defaults: perplexity 30, 1000 iterations, lr 200
    coords, trace = embed_matrix(x, config)
    sil = silhouette_score(coords, labels)
    assert sil >= 0.5, sil
    assert trace[-1][1] < trace[0][1]

    coords_again, trace_again = embed_matrix(x, config)
    assert np.array_equal(coords, coords_again)
    assert trace == trace_again
    return f"silhouette {sil:.3f}, KL {trace[0][1]:.3f} -> {trace[-1][1]:.3f}, deterministic"


@criterion("A9 baseline comparison")
def test_a9_baseline_comparison():
    best_ours = {"Bengali": 82.45, "Bhojpuri": 81.34, "Gujarati": 81.73, "Haryanvi": 84.69,
                 "Hindi": 84.26, "Kannada": 78.77, "Malayalam": 83.33, "Odia": 83.18,
                 "Punjabi": 81.87, "Tamil": 75.88}
    baseline = {"Bengali": 79.1, "Hindi": 80.7, "Kannada": 78.4, "Punjabi": 83.4,
                "Tamil": 75.2}
    cells = [MetricsCell(language=lang, shot=100, method="l2_norm", model="synthetic",
                         accuracy=score, macro_f1=score) for lang, score in best_ours.items()]
    grid = ReportGrid(cells=cells, digest="d", languages=sorted(best_ours),
                      shots=[100], methods=["l2_norm"])

    deltas = {d.language: d for d in compare_to_baseline(grid, baseline)}
    expected_rows = {
        "Bengali": ["Bengali", "82.45", "79.10", "+3.35"],
        "Bhojpuri": ["Bhojpuri", "81.34", "n/a", "n/a"],
        "Gujarati": ["Gujarati", "81.73", "n/a", "n/a"],
        "Haryanvi": ["Haryanvi", "84.69", "n/a", "n/a"],
        "Hindi": ["Hindi", "84.26", "80.70", "+3.56"],
        "Kannada": ["Kannada", "78.77", "78.40", "+0.37"],
        "Malayalam": ["Malayalam", "83.33", "n/a", "n/a"],
        "Odia": ["Odia", "83.18", "n/a", "n/a"],
        "Punjabi": ["Punjabi", "81.87", "83.40", "-1.53"],
        "Tamil": ["Tamil", "75.88", "75.20", "+0.68"],
    }
    assert set(deltas) == set(expected_rows)
    for lang, row in expected_rows.items():
        assert deltas[lang].as_row() == row, lang
    assert deltas["Bengali"].delta == pytest.approx(3.35)
    assert deltas["Bhojpuri"].delta is None
    return "deltas and n/a rows match the hand-computed reference"


REAL_FEATURES_ENV = "XLABUSE_REAL_FEATURES_DIR"


@pytest.mark.skipif(REAL_FEATURES_ENV not in os.environ,
                    reason=f"informational check; set {REAL_FEATURES_ENV} to a features "
                           f"directory with real embeddings to run it")
@criterion("A10 real-data spot check (informational)")
def test_a10_real_data_spot_check():
    features = read_features(os.environ[REAL_FEATURES_ENV])
    config = TrainConfig(seed=0)
    pool = build_pool(features, k=100, seed=config.seed)
    params, _ = meta_train(pool, features, config)
    cell = evaluate_language(params, features, "Malayalam", pool.sets["Malayalam"], config)
    reference = 85.22
    print(f"\n[A10] Malayalam k=100 accuracy {cell.accuracy:.2f} "
          f"(reference {reference}, delta {cell.accuracy - reference:+.2f}); "
          f"informational only, not gated")
    return f"accuracy {cell.accuracy:.2f} vs reference {reference}"
