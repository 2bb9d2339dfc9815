"""Command-line orchestration of the full experiment lifecycle.

Subcommands compose the library stages: synth, validate, normalize, train,
eval, grid, tsne, report. Every artifact-producing run drops a
reproducibility bundle (config digest, derived seeds, interpretation notes,
version) into its output directory. Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import CorpusError, SynthSpec, read_corpus, synth_corpus, write_corpus
from .evaluation import (EvaluationError, MetricsCell, ReportGrid, compare_to_baseline,
                         evaluate_language, read_baseline_csv, run_grid, write_baseline_csv)
from .features import normalize_corpus, read_features, write_features
from .meta import TrainConfig, TrainingDiverged, meta_train
from .model import load_params, save_params
from .projection import ProjectionDiverged, TsneConfig, cluster_summary, project
from .sampling import SamplingError, build_pool
from .seeding import derive_seed

OUT_ROOT_ENV = "XLABUSE_OUT"

METHOD_FLAGS = {"temporal-mean": "temporal_mean", "l2-norm": "l2_norm"}

# Fixed interpretation notes recorded with every run.
INTERPRETATION_NOTES = [
    "meta gradients default to first_order; exact second_order is available via meta_mode",
    "batch_size bounds the chunk size for query-loss evaluation",
    "episode meta-objective clips come from the k-shot pool (see support_fraction)",
    "per-language evaluation adapts on that language's sampled support set unless --no-adapt",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(f"{message}\n{self.format_usage()}")


def _default_out(subcommand: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return Path(root) / subcommand


def _write_bundle(outdir: Path, command: str, config: dict, seeds: dict) -> None:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    bundle = {
        "version": __version__,
        "command": command,
        "config": config,
        "config_digest": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "seeds": seeds,
        "notes": INTERPRETATION_NOTES,
    }
    with open(outdir / "bundle.json", "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _train_config(cfg: dict, args: argparse.Namespace) -> TrainConfig:
    """Config-file values, overridden by any explicitly passed flags."""
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    merged = {k: v for k, v in cfg.items() if k in fields}
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return TrainConfig(**merged)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--task-lr", dest="task_lr", type=float)
    parser.add_argument("--meta-lr", dest="meta_lr", type=float)
    parser.add_argument("--inner-steps", dest="inner_steps", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--meta-mode", dest="meta_mode",
                        choices=["first_order", "second_order"])
    parser.add_argument("--support-fraction", dest="support_fraction", type=float)
    parser.add_argument("--seed", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="xlabuse",
                     description="Few-shot cross-lingual abuse classification pipeline")
    parser.add_argument("--version", action="version", version=f"xlabuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--languages", type=int, default=10)
    p.add_argument("--train-per-class", type=int, default=60)
    p.add_argument("--test-per-class", type=int, default=40)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--frames-min", type=int, default=4)
    p.add_argument("--frames-max", type=int, default=12)
    p.add_argument("--class-sep", type=float, default=8.0)
    p.add_argument("--lang-sep", type=float, default=16.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("validate", help="check a corpus directory against the format contract")
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("normalize", help="aggregate clip tensors into feature vectors")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--method", choices=sorted(METHOD_FLAGS), required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("train", help="meta-train one model per shot size")
    p.add_argument("--config", type=str)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--shots", type=int, nargs="+", required=True)
    p.add_argument("--out", type=Path)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score every language with a trained checkpoint")
    p.add_argument("--config", type=str)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--shot", type=int, required=True)
    p.add_argument("--no-adapt", action="store_true",
                   help="score the meta-initialization without per-language adaptation")
    p.add_argument("--out", type=Path)
    _add_train_flags(p)

    p = sub.add_parser("grid", help="full (method x shot x language) result grid")
    p.add_argument("--config", type=str)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--methods", nargs="+", choices=sorted(METHOD_FLAGS))
    p.add_argument("--shots", type=int, nargs="+")
    p.add_argument("--no-adapt", action="store_true")
    p.add_argument("--out", type=Path)
    _add_train_flags(p)

    p = sub.add_parser("tsne", help="2-D projection of a feature set")
    p.add_argument("--config", type=str)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--initial-lr", dest="initial_lr", type=float)
    p.add_argument("--early-exaggeration", dest="early_exaggeration", type=float)
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("report", help="compare a result grid against a baseline table")
    p.add_argument("--grid", type=Path, required=True, help="report.json from the grid command")
    p.add_argument("--baseline", type=Path, required=True, help="csv: language,macro_f1")
    p.add_argument("--out", type=Path)

    return parser


def _ensure_out(args: argparse.Namespace, command: str) -> Path:
    out = args.out if getattr(args, "out", None) else _default_out(command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    spec = SynthSpec(num_languages=args.languages, train_per_class=args.train_per_class,
                     test_per_class=args.test_per_class, dim=args.dim,
                     frames_range=(args.frames_min, args.frames_max),
                     class_separation=args.class_sep, language_separation=args.lang_sep,
                     noise_sigma=args.noise)
    corpus = synth_corpus(spec, args.seed)
    out = _ensure_out(args, "synth")
    manifest = write_corpus(corpus, out)
    _write_bundle(out, "synth", {**dataclasses.asdict(spec), "seed": args.seed},
                  {"corpus": args.seed})
    print(f"wrote {len(corpus)} records to {manifest}")
    return 0


def cmd_validate(args) -> int:
    corpus = read_corpus(args.corpus)
    degenerate = corpus.degenerate_languages()
    print(f"ok: {len(corpus)} records, {len(corpus.languages)} languages, dim {corpus.dim}, "
          f"provenance {corpus.provenance!r}")
    for lang in corpus.languages:
        counts = {f"{label}/{split}": corpus.count(lang, label, split)
                  for label in ("abusive", "non_abusive") for split in ("train", "test")}
        print(f"  {lang}: {counts}")
    if degenerate:
        print(f"degenerate languages (missing a train class): {', '.join(degenerate)}")
    return 0


def cmd_normalize(args) -> int:
    corpus = read_corpus(args.corpus)
    method = METHOD_FLAGS[args.method]
    features = normalize_corpus(corpus, method)
    if features.errors:
        for cid, msg in features.errors:
            print(f"clip {cid}: {msg}", file=sys.stderr)
        raise CorpusError(f"{len(features.errors)} clip(s) failed to normalize")
    out = _ensure_out(args, f"normalize-{args.method}")
    write_features(features, out)
    _write_bundle(out, "normalize", {"corpus": str(args.corpus), "method": method}, {})
    print(f"wrote {len(features)} feature vectors ({method}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    config = _train_config(cfg_file, args)
    features = read_features(args.features)
    out = _ensure_out(args, "train")
    seeds = {}
    for k in args.shots:
        pool_seed = derive_seed(config.seed, "train", features.method, k)
        seeds[f"k{k}"] = pool_seed
        pool = build_pool(features, k, pool_seed)
        with open(out / f"pool_k{k}.json", "w", encoding="utf-8") as fh:
            json.dump(pool.as_dict(), fh, indent=2)
            fh.write("\n")
        params, log = meta_train(pool, features, dataclasses.replace(config, seed=pool_seed))
        save_params(params, out / f"ckpt_k{k}.bin")
        with open(out / f"trainlog_k{k}.json", "w", encoding="utf-8") as fh:
            json.dump({"config": dataclasses.replace(config, seed=pool_seed).as_dict(),
                       "log": log.as_dict()}, fh, indent=2)
            fh.write("\n")
        print(f"k={k}: final meta-loss {log.meta_losses()[-1]:.6f} "
              f"({config.epochs} epochs) -> ckpt_k{k}.bin")
    _write_bundle(out, "train", {**config.as_dict(), "shots": args.shots,
                                 "features": str(args.features)}, seeds)
    return 0


def cmd_eval(args) -> int:
    cfg_file = _load_config_file(args.config)
    config = _train_config(cfg_file, args)
    features = read_features(args.features)
    params = load_params(args.checkpoint)
    pool_seed = derive_seed(config.seed, "train", features.method, args.shot)
    pool = build_pool(features, args.shot, pool_seed)
    cells = [evaluate_language(params, features, lang, pool.sets[lang],
                               dataclasses.replace(config, seed=pool_seed),
                               adapt=not args.no_adapt)
             for lang in features.languages]
    out = _ensure_out(args, "eval")
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["language", "shot", "method", "model", "accuracy", "macro_f1"])
        for c in cells:
            writer.writerow([c.language, c.shot, c.method, c.model,
                             f"{c.accuracy:.2f}", f"{c.macro_f1:.2f}"])
    _write_bundle(out, "eval", {**config.as_dict(), "shot": args.shot,
                                "adapt": not args.no_adapt,
                                "checkpoint": str(args.checkpoint)},
                  {"pool": pool_seed})
    for c in cells:
        print(f"{c.language}: accuracy {c.accuracy:.2f}  macro-F1 {c.macro_f1:.2f}")
    return 0


def cmd_grid(args) -> int:
    cfg_file = _load_config_file(args.config)
    config = _train_config(cfg_file, args)
    corpus_path = args.corpus or cfg_file.get("corpus")
    if not corpus_path:
        raise UsageError("grid needs --corpus or a 'corpus' key in the config file")
    methods = args.methods or cfg_file.get("methods") or sorted(METHOD_FLAGS)
    methods = [METHOD_FLAGS.get(m, m) for m in methods]
    shots = args.shots or cfg_file.get("shots") or [50, 100, 150, 200]
    if not shots or any(k % 2 for k in shots):
        raise UsageError("shot list must be non-empty with even entries")

    corpus = read_corpus(corpus_path)
    featuresets = {m: normalize_corpus(corpus, m) for m in methods}
    grid = run_grid(featuresets, shots, config, adapt=not args.no_adapt)
    out = _ensure_out(args, "grid")
    grid.write_csv(out / "report.csv")
    grid.write_json(out / "report.json", notes=INTERPRETATION_NOTES)
    _write_bundle(out, "grid", {**config.as_dict(), "corpus": str(corpus_path),
                                "methods": methods, "shots": shots,
                                "adapt": not args.no_adapt},
                  {"grid": config.seed})
    status = "complete" if grid.complete else f"INCOMPLETE ({len(grid.failures)} failures)"
    print(f"grid {status}: {len(grid.cells)} cells -> {out / 'report.csv'}")
    for failure in grid.failures:
        print(f"  failed: {failure}", file=sys.stderr)
    return 0 if grid.complete else 2


def cmd_tsne(args) -> int:
    cfg_file = _load_config_file(args.config)
    fields = {f.name for f in dataclasses.fields(TsneConfig)}
    merged = {k: v for k, v in cfg_file.items() if k in fields}
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    config = TsneConfig(**merged)
    features = read_features(args.features)
    projection = project(features, config)
    out = _ensure_out(args, "tsne")
    projection.write_csv(out / "tsne.csv")
    projection.write_meta(out / "tsne_meta.json")
    summaries = {}
    for key in ("language", "label"):
        s = cluster_summary(projection, key)
        summaries[key] = {
            "silhouette": s.silhouette,
            "groups": [{"name": g.name, "size": g.size,
                        "centroid": [float(v) for v in g.centroid],
                        "mean_intra_distance": g.mean_intra_distance} for g in s.groups],
            "centroid_distances": {f"{a}|{b}": d for (a, b), d in s.centroid_distances.items()},
            "singletons": s.singleton_groups,
        }
    with open(out / "clusters.json", "w", encoding="utf-8") as fh:
        json.dump(summaries, fh, indent=2)
        fh.write("\n")
    _write_bundle(out, "tsne", {**config.as_dict(), "features": str(args.features)},
                  {"tsne": config.seed})
    print(f"projected {len(projection.clip_ids)} points, final KL {projection.final_kl:.4f} "
          f"-> {out / 'tsne.csv'}")
    return 0


def cmd_report(args) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        payload = json.load(fh)
    cells = [MetricsCell(**{k: c[k] for k in
                            ("language", "shot", "method", "model", "accuracy", "macro_f1")})
             for c in payload["cells"]]
    grid = ReportGrid(cells=cells, digest=payload["digest"], languages=payload["languages"],
                      shots=payload["shots"], methods=payload["methods"],
                      failures=payload.get("failures", []))
    baseline = read_baseline_csv(args.baseline)
    deltas = compare_to_baseline(grid, baseline)
    out = _ensure_out(args, "report")
    write_baseline_csv(deltas, out / "baseline_delta.csv")
    _write_bundle(out, "report", {"grid": str(args.grid), "baseline": str(args.baseline)}, {})
    print(f"{'language':<12} {'ours':>8} {'baseline':>9} {'delta':>8}")
    for d in deltas:
        row = d.as_row()
        print(f"{row[0]:<12} {row[1]:>8} {row[2]:>9} {row[3]:>8}")
    return 0


_COMMANDS = {
    "synth": cmd_synth, "validate": cmd_validate, "normalize": cmd_normalize,
    "train": cmd_train, "eval": cmd_eval, "grid": cmd_grid, "tsne": cmd_tsne,
    "report": cmd_report,
}

_VALIDATION_ERRORS = (UsageError, CorpusError, SamplingError, EvaluationError,
                      ValueError, FileNotFoundError, KeyError, json.JSONDecodeError)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, ProjectionDiverged, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
