"""Few-shot cross-lingual abuse classification over pre-extracted speech embeddings."""

__version__ = "0.1.0"

from .corpus import (ClipRecord, Corpus, CorpusError, EmbeddingTensor, SynthSpec, read_corpus,
                     synth_corpus, write_corpus)
from .evaluation import (ConfusionMatrix, MetricsCell, ReportGrid, accuracy,
                         compare_to_baseline, evaluate_language, macro_f1, run_grid)
from .features import (FeatureSet, FeatureVector, l2_norm_mean, normalize_corpus, read_features,
                       temporal_mean, write_features)
from .meta import (AdamState, TrainConfig, TrainLog, adam_update, init_adam, inner_adapt,
                   lr_multiplier, meta_step, meta_train)
from .model import (Batch, Gradients, ModelParams, apply_step, forward, init_params,
                    load_params, loss_and_grad, save_params)
from .projection import Projection, TsneConfig, cluster_summary, pairwise_affinities, project
from .sampling import (Episode, SamplingError, SupportPool, SupportSet, build_pool,
                       build_support_set, make_episodes)

__all__ = [
    "ClipRecord", "Corpus", "CorpusError", "EmbeddingTensor", "SynthSpec",
    "read_corpus", "synth_corpus", "write_corpus",
    "FeatureSet", "FeatureVector", "temporal_mean", "l2_norm_mean", "normalize_corpus",
    "read_features", "write_features",
    "Episode", "SamplingError", "SupportPool", "SupportSet",
    "build_pool", "build_support_set", "make_episodes",
    "Batch", "Gradients", "ModelParams", "init_params", "forward", "loss_and_grad",
    "apply_step", "save_params", "load_params",
    "AdamState", "TrainConfig", "TrainLog", "adam_update", "init_adam", "inner_adapt",
    "lr_multiplier", "meta_step", "meta_train",
    "ConfusionMatrix", "MetricsCell", "ReportGrid", "accuracy", "macro_f1",
    "evaluate_language", "run_grid", "compare_to_baseline",
    "Projection", "TsneConfig", "pairwise_affinities", "project", "cluster_summary",
    "__version__",
]
