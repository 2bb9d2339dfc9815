import numpy as np
import pytest

from xlabuse.features import ClipInfo, FeatureSet, FeatureVector
from xlabuse.seeding import make_rng


def make_feature_set(num_languages=3, train_per_class=10, test_per_class=4, dim=6,
                     seed=0, method="temporal_mean", separation=0.0):
    """Directly assembled feature set (no corpus round-trip) for sampler/eval tests.

    With separation > 0 the two classes sit around opposite cluster means per
    language, so a classifier can actually learn something.
    """
    rng = make_rng(seed)
    languages = [f"lang{i:02d}" for i in range(num_languages)]
    vectors, info = {}, {}
    for lang in languages:
        center = rng.normal(size=dim) * separation
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        for label, sign in (("abusive", 1.0), ("non_abusive", -1.0)):
            mean = center + sign * 0.5 * separation * direction
            for split, count in (("train", train_per_class), ("test", test_per_class)):
                for i in range(count):
                    cid = f"{lang}_{label}_{split}_{i:03d}"
                    vectors[cid] = FeatureVector(values=mean + rng.normal(size=dim),
                                                 clip_id=cid, method=method)
                    info[cid] = ClipInfo(language=lang, label=label, split=split)
    return FeatureSet(method=method, dim=dim, languages=languages, provenance="synthetic",
                      vectors=vectors, info=info)


@pytest.fixture
def small_features():
    return make_feature_set()
