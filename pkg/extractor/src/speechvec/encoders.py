"""Speech encoder backends.

Two pre-trained model families are supported; each emits per-clip hidden
states of shape [T, D] at 16 kHz input. The `torch` backend runs the real
models through transformers (heavyweight, downloads weights on first use);
the `stub` backend produces deterministic pseudo-embeddings with the same
shapes and is meant for pipeline smoke tests and CI.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

WHISPER_PAD_FRAMES = 1500  # 30 s window at one encoder frame per 20 ms


@dataclass(frozen=True)
class ModelInfo:
    model_id: str
    dim: int
    hf_repo: str
    family: str  # "whisper" or "wav2vec2"


SUPPORTED_MODELS = {
    "whisper-large": ModelInfo("whisper-large", 1024, "openai/whisper-large", "whisper"),
    "clsril-23": ModelInfo("clsril-23", 768,
                           "Harveenchadha/wav2vec2-pretrained-clsril-23-10k", "wav2vec2"),
}


def whisper_frame_count(n_samples: int) -> int:
    """Encoder frames covering the clip's true duration: one per 320 samples,
    bounded by the padded 30 s window."""
    return max(1, min(WHISPER_PAD_FRAMES, math.ceil(n_samples / 320)))


def wav2vec2_frame_count(n_samples: int) -> int:
    """Output length of the wav2vec2 conv stack (400-sample window, 320 stride)."""
    if n_samples < 400:
        return 1
    return 1 + (n_samples - 400) // 320


_FRAME_COUNTERS = {"whisper": whisper_frame_count, "wav2vec2": wav2vec2_frame_count}


class Encoder:
    """Base: per-clip encode plus a batched default."""

    info: ModelInfo
    provenance: str

    @property
    def dim(self) -> int:
        return self.info.dim

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        raise NotImplementedError

    def encode_many(self, clips: list[np.ndarray], sample_rate: int) -> list[np.ndarray]:
        return [self.encode(s, sample_rate) for s in clips]


class StubEncoder(Encoder):
    """Deterministic pseudo-embeddings: frame counts match the real model family,
    values derive from a hash of the audio content. Identical audio always
    yields identical blobs, which the resume logic relies on."""

    def __init__(self, info: ModelInfo):
        self.info = info
        self.provenance = f"{info.model_id}|backend=stub"

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        frames = _FRAME_COUNTERS[self.info.family](len(samples))
        digest = hashlib.sha256(self.info.model_id.encode() + samples.tobytes()).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.standard_normal((frames, self.info.dim)).astype(np.float32)


class TorchEncoder(Encoder):
    """Real inference through transformers. Whisper clips are padded to the
    model's 30 s window; the emitted hidden states are truncated back to the
    clip's true frame count so downstream pooling never sees padding."""

    def __init__(self, info: ModelInfo):
        try:
            import torch  # noqa: F401
            import transformers
        except ImportError as exc:
            raise RuntimeError(
                "the torch backend needs the 'models' extra (torch + transformers); "
                "use --backend stub for a smoke run") from exc
        self.info = info
        self._torch = __import__("torch")
        if info.family == "whisper":
            self._processor = transformers.WhisperFeatureExtractor.from_pretrained(info.hf_repo)
            self._model = transformers.WhisperModel.from_pretrained(info.hf_repo).encoder
        else:
            self._processor = transformers.Wav2Vec2FeatureExtractor.from_pretrained(info.hf_repo)
            self._model = transformers.Wav2Vec2Model.from_pretrained(info.hf_repo)
        self._model.eval()
        actual = int(self._model.config.d_model if info.family == "whisper"
                     else self._model.config.hidden_size)
        if actual != info.dim:
            log.warning("model %s emits %d-dim states, registry declares %d; using %d",
                        info.model_id, actual, info.dim, actual)
        self._dim = actual
        self.provenance = (f"{info.model_id}|backend=torch|repo={info.hf_repo}"
                           f"|layer=encoder.last_hidden_state|dim={actual}"
                           + ("|truncation=true-frame-count" if info.family == "whisper" else ""))

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            if self.info.family == "whisper":
                inputs = self._processor(samples, sampling_rate=sample_rate,
                                         return_tensors="pt")
                states = self._model(inputs.input_features).last_hidden_state[0]
                frames = whisper_frame_count(len(samples))
                states = states[:frames]
            else:
                inputs = self._processor(samples, sampling_rate=sample_rate,
                                         return_tensors="pt")
                states = self._model(inputs.input_values).last_hidden_state[0]
        return states.cpu().numpy().astype(np.float32)


def get_encoder(model_id: str, backend: str = "torch") -> Encoder:
    if model_id not in SUPPORTED_MODELS:
        raise ValueError(f"unknown model {model_id!r}; supported: "
                         f"{', '.join(sorted(SUPPORTED_MODELS))}")
    info = SUPPORTED_MODELS[model_id]
    if backend == "stub":
        return StubEncoder(info)
    if backend == "torch":
        return TorchEncoder(info)
    raise ValueError(f"unknown backend {backend!r}; expected 'torch' or 'stub'")
