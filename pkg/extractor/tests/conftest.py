import csv

import numpy as np
import pytest
from scipy.io import wavfile


def write_wav(path, duration_s=0.3, freq=440.0, rate=16_000, stereo=False):
    t = np.arange(int(duration_s * rate)) / rate
    wave = (0.4 * np.sin(2 * np.pi * freq * t) * 32767).astype(np.int16)
    if stereo:
        wave = np.stack([wave, wave // 2], axis=1)
    wavfile.write(path, rate, wave)
    return path


def write_annotations(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "language", "label", "split", "audio_path"])
        writer.writerows(rows)
    return path


@pytest.fixture
def mini_dataset(tmp_path):
    """Six clips, two languages, both classes and splits."""
    audio = tmp_path / "audio"
    audio.mkdir()
    rows = []
    for i, (lang, label, split) in enumerate([
            ("hindi", "abusive", "train"), ("hindi", "non_abusive", "train"),
            ("hindi", "abusive", "test"), ("tamil", "non_abusive", "train"),
            ("tamil", "abusive", "train"), ("tamil", "non_abusive", "test")]):
        cid = f"clip{i}"
        write_wav(audio / f"{cid}.wav", duration_s=0.1 + 0.05 * i, freq=200 + 60 * i)
        rows.append([cid, lang, label, split, f"{cid}.wav"])
    annotations = write_annotations(tmp_path / "annotations.csv", rows)
    return audio, annotations
