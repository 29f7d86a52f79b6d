"""Procedural corpus in the Speech Commands directory layout.

Each "word" is a fixed sequence of two-formant tone segments; utterances vary
pitch, tempo, onset, loudness and add a low noise floor. Useful for running
the full pipeline where the real dataset is not available.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from sparknet.audio import CLIP_SAMPLES, SAMPLE_RATE, write_wav
from sparknet.data import BACKGROUND_DIR, TARGET_WORDS

UNKNOWN_WORDS = ("bed", "bird", "cat", "dog", "eight", "five", "happy", "house")
NOISE_KINDS = ("white", "pink", "brown", "hum", "babble")


def _word_rng(word: str, corpus_seed: int) -> np.random.Generator:
    return np.random.default_rng([corpus_seed, zlib.crc32(word.encode())])


def word_signature(word: str, corpus_seed: int = 0) -> np.ndarray:
    """(segments, 2) formant pairs in Hz for ``word``."""
    rng = _word_rng(word, corpus_seed)
    n_seg = int(rng.integers(2, 4))
    f1 = rng.uniform(250.0, 900.0, size=n_seg)
    f2 = rng.uniform(1000.0, 3500.0, size=n_seg)
    return np.stack([f1, f2], axis=1)


def synth_utterance(signature: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    pitch = rng.uniform(0.9, 1.1)
    duration = rng.uniform(0.45, 0.75)
    onset = rng.uniform(0.05, 0.95 - duration)
    amp = rng.uniform(0.1, 0.5)
    seg_len = int(duration * SAMPLE_RATE / len(signature))
    out = np.zeros(CLIP_SAMPLES)
    start = int(onset * SAMPLE_RATE)
    t = np.arange(seg_len) / SAMPLE_RATE
    env = np.hanning(seg_len)
    for f1, f2 in signature:
        seg = np.sin(2 * np.pi * f1 * pitch * t + rng.uniform(0, 2 * np.pi))
        seg += 0.6 * np.sin(2 * np.pi * f2 * pitch * t + rng.uniform(0, 2 * np.pi))
        out[start : start + seg_len] += amp * env * seg / 1.6
        start += seg_len
    out += rng.normal(0.0, 10 ** (-50 / 20), size=CLIP_SAMPLES)
    return np.clip(out, -1.0, 1.0)


def synth_noise(kind: str, seconds: float, rng: np.random.Generator, level: float = 0.1) -> np.ndarray:
    n = int(seconds * SAMPLE_RATE)
    if kind == "white":
        x = rng.normal(size=n)
    elif kind in ("pink", "brown"):
        spec = np.fft.rfft(rng.normal(size=n))
        f = np.arange(len(spec), dtype=np.float64)
        f[0] = 1.0
        spec /= np.sqrt(f) if kind == "pink" else f
        x = np.fft.irfft(spec, n=n)
    elif kind == "hum":
        t = np.arange(n) / SAMPLE_RATE
        x = sum(np.sin(2 * np.pi * 50.0 * h * t) / h for h in range(1, 8)) + 0.3 * rng.normal(size=n)
    elif kind == "babble":
        x = np.zeros(n)
        for _ in range(int(seconds * 6)):
            sig = rng.uniform([250.0, 1000.0], [900.0, 3500.0], size=(3, 2))
            pos = int(rng.integers(0, max(1, n - CLIP_SAMPLES)))
            x[pos : pos + CLIP_SAMPLES] += synth_utterance(sig, rng)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x = x - x.mean()
    return level * x / (np.sqrt(np.mean(x**2)) + 1e-12)


def write_noise_corpus(out_dir: str | Path, seed: int = 1, seconds: float = 10.0, kinds=NOISE_KINDS) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for kind in kinds:
        path = out_dir / f"{kind}_noise.wav"
        write_wav(path, synth_noise(kind, seconds, rng))
        paths.append(path)
    return paths


def generate_corpus(
    root: str | Path,
    per_word: int = 60,
    unknown_per_word: int | None = None,
    words=TARGET_WORDS,
    unknown_words=UNKNOWN_WORDS,
    seed: int = 0,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> Path:
    """Write a synthetic corpus under ``root`` and return it.

    The last ``test_fraction`` of each word's utterances go to testing_list.txt
    and the preceding ``val_fraction`` to validation_list.txt.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    unknown_per_word = per_word if unknown_per_word is None else unknown_per_word
    val_lines, test_lines = [], []
    for word in list(words) + list(unknown_words):
        count = per_word if word in words else unknown_per_word
        sig = word_signature(word, seed)
        rng = _word_rng(word, seed + 7919)
        (root / word).mkdir(exist_ok=True)
        n_test = int(round(count * test_fraction))
        n_val = int(round(count * val_fraction))
        for i in range(count):
            name = f"{zlib.crc32(f'{word}{i}'.encode()):08x}_nohash_{i}.wav"
            write_wav(root / word / name, synth_utterance(sig, rng))
            if i >= count - n_test:
                test_lines.append(f"{word}/{name}")
            elif i >= count - n_test - n_val:
                val_lines.append(f"{word}/{name}")
    (root / "validation_list.txt").write_text("\n".join(val_lines) + "\n")
    (root / "testing_list.txt").write_text("\n".join(test_lines) + "\n")
    write_noise_corpus(root / BACKGROUND_DIR, seed=seed + 1, kinds=("white", "pink", "brown", "hum"))
    return root
