"""Speech Commands ingestion, 12-class manifests, augmentation and noisy test sets.

Expected dataset layout::

    root/<word>/<file>.wav
    root/_background_noise_/*.wav
    root/validation_list.txt
    root/testing_list.txt
"""

from __future__ import annotations

import dataclasses
import logging
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path, PurePath

import numpy as np

from sparknet.audio import CLIP_SAMPLES, SAMPLE_RATE, read_wav
from sparknet.errors import IngestionError

logger = logging.getLogger(__name__)

TARGET_WORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN_INDEX = 10
SILENCE_INDEX = 11
LABELS = list(TARGET_WORDS) + ["unknown", "silence"]
SPLITS = ("train", "val", "test")
BACKGROUND_DIR = "_background_noise_"
SILENCE_WORD = "_silence_"


def label_index(word: str) -> int:
    if word == SILENCE_WORD:
        return SILENCE_INDEX
    try:
        return TARGET_WORDS.index(word)
    except ValueError:
        return UNKNOWN_INDEX


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    class_index: int
    source_word: str
    crop_offset: int = 0

    @property
    def key(self) -> str:
        return f"{self.path}|{self.crop_offset}"

    @property
    def clip_id(self) -> str:
        """Location-independent id, ``word/file.wav|offset`` as in the list files."""
        p = PurePath(self.path)
        return f"{p.parent.name}/{p.name}|{self.crop_offset}"

    def to_fields(self) -> list[str]:
        return [self.path, self.split, str(self.class_index), self.source_word, str(self.crop_offset)]

    @classmethod
    def from_fields(cls, fields: list[str]) -> ManifestEntry:
        path, split, cls_idx, word, crop = fields[:5]
        return cls(path, split, int(cls_idx), word, int(crop))


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    raw_counts: dict[str, int]

    @property
    def num_raw_utterances(self) -> int:
        return sum(self.raw_counts.values())

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def _read_list(path: Path) -> set[str]:
    if not path.is_file():
        raise IngestionError(f"missing list file: {path}")
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def _subsample(items: list, count: int, rng: np.random.Generator) -> list:
    if len(items) <= count:
        return list(items)
    keep = np.sort(rng.choice(len(items), size=count, replace=False))
    return [items[i] for i in keep]


def build_manifest(
    root: str | Path,
    version: str = "v2",
    seed: int = 0,
    validation_list: str | Path | None = None,
    testing_list: str | Path | None = None,
) -> Manifest:
    """Scan a Speech Commands tree into a rebalanced 12-class manifest.

    Targets keep every utterance. In each split, unknown words are uniformly
    subsampled and silence crops are synthesized so both classes match the
    rounded mean size of the ten target classes in that split.
    """
    root = Path(root)
    if version not in ("v1", "v2"):
        raise IngestionError(f"unknown dataset version {version!r}")
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    test_set = _read_list(Path(testing_list) if testing_list else root / "testing_list.txt")
    val_set = _read_list(Path(validation_list) if validation_list else root / "validation_list.txt")
    bg_dir = root / BACKGROUND_DIR
    if not bg_dir.is_dir():
        raise IngestionError(f"missing background noise folder: {bg_dir}")
    background = sorted(bg_dir.glob("*.wav"))
    if not background:
        raise IngestionError(f"no background noise WAVs in {bg_dir}")

    words = sorted(d.name for d in root.iterdir() if d.is_dir() and not d.name.startswith("_"))
    raw_counts: dict[str, int] = {}
    by_split: dict[str, dict[str, list[ManifestEntry]]] = {s: {"target": [], "unknown": []} for s in SPLITS}
    for word in words:
        files = sorted((root / word).glob("*.wav"))
        raw_counts[word] = len(files)
        idx = label_index(word)
        for f in files:
            rel = f"{word}/{f.name}"
            split = "test" if rel in test_set else "val" if rel in val_set else "train"
            entry = ManifestEntry(str(f), split, idx, word)
            by_split[split]["unknown" if idx == UNKNOWN_INDEX else "target"].append(entry)

    bg_lengths = [len(read_wav(p)) for p in background]
    usable = [i for i, n in enumerate(bg_lengths) if n >= CLIP_SAMPLES]
    if not usable:
        raise IngestionError(f"no background file in {bg_dir} is at least 1 s long")

    entries: list[ManifestEntry] = []
    for split_id, split in enumerate(SPLITS):
        targets = by_split[split]["target"]
        counts = Counter(e.class_index for e in targets)
        n_balance = int(round(np.mean([counts.get(i, 0) for i in range(len(TARGET_WORDS))])))
        rng = np.random.default_rng([seed, split_id])
        unknown = _subsample(by_split[split]["unknown"], n_balance, rng)
        silence = []
        for _ in range(n_balance):
            i = usable[int(rng.integers(len(usable)))]
            offset = int(rng.integers(bg_lengths[i] - CLIP_SAMPLES + 1))
            silence.append(
                ManifestEntry(str(background[i]), split, SILENCE_INDEX, SILENCE_WORD, offset)
            )
        entries += sorted(targets + unknown, key=lambda e: e.path) + silence
    logger.info("manifest: %d raw utterances over %d words, %d entries", sum(raw_counts.values()), len(words), len(entries))
    return Manifest(entries, raw_counts)


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write("\t".join(e.to_fields()) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as fh:
        return [ManifestEntry.from_fields(line.rstrip("\n").split("\t")) for line in fh if line.strip()]


def crop_loop(noise: np.ndarray, offset: int, length: int = CLIP_SAMPLES) -> np.ndarray:
    """``length`` samples starting at ``offset``, looping the source if needed."""
    if len(noise) == 0:
        raise ValueError("cannot crop an empty noise clip")
    idx = (offset + np.arange(length)) % len(noise)
    return noise[idx]


class ClipStore:
    """Loads 1 s waveforms for manifest entries, caching decoded files."""

    def __init__(self, max_cached: int = 50000):
        self.max_cached = max_cached
        self._cache: dict[str, np.ndarray] = {}

    def raw(self, path: str) -> np.ndarray:
        samples = self._cache.get(path)
        if samples is None:
            samples = read_wav(path).samples
            if len(self._cache) < self.max_cached:
                self._cache[path] = samples
        return samples

    def clip(self, entry: ManifestEntry, rng: np.random.Generator | None = None) -> np.ndarray:
        """1 s waveform. Silence crops are re-drawn from ``rng`` when given (training), else fixed."""
        samples = self.raw(entry.path)
        if entry.class_index == SILENCE_INDEX:
            offset = entry.crop_offset
            if rng is not None:
                offset = int(rng.integers(max(1, len(samples) - CLIP_SAMPLES + 1)))
            return crop_loop(samples, offset).astype(np.float64)
        n = len(samples)
        if n < CLIP_SAMPLES:
            return np.concatenate([samples, np.zeros(CLIP_SAMPLES - n, samples.dtype)]).astype(np.float64)
        start = (n - CLIP_SAMPLES) // 2
        return samples[start : start + CLIP_SAMPLES].astype(np.float64)


@dataclass(frozen=True)
class AugmentConfig:
    time_shift_ms: float = 100.0
    white_noise_db_range: tuple[float, float] = (-90.0, -46.0)
    white_noise_prob: float = 0.8
    background_noise_prob: float = 0.0
    background_snr_range_db: tuple[float, float] = (0.0, 20.0)

    def __post_init__(self):
        for name in ("white_noise_prob", "background_noise_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "white_noise_db_range", tuple(float(v) for v in self.white_noise_db_range))
        object.__setattr__(self, "background_snr_range_db", tuple(float(v) for v in self.background_snr_range_db))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["white_noise_db_range"] = list(self.white_noise_db_range)
        d["background_snr_range_db"] = list(self.background_snr_range_db)
        return d


def time_shift(samples: np.ndarray, shift: int) -> np.ndarray:
    """Delay (shift > 0) or advance (shift < 0) with zero fill."""
    out = np.zeros_like(samples)
    if shift >= 0:
        out[shift:] = samples[: len(samples) - shift]
    else:
        out[:shift] = samples[-shift:]
    return out


def dbfs_to_rms(db: float) -> float:
    return 10.0 ** (db / 20.0)


def mean_power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples, dtype=np.float64)))


def snr_scale(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Factor alpha such that signal / (alpha * noise) has the requested SNR."""
    p_n = mean_power(noise)
    if p_n <= 0.0:
        raise ValueError("noise has zero power; no finite SNR is achievable")
    p_s = mean_power(signal)
    return float(np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> tuple[np.ndarray, float]:
    """Return (clamped mix, alpha). ``noise`` must already match the signal length."""
    alpha = snr_scale(signal, noise, snr_db)
    return np.clip(signal + alpha * noise, -1.0, 1.0), alpha


def augment(
    samples: np.ndarray,
    config: AugmentConfig,
    rng: np.random.Generator,
    background: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Time shift, optional white noise and optional background mixing, then clamp."""
    max_shift = int(round(config.time_shift_ms * SAMPLE_RATE / 1000.0))
    shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift else 0
    out = time_shift(np.asarray(samples, dtype=np.float64), shift)
    if rng.random() < config.white_noise_prob:
        db = rng.uniform(*config.white_noise_db_range)
        out = out + rng.normal(0.0, dbfs_to_rms(db), size=out.shape)
    if background and rng.random() < config.background_noise_prob:
        noise = background[int(rng.integers(len(background)))]
        crop = crop_loop(noise, int(rng.integers(max(1, len(noise) - len(out) + 1))), len(out))
        if mean_power(crop) > 0.0 and mean_power(out) > 0.0:
            out, _ = mix_at_snr(out, crop, rng.uniform(*config.background_snr_range_db))
    return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True)
class NoisyEntry:
    entry: ManifestEntry
    noise_path: str
    noise_offset: int
    alpha: float
    snr_db: float
    seed: int

    def to_fields(self) -> list[str]:
        return self.entry.to_fields() + [
            self.noise_path,
            str(self.noise_offset),
            repr(self.alpha),
            repr(float(self.snr_db)),
            str(self.seed),
        ]

    @classmethod
    def from_fields(cls, fields: list[str]) -> NoisyEntry:
        return cls(
            ManifestEntry.from_fields(fields[:5]),
            fields[5],
            int(fields[6]),
            float(fields[7]),
            float(fields[8]),
            int(fields[9]),
        )


DEFAULT_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0)
DEFAULT_NOISE_SEEDS = tuple(range(10))


def _variant_rng(seed: int, key: str, snr_db: float) -> np.random.Generator:
    snr_key = int(round(snr_db * 1000)) + 1_000_000
    return np.random.default_rng([seed, zlib.crc32(key.encode("utf-8")), snr_key])


def make_noisy_testset(
    entries: list[ManifestEntry],
    noise_dir: str | Path,
    snr_list=DEFAULT_SNRS,
    seeds=DEFAULT_NOISE_SEEDS,
    store: ClipStore | None = None,
) -> list[NoisyEntry]:
    """Pair every clean clip with a noise crop for each (seed, SNR).

    The choice of noise file and crop depends only on (seed, clip key, SNR).
    Clips with zero power get alpha = 0.
    """
    noise_files = sorted(str(p) for p in Path(noise_dir).glob("*.wav"))
    if not noise_files:
        raise IngestionError(f"noise corpus is empty: {noise_dir}")
    store = store or ClipStore()
    noisy = []
    for seed in seeds:
        for snr in snr_list:
            for e in entries:
                rng = _variant_rng(seed, e.clip_id, snr)
                noise_path = noise_files[int(rng.integers(len(noise_files)))]
                noise = store.raw(noise_path)
                offset = int(rng.integers(max(1, len(noise) - CLIP_SAMPLES + 1)))
                crop = crop_loop(noise, offset)
                signal = store.clip(e)
                alpha = snr_scale(signal, crop, snr) if mean_power(signal) > 0.0 else 0.0
                noisy.append(NoisyEntry(e, noise_path, offset, alpha, float(snr), int(seed)))
    return noisy


def render_noisy(item: NoisyEntry, store: ClipStore) -> np.ndarray:
    signal = store.clip(item.entry)
    crop = crop_loop(store.raw(item.noise_path), item.noise_offset).astype(np.float64)
    return np.clip(signal + item.alpha * crop, -1.0, 1.0)


def write_noisy_manifest(path: str | Path, items: list[NoisyEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write("\t".join(item.to_fields()) + "\n")


def read_noisy_manifest(path: str | Path) -> list[NoisyEntry]:
    with open(path, encoding="utf-8") as fh:
        return [NoisyEntry.from_fields(line.rstrip("\n").split("\t")) for line in fh if line.strip()]
