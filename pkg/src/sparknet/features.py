"""Manifest entries -> MFCC batches, with seeded per-sample augmentation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from sparknet.audio import MfccConfig, MfccExtractor
from sparknet.data import SILENCE_INDEX, AugmentConfig, ClipStore, ManifestEntry, NoisyEntry, augment, render_noisy

_AUGMENT_STREAM = 2


class FeaturePipeline:
    """Produces (features, labels) batches.

    Augmented waveforms depend only on (seed, epoch, sample index), so the
    output does not depend on ``jobs``. Clean features are cached by entry.
    """

    def __init__(
        self,
        mfcc_config: MfccConfig | None = None,
        augment_config: AugmentConfig | None = None,
        store: ClipStore | None = None,
        jobs: int = 1,
        cache_clean: bool = True,
    ):
        self.extractor = MfccExtractor(mfcc_config or MfccConfig())
        self.augment_config = augment_config or AugmentConfig()
        self.store = store or ClipStore()
        self.jobs = max(1, int(jobs))
        self.cache_clean = cache_clean
        self._clean: dict[str, np.ndarray] = {}
        self._background: list[np.ndarray] | None = None

    @property
    def mfcc_config(self) -> MfccConfig:
        return self.extractor.config

    def set_background(self, entries: list[ManifestEntry]) -> None:
        paths = sorted({e.path for e in entries if e.class_index == SILENCE_INDEX})
        self._background = [self.store.raw(p).astype(np.float64) for p in paths]

    def _map(self, fn, items):
        if self.jobs == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(self.jobs) as pool:
            return list(pool.map(fn, items))

    def _augmented(self, seed: int, epoch: int, index: int, entry: ManifestEntry) -> np.ndarray:
        rng = np.random.default_rng([seed, _AUGMENT_STREAM, epoch, index])
        return augment(self.store.clip(entry, rng), self.augment_config, rng, self._background)

    def train_batch(
        self, entries: list[ManifestEntry], indices: np.ndarray, seed: int, epoch: int
    ) -> tuple[np.ndarray, np.ndarray]:
        waves = self._map(lambda i: self._augmented(seed, epoch, int(i), entries[int(i)]), list(indices))
        labels = np.array([entries[int(i)].class_index for i in indices], dtype=np.int64)
        return self.extractor(np.stack(waves)), labels

    def clean_batch(self, entries: list[ManifestEntry]) -> tuple[np.ndarray, np.ndarray]:
        missing = [e for e in entries if e.key not in self._clean]
        if missing:
            waves = self._map(self.store.clip, missing)
            feats = self.extractor(np.stack(waves))
            if not self.cache_clean:
                local = dict(zip((e.key for e in missing), feats))
                return np.stack([local[e.key] for e in entries]), _labels(entries)
            self._clean.update(zip((e.key for e in missing), feats))
        return np.stack([self._clean[e.key] for e in entries]), _labels(entries)

    def noisy_batch(self, items: list[NoisyEntry]) -> tuple[np.ndarray, np.ndarray]:
        waves = self._map(lambda it: render_noisy(it, self.store), items)
        return self.extractor(np.stack(waves)), _labels([it.entry for it in items])


def _labels(entries: list[ManifestEntry]) -> np.ndarray:
    return np.array([e.class_index for e in entries], dtype=np.int64)
