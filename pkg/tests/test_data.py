import shutil
from dataclasses import replace
from pathlib import PurePath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import speech_commands_root
from sparknet.data import (
    LABELS,
    SILENCE_INDEX,
    TARGET_WORDS,
    UNKNOWN_INDEX,
    AugmentConfig,
    ClipStore,
    ManifestEntry,
    augment,
    build_manifest,
    crop_loop,
    dbfs_to_rms,
    label_index,
    make_noisy_testset,
    mean_power,
    mix_at_snr,
    read_manifest,
    read_noisy_manifest,
    render_noisy,
    snr_scale,
    time_shift,
    write_manifest,
    write_noisy_manifest,
)
from sparknet.errors import IngestionError


def test_label_map():
    assert [label_index(w) for w in TARGET_WORDS] == list(range(10))
    assert label_index("bed") == UNKNOWN_INDEX
    assert label_index("_silence_") == SILENCE_INDEX
    assert len(set(LABELS)) == 12


class TestManifest:
    def test_list_precedence(self, small_corpus, tmp_path):
        # a file in both lists goes to test
        val = (small_corpus / "validation_list.txt").read_text().split()
        test_list = tmp_path / "testing.txt"
        test_list.write_text((small_corpus / "testing_list.txt").read_text() + val[0] + "\n")
        manifest = build_manifest(small_corpus, testing_list=test_list)
        split_of = {e.path: e.split for e in manifest.entries if e.class_index != SILENCE_INDEX}
        path = str(small_corpus / val[0])
        if path in split_of:  # unknown words may be subsampled away
            assert split_of[path] == "test"
        for rel in test_list.read_text().split():
            p = str(small_corpus / rel)
            if p in split_of:
                assert split_of[p] == "test"

    def test_split_integrity(self, small_manifest):
        seen = {}
        for e in small_manifest.entries:
            if e.class_index == SILENCE_INDEX:
                continue
            assert seen.setdefault(e.path, e.split) == e.split
        assert len(seen) == len({e.path for e in small_manifest.entries if e.class_index != SILENCE_INDEX})

    def test_rebalancing(self, small_manifest):
        for split in ("train", "val", "test"):
            entries = small_manifest.split(split)
            counts = np.bincount([e.class_index for e in entries], minlength=12)
            target = int(round(counts[:10].mean()))
            assert counts[UNKNOWN_INDEX] == target
            assert counts[SILENCE_INDEX] == target

    def test_silence_entries(self, small_manifest):
        for e in small_manifest.entries:
            if e.class_index == SILENCE_INDEX:
                assert "_background_noise_" in e.path
                assert e.crop_offset >= 0

    def test_train_silence_redrawn(self, small_manifest):
        store = ClipStore()
        e = next(e for e in small_manifest.split("train") if e.class_index == SILENCE_INDEX)
        fixed = store.clip(e)
        np.testing.assert_array_equal(fixed, store.clip(e))
        assert not np.array_equal(store.clip(e, np.random.default_rng(0)), store.clip(e, np.random.default_rng(1)))

    def test_raw_counts(self, small_manifest):
        assert small_manifest.num_raw_utterances == 18 * 20

    def test_seeded(self, small_corpus, small_manifest):
        assert build_manifest(small_corpus, seed=0).entries == small_manifest.entries

    def test_tsv_roundtrip(self, small_manifest, tmp_path):
        write_manifest(tmp_path / "m.tsv", small_manifest.entries)
        assert read_manifest(tmp_path / "m.tsv") == small_manifest.entries

    def test_missing_list(self, small_corpus, tmp_path):
        with pytest.raises(IngestionError, match="nope.txt"):
            build_manifest(small_corpus, testing_list=tmp_path / "nope.txt")

    def test_missing_root(self, tmp_path):
        with pytest.raises(IngestionError):
            build_manifest(tmp_path / "absent")

    @pytest.mark.parametrize("version,total,words", [("v2", 105_829, 35), ("v1", 64_727, 30)])
    def test_real_dataset_counts(self, version, total, words):
        root = speech_commands_root(version)
        if root is None:
            pytest.skip(f"set SPARKNET_SC{version[-1]}_ROOT to run against the real dataset")
        manifest = build_manifest(root, version=version)
        assert manifest.num_raw_utterances == total
        assert len(manifest.raw_counts) == words


class TestAugment:
    def test_shift_plus_100ms(self, rng):
        x = rng.uniform(-0.5, 0.5, 16000)
        y = time_shift(x, 1600)
        assert not y[:1600].any()
        np.testing.assert_array_equal(y[1600:], x[:-1600])

    def test_negative_shift(self, rng):
        x = rng.uniform(-0.5, 0.5, 16000)
        y = time_shift(x, -1600)
        np.testing.assert_array_equal(y[:-1600], x[1600:])
        assert not y[-1600:].any()

    def test_noise_level(self):
        assert dbfs_to_rms(-46) == pytest.approx(0.005012, abs=1e-6)
        cfg = AugmentConfig(time_shift_ms=0, white_noise_prob=1.0, white_noise_db_range=(-46, -46))
        y = augment(np.zeros(160_000), cfg, np.random.default_rng(0))
        assert np.sqrt(mean_power(y)) == pytest.approx(10 ** (-46 / 20), rel=0.01)

    def test_identity(self, rng):
        x = rng.uniform(-0.5, 0.5, 16000)
        cfg = AugmentConfig(time_shift_ms=0, white_noise_prob=0.0)
        np.testing.assert_array_equal(augment(x, cfg, rng), x)

    def test_reproducible(self, rng):
        x = rng.uniform(-0.5, 0.5, 16000)
        cfg = AugmentConfig(background_noise_prob=1.0)
        bg = [rng.normal(0, 0.1, 40000)]
        a = augment(x, cfg, np.random.default_rng([1, 2, 3]), bg)
        b = augment(x, cfg, np.random.default_rng([1, 2, 3]), bg)
        np.testing.assert_array_equal(a, b)

    def test_clamped(self, rng):
        x = np.full(16000, 0.999)
        cfg = AugmentConfig(background_noise_prob=1.0, background_snr_range_db=(0, 0))
        y = augment(x, cfg, rng, [rng.normal(0, 1, 20000)])
        assert np.all(np.abs(y) <= 1.0)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            AugmentConfig(white_noise_prob=1.5)


class TestMix:
    def test_equal_power_zero_db(self):
        s = np.full(100, 0.1)
        n = np.full(100, -0.1)
        assert snr_scale(s, n, 0.0) == pytest.approx(1.0, rel=1e-15)

    def test_closed_form(self):
        s = np.full(100, 0.1)  # P_s = 0.01
        n = np.full(100, 0.2)  # P_n = 0.04
        assert snr_scale(s, n, 20.0) == pytest.approx(0.05, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 25), st.integers(0, 2**31 - 1))
    def test_measured_snr_and_recovery(self, snr, seed):
        r = np.random.default_rng(seed)
        s = r.uniform(-0.3, 0.3, 16000)
        n = r.normal(0, 0.05, 16000)
        alpha = snr_scale(s, n, snr)
        measured = 10 * np.log10(mean_power(s) / mean_power(alpha * n))
        assert abs(measured - snr) < 1e-6
        pre_clamp = s + alpha * n
        assert np.max(np.abs(pre_clamp - alpha * n - s)) < 1e-7

    def test_output_clamped(self, rng):
        mix, _ = mix_at_snr(np.full(100, 0.9), rng.normal(0, 1, 100), 0.0)
        assert np.all(np.abs(mix) <= 1)

    def test_zero_noise(self):
        with pytest.raises(ValueError):
            mix_at_snr(np.ones(10), np.zeros(10), 10.0)

    def test_crop_loop(self):
        np.testing.assert_array_equal(crop_loop(np.arange(5.0), 3, 7), [3, 4, 0, 1, 2, 3, 4])


class TestNoisyTestset:
    def test_count_and_determinism(self, small_manifest, noise_corpus, tmp_path):
        test = small_manifest.split("test")
        a = make_noisy_testset(test, noise_corpus)
        b = make_noisy_testset(test, noise_corpus)
        assert len(a) == 5 * 10 * len(test)
        assert len({(i.seed, i.snr_db) for i in a}) == 50
        write_noisy_manifest(tmp_path / "a.tsv", a)
        write_noisy_manifest(tmp_path / "b.tsv", b)
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
        assert read_noisy_manifest(tmp_path / "a.tsv") == a

    def test_assignment_is_per_variant(self, small_manifest, noise_corpus):
        test = small_manifest.split("test")[:5]
        full = make_noisy_testset(test, noise_corpus, seeds=(0, 1, 2))
        only = make_noisy_testset(test, noise_corpus, seeds=(2,), snr_list=(10.0,))
        picked = [i for i in full if i.seed == 2 and i.snr_db == 10.0]
        assert picked == only

    def test_rendered_snr(self, small_manifest, noise_corpus):
        store = ClipStore()
        items = make_noisy_testset(small_manifest.split("test")[:4], noise_corpus, seeds=(0,), snr_list=(5.0,), store=store)
        for item in items:
            signal = store.clip(item.entry)
            if mean_power(signal) == 0:
                assert item.alpha == 0.0
                continue
            crop = crop_loop(store.raw(item.noise_path), item.noise_offset)
            assert 10 * np.log10(mean_power(signal) / mean_power(item.alpha * crop)) == pytest.approx(5.0, abs=1e-6)
            assert render_noisy(item, store).shape == (16000,)

    def test_clip_id_is_location_independent(self):
        a = ManifestEntry("/data/sc/yes/a.wav", "test", 0, "yes")
        b = ManifestEntry("/tmp/copy/yes/a.wav", "test", 0, "yes")
        assert a.clip_id == b.clip_id == "yes/a.wav|0"
        assert a.key != b.key

    def test_assignment_survives_moving_the_corpus(self, small_manifest, small_corpus, noise_corpus, tmp_path):
        moved = shutil.copytree(small_corpus, tmp_path / "moved")
        test = small_manifest.split("test")[:6]
        relocated = [replace(e, path=str(moved / PurePath(e.path).relative_to(small_corpus))) for e in test]
        a = make_noisy_testset(test, noise_corpus, seeds=(0,))
        b = make_noisy_testset(relocated, noise_corpus, seeds=(0,))
        assert [(i.noise_path, i.noise_offset, i.alpha) for i in a] == [(i.noise_path, i.noise_offset, i.alpha) for i in b]

    def test_empty_corpus(self, small_manifest, tmp_path):
        with pytest.raises(IngestionError):
            make_noisy_testset(small_manifest.split("test"), tmp_path)
