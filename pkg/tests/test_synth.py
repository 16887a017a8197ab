"""Synthetic-corpus preset tests: layout, split roles, exact stems,
texture pairing, and determinism."""

import numpy as np
import pytest

from singerid.audio import load_wav
from singerid.corpus import build_variant
from singerid.dsp import stft
from singerid.errors import UnknownVariant
from singerid.melody import parse_f0_csv
from singerid.synth import (SINGER_F0_HZ, TEXTURE_ROOT_HZ,
                            write_confound_corpus, write_overfit_corpus,
                            write_preset)


def dominant_bass_hz(path, rate=16000):
    """Frequency of the strongest STFT bin below 150 Hz, mid-song frame."""
    clip = load_wav(path)
    spec = np.abs(stft(clip.samples))
    cutoff = int(150 * 1024 / rate) + 1
    frame = spec.shape[1] // 2
    return np.argmax(spec[:cutoff, frame]) * rate / 1024


def test_overfit_corpus_shape(tmp_path):
    manifest = write_overfit_corpus(tmp_path, seed=0)
    assert len(manifest.entries) == 8
    assert len(manifest.artists) == 4
    assert len(manifest.by_split("train")) == 4
    assert len(manifest.by_split("val")) == 4
    assert manifest.by_split("test") == []
    for entry in manifest.entries:
        assert entry.is_complete()
        assert abs(entry.duration_s - 10.5) < 0.01
    manifest.validate()


def test_stems_sum_exactly_to_mixture(tmp_path):
    manifest = write_overfit_corpus(tmp_path, seed=0)
    entry = manifest.entries[0]
    mix = load_wav(entry.paths["mixture"]).samples
    vocal = load_wav(entry.paths["vocal_stem"]).samples.astype(np.float64)
    accomp = load_wav(entry.paths["accomp_stem"]).samples.astype(np.float64)
    assert np.array_equal(mix, (vocal + accomp).astype(np.float32))
    assert np.abs(mix).max() <= 1.0


def test_f0_sidecar_matches_singer(tmp_path):
    manifest = write_overfit_corpus(tmp_path, seed=0)
    for singer in range(4):
        entry = next(e for e in manifest.entries
                     if e.artist == f"singer{singer:02d}")
        contour = parse_f0_csv(entry.paths["f0_csv"])
        assert np.allclose(contour.f0_hz, SINGER_F0_HZ[singer])
        assert np.all(contour.confidence == 0.95)
        assert contour.times[-1] > 10.0


def test_confound_split_roles(tmp_path):
    manifest = write_confound_corpus(tmp_path, seed=0)
    assert len(manifest.by_split("train")) == 16
    assert len(manifest.by_split("val")) == 4
    assert len(manifest.by_split("test")) == 8
    manifest.validate()
    for entry in manifest.entries:
        role = entry.album_id.split("/")[-1]
        assert entry.split == {"train00": "train", "train01": "train",
                               "val00": "val", "test00": "test"}[role]
    view = build_variant(manifest, "origin")
    assert len(view.train_items) == 16 and len(view.test_items) == 8


def test_confound_texture_pairing(tmp_path):
    manifest = write_confound_corpus(tmp_path, seed=0)
    for singer in range(4):
        artist = f"singer{singer:02d}"
        train = next(e for e in manifest.entries
                     if e.artist == artist and e.split == "train")
        test = next(e for e in manifest.entries
                    if e.artist == artist and e.split == "test")
        train_root = dominant_bass_hz(train.paths["accomp_stem"])
        test_root = dominant_bass_hz(test.paths["accomp_stem"])
        assert abs(train_root - TEXTURE_ROOT_HZ[singer]) < 16.0
        assert abs(test_root - TEXTURE_ROOT_HZ[(singer + 1) % 4]) < 16.0
        # vocal fundamental follows the singer in both splits
        for entry in (train, test):
            clip = load_wav(entry.paths["vocal_stem"])
            spec = np.abs(stft(clip.samples))
            peak_hz = np.argmax(spec[:, spec.shape[1] // 2]) * 16000 / 1024
            assert abs(peak_hz - SINGER_F0_HZ[singer]) < 16.0


def test_accompaniment_dominates_vocal(tmp_path):
    manifest = write_confound_corpus(tmp_path, seed=0)
    entry = manifest.entries[0]
    vocal = load_wav(entry.paths["vocal_stem"]).samples
    accomp = load_wav(entry.paths["accomp_stem"]).samples
    v_rms = float(np.sqrt(np.mean(vocal.astype(np.float64) ** 2)))
    a_rms = float(np.sqrt(np.mean(accomp.astype(np.float64) ** 2)))
    assert a_rms > 3.0 * v_rms


def test_preset_determinism(tmp_path):
    write_preset("overfit", tmp_path / "a", seed=7)
    write_preset("overfit", tmp_path / "b", seed=7)
    write_preset("overfit", tmp_path / "c", seed=8)
    wav = "singer00/album00/track00.wav"
    a = (tmp_path / "a" / wav).read_bytes()
    assert a == (tmp_path / "b" / wav).read_bytes()
    assert a != (tmp_path / "c" / wav).read_bytes()


def test_unknown_preset(tmp_path):
    with pytest.raises(UnknownVariant):
        write_preset("nope", tmp_path)
