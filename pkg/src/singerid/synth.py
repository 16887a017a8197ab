"""Deterministic synthetic corpora for sanity experiments and smoke runs.

Two presets:

``overfit``
    4 singers x 2 albums x 1 song (8 songs, ~10.5 s each), album split
    train/val with no test albums. Small enough for a CPU model to
    memorize; the training-accuracy sanity check runs on this.

``confound``
    4 singers with distinct harmonic voices, each paired with one of 4
    loud accompaniment textures in the train and val albums, and with
    the NEXT singer's texture in the test album. A model keyed on the
    accompaniment scores near zero on the cross-paired test songs, so
    remix augmentation has a measurable direction of effect.

Stems are synthesized in float64, stored as float32 WAVs, and the
mixture is the float32 cast of the exact stem sum, so a self-pair remix
reproduces the mixture bit for bit.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .audio import AudioClip, PIPELINE_RATE, save_wav
from .corpus import DatasetManifest, assign_album_split, scan_corpus
from .errors import UnknownVariant
from .nnet import RngStream

VOCAL_LEVEL = 0.10
ACCOMP_LEVEL = 0.40
SONG_SECONDS = 10.5
F0_HOP_S = 0.010
F0_CONFIDENCE = 0.95

# fundamentals 3 semitones apart; brightness shapes the harmonic rolloff
SINGER_F0_HZ = tuple(220.0 * 2.0 ** (3 * i / 12.0) for i in range(4))
SINGER_BRIGHTNESS = (0.5, 0.8, 1.2, 1.6)
# low fifth-chord roots, one per accompaniment texture
TEXTURE_ROOT_HZ = (49.0, 65.4, 87.3, 116.5)


def _voice(n: int, rate: int, f0: float, brightness: float,
           stream: RngStream) -> np.ndarray:
    """Amplitude-modulated harmonic stack; peak level VOCAL_LEVEL."""
    t = np.arange(n, dtype=np.float64) / rate
    weights = np.array([k ** -brightness for k in range(1, 5)])
    sig = np.zeros(n, dtype=np.float64)
    for k, w in enumerate(weights, start=1):
        phase = float(stream.uniform(low=0.0, high=2 * np.pi))
        sig += w * np.sin(2 * np.pi * k * f0 * t + phase)
    sig /= weights.sum()
    am_phase = float(stream.uniform(low=0.0, high=2 * np.pi))
    am = 0.75 + 0.25 * np.sin(2 * np.pi * 0.5 * t + am_phase)
    return VOCAL_LEVEL * am * sig


def _texture(n: int, rate: int, root_hz: float,
             stream: RngStream) -> np.ndarray:
    """Loud fifth-chord drone plus a little noise; level ACCOMP_LEVEL."""
    t = np.arange(n, dtype=np.float64) / rate
    partials = (1.0, 1.5, 2.0)
    weights = (1.0, 0.7, 0.5)
    chord = np.zeros(n, dtype=np.float64)
    for ratio, w in zip(partials, weights):
        phase = float(stream.uniform(low=0.0, high=2 * np.pi))
        chord += w * np.sin(2 * np.pi * root_hz * ratio * t + phase)
    chord /= sum(weights)
    noise = stream.uniform((n,), low=-1.0, high=1.0)
    return ACCOMP_LEVEL * (0.9 * chord + 0.1 * noise)


def _write_song(root, artist: str, album: str, title: str, singer: int,
                texture: int, seed: int, duration_s: float = SONG_SECONDS,
                rate: int = PIPELINE_RATE) -> None:
    """Write mixture/vocal/accomp WAVs plus the f0 sidecar for one song."""
    track_dir = Path(root) / artist / album
    os.makedirs(track_dir, exist_ok=True)
    stream = RngStream(seed, f"synth:{artist}/{album}/{title}")
    n = int(round(duration_s * rate))
    f0 = SINGER_F0_HZ[singer]
    vocal = _voice(n, rate, f0, SINGER_BRIGHTNESS[singer], stream)
    accomp = _texture(n, rate, TEXTURE_ROOT_HZ[texture], stream)
    vocal32 = vocal.astype(np.float32)
    accomp32 = accomp.astype(np.float32)
    mixture32 = (vocal32.astype(np.float64)
                 + accomp32.astype(np.float64)).astype(np.float32)
    for name, samples in ((f"{title}.wav", mixture32),
                          (f"{title}.vocal.wav", vocal32),
                          (f"{title}.accomp.wav", accomp32)):
        save_wav(track_dir / name, AudioClip(samples, rate, 1),
                 encoding="float32")
    with open(track_dir / f"{title}.f0.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "frequency", "confidence"])
        t = 0.0
        while t < duration_s:
            writer.writerow([f"{t:.3f}", f"{f0:.3f}", f"{F0_CONFIDENCE}"])
            t += F0_HOP_S


def write_overfit_corpus(root, seed: int = 0) -> DatasetManifest:
    """8 songs, 4 singers, albums split 1 train / 1 val / 0 test."""
    for singer in range(4):
        for album in range(2):
            _write_song(root, f"singer{singer:02d}", f"album{album:02d}",
                        "track00", singer, texture=singer, seed=seed)
    quotas = {"train": 1, "val": 1, "test": 0}
    return assign_album_split(scan_corpus(root), seed=seed,
                              album_quotas=quotas)


def write_confound_corpus(root, seed: int = 0, train_albums: int = 2,
                          songs_per_album: int = 2) -> DatasetManifest:
    """Texture-confounded corpus with splits pinned by album role.

    Train and val albums pair singer i with texture i; the test album
    pairs singer i with texture (i + 1) % 4. The quota-driven random
    album split cannot express that role assignment, so the split field
    is set directly here.
    """
    roles = [(f"train{a:02d}", "train", 0) for a in range(train_albums)]
    roles += [("val00", "val", 0), ("test00", "test", 1)]
    for singer in range(4):
        for album_name, role, shift in roles:
            texture = (singer + shift) % 4
            n_tracks = songs_per_album if role != "val" else 1
            for track in range(n_tracks):
                _write_song(root, f"singer{singer:02d}", album_name,
                            f"track{track:02d}", singer, texture, seed=seed)
    entries = scan_corpus(root)
    role_by_album = {name: role for name, role, _ in roles}
    for entry in entries:
        entry.split = role_by_album[entry.album_id.split("/")[-1]]
    manifest = DatasetManifest(entries, split_seed=seed,
                               config_digest="confound-preset")
    manifest.validate()
    return manifest


PRESETS = {
    "overfit": write_overfit_corpus,
    "confound": write_confound_corpus,
}


def write_preset(name: str, root, seed: int = 0) -> DatasetManifest:
    if name not in PRESETS:
        raise UnknownVariant(
            f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name](root, seed=seed)
