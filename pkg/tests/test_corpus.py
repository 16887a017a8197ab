"""Corpus scanning, album-split, and variant-view tests."""

import json

import pytest
from _corpus import make_corpus, write_song

import numpy as np

from singerid.corpus import (DEFAULT_ALBUM_QUOTAS, DatasetManifest,
                             assign_album_split, build_variant, load_manifest,
                             save_manifest, scan_corpus)
from singerid.errors import (EmptyCorpus, InsufficientAlbums, LengthMismatch,
                             MissingRemixPlan, MissingStem, UnknownVariant)


def scan_and_split(root, seed=0, **kwargs):
    return assign_album_split(scan_corpus(root), seed, **kwargs)


def test_scan_counts_and_ids(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=1, n_tracks=3)
    entries = scan_corpus(tmp_path)
    assert len(entries) == 6
    assert all(e.is_complete() for e in entries)
    assert entries[0].song_id == "artist00/album00/track00"
    assert entries[0].album_id == "artist00/album00"
    labels = {e.artist: e.artist_label for e in entries}
    assert labels == {"artist00": 0, "artist01": 1}
    assert all(abs(e.duration_s - 0.25) < 1e-6 for e in entries)


def test_scan_flags_missing_sidecars(tmp_path):
    rng = np.random.default_rng(1)
    write_song(tmp_path / "a" / "x", "full", rng)
    write_song(tmp_path / "a" / "x", "nof0", rng, f0=False)
    write_song(tmp_path / "a" / "x", "nostems", rng, stems=False)
    entries = {e.title: e for e in scan_corpus(tmp_path)}
    assert entries["full"].is_complete()
    assert not entries["nof0"].is_complete()
    assert entries["nof0"].paths["f0_csv"] is None
    assert entries["nostems"].paths["vocal_stem"] is None


def test_scan_empty_corpus(tmp_path):
    with pytest.raises(EmptyCorpus):
        scan_corpus(tmp_path)


def test_scan_rejects_length_mismatch(tmp_path):
    rng = np.random.default_rng(2)
    write_song(tmp_path / "a" / "x", "t", rng, duration_s=0.5)
    # overwrite the vocal stem with a much shorter clip
    write_song(tmp_path / "scratch", "s", rng, duration_s=0.2)
    (tmp_path / "a" / "x" / "t.vocal.wav").write_bytes(
        (tmp_path / "scratch" / "s.wav").read_bytes())
    import shutil
    shutil.rmtree(tmp_path / "scratch")
    with pytest.raises(LengthMismatch):
        scan_corpus(tmp_path)


def test_split_quotas_and_invariants(tmp_path):
    make_corpus(tmp_path, n_artists=4, n_albums=6, n_tracks=1)
    manifest = scan_and_split(tmp_path, seed=5)
    manifest.validate()
    for artist in manifest.artists:
        albums = {s: {e.album_id for e in manifest.by_split(s)
                      if e.artist == artist} for s in ("train", "val", "test")}
        assert len(albums["train"]) == 4
        assert len(albums["val"]) == 1
        assert len(albums["test"]) == 1
    assert manifest.split_seed == 5


def test_split_extra_albums_go_to_train(tmp_path):
    make_corpus(tmp_path, n_artists=1, n_albums=8, n_tracks=1)
    manifest = scan_and_split(tmp_path, seed=1)
    assert len({e.album_id for e in manifest.by_split("train")}) == 6
    assert len(manifest.by_split("val")) == 1
    assert len(manifest.by_split("test")) == 1


def test_split_determinism_and_seed_sensitivity(tmp_path):
    make_corpus(tmp_path, n_artists=3, n_albums=6, n_tracks=1)
    a = scan_and_split(tmp_path, seed=7)
    b = scan_and_split(tmp_path, seed=7)
    assert [(e.song_id, e.split) for e in a.entries] == \
           [(e.song_id, e.split) for e in b.entries]
    seen = {tuple(sorted(e.album_id for e in scan_and_split(tmp_path, seed=s)
                         .by_split("test"))) for s in range(8)}
    assert len(seen) > 1


def test_split_per_artist_independence(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=1)
    before = {e.song_id: e.split for e in scan_and_split(tmp_path, seed=3).entries}
    rng = np.random.default_rng(9)
    for b in range(6):
        write_song(tmp_path / "artist99" / f"album{b:02d}", "track00", rng)
    after = {e.song_id: e.split for e in scan_and_split(tmp_path, seed=3).entries}
    for song_id, split in before.items():
        assert after[song_id] == split


def test_split_insufficient_albums(tmp_path):
    make_corpus(tmp_path, n_artists=1, n_albums=2, n_tracks=1)
    with pytest.raises(InsufficientAlbums):
        scan_and_split(tmp_path)
    # smaller quotas make the same corpus valid
    manifest = scan_and_split(tmp_path, album_quotas={"train": 1, "val": 1, "test": 0})
    assert len(manifest.by_split("test")) == 0 or manifest.validate() is None


def test_manifest_jsonl_round_trip(tmp_path):
    make_corpus(tmp_path / "c", n_artists=2, n_albums=6, n_tracks=2)
    manifest = scan_and_split(tmp_path / "c", seed=11)
    manifest.config_digest = "abc123"
    path = tmp_path / "manifest.jsonl"
    save_manifest(manifest, path)
    lines = path.read_text().strip().split("\n")
    meta = json.loads(lines[0])
    assert meta == {"split_seed": 11, "config_digest": "abc123"}
    assert len(lines) == 1 + len(manifest.entries)
    back = load_manifest(path)
    assert back.split_seed == 11 and back.config_digest == "abc123"
    key = lambda m: sorted((e.song_id, e.split, e.artist_label,
                            tuple(sorted((k, v) for k, v in e.paths.items() if v)))
                           for e in m.entries)
    assert key(back) == key(manifest)


def test_variant_origin_and_counts(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=2)
    manifest = scan_and_split(tmp_path, seed=0)
    view = build_variant(manifest, "origin")
    n_train = len(manifest.by_split("train"))
    assert len(view.train_items) == n_train
    assert all(i.source == "mixture" for i in view.train_items)
    assert all(i.audio_path.endswith(f"{i.song_id.split('/')[-1]}.wav")
               for i in view.train_items)
    assert len(view.val_items) == len(manifest.by_split("val"))
    assert len(view.test_items) == len(manifest.by_split("test"))
    assert all(i.source == "mixture" for i in view.val_items + view.test_items)


def test_variant_vocal_only(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=1)
    manifest = scan_and_split(tmp_path, seed=0)
    view = build_variant(manifest, "vocal_only")
    assert all(i.audio_path.endswith(".vocal.wav") for i in view.train_items)
    assert all(i.source == "mixture" for i in view.test_items)
    # labels still the song's own artist
    for item in view.train_items:
        assert item.artist == item.song_id.split("/")[0]


def test_variant_vocal_only_missing_stem(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=1, stems=False)
    manifest = scan_and_split(tmp_path, seed=0)
    with pytest.raises(MissingStem):
        build_variant(manifest, "vocal_only")


def test_variant_remix_requires_plan(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=1)
    manifest = scan_and_split(tmp_path, seed=0)
    with pytest.raises(MissingRemixPlan):
        build_variant(manifest, "remix")
    with pytest.raises(MissingRemixPlan):
        build_variant(manifest, "data_aug")


def test_variant_unknown_name(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=1)
    manifest = scan_and_split(tmp_path, seed=0)
    with pytest.raises(UnknownVariant):
        build_variant(manifest, "extra_loud")


def test_validate_catches_album_leak(tmp_path):
    make_corpus(tmp_path, n_artists=2, n_albums=6, n_tracks=2)
    manifest = scan_and_split(tmp_path, seed=0)
    manifest.entries[0].split = "test" if manifest.entries[0].split != "test" else "train"
    with pytest.raises(ValueError):
        manifest.validate()
