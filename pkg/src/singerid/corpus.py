"""Corpus scanning, album-split manifests, and dataset-variant views.

Layout on disk is ``root/<artist>/<album>/<track>.wav`` for the mixture,
with optional sidecars ``<track>.vocal.wav``, ``<track>.accomp.wav`` and
``<track>.f0.csv``. Songs from one album always land in the same split,
and every dataset variant trains on a different audio source while val
and test stay on the original mixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .audio import probe_wav
from .errors import (EmptyCorpus, InsufficientAlbums, LengthMismatch,
                     MissingRemixPlan, MissingStem, UnknownVariant)
from .nnet import RngStream

SPLITS = ("train", "val", "test")
VARIANTS = ("origin", "vocal_only", "remix", "data_aug")
DEFAULT_ALBUM_QUOTAS = {"train": 4, "val": 1, "test": 1}

_PATH_KEYS = ("mixture", "vocal_stem", "accomp_stem", "f0_csv", "remix")


@dataclass
class SongEntry:
    """One mixture track plus its sidecar stems and f0 contour."""

    song_id: str
    artist: str
    artist_label: int
    album_id: str
    title: str
    duration_s: float
    paths: dict = field(default_factory=dict)
    split: str = ""

    def is_complete(self) -> bool:
        return all(self.paths.get(k) for k in ("mixture", "vocal_stem",
                                               "accomp_stem", "f0_csv"))


@dataclass
class DatasetManifest:
    entries: list
    split_seed: int | None = None
    config_digest: str = ""

    @property
    def artists(self) -> list[str]:
        return sorted({e.artist for e in self.entries})

    def by_split(self, split: str) -> list[SongEntry]:
        return [e for e in self.entries if e.split == split]

    def entry(self, song_id: str) -> SongEntry:
        for e in self.entries:
            if e.song_id == song_id:
                return e
        raise KeyError(song_id)

    def validate(self) -> None:
        """Check the album-split and coverage invariants."""
        album_splits: dict[str, set] = {}
        for e in self.entries:
            album_splits.setdefault(e.album_id, set()).add(e.split)
        for album, splits in album_splits.items():
            if len(splits) > 1:
                raise ValueError(f"album {album} spans splits {sorted(splits)}")
        for split in SPLITS:
            present = {e.artist for e in self.entries if e.split == split}
            if not present:
                continue  # split disabled by a zero quota
            missing = set(self.artists) - present
            if missing:
                raise ValueError(f"artists {sorted(missing)} absent from {split}")


def scan_corpus(root) -> list[SongEntry]:
    """Walk an artist/album/track tree and build unassigned entries.

    Missing sidecars are recorded as None in the entry's path table, not
    treated as fatal; a stem whose duration disagrees with the mixture by
    more than 0.1 s is rejected outright.
    """
    root = Path(root)
    entries = []
    artists = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    labels = {name: i for i, name in enumerate(artists)}
    for artist in artists:
        for album_dir in sorted((root / artist).iterdir()):
            if not album_dir.is_dir():
                continue
            for wav in sorted(album_dir.glob("*.wav")):
                if wav.name.endswith((".vocal.wav", ".accomp.wav")):
                    continue
                title = wav.stem
                rate, _, frames = probe_wav(wav)
                duration = frames / rate
                paths = {"mixture": str(wav)}
                for key, suffix in (("vocal_stem", ".vocal.wav"),
                                    ("accomp_stem", ".accomp.wav"),
                                    ("f0_csv", ".f0.csv")):
                    side = wav.with_name(title + suffix)
                    paths[key] = str(side) if side.exists() else None
                for key in ("vocal_stem", "accomp_stem"):
                    if paths[key]:
                        s_rate, _, s_frames = probe_wav(paths[key])
                        if abs(s_frames / s_rate - duration) > 0.1:
                            raise LengthMismatch(
                                f"{paths[key]}: stem duration {s_frames / s_rate:.2f}s "
                                f"vs mixture {duration:.2f}s")
                entries.append(SongEntry(
                    song_id=f"{artist}/{album_dir.name}/{title}",
                    artist=artist,
                    artist_label=labels[artist],
                    album_id=f"{artist}/{album_dir.name}",
                    title=title,
                    duration_s=duration,
                    paths=paths,
                ))
    if not entries:
        raise EmptyCorpus(f"no mixture tracks found under {root}")
    return entries


def assign_album_split(entries, seed: int,
                       album_quotas: dict | None = None,
                       config_digest: str = "") -> DatasetManifest:
    """Assign whole albums to train/val/test, per artist, by seeded shuffle.

    Each artist's albums are permuted by a stream keyed on the artist
    name, so adding an artist never reshuffles the others. Albums beyond
    the quota total go to train.
    """
    quotas = dict(DEFAULT_ALBUM_QUOTAS if album_quotas is None else album_quotas)
    need = sum(quotas.values())
    by_artist: dict[str, list[str]] = {}
    for e in entries:
        by_artist.setdefault(e.artist, [])
        if e.album_id not in by_artist[e.artist]:
            by_artist[e.artist].append(e.album_id)
    album_split = {}
    for artist in sorted(by_artist):
        albums = sorted(by_artist[artist])
        if len(albums) < need:
            raise InsufficientAlbums(
                f"artist {artist} has {len(albums)} albums; needs {need}")
        order = RngStream(seed, f"split:{artist}").permutation(len(albums))
        shuffled = [albums[i] for i in order]
        cursor = 0
        for split in SPLITS:
            for album in shuffled[cursor:cursor + quotas[split]]:
                album_split[album] = split
            cursor += quotas[split]
        for album in shuffled[cursor:]:
            album_split[album] = "train"
    assigned = []
    for e in entries:
        assigned.append(SongEntry(e.song_id, e.artist, e.artist_label, e.album_id,
                                  e.title, e.duration_s, dict(e.paths),
                                  split=album_split[e.album_id]))
    manifest = DatasetManifest(assigned, split_seed=seed, config_digest=config_digest)
    manifest.validate()
    return manifest


@dataclass
class ViewItem:
    """One training/eval item: an audio source bound to the vocal's label."""

    item_id: str
    song_id: str
    artist: str
    label: int
    split: str
    source: str          # mixture | vocal | remix
    audio_path: str
    f0_path: str | None


@dataclass
class VariantView:
    variant: str
    train_items: list
    val_items: list
    test_items: list

    def items(self, split: str) -> list[ViewItem]:
        return {"train": self.train_items, "val": self.val_items,
                "test": self.test_items}[split]


def _mixture_item(entry: SongEntry, prefix: str = "origin") -> ViewItem:
    return ViewItem(f"{prefix}:{entry.song_id}", entry.song_id, entry.artist,
                    entry.artist_label, entry.split, "mixture",
                    entry.paths["mixture"], entry.paths.get("f0_csv"))


def build_variant(manifest: DatasetManifest, variant: str,
                  remix_plan=None) -> VariantView:
    """Resolve a dataset variant into concrete (audio, label) items.

    Training audio depends on the variant; the melody sidecar and the
    label always follow the vocal's source song. Val and test items are
    the untouched mixtures for every variant.
    """
    if variant not in VARIANTS:
        raise UnknownVariant(f"variant must be one of {VARIANTS}, got {variant!r}")
    train = manifest.by_split("train")
    train_items: list[ViewItem] = []

    def origin_items():
        return [_mixture_item(e) for e in train]

    def vocal_items():
        items = []
        for e in train:
            if not e.paths.get("vocal_stem"):
                raise MissingStem(f"{e.song_id} has no vocal stem")
            items.append(ViewItem(f"vocal:{e.song_id}", e.song_id, e.artist,
                                  e.artist_label, "train", "vocal",
                                  e.paths["vocal_stem"], e.paths.get("f0_csv")))
        return items

    def remix_items():
        if remix_plan is None:
            raise MissingRemixPlan(f"variant {variant!r} requires a remix plan")
        items = []
        for vocal_id, accomp_id in remix_plan.pairings:
            e = manifest.entry(vocal_id)
            path = e.paths.get("remix")
            if not path or not Path(path).exists():
                raise MissingRemixPlan(
                    f"remix audio for {vocal_id} not rendered; run the augment step")
            items.append(ViewItem(f"remix:{vocal_id}|{accomp_id}", vocal_id,
                                  e.artist, e.artist_label, "train", "remix",
                                  path, e.paths.get("f0_csv")))
        return items

    if variant == "origin":
        train_items = origin_items()
    elif variant == "vocal_only":
        train_items = vocal_items()
    elif variant == "remix":
        train_items = remix_items()
    else:
        train_items = origin_items() + vocal_items() + remix_items()
    val_items = [_mixture_item(e) for e in manifest.by_split("val")]
    test_items = [_mixture_item(e) for e in manifest.by_split("test")]
    return VariantView(variant, train_items, val_items, test_items)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write JSON Lines: one meta line, then one entry per line."""
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"split_seed": manifest.split_seed,
                "config_digest": manifest.config_digest}
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for e in sorted(manifest.entries, key=lambda x: x.song_id):
            record = {
                "song_id": e.song_id, "artist": e.artist,
                "artist_label": e.artist_label, "album_id": e.album_id,
                "title": e.title, "duration_s": e.duration_s,
                "split": e.split,
                "paths": {k: e.paths.get(k) for k in _PATH_KEYS
                          if e.paths.get(k) is not None or k != "remix"},
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        meta = json.loads(fh.readline())
        entries = []
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            entries.append(SongEntry(r["song_id"], r["artist"], r["artist_label"],
                                     r["album_id"], r["title"], r["duration_s"],
                                     r["paths"], r["split"]))
    return DatasetManifest(entries, split_seed=meta.get("split_seed"),
                           config_digest=meta.get("config_digest", ""))
