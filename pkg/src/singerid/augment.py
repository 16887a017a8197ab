"""Shuffle-and-remix augmentation.

Every train song's vocal stem gets paired with the accompaniment stem of
a different artist's train song, drawn by a seeded generator, and the
pair is rendered back into a mixture. One remix per train song keeps the
remix set the same size as the origin train split.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, AudioClip, ingest, save_wav
from .corpus import DatasetManifest, SongEntry
from .errors import MissingStem, ShapeMismatch, SingleArtistCorpus
from .nnet import RngStream


@dataclass
class RemixPlan:
    seed: int
    pairings: list  # (vocal_song_id, accomp_song_id) tuples


def plan_remix(manifest: DatasetManifest, seed: int) -> RemixPlan:
    """Pair each train vocal with a uniformly drawn other-artist accompaniment.

    Vocals are visited in sorted song order with one sequential stream,
    so the plan depends only on (manifest, seed).
    """
    train = sorted(manifest.by_split("train"), key=lambda e: e.song_id)
    artists = {e.artist for e in train}
    if len(artists) < 2:
        raise SingleArtistCorpus(
            "remix needs train songs from at least two artists")
    stream = RngStream(seed, "remix-plan")
    pairings = []
    for vocal in train:
        candidates = [e.song_id for e in train if e.artist != vocal.artist]
        pick = int(stream.integers(0, len(candidates)))
        pairings.append((vocal.song_id, candidates[pick]))
    return RemixPlan(seed=seed, pairings=pairings)


def render_remix(vocal: AudioClip, accomp: AudioClip) -> AudioClip:
    """Mix a vocal with an accompaniment, output length = vocal length.

    The accompaniment is trimmed, or looped if shorter; if the summed
    peak exceeds 1.0 the whole mix is scaled down by that peak.
    """
    if vocal.channels != 1 or accomp.channels != 1:
        raise ShapeMismatch("render_remix expects mono clips")
    if vocal.sample_rate != accomp.sample_rate:
        raise ShapeMismatch(
            f"rate mismatch {vocal.sample_rate} vs {accomp.sample_rate}")
    n = vocal.samples.size
    acc = accomp.samples
    if acc.size < n:
        if acc.size == 0:
            acc = np.zeros(n, dtype=np.float32)
        else:
            reps = -(-n // acc.size)
            acc = np.tile(acc, reps)
    mix = vocal.samples.astype(np.float64) + acc[:n].astype(np.float64)
    peak = np.max(np.abs(mix)) if n else 0.0
    if peak > 1.0:
        mix /= peak
    return AudioClip(mix.astype(np.float32), vocal.sample_rate, 1)


def _remix_filename(vocal_id: str, accomp_id: str) -> str:
    v = vocal_id.replace("/", "-")
    a = accomp_id.replace("/", "-")
    return f"remix_{v}_{a}.wav"


def _render_pair(vocal_path: str, accomp_path: str, out_path: str) -> None:
    vocal = ingest(vocal_path, PIPELINE_RATE)
    accomp = ingest(accomp_path, PIPELINE_RATE)
    save_wav(out_path, render_remix(vocal, accomp))


def render_plan(plan: RemixPlan, manifest: DatasetManifest, out_dir,
                jobs: int = 1) -> DatasetManifest:
    """Render every pairing to a float32 WAV and record the paths.

    Re-rendering the same plan overwrites each file with identical bytes.
    Returns a new manifest whose train entries carry a "remix" path.
    Pairs are independent, so `jobs > 1` fans out across processes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    remix_paths = {}
    tasks = []
    for vocal_id, accomp_id in plan.pairings:
        v_entry = manifest.entry(vocal_id)
        a_entry = manifest.entry(accomp_id)
        for e, key in ((v_entry, "vocal_stem"), (a_entry, "accomp_stem")):
            if not e.paths.get(key) or not Path(e.paths[key]).exists():
                raise MissingStem(f"{e.song_id} is missing its {key}")
        path = out_dir / _remix_filename(vocal_id, accomp_id)
        tasks.append((v_entry.paths["vocal_stem"],
                      a_entry.paths["accomp_stem"], str(path)))
        remix_paths[vocal_id] = str(path)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_render_pair, *zip(*tasks)))
    else:
        for task in tasks:
            _render_pair(*task)
    entries = []
    for e in manifest.entries:
        paths = dict(e.paths)
        if e.song_id in remix_paths:
            paths["remix"] = remix_paths[e.song_id]
        entries.append(SongEntry(e.song_id, e.artist, e.artist_label, e.album_id,
                                 e.title, e.duration_s, paths, e.split))
    return DatasetManifest(entries, manifest.split_seed, manifest.config_digest)


def save_plan(plan: RemixPlan, path) -> None:
    payload = {"seed": plan.seed,
               "pairings": [list(p) for p in plan.pairings]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_plan(path) -> RemixPlan:
    payload = json.loads(Path(path).read_text())
    return RemixPlan(seed=payload["seed"],
                     pairings=[tuple(p) for p in payload["pairings"]])
