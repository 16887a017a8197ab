"""Per-song feature caching.

Each dataset item gets two cached planes: "mel" (stacked log-mel images,
[n_segments, 128, 157]) and "melody" (matching one-hot piano rolls; all
zeros when the song has no f0 sidecar). Files use a small binary header
so a cache can be validated without numpy pickles: magic "SIDF",
version, dtype code, rank, dims, then the row-major little-endian
payload.

Cache writes are atomic (tempfile + rename) so a killed run never leaves
a truncated file behind.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, SEGMENT_SECONDS, ingest, segment
from .corpus import ViewItem
from .dsp import N_FRAMES, N_MELS, log_mel
from .errors import CacheFormatError, MissingFeatureCache
from .melody import parse_f0_csv, quantize_melody

MAGIC = b"SIDF"
VERSION = 1
_DTYPES = {0: np.dtype("<f4")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}
PLANES = ("mel", "melody")


def write_cache(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.float32)
    if array.ndim > 255:
        raise ValueError("rank too large")
    header = MAGIC + struct.pack("<HBB", VERSION, 0, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(array.astype("<f4").tobytes())
    os.replace(tmp, path)


def read_cache(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            if len(head) < 8 or head[:4] != MAGIC:
                raise CacheFormatError(f"{path}: bad magic")
            version, dtype_code, rank = struct.unpack("<HBB", head[4:])
            if version != VERSION:
                raise CacheFormatError(f"{path}: version {version} unsupported")
            if dtype_code not in _DTYPES:
                raise CacheFormatError(f"{path}: unknown dtype code {dtype_code}")
            dims_raw = fh.read(4 * rank)
            if len(dims_raw) < 4 * rank:
                raise CacheFormatError(f"{path}: truncated dims")
            dims = struct.unpack(f"<{rank}I", dims_raw)
            payload = fh.read()
    except FileNotFoundError:
        raise MissingFeatureCache(f"feature cache missing: {path}") from None
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise CacheFormatError(
            f"{path}: payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=_DTYPES[dtype_code]).reshape(dims).copy()


def feature_path(cache_dir, item_id: str, plane: str) -> Path:
    """Stable, filesystem-safe cache location for one item plane."""
    safe = re.sub(r"[^A-Za-z0-9._-]+", "-", item_id)
    tag = hashlib.sha256(item_id.encode()).hexdigest()[:10]
    return Path(cache_dir) / f"{safe}.{tag}.{plane}.sidf"


def compute_item_features(item: ViewItem) -> dict:
    """Segment one item's audio and render both feature planes."""
    clip = ingest(item.audio_path, PIPELINE_RATE)
    segments = segment(clip, SEGMENT_SECONDS, song_id=item.song_id)
    mel = np.zeros((len(segments), N_MELS, N_FRAMES), dtype=np.float32)
    melody = np.zeros_like(mel)
    contour = parse_f0_csv(item.f0_path) if item.f0_path else None
    for i, seg in enumerate(segments):
        mel[i] = log_mel(seg).values
        if contour is not None and len(contour):
            melody[i] = quantize_melody(contour, seg.index * SEGMENT_SECONDS)
    return {"mel": mel, "melody": melody}


def _compute_and_store(args):
    item, cache_dir = args
    planes = compute_item_features(item)
    for plane, array in planes.items():
        write_cache(feature_path(cache_dir, item.item_id, plane), array)
    return item.item_id, planes["mel"].shape[0]


def ensure_features(items, cache_dir, jobs: int = 1, force: bool = False) -> dict:
    """Cache any missing planes; returns {item_id: segment_count}.

    Existing files are trusted unless ``force``; re-running is cheap and
    idempotent.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    done = {}
    todo = []
    for item in items:
        paths = [feature_path(cache_dir, item.item_id, p) for p in PLANES]
        if not force and all(p.exists() for p in paths):
            done[item.item_id] = read_cache(paths[0]).shape[0]
        else:
            todo.append((item, cache_dir))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for item_id, n_segments in pool.map(_compute_and_store, todo):
                done[item_id] = n_segments
    else:
        for args in todo:
            item_id, n_segments = _compute_and_store(args)
            done[item_id] = n_segments
    return done


def load_item_features(cache_dir, item: ViewItem) -> tuple[np.ndarray, np.ndarray]:
    """Read both cached planes for an item."""
    mel = read_cache(feature_path(cache_dir, item.item_id, "mel"))
    melody = read_cache(feature_path(cache_dir, item.item_id, "melody"))
    return mel, melody
