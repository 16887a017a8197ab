"""Melody contours: f0 track parsing and semitone quantization.

A contour is a time series of (time, f0, confidence) rows, typically
produced by an external pitch tracker and stored as a CSV sidecar next
to each track. Quantization renders it as a 128 x n_frames one-hot
piano-roll plane aligned with the log-mel frame grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio import PIPELINE_RATE
from .dsp import HOP_LENGTH, N_FRAMES
from .errors import (MissingHeader, NonMonotonicTime, NonPositiveFrequency,
                     ValueOutOfRange)

N_PITCH_BINS = 128
MATCH_TOLERANCE_S = 0.020
CONFIDENCE_THRESHOLD = 0.5


@dataclass
class MelodyContour:
    """f0 track: times strictly increasing, f0 in Hz (0 = unvoiced)."""

    times: np.ndarray = field(repr=False)
    f0_hz: np.ndarray = field(repr=False)
    confidence: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if not (self.times.shape == self.f0_hz.shape == self.confidence.shape):
            raise ValueError("times, f0_hz, confidence must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise NonMonotonicTime("contour times must be strictly increasing")
        if np.any(self.f0_hz < 0):
            raise NonPositiveFrequency("negative f0 (use 0 for unvoiced)")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueOutOfRange("confidence values must lie in [0, 1]")

    def __len__(self):
        return self.times.size


def parse_f0_csv(path) -> MelodyContour:
    """Read a pitch-tracker CSV with columns time, frequency, confidence.

    Column order is free and extra columns are ignored; names are matched
    case-insensitively.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeader(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        try:
            cols = [names.index(k) for k in ("time", "frequency", "confidence")]
        except ValueError:
            raise MissingHeader(
                f"{path}: header must name time, frequency, confidence; got {header}"
            ) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            try:
                rows.append(tuple(float(row[c]) for c in cols))
            except (ValueError, IndexError):
                raise ValueOutOfRange(f"{path}:{lineno}: unparsable row {row}") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return MelodyContour(data[:, 0], data[:, 1], data[:, 2])


def hz_to_bin(f0_hz: float) -> int:
    """Nearest MIDI note number for a frequency, clamped to [0, 127]."""
    if f0_hz <= 0:
        raise NonPositiveFrequency(f"cannot quantize f0 = {f0_hz}")
    note = int(np.floor(69.0 + 12.0 * np.log2(f0_hz / 440.0) + 0.5))
    return min(max(note, 0), N_PITCH_BINS - 1)


def quantize_melody(contour: MelodyContour, segment_start_s: float = 0.0,
                    n_frames: int = N_FRAMES, hop: int = HOP_LENGTH,
                    sample_rate: int = PIPELINE_RATE) -> np.ndarray:
    """One-hot piano roll [128, n_frames] on the log-mel frame grid.

    Each frame center picks its nearest contour row (ties go to the
    earlier row). The frame stays empty when no row lies within 20 ms,
    the row is unvoiced (f0 = 0), or its confidence is below 0.5.
    """
    plane = np.zeros((N_PITCH_BINS, n_frames), dtype=np.float32)
    if len(contour) == 0:
        return plane
    centers = segment_start_s + np.arange(n_frames) * (hop / sample_rate)
    right = np.searchsorted(contour.times, centers)
    left = np.clip(right - 1, 0, len(contour) - 1)
    right = np.clip(right, 0, len(contour) - 1)
    d_left = np.abs(centers - contour.times[left])
    d_right = np.abs(contour.times[right] - centers)
    nearest = np.where(d_left <= d_right, left, right)
    dist = np.minimum(d_left, d_right)
    ok = ((dist <= MATCH_TOLERANCE_S)
          & (contour.f0_hz[nearest] > 0)
          & (contour.confidence[nearest] >= CONFIDENCE_THRESHOLD))
    for i in np.nonzero(ok)[0]:
        plane[hz_to_bin(contour.f0_hz[nearest[i]]), i] = 1.0
    return plane
