"""Waveform I/O, channel mixdown, band-limited resampling, and segmentation.

All pipeline audio is mono float32 at 16 kHz; ingest converts everything
to that form. WAV support is deliberately narrow: RIFF PCM 16-bit integer
and IEEE float 32-bit, one or two channels. Artifact audio is always
written as float32 so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedWav, ShapeMismatch, UnsupportedEncoding

PIPELINE_RATE = 16000
SEGMENT_SECONDS = 5.0

# Integer PCM scale: divide by 32768 so -32768 maps to -1.0 exactly.
_PCM16_SCALE = 32768.0


@dataclass
class AudioClip:
    """Sampled waveform. ``samples`` is flat and channel-interleaved."""

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels not in (1, 2):
            raise ValueError(f"channels must be 1 or 2, got {self.channels}")
        if self.samples.size % self.channels != 0:
            raise ShapeMismatch(
                f"{self.samples.size} samples not a multiple of {self.channels} channels")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite sample values")

    @property
    def n_frames(self) -> int:
        return self.samples.size // self.channels

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.sample_rate


@dataclass
class Segment:
    """One fixed-length mono window cut from a song."""

    source_song_id: str
    index: int
    samples: np.ndarray = field(repr=False)
    sample_rate: int = PIPELINE_RATE


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise MalformedWav(f"truncated {what}")
    return data


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32, 1-2 channels)."""
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise MalformedWav(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) < 8:
                raise MalformedWav(f"{path}: truncated chunk header")
            chunk_id, size = head[:4], struct.unpack("<I", head[4:])[0]
            if chunk_id == b"fmt ":
                if size < 16:
                    raise MalformedWav(f"{path}: fmt chunk too small")
                fmt = struct.unpack("<HHIIHH", _read_exact(fh, 16, "fmt chunk")[:16])
                fh.seek(size - 16 + (size & 1), 1)
            elif chunk_id == b"data":
                data = _read_exact(fh, size, "data chunk")
                break
            else:
                fh.seek(size + (size & 1), 1)
    if fmt is None or data is None:
        raise MalformedWav(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels unsupported")
    if rate <= 0:
        raise MalformedWav(f"{path}: bad sample rate {rate}")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float32) / np.float32(_PCM16_SCALE)
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").copy()
        if not np.all(np.isfinite(samples)):
            raise MalformedWav(f"{path}: non-finite float samples")
        np.clip(samples, -1.0, 1.0, out=samples)
    else:
        raise UnsupportedEncoding(
            f"{path}: format {audio_format}/{bits}-bit not supported (PCM16 or float32 only)")
    if samples.size % channels != 0:
        raise MalformedWav(f"{path}: data size not a multiple of the frame size")
    return AudioClip(samples, rate, channels)


def probe_wav(path) -> tuple[int, int, int]:
    """Header-only inspection: (sample_rate, channels, n_frames).

    Reads chunk headers without loading the payload, so it is cheap even
    for long tracks.
    """
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise MalformedWav(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data_size = None
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) < 8:
                raise MalformedWav(f"{path}: truncated chunk header")
            chunk_id, size = head[:4], struct.unpack("<I", head[4:])[0]
            if chunk_id == b"fmt ":
                if size < 16:
                    raise MalformedWav(f"{path}: fmt chunk too small")
                fmt = struct.unpack("<HHIIHH", _read_exact(fh, 16, "fmt chunk")[:16])
                fh.seek(size - 16 + (size & 1), 1)
            elif chunk_id == b"data":
                data_size = size
                break
            else:
                fh.seek(size + (size & 1), 1)
    if fmt is None or data_size is None:
        raise MalformedWav(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels unsupported")
    if (audio_format, bits) not in ((1, 16), (3, 32)):
        raise UnsupportedEncoding(
            f"{path}: format {audio_format}/{bits}-bit not supported (PCM16 or float32 only)")
    if rate <= 0:
        raise MalformedWav(f"{path}: bad sample rate {rate}")
    frame_bytes = channels * bits // 8
    return rate, channels, data_size // frame_bytes


def save_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write ``clip`` as float32 (default) or PCM16 WAV."""
    if encoding == "float32":
        fmt_code, bits = 3, 32
        payload = clip.samples.astype("<f4").tobytes()
    elif encoding == "pcm16":
        fmt_code, bits = 1, 16
        ints = np.clip(np.round(clip.samples * _PCM16_SCALE), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = clip.channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, fmt_code, clip.channels, clip.sample_rate,
        clip.sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def mixdown_mono(clip: AudioClip) -> AudioClip:
    """Average stereo frames to mono; mono clips pass through unchanged."""
    if clip.channels == 1:
        return clip
    frames = clip.samples.reshape(-1, 2)
    return AudioClip(frames.mean(axis=1).astype(np.float32), clip.sample_rate, 1)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Windowed-sinc resampling (Kaiser window, 64 taps per output sample).

    Taps are normalized to unit sum so DC level is preserved; edge samples
    are replicated beyond the signal boundaries.
    """
    if clip.channels != 1:
        raise ShapeMismatch("resample expects a mono clip")
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    x = clip.samples.astype(np.float64)
    n_in = x.size
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    if n_in == 0 or n_out == 0:
        return AudioClip(np.zeros(n_out, dtype=np.float32), target_rate, 1)
    step = clip.sample_rate / target_rate
    cutoff = min(1.0, target_rate / clip.sample_rate)
    half = 32  # 64 taps total
    beta = 8.6
    i0_beta = np.i0(beta)
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out, dtype=np.float64)
    block = 65536
    for start in range(0, n_out, block):
        pos = np.arange(start, min(start + block, n_out)) * step
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        u = pos[:, None] - idx
        frac = u / half
        window = np.where(np.abs(frac) <= 1.0,
                          np.i0(beta * np.sqrt(np.maximum(0.0, 1.0 - frac * frac))) / i0_beta,
                          0.0)
        taps = cutoff * np.sinc(cutoff * u) * window
        taps /= taps.sum(axis=1, keepdims=True)
        gathered = x[np.clip(idx, 0, n_in - 1)]
        out[start:start + pos.size] = (gathered * taps).sum(axis=1)
    return AudioClip(np.clip(out, -1.0, 1.0).astype(np.float32), target_rate, 1)


def segment(clip: AudioClip, duration_s: float = SEGMENT_SECONDS,
            song_id: str = "") -> list[Segment]:
    """Cut a mono clip into consecutive non-overlapping fixed windows.

    The trailing partial window is discarded; a clip shorter than one
    window yields an empty list.
    """
    if clip.channels != 1:
        raise ShapeMismatch("segment expects a mono clip")
    win = int(round(duration_s * clip.sample_rate))
    count = clip.samples.size // win
    return [
        Segment(song_id, i, clip.samples[i * win:(i + 1) * win], clip.sample_rate)
        for i in range(count)
    ]


def ingest(path, rate: int = PIPELINE_RATE) -> AudioClip:
    """Load, mix down, and resample a WAV to the pipeline format."""
    return resample(mixdown_mono(load_wav(path)), rate)
