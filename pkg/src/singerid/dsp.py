"""Spectral features: STFT, mel filterbank, log-mel spectrograms, level metering.

The pipeline operates on 5 s mono segments at 16 kHz, so the default
analysis settings (1024-point FFT, hop 512) give exactly 157 frames and
a 128 x 157 log-mel image per segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import PIPELINE_RATE, Segment

N_FFT = 1024
HOP_LENGTH = 512
N_MELS = 128
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-6
N_FRAMES = 157  # frames per 5 s segment: 1 + 80000 // 512


def stft(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP_LENGTH) -> np.ndarray:
    """Complex one-sided STFT, shape [n_fft//2 + 1, n_frames].

    Frames are centered: the input is reflect-padded by n_fft//2 on both
    sides, so frame t covers samples around t*hop and the frame count is
    1 + len(samples)//hop. The window is a periodic Hann.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("stft expects a non-empty 1-D waveform")
    pad = n_fft // 2
    x = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (x.size - n_fft) // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate: int = PIPELINE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular mel filterbank, shape [n_mels, n_fft//2 + 1].

    Triangle centers are spaced uniformly on the mel scale between fmin
    and fmax; each row is normalized to sum to 1 over the FFT bins.
    """
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"bad band edges {fmin}..{fmax} at rate {sample_rate}")
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lower = hz_pts[:-2][:, None]
    center = hz_pts[1:-1][:, None]
    upper = hz_pts[2:][:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    sums = fb.sum(axis=1)
    if np.any(sums <= 0):
        raise ValueError("filterbank row with no FFT-bin support; raise n_fft or widen the band")
    return fb / sums[:, None]


@dataclass
class MelSpectrogram:
    """Log-mel image for one segment, shape [n_mels, n_frames]."""

    values: np.ndarray = field(repr=False)
    segment_id: str = ""
    hop: int = HOP_LENGTH
    sample_rate: int = PIPELINE_RATE

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def frame_times(self, segment_start_s: float = 0.0) -> np.ndarray:
        """Center time of each frame, in seconds on the song's clock."""
        return segment_start_s + np.arange(self.n_frames) * (self.hop / self.sample_rate)


_FILTERBANK_CACHE: dict[tuple, np.ndarray] = {}


def _cached_filterbank(n_mels, n_fft, sample_rate):
    key = (n_mels, n_fft, sample_rate)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank(n_mels, n_fft, sample_rate)
    return _FILTERBANK_CACHE[key]


def log_mel(seg: Segment, n_mels: int = N_MELS, n_fft: int = N_FFT,
            hop: int = HOP_LENGTH) -> MelSpectrogram:
    """Natural-log mel spectrogram of one segment.

    Power floor 1e-6 bounds the output below at ln(1e-6); silence maps
    exactly to that floor.
    """
    fb = _cached_filterbank(n_mels, n_fft, seg.sample_rate)
    magnitude = np.abs(stft(seg.samples, n_fft, hop))
    mel = fb @ magnitude
    values = np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)
    return MelSpectrogram(values, segment_id=f"{seg.source_song_id}#{seg.index}",
                          hop=hop, sample_rate=seg.sample_rate)


def rms_db(samples: np.ndarray) -> float:
    """RMS level in dBFS: 20*log10(rms + 1e-10). All-zero input gives -200."""
    x = np.asarray(samples, dtype=np.float64)
    return float(20.0 * np.log10(np.sqrt(np.mean(x * x)) + 1e-10))
