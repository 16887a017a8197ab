"""Melody contour parsing and quantization tests.

quantize_melody is checked against a brute-force per-frame scan that
re-derives the nearest-row rule directly.
"""

import numpy as np
import pytest

from singerid.errors import (MissingHeader, NonMonotonicTime,
                             NonPositiveFrequency, ValueOutOfRange)
from singerid.melody import (CONFIDENCE_THRESHOLD, MATCH_TOLERANCE_S,
                             MelodyContour, hz_to_bin, parse_f0_csv,
                             quantize_melody)


def write_csv(path, text):
    path.write_text(text)
    return path


def test_parse_basic(tmp_path):
    p = write_csv(tmp_path / "a.csv",
                  "time,frequency,confidence\n0.00,440.0,0.9\n0.01,0.0,0.1\n0.02,220.0,0.6\n")
    c = parse_f0_csv(p)
    assert len(c) == 3
    np.testing.assert_allclose(c.times, [0.0, 0.01, 0.02])
    np.testing.assert_allclose(c.f0_hz, [440.0, 0.0, 220.0])
    np.testing.assert_allclose(c.confidence, [0.9, 0.1, 0.6])


def test_parse_column_order_and_extras(tmp_path):
    p = write_csv(tmp_path / "b.csv",
                  "Confidence, Time ,frequency,notes\n0.8,1.5,330.0,x\n")
    c = parse_f0_csv(p)
    assert c.times[0] == 1.5 and c.f0_hz[0] == 330.0 and c.confidence[0] == 0.8


def test_parse_skips_blank_lines(tmp_path):
    p = write_csv(tmp_path / "c.csv",
                  "time,frequency,confidence\n0.0,100,1.0\n\n0.1,110,1.0\n")
    assert len(parse_f0_csv(p)) == 2


def test_parse_header_errors(tmp_path):
    with pytest.raises(MissingHeader):
        parse_f0_csv(write_csv(tmp_path / "d.csv", ""))
    with pytest.raises(MissingHeader):
        parse_f0_csv(write_csv(tmp_path / "e.csv", "t,f,c\n0,1,1\n"))


def test_parse_value_errors(tmp_path):
    with pytest.raises(NonMonotonicTime):
        parse_f0_csv(write_csv(tmp_path / "f.csv",
                               "time,frequency,confidence\n0.1,100,1\n0.1,100,1\n"))
    with pytest.raises(NonPositiveFrequency):
        parse_f0_csv(write_csv(tmp_path / "g.csv",
                               "time,frequency,confidence\n0.0,-5,1\n"))
    with pytest.raises(ValueOutOfRange):
        parse_f0_csv(write_csv(tmp_path / "h.csv",
                               "time,frequency,confidence\n0.0,100,1.5\n"))
    with pytest.raises(ValueOutOfRange):
        parse_f0_csv(write_csv(tmp_path / "i.csv",
                               "time,frequency,confidence\n0.0,abc,1.0\n"))


def test_hz_to_bin_reference_points():
    assert hz_to_bin(440.0) == 69
    assert hz_to_bin(880.0) == 81
    assert hz_to_bin(261.626) == 60
    assert hz_to_bin(8.0) == 0       # clamp low
    assert hz_to_bin(30000.0) == 127  # clamp high
    with pytest.raises(NonPositiveFrequency):
        hz_to_bin(0.0)


def test_hz_to_bin_rounding_boundary():
    # Half a semitone above A4 rounds up (floor(x + 0.5) convention).
    assert hz_to_bin(440.0 * 2 ** (0.5 / 12)) == 70
    assert hz_to_bin(440.0 * 2 ** (0.49 / 12)) == 69
    assert hz_to_bin(440.0 * 2 ** (-0.49 / 12)) == 69
    assert hz_to_bin(440.0 * 2 ** (-0.51 / 12)) == 68


def brute_force_quantize(contour, start_s, n_frames, hop=512, rate=16000):
    plane = np.zeros((128, n_frames), dtype=np.float32)
    for i in range(n_frames):
        t = start_s + i * hop / rate
        if len(contour) == 0:
            continue
        dists = np.abs(contour.times - t)
        j = int(np.argmin(dists))  # argmin takes the first = earlier row on ties
        if dists[j] <= MATCH_TOLERANCE_S and contour.f0_hz[j] > 0 \
                and contour.confidence[j] >= CONFIDENCE_THRESHOLD:
            plane[hz_to_bin(contour.f0_hz[j]), i] = 1.0
    return plane


def test_quantize_matches_brute_force_randomized():
    rng = np.random.default_rng(17)
    for _ in range(25):
        n = int(rng.integers(1, 200))
        times = np.cumsum(rng.uniform(0.001, 0.05, n))
        f0 = np.where(rng.uniform(size=n) < 0.3, 0.0, rng.uniform(60, 2000, n))
        conf = rng.uniform(size=n)
        contour = MelodyContour(times, f0, conf)
        start = float(rng.uniform(0, 3))
        got = quantize_melody(contour, start, n_frames=40)
        want = brute_force_quantize(contour, start, 40)
        np.testing.assert_array_equal(got, want)


def test_quantize_basic_one_hot():
    contour = MelodyContour([0.0, 0.032, 0.064], [440.0, 440.0, 880.0], [0.9, 0.4, 0.9])
    plane = quantize_melody(contour, 0.0, n_frames=4)
    assert plane.shape == (128, 4)
    assert plane[69, 0] == 1.0 and plane.sum() == 2.0
    assert plane[:, 1].sum() == 0.0       # confidence below threshold
    assert plane[81, 2] == 1.0
    assert plane[:, 3].sum() == 0.0       # frame at 0.096 s is 32 ms from last row


def test_quantize_tolerance_window():
    contour = MelodyContour([0.0205], [440.0], [1.0])
    assert quantize_melody(contour, 0.0, n_frames=1).sum() == 0.0
    contour = MelodyContour([0.0195], [440.0], [1.0])
    assert quantize_melody(contour, 0.0, n_frames=1)[69, 0] == 1.0


def test_quantize_segment_offset():
    # Same contour, second segment: frame centers shift by the offset.
    contour = MelodyContour([5.0], [440.0], [1.0])
    plane = quantize_melody(contour, 5.0, n_frames=3)
    assert plane[69, 0] == 1.0 and plane[:, 1:].sum() == 0.0


def test_quantize_empty_contour():
    empty = MelodyContour(np.array([]), np.array([]), np.array([]))
    assert quantize_melody(empty, 0.0, n_frames=157).sum() == 0.0


def test_contour_validation():
    with pytest.raises(ValueError):
        MelodyContour([0.0, 1.0], [100.0], [1.0, 1.0])
    with pytest.raises(NonMonotonicTime):
        MelodyContour([1.0, 0.5], [100.0, 100.0], [1.0, 1.0])
