"""Scoring: segment and song F1, majority voting, vocalness analysis.

Song-level predictions come from majority voting over a song's 5-second
segment predictions. "Vocalness" of a segment is the RMS level (dB) of
the vocal stem inside that segment's window; reports correlate it with
the probability the model assigns to the true singer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, SEGMENT_SECONDS, AudioClip, ingest
from .dsp import rms_db
from .errors import (DegenerateVariance, EmptyPredictionSet, LengthMismatch,
                     MissingStem, SegmentOutOfRange)
from .features import load_item_features
from .model import forward_batch

VOCAL_THRESHOLD_DB = -10.0


@dataclass
class SegmentPrediction:
    song_id: str
    segment: int
    probs: np.ndarray = field(repr=False)
    truth: int = 0

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probs))


def majority_vote(preds: list) -> int:
    """Song-level class from segment predictions.

    Plurality wins; ties go to the class with the larger probability mass
    summed over the song's segments, then to the smallest class index.
    """
    if not preds:
        raise EmptyPredictionSet("majority_vote needs at least one prediction")
    counts: dict[int, int] = {}
    for p in preds:
        counts[p.predicted] = counts.get(p.predicted, 0) + 1
    top = max(counts.values())
    tied = sorted(c for c, n in counts.items() if n == top)
    if len(tied) == 1:
        return tied[0]
    mass = {c: sum(float(p.probs[c]) for p in preds) for c in tied}
    best = max(mass.values())
    return min(c for c in tied if mass[c] == best)


def f1_report(predictions, truths, n_classes: int) -> dict:
    """Per-class precision/recall/F1 plus macro and micro averages.

    A class absent from both sides scores 0 and still enters the macro
    mean.
    """
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(truths)} truths")
    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    for p, t in zip(predictions, truths):
        if p == t:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    per_class = []
    for k in range(n_classes):
        precision = tp[k] / (tp[k] + fp[k]) if tp[k] + fp[k] > 0 else 0.0
        recall = tp[k] / (tp[k] + fn[k]) if tp[k] + fn[k] > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class.append({"precision": float(precision),
                          "recall": float(recall), "f1": float(f1)})
    micro_p = tp.sum() / max(tp.sum() + fp.sum(), 1)
    micro_r = tp.sum() / max(tp.sum() + fn.sum(), 1)
    micro = (2 * micro_p * micro_r / (micro_p + micro_r)
             if micro_p + micro_r > 0 else 0.0)
    # plain sum: np.mean's blocked reduction reorders the additions
    return {
        "per_class": per_class,
        "macro_f1": sum(c["f1"] for c in per_class) / n_classes,
        "micro_f1": float(micro),
        "accuracy": float(np.mean([p == t for p, t in zip(predictions, truths)]))
        if predictions else 0.0,
    }


def pearson(x, y) -> float:
    """Pearson product-moment correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least two points")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = np.sqrt(np.sum(xd * xd))
    sy = np.sqrt(np.sum(yd * yd))
    if sx == 0 or sy == 0:
        raise DegenerateVariance("constant input has no correlation")
    return float(np.sum(xd * yd) / (sx * sy))


def vocalness(stem: AudioClip, segment_index: int,
              duration_s: float = SEGMENT_SECONDS) -> float:
    """RMS dB of the vocal stem inside one segment window."""
    win = int(round(duration_s * stem.sample_rate))
    start = segment_index * win
    if segment_index < 0 or start + win > stem.samples.size:
        raise SegmentOutOfRange(
            f"segment {segment_index} beyond stem of {stem.samples.size} samples")
    return rms_db(stem.samples[start:start + win])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_items(params, stats, items, cache_dir,
                  batch_size: int = 16) -> list:
    """Inference over cached features; one prediction per 5-s segment."""
    needs_melody = params.spec.n_branches == 2
    preds = []
    for item in items:
        mel, melody = load_item_features(cache_dir, item)
        if mel.shape[0] == 0:
            continue
        mel = stats.apply(mel) if stats is not None else mel
        for start in range(0, mel.shape[0], batch_size):
            mb = mel[start:start + batch_size]
            yb = melody[start:start + batch_size] if needs_melody else None
            logits, _, _ = forward_batch(params, mb, yb, training=False)
            probs = _softmax(logits)
            for j in range(mb.shape[0]):
                preds.append(SegmentPrediction(item.song_id, start + j,
                                               probs[j], item.label))
    return preds


def score_predictions(preds: list, n_classes: int) -> dict:
    """Segment and song-level reports from one prediction set."""
    if not preds:
        raise EmptyPredictionSet("no predictions to score")
    segment_report = f1_report([p.predicted for p in preds],
                               [p.truth for p in preds], n_classes)
    by_song: dict[str, list] = {}
    for p in preds:
        by_song.setdefault(p.song_id, []).append(p)
    votes = []
    vote_trace = {}
    for song_id in sorted(by_song):
        group = by_song[song_id]
        vote = majority_vote(group)
        votes.append((vote, group[0].truth))
        vote_trace[song_id] = {
            "vote": vote,
            "truth": group[0].truth,
            "segment_votes": [p.predicted for p in sorted(group, key=lambda q: q.segment)],
        }
    song_report = f1_report([v for v, _ in votes], [t for _, t in votes], n_classes)
    return {
        "segment": segment_report,
        "song": song_report,
        "votes": vote_trace,
        "n_segments": len(preds),
        "n_songs": len(by_song),
    }


def evaluate_items(params, stats, items, cache_dir, n_classes: int,
                   seed=None) -> dict:
    """Full evaluation: prediction plus scoring, JSON-ready."""
    preds = predict_items(params, stats, items, cache_dir)
    report = score_predictions(preds, n_classes)
    report["seed"] = seed
    return report


def vocalness_report(params, stats, manifest, items, cache_dir) -> dict:
    """Per-segment vocalness vs truth-class probability, plus pooled r.

    Rows are sorted by song, then by vocalness within each song. Segments
    louder than -10 dB in the vocal stem are flagged vocal in the
    summary.
    """
    preds = predict_items(params, stats, items, cache_dir)
    by_song: dict[str, list] = {}
    for p in preds:
        by_song.setdefault(p.song_id, []).append(p)
    rows = []
    for song_id in sorted(by_song):
        entry = manifest.entry(song_id)
        stem_path = entry.paths.get("vocal_stem")
        if not stem_path or not Path(stem_path).exists():
            raise MissingStem(f"{song_id} has no vocal stem for vocalness")
        stem = ingest(stem_path, PIPELINE_RATE)
        song_rows = []
        for p in by_song[song_id]:
            level = vocalness(stem, p.segment)
            song_rows.append({
                "song_id": song_id,
                "segment": p.segment,
                "vocalness_db": level,
                "truth_prob": float(p.probs[p.truth]),
            })
        song_rows.sort(key=lambda r: r["vocalness_db"])
        rows.extend(song_rows)
    r = pearson([r["vocalness_db"] for r in rows],
                [r["truth_prob"] for r in rows])
    flags = [row["vocalness_db"] > VOCAL_THRESHOLD_DB for row in rows]
    vocal_probs = [row["truth_prob"] for row, f in zip(rows, flags) if f]
    quiet_probs = [row["truth_prob"] for row, f in zip(rows, flags) if not f]
    summary = {
        "pearson_r": r,
        "vocal_threshold_db": VOCAL_THRESHOLD_DB,
        "n_segments": len(rows),
        "n_vocal": int(sum(flags)),
        "n_nonvocal": int(len(flags) - sum(flags)),
        "mean_truth_prob_vocal": float(np.mean(vocal_probs)) if vocal_probs else None,
        "mean_truth_prob_nonvocal": float(np.mean(quiet_probs)) if quiet_probs else None,
    }
    return {"rows": rows, "summary": summary}


def write_vocalness_csv(rows, path) -> None:
    lines = ["song_id,segment,vocalness_db,truth_prob"]
    for r in rows:
        lines.append(f"{r['song_id']},{r['segment']},"
                     f"{r['vocalness_db']:.6f},{r['truth_prob']:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
