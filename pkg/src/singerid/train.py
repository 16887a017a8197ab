"""Training loop: standardization, seeded batching, early stopping, checkpoints.

Every 5-second training segment is an example; epochs shuffle segments
with a seeded stream, so a run is bit-reproducible in single-threaded
mode. Validation is scored at song level (majority vote F1), which also
drives early stopping. Checkpoints store the parameters, the train-set
standardization stats, and the config in one self-contained binary file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import VARIANTS
from .errors import (CheckpointFormatError, EmptyView, MissingFeatureCache,
                     ShapeMismatch)
from .evaluate import predict_items, score_predictions
from .features import feature_path, load_item_features
from .model import ModelParams, ModelSpec, backward_batch, build_model, forward_batch
from .nnet import AdamState, RngStream, Tensor, adam_step, softmax_cross_entropy

CHECKPOINT_MAGIC = b"SIDC"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    variant: str = "crnn"
    data_variant: str = "origin"
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    standardize: bool = True
    conv_dropout: float = 0.1
    head_dropout: float = 0.3
    # stop as soon as clean train-segment accuracy reaches this level
    stop_at_train_accuracy: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("lr, batch_size, max_epochs must be positive")
        if not 0 < self.patience <= self.max_epochs:
            raise ValueError("patience must be in 1..max_epochs")
        if self.data_variant not in VARIANTS:
            raise ValueError(f"data_variant must be one of {VARIANTS}")
        for rate in (self.conv_dropout, self.head_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")


@dataclass
class FeatureStats:
    """Per-mel-bin mean/std; the melody plane passes through untouched."""

    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    def apply(self, mel: np.ndarray) -> np.ndarray:
        return ((mel - self.mean[:, None]) / self.std[:, None]).astype(np.float32)


def identity_stats(n_mels: int = 128) -> FeatureStats:
    return FeatureStats(np.zeros(n_mels, dtype=np.float32),
                        np.ones(n_mels, dtype=np.float32))


def standardize_stats(view, cache_dir) -> FeatureStats:
    """Per-bin mean/std over every training mel frame.

    Train split only; std is floored at 1e-6 so constant bins stay
    finite.
    """
    if not view.train_items:
        raise EmptyView("variant view has no training items")
    count = 0
    total = None
    total_sq = None
    for item in view.train_items:
        mel, _ = load_item_features(cache_dir, item)
        if mel.shape[0] == 0:
            continue
        flat = mel.astype(np.float64).transpose(1, 0, 2).reshape(mel.shape[1], -1)
        if total is None:
            total = flat.sum(axis=1)
            total_sq = (flat * flat).sum(axis=1)
        else:
            total += flat.sum(axis=1)
            total_sq += (flat * flat).sum(axis=1)
        count += flat.shape[1]
    if count == 0:
        raise EmptyView("no training segments in the view")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return FeatureStats(mean.astype(np.float32), std.astype(np.float32))


def _segment_index(items, cache_dir):
    """Flat (item position, segment, label) table over cached features."""
    table = []
    arrays = []
    for pos, item in enumerate(items):
        if not feature_path(cache_dir, item.item_id, "mel").exists():
            raise MissingFeatureCache(
                f"features for {item.item_id} not cached; run the features step")
        mel, melody = load_item_features(cache_dir, item)
        arrays.append((mel, melody))
        for seg in range(mel.shape[0]):
            table.append((pos, seg, item.label))
    return table, arrays


def train(config: TrainConfig, view, cache_dir, n_classes: int,
          batch_observer=None):
    """Run the training loop; returns (Checkpoint, history).

    history: one dict per epoch with train_loss, train_accuracy,
    val_segment_f1, val_song_f1. ``batch_observer``, when given, receives
    the item ids of every gradient batch (for leakage audits).
    """
    params = build_model(config.variant, config.seed, n_classes)
    needs_melody = params.spec.n_branches == 2
    stats = (standardize_stats(view, cache_dir) if config.standardize
             else identity_stats())
    table, arrays = _segment_index(view.train_items, cache_dir)
    if not table:
        raise EmptyView("no training segments")
    std_mels = [stats.apply(mel) for mel, _ in arrays]
    melodies = [melody for _, melody in arrays]
    labels_all = np.array([label for _, _, label in table])
    adam = AdamState()
    tensor_values = {name: t.value for name, t in params.tensors.items()}
    history = []
    best = {"epoch": -1, "val_song_f1": -1.0,
            "tensors": None}
    epochs_since_best = 0
    for epoch in range(config.max_epochs):
        order = RngStream(config.seed, f"epoch:{epoch}").permutation(len(table))
        drop_stream = RngStream(config.seed, f"dropout:{epoch}")
        losses = []
        hits = 0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            mel_b = np.stack([std_mels[table[i][0]][table[i][1]] for i in batch_idx])
            mely_b = (np.stack([melodies[table[i][0]][table[i][1]]
                                for i in batch_idx]) if needs_melody else None)
            label_b = labels_all[batch_idx]
            if batch_observer is not None:
                batch_observer([view.train_items[table[i][0]].item_id
                                for i in batch_idx])
            logits, _, cache = forward_batch(params, mel_b, mely_b,
                                             training=True, stream=drop_stream,
                                             conv_dropout=config.conv_dropout,
                                             head_dropout=config.head_dropout)
            loss, probs, dlogits = softmax_cross_entropy(logits, label_b)
            grads = backward_batch(dlogits, cache)
            adam_step(tensor_values, grads, adam, config.lr)
            losses.append(float(loss) * len(batch_idx))
            hits += int(np.sum(np.argmax(probs, axis=1) == label_b))
        record = {
            "epoch": epoch,
            "train_loss": float(np.sum(losses) / len(table)),
            "train_accuracy": hits / len(table),
            "val_segment_f1": None,
            "val_song_f1": None,
        }
        if config.stop_at_train_accuracy is not None:
            record["train_accuracy"] = _clean_train_accuracy(
                params, std_mels, melodies, table, labels_all, needs_melody,
                config.batch_size)
        if view.val_items:
            preds = predict_items(params, stats, view.val_items, cache_dir,
                                  config.batch_size)
            scores = score_predictions(preds, n_classes)
            record["val_segment_f1"] = scores["segment"]["macro_f1"]
            record["val_song_f1"] = scores["song"]["macro_f1"]
            if record["val_song_f1"] > best["val_song_f1"]:
                best = {"epoch": epoch,
                        "val_song_f1": record["val_song_f1"],
                        "tensors": {n: v.copy() for n, v in tensor_values.items()}}
                epochs_since_best = 0
            else:
                epochs_since_best += 1
        history.append(record)
        if (config.stop_at_train_accuracy is not None
                and record["train_accuracy"] >= config.stop_at_train_accuracy):
            break
        if view.val_items and epochs_since_best >= config.patience:
            break
    if best["tensors"] is not None:
        for name, value in best["tensors"].items():
            params.tensors[name].value = value
        best_epoch = best["epoch"]
        best_f1 = best["val_song_f1"]
    else:
        best_epoch = history[-1]["epoch"]
        best_f1 = history[-1]["val_song_f1"] if view.val_items else None
    checkpoint = Checkpoint(params=params, stats=stats, config=config,
                            epoch=best_epoch, best_val_song_f1=best_f1)
    return checkpoint, history


def _clean_train_accuracy(params, std_mels, melodies, table, labels_all,
                          needs_melody, batch_size):
    hits = 0
    for start in range(0, len(table), batch_size):
        rows = table[start:start + batch_size]
        mel_b = np.stack([std_mels[pos][seg] for pos, seg, _ in rows])
        mely_b = (np.stack([melodies[pos][seg] for pos, seg, _ in rows])
                  if needs_melody else None)
        logits, _, _ = forward_batch(params, mel_b, mely_b, training=False)
        hits += int(np.sum(np.argmax(logits, axis=1)
                           == labels_all[start:start + batch_size]))
    return hits / len(table)


@dataclass
class Checkpoint:
    params: ModelParams
    stats: FeatureStats
    config: TrainConfig
    epoch: int
    best_val_song_f1: float | None


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary checkpoint: JSON header then named float32 tensors."""
    spec = ckpt.params.spec
    header = {
        "spec": {"variant": spec.variant,
                 "conv_channels": list(spec.conv_channels),
                 "n_branches": spec.n_branches,
                 "n_classes": spec.n_classes,
                 "gru_hidden": spec.gru_hidden,
                 "n_mels": spec.n_mels,
                 "n_frames": spec.n_frames},
        "config": asdict(ckpt.config),
        "stats": {"mean": ckpt.stats.mean.astype(float).tolist(),
                  "std": ckpt.stats.std.astype(float).tolist()},
        "epoch": ckpt.epoch,
        "best_val_song_f1": ckpt.best_val_song_f1,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    names = sorted(ckpt.params.tensors)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            value = np.ascontiguousarray(ckpt.params.tensors[name].value,
                                         dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
            version, header_len = struct.unpack("<HI", fh.read(6))
            if version != CHECKPOINT_VERSION:
                raise CheckpointFormatError(f"{path}: version {version}")
            header = json.loads(fh.read(header_len))
            (n_tensors,) = struct.unpack("<I", fh.read(4))
            tensors = {}
            for _ in range(n_tensors):
                (name_len,) = struct.unpack("<H", fh.read(2))
                name = fh.read(name_len).decode()
                (rank,) = struct.unpack("<B", fh.read(1))
                dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
                payload = fh.read(int(np.prod(dims)) * 4)
                if len(payload) < int(np.prod(dims)) * 4:
                    raise CheckpointFormatError(f"{path}: truncated tensor {name}")
                tensors[name] = Tensor(
                    np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt checkpoint ({exc})") from None
    s = header["spec"]
    spec = ModelSpec(s["variant"], tuple(s["conv_channels"]), s["n_branches"],
                     s["n_classes"], s["gru_hidden"], s["n_mels"], s["n_frames"])
    expected = spec.param_shapes()
    if set(tensors) != set(expected):
        raise CheckpointFormatError(f"{path}: tensor names do not match the spec")
    for name, shape in expected.items():
        if tensors[name].value.shape != shape:
            raise ShapeMismatch(f"{name}: {tensors[name].value.shape} != {shape}")
    params = ModelParams(spec, tensors)
    stats = FeatureStats(np.array(header["stats"]["mean"], dtype=np.float32),
                         np.array(header["stats"]["std"], dtype=np.float32))
    config = TrainConfig(**header["config"])
    return Checkpoint(params=params, stats=stats, config=config,
                      epoch=header["epoch"],
                      best_val_song_f1=header["best_val_song_f1"])
