"""Training loop and checkpoint tests.

These run the real model on miniature corpora, so they are the slowest
unit tests in the suite (a few seconds each).
"""

import numpy as np
import pytest
from _corpus import make_corpus

from singerid.augment import plan_remix, render_plan
from singerid.corpus import assign_album_split, build_variant, scan_corpus
from singerid.errors import (CheckpointFormatError, EmptyView,
                             MissingFeatureCache)
from singerid.features import ensure_features, write_cache, feature_path
from singerid.model import forward
from singerid.train import (Checkpoint, FeatureStats, TrainConfig,
                            identity_stats, load_checkpoint, save_checkpoint,
                            standardize_stats, train)


def tiny_setup(tmp_path, n_artists=2, n_tracks=1, duration_s=5.5, variant="origin",
               seed=0):
    make_corpus(tmp_path / "corpus", n_artists=n_artists, n_albums=2,
                n_tracks=n_tracks, duration_s=duration_s)
    manifest = assign_album_split(
        scan_corpus(tmp_path / "corpus"), seed=seed,
        album_quotas={"train": 1, "val": 1, "test": 0})
    if variant in ("remix", "data_aug"):
        plan = plan_remix(manifest, seed)
        manifest = render_plan(plan, manifest, tmp_path / "remix")
    else:
        plan = None
    view = build_variant(manifest, variant, remix_plan=plan)
    cache = tmp_path / "cache"
    ensure_features(view.train_items + view.val_items + view.test_items, cache)
    return manifest, view, cache


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=300, max_epochs=200)
    with pytest.raises(ValueError):
        TrainConfig(data_variant="bogus")
    TrainConfig()  # defaults are valid


def test_standardize_stats_normalizes(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    stats = standardize_stats(view, cache)
    assert stats.mean.shape == (128,) and stats.std.shape == (128,)
    assert np.all(stats.std >= 1e-6)
    from singerid.features import load_item_features
    frames = []
    for item in view.train_items:
        mel, _ = load_item_features(cache, item)
        frames.append(stats.apply(mel).transpose(1, 0, 2).reshape(128, -1))
    flat = np.concatenate(frames, axis=1).astype(np.float64)
    assert np.max(np.abs(flat.mean(axis=1))) < 1e-4
    assert np.max(np.abs(flat.std(axis=1) - 1.0)) < 1e-3


def test_standardize_stats_silence(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    for item in view.train_items:
        n = np.full((1, 128, 157), np.log(1e-6), dtype=np.float32)
        write_cache(feature_path(cache, item.item_id, "mel"), n)
    stats = standardize_stats(view, cache)
    np.testing.assert_allclose(stats.mean, np.log(1e-6), atol=1e-5)
    np.testing.assert_allclose(stats.std, 1e-6, atol=1e-9)


def test_standardize_stats_train_split_only(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    base = standardize_stats(view, cache)
    import copy
    widened = copy.copy(view)
    widened.train_items = view.train_items + view.val_items
    mixed = standardize_stats(widened, cache)
    assert not np.allclose(base.mean, mixed.mean)


def test_standardize_stats_empty_view(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    import copy
    empty = copy.copy(view)
    empty.train_items = []
    with pytest.raises(EmptyView):
        standardize_stats(empty, cache)


def test_train_requires_cached_features(tmp_path):
    _, view, _ = tiny_setup(tmp_path)
    config = TrainConfig(variant="crnn", max_epochs=1, patience=1)
    with pytest.raises(MissingFeatureCache):
        train(config, view, tmp_path / "nocache", n_classes=2)


def test_train_loss_decreases_and_history_schema(tmp_path):
    # dropout off: two samples per batch make mask noise dominate otherwise
    _, view, cache = tiny_setup(tmp_path)
    config = TrainConfig(variant="crnn", lr=1e-3, max_epochs=6, patience=6, seed=1,
                         conv_dropout=0.0, head_dropout=0.0)
    ckpt, history = train(config, view, cache, n_classes=2)
    assert len(history) == 6
    losses = [h["train_loss"] for h in history]
    drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
    assert drops >= 4
    for h in history:
        assert set(h) == {"epoch", "train_loss", "train_accuracy",
                          "val_segment_f1", "val_song_f1"}
        assert h["val_song_f1"] is not None
    assert isinstance(ckpt, Checkpoint)
    assert ckpt.best_val_song_f1 == max(h["val_song_f1"] for h in history)


def test_train_deterministic(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    config = TrainConfig(variant="crnn", lr=1e-3, max_epochs=2, patience=2, seed=5)
    _, h1 = train(config, view, cache, n_classes=2)
    _, h2 = train(config, view, cache, n_classes=2)
    assert h1 == h2
    config_other = TrainConfig(variant="crnn", lr=1e-3, max_epochs=2,
                               patience=2, seed=6)
    _, h3 = train(config_other, view, cache, n_classes=2)
    assert h3 != h1


def test_train_only_train_items_contribute(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    seen = []
    config = TrainConfig(variant="crnn", max_epochs=2, patience=2)
    train(config, view, cache, n_classes=2, batch_observer=seen.append)
    train_ids = {i.item_id for i in view.train_items}
    other_ids = {i.item_id for i in view.val_items + view.test_items}
    used = {item_id for batch in seen for item_id in batch}
    assert used == train_ids
    assert not used & other_ids


def test_train_data_aug_triples_batches(tmp_path):
    manifest, origin_view, cache = tiny_setup(tmp_path / "a", variant="origin")
    _, aug_view, aug_cache = tiny_setup(tmp_path / "b", variant="data_aug")
    origin_batches, aug_batches = [], []
    config = TrainConfig(variant="crnn", max_epochs=1, patience=1, batch_size=2)
    train(config, origin_view, cache, n_classes=2,
          batch_observer=origin_batches.append)
    config = TrainConfig(variant="crnn", data_variant="data_aug", max_epochs=1,
                         patience=1, batch_size=2)
    train(config, aug_view, aug_cache, n_classes=2,
          batch_observer=aug_batches.append)
    n_origin = sum(len(b) for b in origin_batches)
    n_aug = sum(len(b) for b in aug_batches)
    assert n_aug == 3 * n_origin


def test_train_stop_at_accuracy(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    config = TrainConfig(variant="crnn", lr=1e-3, max_epochs=60, patience=60,
                         seed=2, conv_dropout=0.0, head_dropout=0.0,
                         stop_at_train_accuracy=1.0)
    _, history = train(config, view, cache, n_classes=2)
    assert history[-1]["train_accuracy"] == 1.0
    assert len(history) < 60


def test_checkpoint_round_trip_bit_exact(tmp_path):
    _, view, cache = tiny_setup(tmp_path)
    config = TrainConfig(variant="crnn", max_epochs=1, patience=1, seed=3)
    ckpt, _ = train(config, view, cache, n_classes=2)
    path = tmp_path / "model.sidc"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    for name, t in ckpt.params.tensors.items():
        assert np.array_equal(back.params.tensors[name].value.view(np.uint32),
                              t.value.view(np.uint32))
    assert np.array_equal(back.stats.mean, ckpt.stats.mean)
    assert np.array_equal(back.stats.std, ckpt.stats.std)
    assert back.config == ckpt.config
    assert back.epoch == ckpt.epoch
    assert back.best_val_song_f1 == ckpt.best_val_song_f1
    rng = np.random.default_rng(0)
    probe = rng.normal(size=(128, 157)).astype(np.float32)
    a = forward(ckpt.params, probe)["logits"]
    b = forward(back.params, probe)["logits"]
    assert np.array_equal(a, b)
    # saving the loaded checkpoint again is byte-identical
    path2 = tmp_path / "model2.sidc"
    save_checkpoint(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    params_stats = identity_stats()
    from singerid.model import build_model
    ckpt = Checkpoint(build_model("crnn", 0), params_stats,
                      TrainConfig(), epoch=0, best_val_song_f1=None)
    path = tmp_path / "ok.sidc"
    save_checkpoint(ckpt, path)
    blob = path.read_bytes()
    (tmp_path / "magic.sidc").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "magic.sidc")
    (tmp_path / "trunc.sidc").write_bytes(blob[:-100])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "trunc.sidc")


def test_feature_stats_apply_shape():
    stats = FeatureStats(np.full(128, 2.0, dtype=np.float32),
                         np.full(128, 4.0, dtype=np.float32))
    mel = np.full((3, 128, 157), 10.0, dtype=np.float32)
    out = stats.apply(mel)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, 2.0, atol=1e-6)
