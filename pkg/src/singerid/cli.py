"""Subcommand front end for the singer-identification pipeline.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand
writes a `run.json` into its output directory capturing the config
digest, the seeds in play, and a SHA-256 per artifact, so identical
inputs are checkable byte for byte. The feature cache root resolves as
flag > SID_CACHE_DIR > config default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import augment as aug
from . import corpus as corp
from . import evaluate as ev
from . import figures
from .config import load_run_config
from .embed import extract_embeddings, tsne, write_embedding_csv
from .errors import SingerIdError, UsageError
from .features import ensure_features, feature_path
from .synth import PRESETS, write_preset
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

MODEL_VARIANTS = ("crnn", "crnn_wide", "crnnm")
DATA_VARIANTS = ("origin", "vocal_only", "remix", "data_aug")


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage; here that must be 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_run_json(out_dir, command: str, config_digest: str,
                    seeds: dict, artifact_paths: dict) -> Path:
    payload = {
        "command": command,
        "config_digest": config_digest,
        "seeds": seeds,
        "artifacts": {name: _sha256(p)
                      for name, p in sorted(artifact_paths.items())},
    }
    path = Path(out_dir) / "run.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_cache(args, config) -> Path:
    if getattr(args, "cache", None):
        return Path(args.cache)
    env = os.environ.get("SID_CACHE_DIR")
    if env:
        return Path(env)
    return Path(config["cache.dir"])


def _load_plan(args):
    if getattr(args, "plan", None):
        return aug.load_plan(args.plan)
    return None


def _eval_items(manifest, split: str):
    """Mixture items of one split; val/test are mixtures in every variant."""
    view = corp.build_variant(manifest, "origin")
    items = view.items(split)
    if not items:
        raise UsageError(f"split {split!r} has no songs in this manifest")
    return items


def _cmd_synth(args):
    out = _out_dir(args)
    config = load_run_config(None, ())
    manifest = write_preset(args.preset, out, seed=args.seed)
    manifest_path = out / "manifest.jsonl"
    corp.save_manifest(manifest, manifest_path)
    artifacts = {"manifest.jsonl": manifest_path}
    for entry in manifest.entries:
        for path in entry.paths.values():
            if path:
                artifacts[str(Path(path).relative_to(out))] = path
    _write_run_json(out, f"synth {args.preset}", config.digest,
                    {"seed": args.seed}, artifacts)


def _cmd_prepare(args):
    out = _out_dir(args)
    config = load_run_config(args.config, args.set)
    quotas = {split: config[f"corpus.quota.{split}"]
              for split in ("train", "val", "test")}
    entries = corp.scan_corpus(Path(args.corpus).resolve())
    manifest = corp.assign_album_split(entries, seed=args.seed,
                                       album_quotas=quotas,
                                       config_digest=config.digest)
    manifest_path = out / "manifest.jsonl"
    corp.save_manifest(manifest, manifest_path)
    _write_run_json(out, "prepare", config.digest, {"seed": args.seed},
                    {"manifest.jsonl": manifest_path})


def _cmd_augment(args):
    out = _out_dir(args)
    config = load_run_config(None, ())
    manifest = corp.load_manifest(args.manifest)
    plan = aug.plan_remix(manifest, seed=args.seed)
    remixed = aug.render_plan(plan, manifest, out / "remixes", jobs=args.jobs)
    plan_path = out / "plan.json"
    aug.save_plan(plan, plan_path)
    manifest_path = out / "manifest.jsonl"
    corp.save_manifest(remixed, manifest_path)
    artifacts = {"plan.json": plan_path, "manifest.jsonl": manifest_path}
    for entry in remixed.entries:
        path = entry.paths.get("remix")
        if path:
            artifacts[str(Path(path).relative_to(out))] = path
    _write_run_json(out, "augment", config.digest, {"seed": args.seed},
                    artifacts)


def _cmd_features(args):
    config = load_run_config(None, ())
    cache = _resolve_cache(args, config)
    cache.mkdir(parents=True, exist_ok=True)
    manifest = corp.load_manifest(args.manifest)
    view = corp.build_variant(manifest, args.variant, remix_plan=_load_plan(args))
    items = []
    for split in ("train", "val", "test"):
        items.extend(view.items(split))
    ensure_features(items, cache, jobs=args.jobs)
    artifacts = {}
    for item in items:
        for plane in ("mel", "melody"):
            path = feature_path(cache, item.item_id, plane)
            artifacts[path.name] = path
    _write_run_json(cache, f"features {args.variant}", config.digest, {},
                    artifacts)


def _train_config(args, config) -> TrainConfig:
    return TrainConfig(
        variant=args.model or config["train.model"],
        data_variant=args.data or config["train.data"],
        lr=config["train.lr"],
        batch_size=config["train.batch_size"],
        max_epochs=config["train.max_epochs"],
        patience=config["train.patience"],
        seed=args.seed,
        standardize=config["train.standardize"],
        conv_dropout=config["train.conv_dropout"],
        head_dropout=config["train.head_dropout"],
    )


def _cmd_train(args):
    out = _out_dir(args)
    config = load_run_config(args.config, args.set)
    cache = _resolve_cache(args, config)
    manifest = corp.load_manifest(args.manifest)
    train_config = _train_config(args, config)
    view = corp.build_variant(manifest, train_config.data_variant,
                              remix_plan=_load_plan(args))
    n_classes = len(manifest.artists)
    checkpoint, history = train(train_config, view, cache, n_classes)
    ckpt_path = out / "checkpoint.sidc"
    save_checkpoint(checkpoint, ckpt_path)
    history_path = out / "history.json"
    history_path.write_text(json.dumps({
        "config_digest": config.digest,
        "model": train_config.variant,
        "data": train_config.data_variant,
        "n_classes": n_classes,
        "epochs": len(history),
        "best_val_song_f1": checkpoint.best_val_song_f1,
        "history": history,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    figure_path = out / "history.svg"
    figures.save_history_figure(history, figure_path)
    _write_run_json(out, "train", config.digest, {"seed": args.seed},
                    {"checkpoint.sidc": ckpt_path,
                     "history.json": history_path,
                     "history.svg": figure_path})


def _cmd_eval(args):
    out = _out_dir(args)
    config = load_run_config(None, ())
    cache = _resolve_cache(args, config)
    checkpoint = load_checkpoint(args.checkpoint)
    manifest = corp.load_manifest(args.manifest)
    items = _eval_items(manifest, args.split)
    report = ev.evaluate_items(checkpoint.params, checkpoint.stats, items,
                               cache, n_classes=checkpoint.params.spec.n_classes)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    _write_run_json(out, f"eval {args.split}", config.digest, {},
                    {"report.json": report_path})


def _cmd_vocalness(args):
    out = _out_dir(args)
    config = load_run_config(None, ())
    cache = _resolve_cache(args, config)
    checkpoint = load_checkpoint(args.checkpoint)
    manifest = corp.load_manifest(args.manifest)
    items = _eval_items(manifest, args.split)
    report = ev.vocalness_report(checkpoint.params, checkpoint.stats,
                                 manifest, items, cache)
    csv_path = out / "vocalness.csv"
    ev.write_vocalness_csv(report["rows"], csv_path)
    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(report["summary"], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    figure_path = out / "vocalness.svg"
    figures.save_vocalness_figure(report["rows"],
                                  report["summary"]["vocal_threshold_db"],
                                  figure_path)
    _write_run_json(out, f"analyze vocalness {args.split}", config.digest, {},
                    {"vocalness.csv": csv_path, "summary.json": summary_path,
                     "vocalness.svg": figure_path})


def _cmd_embed(args):
    out = _out_dir(args)
    config = load_run_config(None, ())
    cache = _resolve_cache(args, config)
    checkpoint = load_checkpoint(args.checkpoint)
    manifest = corp.load_manifest(args.manifest)
    _eval_items(manifest, args.split)
    embeddings = extract_embeddings(checkpoint, manifest, cache,
                                    split=args.split)
    layout = tsne(embeddings.vectors, perplexity=args.perplexity,
                  iters=args.iters, seed=args.seed)
    csv_path = out / "embedding.csv"
    write_embedding_csv(embeddings, layout, csv_path)
    figure_path = out / "embedding.svg"
    figures.save_embedding_figure(layout, embeddings.artists, figure_path)
    _write_run_json(out, f"embed {args.split}", config.digest,
                    {"seed": args.seed},
                    {"embedding.csv": csv_path, "embedding.svg": figure_path})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sid",
                     description="Singer-identification experiment pipeline")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic preset corpus")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prepare", help="scan a corpus and assign album splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("augment", help="plan and render remix mixtures")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("features", help="cache mel and melody planes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=DATA_VARIANTS, default="origin")
    p.add_argument("--plan", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=MODEL_VARIANTS, default=None)
    p.add_argument("--data", choices=DATA_VARIANTS, default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="segment and song reports on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--cache", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="diagnostic reports")
    analyze_sub = p.add_subparsers(dest="analysis", metavar="ANALYSIS")
    pv = analyze_sub.add_parser("vocalness",
                                help="truth probability vs vocal loudness")
    pv.add_argument("--checkpoint", required=True)
    pv.add_argument("--manifest", required=True)
    pv.add_argument("--out", required=True)
    pv.add_argument("--split", choices=("train", "val", "test"),
                    default="test")
    pv.add_argument("--cache", default=None)
    pv.set_defaults(func=_cmd_vocalness)

    p = sub.add_parser("embed", help="t-SNE projection of segment embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--cache", default=None)
    p.set_defaults(func=_cmd_embed)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        func = getattr(args, "func", None)
        if func is None:
            raise UsageError(parser.format_usage())
        func(args)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SingerIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
