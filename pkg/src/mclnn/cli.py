"""Command line entry point: ``mclnn <command> ...`` or ``python -m mclnn``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from .config import ConfigError, config_from_dict, load_config
from .datasets import ManifestError, cross_validate, fold_split, parse_manifest, predict_clip
from .features import (
    Standardizer,
    WavError,
    apply_standardizer,
    decode_wav,
    fit_standardizer,
    log_mel_delta,
    read_feature_clip,
    write_feature_clip,
)
from .masks import MaskSpec, build_mask, mask_to_text
from .network import load_model, save_model
from .optim import TrainingDiverged, train, write_history_csv

log = logging.getLogger("mclnn")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INPUT = 4
EXIT_CONFIG = 5
EXIT_DIVERGED = 6

EXIT_CODES = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_ERROR}  unexpected error
  {EXIT_USAGE}  bad command line (including out-of-range arguments)
  {EXIT_MISSING}  a required file or directory is missing
  {EXIT_INPUT}  malformed input (manifest, WAV, feature cache or model file)
  {EXIT_CONFIG}  invalid configuration
  {EXIT_DIVERGED}  training diverged (non-finite loss or gradient)
"""

CACHE_MANIFEST = "manifest.csv"
CACHE_SUFFIX = ".mclfeat"


class UsageError(Exception):
    pass


def clip_id_for(path: str) -> str:
    stem = path.rsplit(".", 1)[0] if "." in Path(path).name else path
    return stem.replace("\\", "/").strip("/").replace("/", "__")


def _featurize_one(args):
    audio_path, cache_path, clip_id, label, fold = args
    try:
        data = Path(audio_path).read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"audio file not found: {audio_path}") from None
    clip = decode_wav(data, source=str(audio_path))
    write_feature_clip(cache_path, log_mel_delta(clip, clip_id, label, fold))
    return clip_id


def cmd_featurize(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = parse_manifest(_read(manifest_path))
    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)
    jobs = []
    for entry in manifest.entries:
        clip_id = clip_id_for(entry.path)
        target = cache / (clip_id + CACHE_SUFFIX)
        if target.exists() and not args.rebuild:
            continue
        jobs.append((Path(args.audio_root) / entry.path, target, clip_id, entry.label, entry.fold))
    log.info("%d clips to featurize, %d cached", len(jobs), len(manifest.entries) - len(jobs))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_featurize_one, jobs, chunksize=16))
    else:
        for job in jobs:
            _featurize_one(job)
    (cache / CACHE_MANIFEST).write_text(manifest.to_csv(), encoding="utf-8")
    print(f"featurized {len(jobs)} clip(s) into {cache}")
    return EXIT_OK


def load_cache(cache) -> tuple:
    """Manifest and feature clips from a cache directory (no audio is read)."""
    cache = Path(cache)
    manifest = parse_manifest(_read(cache / CACHE_MANIFEST))
    clips = []
    for entry in manifest.entries:
        path = cache / (clip_id_for(entry.path) + CACHE_SUFFIX)
        if not path.exists():
            raise FileNotFoundError(f"feature cache is incomplete, missing {path}; run featurize first")
        clips.append(read_feature_clip(path))
    return manifest, clips


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"file not found: {path}") from None


def _config_for(args, manifest):
    config = load_config(args.config) if args.config else config_from_dict({})
    if not config.classes:
        config = config.with_classes(manifest.classes)
    elif set(manifest.classes) - set(config.classes):
        raise ConfigError(f"classes: manifest labels {sorted(set(manifest.classes) - set(config.classes))} not in config")
    return config


def cmd_train(args) -> int:
    manifest, clips = load_cache(args.cache)
    config = _config_for(args, manifest)
    try:
        split = fold_split(manifest.num_folds, args.test_fold)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = config.seed if args.seed is None else args.seed
    train_clips = [c for c in clips if c.fold in split.train]
    val_clips = [c for c in clips if c.fold == split.validation]
    standardizer = fit_standardizer(train_clips)
    run = train(
        config,
        [apply_standardizer(c, standardizer) for c in train_clips],
        [apply_standardizer(c, standardizer) for c in val_clips],
        seed=[seed, args.test_fold],
    )
    save_model(args.out, run.best_params, standardizer)
    history = args.history or f"{args.out}.history.csv"
    write_history_csv(history, run.history)
    print(f"best epoch {run.best_epoch} ({run.stop_reason}), model written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest, clips = load_cache(args.cache)
    config = _config_for(args, manifest)
    folds = None
    if args.folds:
        try:
            folds = [int(f) for f in args.folds.split(",")]
            for f in folds:
                fold_split(manifest.num_folds, f)
        except ValueError as exc:
            raise UsageError(f"--folds: {exc}") from None
    seed = config.seed if args.seed is None else args.seed
    report, _ = cross_validate(config, clips, folds, seed=seed, jobs=args.jobs, num_folds=manifest.num_folds)
    out = Path(args.out)
    out.write_text(report.to_json(), encoding="utf-8")
    table = report.confusion_table()
    out.with_suffix(".txt").write_text(table, encoding="utf-8")
    print(f"mean accuracy {report.mean_accuracy:.4f}")
    print(table, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, std = load_model(args.model)
    clip = log_mel_delta(decode_wav(_read(Path(args.wav)), source=args.wav))
    if std is not None:
        clip = apply_standardizer(clip, Standardizer(*std))
    cls, probs = predict_clip(params, clip.frames, args.hop)
    labels = params.labels or tuple(str(i) for i in range(params.n_classes))
    print(labels[cls])
    for label, p in zip(labels, probs):
        print(f"{label}\t{p:.6f}")
    return EXIT_OK


def cmd_dump_mask(args) -> int:
    try:
        mask = build_mask(args.l, args.e, MaskSpec(args.bw, args.ov))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(mask_to_text(mask))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mclnn",
        description="Masked conditional neural networks for spectrogram classification.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract log-mel + delta features into a cache directory")
    p.add_argument("--manifest", required=True, help="CSV with header path,fold,label")
    p.add_argument("--audio-root", required=True, help="directory the manifest paths are relative to")
    p.add_argument("--cache", required=True, help="output directory for feature files")
    p.add_argument("--rebuild", action="store_true", help="recompute clips that are already cached")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one fold rotation and write a model file")
    p.add_argument("--config", help="JSON config (defaults if omitted)")
    p.add_argument("--cache", required=True)
    p.add_argument("--test-fold", type=int, required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="epoch history CSV (default: <out>.history.csv)")
    p.add_argument("--seed", type=int, help="run seed (default: config seed, 42)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validate over all folds and write a report")
    p.add_argument("--config", help="JSON config (defaults if omitted)")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True, help="report JSON; a .txt confusion table is written beside it")
    p.add_argument("--folds", help="comma-separated test folds (default: all)")
    p.add_argument("--seed", type=int, help="run seed (default: config seed, 42)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one WAV file with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--hop", type=int, default=1, help="segment hop in frames")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("dump-mask", help="print a binary mask as rows of 0/1")
    p.add_argument("--l", type=int, required=True, help="input feature length (rows)")
    p.add_argument("--e", type=int, required=True, help="hidden width (columns)")
    p.add_argument("--bw", type=int, required=True, help="bandwidth")
    p.add_argument("--ov", type=int, required=True, help="overlap (may be negative)")
    p.set_defaults(func=cmd_dump_mask)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except FileNotFoundError as exc:
        code, msg = EXIT_MISSING, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except TrainingDiverged as exc:
        code, msg = EXIT_DIVERGED, f"training diverged: {exc}"
    except (ManifestError, WavError, ValueError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"mclnn {args.command}: {msg}", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
