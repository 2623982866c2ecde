"""Batch command-line front end.

Commands: ``vitforge crossval|train|eval|predict|convert-check``, each taking
``--config <path>`` (line-oriented ``key = value`` text, ``#`` comments),
``--set key=value`` overrides, and ``--seed N``. Every run is reproducible
from the config file and seed alone; all randomness flows from one root seed
namespaced per subsystem (init / shuffle / augment / folds).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vitforge.checkpoint import (
    CheckpointError,
    LoadedCheckpoint,
    fnv1a64,
    load_checkpoint,
    replace_head,
    save_checkpoint,
    serialize,
)
from vitforge.data import (
    DatasetError,
    DecodeError,
    augment_train,
    decode_image,
    kfold_split,
    load_dataset,
    preprocess_eval,
)
from vitforge.metrics import aggregate_folds, evaluate
from vitforge.model import ViTConfig, count_parameters, forward, init_params
from vitforge.ops import Rng, ShapeError, softmax_rows
from vitforge.training import TrainPlan, train


class CliError(ValueError):
    """User-facing configuration or invocation problem."""


@dataclass
class RunConfig:
    """All tunables, each with a documented default.

    The training defaults are the fine-tuning recipe (AdamW lr 2e-5, batch 8,
    50 epochs, 5 folds, frozen backbone, ImageNet normalization); the
    architecture defaults are ViT-Base/16 at 224.
    """

    dataset_root: str = ""       # class-per-subdirectory tree or manifest.csv
    num_classes: int = 0         # 0 = infer from the dataset
    positive_class: str = ""     # binary positive label; "" = first class name
    checkpoint_in: str = ""      # warm-start / eval / predict checkpoint
    checkpoint_out: str = ""     # where cmd_train stores the best snapshot
    output_dir: str = "runs"     # metrics.csv / metrics.json / history.csv
    folds: int = 5
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    freeze: str = "head_only"    # head_only | full
    val_fraction: float = 0.2    # cmd_train validation holdout
    augment: bool = True         # random crop + flip during training
    stratified: bool = False     # stratified fold assignment
    seed: int = 0
    image_size: int = 224
    channels: int = 3
    patch_size: int = 16
    hidden_dim: int = 768
    mlp_dim: int = 3072
    num_heads: int = 12
    num_layers: int = 12


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool" or kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise CliError(f"cannot parse boolean value {raw!r} for {key}")
    if kind == "int" or kind is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise CliError(f"cannot parse integer value {raw!r} for {key}") from exc
    if kind == "float" or kind is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise CliError(f"cannot parse float value {raw!r} for {key}") from exc
    return raw


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; unknown keys are rejected, not ignored."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_config(config_path=None, overrides=(), seed=None) -> RunConfig:
    values = parse_config_file(config_path) if config_path else {}
    for item in overrides:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise CliError(f"--set: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    if seed is not None:
        values["seed"] = seed
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _vit_config(run: RunConfig, num_classes: int) -> ViTConfig:
    try:
        return ViTConfig(
            image_size=run.image_size,
            channels=run.channels,
            patch_size=run.patch_size,
            hidden_dim=run.hidden_dim,
            mlp_dim=run.mlp_dim,
            num_heads=run.num_heads,
            num_layers=run.num_layers,
            num_classes=num_classes,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_labeled_images(run: RunConfig):
    if not run.dataset_root:
        raise CliError("dataset_root is required for this command")
    index = load_dataset(run.dataset_root)
    if run.num_classes and run.num_classes != index.num_classes:
        raise CliError(
            f"config says num_classes={run.num_classes} but dataset has "
            f"{index.num_classes} classes"
        )
    images = [decode_image(s.image_path) for s in index.samples]
    return index, images, index.labels()


def _positive_index(run: RunConfig, class_names) -> int:
    if not run.positive_class:
        return 0
    if run.positive_class not in class_names:
        raise CliError(
            f"positive_class {run.positive_class!r} not among classes {class_names}"
        )
    return class_names.index(run.positive_class)


def _initial_state(run: RunConfig, num_classes: int, root_rng: Rng):
    """Initial (params, config): a warm-start checkpoint or a seeded init."""
    if run.checkpoint_in:
        loaded = load_checkpoint(run.checkpoint_in)
        if loaded.config.num_classes != num_classes:
            loaded = replace_head(loaded, num_classes, root_rng.child("head"))
        return loaded.params, loaded.config
    config = _vit_config(run, num_classes)
    return init_params(config, root_rng.child("init")), config


def _train_plan(run: RunConfig, seed: int) -> TrainPlan:
    return TrainPlan(
        epochs=run.epochs,
        batch_size=run.batch_size,
        freeze_mode=run.freeze,
        seed=seed,
        learning_rate=run.learning_rate,
        weight_decay=run.weight_decay,
        beta1=run.beta1,
        beta2=run.beta2,
        eps=run.eps,
    )


def _fit_fold(run, config, params, raw_images, labels, train_idx, val_idx, seed):
    crop = config.image_size
    val_x = [preprocess_eval(raw_images[i], crop_size=crop) for i in val_idx]
    val_y = labels[val_idx]
    if run.augment:
        train_x = [raw_images[i] for i in train_idx]
        augment_fn = lambda image, rng: augment_train(image, rng, crop_size=crop)
    else:
        train_x = [preprocess_eval(raw_images[i], crop_size=crop) for i in train_idx]
        augment_fn = None
    return train(
        train_x, labels[train_idx], val_x, val_y, params, config,
        _train_plan(run, seed), augment_fn=augment_fn,
    )


def _write_history(path, history) -> None:
    lines = ["epoch,train_loss,val_accuracy"]
    for epoch, loss, acc in history:
        lines.append(f"{epoch},{loss!r},{acc!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_report(report, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv())
    (out / "metrics.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_crossval(run: RunConfig) -> int:
    index, images, labels = _load_labeled_images(run)
    n = len(images)
    if run.folds > n:
        raise CliError(f"cannot run {run.folds} folds with only {n} samples")
    positive = _positive_index(run, index.class_names)

    root_rng = Rng(run.seed)
    initial_params, config = _initial_state(run, index.num_classes, root_rng)
    split = kfold_split(n, run.folds, run.seed, labels=labels, stratified=run.stratified)

    rows = []
    for fold in range(run.folds):
        train_idx = split.train_indices(fold)
        val_idx = split.fold_indices(fold)
        fold_seed = root_rng.child("fold", fold).seed
        result = _fit_fold(
            run, config, initial_params.copy(), images, labels,
            train_idx, val_idx, fold_seed,
        )
        held_out = [preprocess_eval(images[i], crop_size=config.image_size) for i in val_idx]
        row = evaluate(
            lambda batch: forward(batch, result.best_params, config),
            held_out, labels[val_idx], index.num_classes,
            positive_index=positive, fold=str(fold + 1),
            batch_size=run.batch_size,
        )
        rows.append(row)
        print(f"fold {fold + 1}/{run.folds}: accuracy {row.accuracy:.4f}", file=sys.stderr)

    report = aggregate_folds(rows)
    _write_report(report, run.output_dir)
    print(f"wrote {Path(run.output_dir) / 'metrics.csv'}")
    return 0


def cmd_train(run: RunConfig) -> int:
    index, images, labels = _load_labeled_images(run)
    n = len(images)
    n_val = max(1, int(round(n * run.val_fraction)))
    if n_val >= n:
        raise CliError(f"val_fraction {run.val_fraction} leaves no training data")

    root_rng = Rng(run.seed)
    initial_params, config = _initial_state(run, index.num_classes, root_rng)
    order = root_rng.child("split").permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]

    result = _fit_fold(run, config, initial_params, images, labels,
                       train_idx, val_idx, run.seed)

    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_history(out / "history.csv", result.history)
    checkpoint_out = run.checkpoint_out or str(out / "best.vitc")
    save_checkpoint(result.best_params, config, checkpoint_out)
    print(f"best epoch {result.best_epoch} "
          f"(val accuracy {result.best_val_accuracy:.4f}); wrote {checkpoint_out}")
    return 0


def cmd_eval(run: RunConfig) -> int:
    if not run.checkpoint_in:
        raise CliError("checkpoint_in is required for eval")
    loaded = load_checkpoint(run.checkpoint_in)
    index, images, labels = _load_labeled_images(run)
    if index.num_classes != loaded.config.num_classes:
        raise CliError(
            f"checkpoint has {loaded.config.num_classes} classes, dataset has "
            f"{index.num_classes}"
        )
    positive = _positive_index(run, index.class_names)
    prepared = [preprocess_eval(im, crop_size=loaded.config.image_size) for im in images]
    row = evaluate(
        lambda batch: forward(batch, loaded.params, loaded.config),
        prepared, labels, index.num_classes,
        positive_index=positive, fold="1", batch_size=run.batch_size,
    )
    report = aggregate_folds([row])
    _write_report(report, run.output_dir)
    cells = [f"{row.accuracy!r}", f"{row.precision!r}", f"{row.sensitivity!r}",
             f"{row.f1!r}", f"{row.specificity!r}",
             "" if row.auc is None else f"{row.auc!r}"]
    print("accuracy,precision,sensitivity,f1,specificity,auc")
    print(",".join(cells))
    return 0


def cmd_predict(run: RunConfig, image_paths) -> int:
    if not run.checkpoint_in:
        raise CliError("checkpoint_in is required for predict")
    if not image_paths:
        raise CliError("predict needs at least one image path")
    loaded = load_checkpoint(run.checkpoint_in)

    if run.dataset_root:
        class_names = load_dataset(run.dataset_root).class_names
        if len(class_names) != loaded.config.num_classes:
            raise CliError(
                f"dataset has {len(class_names)} classes, checkpoint expects "
                f"{loaded.config.num_classes}"
            )
    else:
        class_names = [f"class_{i}" for i in range(loaded.config.num_classes)]

    skipped = 0
    for path in image_paths:
        try:
            image = preprocess_eval(
                decode_image(path), crop_size=loaded.config.image_size
            )
        except (DecodeError, OSError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        logits = forward(image[None], loaded.params, loaded.config)
        probs = softmax_rows(logits.astype(np.float64))[0]
        prob_text = " ".join(f"{p:.6f}" for p in probs)
        print(f"{path}\t{class_names[int(np.argmax(probs))]}\t{prob_text}")

    if skipped:
        print(f"skipped {skipped} unreadable image(s)", file=sys.stderr)
        return 1
    return 0


def cmd_convert_check(run: RunConfig) -> int:
    """Validate a checkpoint: parse, checksum, shapes, canonical bytes."""
    if not run.checkpoint_in:
        raise CliError("checkpoint_in is required for convert-check")
    loaded = load_checkpoint(run.checkpoint_in)
    original = Path(run.checkpoint_in).read_bytes()
    reserialized = serialize(loaded.params, loaded.config, loaded.optimizer)

    for name in loaded.params.names():
        tensor = loaded.params[name]
        shape = "x".join(str(d) for d in tensor.shape)
        digest = fnv1a64(np.ascontiguousarray(tensor).tobytes())
        print(f"{name}\t{shape}\t{digest:016x}")

    total = count_parameters(loaded.params)
    print(f"parameters: {total}")
    print(f"config: {loaded.config}")
    if reserialized != original:
        print("error: re-serialization differs from file bytes", file=sys.stderr)
        return 1
    print("checkpoint OK: checksum valid, shapes consistent, serialization canonical")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="override a config value",
    )
    parser.add_argument("--seed", type=int, default=None, help="root random seed")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitforge",
        description="Vision Transformer fine-tuning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("crossval", "k-fold cross-validation with metrics.csv/metrics.json"),
        ("train", "train once, write history.csv and the best checkpoint"),
        ("eval", "evaluate a checkpoint on a labeled dataset"),
        ("predict", "classify image files with a checkpoint"),
        ("convert-check", "validate a checkpoint file byte-exactly"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "predict":
            p.add_argument("images", nargs="*", help="image files to classify")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        run = build_config(args.config, args.overrides, args.seed)
        if args.command == "crossval":
            return cmd_crossval(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run)
        if args.command == "predict":
            return cmd_predict(run, args.images)
        if args.command == "convert-check":
            return cmd_convert_check(run)
        raise CliError(f"unknown command {args.command}")
    except (CliError, CheckpointError, DatasetError, DecodeError, ShapeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
