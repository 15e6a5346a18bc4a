"""Command-line surface: synth | preprocess | augment | train | eval |
gradcheck | ablate.

Every command is a thin composition of the library modules, reads one JSON
config (with `--set section.key=value` overrides), and emits deterministic
files: same inputs and seed give byte-identical outputs. Wall-clock timings
go to a separate `timings.csv`, which is the one intentionally
non-reproducible artifact.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from . import __version__
from .augment import expand_dataset, expand_recordings
from .config import ConfigError, RunConfig, load_run_config, run_config_to_dict
from .csi_data import (
    CsiFormatError,
    DatasetManifest,
    ManifestEntry,
    generate_synthetic,
    gate_and_trim,
    load_manifest,
    load_recording,
    save_manifest,
    save_recording,
)
from .dsp import load_sample, preprocess, save_sample
from .gradchecks import run_battery
from .model import load_checkpoint, model_config_to_dict, save_checkpoint
from .train import (
    ablate,
    evaluate,
    kfold_evaluate,
    kfold_plan,
    train,
    write_ablation_table,
    write_confusion_csv,
    write_metrics_csv,
    write_summary,
)

__all__ = ["main"]


def _add_common(sp: argparse.ArgumentParser, needs_out: bool) -> None:
    sp.add_argument("--config", default=None, help="JSON run configuration")
    sp.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    sp.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config field, e.g. --set model.kernel=7 (repeatable)",
    )
    if needs_out:
        sp.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csi-tcn",
        description="WiFi-CSI interaction recognition pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic raw dataset")
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="gate/trim and run the DSP chain")
    sp.add_argument("manifest", help="raw dataset manifest")
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("augment", help="expand a dataset with augmentations")
    sp.add_argument("manifest", help="dataset manifest")
    sp.add_argument(
        "--stage",
        choices=("post", "pre"),
        default="post",
        help="post: preprocessed samples (default); pre: raw complex recordings",
    )
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train a model (validates on fold 0)")
    sp.add_argument("manifest", help="preprocessed dataset manifest")
    sp.add_argument(
        "--kfold",
        type=int,
        default=None,
        metavar="K",
        help="run full k-fold cross-validation instead of a single run",
    )
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("manifest", help="preprocessed dataset manifest")
    sp.add_argument("--checkpoint", required=True, help="model checkpoint file")
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of all primitives")
    _add_common(sp, needs_out=False)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="sweep one knob and tabulate accuracy/loss")
    sp.add_argument("manifest", help="preprocessed dataset manifest")
    sp.add_argument(
        "--sweep", required=True, choices=("kernel", "dropout", "attention", "augment")
    )
    sp.add_argument(
        "--values",
        required=True,
        help="comma-separated sweep points, e.g. 2,7,15 or none,dropout,mix_same",
    )
    _add_common(sp, needs_out=True)
    sp.set_defaults(func=cmd_ablate)
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, args.overrides, args.seed)


def _load_samples(manifest: DatasetManifest):
    return [load_sample(e.path, label=e.label) for e in manifest]


def _unique_stem(path: str, taken: set[str]) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    candidate = stem
    i = 1
    while candidate in taken:
        candidate = f"{stem}_{i}"
        i += 1
    taken.add(candidate)
    return candidate


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = generate_synthetic(cfg.synth, args.out)
    print(
        f"wrote {len(manifest)} recordings "
        f"({cfg.synth.classes} classes x {cfg.synth.samples_per_class} trials) to {args.out}"
    )
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    taken: set[str] = set()
    discarded = 0
    for entry in manifest:
        rec = load_recording(entry.path)
        gated = gate_and_trim(rec, cfg.pipeline.target_np)
        if gated is None:
            discarded += 1
            continue
        sample = preprocess(
            gated,
            cfg.filter,
            cfg.wavelet,
            label=entry.label,
            normalize_first=cfg.pipeline.normalize_first,
        )
        name = _unique_stem(entry.path, taken) + ".csp"
        path = os.path.join(args.out, name)
        save_sample(sample, path)
        entries.append(
            ManifestEntry(path=path, label=entry.label, pair_id=entry.pair_id, trial_id=entry.trial_id)
        )
    if not entries:
        raise ValueError(
            f"no recording reached the {cfg.pipeline.target_np}-packet threshold"
        )
    save_manifest(DatasetManifest(entries=entries), os.path.join(args.out, "manifest.csv"))
    print(f"preprocessed {len(entries)} recordings to {args.out} (discarded {discarded})")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    taken: set[str] = set()
    base = list(manifest)

    if args.stage == "post":
        samples = _load_samples(manifest)
        expanded = expand_dataset(samples, cfg.augment)
        writer, suffix = save_sample, ".csp"
        items = expanded
    else:
        recordings = [(load_recording(e.path), e.label) for e in manifest]
        expanded_recs = expand_recordings(recordings, cfg.augment)
        writer, suffix = save_recording, ".csi"
        items = expanded_recs

    n_base = len(base)
    for j, item in enumerate(items):
        if j < n_base:
            src = base[j]
            name = _unique_stem(src.path, taken) + suffix
            pair_id, trial_id = src.pair_id, src.trial_id
        else:
            k = j - n_base
            method_idx, rest = divmod(k, cfg.augment.copies_per_method * n_base)
            copy_idx, base_idx = divmod(rest, n_base)
            src = base[base_idx]
            method = cfg.augment.methods[method_idx].value
            name = _unique_stem(f"aug_{method}_{copy_idx}_{base_idx:05d}", taken) + suffix
            pair_id, trial_id = src.pair_id, src.trial_id
        path = os.path.join(args.out, name)
        if args.stage == "post":
            writer(item, path)
            label = item.label
        else:
            rec, label = item
            writer(rec, path)
        entries.append(ManifestEntry(path=path, label=label, pair_id=pair_id, trial_id=trial_id))
    save_manifest(DatasetManifest(entries=entries), os.path.join(args.out, "manifest.csv"))
    print(
        f"expanded {n_base} -> {len(entries)} samples "
        f"({', '.join(m.value for m in cfg.augment.methods)}) to {args.out}"
    )
    return 0


def _write_timings(metrics, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,seconds\n")
        for epoch, seconds in enumerate(metrics.epoch_seconds):
            fh.write(f"{epoch},{seconds:.6f}\n")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    samples = _load_samples(manifest)
    os.makedirs(args.out, exist_ok=True)

    if args.kfold is not None:
        per_fold, mean_accuracy = kfold_evaluate(samples, cfg.model, cfg.train, k=args.kfold)
        for fold, metrics in enumerate(per_fold):
            write_metrics_csv(metrics, os.path.join(args.out, f"fold{fold}_metrics.csv"))
        write_summary(
            {
                "command": "train",
                "validation_protocol": f"{args.kfold}-fold cross-validation",
                "mean_val_accuracy": mean_accuracy,
                "fold_val_accuracy": [m.final_val_accuracy for m in per_fold],
                "config": run_config_to_dict(cfg),
            },
            os.path.join(args.out, "summary.json"),
        )
        print(f"k-fold mean validation accuracy: {mean_accuracy:.4f}")
        return 0

    labels = [s.label for s in samples]
    plan = kfold_plan(labels, k=cfg.train.k_folds, seed=cfg.train.seed)
    val_set = [samples[i] for i in plan.folds[0]]
    train_set = [samples[i] for i in plan.train_indices(0)]
    params, metrics = train(train_set, cfg.model, cfg.train, val_set)

    save_checkpoint(os.path.join(args.out, "checkpoint.ckpt"), params, cfg.model)
    write_metrics_csv(metrics, os.path.join(args.out, "metrics.csv"))
    if metrics.confusion is not None:
        write_confusion_csv(metrics.confusion, os.path.join(args.out, "confusion.csv"))
    _write_timings(metrics, os.path.join(args.out, "timings.csv"))
    summary = {
        "command": "train",
        "validation_protocol": f"holdout fold 0 of {cfg.train.k_folds}",
        "train_samples": len(train_set),
        "val_samples": len(val_set),
        "final_train_accuracy": metrics.train_accuracy[-1] if metrics.train_accuracy else None,
        "final_val_accuracy": metrics.val_accuracy[-1] if metrics.val_accuracy else None,
        "config": run_config_to_dict(cfg),
    }
    write_summary(summary, os.path.join(args.out, "summary.json"))
    if metrics.val_accuracy:
        print(
            f"trained {cfg.train.epochs} epochs on {len(train_set)} samples; "
            f"validation accuracy {metrics.val_accuracy[-1]:.4f}"
        )
    else:
        print(f"trained {cfg.train.epochs} epochs on {len(train_set)} samples")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    samples = _load_samples(manifest)
    params, model_cfg = load_checkpoint(args.checkpoint)
    accuracy, loss, confusion = evaluate(params, model_cfg, samples, cfg.train.batch_size)
    os.makedirs(args.out, exist_ok=True)
    write_confusion_csv(confusion, os.path.join(args.out, "confusion.csv"))
    write_summary(
        {
            "command": "eval",
            "checkpoint": os.path.basename(args.checkpoint),
            "samples": len(samples),
            "accuracy": accuracy,
            "loss": loss,
            "model_config": model_config_to_dict(model_cfg),
        },
        os.path.join(args.out, "summary.json"),
    )
    print(f"evaluated {len(samples)} samples: accuracy {accuracy:.4f}, loss {loss:.4f}")
    print(f"confusion matrix ({model_cfg.n_classes}x{model_cfg.n_classes}) written to "
          f"{os.path.join(args.out, 'confusion.csv')}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    _load_config(args)  # validates config/overrides even though defaults suffice
    rows = run_battery()
    width = max(len(r.name) for r in rows)
    failures = 0
    for r in rows:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err {r.error:.3e}  tol {r.tolerance:.0e}  {status}")
        failures += 0 if r.passed else 1
    if failures:
        print(f"{failures} gradient check(s) failed")
        return 1
    print(f"all {len(rows)} gradient checks passed")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    samples = _load_samples(manifest)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("--values is empty")
    rows = ablate(samples, cfg.model, cfg.train, args.sweep, values, cfg.augment)
    os.makedirs(args.out, exist_ok=True)
    write_ablation_table(rows, os.path.join(args.out, "ablation.csv"))
    for r in rows:
        print(
            f"{r.sweep}={r.value}: train_acc {r.train_accuracy:.4f} "
            f"val_acc {r.val_accuracy:.4f} val_loss {r.val_loss:.4f}"
        )
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CsiFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
