"""Command-line entry points.

Four subcommands cover the desk-scale workflow::

    spdattn synth     --out data.bin [generator flags]
    spdattn train     --data data.bin --out rundir [training flags]
    spdattn eval      --ckpt rundir/checkpoint.bin --data test.bin --out evaldir
    spdattn interpret --ckpt rundir/checkpoint.bin --data test.bin --class 0 --out outdir

Every command writes a ``manifest.txt`` (canonical key-sorted text with
SHA-256 checksums of inputs and outputs) next to its outputs, and all
writes are atomic.  Exit codes: 0 success, 2 usage/config errors, 1
runtime failures.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from .attention import attention_scores
from .data import SynthSpec, load_dataset, save_dataset, synth
from .errors import ConfigError, ContentError, ContractError, SpdError
from .model import ModelConfig, forward, load_checkpoint, saliency, save_checkpoint
from .train import TrainConfig, evaluate, save_history, train


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _atomic_text(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(directory, command, config, inputs, outputs):
    entries = {"command": command}
    for key, value in config.items():
        entries[f"config.{key}"] = repr(value) if isinstance(value, float) else str(value)
    for name, path in inputs.items():
        entries[f"input.{name}.path"] = str(path)
        entries[f"input.{name}.sha256"] = _sha256(path)
    for name, path in outputs.items():
        entries[f"output.{name}.sha256"] = _sha256(path)
    text = "".join(f"{key}={entries[key]}\n" for key in sorted(entries))
    _atomic_text(os.path.join(directory, "manifest.txt"), text)


def _float_csv(rows):
    return "\n".join(",".join(repr(float(v)) for v in row) for row in rows) + "\n"


def _int_csv(rows):
    return "\n".join(",".join(str(int(v)) for v in row) for row in rows) + "\n"


def _config_entries(prefix, obj, names):
    return {f"{prefix}.{name}": getattr(obj, name) for name in names}


_MODEL_FIELDS = (
    "channels",
    "timepoints",
    "classes",
    "m",
    "d_c",
    "d_u",
    "spatial_filters",
    "temporal_kernel",
    "stride",
    "eps",
    "eps_re",
    "seed",
)
_TRAIN_FIELDS = ("iterations", "lr", "batch_size", "val_fraction", "seed")
_SYNTH_FIELDS = (
    "classes",
    "channels",
    "timepoints",
    "freqs",
    "sampling_rate_hz",
    "noise",
    "trials_per_class",
    "seed",
    "burst_amplitude",
    "burst_fraction",
    "segments",
)


def cmd_synth(args):
    freqs = None
    if args.freqs is not None:
        try:
            freqs = tuple(float(tok) for tok in args.freqs.split(","))
        except ValueError as exc:
            raise ConfigError(f"--freqs must be comma-separated numbers: {exc}") from exc
    spec = SynthSpec(
        classes=args.classes,
        channels=args.channels,
        timepoints=args.timepoints,
        freqs=freqs,
        sampling_rate_hz=args.sampling_rate,
        noise=args.noise,
        trials_per_class=args.per_class,
        seed=args.seed,
        burst_amplitude=args.burst_amp,
        burst_fraction=args.burst_frac,
        segments=args.segments,
    )
    dataset = synth(spec)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(args.out, dataset)
    _write_manifest(
        out_dir,
        "synth",
        _config_entries("synth", spec, _SYNTH_FIELDS),
        inputs={},
        outputs={os.path.basename(args.out): args.out},
    )
    return 0


def _model_config_from_args(args, dataset):
    return ModelConfig(
        channels=dataset.channels,
        timepoints=dataset.timepoints,
        classes=dataset.classes,
        m=args.m,
        d_c=args.d_c,
        d_u=args.d_u,
        spatial_filters=args.spatial_filters,
        temporal_kernel=args.kernel,
        stride=args.stride,
        eps=args.eps,
        eps_re=args.eps_re,
        seed=args.seed,
    )


def cmd_train(args):
    dataset = load_dataset(args.data)
    model_cfg = _model_config_from_args(args, dataset)
    train_cfg = TrainConfig(
        iterations=args.iters,
        lr=args.lr,
        batch_size=args.batch,
        val_fraction=args.val_frac,
        seed=args.seed,
    )
    result = train(dataset, model_cfg, train_cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    history_path = os.path.join(args.out, "history.csv")
    save_checkpoint(ckpt_path, result.params, model_cfg)
    save_history(history_path, result.history)
    config = _config_entries("model", model_cfg, _MODEL_FIELDS)
    config.update(_config_entries("train", train_cfg, _TRAIN_FIELDS))
    config["train.best_iteration"] = result.best_iteration
    _write_manifest(
        args.out,
        "train",
        config,
        inputs={"data": args.data},
        outputs={"checkpoint.bin": ckpt_path, "history.csv": history_path},
    )
    return 0


def _check_compatible(cfg, dataset, ckpt_path, data_path):
    if (dataset.channels, dataset.timepoints) != (cfg.channels, cfg.timepoints):
        raise ContractError(
            f"checkpoint {ckpt_path} expects trials of "
            f"({cfg.channels}, {cfg.timepoints}) but {data_path} holds "
            f"({dataset.channels}, {dataset.timepoints})"
        )
    if dataset.classes != cfg.classes:
        raise ContractError(
            f"checkpoint {ckpt_path} expects {cfg.classes} classes but "
            f"{data_path} holds {dataset.classes}"
        )


def cmd_eval(args):
    params, cfg = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    _check_compatible(cfg, dataset, args.ckpt, args.data)
    report = evaluate(params, cfg, dataset)
    os.makedirs(args.out, exist_ok=True)
    metrics = {"accuracy": repr(report.accuracy), "n_trials": str(dataset.n_trials)}
    if report.auc is not None:
        metrics["auc"] = repr(report.auc)
    metrics_path = os.path.join(args.out, "metrics.txt")
    _atomic_text(
        metrics_path, "".join(f"{k}={metrics[k]}\n" for k in sorted(metrics))
    )
    confusion_path = os.path.join(args.out, "confusion.csv")
    _atomic_text(confusion_path, _int_csv(report.confusion))
    attention_path = os.path.join(args.out, "attention.csv")
    _atomic_text(attention_path, _float_csv([report.attention_profile]))
    _write_manifest(
        args.out,
        "eval",
        _config_entries("model", cfg, _MODEL_FIELDS),
        inputs={"ckpt": args.ckpt, "data": args.data},
        outputs={
            "metrics.txt": metrics_path,
            "confusion.csv": confusion_path,
            "attention.csv": attention_path,
        },
    )
    return 0


def cmd_interpret(args):
    params, cfg = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    _check_compatible(cfg, dataset, args.ckpt, args.data)
    target = args.target
    if not 0 <= target < cfg.classes:
        raise IndexError(f"--class {target} out of range for {cfg.classes} classes")
    members = np.flatnonzero(dataset.labels == target)
    if members.size == 0:
        raise ContentError(f"dataset has no trials of class {target}")
    mean_abs = np.zeros((cfg.channels, cfg.timepoints))
    for i in members:
        mean_abs += np.abs(saliency(dataset.trials[i], params, cfg, target))
    mean_abs /= members.size
    scores = np.empty((dataset.n_trials, cfg.m))
    for i in range(dataset.n_trials):
        _, att, _ = forward(dataset.trials[i], params, cfg)
        scores[i] = attention_scores(att)
    os.makedirs(args.out, exist_ok=True)
    saliency_path = os.path.join(args.out, f"saliency_class{target}.csv")
    _atomic_text(saliency_path, _float_csv(mean_abs))
    scores_path = os.path.join(args.out, "attention_scores.csv")
    _atomic_text(scores_path, _float_csv(scores))
    config = _config_entries("model", cfg, _MODEL_FIELDS)
    config["interpret.class"] = target
    _write_manifest(
        args.out,
        "interpret",
        config,
        inputs={"ckpt": args.ckpt, "data": args.data},
        outputs={
            f"saliency_class{target}.csv": saliency_path,
            "attention_scores.csv": scores_path,
        },
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdattn",
        description="SPD-manifold attention decoding: synthesize, train, "
        "evaluate, interpret.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--timepoints", type=int, default=256)
    p.add_argument("--freqs", type=str, default=None,
                   help="comma-separated per-class frequencies in Hz")
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--sampling-rate", type=float, default=128.0)
    p.add_argument("--burst-amp", type=float, default=0.0)
    p.add_argument("--burst-frac", type=float, default=0.3)
    p.add_argument("--segments", type=int, default=1,
                   help="number of pattern blocks per trial; classes "
                        "rearrange a shared pool when > 1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a decoder on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--iters", type=int, default=350)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--val-frac", type=float, default=0.125)
    p.add_argument("--d-c", type=int, default=20)
    p.add_argument("--d-u", type=int, default=None)
    p.add_argument("--kernel", type=int, default=12)
    p.add_argument("--spatial-filters", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--eps-re", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "interpret", help="export saliency and attention scores for a class"
    )
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--class", dest="target", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interpret)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (SpdError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
