"""Command-line entry point: ``ggan <command> [options]``.

Every command accepts ``--config`` (a YAML or JSON mapping of training
options) and ``--seed``; outputs go to ``<runs-root>/<name>/``.
"""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import harness
from .data import load_digit_directory, make_guidance_split, write_spectrogram, write_wav
from .exceptions import ConfigError, GganError
from .metrics import SpectrogramClassifier, evaluate_generation
from .spectro import FULL_SCALE, TOY_SCALE, Spectrogram, invert_spectrogram
from .toy import make_style_dataset, make_toy_dataset
from .trainer import (BigGANTrainer, GganTrainer, TrainingConfig, model_from_checkpoint,
                      sample_latents, spectro_config_for, to_nhwc)

log = logging.getLogger("ggan")

KINDS = ("ggan", "biggan-sup", "biggan-uns")
_SCALES = {"toy": TOY_SCALE, "full": FULL_SCALE}


def _parse_bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_config_flags(p):
    group = p.add_argument_group("training options")
    for f in dataclasses.fields(TrainingConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            continue
        if f.name == "resolution":
            group.add_argument(flag, type=int, nargs=2, default=None, metavar=("H", "W"))
        elif f.type in (bool, "bool"):
            group.add_argument(flag, type=_parse_bool, default=None, metavar="BOOL")
        else:
            kind = {"int": int, "float": float, "str": str}.get(f.type, f.type)
            group.add_argument(flag, type=kind, default=None)


def load_config_file(path):
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a key-value mapping")
    return data


def resolve_config(args):
    """Toy preset < config file < explicit flags < --seed."""
    values = TrainingConfig.toy().to_dict()
    values.update(load_config_file(args.config))
    for f in dataclasses.fields(TrainingConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "seed":
            values[f.name] = v
    if args.seed is not None:
        values["seed"] = args.seed
    return TrainingConfig.from_dict(values)


def run_dir(args):
    path = Path(args.runs_root) / args.name
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_data(path):
    with np.load(path) as f:
        return f["X"], f["y"]


def _split(args, cfg, X, y):
    return make_guidance_split(X, y, args.fraction, cfg.seed, test_fraction=args.test_fraction)


def _checkpoint(args):
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(args.runs_root) / args.name / "checkpoints" / "final.pt"


def _load_split(args, X, y):
    with np.load(Path(args.runs_root) / args.name / "split.npz") as f:
        lab, test = f["labelled_index"], f["test_index"]
    return X[test], y[test], X[lab], y[lab]


# -- commands --------------------------------------------------------------

def cmd_prepare_data(args):
    cfg = _SCALES[args.scale]
    seed = 0 if args.seed is None else args.seed
    if args.source == "toy":
        X, y = make_toy_dataset(args.n_per_class, args.n_classes, cfg, seed=seed)
    elif args.source == "styles":
        X, y = make_style_dataset(args.n_per_class, cfg=cfg, seed=seed)
    else:
        if not args.root:
            raise ConfigError("--root is required for --source digits")
        X, y = load_digit_directory(args.root, cfg)
    out = run_dir(args) / "data.npz"
    np.savez_compressed(out, X=X, y=y)
    print(f"wrote {len(y)} spectrograms of shape {X.shape[1:]} to {out}")


def cmd_train(args):
    cfg = resolve_config(args)
    X, y = load_data(args.data)
    out = run_dir(args)
    if args.kind == "ggan":
        split = _split(args, cfg, X, y)
        np.savez(out / "split.npz", labelled_index=split.labelled_index,
                 test_index=split.test_index, fraction=split.fraction, seed=split.seed)
        trainer = GganTrainer(cfg, split.unlabelled, split.labelled, split.labels, run_dir=out)
        if args.resume:
            trainer.load_checkpoint(args.resume)
        trainer.train()
        trainer.save_checkpoint(out / "checkpoints" / "final.pt")
        acc = harness.probe_representation(trainer.model, split.test, split.test_labels) \
            if len(split.test) else float("nan")
        print(f"trained {trainer.iteration} iterations; probe accuracy {acc:.4f}")
    else:
        conditional = args.kind == "biggan-sup"
        trainer = BigGANTrainer(cfg, X, y if conditional else None, conditional=conditional)
        trainer.train()
        trainer.save_checkpoint(out / "checkpoints" / "final.pt")
        with open(out / "config.json", "w") as fh:
            json.dump({"training": cfg.to_dict(), "kind": args.kind}, fh, indent=2)
        print(f"trained {trainer.iteration} iterations of {args.kind}")


def _spectro_config(cfg):
    return spectro_config_for(cfg.resolution)


def _generate(model, cfg, conds, seed):
    gen = torch.Generator().manual_seed(seed)
    idx = torch.as_tensor(conds, dtype=torch.long)
    z = sample_latents(len(idx), cfg.latent_dim, gen, cfg.latent_dist)
    c = torch.nn.functional.one_hot(idx, cfg.n_classes).float()
    with torch.no_grad():
        return to_nhwc(model.generate(z, c))


def cmd_generate(args):
    model, cfg = model_from_checkpoint(_checkpoint(args))
    scfg = _spectro_config(cfg)
    seed = 0 if args.seed is None else args.seed
    conds = np.repeat(np.arange(cfg.n_classes), args.n_per_class)
    grid = _generate(model, cfg, conds, seed)
    out = Path(args.out) if args.out else run_dir(args) / "generated"
    out.mkdir(parents=True, exist_ok=True)
    for j, (c, values) in enumerate(zip(conds, grid)):
        spec = Spectrogram(np.clip(values, -1, 1), scfg)
        stem = f"c{c}_{j % args.n_per_class:03d}"
        write_spectrogram(out / f"{stem}.ggsp", spec)
        if args.wav:
            write_wav(out / f"{stem}.wav", invert_spectrogram(spec, args.invert_iters))
    print(f"wrote {len(conds)} samples to {out}")


def cmd_evaluate(args):
    X, y = load_data(args.data)
    X_test, y_test, _, _ = _load_split(args, X, y)
    seed = 0 if args.seed is None else args.seed
    clf = SpectrogramClassifier(epochs=args.classifier_epochs, seed=seed).fit(X, y)
    ckpts = [Path(args.checkpoint)] if args.checkpoint else \
        sorted((Path(args.runs_root) / args.name / "checkpoints").glob("*.pt"))
    report_path = run_dir(args) / "metric_reports.jsonl"
    for path in ckpts:
        model, cfg = model_from_checkpoint(path)
        scfg = _spectro_config(cfg)

        def draw(n, s, model=model, cfg=cfg):
            return _generate(model, cfg, np.arange(n) % cfg.n_classes, s)

        reference = X_test[:args.n_samples]
        report = evaluate_generation(draw, clf, reference, args.n_samples, args.invert_iters,
                                     seed=seed, spectro_config=scfg,
                                     probe_accuracy=harness.probe_representation(
                                         model, X_test, y_test))
        report.extra["checkpoint"] = str(path)
        report.append_to(report_path)
        print(report.summary_line(path.stem))


def cmd_probe(args):
    X, y = load_data(args.data)
    X_test, y_test, _, _ = _load_split(args, X, y)
    model, _ = model_from_checkpoint(_checkpoint(args))
    print(f"probe accuracy {harness.probe_representation(model, X_test, y_test):.4f}")


def cmd_sweep(args):
    cfg = resolve_config(args)
    X, y = load_data(args.data)
    seeds = tuple(range(cfg.seed, cfg.seed + args.repeat))
    spec = harness.ExperimentSpec(kind="sweep", config=cfg, fractions=tuple(args.fractions),
                                  repeat=args.repeat, seeds=seeds,
                                  test_fraction=args.test_fraction, cnn_epochs=args.cnn_epochs)
    table, _ = harness.run_guidance_sweep(spec, X, y, out_dir=run_dir(args))
    print("fraction\tmethod\tmean\tstd\tn")
    for row in table:
        print(f"{row['fraction']:g}\t{row['method']}\t{row['mean']:.4f}\t{row['std']:.4f}\t{row['n']}")


def cmd_interpolate(args):
    X, _ = load_data(args.data)
    model, cfg = model_from_checkpoint(_checkpoint(args))
    samples, _ = harness.interpolate_latent(model, X[args.a], X[args.b], args.steps)
    out = run_dir(args) / "interpolation"
    out.mkdir(exist_ok=True)
    for i, values in enumerate(samples):
        write_spectrogram(out / f"step_{i:03d}.ggsp",
                          Spectrogram(np.clip(values, -1, 1), _spectro_config(cfg)))
    print(f"wrote {len(samples)} interpolation steps to {out}")


def cmd_export_embeddings(args):
    X, y = load_data(args.data)
    model, _ = model_from_checkpoint(_checkpoint(args))
    out = Path(args.out) if args.out else run_dir(args) / "embeddings.tsv"
    feats = harness.export_embeddings(model, X, y, out)
    print(f"wrote {len(feats)} x {feats.shape[1]} embeddings to {out}")


def cmd_cross_guidance(args):
    cfg = dataclasses.replace(resolve_config(args), n_classes=2)
    X, _ = load_data(args.data)
    Xg, yg = load_data(args.guidance)
    out = run_dir(args)
    trainer, grids = harness.cross_dataset_guidance(X, Xg, yg, cfg, run_dir=out,
                                                    n_per_condition=args.n_per_condition)
    trainer.save_checkpoint(out / "checkpoints" / "final.pt")
    print(f"trained {trainer.iteration} iterations; grids for conditions {sorted(grids)}")


# -- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ggan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text, training=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML/JSON file of training options")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--name", default="default", help="run name under --runs-root")
        p.add_argument("--runs-root", default="runs")
        if training:
            _add_config_flags(p)
        p.set_defaults(func=fn)
        return p

    p = command("prepare-data", cmd_prepare_data, "build a spectrogram dataset file")
    p.add_argument("--source", choices=("toy", "styles", "digits"), default="toy")
    p.add_argument("--root", help="directory of <digit>_*.wav files")
    p.add_argument("--scale", choices=sorted(_SCALES), default="toy")
    p.add_argument("--n-per-class", type=int, default=250)
    p.add_argument("--n-classes", type=int, default=4)

    p = command("train", cmd_train, "train a guided GAN or a baseline", training=True)
    p.add_argument("--kind", choices=KINDS, default="ggan")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = command("generate", cmd_generate, "write class-conditional samples")
    p.add_argument("--checkpoint")
    p.add_argument("--n-per-class", type=int, default=4)
    p.add_argument("--out")
    p.add_argument("--wav", action="store_true", help="also write inverted audio")
    p.add_argument("--invert-iters", type=int, default=60)

    p = command("evaluate", cmd_evaluate, "IS/FID/probe for each checkpoint of a run")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--n-samples", type=int, default=10000)
    p.add_argument("--invert-iters", type=int, default=60)
    p.add_argument("--classifier-epochs", type=int, default=15)

    p = command("probe", cmd_probe, "held-out accuracy of C_x(F(D(x)))")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")

    p = command("sweep", cmd_sweep, "guidance-fraction sweep against the CNN baseline",
                training=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", type=float, nargs="+", default=[0.01, 0.02, 0.03, 0.04, 0.05])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--cnn-epochs", type=int, default=200)

    p = command("interpolate", cmd_interpolate, "interpolate between two representations")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--a", type=int, default=0)
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--steps", type=int, default=8)

    p = command("export-embeddings", cmd_export_embeddings, "write F(D(x)) rows with labels")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")

    p = command("cross-guidance", cmd_cross_guidance, "train with guidance from another corpus",
                training=True)
    p.add_argument("--data", required=True, help="unlabelled pool (labels ignored)")
    p.add_argument("--guidance", required=True, help="two-class labelled pool")
    p.add_argument("--n-per-condition", type=int, default=16)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except GganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
