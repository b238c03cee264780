"""Experiment protocols: representation probe, CNN baseline, guidance sweeps,
latent interpolation, embedding export and cross-corpus guidance."""
import csv
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import make_guidance_split
from .exceptions import ConfigError, DataError
from .metrics import SpectrogramClassifier
from .nets import GganModel
from .trainer import GganTrainer, TrainingConfig, to_nchw, to_nhwc

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("train-ggan", "train-sup-biggan", "train-uns-biggan", "probe", "interpolate",
                    "evaluate", "export-embeddings", "sweep")


@dataclass
class ExperimentSpec:
    kind: str = "sweep"
    config: TrainingConfig = field(default_factory=TrainingConfig.toy)
    fractions: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)
    repeat: int = 5
    seeds: tuple = None
    test_fraction: float = 0.2
    cnn_epochs: int = 200

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if not self.fractions or any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        if self.seeds is None:
            self.seeds = tuple(range(self.repeat))
        if len(self.seeds) != self.repeat:
            raise ConfigError("need one seed per repeat")


@dataclass
class ProbeResult:
    method: str
    accuracy: float
    fraction: float
    seed: int
    n_labelled: int


def _model_of(model):
    return model if isinstance(model, GganModel) else model.model_


def _eval_input(X):
    return to_nchw(X).contiguous(memory_format=torch.channels_last)


def probe_representation(model, X_test, y_test):
    """Accuracy of argmax C_x(F(D(x))) on a labelled test set.

    ``y_test`` holds class indices as used during training.
    """
    mdl = _model_of(model)
    y_test = np.asarray(y_test)
    if len(y_test) == 0 or len(X_test) == 0:
        raise DataError("empty test set")
    if len(y_test) != len(X_test):
        raise DataError("one label per test sample required")
    was_training = mdl.training
    mdl.eval()
    try:
        with torch.no_grad():
            d = mdl.d_feature(_eval_input(X_test))
            logits = mdl.classifier_x(mdl.feature_extractor(d))
    finally:
        mdl.train(was_training)
    return float((logits.argmax(dim=1).numpy() == y_test).mean())


def baseline_cnn(split, epochs=200, seed=None, ch=4):
    """Supervised CNN trained on the guidance set only, scored on the test set."""
    if split.test is None or len(split.test) == 0:
        raise DataError("split has no test set")
    seed = split.seed if seed is None else seed
    clf = SpectrogramClassifier(ch=ch, epochs=epochs, seed=seed, min_train_accuracy=None)
    clf.fit(split.labelled, split.labels)
    return ProbeResult("cnn", float(clf.score(split.test, split.test_labels)), split.fraction,
                       seed, len(split.labels))


def train_on_split(split, config, run_dir=None):
    cfg = dataclasses.replace(config, n_classes=split.n_classes, seed=split.seed)
    trainer = GganTrainer(cfg, split.unlabelled, split.labelled, split.labels, run_dir=run_dir)
    trainer.train()
    return trainer


def run_guidance_sweep(spec, X, y, out_dir=None):
    """Train and probe one model per (fraction, seed); compare with the CNN.

    Returns ``(table, results)`` where ``table`` holds one row per
    fraction and method with mean and std over the repeats.
    """
    results = []
    for fraction in sorted(spec.fractions):
        for seed in spec.seeds:
            split = make_guidance_split(X, y, fraction, seed, test_fraction=spec.test_fraction)
            run_dir = None if out_dir is None else Path(out_dir) / f"f{fraction:g}_s{seed}"
            trainer = train_on_split(split, spec.config, run_dir)
            acc = probe_representation(trainer.model, split.test, split.test_labels)
            results.append(ProbeResult("ggan", acc, fraction, seed, len(split.labels)))
            results.append(baseline_cnn(split, epochs=spec.cnn_epochs, ch=spec.config.ch))
            log.info("fraction %g seed %d: ggan %.3f cnn %.3f", fraction, seed, acc,
                     results[-1].accuracy)
    table = []
    for fraction in sorted(spec.fractions):
        for method in ("ggan", "cnn"):
            accs = [r.accuracy for r in results if r.fraction == fraction and r.method == method]
            table.append({"fraction": fraction, "method": method, "mean": float(np.mean(accs)),
                          "std": float(np.std(accs)), "n": len(accs)})
    if out_dir is not None:
        write_table(table, Path(out_dir) / "sweep.tsv")
    return table, results


def write_table(rows, path, delimiter="\t"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter=delimiter)
        writer.writeheader()
        writer.writerows(rows)
    return path


def interpolate_latent(model, x_a, x_b, steps):
    """Generate G((1-t) f_a + t f_b) for t = i / (steps - 1).

    ``f`` is the learned representation F(D(x)). Returns the samples as an
    (steps, H, W, 1) array and the interpolated latents.
    """
    if steps < 2:
        raise ConfigError("steps must be >= 2")
    mdl = _model_of(model)
    x = np.stack([np.asarray(x_a, dtype=np.float32), np.asarray(x_b, dtype=np.float32)])
    was_training = mdl.training
    mdl.eval()
    try:
        with torch.no_grad():
            f = mdl.represent(_eval_input(x))
            ts = [i / (steps - 1) for i in range(steps)]
            latents = torch.stack([(1.0 - t) * f[0] + t * f[1] for t in ts])
            samples = torch.cat([mdl.generator(z[None]) for z in latents])
    finally:
        mdl.train(was_training)
    return to_nhwc(samples), latents.numpy()


def embed(model, X, batch=256):
    mdl = _model_of(model)
    was_training = mdl.training
    mdl.eval()
    try:
        with torch.no_grad():
            x = _eval_input(X)
            return torch.cat([mdl.represent(x[i:i + batch])
                              for i in range(0, len(x), batch)]).numpy()
    finally:
        mdl.train(was_training)


def export_embeddings(model, X, y, path, delimiter="\t"):
    """Write one row per sample: the representation followed by its label."""
    feats = embed(model, X)
    y = np.asarray(y)
    if len(y) != len(feats):
        raise DataError("one label per sample required")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([f"f{i}" for i in range(feats.shape[1])] + ["label"])
        for row, label in zip(feats, y):
            writer.writerow([repr(float(v)) for v in row] + [label])
    return feats


def _row_digests(X):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float32))
    return {hashlib.sha1(row.tobytes()).hexdigest() for row in X}


def cross_dataset_guidance(unlabelled, X_foreign, y_foreign, config, run_dir=None,
                           n_per_condition=16, sample_seed=0):
    """Train with guidance drawn only from a foreign labelled pool.

    Returns the trainer and a dict mapping condition index to a sample grid.
    """
    classes, codes = np.unique(np.asarray(y_foreign), return_inverse=True)
    if len(classes) != config.n_classes:
        raise ConfigError(f"foreign pool has {len(classes)} classes, config expects "
                          f"{config.n_classes}")
    if _row_digests(unlabelled) & _row_digests(X_foreign):
        raise DataError("foreign guidance pool overlaps the unlabelled pool")
    trainer = GganTrainer(config, unlabelled, X_foreign, codes, run_dir=run_dir)
    trainer.train()
    grids = {}
    for c in range(config.n_classes):
        grids[c] = trainer.sample(np.full(n_per_condition, c), seed=sample_seed + c)
    if run_dir is not None:
        np.savez(Path(run_dir) / "samples" / "grids.npz", **{f"c{c}": g for c, g in grids.items()})
    return trainer, grids
