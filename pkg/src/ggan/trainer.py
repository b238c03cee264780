"""Interleaved optimization schedule for the guided GAN.

One iteration runs ``k`` discriminator phases, one generator phase and one
feature phase, each on a freshly sampled minibatch. Every phase mutates
only its own parameter sets; running statistics and spectral-norm vectors
of the other networks are restored after the phase's forward passes.
"""
import contextlib
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .data import write_spectrogram
from .exceptions import ConfigError, FormatError, TrainingHalted
from .nets import NETWORKS, PHASE_GROUPS, build_ggan, build_supervised_biggan, build_unsupervised_biggan
from .spectro import FULL_SCALE, TOY_SCALE, Spectrogram, SpectroConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ggan-checkpoint/1"
BASELINE_FORMAT = "biggan-checkpoint/1"
# fields that may change between a checkpoint and its resumption
_RUN_FIELDS = ("total_iters", "checkpoint_every", "sample_every", "n_sample_per_class")


@dataclass
class TrainingConfig:
    k: int = 2
    batch_size: int = 64
    lr_disc: float = 2e-4
    lr_other: float = 5e-4
    equal_lr: bool = False
    alpha: float = 1e-4
    ch: int = 16
    n_classes: int = 10
    resolution: tuple = (256, 128)
    latent_dim: int = 128
    latent_dist: str = "uniform"
    use_df: bool = True
    beta1: float = 0.0
    beta2: float = 0.999
    total_iters: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    sample_every: int = 0
    n_sample_per_class: int = 4
    toy_preset: bool = False

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.lr_disc <= 0 or self.lr_other <= 0:
            raise ConfigError("learning rates must be positive")
        if self.latent_dist not in ("uniform", "normal"):
            raise ConfigError("latent_dist must be 'uniform' or 'normal'")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    @classmethod
    def toy(cls, **overrides):
        base = dict(ch=4, resolution=(64, 32), n_classes=4, batch_size=32,
                    total_iters=2000, toy_preset=True)
        base.update(overrides)
        return cls(**base)

    @property
    def lr_d(self):
        return self.lr_disc

    @property
    def lr_g(self):
        return self.lr_disc if self.equal_lr else self.lr_other

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self):
        d = {k: v for k, v in self.to_dict().items() if k not in _RUN_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def spectro_config_for(resolution):
    h, w = resolution
    if (h, w) == TOY_SCALE.shape[:2]:
        return TOY_SCALE
    if (h, w) == FULL_SCALE.shape[:2]:
        return FULL_SCALE
    return dataclasses.replace(FULL_SCALE, n_freq=h, n_frames=w)


def sample_latents(m, dim=128, generator=None, dist="uniform"):
    if dist == "uniform":
        return torch.rand(m, dim, generator=generator) * 2.0 - 1.0
    return torch.randn(m, dim, generator=generator)


def sample_conditions(m, n, generator=None):
    idx = torch.randint(0, n, (m,), generator=generator)
    return torch.nn.functional.one_hot(idx, n).float(), idx


def to_nchw(X):
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[..., None]
    return torch.from_numpy(np.ascontiguousarray(X.transpose(0, 3, 1, 2)))


def to_nhwc(x):
    return x.detach().cpu().numpy().transpose(0, 2, 3, 1)


@dataclass
class Batch:
    z: torch.Tensor          # (2m, latent) -- rows i and i+m share a condition
    c: torch.Tensor          # (m, n) one-hot
    c_idx: torch.Tensor      # (m,)
    x: torch.Tensor          # (2m, 1, H, W) real
    xl: torch.Tensor         # (m, 1, H, W) labelled
    yl: torch.Tensor         # (m,)
    index: dict = field(default_factory=dict)

    @property
    def c_pairs(self):
        return torch.cat([self.c, self.c])

    @property
    def c_idx_pairs(self):
        return torch.cat([self.c_idx, self.c_idx])


@contextlib.contextmanager
def frozen_buffers(modules):
    """Restore every buffer of ``modules`` on exit."""
    saved = [(b, b.detach().clone()) for m in modules for b in m.buffers()]
    try:
        yield
    finally:
        with torch.no_grad():
            for b, v in saved:
                b.copy_(v)


def _check_finite(phase, values):
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingHalted(f"non-finite loss in {phase} phase: {bad}")


def _adam(params, lr, cfg):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))


class GganTrainer:
    """Owns a :class:`GganModel`, its optimizers, RNG streams and run log.

    ``unlabelled`` is the (N, H, W, 1) pool; ``labelled``/``labels`` the
    guidance set, which may come from a different source.
    """

    def __init__(self, config, unlabelled, labelled, labels, run_dir=None, model=None,
                 spectro_config=None):
        self.config = config
        cfg = config
        self.unlabelled = to_nchw(unlabelled)
        self.labelled = to_nchw(labelled)
        self.labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        if len(self.unlabelled) == 0 or len(self.labelled) == 0:
            raise ConfigError("need non-empty unlabelled and labelled sets")
        if len(self.labels) != len(self.labelled):
            raise ConfigError("one label per labelled sample required")
        if int(self.labels.max()) >= cfg.n_classes or int(self.labels.min()) < 0:
            raise ConfigError(f"labels must lie in [0, {cfg.n_classes})")
        for X in (self.unlabelled, self.labelled):
            if tuple(X.shape[2:]) != cfg.resolution:
                raise ConfigError(f"data resolution {tuple(X.shape[2:])} != {cfg.resolution}")
        self.spectro_config = spectro_config or spectro_config_for(cfg.resolution)

        self.model = model if model is not None else build_ggan(
            cfg.ch, cfg.n_classes, cfg.resolution, cfg.latent_dim, seed=cfg.seed)
        # NHWC convolutions are markedly faster on CPU; values are unchanged
        self.model.to(memory_format=torch.channels_last)
        self.model.train()
        self.optimizers = {
            "d1": _adam(self.model.group_parameters("d1"), cfg.lr_d, cfg),
            "d2": _adam(self.model.group_parameters("d2"), cfg.lr_d, cfg),
            "df": _adam(self.model.group_parameters("df"), cfg.lr_d, cfg),
            "gen": _adam(self.model.group_parameters("gen"), cfg.lr_g, cfg),
            "feat": _adam(self.model.group_parameters("feat"), cfg.lr_g, cfg),
        }
        self.data_rng = np.random.default_rng([cfg.seed, 11])
        self.latent_gen = torch.Generator().manual_seed(cfg.seed + 1)
        self.iteration = 0
        self.sampling_events = 0
        self.history = []
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if self.run_dir is not None:
            self._init_run_dir()

    # -- run directory -------------------------------------------------

    def _init_run_dir(self):
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.run_dir / "samples").mkdir(exist_ok=True)
        with open(self.run_dir / "config.json", "w") as fh:
            json.dump({"training": self.config.to_dict(),
                       "spectro": self.spectro_config.to_dict(),
                       "config_hash": self.config.config_hash()}, fh, indent=2)

    def _log_record(self, record):
        if self.run_dir is None:
            return
        with open(self.run_dir / "metrics.jsonl", "a") as fh:
            fh.write(json.dumps(record) + "\n")

    # -- sampling ------------------------------------------------------

    def sample_batch(self):
        cfg = self.config
        m = cfg.batch_size
        self.sampling_events += 1
        z = sample_latents(2 * m, cfg.latent_dim, self.latent_gen, cfg.latent_dist)
        c, c_idx = sample_conditions(m, cfg.n_classes, self.latent_gen)
        n = len(self.unlabelled)
        xi = self.data_rng.choice(n, size=2 * m, replace=n < 2 * m)
        li = self.data_rng.integers(0, len(self.labelled), size=m)
        return Batch(z=z, c=c, c_idx=c_idx, x=self.unlabelled[xi], xl=self.labelled[li],
                     yl=self.labels[li], index={"x": xi, "xl": li})

    def _others(self, phases):
        keep = {n for p in phases for n in PHASE_GROUPS[p]}
        return [getattr(self.model, n) for n in NETWORKS if n not in keep]

    def _step(self, phase, loss):
        opt = self.optimizers[phase]
        params = self.model.group_parameters(phase)
        opt.zero_grad(set_to_none=True)
        loss.backward(inputs=params)
        return opt

    # -- phases --------------------------------------------------------

    def discriminator_losses(self, batch):
        # one latent per condition here; the paired half is only needed by MG
        mdl, cfg = self.model, self.config
        m = cfg.batch_size
        with torch.no_grad():
            z_e = mdl.encoder(batch.z[:m], batch.c)
            x_fake = mdl.generator(z_e)
        x = batch.x[:m]
        d_all = mdl.d_feature(torch.cat([x, x_fake, batch.xl]))
        d_x, d_fake, d_xl = d_all[:m], d_all[m : 2 * m], d_all[2 * m :]
        cl = L.cross_entropy(mdl.classifier_x(mdl.feature_extractor(d_xl)), batch.yl)
        s1 = mdl.d_head(torch.cat([d_x, d_fake]))
        d1 = L.disc_hinge(s1[:m], s1[m:]) + cl
        s2 = mdl.d2(torch.cat([x, x_fake]))
        d2 = L.disc_hinge(s2[:m], s2[m:])
        out = {"d1": d1, "d2": d2, "cl_d": cl}
        if cfg.use_df:
            with torch.no_grad():
                f_x = mdl.feature_extractor(d_x)
            sf = mdl.d_f(torch.cat([z_e, f_x]), torch.cat([x_fake, x]))
            out["df"] = L.disc_hinge(sf[:m], sf[m:])
        return out

    def discriminator_phase(self, batch):
        phases = ("d1", "d2", "df") if self.config.use_df else ("d1", "d2")
        with frozen_buffers(self._others(phases)):
            out = self.discriminator_losses(batch)
            values = {k: v.item() for k, v in out.items()}
            _check_finite("discriminator", values)
            opts = [self._step(p, out[p]) for p in phases]
        for opt in opts:
            opt.step()
        return values

    def generator_losses(self, batch):
        mdl, cfg = self.model, self.config
        m = cfg.batch_size
        z_e = mdl.encoder(batch.z, batch.c_pairs)
        x_fake = mdl.generator(z_e)
        d_all = mdl.d_feature(torch.cat([x_fake, batch.x]))
        d_fake, d_x = d_all[: 2 * m], d_all[2 * m :]
        ec = L.cross_entropy(mdl.classifier_e(z_e), batch.c_idx_pairs)
        g1 = L.gen_hinge(mdl.d_head(d_fake))
        g2 = L.gen_hinge(mdl.d2(x_fake))
        gc = L.cross_entropy(mdl.classifier_x(mdl.feature_extractor(d_fake)), batch.c_idx_pairs)
        mg = L.mode_divergence(d_x[:m], d_x[m:], d_fake[:m], d_fake[m:], cfg.alpha)
        ecg = L.ecg_loss(g1, g2, mg, ec, gc)
        return {"ec": ec, "g1": g1, "g2": g2, "gc": gc, "mg": mg, "ecg": ecg}

    def generator_phase(self, batch):
        with frozen_buffers(self._others(("gen",))):
            out = self.generator_losses(batch)
            values = {k: v.item() for k, v in out.items()}
            _check_finite("generator", values)
            opt = self._step("gen", out["ecg"])
        opt.step()
        return values

    def feature_losses(self, batch):
        mdl, cfg = self.model, self.config
        m = cfg.batch_size
        x = batch.x[:m]
        with torch.no_grad():
            x_fake = mdl.generator(mdl.encoder(batch.z[:m], batch.c))
            d_all = mdl.d_feature(torch.cat([x, x_fake, batch.xl]))
        d_x, d_fake, d_xl = d_all[:m], d_all[m : 2 * m], d_all[2 * m :]
        fe, cx = mdl.feature_extractor, mdl.classifier_x
        cl = L.cross_entropy(cx(fe(d_xl)), batch.yl)
        cg = L.cross_entropy(cx(fe(d_fake)), batch.c_idx)
        if cfg.use_df:
            fg = L.gen_hinge(mdl.d_f(fe(d_x), x))
        else:
            fg = torch.zeros(())
        return {"cl": cl, "cg": cg, "fg": fg, "fc": L.fc_loss(cl, cg, fg)}

    def feature_phase(self, batch):
        with frozen_buffers(self._others(("feat",))):
            out = self.feature_losses(batch)
            values = {k: v.item() for k, v in out.items()}
            _check_finite("feature", values)
            opt = self._step("feat", out["fc"])
        opt.step()
        return values

    # -- schedule ------------------------------------------------------

    def train_iteration(self):
        cfg = self.config
        t0 = time.perf_counter()
        d_vals = [self.discriminator_phase(self.sample_batch()) for _ in range(cfg.k)]
        g_vals = self.generator_phase(self.sample_batch())
        f_vals = self.feature_phase(self.sample_batch())
        bundle = L.LossBundle()
        for key in ("d1", "d2", "df"):
            if key in d_vals[0]:
                bundle.update(**{key: float(np.mean([v[key] for v in d_vals]))})
        if not cfg.use_df:
            bundle.df = 0.0
        bundle.update(**g_vals, **f_vals)
        self.iteration += 1
        record = {"iter": self.iteration, **bundle.as_dict(),
                  "wall_time": time.perf_counter() - t0}
        self.history.append(record)
        self._log_record(record)
        return bundle

    def train(self, n_iters=None):
        """Run until ``total_iters`` (or ``n_iters`` more iterations)."""
        cfg = self.config
        stop = cfg.total_iters if n_iters is None else self.iteration + n_iters
        while self.iteration < stop:
            try:
                self.train_iteration()
            except TrainingHalted as exc:
                path = None
                if self.run_dir is not None:
                    path = self.run_dir / "checkpoints" / "halted.pt"
                    self.save_checkpoint(path)
                log.error("halted at iteration %d: %s", self.iteration, exc)
                raise TrainingHalted(str(exc), snapshot_path=path,
                                     iteration=self.iteration) from exc
            if self.run_dir is not None:
                if cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0:
                    self.save_checkpoint(self.checkpoint_path(self.iteration))
                if cfg.sample_every and self.iteration % cfg.sample_every == 0:
                    self.write_samples()
        return self.history

    def checkpoint_path(self, iteration):
        return self.run_dir / "checkpoints" / f"iter_{iteration:07d}.pt"

    @torch.no_grad()
    def sample(self, conditions, seed=0):
        """Generate one spectrogram per condition index in eval mode."""
        mdl = self.model
        was_training = mdl.training
        mdl.eval()
        try:
            gen = torch.Generator().manual_seed(seed)
            idx = torch.as_tensor(conditions, dtype=torch.long)
            z = sample_latents(len(idx), self.config.latent_dim, gen, self.config.latent_dist)
            c = torch.nn.functional.one_hot(idx, self.config.n_classes).float()
            return to_nhwc(mdl.generate(z, c))
        finally:
            mdl.train(was_training)

    def write_samples(self, out_dir=None):
        n = self.config.n_sample_per_class
        conds = np.repeat(np.arange(self.config.n_classes), n)
        grid = self.sample(conds, seed=self.iteration)
        out = Path(out_dir) if out_dir else self.run_dir / "samples" / f"iter_{self.iteration:07d}"
        out.mkdir(parents=True, exist_ok=True)
        for j, (cond, values) in enumerate(zip(conds, grid)):
            spec = Spectrogram(np.clip(values, -1, 1), self.spectro_config)
            write_spectrogram(out / f"c{cond}_{j % n:02d}.ggsp", spec)
        return out

    # -- checkpointing -------------------------------------------------

    def state_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "model": self.model.state_dict(),
            "optimizers": {k: o.state_dict() for k, o in self.optimizers.items()},
            "data_rng": self.data_rng.bit_generator.state,
            "latent_rng": self.latent_gen.get_state(),
            "iteration": self.iteration,
            "sampling_events": self.sampling_events,
            "history": list(self.history),
        }

    def load_state_dict(self, state):
        if state.get("format") != CHECKPOINT_FORMAT:
            raise FormatError("not a guided-GAN checkpoint")
        if state["config_hash"] != self.config.config_hash():
            raise ConfigError(
                f"checkpoint config hash {state['config_hash']} does not match "
                f"{self.config.config_hash()}; refusing to load")
        self.model.load_state_dict(state["model"])
        for k, opt in self.optimizers.items():
            opt.load_state_dict(state["optimizers"][k])
        self.data_rng.bit_generator.state = state["data_rng"]
        self.latent_gen.set_state(state["latent_rng"])
        self.iteration = state["iteration"]
        self.sampling_events = state["sampling_events"]
        self.history = list(state["history"])

    def save_checkpoint(self, path):
        save_checkpoint(self.state_dict(), path)

    def load_checkpoint(self, path):
        self.load_state_dict(load_checkpoint(path))


def save_checkpoint(state, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, expected=CHECKPOINT_FORMAT):
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # truncated zip, bad pickle, ...
        raise FormatError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or state.get("format") != expected:
        raise FormatError(f"{path} is not a {expected} file")
    return state


def model_from_checkpoint(path):
    """Rebuild a :class:`GganModel` (eval mode) and its config from a checkpoint."""
    state = load_checkpoint(path)
    cfg = TrainingConfig.from_dict(state["config"])
    model = build_ggan(cfg.ch, cfg.n_classes, cfg.resolution, cfg.latent_dim)
    model.to(memory_format=torch.channels_last)
    model.load_state_dict(state["model"])
    model.eval()
    return model, cfg


class BigGANTrainer:
    """Hinge-loss trainer for the supervised / unsupervised BigGAN baselines."""

    def __init__(self, config, X, y=None, conditional=False, lr_g=5e-5, lr_d=2e-4):
        cfg = config
        self.config = cfg
        self.conditional = conditional
        self.X = to_nchw(X)
        self.y = None if y is None else torch.as_tensor(np.asarray(y), dtype=torch.long)
        if conditional and self.y is None:
            raise ConfigError("supervised baseline needs labels")
        if conditional:
            self.G, self.D = build_supervised_biggan(cfg.ch, cfg.n_classes, cfg.resolution,
                                                     cfg.latent_dim, seed=cfg.seed)
        else:
            self.G, self.D = build_unsupervised_biggan(cfg.ch, cfg.resolution, cfg.latent_dim,
                                                       seed=cfg.seed)
        for net in (self.G, self.D):
            net.to(memory_format=torch.channels_last)
        self.opt_g = _adam(self.G.parameters(), lr_g, cfg)
        self.opt_d = _adam(self.D.parameters(), lr_d, cfg)
        self.rng = np.random.default_rng([cfg.seed, 13])
        self.latent_gen = torch.Generator().manual_seed(cfg.seed + 1)
        self.iteration = 0
        self.history = []

    def _labels(self, m):
        if not self.conditional:
            return None
        return torch.randint(0, self.config.n_classes, (m,), generator=self.latent_gen)

    def _d(self, x, y):
        return self.D(x, y) if self.conditional else self.D(x)

    def train_iteration(self):
        cfg = self.config
        m = cfg.batch_size
        for _ in range(cfg.k):
            idx = self.rng.choice(len(self.X), size=m, replace=len(self.X) < m)
            x = self.X[idx]
            yr = self.y[idx] if self.conditional else None
            yf = self._labels(m)
            z = sample_latents(m, cfg.latent_dim, self.latent_gen, cfg.latent_dist)
            with torch.no_grad(), frozen_buffers([self.G]):
                fake = self.G(z, yf) if self.conditional else self.G(z)
            y_all = torch.cat([yr, yf]) if self.conditional else None
            s = self._d(torch.cat([x, fake]), y_all)
            d_loss = L.disc_hinge(s[:m], s[m:])
            self.opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            self.opt_d.step()
        z = sample_latents(m, cfg.latent_dim, self.latent_gen, cfg.latent_dist)
        yf = self._labels(m)
        with frozen_buffers([self.D]):
            fake = self.G(z, yf) if self.conditional else self.G(z)
            g_loss = L.gen_hinge(self._d(fake, yf))
        self.opt_g.zero_grad(set_to_none=True)
        g_loss.backward(inputs=list(self.G.parameters()))
        self.opt_g.step()
        self.iteration += 1
        rec = {"iter": self.iteration, "d": d_loss.item(), "g": g_loss.item()}
        _check_finite("baseline", {"d": rec["d"], "g": rec["g"]})
        self.history.append(rec)
        return rec

    def train(self, n_iters=None):
        stop = self.config.total_iters if n_iters is None else self.iteration + n_iters
        while self.iteration < stop:
            self.train_iteration()
        return self.history

    def save_checkpoint(self, path):
        save_checkpoint({"format": BASELINE_FORMAT, "config": self.config.to_dict(),
                         "conditional": self.conditional, "G": self.G.state_dict(),
                         "D": self.D.state_dict(), "iteration": self.iteration}, path)
