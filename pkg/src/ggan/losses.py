"""Guided-GAN objectives, all written as quantities to minimize.

Discriminator objectives use the standard hinge form
``max(0, 1 - real) + max(0, 1 + fake)``, which is the algebraic identity
``-min(0, -1 + real) - min(0, -1 - fake)``.
"""
import math
from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F

from .exceptions import ShapeError

LOG_EPS = math.log(1e-12)
LOSS_NAMES = ("ec", "g1", "g2", "gc", "mg", "ecg", "fg", "cl", "cg", "fc", "d1", "d2", "df")


@dataclass
class LossBundle:
    ec: float = float("nan")
    g1: float = float("nan")
    g2: float = float("nan")
    gc: float = float("nan")
    mg: float = float("nan")
    ecg: float = float("nan")
    fg: float = float("nan")
    cl: float = float("nan")
    cg: float = float("nan")
    fc: float = float("nan")
    d1: float = float("nan")
    d2: float = float("nan")
    df: float = float("nan")

    def update(self, **values):
        for k, v in values.items():
            setattr(self, k, float(v))
        return self

    def as_dict(self):
        return asdict(self)


def _as_onehot(target, n_classes, dtype):
    if target.dim() == 1:
        return F.one_hot(target.long(), n_classes).to(dtype)
    return target.to(dtype)


def cross_entropy(logits, target):
    """Mean of ``-sum(onehot * log softmax(logits))``; target may be indices."""
    logits = torch.as_tensor(logits)
    target = torch.as_tensor(target)
    if logits.dim() == 1:
        logits, target = logits[None], target[None]
    onehot = _as_onehot(target, logits.shape[1], logits.dtype)
    if onehot.shape != logits.shape:
        raise ShapeError("logits and targets disagree in shape")
    logp = F.log_softmax(logits, dim=1).clamp_min(LOG_EPS)
    return -(onehot * logp).sum(dim=1).mean()


def gen_hinge(score):
    return -torch.as_tensor(score).mean()


def disc_hinge(real_score, fake_score):
    return F.relu(1.0 - real_score).mean() + F.relu(1.0 + fake_score).mean()


def mode_divergence(d_x1, d_x2, d_xh1, d_xh2, alpha=1e-4):
    """Ratio of real to generated feature spread, clamped below at 1.

    Inputs are (m, d) feature batches (or single d-vectors); the ratio is
    formed per pair and averaged over pairs.
    """
    feats = [torch.as_tensor(t) for t in (d_x1, d_x2, d_xh1, d_xh2)]
    if len({tuple(t.shape) for t in feats}) != 1:
        raise ShapeError("mode divergence needs four equally shaped feature batches")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a, b, ah, bh = (t if t.dim() > 1 else t[None] for t in feats)
    real = (a - b).abs().sum(dim=1)
    fake = (ah - bh).abs().sum(dim=1)
    return torch.clamp(real / (fake + alpha), min=1.0).mean()


def ecg_loss(g1, g2, mg, ec, gc):
    return (g1 + g2 + mg) / 3.0 + ec + gc


def fc_loss(cl, cg, fg):
    return cl + cg + fg
