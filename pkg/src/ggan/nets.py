"""Network assemblies for the guided GAN and the two BigGAN baselines.

Each assembly's ``forward`` accepts an optional ``trace`` list; when given,
one ``(row_label, shape)`` entry is appended per architecture row, with
feature-map shapes reported as (h, w, c) and vectors as (d,).
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    NonLocalBlock,
    ProjectionHead,
    ResBlockDown,
    ResBlockUp,
    SNConv2d,
    SNLinear,
    batch_norm,
    check_labels,
    global_sum_pool,
)
from .exceptions import ConfigError, ShapeError

LATENT_DIM = 128
EMBED_DIM = 128
BASE_HW = (4, 2)
# trunk channel multipliers after each downsampling block at full scale
_FULL_TRUNK = (1, 1, 2, 4, 8, 16)


def _row_shape(t):
    if t.dim() == 4:
        return (t.shape[2], t.shape[3], t.shape[1])
    if t.dim() == 2:
        return (t.shape[1],)
    return (1,)


def _record(trace, label, t):
    if trace is not None:
        trace.append((label, _row_shape(t)))
    return t


def n_resamples(resolution):
    h, w = resolution
    if h != 2 * w or h < 16 or h & (h - 1):
        raise ConfigError(f"resolution {resolution} must be (2^k, 2^(k-1)) with h >= 16")
    return int(math.log2(h // BASE_HW[0]))


def trunk_multipliers(resolution):
    n = n_resamples(resolution)
    if n >= len(_FULL_TRUNK):
        return _FULL_TRUNK[:1] + (_FULL_TRUNK[1],) * (n - len(_FULL_TRUNK)) + _FULL_TRUNK[1:]
    return _FULL_TRUNK[:1] + _FULL_TRUNK[len(_FULL_TRUNK) - n + 1 :]


def check_onehot(c, n_classes):
    if c.dim() != 2 or c.shape[1] != n_classes:
        raise ShapeError(f"condition must have shape (m, {n_classes})")
    ok = ((c == 0) | (c == 1)).all() and (c.sum(dim=1) == 1).all()
    if not bool(ok):
        raise ValueError("condition rows must be one-hot")
    return c


def _check_sample(x, resolution):
    if x.dim() != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != tuple(resolution):
        raise ShapeError(f"expected (m, 1, {resolution[0]}, {resolution[1]}), got {tuple(x.shape)}")


def _check_vec(v, dim):
    if v.dim() != 2 or v.shape[1] != dim:
        raise ShapeError(f"expected (m, {dim}), got {tuple(v.shape)}")


class MLP(nn.Module):
    """Dense -> ReLU -> Dense -> ReLU -> Dense."""

    def __init__(self, d_in, d_hidden, d_out, use_sn=False, input_label="Input"):
        super().__init__()
        self.d_in = d_in
        self.input_label = input_label
        self.l1 = SNLinear(d_in, d_hidden, use_sn=use_sn)
        self.l2 = SNLinear(d_hidden, d_hidden, use_sn=use_sn)
        self.l3 = SNLinear(d_hidden, d_out, use_sn=use_sn)

    def forward(self, v, trace=None):
        _check_vec(v, self.d_in)
        _record(trace, self.input_label, v)
        h = _record(trace, "Dense", self.l1(v))
        h = _record(trace, "ReLU", F.relu(h))
        h = _record(trace, "Dense", self.l2(h))
        h = _record(trace, "ReLU", F.relu(h))
        return _record(trace, "Dense", self.l3(h))


class Encoder(MLP):
    def __init__(self, latent_dim=LATENT_DIM, n_classes=10):
        super().__init__(latent_dim + n_classes, latent_dim, latent_dim, input_label="Input z, Input c")
        self.latent_dim = latent_dim
        self.n_classes = n_classes

    def forward(self, z, c, trace=None):
        _check_vec(z, self.latent_dim)
        check_onehot(c, self.n_classes)
        return super().forward(torch.cat([z, c.to(z.dtype)], dim=1), trace)


class Classifier(MLP):
    def __init__(self, latent_dim=LATENT_DIM, n_classes=10):
        super().__init__(latent_dim, latent_dim, n_classes)


class FeatureExtractor(MLP):
    def __init__(self, feature_dim, latent_dim=LATENT_DIM):
        super().__init__(feature_dim, feature_dim, latent_dim, input_label="Input Feature")


class DiscriminatorHead(MLP):
    """D' of the first discriminator: feature vector -> score."""

    def __init__(self, feature_dim, hidden=128):
        super().__init__(feature_dim, hidden, 1, use_sn=True, input_label="Input z")

    def forward(self, v, trace=None):
        return super().forward(v, trace).squeeze(1)


class Generator(nn.Module):
    """Dense seed at 4x2 followed by upsampling residual blocks.

    With ``n_classes`` set, every block uses class-conditional batch norm
    fed from one shared embedding table (supervised baseline).
    """

    def __init__(self, ch=16, resolution=(256, 128), latent_dim=LATENT_DIM, n_classes=None,
                 embed_dim=EMBED_DIM):
        super().__init__()
        self.ch = ch
        self.resolution = tuple(resolution)
        self.latent_dim = latent_dim
        self.n_classes = n_classes
        n_up = n_resamples(self.resolution)
        width = 16 * ch
        emb = embed_dim if n_classes else None
        self.embedding = nn.Embedding(n_classes, embed_dim) if n_classes else None
        self.dense = SNLinear(latent_dim, width * BASE_HW[0] * BASE_HW[1])
        self.blocks = nn.ModuleList(ResBlockUp(width, width, emb) for _ in range(n_up - 1))
        self.attention = NonLocalBlock(width)
        self.last_block = ResBlockUp(width, ch, emb)
        self.bn = batch_norm(ch)
        self.conv = SNConv2d(ch, 1, 3, padding=1)

    def forward(self, z, y=None, trace=None):
        _check_vec(z, self.latent_dim)
        emb = None
        if self.n_classes:
            if y is None:
                raise ConfigError("conditional generator needs labels")
            emb = self.embedding(check_labels(y, self.n_classes))
        elif y is not None:
            raise ConfigError("unconditional generator got labels")
        _record(trace, "Input z", z)
        h = self.dense(z).view(z.shape[0], 16 * self.ch, *BASE_HW)
        _record(trace, "Dense", h)
        for block in self.blocks:
            h = _record(trace, "ResBlock", block(h, emb))
        h = _record(trace, "Non-local block", self.attention(h))
        h = _record(trace, "ResBlock", self.last_block(h, emb))
        h = _record(trace, "BN, ReLU", F.relu(self.bn(h)))
        h = _record(trace, "Conv [3, 3, 1]", self.conv(h))
        return _record(trace, "Tanh", torch.tanh(h))


class DiscriminatorTrunk(nn.Module):
    """Residual downsampling trunk ending in global sum pooling (16*ch)."""

    def __init__(self, ch=16, resolution=(256, 128), use_sn=True):
        super().__init__()
        self.ch = ch
        self.resolution = tuple(resolution)
        mults = trunk_multipliers(self.resolution)
        self.first = ResBlockDown(1, mults[0] * ch, use_sn=use_sn)
        self.attention = NonLocalBlock(mults[0] * ch, use_sn=use_sn)
        self.blocks = nn.ModuleList(
            ResBlockDown(a * ch, b * ch, use_sn=use_sn) for a, b in zip(mults[:-1], mults[1:])
        )
        self.final = ResBlockDown(16 * ch, 16 * ch, downsample=False, shortcut=False,
                                  use_sn=use_sn)
        self.out_dim = 16 * ch

    def forward(self, x, trace=None):
        _check_sample(x, self.resolution)
        _record(trace, "Input Spectrogram", x)
        h = _record(trace, "ResBlock", self.first(x))
        h = _record(trace, "Non-local block", self.attention(h))
        for block in self.blocks:
            h = _record(trace, "ResBlock", block(h))
        h = _record(trace, "ResBlock (No Shortcut)", self.final(h))
        h = _record(trace, "ReLU", F.relu(h))
        pooled = global_sum_pool(h)
        _record(trace, "Global sum pooling", pooled[:, :, None, None])
        return pooled


class FeatureDiscriminator(nn.Module):
    """D of the first discriminator: spectrogram -> flattened pooled feature."""

    def __init__(self, ch=16, resolution=(256, 128)):
        super().__init__()
        self.trunk = DiscriminatorTrunk(ch, resolution)
        self.out_dim = self.trunk.out_dim

    def forward(self, x, trace=None):
        return _record(trace, "Flatten", self.trunk(x, trace))


class UnconditionalDiscriminator(nn.Module):
    """Trunk + dense score (unsupervised baseline and second discriminator)."""

    def __init__(self, ch=16, resolution=(256, 128)):
        super().__init__()
        self.trunk = DiscriminatorTrunk(ch, resolution)
        self.dense = SNLinear(self.trunk.out_dim, 1)

    def forward(self, x, trace=None):
        return _record(trace, "Dense", self.dense(self.trunk(x, trace))).squeeze(1)


class ProjectionDiscriminator(nn.Module):
    """Trunk + class projection head (supervised baseline)."""

    def __init__(self, ch=16, resolution=(256, 128), n_classes=10):
        super().__init__()
        self.trunk = DiscriminatorTrunk(ch, resolution)
        self.head = ProjectionHead(self.trunk.out_dim, n_classes)

    def forward(self, x, y, trace=None):
        s = self.head(self.trunk(x, trace), y)
        _record(trace, "Sum(embed(y)·h)+(dense → 1)", s[:, None])
        return s


class PairDiscriminator(nn.Module):
    """Scores a (latent-space feature, spectrogram) pair.

    The spectrogram goes through a private trunk; its pooled output is
    concatenated with the feature and scored by a small dense stack.
    """

    def __init__(self, ch=16, resolution=(256, 128), latent_dim=LATENT_DIM, hidden=128):
        super().__init__()
        self.latent_dim = latent_dim
        self.trunk = DiscriminatorTrunk(ch, resolution)
        self.concat_dim = self.trunk.out_dim + latent_dim
        self.l1 = SNLinear(self.concat_dim, hidden)
        self.l2 = SNLinear(hidden, 1)

    def forward(self, feature, x, trace=None):
        _check_vec(feature, self.latent_dim)
        if feature.shape[0] != x.shape[0]:
            raise ShapeError("feature and sample batch sizes differ")
        h = torch.cat([self.trunk(x, trace), feature], dim=1)
        _record(trace, "Concat with input feature", h)
        h = _record(trace, "Dense", self.l1(h))
        h = _record(trace, "ReLU", F.relu(h))
        return _record(trace, "Dense", self.l2(h)).squeeze(1)


# parameter groups updated together by one optimizer
PHASE_GROUPS = {
    "d1": ("d_feature", "d_head"),
    "d2": ("d2",),
    "df": ("d_f",),
    "gen": ("encoder", "classifier_e", "generator"),
    "feat": ("feature_extractor", "classifier_x"),
}
NETWORKS = tuple(n for group in PHASE_GROUPS.values() for n in group)


class GganModel(nn.Module):
    """Container for the nine parameter sets of the guided GAN."""

    def __init__(self, ch=16, n_classes=10, resolution=(256, 128), latent_dim=LATENT_DIM):
        super().__init__()
        self.ch = ch
        self.n_classes = n_classes
        self.resolution = tuple(resolution)
        self.latent_dim = latent_dim
        self.encoder = Encoder(latent_dim, n_classes)
        self.classifier_e = Classifier(latent_dim, n_classes)
        self.generator = Generator(ch, resolution, latent_dim)
        self.d_feature = FeatureDiscriminator(ch, resolution)
        self.d_head = DiscriminatorHead(self.d_feature.out_dim)
        self.d2 = UnconditionalDiscriminator(ch, resolution)
        self.feature_extractor = FeatureExtractor(self.d_feature.out_dim, latent_dim)
        self.classifier_x = Classifier(latent_dim, n_classes)
        self.d_f = PairDiscriminator(ch, resolution, latent_dim)

    def group(self, phase):
        return [getattr(self, n) for n in PHASE_GROUPS[phase]]

    def group_parameters(self, phase):
        return [p for net in self.group(phase) for p in net.parameters()]

    def encode(self, z, c):
        return self.encoder(z, c)

    def generate(self, z, c):
        return self.generator(self.encoder(z, c))

    def represent(self, x):
        """Learned representation F(D(x))."""
        return self.feature_extractor(self.d_feature(x))

    def classify(self, x):
        """Logits of C_x(F(D(x)))."""
        return self.classifier_x(self.represent(x))


def build_ggan(ch=16, n_classes=10, resolution=(256, 128), latent_dim=LATENT_DIM, seed=None):
    if ch < 1 or n_classes < 2:
        raise ConfigError("ch must be >= 1 and n_classes >= 2")
    if seed is not None:
        torch.manual_seed(seed)
    return GganModel(ch, n_classes, resolution, latent_dim)


def build_supervised_biggan(ch=16, n_classes=10, resolution=(256, 128), latent_dim=LATENT_DIM,
                            seed=None):
    if seed is not None:
        torch.manual_seed(seed)
    return (Generator(ch, resolution, latent_dim, n_classes=n_classes),
            ProjectionDiscriminator(ch, resolution, n_classes))


def build_unsupervised_biggan(ch=16, resolution=(256, 128), latent_dim=LATENT_DIM, seed=None):
    if seed is not None:
        torch.manual_seed(seed)
    return Generator(ch, resolution, latent_dim), UnconditionalDiscriminator(ch, resolution)
