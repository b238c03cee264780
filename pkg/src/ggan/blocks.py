"""Building blocks: spectral normalization, (conditional) batch norm,
residual up/down blocks, non-local attention and the projection head.

All modules use NCHW tensors internally.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeError

BN_MOMENTUM = 0.1  # torch convention; running = 0.9 * running + 0.1 * batch
BN_EPS = 1e-5
SN_EPS = 1e-12


def upscale(x):
    return F.interpolate(x, scale_factor=2, mode="nearest")


def downscale(x):
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ShapeError(f"cannot downscale odd spatial shape {tuple(x.shape[-2:])}")
    return F.avg_pool2d(x, 2)


def spectral_normalize(weight, u, n_power_iterations=1, eps=SN_EPS):
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``weight`` is viewed as a matrix of shape (out, -1). Returns the
    normalized weight, the updated left singular vector estimate and the
    estimate sigma. The vectors are computed without gradient; sigma keeps
    its dependence on ``weight``, which gives the exact gradient of
    ``||W^T u||`` for fixed ``u``.
    """
    mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        for _ in range(n_power_iterations):
            v = F.normalize(mat.t() @ u, dim=0, eps=eps)
            u = F.normalize(mat @ v, dim=0, eps=eps)
        v = F.normalize(mat.t() @ u, dim=0, eps=eps)
    sigma = torch.dot(u, mat @ v)
    return weight / sigma.clamp_min(eps), u, sigma


class _SpectralNormMixin:
    """Adds a persistent power-iteration vector ``u`` to a weight layer.

    One power iteration runs per forward pass in training mode; in eval mode
    the stored vector is used as is.
    """

    def _init_sn(self, use_sn):
        self.use_sn = use_sn
        if use_sn:
            u = torch.randn(self.weight.shape[0])
            self.register_buffer("u", F.normalize(u, dim=0))

    def sn_weight(self):
        if not self.use_sn:
            return self.weight
        n_iter = 1 if self.training else 0
        w, u, _ = spectral_normalize(self.weight, self.u, n_iter)
        if self.training:
            self.u.copy_(u)
        return w


class SNLinear(nn.Linear, _SpectralNormMixin):
    def __init__(self, in_features, out_features, bias=True, use_sn=True):
        super().__init__(in_features, out_features, bias=bias)
        self._init_sn(use_sn)

    def forward(self, x):
        return F.linear(x, self.sn_weight(), self.bias)


class SNConv2d(nn.Conv2d, _SpectralNormMixin):
    def __init__(self, in_channels, out_channels, kernel_size, padding=0, bias=True, use_sn=True):
        super().__init__(in_channels, out_channels, kernel_size, padding=padding, bias=bias)
        self._init_sn(use_sn)

    def forward(self, x):
        return self._conv_forward(x, self.sn_weight(), self.bias)


def conv3x3(ci, co, use_sn=True):
    return SNConv2d(ci, co, 3, padding=1, use_sn=use_sn)


def conv1x1(ci, co, use_sn=True):
    return SNConv2d(ci, co, 1, padding=0, use_sn=use_sn)


def batch_norm(c):
    return nn.BatchNorm2d(c, eps=BN_EPS, momentum=BN_MOMENTUM)


class ConditionalBatchNorm2d(nn.Module):
    """Batch norm whose gain and bias are projected from a class embedding.

    The embedding table is owned by the caller (shared across blocks); each
    block owns its own gain/bias projection. Gain is ``1 + proj(e)`` so a
    zero-initialized projection starts as plain batch norm.
    """

    def __init__(self, num_features, embed_dim):
        super().__init__()
        self.num_features = num_features
        self.bn = nn.BatchNorm2d(num_features, eps=BN_EPS, momentum=BN_MOMENTUM, affine=False)
        self.gain = nn.Linear(embed_dim, num_features)
        self.bias = nn.Linear(embed_dim, num_features)
        for lin in (self.gain, self.bias):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, x, emb):
        out = self.bn(x)
        g = 1.0 + self.gain(emb)
        b = self.bias(emb)
        return out * g[:, :, None, None] + b[:, :, None, None]


def check_labels(labels, n_classes):
    labels = torch.as_tensor(labels)
    if labels.dtype not in (torch.int64, torch.int32, torch.int16, torch.uint8):
        raise IndexError("class labels must be integers")
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n_classes):
        raise IndexError(f"class label out of range [0, {n_classes})")
    return labels.long()


def conditional_batch_norm(x, labels, embedding, cbn):
    labels = check_labels(labels, embedding.num_embeddings)
    return cbn(x, embedding(labels))


class ResBlockUp(nn.Module):
    """Upsampling residual block.

    main: (c)BN -> ReLU -> U -> conv3x3 -> (c)BN -> ReLU -> conv3x3
    shortcut: U -> conv1x1
    """

    def __init__(self, ci, co, embed_dim=None, use_sn=True):
        super().__init__()
        self.conditional = embed_dim is not None
        if self.conditional:
            self.bn1 = ConditionalBatchNorm2d(ci, embed_dim)
            self.bn2 = ConditionalBatchNorm2d(co, embed_dim)
        else:
            self.bn1 = batch_norm(ci)
            self.bn2 = batch_norm(co)
        self.conv1 = conv3x3(ci, co, use_sn)
        self.conv2 = conv3x3(co, co, use_sn)
        self.shortcut = conv1x1(ci, co, use_sn)

    def _bn(self, bn, x, emb):
        return bn(x, emb) if self.conditional else bn(x)

    def forward(self, x, emb=None):
        if self.conditional and emb is None:
            raise ConfigError("conditional block needs a class embedding")
        if not self.conditional and emb is not None:
            raise ConfigError("unconditional block got a class embedding")
        h = F.relu(self._bn(self.bn1, x, emb))
        h = self.conv1(upscale(h))
        h = F.relu(self._bn(self.bn2, h, emb))
        h = self.conv2(h)
        return h + self.shortcut(upscale(x))


class ResBlockDown(nn.Module):
    """Downsampling residual block.

    main: ReLU -> conv3x3 -> ReLU -> conv3x3 -> D
    shortcut: conv1x1 -> D, or the identity when ``shortcut=False``
    (requires ci == co).
    """

    def __init__(self, ci, co, downsample=True, shortcut=True, use_sn=True):
        super().__init__()
        if not shortcut and ci != co:
            raise ConfigError("identity skip needs ci == co")
        self.downsample = downsample
        self.conv1 = conv3x3(ci, co, use_sn)
        self.conv2 = conv3x3(co, co, use_sn)
        self.shortcut = conv1x1(ci, co, use_sn) if shortcut else None

    def forward(self, x):
        if self.downsample and (x.shape[-2] % 2 or x.shape[-1] % 2):
            raise ShapeError(f"cannot downscale odd spatial shape {tuple(x.shape[-2:])}")
        h = self.conv2(F.relu(self.conv1(F.relu(x))))
        s = x if self.shortcut is None else self.shortcut(x)
        if self.downsample:
            h, s = downscale(h), downscale(s)
        return h + s


class NonLocalBlock(nn.Module):
    """Single-head dot-product self-attention over spatial positions.

    Keys and values are 2x2 max-pooled when both spatial dims are even, so
    each query attends over HW/4 positions. Output is
    ``x + gamma * attention(x)`` with ``gamma`` starting at 0.
    """

    def __init__(self, c, use_sn=True, pool_keys=True):
        super().__init__()
        if c >= 8 and c % 8:
            raise ShapeError("channel count must be divisible by 8")
        ck, cv = max(1, c // 8), max(1, c // 2)
        self.pool_keys = pool_keys
        self.theta = conv1x1(c, ck, use_sn)
        self.phi = conv1x1(c, ck, use_sn)
        self.g = conv1x1(c, cv, use_sn)
        self.out = conv1x1(cv, c, use_sn)
        self.gamma = nn.Parameter(torch.zeros(()))

    def _pool(self, t):
        if self.pool_keys and t.shape[-2] % 2 == 0 and t.shape[-1] % 2 == 0:
            return F.max_pool2d(t, 2)
        return t

    def attention_map(self, x):
        """Row-stochastic (N, HW, HW') matrix; row i holds query i's weights."""
        q = self.theta(x).flatten(2)
        k = self._pool(self.phi(x)).flatten(2)
        return torch.softmax(q.transpose(1, 2) @ k, dim=-1)

    def forward(self, x):
        n, c, h, w = x.shape
        beta = self.attention_map(x)
        v = self._pool(self.g(x)).flatten(2)
        o = (v @ beta.transpose(1, 2)).view(n, -1, h, w)
        return x + self.gamma * self.out(o)


class ProjectionHead(nn.Module):
    """score = dense(h) + <embed(y), h>."""

    def __init__(self, in_features, n_classes, use_sn=True):
        super().__init__()
        self.n_classes = n_classes
        self.dense = SNLinear(in_features, 1, use_sn=use_sn)
        self.embed = nn.Embedding(n_classes, in_features)

    def forward(self, h, y):
        y = check_labels(y, self.n_classes)
        return self.dense(h).squeeze(1) + (self.embed(y) * h).sum(dim=1)


def global_sum_pool(x):
    return x.sum(dim=(2, 3))
