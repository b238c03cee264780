import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, strategies as st

from ggan.blocks import (
    ConditionalBatchNorm2d,
    NonLocalBlock,
    ProjectionHead,
    ResBlockDown,
    ResBlockUp,
    SNConv2d,
    SNLinear,
    conditional_batch_norm,
    downscale,
    global_sum_pool,
    spectral_normalize,
    upscale,
)
from ggan.exceptions import ConfigError, ShapeError
from helpers import fd_rel_error

TOL = 1e-3


def _scalar(fn, shape, seed=1):
    P = torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return lambda: (fn() * P).sum()


def _check(module, *inputs, train=False):
    """FD-check a module's parameters and floating inputs at float64."""
    module = module.double().train(train)
    inputs = [x.double().requires_grad_() if x.is_floating_point() else x for x in inputs]
    out_shape = module(*inputs).shape
    fn = _scalar(lambda: module(*inputs), out_shape)
    leaves = [x for x in inputs if x.is_floating_point()] + list(module.parameters())
    return fd_rel_error(fn, leaves)


# -- spectral normalization ------------------------------------------------

def test_sn_converges_to_unit_spectral_norm():
    lin = SNLinear(20, 30)
    with torch.no_grad():
        lin.weight.mul_(7.0)
    for _ in range(100):
        lin(torch.zeros(1, 20))
    lin.eval()
    sigma = torch.linalg.matrix_norm(lin.sn_weight().detach(), ord=2).item()
    assert sigma == pytest.approx(1.0, abs=0.02)


def test_sn_u_updates_only_in_training():
    conv = SNConv2d(3, 5, 3, padding=1)
    u0 = conv.u.clone()
    conv.eval()
    conv(torch.randn(2, 3, 4, 4))
    assert torch.equal(conv.u, u0)
    conv.train()
    conv(torch.randn(2, 3, 4, 4))
    assert not torch.equal(conv.u, u0)


def test_spectral_normalize_returns_sigma_of_rank_one():
    a, b = torch.randn(6), torch.randn(4)
    W = torch.outer(a, b)
    _, _, sigma = spectral_normalize(W, F.normalize(torch.randn(6), dim=0), 3)
    assert sigma.item() == pytest.approx((a.norm() * b.norm()).item(), rel=1e-5)


def test_every_sn_weight_has_one_vector():
    block = ResBlockDown(4, 8)
    sn = [m for m in block.modules() if getattr(m, "use_sn", False)]
    assert sn and all(m.u.shape == (m.weight.shape[0],) for m in sn)


def test_sn_layer_gradients():
    assert _check(SNLinear(5, 4), torch.randn(3, 5)) < TOL
    assert _check(SNConv2d(2, 3, 3, padding=1), torch.randn(2, 2, 4, 4)) < TOL


# -- resampling and pooling ------------------------------------------------

def test_up_and_down_scale():
    x = torch.arange(4.0).view(1, 1, 2, 2)
    assert upscale(x).shape == (1, 1, 4, 4)
    assert torch.equal(downscale(upscale(x)), x)
    with pytest.raises(ShapeError):
        downscale(torch.zeros(1, 1, 3, 2))


@given(st.floats(0.1, 10.0))
def test_sum_pool_is_linear(c):
    x = torch.randn(2, 3, 4, 2, generator=torch.Generator().manual_seed(0))
    assert torch.allclose(global_sum_pool(c * x), c * global_sum_pool(x), rtol=1e-5)


# -- batch norm ------------------------------------------------------------

def test_conditional_bn_starts_as_plain_bn():
    cbn = ConditionalBatchNorm2d(3, 8)
    emb = torch.nn.Embedding(4, 8)
    x = torch.randn(5, 3, 2, 2)
    out = conditional_batch_norm(x, torch.tensor([0, 1, 2, 3, 0]), emb, cbn)
    ref = F.batch_norm(x, None, None, training=True, eps=1e-5)
    assert torch.allclose(out, ref, atol=1e-6)


def test_conditional_bn_depends_on_label():
    cbn = ConditionalBatchNorm2d(3, 8)
    torch.nn.init.normal_(cbn.gain.weight)
    emb = torch.nn.Embedding(4, 8)
    x = torch.randn(2, 3, 2, 2)
    a = conditional_batch_norm(x, torch.tensor([0, 0]), emb, cbn)
    b = conditional_batch_norm(x, torch.tensor([1, 1]), emb, cbn)
    assert not torch.allclose(a, b)
    with pytest.raises(IndexError):
        conditional_batch_norm(x, torch.tensor([0, 4]), emb, cbn)


def test_conditional_bn_gradients():
    cbn = ConditionalBatchNorm2d(3, 4)
    for lin in (cbn.gain, cbn.bias):
        torch.nn.init.normal_(lin.weight, std=0.5)
    assert _check(cbn, torch.randn(4, 3, 2, 2), torch.randn(4, 4), train=True) < TOL


# -- residual blocks -------------------------------------------------------

def test_resblock_up_shape_and_condition_errors():
    up = ResBlockUp(4, 2)
    assert up(torch.randn(2, 4, 3, 5)).shape == (2, 2, 6, 10)
    with pytest.raises(ConfigError):
        up(torch.randn(2, 4, 3, 5), torch.randn(2, 8))
    cup = ResBlockUp(4, 2, embed_dim=8)
    with pytest.raises(ConfigError):
        cup(torch.randn(2, 4, 3, 5))
    assert cup(torch.randn(2, 4, 3, 5), torch.randn(2, 8)).shape == (2, 2, 6, 10)


def test_resblock_down_shapes():
    assert ResBlockDown(1, 4)(torch.randn(2, 1, 8, 4)).shape == (2, 4, 4, 2)
    flat = ResBlockDown(4, 4, downsample=False, shortcut=False)
    assert flat(torch.randn(2, 4, 4, 2)).shape == (2, 4, 4, 2)
    with pytest.raises(ConfigError):
        ResBlockDown(2, 4, shortcut=False)
    with pytest.raises(ShapeError):
        ResBlockDown(1, 2)(torch.randn(1, 1, 5, 4))


def test_resblock_down_identity_skip_passes_input():
    flat = ResBlockDown(2, 2, downsample=False, shortcut=False)
    for p in flat.parameters():
        torch.nn.init.zeros_(p)
    x = torch.randn(1, 2, 4, 4)
    assert torch.equal(flat(x), x)


@pytest.mark.parametrize("train", [False, True])
def test_resblock_up_gradients(train):
    block = ResBlockUp(3, 2, use_sn=not train)
    assert _check(block, torch.randn(3, 3, 2, 2), train=train) < TOL


def test_conditional_resblock_up_gradients():
    block = ResBlockUp(2, 2, embed_dim=4)
    for m in block.modules():
        if isinstance(m, ConditionalBatchNorm2d):
            torch.nn.init.normal_(m.gain.weight, std=0.3)
    assert _check(block, torch.randn(3, 2, 2, 2), torch.randn(3, 4)) < TOL


@pytest.mark.parametrize("shortcut", [True, False])
def test_resblock_down_gradients(shortcut):
    block = ResBlockDown(2, 2, downsample=shortcut, shortcut=shortcut)
    assert _check(block, torch.randn(2, 2, 4, 4)) < TOL


# -- attention -------------------------------------------------------------

def test_non_local_starts_as_identity_and_rows_are_stochastic():
    nl = NonLocalBlock(16)
    x = torch.randn(2, 16, 8, 4)
    assert torch.equal(nl(x), x)
    beta = nl.attention_map(x)
    assert beta.shape == (2, 32, 8)
    assert torch.allclose(beta.sum(-1), torch.ones(2, 32), atol=1e-6)
    with pytest.raises(ShapeError):
        NonLocalBlock(12)


def test_non_local_gradients():
    nl = NonLocalBlock(8)
    with torch.no_grad():
        nl.gamma.fill_(0.7)
    assert _check(nl, torch.randn(2, 8, 4, 4)) < TOL


# -- projection head -------------------------------------------------------

def test_projection_head_formula():
    head = ProjectionHead(5, 3, use_sn=False)
    h, y = torch.randn(4, 5), torch.tensor([0, 2, 1, 2])
    expected = head.dense(h).squeeze(1) + (head.embed.weight[y] * h).sum(1)
    assert torch.allclose(head(h, y), expected)
    with pytest.raises(IndexError):
        head(h, torch.tensor([0, 3, 1, 1]))


def test_projection_head_gradients():
    assert _check(ProjectionHead(5, 3), torch.randn(4, 5), torch.tensor([0, 2, 1, 2])) < TOL


def test_fd_helper_detects_wrong_gradient():
    # a function whose autograd graph is deliberately cut
    x = torch.randn(5, dtype=torch.float64, requires_grad=True)
    err = fd_rel_error(lambda: (x * x.detach()).sum(), [x])
    assert err > 0.1
    assert np.isfinite(err)
