"""Pyramid and head contracts: level shapes, pointwise decoding, pooling."""

import numpy as np
import pytest
import torch

from imdlkit.predictor import ClassifyHead, LocalizeHead, SimpleFeaturePyramid


def test_sfpn_level_shapes_from_512_input():
    torch.manual_seed(0)
    sfpn = SimpleFeaturePyramid(384, 256)
    f_n = torch.randn(1, 384, 32, 32)  # stride-16 map of a 512x512 input
    with torch.no_grad():
        levels = sfpn(f_n)
    assert len(levels) == 5
    assert [tuple(l.shape) for l in levels] == [
        (1, 256, 128, 128),
        (1, 256, 64, 64),
        (1, 256, 32, 32),
        (1, 256, 16, 16),
        (1, 256, 8, 8),
    ]


def test_sfpn_always_five_levels():
    torch.manual_seed(1)
    sfpn = SimpleFeaturePyramid(32, 16)
    for hw in (4, 8, 12):
        with torch.no_grad():
            levels = sfpn(torch.randn(1, 32, hw, hw))
        assert len(levels) == 5


def test_sfpn_zero_input_zero_levels_when_bias_free():
    torch.manual_seed(2)
    sfpn = SimpleFeaturePyramid(32, 16, bias=False)
    with torch.no_grad():
        levels = sfpn(torch.zeros(1, 32, 8, 8))
    for lvl in levels:
        assert torch.all(lvl == 0)


def test_sfpn_rejects_wrong_channels():
    sfpn = SimpleFeaturePyramid(32, 16)
    with pytest.raises(ValueError):
        sfpn(torch.randn(1, 16, 8, 8))


def test_localize_shapes_512_pipeline():
    torch.manual_seed(3)
    sfpn = SimpleFeaturePyramid(384, 256)
    head = LocalizeHead(256, 256)
    f_n = torch.randn(1, 384, 32, 32)
    with torch.no_grad():
        pyramid = sfpn(f_n)
        pre = head.mlp(head.reduce(torch.cat(
            [torch.nn.functional.interpolate(l, size=pyramid[0].shape[-2:],
                                             mode="bilinear", align_corners=False)
             if l.shape[-2:] != pyramid[0].shape[-2:] else l for l in pyramid], dim=1)))
        out = head(pyramid)
    assert pre.shape == (1, 1, 128, 128)
    assert out.shape == (1, 1, 512, 512)


def test_localize_constant_pyramid_gives_constant_map():
    torch.manual_seed(4)
    head = LocalizeHead(8, 8)
    pyramid = [torch.full((1, 8, s, s), 0.3) for s in (16, 8, 4, 2, 1)]
    with torch.no_grad():
        out = head(pyramid)
    assert out.shape == (1, 1, 64, 64)
    assert torch.max(out) - torch.min(out) < 1e-6


def test_localize_upsample_preserves_bounds():
    torch.manual_seed(5)
    head = LocalizeHead(8, 8)
    g = torch.Generator().manual_seed(5)
    pyramid = [torch.rand(1, 8, s, s, generator=g) for s in (16, 8, 4, 2, 1)]
    with torch.no_grad():
        quarter = head.mlp(head.reduce(torch.cat(
            [torch.nn.functional.interpolate(l, size=(16, 16), mode="bilinear",
                                             align_corners=False)
             if l.shape[-2:] != (16, 16) else l for l in pyramid], dim=1)))
        out = head(pyramid)
    assert out.max() <= quarter.max() + 1e-6
    assert out.min() >= quarter.min() - 1e-6


def test_localize_rejects_bad_level_count():
    head = LocalizeHead(8, 8)
    with pytest.raises(ValueError):
        head([torch.randn(1, 8, 4, 4)] * 4)


def test_classify_spatial_permutation_invariance():
    torch.manual_seed(6)
    head = ClassifyHead(16)
    g = torch.Generator().manual_seed(6)
    f_n = torch.rand(2, 16, 4, 4, generator=g)
    flat = f_n.flatten(2)
    perm = torch.randperm(16, generator=g)
    shuffled = flat[:, :, perm].reshape(2, 16, 4, 4)
    with torch.no_grad():
        assert torch.equal(head(f_n), head(shuffled))


def test_classify_dominant_site_defines_pooled_vector():
    torch.manual_seed(7)
    head = ClassifyHead(8)
    f_n = torch.zeros(1, 8, 3, 3) - 5.0
    site = torch.linspace(1.0, 2.0, 8)
    f_n[0, :, 1, 2] = site
    with torch.no_grad():
        pooled = f_n.amax(dim=(-2, -1))
        out = head(f_n)
        expected = head.fc(pooled).squeeze(-1)
    assert torch.equal(pooled[0], site)
    assert torch.equal(out, expected)


def test_classify_zero_input_zero_bias_gives_zero():
    head = ClassifyHead(8)
    with torch.no_grad():
        head.fc.bias.zero_()
        out = head(torch.zeros(1, 8, 4, 4))
    assert torch.all(out == 0)


def test_predictor_gradient_matches_finite_differences():
    torch.manual_seed(8)
    sfpn = SimpleFeaturePyramid(384, 32).double()
    loc = LocalizeHead(32, 32).double()
    cls = ClassifyHead(384).double()
    g = torch.Generator().manual_seed(8)
    x = torch.rand(1, 384, 8, 8, generator=g, dtype=torch.float64)
    x.requires_grad_(True)

    def f(t):
        return loc(sfpn(t)).sum() + cls(t).sum()

    out = f(x)
    out.backward()
    grad = x.grad.clone()
    rng = np.random.default_rng(9)
    eps = 1e-6
    for _ in range(20):
        c = int(rng.integers(384))
        i = int(rng.integers(8))
        j = int(rng.integers(8))
        with torch.no_grad():
            xp = x.detach().clone()
            xm = x.detach().clone()
            xp[0, c, i, j] += eps
            xm[0, c, i, j] -= eps
            fd = (f(xp).item() - f(xm).item()) / (2 * eps)
        an = grad[0, c, i, j].item()
        denom = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / denom < 1e-3
