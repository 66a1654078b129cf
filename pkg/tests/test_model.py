"""Model assembly: fusion modes, checkpoints, padded inference."""

import dataclasses

import numpy as np
import pytest
import torch

from conftest import TINY_ENCODER, rand_image, rand_inputs
from imdlkit.model import (
    ManipulationDetector,
    ModelConfig,
    build_model,
    load_checkpoint,
    model_inputs,
    predict_image,
    save_checkpoint,
)


def tiny_cfg(**kw):
    base = dict(encoder=TINY_ENCODER, pyramid_channels=16, head_hidden=16)
    base.update(kw)
    return ModelConfig(**base)


@pytest.mark.parametrize("mode", ["MF", "PC", "LC"])
def test_forward_shapes_all_fusion_modes(mode):
    model = build_model(tiny_cfg(fusion_mode=mode), seed=0).eval()
    hi, lo = rand_inputs((2, 6, 64, 64), seed=1)
    with torch.no_grad():
        mask_logits, cls_logits = model(hi, lo)
    assert mask_logits.shape == (2, 1, 64, 64)
    assert cls_logits.shape == (2,)
    assert torch.isfinite(mask_logits).all()


def test_no_classifier_mode():
    model = build_model(tiny_cfg(with_classifier=False), seed=0).eval()
    hi, lo = rand_inputs((1, 6, 32, 32), seed=2)
    with torch.no_grad():
        mask_logits, cls_logits = model(hi, lo)
    assert cls_logits is None
    assert mask_logits.shape == (1, 1, 32, 32)


def test_use_frequency_controls_input_channels():
    cfg = tiny_cfg(use_frequency=False)
    assert cfg.encoder.in_channels == 3
    model = build_model(cfg, seed=0).eval()
    x = torch.randn(1, 3, 32, 32)
    with torch.no_grad():
        mask_logits, _ = model(x, x)
    assert mask_logits.shape == (1, 1, 32, 32)


def test_model_inputs_builder():
    img = rand_image((3, 32, 32), seed=3).astype(np.float64)
    hi, lo = model_inputs(img, use_frequency=True, cutoff=0.25)
    assert hi.shape == (6, 32, 32) and hi.dtype == np.float32
    a, b = model_inputs(img, use_frequency=False, cutoff=0.25)
    assert a.shape == (3, 32, 32)
    assert np.array_equal(a, b)


def test_checkpoint_roundtrip_and_config_validation(tmp_path):
    cfg = tiny_cfg()
    model = build_model(cfg, seed=4)
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, model, meta={"note": 1})
    loaded, meta = load_checkpoint(path, expected_cfg=cfg)
    assert meta == {"note": 1}
    hi, lo = rand_inputs((1, 6, 32, 32), seed=5)
    with torch.no_grad():
        a = model.eval()(hi, lo)[0]
        b = loaded(hi, lo)[0]
    assert torch.equal(a, b)
    other = tiny_cfg(fusion_mode="LC")
    with pytest.raises(ValueError):
        load_checkpoint(path, expected_cfg=other)


def test_predict_image_pads_and_crops():
    model = build_model(tiny_cfg(), seed=6)
    img = rand_image((3, 50, 70), seed=7)
    logits, prob = predict_image(model, img)
    assert logits.shape == (1, 50, 70)
    assert 0.0 <= prob <= 1.0


def test_full_model_gradient_end_to_end():
    torch.manual_seed(8)
    model = ManipulationDetector(tiny_cfg()).double()
    hi, lo = rand_inputs((1, 6, 32, 32), seed=9, dtype=torch.float64)
    hi.requires_grad_(True)

    def f(x_hi):
        mask_logits, cls_logits = model(x_hi, lo)
        return mask_logits.sum() + cls_logits.sum()

    out = f(hi)
    out.backward()
    grad = hi.grad.clone()
    rng = np.random.default_rng(10)
    eps = 1e-6
    for _ in range(20):
        c = int(rng.integers(6))
        i = int(rng.integers(32))
        j = int(rng.integers(32))
        with torch.no_grad():
            xp = hi.detach().clone()
            xm = hi.detach().clone()
            xp[0, c, i, j] += eps
            xm[0, c, i, j] -= eps
            fd = (f(xp).item() - f(xm).item()) / (2 * eps)
        an = grad[0, c, i, j].item()
        denom = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / denom < 1e-3
