import numpy as np
import pytest
import torch

from imdlkit.encoder import EncoderConfig

# narrow encoder for fast unit tests; same topology as the defaults
TINY_ENCODER = EncoderConfig(
    stage_channels=(8, 16, 32),
    blocks_per_stage=(1, 1, 1),
    attention_heads=(1, 2, 4),
    sr_ratios=(2, 2, 1),
    mlp_ratio=1.0,
)


@pytest.fixture(autouse=True)
def _undo_deterministic_flag():
    yield
    torch.use_deterministic_algorithms(False)


def rand_inputs(shape=(1, 6, 32, 32), seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    hi = torch.rand(shape, generator=g, dtype=dtype)
    lo = torch.rand(shape, generator=g, dtype=dtype)
    return hi, lo


def rand_image(shape=(3, 64, 64), seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32)
