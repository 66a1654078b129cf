"""Full detector assembly, checkpoint IO, and single-image inference.

Fusion modes
------------
MF  per-stage progressive fusion; the last fused map feeds the pyramid
    (the main model).
PC  per-stage fusion of independently run branches; all fused maps are
    resized to stride 16 and concatenated.
LC  no stage fusion; all six branch maps are resized to stride 16 and
    concatenated.

In PC/LC the concatenated stack is reduced to the encoder's final width by a
pointwise projection before the pyramid, so the decoder is identical across
modes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import freq
from .encoder import DualEncoder, EncoderConfig, init_module_weights
from .predictor import ClassifyHead, LocalizeHead, SimpleFeaturePyramid

CHECKPOINT_VERSION = 1
FUSION_MODES = ("MF", "PC", "LC")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion_mode: str = "MF"
    with_classifier: bool = True
    use_frequency: bool = True
    dct_cutoff: float = freq.DEFAULT_DCT_CUTOFF
    pyramid_channels: int = 256
    head_hidden: int = 256

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        want = 6 if self.use_frequency else 3
        if self.encoder.in_channels != want:
            self.encoder = dataclasses.replace(self.encoder, in_channels=want)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder"] = dataclasses.asdict(self.encoder)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = d.pop("encoder")
        enc = {k: tuple(v) if isinstance(v, list) else v for k, v in enc.items()}
        return cls(encoder=EncoderConfig(**enc), **d)


class ManipulationDetector(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = DualEncoder(cfg.encoder)
        c = cfg.encoder.final_channels
        if cfg.fusion_mode == "LC":
            stack = 2 * sum(cfg.encoder.stage_channels)
        elif cfg.fusion_mode == "PC":
            stack = sum(cfg.encoder.stage_channels)
        else:
            stack = None
        self.mode_reduce = (
            nn.Conv2d(stack, c, kernel_size=1) if stack is not None else None
        )
        if self.mode_reduce is not None:
            init_module_weights(self.mode_reduce)
        self.pyramid = SimpleFeaturePyramid(c, cfg.pyramid_channels)
        self.loc_head = LocalizeHead(cfg.pyramid_channels, cfg.head_hidden)
        self.cls_head = ClassifyHead(c) if cfg.with_classifier else None

    def features(self, m_high, m_low):
        """Final fused map per the configured fusion mode."""
        mode = self.cfg.fusion_mode
        if mode == "MF":
            f_n, _, _, _ = self.encoder(m_high, m_low, progressive=True)
            return f_n
        _, fused, local_feats, global_feats = self.encoder(
            m_high, m_low, progressive=False
        )
        maps = fused if mode == "PC" else local_feats + global_feats
        target = maps[-1].shape[-2:] if mode == "PC" else local_feats[-1].shape[-2:]
        resized = [
            m if m.shape[-2:] == target
            else F.interpolate(m, size=target, mode="bilinear", align_corners=False)
            for m in maps
        ]
        return self.mode_reduce(torch.cat(resized, dim=1))

    def forward(self, m_high, m_low):
        """Returns (mask_logits [B,1,H,W], class_logits [B] or None)."""
        f_n = self.features(m_high, m_low)
        mask_logits = self.loc_head(self.pyramid(f_n))
        cls_logits = self.cls_head(f_n) if self.cls_head is not None else None
        return mask_logits, cls_logits


def build_model(cfg: ModelConfig, seed: int | None = None) -> ManipulationDetector:
    if seed is not None:
        torch.manual_seed(seed)
    return ManipulationDetector(cfg)


def save_checkpoint(path, model: ManipulationDetector, meta: dict | None = None):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "model_config": model.cfg.to_dict(),
            "state_dict": model.state_dict(),
            "meta": meta or {},
        },
        path,
    )


def load_checkpoint(path, expected_cfg: ModelConfig | None = None):
    """Rebuild a model from a checkpoint; returns (model, meta).

    If `expected_cfg` is given it must equal the embedded config.
    """
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg = ModelConfig.from_dict(blob["model_config"])
    if expected_cfg is not None and cfg != expected_cfg:
        raise ValueError("checkpoint config does not match the expected config")
    model = ManipulationDetector(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob["meta"]


def model_inputs(image: np.ndarray, use_frequency: bool, cutoff: float):
    """Build the two branch inputs (as float32 arrays) for one padded image."""
    if use_frequency:
        m_high, m_low = freq.build_mixed_inputs(image, cutoff)
        return m_high.data.astype(np.float32), m_low.data.astype(np.float32)
    x = image.astype(np.float32)
    return x, x


@torch.no_grad()
def predict_image(model: ManipulationDetector, image: np.ndarray, device="cpu"):
    """Run one (3, H, W) image in [0, 1]; pads to stride 16 and crops back.

    Returns (mask_logits (1, H, W) float32 ndarray, class_prob float or None).
    """
    freq.validate_image(image, require_multiple=False)
    padded, (h, w) = freq.pad_to_multiple(image)
    m_high, m_low = model_inputs(padded, model.cfg.use_frequency, model.cfg.dct_cutoff)
    th = torch.from_numpy(m_high[None]).to(device)
    tl = torch.from_numpy(m_low[None]).to(device)
    was_training = model.training
    model.eval()
    mask_logits, cls_logits = model(th, tl)
    if was_training:
        model.train()
    out = mask_logits[0, :, :h, :w].cpu().numpy()
    prob = torch.sigmoid(cls_logits[0]).item() if cls_logits is not None else None
    return out, prob
