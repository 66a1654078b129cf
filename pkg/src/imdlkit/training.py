"""Losses, the learning-rate schedule, and the training loop.

The two task losses are balanced either by a plain sum or by uncertainty
weighting with trainable log-variances s_i = log(sigma_i^2):

    total = exp(-s1)/2 * L_loc + exp(-s2)/2 * L_cls + s1/2 + s2/2

which is exactly the sigma form of the weighted loss while avoiding the
sigma -> 0 singularity. Real images contribute only to the classification
loss; their mask loss is excluded.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

TASK_MODES = ("loc_only", "loc_cls_fixed", "loc_cls_awl")
FUSION_MODES = ("LC", "PC", "MF")


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    final_lr: float = 5e-7
    warmup_epochs: int = 2
    weight_decay: float = 0.05
    grad_accum: int = 2
    epochs: int = 20
    batch_size: int = 8
    task_mode: str = "loc_cls_awl"
    fusion_mode: str = "MF"
    use_frequency: bool = True
    fixed_math: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if not 0 < self.final_lr < self.base_lr:
            raise ValueError("need 0 < final_lr < base_lr")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be below epochs")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"task_mode must be one of {TASK_MODES}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.grad_accum < 1 or self.batch_size < 1:
            raise ValueError("grad_accum and batch_size must be positive")


def bce(pred_prob, target, eps=1e-7):
    """Mean binary cross-entropy on probabilities (clamped away from 0/1)."""
    if pred_prob.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred_prob.shape} vs {target.shape}")
    p = pred_prob.clamp(eps, 1.0 - eps)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def bce_logits(logits, target):
    """Numerically stable mean BCE from logits."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {target.shape}")
    return F.binary_cross_entropy_with_logits(logits, target)


class AwlState(nn.Module):
    """Trainable log-variances of the two task uncertainties."""

    def __init__(self):
        super().__init__()
        self.s1 = nn.Parameter(torch.zeros(()))
        self.s2 = nn.Parameter(torch.zeros(()))


def awl_total(l_loc, l_cls, state: AwlState):
    return (
        0.5 * torch.exp(-state.s1) * l_loc
        + 0.5 * torch.exp(-state.s2) * l_cls
        + 0.5 * state.s1
        + 0.5 * state.s2
    )


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from zero, then cosine decay to final_lr at the last step."""
    if step < 0:
        raise ValueError("step must be >= 0")
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    denom = max(total - 1 - warmup, 1)
    t = min((step - warmup) / denom, 1.0)
    return cfg.final_lr + (cfg.base_lr - cfg.final_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass
class TrainResult:
    model: nn.Module
    awl: AwlState | None
    trace: list
    best_val_f1: float | None
    best_state: dict | None

    def best_model(self):
        """Model with the best-validation weights loaded (final if no val)."""
        if self.best_state is not None:
            self.model.load_state_dict(self.best_state)
        return self.model


def _optimizer(model, awl, cfg):
    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim > 1 else no_decay).append(p)
    if awl is not None:
        no_decay.extend(awl.parameters())
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.base_lr,
    )


def _batch_losses(model, batch, cfg, awl):
    mask_logits, cls_logits = model(batch["m_high"], batch["m_low"])
    fake = batch["is_fake"]
    if fake.any():
        idx = np.nonzero(fake)[0]
        l_loc = bce_logits(mask_logits[idx], batch["mask"][idx])
    else:
        l_loc = mask_logits.new_zeros(())
    if cfg.task_mode == "loc_only":
        return l_loc, l_loc, None
    l_cls = bce_logits(cls_logits, batch["label"])
    if cfg.task_mode == "loc_cls_fixed":
        return l_loc + l_cls, l_loc, l_cls
    return awl_total(l_loc, l_cls, awl), l_loc, l_cls


def _dump_bad_batch(out_dir, batch, losses):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, "diagnostic_batch.npz")
    np.savez(
        path,
        m_high=batch["m_high"].detach().cpu().numpy(),
        m_low=batch["m_low"].detach().cpu().numpy(),
        mask=batch["mask"].detach().cpu().numpy(),
        label=batch["label"].detach().cpu().numpy(),
        losses=np.array([float(x) for x in losses]),
    )
    return path


def validation_pixel_scores(model, dataset, device="cpu", batch_size=8, threshold=0.5):
    """Mean per-image pixel F1/IoU over the dataset's fake samples."""
    from .metrics import pixel_scores

    fakes = [i for i, r in enumerate(dataset.records) if r.is_fake]
    if not fakes:
        return None, None
    f1s, ious = [], []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for k in range(0, len(fakes), batch_size):
            idx = fakes[k : k + batch_size]
            batch = dataset.batch(idx, device)
            mask_logits, _ = model(batch["m_high"], batch["m_low"])
            logits = mask_logits.cpu().numpy()
            for b, i in enumerate(idx):
                f1, iou = pixel_scores(logits[b], dataset.masks[i], threshold)
                f1s.append(f1)
                ious.append(iou)
    if was_training:
        model.train()
    return float(np.mean(f1s)), float(np.mean(ious))


def train(
    model,
    dataset,
    cfg: TrainConfig,
    seed: int = 0,
    val_dataset=None,
    out_dir=None,
    log=None,
):
    """Train the model on a ManifestDataset; returns a TrainResult.

    In loc_only mode real images are dropped from the training stream (they
    carry no localization target). Deterministic for a fixed seed when
    cfg.fixed_math is set.
    """
    if cfg.fixed_math:
        torch.manual_seed(seed)
        torch.use_deterministic_algorithms(True)
    device = cfg.device
    if cfg.task_mode == "loc_only":
        dataset = dataset.subset(lambda r: r.is_fake)
    n = len(dataset)
    if n == 0:
        raise ValueError("training dataset is empty")

    model.to(device).train()
    awl = AwlState().to(device) if cfg.task_mode == "loc_cls_awl" else None
    opt = _optimizer(model, awl, cfg)
    micro_per_epoch = math.ceil(n / cfg.batch_size)
    updates_per_epoch = math.ceil(micro_per_epoch / cfg.grad_accum)

    order = np.random.default_rng([seed, 17])
    trace = []
    best_f1 = None
    best_state = None
    update = 0
    trace_path = os.path.join(out_dir, "metrics.jsonl") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        perm = order.permutation(n)
        micro = [perm[k : k + cfg.batch_size] for k in range(0, n, cfg.batch_size)]
        loc_sum = cls_sum = 0.0
        loc_n = cls_n = 0
        lr = 0.0
        for g in range(0, len(micro), cfg.grad_accum):
            group = micro[g : g + cfg.grad_accum]
            n_group = sum(len(mb) for mb in group)
            lr = lr_at(update, cfg, updates_per_epoch)
            for pg in opt.param_groups:
                pg["lr"] = lr
            opt.zero_grad(set_to_none=True)
            for mb in group:
                batch = dataset.batch(mb, device)
                total, l_loc, l_cls = _batch_losses(model, batch, cfg, awl)
                if not torch.isfinite(total):
                    path = _dump_bad_batch(
                        out_dir, batch,
                        [total, l_loc, l_cls if l_cls is not None else 0.0],
                    )
                    raise RuntimeError(
                        f"non-finite loss at update {update}"
                        + (f"; offending batch dumped to {path}" if path else "")
                    )
                (total * (len(mb) / n_group)).backward()
                if batch["is_fake"].any():
                    loc_sum += float(l_loc) * len(mb)
                    loc_n += len(mb)
                if l_cls is not None:
                    cls_sum += float(l_cls) * len(mb)
                    cls_n += len(mb)
            opt.step()
            update += 1

        val_f1 = val_iou = None
        if val_dataset is not None:
            vals = val_dataset if isinstance(val_dataset, dict) else {"val": val_dataset}
            scores = [
                validation_pixel_scores(model, ds, device, cfg.batch_size)
                for ds in vals.values()
            ]
            f1s = [s[0] for s in scores if s[0] is not None]
            ious = [s[1] for s in scores if s[1] is not None]
            if f1s:
                val_f1 = float(np.mean(f1s))
                val_iou = float(np.mean(ious))
            if val_f1 is not None and (best_f1 is None or val_f1 > best_f1):
                best_f1 = val_f1
                best_state = copy.deepcopy(
                    {k: v.detach().cpu() for k, v in model.state_dict().items()}
                )
        row = {
            "epoch": epoch,
            "lr": lr,
            "l_loc": loc_sum / loc_n if loc_n else None,
            "l_cls": cls_sum / cls_n if cls_n else None,
            "s1": float(awl.s1) if awl is not None else None,
            "s2": float(awl.s2) if awl is not None else None,
            "val_f1": val_f1,
            "val_iou": val_iou,
        }
        trace.append(row)
        if trace_path:
            with open(trace_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
        if log:
            log(row)

    return TrainResult(model=model, awl=awl, trace=trace, best_val_f1=best_f1,
                       best_state=best_state)
