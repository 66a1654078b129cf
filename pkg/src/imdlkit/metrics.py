"""Segmentation and detection metrics and the evaluation protocol.

Pixel metrics (F1 at threshold 0.5, IoU) are computed per fake image and
averaged; real images enter only the image-level scores. A probability of
exactly 0.5 breaks to the negative (real) side everywhere.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import ManifestDataset

DETECTION_THRESHOLD = 0.5


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pixel_scores(pred_logits, gt, threshold: float = 0.5):
    """Per-image (F1, IoU) of thresholded sigmoid(logits) against a binary mask.

    `pred_logits` is (1, H, W) or (H, W); `gt` must be nonempty (real images
    have no defined pixel score and must be excluded by the caller).
    """
    logits = np.asarray(pred_logits)
    if logits.ndim == 3:
        logits = logits[0]
    gt = np.asarray(gt).astype(bool)
    if logits.shape != gt.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {gt.shape}")
    if not gt.any():
        raise ValueError("ground-truth mask is empty; exclude real images")
    pred = _sigmoid(logits) > threshold
    tp = float(np.logical_and(pred, gt).sum())
    fp = float(np.logical_and(pred, ~gt).sum())
    fn = float(np.logical_and(~pred, gt).sum())
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    return f1, iou


def image_scores(records):
    """Binary detection (F1, accuracy) from (prob, label) pairs.

    Labels are 'real'/'fake' strings or 0/1; fake is the positive class and
    prob == 0.5 predicts real.
    """
    if not records:
        raise ValueError("no records to score")
    tp = fp = fn = tn = 0
    for prob, label in records:
        truth = label in (1, "fake", "inpaint", "t2i", True)
        pred = prob > DETECTION_THRESHOLD
        if pred and truth:
            tp += 1
        elif pred and not truth:
            fp += 1
        elif not pred and truth:
            fn += 1
        else:
            tn += 1
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    acc = (tp + tn) / len(records)
    return f1, acc


@dataclass
class EvalReport:
    pixel_f1: float | None
    pixel_iou: float | None
    image_f1: float | None
    image_acc: float | None
    per_subset: dict = field(default_factory=dict)
    n_images: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pixel_f1": self.pixel_f1,
            "pixel_iou": self.pixel_iou,
            "image_f1": self.image_f1,
            "image_acc": self.image_acc,
            "per_subset": self.per_subset,
            "n_images": self.n_images,
        }


def _model_predictions(model, records, root, device, batch_size):
    ds = ManifestDataset(records, root, model.cfg.use_frequency, model.cfg.dct_cutoff)
    logits_out = [None] * len(records)
    probs_out = [None] * len(records)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for k in range(0, len(records), batch_size):
            idx = list(range(k, min(k + batch_size, len(records))))
            batch = ds.batch(idx, device)
            mask_logits, cls_logits = model(batch["m_high"], batch["m_low"])
            mask_np = mask_logits.cpu().numpy()
            probs = (
                torch.sigmoid(cls_logits).cpu().numpy()
                if cls_logits is not None
                else None
            )
            for b, i in enumerate(idx):
                logits_out[i] = mask_np[b]
                probs_out[i] = float(probs[b]) if probs is not None else None
    if was_training:
        model.train()
    return logits_out, probs_out, ds.masks


def _callable_predictions(fn, records, root):
    from . import forge

    logits_out, probs_out, masks = [], [], []
    for rec in records:
        image = forge.load_image_png(os.path.join(root, rec.image_path))
        logits, prob = fn(rec, image)
        logits_out.append(np.asarray(logits))
        probs_out.append(prob)
        masks.append(
            forge.load_mask_png(os.path.join(root, rec.mask_path))
            if rec.mask_path is not None
            else None
        )
    return logits_out, probs_out, masks


def evaluate(
    model,
    records,
    root,
    subset_filter=None,
    split="test",
    device="cpu",
    batch_size=8,
    threshold=0.5,
    pixel_pooling="per_image",
) -> EvalReport:
    """Run predictions over the (filtered) split and aggregate the metrics.

    `model` is either the torch module or a callable
    fn(record, image) -> (mask_logits, class_prob) for oracle-style checks.
    `subset_filter` keeps a single subset: an edit-method name or 'real'.
    """
    chosen = [r for r in records if split is None or r.split == split]
    if subset_filter is not None:
        if callable(subset_filter):
            chosen = [r for r in chosen if subset_filter(r)]
        elif subset_filter == "real":
            chosen = [r for r in chosen if not r.is_fake]
        else:
            chosen = [r for r in chosen if r.is_fake and r.edit_method == subset_filter]
    if not chosen:
        raise ValueError("no records matched the evaluation filter")

    if isinstance(model, nn.Module):
        logits, probs, masks = _model_predictions(model, chosen, root, device, batch_size)
    else:
        logits, probs, masks = _callable_predictions(model, chosen, root)

    def subset_name(rec):
        return rec.edit_method if rec.is_fake else "real"

    rows = []
    for rec, lg, pr, mk in zip(chosen, logits, probs, masks):
        row = {"record": rec, "prob": pr, "subset": subset_name(rec)}
        if rec.is_fake:
            if pixel_pooling == "global":
                pred = _sigmoid(np.asarray(lg)[0] if np.asarray(lg).ndim == 3 else lg)
                row["pred"] = pred > threshold
                row["gt"] = mk
            else:
                row["f1"], row["iou"] = pixel_scores(lg, mk, threshold)
        rows.append(row)

    def aggregate(sel):
        fake_rows = [r for r in sel if r["record"].is_fake]
        out = {"pixel_f1": None, "pixel_iou": None, "image_f1": None, "image_acc": None}
        if fake_rows:
            if pixel_pooling == "global":
                tp = sum(np.logical_and(r["pred"], r["gt"]).sum() for r in fake_rows)
                fp = sum(np.logical_and(r["pred"], ~r["gt"]).sum() for r in fake_rows)
                fn = sum(np.logical_and(~r["pred"], r["gt"]).sum() for r in fake_rows)
                out["pixel_f1"] = 2.0 * tp / (2.0 * tp + fp + fn)
                out["pixel_iou"] = tp / (tp + fp + fn)
            else:
                out["pixel_f1"] = float(np.mean([r["f1"] for r in fake_rows]))
                out["pixel_iou"] = float(np.mean([r["iou"] for r in fake_rows]))
        scored = [(r["prob"], r["record"].label) for r in sel if r["prob"] is not None]
        if scored:
            out["image_f1"], out["image_acc"] = image_scores(scored)
        return out

    top = aggregate(rows)
    per_subset = {}
    for name in sorted({r["subset"] for r in rows}):
        per_subset[name] = aggregate([r for r in rows if r["subset"] == name])
    counts = {}
    for rec in chosen:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    counts["total"] = len(chosen)
    return EvalReport(
        pixel_f1=top["pixel_f1"],
        pixel_iou=top["pixel_iou"],
        image_f1=top["image_f1"],
        image_acc=top["image_acc"],
        per_subset=per_subset,
        n_images=counts,
    )


def format_table(headers, rows) -> str:
    """Aligned monospace table; None renders as '--'."""

    def cell(x):
        if x is None:
            return "--"
        if isinstance(x, float):
            return f"{x:.4f}"
        return str(x)

    grid = [[cell(x) for x in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in grid)) if grid else len(h)
        for i, h in enumerate(headers)
    ]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for r in grid:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)
