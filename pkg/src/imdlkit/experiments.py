"""Experiment protocols: the module-wise ablation grid and the cross-subset
generalization matrix.

Both protocols are driven entirely by TrainConfig variants; no code changes
are needed to reproduce any row. The desk encoder profile keeps the same
architecture at reduced width so the protocols run on a CPU in minutes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import ManifestDataset
from .encoder import EncoderConfig
from .metrics import EvalReport, evaluate
from .model import ModelConfig, build_model
from .training import TrainConfig, train

# paper-shaped defaults (stride 16, final width 384)
PAPER_ENCODER = EncoderConfig()
# reduced-width profile for CPU-budget experiment runs
DESK_ENCODER = EncoderConfig(
    stage_channels=(32, 64, 128),
    blocks_per_stage=(1, 1, 1),
    attention_heads=(1, 2, 4),
    sr_ratios=(4, 2, 1),
    mlp_ratio=2.0,
)

ABLATION_ROWS = (
    ("no_freq+LC+loc", False, "LC", "loc_only"),
    ("freq+LC+loc", True, "LC", "loc_only"),
    ("freq+LC+loc+cls", True, "LC", "loc_cls_fixed"),
    ("freq+PC+loc", True, "PC", "loc_only"),
    ("freq+MF+loc+cls+AWL", True, "MF", "loc_cls_awl"),
)


def model_config_for(
    train_cfg: TrainConfig,
    encoder: EncoderConfig = None,
    pyramid_channels: int = 256,
    head_hidden: int = 256,
) -> ModelConfig:
    """Model wiring implied by a TrainConfig (fusion mode, heads, inputs)."""
    return ModelConfig(
        encoder=encoder if encoder is not None else EncoderConfig(),
        fusion_mode=train_cfg.fusion_mode,
        with_classifier=train_cfg.task_mode != "loc_only",
        use_frequency=train_cfg.use_frequency,
        pyramid_channels=pyramid_channels,
        head_hidden=head_hidden,
    )


def desk_model_config(train_cfg: TrainConfig) -> ModelConfig:
    return model_config_for(train_cfg, DESK_ENCODER, pyramid_channels=64, head_hidden=64)


def _split_dataset(records, root, split, use_frequency, predicate=None):
    chosen = [r for r in records if r.split == split]
    if predicate is not None:
        chosen = [r for r in chosen if predicate(r)]
    if not chosen:
        return None
    return ManifestDataset(chosen, root, use_frequency)


def run_config(
    records,
    root,
    train_cfg: TrainConfig,
    seed: int,
    model_cfg: ModelConfig = None,
    out_dir=None,
    log=None,
) -> EvalReport:
    """Train one configuration and evaluate it on the test split."""
    if model_cfg is None:
        model_cfg = desk_model_config(train_cfg)
    model = build_model(model_cfg, seed)
    train_ds = _split_dataset(records, root, "train", train_cfg.use_frequency)
    val_ds = _split_dataset(records, root, "val", train_cfg.use_frequency)
    result = train(model, train_ds, train_cfg, seed, val_dataset=val_ds,
                   out_dir=out_dir, log=log)
    best = result.best_model()
    return evaluate(best, records, root, split="test", device=train_cfg.device)


def ablation_grid(
    records,
    root,
    seeds,
    train_cfg: TrainConfig = None,
    encoder: EncoderConfig = None,
    pyramid_channels: int = 64,
    head_hidden: int = 64,
    log=None,
):
    """Run the five module-wise configurations over all seeds.

    Returns {row_name: {"runs": [EvalReport...], "pixel_f1": median, ...}};
    localization-only rows carry no image-level metrics.
    """
    base = train_cfg if train_cfg is not None else TrainConfig()
    grid = {}
    for name, use_freq, fusion, task in ABLATION_ROWS:
        cfg = dataclasses.replace(
            base, use_frequency=use_freq, fusion_mode=fusion, task_mode=task
        )
        reports = []
        for seed in seeds:
            mc = model_config_for(
                cfg,
                encoder if encoder is not None else DESK_ENCODER,
                pyramid_channels,
                head_hidden,
            )
            rep = run_config(records, root, cfg, seed, model_cfg=mc)
            reports.append(rep)
            if log:
                log(f"{name} seed={seed} pixel_f1={rep.pixel_f1:.4f}")
        grid[name] = {
            "runs": reports,
            "pixel_f1": float(np.median([r.pixel_f1 for r in reports])),
            "pixel_iou": float(np.median([r.pixel_iou for r in reports])),
            "image_f1": (
                float(np.median([r.image_f1 for r in reports]))
                if reports[0].image_f1 is not None
                else None
            ),
            "image_acc": (
                float(np.median([r.image_acc for r in reports]))
                if reports[0].image_acc is not None
                else None
            ),
        }
    return grid


def cross_subset_matrix(
    model_factory,
    records,
    root,
    train_subset: str,
    test_subsets,
    seeds,
    train_cfg: TrainConfig = None,
    log=None,
):
    """Train on one edit-method subset; evaluate on every subset plus reals.

    The retained checkpoint is the per-epoch snapshot with the highest mean
    pixel F1 across the validation splits of all subsets. Returns
    {"per_seed": [{subset: metrics}], "median": {subset: metrics}}.
    """
    cfg = train_cfg if train_cfg is not None else TrainConfig()
    per_seed = []
    for seed in seeds:
        model = model_factory(seed)
        include_real = cfg.task_mode != "loc_only"
        train_ds = _split_dataset(
            records,
            root,
            "train",
            cfg.use_frequency,
            lambda r: (r.is_fake and r.edit_method == train_subset)
            or (include_real and not r.is_fake),
        )
        val_sets = {}
        for m in test_subsets:
            ds = _split_dataset(
                records, root, "val", cfg.use_frequency,
                lambda r, m=m: r.is_fake and r.edit_method == m,
            )
            if ds is not None:
                val_sets[m] = ds
        result = train(model, train_ds, cfg, seed, val_dataset=val_sets or None)
        best = result.best_model()
        row = {}
        for m in test_subsets:
            rep = evaluate(best, records, root, subset_filter=m, device=cfg.device)
            row[m] = {"pixel_f1": rep.pixel_f1, "pixel_iou": rep.pixel_iou,
                      "image_f1": rep.image_f1, "image_acc": rep.image_acc}
        if any(not r.is_fake and r.split == "test" for r in records):
            rep = evaluate(best, records, root, subset_filter="real", device=cfg.device)
            row["real"] = {"pixel_f1": None, "pixel_iou": None,
                           "image_f1": rep.image_f1, "image_acc": rep.image_acc}
        per_seed.append(row)
        if log:
            log(f"train_on={train_subset} seed={seed} " + ", ".join(
                f"{k}={v['pixel_f1']:.3f}" if v["pixel_f1"] is not None else f"{k}=--"
                for k, v in row.items()
            ))

    median = {}
    for subset in per_seed[0]:
        median[subset] = {}
        for key in per_seed[0][subset]:
            vals = [row[subset][key] for row in per_seed if row[subset][key] is not None]
            median[subset][key] = float(np.median(vals)) if vals else None
    return {"train_subset": train_subset, "per_seed": per_seed, "median": median}
