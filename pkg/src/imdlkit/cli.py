"""Command-line entry point wiring forge -> train -> eval/ablate/xsub ->
predict/features, plus cross-run reporting.

Every run resolves its configuration (flags > file > defaults), writes
config.json, metrics.jsonl, and summary.txt into its run directory, and
exits 0 on success, 1 on usage errors, 2 on runtime failures. The default
run root is $IMDLKIT_RUN_ROOT (or ./runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

RUN_ROOT_ENV = "IMDLKIT_RUN_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _run_dir_for(args, name):
    if getattr(args, "out_dir", None):
        path = args.out_dir
    else:
        root = os.environ.get(RUN_ROOT_ENV, "runs")
        path = os.path.join(root, name)
        k = 1
        while os.path.exists(path):
            path = os.path.join(root, f"{name}-{k}")
            k += 1
    os.makedirs(path, exist_ok=True)
    return path


def _write_summary(run_dir, lines):
    text = "\n".join(lines) + "\n"
    with open(os.path.join(run_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")


def _append_metrics(run_dir, row):
    with open(os.path.join(run_dir, "metrics.jsonl"), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(row) + "\n")


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# sub-command configs


def _train_defaults():
    from .training import TrainConfig

    d = dataclasses.asdict(TrainConfig())
    d.update({"encoder": "desk", "data": None, "seed": 0})
    return d


def _resolve_train_config(args):
    from .config import RunConfig, load_config_file

    file_values = load_config_file(args.config) if args.config else None
    flags = {
        "base_lr": args.base_lr,
        "final_lr": args.final_lr,
        "warmup_epochs": args.warmup_epochs,
        "weight_decay": args.weight_decay,
        "grad_accum": args.grad_accum,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "task_mode": args.task_mode,
        "fusion_mode": args.fusion_mode,
        "use_frequency": (False if args.no_frequency else None),
        "fixed_math": (True if args.fixed_math else None),
        "device": args.device,
        "encoder": args.encoder,
        "data": args.data,
        "seed": args.seed,
    }
    return RunConfig.resolve(_train_defaults(), file_values, flags)


def _train_objects(rc):
    from .experiments import desk_model_config, model_config_for
    from .training import TrainConfig

    keys = {f.name for f in dataclasses.fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in rc.values.items() if k in keys})
    if rc["encoder"] == "desk":
        model_cfg = desk_model_config(cfg)
    elif rc["encoder"] == "paper":
        model_cfg = model_config_for(cfg)
    else:
        raise UsageError(f"unknown encoder profile: {rc['encoder']}")
    return cfg, model_cfg


def _add_train_flags(p, with_data=True):
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir")
    p.add_argument("--device", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--grad-accum", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=None)
    p.add_argument("--final-lr", type=float, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--task-mode", choices=("loc_only", "loc_cls_fixed", "loc_cls_awl"))
    p.add_argument("--fusion-mode", choices=("LC", "PC", "MF"))
    p.add_argument("--no-frequency", action="store_true")
    p.add_argument("--fixed-math", action="store_true")
    p.add_argument("--encoder", choices=("desk", "paper"), default=None)
    if with_data:
        p.add_argument("--data", help="dataset directory with manifest.jsonl")


# ---------------------------------------------------------------------------
# sub-commands


def _cmd_forge(args):
    from . import forge
    from .config import RunConfig

    defaults = {
        "out_dir": None,
        "n_real": 0,
        "n_inpaint": 0,
        "n_t2i": 0,
        "methods": ",".join(forge.EDIT_METHODS),
        "size": 256,
        "seed": 0,
        "ratios": "8,1,1",
    }
    flags = {
        "out_dir": args.out_dir,
        "n_real": args.n_real,
        "n_inpaint": args.n_inpaint,
        "n_t2i": args.n_t2i,
        "methods": args.methods,
        "size": args.size,
        "seed": args.seed,
        "ratios": args.ratios,
    }
    rc = RunConfig.resolve(defaults, None, flags)
    run_dir = _run_dir_for(args, "forge")
    rc.values["out_dir"] = run_dir
    rc.write(run_dir)
    methods = [m for m in rc["methods"].split(",") if m]
    records = forge.build_dataset(
        run_dir,
        n_real=rc["n_real"],
        n_inpaint_per_method=rc["n_inpaint"],
        n_t2i_per_method=rc["n_t2i"],
        methods=methods,
        seed=rc["seed"],
        size=(rc["size"], rc["size"]),
        ratios=tuple(_int_list(rc["ratios"])),
    )
    counts = {}
    for r in records:
        counts[r.label] = counts.get(r.label, 0) + 1
    splits = {}
    for r in records:
        splits[r.split] = splits.get(r.split, 0) + 1
    _append_metrics(run_dir, {"records": len(records), **counts, **splits})
    _write_summary(
        run_dir,
        [
            f"forged {len(records)} records into {run_dir}",
            f"labels: {counts}",
            f"splits: {splits}",
        ],
    )
    return 0


def _cmd_train(args):
    from . import forge
    from .data import ManifestDataset
    from .model import build_model, save_checkpoint
    from .training import train

    rc = _resolve_train_config(args)
    if not rc["data"]:
        raise UsageError("train requires --data (or data in the config file)")
    run_dir = _run_dir_for(args, "train")
    rc.write(run_dir)
    cfg, model_cfg = _train_objects(rc)
    seed = rc["seed"]
    records = forge.read_manifest(os.path.join(rc["data"], "manifest.jsonl"))
    train_recs = [r for r in records if r.split == "train"]
    val_recs = [r for r in records if r.split == "val"]
    train_ds = ManifestDataset(train_recs, rc["data"], cfg.use_frequency)
    val_ds = (
        ManifestDataset(val_recs, rc["data"], cfg.use_frequency) if val_recs else None
    )
    model = build_model(model_cfg, seed)
    result = train(
        model,
        train_ds,
        cfg,
        seed,
        val_dataset=val_ds,
        out_dir=run_dir,
        log=lambda row: print(json.dumps(row)),
    )
    save_checkpoint(os.path.join(run_dir, "checkpoint_final.pt"), model,
                    meta={"seed": seed})
    if result.best_state is not None:
        best = result.best_model()
        save_checkpoint(os.path.join(run_dir, "checkpoint_best.pt"), best,
                        meta={"seed": seed, "val_f1": result.best_val_f1})
    last = result.trace[-1] if result.trace else {}
    _write_summary(
        run_dir,
        [
            f"trained {cfg.epochs} epochs on {len(train_ds)} samples (seed {seed})",
            f"final: l_loc={last.get('l_loc')} l_cls={last.get('l_cls')}",
            f"best val pixel F1: {result.best_val_f1}",
            f"checkpoints in {run_dir}",
        ],
    )
    return 0


def _find_checkpoint(args):
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    if getattr(args, "run_dir", None):
        for name in ("checkpoint_best.pt", "checkpoint_final.pt"):
            path = os.path.join(args.run_dir, name)
            if os.path.exists(path):
                return path
    raise UsageError("provide --checkpoint or --run-dir containing a checkpoint")


def _cmd_eval(args):
    from . import forge
    from .metrics import evaluate, format_table
    from .model import load_checkpoint

    ckpt = _find_checkpoint(args)
    model, _ = load_checkpoint(ckpt)
    records = forge.read_manifest(os.path.join(args.data, "manifest.jsonl"))
    run_dir = _run_dir_for(args, "eval")
    report = evaluate(
        model,
        records,
        args.data,
        subset_filter=args.subset,
        split=args.split,
        device=args.device,
    )
    with open(os.path.join(run_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    headers = ["subset", "pixel_f1", "pixel_iou", "image_f1", "image_acc"]
    rows = [
        ["all", report.pixel_f1, report.pixel_iou, report.image_f1, report.image_acc]
    ]
    for name, m in report.per_subset.items():
        rows.append([name, m["pixel_f1"], m["pixel_iou"], m["image_f1"], m["image_acc"]])
    table = format_table(headers, rows)
    if args.csv:
        with open(os.path.join(run_dir, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(",".join(headers) + "\n")
            for row in rows:
                fh.write(",".join("" if x is None else str(x) for x in row) + "\n")
    _append_metrics(run_dir, report.to_dict())
    _write_summary(run_dir, [f"checkpoint: {ckpt}", f"images: {report.n_images}", table])
    return 0


def _cmd_predict(args):
    from PIL import Image

    from . import forge
    from .model import load_checkpoint, predict_image

    model, _ = load_checkpoint(args.checkpoint)
    image = forge.load_image_png(args.image)
    run_dir = _run_dir_for(args, "predict")
    logits, prob = predict_image(model, image, device=args.device)
    probs = 1.0 / (1.0 + np.exp(-logits[0]))
    stem = os.path.splitext(os.path.basename(args.image))[0]
    mask8 = ((probs > args.threshold) * 255).astype(np.uint8)
    Image.fromarray(mask8, mode="L").save(os.path.join(run_dir, f"{stem}.mask.png"))
    prob16 = np.clip(np.rint(probs * 65535), 0, 65535).astype(np.uint16)
    Image.fromarray(prob16, mode="I;16").save(os.path.join(run_dir, f"{stem}.prob.png"))
    record = {
        "class_prob": prob,
        "fake": bool(prob > args.threshold) if prob is not None else None,
    }
    with open(os.path.join(run_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    _append_metrics(run_dir, record)
    _write_summary(run_dir, [f"prediction for {args.image}: {record}"])
    return 0


def _cmd_features(args):
    from PIL import Image

    from . import forge, freq

    image = forge.load_image_png(args.image)
    padded, _ = freq.pad_to_multiple(image)
    freq.validate_image(padded)
    run_dir = _run_dir_for(args, "features")
    stem = os.path.splitext(os.path.basename(args.image))[0]
    hi_dwt = freq.dwt_highpass(padded)
    low, hi_dct = freq.dct_split(padded, args.cutoff)
    names = {"dwt_hi": hi_dwt, "dct_hi": hi_dct, "dct_lo": low}
    written = []
    for tag, arr in names.items():
        for c in range(3):
            chan = arr[c]
            span = chan.max() - chan.min()
            scaled = (chan - chan.min()) / span if span > 0 else np.zeros_like(chan)
            out = os.path.join(run_dir, f"{stem}.{tag}.{c}.png")
            Image.fromarray((scaled * 255).astype(np.uint8), mode="L").save(out)
            written.append(out)
    _append_metrics(run_dir, {"files": len(written)})
    _write_summary(run_dir, [f"wrote {len(written)} frequency maps to {run_dir}"])
    return 0


def _cmd_ablate(args):
    from . import forge
    from .experiments import ablation_grid
    from .metrics import format_table

    rc = _resolve_train_config(args)
    if not rc["data"]:
        raise UsageError("ablate requires --data")
    run_dir = _run_dir_for(args, "ablate")
    rc.write(run_dir)
    cfg, _ = _train_objects(rc)
    records = forge.read_manifest(os.path.join(rc["data"], "manifest.jsonl"))
    seeds = _int_list(args.seeds)
    grid = ablation_grid(records, rc["data"], seeds, train_cfg=cfg, log=print)
    rows = [
        [name, g["pixel_f1"], g["pixel_iou"], g["image_f1"], g["image_acc"]]
        for name, g in grid.items()
    ]
    table = format_table(
        ["config", "pixel_f1", "pixel_iou", "image_f1", "image_acc"], rows
    )
    _append_metrics(
        run_dir,
        {name: {k: v for k, v in g.items() if k != "runs"} for name, g in grid.items()},
    )
    _write_summary(run_dir, [f"ablation over seeds {seeds}", table])
    return 0


def _cmd_xsub(args):
    from . import forge
    from .experiments import cross_subset_matrix, desk_model_config, model_config_for
    from .metrics import format_table
    from .model import build_model

    rc = _resolve_train_config(args)
    if not rc["data"]:
        raise UsageError("xsub requires --data")
    run_dir = _run_dir_for(args, "xsub")
    rc.write(run_dir)
    cfg, model_cfg = _train_objects(rc)
    records = forge.read_manifest(os.path.join(rc["data"], "manifest.jsonl"))
    methods = sorted({r.edit_method for r in records if r.is_fake})
    train_methods = [args.train_method] if args.train_method else methods
    seeds = _int_list(args.seeds)
    results = []
    for tm in train_methods:
        res = cross_subset_matrix(
            lambda seed: build_model(model_cfg, seed),
            records,
            rc["data"],
            tm,
            methods,
            seeds,
            train_cfg=cfg,
            log=print,
        )
        results.append(res)
        _append_metrics(run_dir, {"train_subset": tm, "median": res["median"]})
    headers = ["train_on"] + [f"{m} F1" for m in methods] + ["real acc"]
    rows = []
    for res in results:
        med = res["median"]
        rows.append(
            [res["train_subset"]]
            + [med[m]["pixel_f1"] for m in methods]
            + [med.get("real", {}).get("image_acc")]
        )
    table = format_table(headers, rows)
    _write_summary(run_dir, [f"cross-subset matrix over seeds {seeds}", table])
    return 0


def _cmd_report(args):
    from .metrics import format_table

    loaded, missing = [], []
    for rd in args.run_dirs:
        cfg_path = os.path.join(rd, "config.json")
        met_path = os.path.join(rd, "metrics.jsonl")
        if not (os.path.exists(cfg_path) and os.path.exists(met_path)):
            missing.append(rd)
            continue
        with open(cfg_path, encoding="utf-8") as fh:
            cfg = json.load(fh).get("values", {})
        with open(met_path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        metrics = json.loads(lines[-1]) if lines else {}
        loaded.append((rd, cfg, metrics))
    for rd in missing:
        print(f"missing config/metrics in: {rd}", file=sys.stderr)
    if not loaded:
        print("no usable run directories", file=sys.stderr)
        return 2
    all_keys = set()
    for _, cfg, _ in loaded:
        all_keys |= set(cfg)
    varying = sorted(
        k
        for k in all_keys
        if len({json.dumps(cfg.get(k), sort_keys=True) for _, cfg, _ in loaded}) > 1
    )
    metric_keys = sorted(
        {
            k
            for _, _, metrics in loaded
            for k, v in metrics.items()
            if isinstance(v, (int, float)) or v is None
        }
    )
    headers = ["run"] + varying + metric_keys
    rows = []
    for rd, cfg, metrics in loaded:
        rows.append(
            [os.path.basename(os.path.normpath(rd))]
            + [cfg.get(k) for k in varying]
            + [metrics.get(k) for k in metric_keys]
        )
    print(format_table(headers, rows))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="imdlkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", help="generate a synthetic dataset")
    p.add_argument("--out-dir")
    p.add_argument("--n-real", type=int, default=None)
    p.add_argument("--n-inpaint", type=int, default=None)
    p.add_argument("--n-t2i", type=int, default=None)
    p.add_argument("--methods", default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ratios", default=None)
    p.set_defaults(fn=_cmd_forge)

    p = sub.add_parser("train", help="train a model on a forged dataset")
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--run-dir")
    p.add_argument("--data", required=True)
    p.add_argument("--subset", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--device", default="cpu")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("predict", help="predict mask and label for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--device", default="cpu")
    p.add_argument("--out-dir")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("features", help="dump frequency maps for inspection")
    p.add_argument("--image", required=True)
    p.add_argument("--cutoff", type=float, default=0.25)
    p.add_argument("--out-dir")
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("ablate", help="run the module-wise ablation grid")
    _add_train_flags(p)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("xsub", help="cross-subset generalization matrix")
    _add_train_flags(p)
    p.add_argument("--train-method", default=None)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(fn=_cmd_xsub)

    p = sub.add_parser("report", help="aggregate metrics across run dirs")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
