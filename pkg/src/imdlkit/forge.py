"""Synthetic forgery forge: procedural line-art scenes, deterministic edits,
mask postprocessing, and the partitioned manifest.

Scenes are flat-color shapes with uniform dark contour lines on a plain
background. Edits alter only the masked region (with an inward feather band)
and each edit family leaves its own statistical trace, standing in for the
fingerprints of distinct generators:

* forge_recolor    hue rotation plus a small value remap
* forge_restyle    interior smoothing, darkening, and contour thickening
* forge_retexture  band-limited noise injection with a small bias

Masks are strictly binary. Manifests are JSONL, one record per line.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color as skcolor
from skimage import draw as skdraw

EDIT_METHODS = ("forge_recolor", "forge_restyle", "forge_retexture")
SHAPE_KINDS = ("circle", "ellipse", "triangle", "square", "star")
PALETTE = {
    "red": 0.00,
    "orange": 0.07,
    "yellow": 0.14,
    "green": 0.33,
    "cyan": 0.50,
    "blue": 0.62,
    "purple": 0.76,
    "pink": 0.90,
}
DEFAULT_CLOSE_RADIUS = 2
DEFAULT_FEATHER_PX = 2
DEFAULT_HUE_SHIFT = 0.25


@dataclass
class SampleRecord:
    id: str
    image_path: str
    label: str  # real | inpaint | t2i
    mask_path: str | None
    caption: str
    objects: list
    mask_label: str
    mask_type: str | None  # single_instance | multi_instance | multi_class
    edit_method: str
    split: str | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        return cls(**json.loads(line))

    @property
    def unit(self) -> str:
        """Source-image unit id (prefix of the record id)."""
        return self.id.split("_", 1)[0]

    @property
    def is_fake(self) -> bool:
        return self.label != "real"


# ---------------------------------------------------------------------------
# scene generation


def _hsv_to_rgb(h, s, v):
    return skcolor.hsv2rgb(np.array([[[h, s, v]]], dtype=np.float64))[0, 0]


def _disk_footprint(radius: int) -> np.ndarray:
    y, x = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return (x * x + y * y) <= radius * radius


def _shape_mask(rng, kind, h, w, radius):
    cy = rng.uniform(radius + 3, h - radius - 3)
    cx = rng.uniform(radius + 3, w - radius - 3)
    mask = np.zeros((h, w), dtype=bool)
    if kind == "circle":
        rr, cc = skdraw.disk((cy, cx), radius, shape=(h, w))
    elif kind == "ellipse":
        ry = radius
        rx = radius * rng.uniform(0.55, 0.85)
        rot = rng.uniform(0, np.pi)
        rr, cc = skdraw.ellipse(cy, cx, ry, rx, shape=(h, w), rotation=rot)
    else:
        if kind == "triangle":
            n_pts, step = 3, 1
        elif kind == "square":
            n_pts, step = 4, 1
        else:  # star
            n_pts, step = 10, 1
        angles = np.linspace(0, 2 * np.pi, n_pts, endpoint=False)
        angles += rng.uniform(0, 2 * np.pi)
        radii = np.full(n_pts, float(radius))
        if kind == "star":
            radii[1::2] *= 0.45
        ys = cy + radii * np.sin(angles)
        xs = cx + radii * np.cos(angles)
        rr, cc = skdraw.polygon(ys, xs, shape=(h, w))
        del step
    mask[rr, cc] = True
    return mask


def gen_scene(seed: int, size=(256, 256), line_px: int = 2):
    """Procedural line-art scene; deterministic per seed.

    Returns (image (3, H, W) float32 in [0, 1],
             regions list of (label, mask (H, W) bool)).
    Regions have area >= 1% of the frame and pairwise overlap < 30% of
    either region's area.
    """
    h, w = size
    if h < 64 or w < 64:
        raise ValueError(f"scene size must be at least 64x64, got {h}x{w}")
    rng = np.random.default_rng(seed)

    bg_hue = rng.uniform(0, 1)
    top = _hsv_to_rgb(bg_hue, rng.uniform(0.04, 0.12), rng.uniform(0.88, 0.96))
    bottom = _hsv_to_rgb(bg_hue, rng.uniform(0.04, 0.12), rng.uniform(0.80, 0.90))
    ramp = np.linspace(0.0, 1.0, h)[None, :, None]
    img = (top[:, None, None] * (1 - ramp) + bottom[:, None, None] * ramp)
    img = np.broadcast_to(img, (3, h, w)).copy()

    min_area = 0.01 * h * w
    n_objects = int(rng.integers(2, 7))
    regions = []
    placed = []
    for _ in range(n_objects):
        best = None
        best_overlap = np.inf
        for _attempt in range(120):
            kind = rng.choice(SHAPE_KINDS)
            color_name = rng.choice(sorted(PALETTE))
            radius = rng.uniform(0.10, 0.17) * min(h, w)
            mask = _shape_mask(rng, kind, h, w, radius)
            if mask.sum() < min_area:
                continue
            worst = 0.0
            for other in placed:
                inter = np.logical_and(mask, other).sum()
                worst = max(worst, inter / mask.sum(), inter / other.sum())
            if worst < best_overlap:
                best = (kind, color_name, mask)
                best_overlap = worst
            if worst < 0.30:
                break
        if best is None:
            continue
        kind, color_name, mask = best
        hue = (PALETTE[color_name] + rng.uniform(-0.02, 0.02)) % 1.0
        fill = _hsv_to_rgb(hue, rng.uniform(0.55, 0.9), rng.uniform(0.55, 0.95))
        line = _hsv_to_rgb(hue, rng.uniform(0.2, 0.4), rng.uniform(0.06, 0.14))
        interior = ndimage.binary_erosion(mask, structure=_disk_footprint(line_px))
        contour = mask & ~interior
        img[:, interior] = fill[:, None]
        img[:, contour] = line[:, None]
        regions.append((f"{color_name} {kind}", mask))
        placed.append(mask)

    labels = [label for label, _ in regions]

    def article(lbl):
        return f"an {lbl}" if lbl[0] in "aeiou" else f"a {lbl}"

    listing = ", ".join(article(lbl) for lbl in labels[:-1])
    caption = (
        f"an illustration of {listing} and {article(labels[-1])} on a plain background"
        if len(labels) > 1
        else f"an illustration of {article(labels[0])} on a plain background"
    )
    return img.astype(np.float32), regions, caption


# ---------------------------------------------------------------------------
# edits


def _luminance(image):
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def _recolor(image, rng, hue_shift):
    hsv = skcolor.rgb2hsv(np.moveaxis(image, 0, -1))
    hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
    hsv[..., 2] = np.clip(hsv[..., 2] * 0.9 + 0.08, 0.0, 1.0)
    return np.moveaxis(skcolor.hsv2rgb(hsv), -1, 0)


def _restyle(image, rng, line_px=2):
    blurred = np.stack([ndimage.gaussian_filter(ch, sigma=1.5) for ch in image])
    edited = np.clip(blurred - 0.04, 0.0, 1.0)
    dark = _luminance(image) < 0.30
    thick = ndimage.binary_dilation(dark, structure=_disk_footprint(line_px))
    edited[:, thick] *= 0.35
    return edited


def _retexture(image, rng, amplitude=0.07):
    noise = rng.standard_normal(image.shape)
    band = np.stack(
        [
            ndimage.gaussian_filter(ch, sigma=0.7) - ndimage.gaussian_filter(ch, sigma=2.2)
            for ch in noise
        ]
    )
    band /= band.std() + 1e-12
    return np.clip(image + amplitude * band + 0.03, 0.0, 1.0)


def apply_edit(
    image: np.ndarray,
    mask: np.ndarray,
    method: str,
    seed: int,
    feather_px: int = DEFAULT_FEATHER_PX,
    hue_shift: float = DEFAULT_HUE_SHIFT,
):
    """Alter the masked region with the named method.

    Pixels outside the mask are returned bit-for-bit unchanged; inside, the
    edit is blended over an inward feather band of `feather_px` pixels so
    region boundaries are not razor-sharp.
    """
    if not mask.any():
        raise ValueError("edit mask is empty")
    if method == "identity":
        return image.copy()
    rng = np.random.default_rng(seed)
    img = image.astype(np.float64)
    if method == "forge_recolor":
        edited = _recolor(img, rng, hue_shift)
    elif method == "forge_restyle":
        edited = _restyle(img, rng)
    elif method == "forge_retexture":
        edited = _retexture(img, rng)
    else:
        raise ValueError(f"unknown edit method: {method}")
    dist = ndimage.distance_transform_edt(mask)
    alpha = np.clip(dist / (feather_px + 1.0), 0.0, 1.0)
    out = img + alpha[None] * (edited - img)
    return out.astype(image.dtype)


# ---------------------------------------------------------------------------
# mask postprocessing


def close_mask(mask: np.ndarray, radius: int = DEFAULT_CLOSE_RADIUS) -> np.ndarray:
    """Morphological closing with a disc element (true closing on the plane).

    The mask is padded before dilation/erosion so image borders behave like
    the infinite zero plane, which keeps closing idempotent.
    """
    if radius < 1:
        raise ValueError("closing radius must be >= 1")
    foot = _disk_footprint(radius)
    pad = 2 * radius
    padded = np.pad(mask.astype(bool), pad)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, foot), foot)
    return closed[pad:-pad, pad:-pad]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def merge_masks(per_label_masks: dict, iou_thresh: float = 0.9):
    """Merge instance masks per label, then near-duplicate labels.

    Masks sharing one label become their union (multi_instance when the
    label had several instances). After that, any pair of entries with
    different labels whose IoU exceeds `iou_thresh` is unioned into a
    multi_class entry with the joined label; merging repeats to a fixed
    point. Returns a list of (mask, mask_type, label).
    """
    entries = []
    for label in sorted(per_label_masks):
        masks = per_label_masks[label]
        if not masks:
            continue
        union = np.logical_or.reduce([m.astype(bool) for m in masks])
        kind = "multi_instance" if len(masks) > 1 else "single_instance"
        entries.append((union, kind, label))

    changed = True
    while changed:
        changed = False
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                mi, _, li = entries[i]
                mj, _, lj = entries[j]
                if mask_iou(mi, mj) > iou_thresh:
                    merged = (np.logical_or(mi, mj), "multi_class", f"{li}+{lj}")
                    entries = (
                        entries[:i] + [merged] + entries[i + 1 : j] + entries[j + 1 :]
                    )
                    changed = True
                    break
            if changed:
                break
    return entries


# ---------------------------------------------------------------------------
# image / manifest IO


def save_image_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB").save(path)


def load_image_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0)


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json(line))
    return records


# ---------------------------------------------------------------------------
# dataset assembly


def _scene_seed(seed, unit, stream):
    return int(np.random.SeedSequence([seed, unit, stream]).generate_state(1)[0])


def _pick_region(scene_regions, seed, unit, cycle, close_radius):
    """Choose one object label, close its masks, and merge instances."""
    rng = np.random.default_rng([seed, unit, cycle, 71])
    labels = sorted({label for label, _ in scene_regions})
    label = labels[int(rng.integers(len(labels)))]
    masks = [close_mask(m, close_radius) for lbl, m in scene_regions if lbl == label]
    merged = merge_masks({label: masks})
    return merged[0]


def build_dataset(
    out_dir,
    n_real: int,
    n_inpaint_per_method: int,
    n_t2i_per_method: int,
    methods=EDIT_METHODS,
    seed: int = 0,
    size=(256, 256),
    close_radius: int = DEFAULT_CLOSE_RADIUS,
    feather_px: int = DEFAULT_FEATHER_PX,
    ratios=(8, 1, 1),
):
    """Forge a balanced dataset and write images/, masks/, manifest.jsonl.

    Inpainted fakes derive from the real scenes (cycling when there are more
    fakes than reals) so source units group reals with their edits; with
    n_real == 0 each fake index gets its own fresh source scene. All fakes of
    one source share the edited region across methods.
    """
    if min(n_real, n_inpaint_per_method, n_t2i_per_method) < 0:
        raise ValueError("sample counts must be non-negative")
    methods = list(methods)
    out_dir = os.fspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    pool = n_real if n_real > 0 else max(n_inpaint_per_method, 1)
    scenes = {}  # unit -> (image, regions, caption)

    def scene(unit):
        if unit not in scenes:
            scenes[unit] = gen_scene(_scene_seed(seed, unit, 0), size)
        return scenes[unit]

    records = []
    full_mask = np.ones(size, dtype=bool)

    for i in range(n_real):
        image, regions, caption = scene(i)
        rid = f"u{i:05d}_real"
        rel = f"images/{rid}.png"
        save_image_png(os.path.join(out_dir, rel), image)
        records.append(
            SampleRecord(
                id=rid,
                image_path=rel,
                label="real",
                mask_path=None,
                caption=caption,
                objects=[lbl for lbl, _ in regions],
                mask_label="",
                mask_type=None,
                edit_method="none",
            )
        )

    for mi, method in enumerate(methods):
        for j in range(n_inpaint_per_method):
            unit = j % pool
            cycle = j // pool
            image, regions, caption = scene(unit)
            mask, mask_type, mask_label = _pick_region(
                regions, seed, unit, cycle, close_radius
            )
            edit_seed = _scene_seed(seed, unit, 100 + mi * 1000 + cycle)
            edited = apply_edit(image, mask, method, edit_seed, feather_px)
            rid = f"u{unit:05d}_inp_{method}_{cycle}"
            rel_img = f"images/{rid}.png"
            rel_mask = f"masks/{rid}.png"
            save_image_png(os.path.join(out_dir, rel_img), edited)
            save_mask_png(os.path.join(out_dir, rel_mask), mask)
            records.append(
                SampleRecord(
                    id=rid,
                    image_path=rel_img,
                    label="inpaint",
                    mask_path=rel_mask,
                    caption=caption,
                    objects=[lbl for lbl, _ in regions],
                    mask_label=mask_label,
                    mask_type=mask_type,
                    edit_method=method,
                )
            )

    for mi, method in enumerate(methods):
        for j in range(n_t2i_per_method):
            unit = j % pool
            cycle = j // pool
            t2i_seed = _scene_seed(seed, unit, 500 + mi * 1000 + cycle)
            image, regions, caption = gen_scene(t2i_seed, size)
            edited = apply_edit(image, full_mask, method, t2i_seed + 1, feather_px)
            rid = f"u{unit:05d}_t2i_{method}_{cycle}"
            rel_img = f"images/{rid}.png"
            rel_mask = f"masks/{rid}.png"
            save_image_png(os.path.join(out_dir, rel_img), edited)
            save_mask_png(os.path.join(out_dir, rel_mask), full_mask)
            records.append(
                SampleRecord(
                    id=rid,
                    image_path=rel_img,
                    label="t2i",
                    mask_path=rel_mask,
                    caption=caption,
                    objects=[lbl for lbl, _ in regions],
                    mask_label="full image",
                    mask_type="single_instance",
                    edit_method=method,
                )
            )

    partition(records, ratios=ratios, seed=seed)
    write_manifest(records, os.path.join(out_dir, "manifest.jsonl"))
    return records


def partition(records, ratios=(8, 1, 1), seed: int = 0):
    """Assign train/val/test splits at source-unit granularity.

    Units with the same composition (multiset of label/method pairs) are
    interchangeable, so splitting within each composition group keeps every
    label-method stratum within one unit of the requested ratios while
    derived fakes always follow their source.
    """
    if not records:
        raise ValueError("no records to partition")
    total = float(sum(ratios))
    fracs = [r / total for r in ratios]
    units = {}
    for rec in records:
        units.setdefault(rec.unit, []).append(rec)
    groups = {}
    for unit, recs in units.items():
        signature = tuple(sorted((r.label, r.edit_method) for r in recs))
        groups.setdefault(signature, []).append(unit)

    rng = np.random.default_rng(seed)
    names = ("train", "val", "test")
    for signature in sorted(groups):
        unit_ids = sorted(groups[signature])
        rng.shuffle(unit_ids)
        n = len(unit_ids)
        quota = [f * n for f in fracs]
        counts = [int(np.floor(q)) for q in quota]
        rest = n - sum(counts)
        order = sorted(range(3), key=lambda k: quota[k] - counts[k], reverse=True)
        for k in order[:rest]:
            counts[k] += 1
        idx = 0
        for name, cnt in zip(names, counts):
            for unit in unit_ids[idx : idx + cnt]:
                for rec in units[unit]:
                    rec.split = name
            idx += cnt
    return records
