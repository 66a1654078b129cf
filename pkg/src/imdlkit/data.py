"""Bridges forge manifests to model tensors.

Images are cached in memory as uint8 and converted (and frequency-decomposed)
per batch; desk-scale datasets fit comfortably. All images in one dataset
must share a single stride-16 size.
"""

from __future__ import annotations

import os

import numpy as np
import torch

from . import forge, freq
from .model import model_inputs


class ManifestDataset:
    def __init__(self, records, root, use_frequency=True, dct_cutoff=freq.DEFAULT_DCT_CUTOFF):
        self.records = list(records)
        if not self.records:
            raise ValueError("dataset is empty")
        self.root = os.fspath(root)
        self.use_frequency = use_frequency
        self.dct_cutoff = dct_cutoff
        self.images = []
        self.masks = []
        self.labels = np.zeros(len(self.records), dtype=np.float32)
        shape = None
        for i, rec in enumerate(self.records):
            arr = forge.load_image_png(os.path.join(self.root, rec.image_path))
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError("all images in a dataset must share one size")
            if arr.shape[1] % freq.PAD_MULTIPLE or arr.shape[2] % freq.PAD_MULTIPLE:
                raise ValueError("forged images must be stride-16 sized")
            self.images.append((arr * 255).astype(np.uint8))
            if rec.mask_path is not None:
                self.masks.append(
                    forge.load_mask_png(os.path.join(self.root, rec.mask_path))
                )
            else:
                self.masks.append(None)
            self.labels[i] = 1.0 if rec.is_fake else 0.0
        self.image_shape = shape

    def __len__(self):
        return len(self.records)

    def subset(self, predicate) -> "ManifestDataset":
        """Shallow-copied dataset filtered by predicate(record)."""
        keep = [i for i, r in enumerate(self.records) if predicate(r)]
        if not keep:
            raise ValueError("subset predicate matched no records")
        out = object.__new__(ManifestDataset)
        out.records = [self.records[i] for i in keep]
        out.root = self.root
        out.use_frequency = self.use_frequency
        out.dct_cutoff = self.dct_cutoff
        out.images = [self.images[i] for i in keep]
        out.masks = [self.masks[i] for i in keep]
        out.labels = self.labels[keep]
        out.image_shape = self.image_shape
        return out

    def batch(self, indices, device="cpu"):
        """Assemble tensors for the given sample indices."""
        highs, lows, masks = [], [], []
        _, h, w = self.image_shape
        for i in indices:
            img = self.images[i].astype(np.float32) / 255.0
            m_high, m_low = model_inputs(img, self.use_frequency, self.dct_cutoff)
            highs.append(m_high)
            lows.append(m_low)
            m = self.masks[i]
            masks.append(
                m.astype(np.float32) if m is not None else np.zeros((h, w), np.float32)
            )
        return {
            "m_high": torch.from_numpy(np.stack(highs)).to(device),
            "m_low": torch.from_numpy(np.stack(lows)).to(device),
            "mask": torch.from_numpy(np.stack(masks)[:, None]).to(device),
            "label": torch.from_numpy(self.labels[np.asarray(indices)]).to(device),
            "is_fake": self.labels[np.asarray(indices)] > 0.5,
        }


def load_dataset(dataset_dir, split=None, use_frequency=True, dct_cutoff=freq.DEFAULT_DCT_CUTOFF):
    """Read manifest.jsonl under dataset_dir, optionally filtered by split."""
    records = forge.read_manifest(os.path.join(dataset_dir, "manifest.jsonl"))
    if split is not None:
        records = [r for r in records if r.split == split]
    return ManifestDataset(records, dataset_dir, use_frequency, dct_cutoff)
