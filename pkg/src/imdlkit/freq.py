"""Frequency decompositions and the 6-channel mixed inputs of the dual-branch model.

Images are (3, H, W) float arrays with intensities in [0, 1]. High-frequency
content comes from a single-level orthonormal Haar wavelet with the
approximation band removed; the low/high split of the spectrum comes from a
full-image orthonormal DCT with a radial cutoff. Every transform here is
linear and exactly invertible, so low + high always reassembles the input.

All computation is done in float64; callers feeding a model cast down.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEFAULT_DCT_CUTOFF = 0.25
PAD_MULTIPLE = 16


@dataclass
class WaveletSubbands:
    """Single-level 2-D Haar subbands, each (C, H/2, W/2)."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def shapes_consistent(self) -> bool:
        s = self.ll.shape
        return self.lh.shape == s and self.hl.shape == s and self.hh.shape == s


@dataclass
class MixedInput:
    """A (6, H, W) tensor: the image stacked with one of its frequency maps."""

    data: np.ndarray
    kind: str  # "high" or "low"


def validate_image(image: np.ndarray, require_multiple: bool = True) -> None:
    """Check the (3, H, W) / finiteness / [0, 1] / stride-16 contract."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    if require_multiple:
        _, h, w = image.shape
        if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
            raise ValueError(
                f"H and W must be multiples of {PAD_MULTIPLE}, got {h}x{w}"
            )


def pad_to_multiple(image: np.ndarray, multiple: int = PAD_MULTIPLE):
    """Reflection-pad bottom/right so H and W are multiples of `multiple`.

    Returns (padded, (orig_h, orig_w)); crop predictions back with the
    returned original size.
    """
    _, h, w = image.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return padded, (h, w)


def dwt2(image: np.ndarray) -> WaveletSubbands:
    """Single-level orthonormal 2-D Haar decomposition, per channel.

    For a 2x2 block [[a, b], [c, d]] the subband values are
    ll=(a+b+c+d)/2, lh=(a+b-c-d)/2, hl=(a-b+c-d)/2, hh=(a-b-c+d)/2,
    which preserves energy exactly.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {x.shape}")
    _, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"H and W must be even for dwt2, got {h}x{w}")
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return WaveletSubbands(
        ll=(a + b + c + d) / 2.0,
        lh=(a + b - c - d) / 2.0,
        hl=(a - b + c - d) / 2.0,
        hh=(a - b - c + d) / 2.0,
    )


def idwt2(subbands: WaveletSubbands) -> np.ndarray:
    """Exact inverse of :func:`dwt2`; returns a (C, H, W) array."""
    if not subbands.shapes_consistent():
        raise ValueError("subband shapes do not match")
    ll, lh, hl, hh = subbands.ll, subbands.lh, subbands.hl, subbands.hh
    c, hh2, ww2 = ll.shape
    out = np.empty((c, hh2 * 2, ww2 * 2), dtype=np.float64)
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[:, 0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[:, 1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def dwt_highpass(image: np.ndarray) -> np.ndarray:
    """Full-resolution Haar high-frequency residual (approximation band zeroed)."""
    sub = dwt2(image)
    sub.ll = np.zeros_like(sub.ll)
    return idwt2(sub)


@lru_cache(maxsize=8)
def _dct_matrix(n: int) -> np.ndarray:
    # orthonormal type-II DCT basis, rows indexed by frequency
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * k / (2.0 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    return m


def dct2(image: np.ndarray) -> np.ndarray:
    """Full-image orthonormal type-II 2-D DCT per channel."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {x.shape}")
    _, h, w = x.shape
    dh = _dct_matrix(h)
    dw = _dct_matrix(w)
    return np.matmul(np.matmul(dh, x), dw.T)


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2` (transpose of the orthonormal basis)."""
    x = np.asarray(coeffs, dtype=np.float64)
    _, h, w = x.shape
    dh = _dct_matrix(h)
    dw = _dct_matrix(w)
    return np.matmul(np.matmul(dh.T, x), dw)


def dct_split(image: np.ndarray, cutoff: float = DEFAULT_DCT_CUTOFF):
    """Split an image into complementary low/high DCT bands.

    A coefficient at (u, v) belongs to the low band when its normalized
    radial index (u/H + v/W)/2 is below `cutoff`. The high band is the exact
    pixel-space remainder, so low + high == image.
    """
    if not 0.0 < cutoff < 1.0:
        raise ValueError(f"cutoff must lie in (0, 1), got {cutoff}")
    x = np.asarray(image, dtype=np.float64)
    coeffs = dct2(x)
    _, h, w = x.shape
    u = np.arange(h)[:, None] / h
    v = np.arange(w)[None, :] / w
    keep = (u + v) / 2.0 < cutoff
    low = idct2(coeffs * keep)
    high = x - low
    return low, high


def build_mixed_inputs(image: np.ndarray, cutoff: float = DEFAULT_DCT_CUTOFF):
    """Assemble the two 6-channel encoder inputs.

    The high-frequency input stacks the image with the mean of its Haar and
    DCT high-pass maps; the low-frequency input stacks it with the DCT
    low band. Channels 0-2 are the source image verbatim.
    """
    x = np.asarray(image, dtype=np.float64)
    hi_dwt = dwt_highpass(x)
    low, hi_dct = dct_split(x, cutoff)
    m_high = np.concatenate([x, 0.5 * (hi_dwt + hi_dct)], axis=0)
    m_low = np.concatenate([x, low], axis=0)
    return MixedInput(m_high, "high"), MixedInput(m_low, "low")
