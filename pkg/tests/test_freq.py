"""Frequency transform contracts: round trips, complementarity, shapes."""

import numpy as np
import pytest

from imdlkit import freq


def random_image(shape=(3, 32, 32), seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape)


# -- dwt2 / idwt2 -----------------------------------------------------------


def test_dwt2_constant_image_has_zero_detail():
    img = np.full((3, 16, 16), 0.5)
    sub = freq.dwt2(img)
    assert np.all(sub.lh == 0) and np.all(sub.hl == 0) and np.all(sub.hh == 0)
    assert np.allclose(sub.ll, 1.0)  # 0.5 * 2 under the orthonormal scaling


def test_dwt2_roundtrip_identity():
    img = random_image((3, 32, 48), seed=1)
    back = freq.idwt2(freq.dwt2(img))
    assert np.max(np.abs(back - img)) < 1e-6


def test_dwt2_single_block_matches_hand_applied_haar():
    # hand application of the 1-D orthonormal pair transform twice:
    # rows: (a+b)/sqrt2, (a-b)/sqrt2 then columns again => /2 combinations
    a, b, c, d = 0.7, 0.1, 0.4, 0.9
    img = np.array([[[a, b], [c, d]]])
    sub = freq.dwt2(img)
    assert sub.ll[0, 0, 0] == pytest.approx((a + b + c + d) / 2)
    assert sub.lh[0, 0, 0] == pytest.approx((a + b - c - d) / 2)
    assert sub.hl[0, 0, 0] == pytest.approx((a - b + c - d) / 2)
    assert sub.hh[0, 0, 0] == pytest.approx((a - b - c + d) / 2)


def test_dwt2_energy_preserved():
    img = random_image(seed=2)
    sub = freq.dwt2(img)
    e_img = np.sum(img**2)
    e_sub = sum(np.sum(s**2) for s in (sub.ll, sub.lh, sub.hl, sub.hh))
    assert abs(e_sub - e_img) / e_img < 1e-5


def test_dwt2_rejects_odd_dims():
    with pytest.raises(ValueError):
        freq.dwt2(np.zeros((3, 15, 16)))
    with pytest.raises(ValueError):
        freq.dwt2(np.zeros((3, 16, 15)))


def test_idwt2_zero_subbands_give_zero_image():
    z = np.zeros((3, 8, 8))
    sub = freq.WaveletSubbands(z, z, z, z)
    assert np.all(freq.idwt2(sub) == 0)


def test_idwt2_rejects_mismatched_subbands():
    sub = freq.WaveletSubbands(
        np.zeros((3, 8, 8)), np.zeros((3, 8, 8)), np.zeros((3, 8, 8)),
        np.zeros((3, 4, 8)),
    )
    with pytest.raises(ValueError):
        freq.idwt2(sub)


def test_idwt2_ll_only_replicates_block_means():
    img = random_image((2, 8, 8), seed=3)
    sub = freq.dwt2(img)
    sub.lh = np.zeros_like(sub.lh)
    sub.hl = np.zeros_like(sub.hl)
    sub.hh = np.zeros_like(sub.hh)
    smooth = freq.idwt2(sub)
    # independent oracle: brute-force per-2x2-block means
    oracle = np.empty_like(img)
    for ch in range(img.shape[0]):
        for i in range(0, 8, 2):
            for j in range(0, 8, 2):
                oracle[ch, i : i + 2, j : j + 2] = img[ch, i : i + 2, j : j + 2].mean()
    assert np.max(np.abs(smooth - oracle)) < 1e-12


# -- dwt_highpass ------------------------------------------------------------


def test_dwt_highpass_constant_is_zero():
    out = freq.dwt_highpass(np.full((3, 16, 16), 0.37))
    assert np.max(np.abs(out)) < 1e-12


def test_dwt_highpass_is_image_minus_lowpass():
    img = random_image(seed=4)
    sub = freq.dwt2(img)
    sub.lh = np.zeros_like(sub.lh)
    sub.hl = np.zeros_like(sub.hl)
    sub.hh = np.zeros_like(sub.hh)
    lowpass = freq.idwt2(sub)
    assert np.max(np.abs(freq.dwt_highpass(img) - (img - lowpass))) < 1e-6


def test_dwt_highpass_single_pixel_confined_to_block():
    img = np.zeros((1, 16, 16))
    img[0, 5, 6] = 1.0  # inside block rows 4:6, cols 6:8
    out = freq.dwt_highpass(img)
    # oracle: zero the ll subband explicitly and invert
    sub = freq.dwt2(img)
    oracle = freq.idwt2(
        freq.WaveletSubbands(np.zeros_like(sub.ll), sub.lh, sub.hl, sub.hh)
    )
    assert np.allclose(out, oracle)
    support = np.argwhere(np.abs(out[0]) > 1e-12)
    assert support.size > 0
    assert set(map(tuple, support)).issubset({(4, 6), (4, 7), (5, 6), (5, 7)})


# -- dct2 / dct_split ---------------------------------------------------------


def naive_dct2(image):
    """O(N^4) type-II orthonormal DCT, straight from the definition."""
    c, h, w = image.shape
    out = np.zeros_like(image, dtype=np.float64)
    for ch in range(c):
        for u in range(h):
            au = np.sqrt(1.0 / h) if u == 0 else np.sqrt(2.0 / h)
            for v in range(w):
                av = np.sqrt(1.0 / w) if v == 0 else np.sqrt(2.0 / w)
                s = 0.0
                for i in range(h):
                    for j in range(w):
                        s += (
                            image[ch, i, j]
                            * np.cos(np.pi * (2 * i + 1) * u / (2 * h))
                            * np.cos(np.pi * (2 * j + 1) * v / (2 * w))
                        )
                out[ch, u, v] = au * av * s
    return out


def test_dct2_constant_image_is_dc_only():
    h, w = 16, 32
    img = np.full((3, h, w), 0.4)
    coef = freq.dct2(img)
    assert coef[0, 0, 0] == pytest.approx(0.4 * np.sqrt(h * w))
    rest = coef.copy()
    rest[:, 0, 0] = 0
    assert np.max(np.abs(rest)) < 1e-10


def test_dct2_parseval():
    img = random_image(seed=5)
    coef = freq.dct2(img)
    assert abs(np.sum(coef**2) - np.sum(img**2)) / np.sum(img**2) < 1e-5


def test_dct2_roundtrip_identity():
    img = random_image((3, 24, 16), seed=6)
    assert np.max(np.abs(freq.idct2(freq.dct2(img)) - img)) < 1e-6


def test_dct2_matches_naive_oracle_on_ramp():
    ramp = np.linspace(0, 1, 16).reshape(1, 4, 4)
    assert np.max(np.abs(freq.dct2(ramp) - naive_dct2(ramp))) < 1e-10


def test_dct_split_complementary():
    img = random_image(seed=7)
    for cutoff in (0.1, 0.25, 0.5, 0.9):
        low, high = freq.dct_split(img, cutoff)
        assert np.max(np.abs(low + high - img)) < 1e-12


def test_dct_split_cutoff_near_one_keeps_everything():
    img = random_image(seed=8)
    low, high = freq.dct_split(img, 0.999999)
    assert np.max(np.abs(low - img)) < 1e-6
    assert np.max(np.abs(high)) < 1e-6


def test_dct_split_constant_image_all_low():
    img = np.full((3, 16, 16), 0.8)
    low, high = freq.dct_split(img, 0.25)
    assert np.max(np.abs(high)) < 1e-10


def test_dct_split_rejects_bad_cutoff():
    img = np.zeros((3, 16, 16))
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            freq.dct_split(img, bad)


# -- build_mixed_inputs -------------------------------------------------------


def test_mixed_inputs_shapes_and_kinds():
    img = random_image((3, 64, 64), seed=9)
    m_high, m_low = freq.build_mixed_inputs(img)
    assert m_high.data.shape == (6, 64, 64) and m_high.kind == "high"
    assert m_low.data.shape == (6, 64, 64) and m_low.kind == "low"


def test_mixed_inputs_first_channels_are_the_image():
    img = random_image(seed=10)
    m_high, m_low = freq.build_mixed_inputs(img)
    assert np.array_equal(m_high.data[:3], img)
    assert np.array_equal(m_low.data[:3], img)


def test_mixed_inputs_constant_image():
    img = np.full((3, 32, 32), 0.6)
    m_high, m_low = freq.build_mixed_inputs(img)
    assert np.max(np.abs(m_high.data[3:])) < 1e-10
    assert np.max(np.abs(m_low.data[3:] - img)) < 1e-10


def test_mixed_inputs_high_is_mean_of_both_highpass_maps():
    img = random_image(seed=11)
    m_high, _ = freq.build_mixed_inputs(img, cutoff=0.25)
    # recompute the two maps independently
    hp_wavelet = freq.dwt_highpass(img)
    _, hp_dct = freq.dct_split(img, 0.25)
    assert np.max(np.abs(m_high.data[3:] - 0.5 * (hp_wavelet + hp_dct))) < 1e-12


def test_mixed_inputs_frequency_channels_linear():
    rng = np.random.default_rng(12)
    i1 = rng.uniform(0, 1, (3, 32, 32))
    i2 = rng.uniform(0, 1, (3, 32, 32))
    a, b = 0.7, -0.3
    mh, ml = freq.build_mixed_inputs(a * i1 + b * i2)
    mh1, ml1 = freq.build_mixed_inputs(i1)
    mh2, ml2 = freq.build_mixed_inputs(i2)
    assert np.max(np.abs(mh.data[3:] - (a * mh1.data[3:] + b * mh2.data[3:]))) < 1e-5
    assert np.max(np.abs(ml.data[3:] - (a * ml1.data[3:] + b * ml2.data[3:]))) < 1e-5


def test_roundtrips_on_many_random_images():
    rng = np.random.default_rng(13)
    for _ in range(10):
        h = 2 * int(rng.integers(4, 40))
        w = 2 * int(rng.integers(4, 40))
        img = rng.uniform(0, 1, (3, h, w))
        assert np.max(np.abs(freq.idwt2(freq.dwt2(img)) - img)) < 1e-6
        assert np.max(np.abs(freq.idct2(freq.dct2(img)) - img)) < 1e-6


# -- padding / validation -----------------------------------------------------


def test_pad_to_multiple_and_validate():
    img = np.random.default_rng(14).uniform(0, 1, (3, 50, 70))
    padded, (h, w) = freq.pad_to_multiple(img)
    assert (h, w) == (50, 70)
    assert padded.shape == (3, 64, 80)
    assert np.array_equal(padded[:, :50, :70], img)
    freq.validate_image(padded)
    with pytest.raises(ValueError):
        freq.validate_image(img)  # not a multiple of 16
    with pytest.raises(ValueError):
        freq.validate_image(np.full((3, 16, 16), 2.0))
    with pytest.raises(ValueError):
        freq.validate_image(np.full((3, 16, 16), np.nan))
