"""Constant-Q transform: tone localization, dB scaling, frame geometry,
model-input standardization, resizing, and spectrogram masking."""

import math

import numpy as np
import pytest

from gsenet.audio import AudioClip
from gsenet.cqt import (CqtParams, SpecAugmentPolicy, bilinear_resize, cqt,
                        spec_augment, to_model_input)
from gsenet.errors import DataError, ShapeError


def tone_clip(freq, seconds=32.0, amp=0.5, sr=32000):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip((amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), sr)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def test_default_geometry():
    p = CqtParams()
    assert p.hop == 800  # 25 ms at 32 kHz
    assert p.n_bins == 255
    # independent recomputation of the Q factor
    assert p.q_factor == pytest.approx(1.0 / (2 ** (1 / 24) - 1))
    assert p.bin_frequency(0) == pytest.approx(10.0)
    assert p.bin_frequency(24) == pytest.approx(20.0)
    # kernel length ceil(Q * sr / f_k), longest at the lowest bin
    assert p.kernel_length(0) == math.ceil(p.q_factor * 32000 / 10.0)
    assert p.kernel_length(0) > p.kernel_length(24)


def test_frequency_to_bin_formula():
    p = CqtParams()
    for k in (0, 1, 24, 100, 254):
        assert p.frequency_to_bin(10.0 * 2 ** (k / 24)) == k
    assert p.frequency_to_bin(200.0) == round(24 * math.log2(20.0))


def test_params_validation():
    with pytest.raises(DataError):
        CqtParams(f_min=0.0)
    with pytest.raises(DataError):
        CqtParams(n_bins=0)
    with pytest.raises(DataError):
        CqtParams(sample_rate=8000)  # top bin far beyond Nyquist


# ---------------------------------------------------------------------------
# Transform
# ---------------------------------------------------------------------------


def test_pure_tone_peaks_at_the_right_bin():
    p = CqtParams()
    spec = cqt(tone_clip(200.0), p)
    profile = spec.values.mean(axis=1)
    assert abs(int(np.argmax(profile)) - p.frequency_to_bin(200.0)) <= 1


def test_octave_shift_moves_exactly_24_bins():
    p = CqtParams()
    lo = cqt(tone_clip(150.0), p).values.mean(axis=1)
    hi = cqt(tone_clip(300.0), p).values.mean(axis=1)
    shift = int(np.argmax(hi)) - int(np.argmax(lo))
    assert abs(shift - 24) <= 1


def test_amplitude_maps_to_decibels():
    p = CqtParams()
    loud = cqt(tone_clip(500.0, amp=0.5), p).values
    quiet = cqt(tone_clip(500.0, amp=0.05), p).values
    k = p.frequency_to_bin(500.0)
    diff = loud[k].mean() - quiet[k].mean()
    assert diff == pytest.approx(20.0, abs=0.5)


def test_silence_hits_the_log_floor():
    p = CqtParams()
    n = p.kernel_length(0) + 5 * p.hop
    spec = cqt(AudioClip(np.zeros(n, dtype=np.float32), 32000), p)
    assert np.all(spec.values == pytest.approx(-200.0))


def test_frame_count_formula():
    p = CqtParams()
    n = int(34.0 * 32000)
    spec = cqt(AudioClip(np.zeros(n, dtype=np.float32), 32000), p)
    expected = (n - int(p.kernel_length(0))) // p.hop + 1
    assert spec.values.shape == (p.n_bins, expected)
    assert spec.n_frames == expected


def test_cqt_input_validation():
    p = CqtParams()
    with pytest.raises(DataError):
        cqt(AudioClip(np.zeros(32000), 16000), p)  # wrong sample rate
    with pytest.raises(DataError):
        cqt(AudioClip(np.zeros(1000), 32000), p)  # shorter than longest kernel


def test_cqt_carries_clip_identity():
    clip = tone_clip(100.0)
    clip.class_label = "tug"
    clip.recording_id = "r9"
    clip.start_offset = 45.0
    spec = cqt(clip)
    assert (spec.class_label, spec.recording_id, spec.start_offset) == \
        ("tug", "r9", 45.0)


# ---------------------------------------------------------------------------
# Model input
# ---------------------------------------------------------------------------


def test_to_model_input_standardizes():
    rng = np.random.default_rng(0)
    img = rng.normal(30.0, 12.0, size=(255, 120)).astype(np.float32)
    out = to_model_input(img, 64)
    assert out.shape == (1, 64, 64)
    assert out.dtype == np.float32
    assert abs(float(out.mean())) < 1e-5
    assert float(out.std()) == pytest.approx(1.0, abs=1e-4)


def test_to_model_input_constant_image_stays_near_zero():
    # the variance floor prevents divide-by-zero blowup on flat images
    out = to_model_input(np.full((40, 40), 7.0, dtype=np.float32), 32)
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(out)) < 1e-3


def test_to_model_input_accepts_spectrogram_objects():
    spec = cqt(tone_clip(100.0))
    out = to_model_input(spec, 32)
    assert out.shape == (1, 32, 32)


def test_to_model_input_rejects_degenerate_shapes():
    with pytest.raises(DataError):
        to_model_input(np.zeros((1, 50)), 32)
    with pytest.raises(DataError):
        to_model_input(np.zeros(50), 32)


# ---------------------------------------------------------------------------
# Bilinear resize
# ---------------------------------------------------------------------------


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = rng.normal(size=(5, 7))
    assert np.allclose(bilinear_resize(img, 5, 7), img)


def test_resize_hand_example_corner_aligned():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_resize(img, 3, 3)
    expected = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])
    assert np.allclose(out, expected)


def test_resize_preserves_linear_ramps():
    ramp = np.tile(np.linspace(0.0, 1.0, 9)[:, None], (1, 4))
    out = bilinear_resize(ramp, 17, 4)
    assert np.allclose(out[:, 0], np.linspace(0.0, 1.0, 17), atol=1e-12)


def test_resize_downsample_range_bounded():
    rng = np.random.default_rng(2)
    img = rng.uniform(10.0, 20.0, size=(64, 64))
    out = bilinear_resize(img, 16, 16)
    assert out.min() >= 10.0 - 1e-9
    assert out.max() <= 20.0 + 1e-9


# ---------------------------------------------------------------------------
# Masking augmentation
# ---------------------------------------------------------------------------


def test_zero_mask_policy_is_identity_copy():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(32, 32)).astype(np.float32)
    out = spec_augment(img, SpecAugmentPolicy(0, 0, 0, 0), rng)
    assert np.array_equal(out, img)
    assert out is not img


def test_masks_fill_with_image_mean_and_respect_bounds():
    rng = np.random.default_rng(3)
    img = np.arange(32 * 32, dtype=np.float32).reshape(32, 32)
    policy = SpecAugmentPolicy(1, 6, 0, 0)
    fill = img.mean()
    for _ in range(20):
        out = spec_augment(img, policy, rng)
        changed = np.flatnonzero((out != img).any(axis=1))
        assert len(changed) <= 6
        if len(changed):
            assert changed.tolist() == list(
                range(changed[0], changed[0] + len(changed)))
            assert np.all(out[changed] == fill)
        # original untouched
        assert img[0, 0] == 0.0


def test_oversized_masks_clip_to_the_image():
    # a policy tuned for large inputs must degrade gracefully on small ones:
    # an over-long mask covers the whole axis instead of crashing
    img = np.random.default_rng(5).normal(size=(8, 8)).astype(np.float32)
    policy = SpecAugmentPolicy(2, 20, 2, 40)
    for seed in range(30):
        out = spec_augment(img, policy, np.random.default_rng(seed))
        assert out.shape == img.shape
        assert np.all(np.isfinite(out))


def test_augment_handles_channel_axis_and_is_seed_deterministic():
    img = np.random.default_rng(4).normal(size=(1, 24, 24)).astype(np.float32)
    pol = SpecAugmentPolicy(2, 4, 2, 4)
    a = spec_augment(img, pol, np.random.default_rng(7))
    b = spec_augment(img, pol, np.random.default_rng(7))
    assert a.shape == img.shape
    assert np.array_equal(a, b)
    with pytest.raises(ShapeError):
        spec_augment(np.zeros((2, 3, 4, 5), dtype=np.float32), pol,
                     np.random.default_rng(0))
