"""Constant-Q spectrograms, model-input conditioning, and mask augmentation.

The transform is a direct time-domain filterbank: one Hann-windowed complex
kernel per bin at geometrically spaced center frequencies
f_k = f_min * 2^(k / bins_per_octave), kernel length N_k = ceil(Q * sr / f_k)
with Q = 1 / (2^(1/bins_per_octave) - 1).  All bins share frame positions
(hop = 800 samples at the defaults); shorter kernels sit centered inside the
longest kernel's window.  Bins are batched per octave into one matrix product
per frame chunk, which evaluates exactly the same inner products as the
per-bin loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip
from .errors import DataError, ShapeError

LOG_FLOOR = 1e-10  # added before the log; silence maps to exactly -200 dB


@dataclass
class CqtParams:
    sample_rate: int = 32000
    hop_seconds: float = 0.025
    f_min: float = 10.0
    f_max: float = 16000.0  # nominal; bin spacing below is what defines coverage
    n_bins: int = 255
    bins_per_octave: int = 24

    def __post_init__(self):
        if self.f_min <= 0 or self.n_bins < 1 or self.bins_per_octave < 1:
            raise DataError("invalid CQT parameters")
        top = self.f_min * 2.0 ** (self.n_bins / self.bins_per_octave)
        if top > self.sample_rate / 2 * 1.01:
            raise DataError(
                f"top CQT bin {top:.0f} Hz exceeds Nyquist "
                f"{self.sample_rate / 2:.0f} Hz"
            )

    @property
    def q_factor(self) -> float:
        return 1.0 / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    @property
    def hop(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))

    def bin_frequency(self, k) -> np.ndarray:
        return self.f_min * 2.0 ** (np.asarray(k) / self.bins_per_octave)

    def kernel_length(self, k) -> np.ndarray:
        return np.ceil(self.q_factor * self.sample_rate / self.bin_frequency(k)).astype(int)

    def frequency_to_bin(self, f) -> int:
        """Nearest bin index for a frequency (the tone-localization formula)."""
        return int(round(self.bins_per_octave * math.log2(f / self.f_min)))


@dataclass
class Spectrogram:
    values: np.ndarray  # (n_bins, n_frames) log-magnitude dB
    params: CqtParams
    class_label: str = ""
    recording_id: str = ""
    start_offset: float = 0.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def cqt(clip: AudioClip, params: CqtParams | None = None) -> Spectrogram:
    """Log-magnitude constant-Q spectrogram of a clip.

    Output cell (k, t) is 20*log10(|X_k[t]| + 1e-10) where X_k[t] is the
    Hann-windowed complex inner product of kernel k against the frame
    starting at t*hop, normalized by the window sum.
    """
    params = params or CqtParams()
    if clip.sample_rate != params.sample_rate:
        raise DataError(
            f"clip sample rate {clip.sample_rate} != CQT rate {params.sample_rate}"
        )
    x = np.asarray(clip.samples, dtype=np.float32)
    n = len(x)
    lengths = params.kernel_length(np.arange(params.n_bins))
    n_max = int(lengths[0])
    if n < n_max:
        raise DataError(
            f"clip of {n} samples shorter than the longest CQT kernel ({n_max})"
        )
    hop = params.hop
    n_frames = (n - n_max) // hop + 1
    frame_starts = np.arange(n_frames) * hop

    mag = np.empty((params.n_bins, n_frames), dtype=np.float32)
    bpo = params.bins_per_octave
    for g_start in range(0, params.n_bins, bpo):
        g_bins = np.arange(g_start, min(g_start + bpo, params.n_bins))
        kern, offset, span = _group_kernels(params, g_bins, n_max)
        windows = sliding_window_view(x, span)
        starts = frame_starts + offset
        # chunk frames so the gathered (chunk, span) matrix stays small
        chunk = max(1, int(8_000_000 // span))
        for c0 in range(0, n_frames, chunk):
            c1 = min(c0 + chunk, n_frames)
            frames = windows[starts[c0:c1]]
            resp = frames @ kern.T  # (chunk, 2*len(g_bins)) re/im interleaved
            re = resp[:, 0::2]
            im = resp[:, 1::2]
            mag[g_bins, c0:c1] = np.hypot(re, im).T
    values = 20.0 * np.log10(mag + LOG_FLOOR)
    return Spectrogram(
        values=values,
        params=params,
        class_label=clip.class_label,
        recording_id=clip.recording_id,
        start_offset=clip.start_offset,
    )


def _group_kernels(params: CqtParams, bins: np.ndarray, n_max: int):
    """Zero-padded kernel matrix for one octave group.

    Returns (kernels (2*nb, span), start offset of the group window inside
    the frame, span).  Row 2i is the real part, 2i+1 the imaginary part of
    bin i's kernel, both divided by the window sum.
    """
    lengths = params.kernel_length(bins)
    starts = (n_max - lengths) // 2
    ends = starts + lengths
    s0 = int(starts.min())
    span = int(ends.max()) - s0
    kern = np.zeros((2 * len(bins), span), dtype=np.float32)
    for i, (k, nk, sk) in enumerate(zip(bins, lengths, starts)):
        nk = int(nk)
        window = np.hanning(nk)
        wsum = window.sum()
        t = (np.arange(nk) - (nk - 1) / 2.0) / params.sample_rate
        phase = 2.0 * np.pi * params.bin_frequency(int(k)) * t
        lo = int(sk) - s0
        kern[2 * i, lo : lo + nk] = window * np.cos(phase) / wsum
        kern[2 * i + 1, lo : lo + nk] = -window * np.sin(phase) / wsum
    return kern, s0, span


def to_model_input(spec, size: int = 256) -> np.ndarray:
    """Bilinear-resize a spectrogram (object or raw 2D array) to
    (1, size, size) and standardize.

    Standardization is per image: zero mean, unit variance with a 1e-6
    variance floor, so constant inputs map to all zeros.
    """
    img = np.asarray(getattr(spec, "values", spec), dtype=np.float32)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise DataError(f"degenerate spectrogram of shape {img.shape}")
    resized = bilinear_resize(img, size, size)
    mean = resized.mean()
    var = resized.var()
    out = (resized - mean) / np.sqrt(max(var, 1e-6))
    return out[None, :, :].astype(np.float32)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear interpolation with corner-aligned sampling."""
    h, w = img.shape

    def weights(src, dst):
        pos = np.arange(dst) * (src - 1) / (dst - 1) if dst > 1 else np.zeros(1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        frac = (pos - lo).astype(img.dtype)
        return lo, hi, frac

    rlo, rhi, rw = weights(h, out_h)
    tmp = img[rlo, :] * (1.0 - rw)[:, None] + img[rhi, :] * rw[:, None]
    clo, chi, cw = weights(w, out_w)
    return tmp[:, clo] * (1.0 - cw)[None, :] + tmp[:, chi] * cw[None, :]


@dataclass
class SpecAugmentPolicy:
    """Mask counts and maximum extents (rows for frequency, columns for time)."""

    n_freq_masks: int = 2
    max_freq_rows: int = 20
    n_time_masks: int = 2
    max_time_cols: int = 40


def spec_augment(img: np.ndarray, policy: SpecAugmentPolicy,
                 rng: np.random.Generator) -> np.ndarray:
    """Mask random frequency rows and time columns, filling with the image mean.

    Training-time only.  A zero-mask policy is the identity; mask sizes and
    positions are drawn from ``rng``, so a fixed generator state fixes the
    output.
    """
    if img.ndim == 3:
        out = spec_augment(img[0], policy, rng)
        return out[None, :, :]
    if img.ndim != 2:
        raise ShapeError(f"spec_augment expects a 2D or (1,H,W) image, got {img.shape}")
    if policy.n_freq_masks == 0 and policy.n_time_masks == 0:
        return img.copy()
    h, w = img.shape
    out = img.copy()
    fill = img.mean()
    for _ in range(policy.n_freq_masks):
        extent = min(int(rng.integers(0, policy.max_freq_rows + 1)), h)
        if extent == 0:
            continue
        start = int(rng.integers(0, h - extent + 1))
        out[start : start + extent, :] = fill
    for _ in range(policy.n_time_masks):
        extent = min(int(rng.integers(0, policy.max_time_cols + 1)), w)
        if extent == 0:
            continue
        start = int(rng.integers(0, w - extent + 1))
        out[:, start : start + extent] = fill
    return out
