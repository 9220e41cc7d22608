"""Learnable 2D Gabor convolution kernels.

A kernel is five scalars (sigma, theta, f0, phi, gamma) rendered onto a
square grid:

    g(x, y) = 1/(2 pi sigma^2) * exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2))
              * cos(2 pi f0 x' + phi)

with rotated coordinates x' = x cos(theta) + y sin(theta),
y' = -x sin(theta) + y cos(theta).  The layer learns only the five scalars
per kernel; gradients flow through the closed-form partial derivatives of g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

# anti-degeneracy clamps applied after every optimizer step
SIGMA_RANGE = (0.3, 20.0)
F0_RANGE = (1e-3, 0.5)

PARAM_NAMES = ("sigma", "theta", "f0", "phi", "gamma")


@dataclass
class GaborParams:
    sigma: float
    theta: float
    f0: float
    phi: float
    gamma: float

    def validate(self):
        vals = [self.sigma, self.theta, self.f0, self.phi, self.gamma]
        if not all(np.isfinite(vals)):
            raise DataError(f"non-finite Gabor parameters: {vals}")
        if self.sigma <= 0 or self.f0 <= 0 or self.gamma <= 0:
            raise DataError(
                f"sigma, f0, gamma must be positive: {self.sigma}, {self.f0}, {self.gamma}"
            )


@dataclass
class GaborBank:
    """Parameter set of one Gabor convolution layer."""

    kernels: list  # list of GaborParams
    kernel_size: int = 7
    stride: int = 2
    in_channels: int = 1

    def __post_init__(self):
        if not self.kernels:
            raise DataError("empty Gabor bank")
        if self.kernel_size % 2 == 0:
            raise DataError(f"kernel_size must be odd, got {self.kernel_size}")

    def __len__(self):
        return len(self.kernels)

    def as_arrays(self):
        """The five parameter vectors, each shaped (n_kernels,)."""
        return tuple(
            np.array([getattr(p, name) for p in self.kernels], dtype=np.float64)
            for name in PARAM_NAMES
        )


def _grid(size: int, dtype):
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=dtype)
    y, x = np.meshgrid(coords, coords, indexing="ij")
    return x, y


def render_kernels(sigma, theta, f0, phi, gamma, size: int = 7,
                   with_grads: bool = False, dtype=np.float64):
    """Evaluate g (and optionally its five partials) for a vector of kernels.

    Inputs are arrays of shape (n,); outputs are (n, size, size).
    """
    if size % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {size}")
    sigma, theta, f0, phi, gamma = (
        np.asarray(v, dtype=dtype).reshape(-1, 1, 1)
        for v in (sigma, theta, f0, phi, gamma)
    )
    x, y = _grid(size, dtype)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    amp = 1.0 / (2.0 * np.pi * sigma**2)
    quad = xr**2 + gamma**2 * yr**2
    envelope = np.exp(-quad / (2.0 * sigma**2))
    arg = 2.0 * np.pi * f0 * xr + phi
    cos_a = np.cos(arg)
    g = amp * envelope * cos_a
    if not with_grads:
        return g
    sin_a = np.sin(arg)
    ae_sin = amp * envelope * sin_a
    grads = {
        "sigma": g * (quad / sigma**3 - 2.0 / sigma),
        "theta": g * (-(1.0 - gamma**2) * xr * yr / sigma**2)
        - ae_sin * 2.0 * np.pi * f0 * yr,
        "f0": -ae_sin * 2.0 * np.pi * xr,
        "phi": -ae_sin,
        "gamma": -g * gamma * yr**2 / sigma**2,
    }
    return g, grads


def gabor_kernel(p: GaborParams, size: int = 7, dtype=np.float64) -> np.ndarray:
    """Single materialized (size, size) kernel."""
    p.validate()
    return render_kernels(
        np.array([p.sigma]), np.array([p.theta]), np.array([p.f0]),
        np.array([p.phi]), np.array([p.gamma]), size=size, dtype=dtype,
    )[0]


def init_gabor_bank(n_kernels: int = 64, seed: int = 0,
                    kernel_size: int = 7, stride: int = 2) -> GaborBank:
    """Frequency/orientation grid initialization.

    The 40 (m, n) pairs with m in 1..5 and n in 1..8, ordered row-major by
    (m, n), define angular frequency w_m = (pi/2) * sqrt(2)^(-m) and
    orientation theta_n = (pi/8) * (n - 1); then f0 = w_m / (2 pi),
    sigma = pi / w_m, gamma = 1, phi = 0.  Kernel k takes pair k mod 40, so
    banks larger than 40 repeat pairs (duplicates diverge during training).
    ``seed`` is accepted for interface stability; the grid is deterministic.
    """
    del seed
    if n_kernels < 1:
        raise DataError(f"n_kernels must be >= 1, got {n_kernels}")
    pairs = [(m, n) for m in range(1, 6) for n in range(1, 9)]
    kernels = []
    for k in range(n_kernels):
        m, n = pairs[k % len(pairs)]
        omega = (np.pi / 2.0) * np.sqrt(2.0) ** (-m)
        kernels.append(
            GaborParams(
                sigma=np.pi / omega,
                theta=(np.pi / 8.0) * (n - 1),
                f0=omega / (2.0 * np.pi),
                phi=0.0,
                gamma=1.0,
            )
        )
    return GaborBank(kernels=kernels, kernel_size=kernel_size, stride=stride)


def bank_weights(bank: GaborBank, dtype=np.float32) -> np.ndarray:
    """Materialize the bank as a conv weight tensor (n, 1, k, k)."""
    sigma, theta, f0, phi, gamma = bank.as_arrays()
    g = render_kernels(sigma, theta, f0, phi, gamma, size=bank.kernel_size,
                       dtype=np.float64)
    return g[:, None, :, :].astype(dtype)


def gabor_conv_forward(x: np.ndarray, bank: GaborBank) -> np.ndarray:
    """Stride-2 same-padded cross-correlation with the materialized bank."""
    from .layers import conv2d_forward

    if x.ndim != 4 or x.shape[1] != bank.in_channels:
        raise ShapeError(
            f"expected input (B, {bank.in_channels}, H, W), got {x.shape}"
        )
    w = bank_weights(bank, dtype=x.dtype)
    y, _ = conv2d_forward(x, w, stride=bank.stride,
                          padding=bank.kernel_size // 2)
    return y


def gabor_backward(dy: np.ndarray, x: np.ndarray, bank: GaborBank):
    """Input gradient plus per-kernel parameter gradients.

    The weight gradient dL/dW of the underlying convolution is contracted
    against the closed-form kernel partials:
    dL/dp_k = sum_{x,y} dL/dW_k(x,y) * dg_k(x,y)/dp.
    Returns (dx, {"sigma": (n,), "theta": (n,), ...}).
    """
    from .layers import conv2d_backward

    w = bank_weights(bank, dtype=x.dtype)
    pad = bank.kernel_size // 2
    oh, ow = dy.shape[2], dy.shape[3]
    cache = (x, None, w, bank.stride, pad, 1, oh, ow)
    dx, dw = conv2d_backward(dy, cache)
    sigma, theta, f0, phi, gamma = bank.as_arrays()
    _, kernel_grads = render_kernels(sigma, theta, f0, phi, gamma,
                                     size=bank.kernel_size, with_grads=True,
                                     dtype=np.float64)
    dw_flat = dw[:, 0].astype(np.float64)
    param_grads = {
        name: np.sum(dw_flat * kernel_grads[name], axis=(1, 2))
        for name in PARAM_NAMES
    }
    return dx, param_grads


def clamp_parameters(sigma: np.ndarray, f0: np.ndarray) -> None:
    """In-place anti-degeneracy clamps (applied after each optimizer step)."""
    np.clip(sigma, SIGMA_RANGE[0], SIGMA_RANGE[1], out=sigma)
    np.clip(f0, F0_RANGE[0], F0_RANGE[1], out=f0)
