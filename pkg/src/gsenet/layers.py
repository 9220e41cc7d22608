"""Neural-network layers with hand-written backward passes.

Every layer is a pair of pure functions (forward returning a cache, backward
consuming it) plus a thin stateful class that owns parameters and wires the
two together.  There is no autodiff: the backward formulas are closed-form
and are pinned by finite-difference tests.

Activations are (batch, channel, height, width) float32 arrays during
training; gradient checks run the same code in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError

# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


# Two gemm layouts, picked per layer shape:
#
#   "batched"  one (oc, c) @ (c, l) gemm per sample on a zero-copy view of
#              the input.  Used for ungrouped pointwise convs with enough
#              output positions per sample to keep each gemm large.
#   "folded"   im2col in group-major layout (groups, k, b*l) and one
#              (oc/g, k) @ (k, b*l) gemm per group.  Folding the batch into
#              the gemm keeps it large even for narrow grouped 3x3 layers
#              deep in the net, and the layout makes the per-group slices
#              contiguous so no reshuffling copies are needed.
_BATCHED_MIN_L = 1024


def _conv_strategy(kh, kw, padding, groups, l):
    if kh == 1 and kw == 1 and padding == 0 and groups == 1 and l >= _BATCHED_MIN_L:
        return "batched"
    return "folded"


def _cols_batched(x, stride):
    """(b, c, l) columns for a pointwise conv; a view when stride == 1."""
    b, c = x.shape[:2]
    view = x[:, :, ::stride, ::stride]
    oh, ow = view.shape[2], view.shape[3]
    return np.ascontiguousarray(view).reshape(b, c, oh * ow), oh, ow


def _cols_folded(x, kh, kw, stride, padding, groups):
    """Group-major im2col: (groups, cg*kh*kw, b*oh*ow) in one copy."""
    b, c, h, w = x.shape
    cg = c // groups
    if kh == 1 and kw == 1 and padding == 0:
        view = x[:, :, ::stride, ::stride]
        oh, ow = view.shape[2], view.shape[3]
        t = view.reshape(b, groups, cg, oh, ow).transpose(1, 2, 0, 3, 4)
        return np.ascontiguousarray(t).reshape(groups, cg, b * oh * ow), oh, ow
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    x5 = x.reshape(b, groups, cg, x.shape[2], x.shape[3])
    win = sliding_window_view(x5, (kh, kw), axis=(3, 4))[:, :, :, ::stride, ::stride]
    t = win.transpose(1, 2, 5, 6, 0, 3, 4)  # (g, cg, kh, kw, b, oh, ow)
    cols = np.ascontiguousarray(t).reshape(groups, cg * kh * kw, b * oh * ow)
    return cols, oh, ow


def _col2im_folded(colsG, x_shape, kh, kw, stride, padding, oh, ow, groups):
    """Scatter-add group-major columns back onto the input grid."""
    b, c, h, w = x_shape
    cg = c // groups
    if kh == 1 and kw == 1 and padding == 0:
        src = colsG.reshape(groups, cg, b, oh, ow).transpose(2, 0, 1, 3, 4)
        if stride == 1:
            return np.ascontiguousarray(src).reshape(b, c, h, w)
        dx = np.zeros((b, c, h, w), dtype=colsG.dtype)
        dx.reshape(b, groups, cg, h, w)[:, :, :, ::stride, ::stride] = src
        return dx
    dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=colsG.dtype)
    dxp5 = dxp.reshape(b, groups, cg, dxp.shape[2], dxp.shape[3])
    g7 = colsG.reshape(groups, cg, kh, kw, b, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp5[:, :, :, i : i + stride * oh : stride,
                 j : j + stride * ow : stride] += g7[:, :, i, j].transpose(2, 0, 1, 3, 4)
    if padding:
        return np.ascontiguousarray(
            dxp[:, :, padding : h + padding, padding : w + padding]
        )
    return dxp


# im2col matrices up to this size are kept in the forward cache; larger
# ones are recomputed during backward to bound peak memory.
KEEP_COLS_BYTES = 96 << 20


def conv2d_forward(x, w, stride=1, padding=0, groups=1):
    """Grouped cross-correlation.  Returns (y, cache)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D tensors, got {x.shape} and {w.shape}")
    b, c, _, _ = x.shape
    oc, cg, kh, kw = w.shape
    if c % groups != 0 or oc % groups != 0:
        raise ShapeError(
            f"channels ({c} in, {oc} out) not divisible by groups={groups}"
        )
    if cg != c // groups:
        raise ShapeError(
            f"weight expects {cg} channels/group but input has {c // groups}"
        )
    oh = (x.shape[2] + 2 * padding - kh) // stride + 1
    ow = (x.shape[3] + 2 * padding - kw) // stride + 1
    if _conv_strategy(kh, kw, padding, groups, oh * ow) == "batched":
        cols, oh, ow = _cols_batched(x, stride)
        y = np.matmul(w.reshape(oc, c), cols).reshape(b, oc, oh, ow)
        shares_x = stride == 1
    else:
        cols, oh, ow = _cols_folded(x, kh, kw, stride, padding, groups)
        yg = np.matmul(w.reshape(groups, oc // groups, cg * kh * kw), cols)
        y = np.ascontiguousarray(
            yg.reshape(groups, oc // groups, b, oh * ow).transpose(2, 0, 1, 3)
        ).reshape(b, oc, oh, ow)
        shares_x = False
    keep = cols if shares_x or cols.nbytes <= KEEP_COLS_BYTES else None
    return y, (x, keep, w, stride, padding, groups, oh, ow)


def conv2d_backward(dy, cache, need_dx=True):
    """Returns (dx, dw); dx is None when ``need_dx`` is false (first layer)."""
    x, cols, w, stride, padding, groups, oh, ow = cache
    b, c, h, wd = x.shape
    oc, cg, kh, kw = w.shape
    k = cg * kh * kw
    l = oh * ow
    if _conv_strategy(kh, kw, padding, groups, l) == "batched":
        if cols is None:
            cols, _, _ = _cols_batched(x, stride)
        dy3 = dy.reshape(b, oc, l)
        dw = np.matmul(dy3, cols.transpose(0, 2, 1)).sum(axis=0)
        dw = dw.reshape(oc, c, 1, 1)
        if not need_dx:
            return None, dw
        dcols = np.matmul(w.reshape(oc, c).T, dy3)
        if stride == 1:
            return dcols.reshape(b, c, h, wd), dw
        dx = np.zeros((b, c, h, wd), dtype=dcols.dtype)
        dx[:, :, ::stride, ::stride] = dcols.reshape(b, c, oh, ow)
        return dx, dw
    if cols is None:
        cols, _, _ = _cols_folded(x, kh, kw, stride, padding, groups)
    dyg = np.ascontiguousarray(
        dy.reshape(b, groups, oc // groups, l).transpose(1, 2, 0, 3)
    ).reshape(groups, oc // groups, b * l)
    dw = np.matmul(dyg, cols.transpose(0, 2, 1)).reshape(oc, cg, kh, kw)
    if not need_dx:
        return None, dw
    dcols = np.matmul(w.reshape(groups, oc // groups, k).transpose(0, 2, 1), dyg)
    dx = _col2im_folded(dcols, x.shape, kh, kw, stride, padding, oh, ow, groups)
    return dx, dw


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def batch_norm_forward(x, gamma, beta, running_mean, running_var,
                       training, momentum=0.1, eps=1e-5):
    """Per-channel standardization.  Updates running stats in place when
    training; eval mode normalizes with the running stats.

    Batch statistics accumulate in float64 (the activations themselves
    stay in the input dtype)."""
    if training:
        if x.shape[0] < 2:
            raise DataError("batch_norm requires batch >= 2 in training mode")
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.sum(axis=(0, 2, 3), dtype=np.float64) / m
        sq = np.square(x).sum(axis=(0, 2, 3), dtype=np.float64)
        var = np.maximum(sq / m - mean * mean, 0.0)
        running_mean += momentum * (mean - running_mean)
        running_var += momentum * (var - running_var)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    scale = inv.astype(x.dtype)
    shift = (-mean * inv).astype(x.dtype)
    xhat = x * scale[None, :, None, None]
    xhat += shift[None, :, None, None]
    y = xhat * gamma[None, :, None, None]
    y += beta[None, :, None, None]
    return y, (xhat, inv, gamma, training)


def batch_norm_backward(dy, cache):
    xhat, inv, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(gamma.dtype)
    dbeta = np.sum(dy, axis=(0, 2, 3))
    scale = (gamma * inv).astype(dy.dtype)
    if not training:
        return dy * scale[None, :, None, None], dgamma, dbeta
    # dL/dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) with
    # dxhat = dy * gamma; the two means reduce to dbeta and dgamma.
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    c_beta = (-(gamma * inv) * dbeta / m).astype(dy.dtype)
    c_gamma = (-(gamma * inv) * dgamma / m).astype(dy.dtype)
    dx = dy * scale[None, :, None, None]
    dx += xhat * c_gamma[None, :, None, None]
    dx += c_beta[None, :, None, None]
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Simple layers
# ---------------------------------------------------------------------------


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def maxpool_forward(x, size=3, stride=2, padding=1):
    """Ties go to the lowest window index (first occurrence)."""
    b, c, h, w = x.shape
    neg = np.finfo(x.dtype).min
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=neg)
    oh = (xp.shape[2] - size) // stride + 1
    ow = (xp.shape[3] - size) // stride + 1
    y = None
    arg = None
    for idx in range(size * size):
        i, j = divmod(idx, size)
        window = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
        if y is None:
            y = window.copy()
            arg = np.zeros(y.shape, dtype=np.int8)
        else:
            better = window > y
            np.copyto(y, window, where=better)
            arg[better] = idx
    return y, (x.shape, arg, size, stride, padding, oh, ow)


def maxpool_backward(dy, cache):
    x_shape, arg, size, stride, padding, oh, ow = cache
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    # Scatter-add via one bincount over flat padded indices: windows
    # overlap, so several outputs may route into the same input cell.
    arg64 = arg.astype(np.int64)
    rows = arg64 // size + (stride * np.arange(oh))[None, None, :, None]
    cols = arg64 % size + (stride * np.arange(ow))[None, None, None, :]
    chan = np.arange(b * c, dtype=np.int64).reshape(b, c, 1, 1)
    flat = (chan * hp + rows) * wp + cols
    dxp = np.bincount(flat.ravel(), weights=dy.ravel().astype(np.float64),
                      minlength=b * c * hp * wp)
    dxp = dxp.reshape(b, c, hp, wp).astype(dy.dtype)
    if padding:
        return np.ascontiguousarray(
            dxp[:, :, padding : h + padding, padding : w + padding]
        )
    return dxp


def global_avg_pool_forward(x):
    b, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (x.shape,)


def global_avg_pool_backward(dy, cache):
    (x_shape,) = cache
    b, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None] / (h * w), x_shape).astype(dy.dtype)


def linear_forward(x, w, bias):
    return x @ w.T + bias, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"label out of range [0, {k})")
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(b), labels] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


# ---------------------------------------------------------------------------
# Squeeze-and-excitation
# ---------------------------------------------------------------------------


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def se_forward(x, w1, w2):
    """Channel gate: global-average squeeze, two bias-free linear maps with
    ReLU between, sigmoid scaling factors applied back onto the input."""
    b, c, h, w = x.shape
    if w1.shape[1] != c or w2.shape[0] != c or w1.shape[0] != w2.shape[1]:
        raise ShapeError(
            f"SE weight shapes {w1.shape}/{w2.shape} inconsistent with C={c}"
        )
    z = x.mean(axis=(2, 3))
    a = z @ w1.T
    hidden = np.maximum(a, 0.0)
    s = sigmoid(hidden @ w2.T)
    y = x * s[:, :, None, None]
    return y, (x, z, a, hidden, s, w1, w2)


def se_backward(dy, cache):
    x, z, a, hidden, s, w1, w2 = cache
    h, w = x.shape[2], x.shape[3]
    ds = np.sum(dy * x, axis=(2, 3))
    dx = dy * s[:, :, None, None]
    dgate = ds * s * (1.0 - s)
    dw2 = dgate.T @ hidden
    dhidden = dgate @ w2
    da = dhidden * (a > 0)
    dw1 = da.T @ z
    dz = da @ w1
    dx += dz[:, :, None, None] / (h * w)
    return dx, dw1, dw2


# ---------------------------------------------------------------------------
# Stateful layer objects
# ---------------------------------------------------------------------------


class Parameter:
    """A named learnable array with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def size(self):
        return self.value.size


class Layer:
    def parameters(self):
        return []

    def buffers(self):
        """Non-learnable state to persist in checkpoints (name, array)."""
        return []

    def forward(self, x, training=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0,
                 groups=1, rng=None, name="conv", dtype=np.float32,
                 first_layer=False):
        if in_ch % groups or out_ch % groups:
            raise ShapeError(
                f"{name}: channels ({in_ch}, {out_ch}) not divisible by groups={groups}"
            )
        rng = rng or np.random.default_rng()
        fan_in = (in_ch // groups) * kernel_size * kernel_size
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(out_ch, in_ch // groups, kernel_size, kernel_size))
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.first_layer = first_layer  # skip the unused input gradient
        self._cache = None

    def parameters(self):
        return [self.weight]

    def forward(self, x, training=True):
        y, cache = conv2d_forward(x, self.weight.value, self.stride,
                                  self.padding, self.groups)
        if training:
            self._cache = cache
        return y

    def backward(self, dy):
        dx, dw = conv2d_backward(dy, self._cache,
                                 need_dx=not self.first_layer)
        self.weight.grad += dw
        self._cache = None
        return dx


class GaborConv2d(Layer):
    """First-layer convolution whose kernels are rendered from Gabor
    parameters; only the five scalars per kernel are learnable."""

    def __init__(self, bank, name="gabor", dtype=np.float32):
        from . import gabor as _gabor

        self._gabor = _gabor
        self.kernel_size = bank.kernel_size
        self.stride = bank.stride
        self.in_channels = bank.in_channels
        sigma, theta, f0, phi, gamma = bank.as_arrays()
        self.sigma = Parameter(f"{name}.sigma", sigma.astype(dtype))
        self.theta = Parameter(f"{name}.theta", theta.astype(dtype))
        self.f0 = Parameter(f"{name}.f0", f0.astype(dtype))
        self.phi = Parameter(f"{name}.phi", phi.astype(dtype))
        self.gamma = Parameter(f"{name}.gamma", gamma.astype(dtype))
        self._cache = None

    def parameters(self):
        return [self.sigma, self.theta, self.f0, self.phi, self.gamma]

    def _weights(self, dtype):
        g = self._gabor.render_kernels(
            self.sigma.value, self.theta.value, self.f0.value,
            self.phi.value, self.gamma.value, size=self.kernel_size,
        )
        return g[:, None, :, :].astype(dtype)

    def forward(self, x, training=True):
        w = self._weights(x.dtype)
        y, cache = conv2d_forward(x, w, self.stride, self.kernel_size // 2)
        if training:
            self._cache = cache
        return y

    def backward(self, dy):
        dx, dw = conv2d_backward(dy, self._cache, need_dx=False)
        _, grads = self._gabor.render_kernels(
            self.sigma.value, self.theta.value, self.f0.value,
            self.phi.value, self.gamma.value, size=self.kernel_size,
            with_grads=True,
        )
        dw_flat = dw[:, 0].astype(np.float64)
        for param, key in ((self.sigma, "sigma"), (self.theta, "theta"),
                           (self.f0, "f0"), (self.phi, "phi"),
                           (self.gamma, "gamma")):
            param.grad += np.sum(dw_flat * grads[key], axis=(1, 2)).astype(
                param.value.dtype
            )
        self._cache = None
        return dx

    def apply_constraints(self):
        self._gabor.clamp_parameters(self.sigma.value, self.f0.value)


class BatchNorm2d(Layer):
    def __init__(self, channels, name="bn", zero_gamma=False, dtype=np.float32,
                 momentum=0.1, eps=1e-5):
        init = 0.0 if zero_gamma else 1.0
        self.gamma = Parameter(f"{name}.gamma", np.full(channels, init, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def forward(self, x, training=True):
        y, cache = batch_norm_forward(
            x, self.gamma.value, self.beta.value, self.running_mean,
            self.running_var, training, self.momentum, self.eps,
        )
        self._cache = cache
        return y

    def backward(self, dy):
        dx, dgamma, dbeta = batch_norm_backward(dy, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        self._cache = None
        return dx


class ReLU(Layer):
    """Clamps in place: safe inside the model because every producer hands
    over a freshly allocated activation."""

    def forward(self, x, training=True):
        if training:
            self._mask = x > 0
        np.maximum(x, 0.0, out=x)
        return x

    def backward(self, dy):
        np.multiply(dy, self._mask, out=dy)
        self._mask = None
        return dy


class MaxPool2d(Layer):
    def __init__(self, size=3, stride=2, padding=1):
        self.size = size
        self.stride = stride
        self.padding = padding

    def forward(self, x, training=True):
        y, cache = maxpool_forward(x, self.size, self.stride, self.padding)
        self._cache = cache
        return y

    def backward(self, dy):
        return maxpool_backward(dy, self._cache)


class GlobalAvgPool(Layer):
    def forward(self, x, training=True):
        y, cache = global_avg_pool_forward(x)
        self._cache = cache
        return y

    def backward(self, dy):
        return global_avg_pool_backward(dy, self._cache)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, name="fc",
                 dtype=np.float32):
        rng = rng or np.random.default_rng()
        w = rng.normal(0.0, 0.01, size=(out_features, in_features))
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=dtype))

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, training=True):
        y, cache = linear_forward(x, self.weight.value, self.bias.value)
        self._cache = cache
        return y

    def backward(self, dy):
        dx, dw, db = linear_backward(dy, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        self._cache = None
        return dx


class SEBlock(Layer):
    def __init__(self, channels, reduction=16, rng=None, name="se",
                 dtype=np.float32):
        if reduction > channels:
            raise ShapeError(
                f"{name}: reduction {reduction} larger than C={channels}"
            )
        if channels % reduction:
            raise ShapeError(
                f"{name}: C={channels} not divisible by reduction {reduction}"
            )
        rng = rng or np.random.default_rng()
        hidden = channels // reduction
        w1 = rng.normal(0.0, np.sqrt(2.0 / channels), size=(hidden, channels))
        w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(channels, hidden))
        self.w1 = Parameter(f"{name}.w1", w1.astype(dtype))
        self.w2 = Parameter(f"{name}.w2", w2.astype(dtype))
        self._cache = None

    def parameters(self):
        return [self.w1, self.w2]

    def forward(self, x, training=True):
        y, cache = se_forward(x, self.w1.value, self.w2.value)
        self._cache = cache
        return y

    def backward(self, dy):
        dx, dw1, dw2 = se_backward(dy, self._cache)
        self.w1.grad += dw1
        self.w2.grad += dw2
        self._cache = None
        return dx
