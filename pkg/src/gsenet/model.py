"""Squeeze-excitation grouped-bottleneck residual classifier.

The network is a 26-layer ResNeXt-style backbone: a 7x7 stride-2 stem
(either a learnable Gabor filter bank or a plain convolution), a 3x3
stride-2 max pool, four stages of two bottleneck blocks each, global
average pooling, and a linear classifier.  Each bottleneck is
1x1 reduce -> 3x3 grouped -> 1x1 expand with a channel-gate
(squeeze-and-excitation) before the residual add.

Everything runs through the hand-written layers in :mod:`gsenet.layers`;
the model object orchestrates forward/backward order and owns the flat
parameter list used by the optimizer and checkpoints.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, ShapeError
from .gabor import init_gabor_bank
from .layers import (
    BatchNorm2d,
    Conv2d,
    GaborConv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    ReLU,
    SEBlock,
    softmax,
)
from .tensor import load_tensor, save_tensor

DOWNSAMPLE_FACTOR = 32  # stem /2, pool /2, stride-2 blocks in stages 2-4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches.  The defaults reproduce the full model;
    ``desk_config`` returns a narrow variant that trains quickly on a
    single CPU core."""

    num_classes: int = 4
    use_gabor: bool = True
    use_se: bool = True
    cardinality: int = 32
    stage_widths: tuple = (128, 256, 512, 1024)
    se_reduction: int = 16
    stem_channels: int = 64
    blocks_per_stage: int = 2
    input_size: int = 256

    def validate(self):
        if len(self.stage_widths) != 4:
            raise ShapeError(f"expected 4 stage widths, got {self.stage_widths}")
        for w in self.stage_widths:
            if w % self.cardinality:
                raise ShapeError(
                    f"stage width {w} not divisible by cardinality {self.cardinality}"
                )
            if self.use_se and (2 * w) % self.se_reduction:
                raise ShapeError(
                    f"block output {2 * w} not divisible by SE reduction "
                    f"{self.se_reduction}"
                )
        if self.input_size % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"input_size {self.input_size} not divisible by {DOWNSAMPLE_FACTOR}"
            )
        if self.num_classes < 2:
            raise ShapeError("need at least two classes")
        if self.blocks_per_stage < 1:
            raise ShapeError("need at least one block per stage")
        return self

    @property
    def stage_channels(self):
        """Output channels of each stage (twice the bottleneck width)."""
        return tuple(2 * w for w in self.stage_widths)

    @property
    def latent_dim(self):
        return self.stage_channels[-1]


def desk_config(**overrides):
    """Narrow configuration for CPU-scale experiments: an eighth of the
    widths, cardinality 8, 128x128 inputs.  Keyword overrides are applied
    on top."""
    cfg = ModelConfig(cardinality=8, stage_widths=(16, 32, 64, 128),
                      input_size=128)
    return replace(cfg, **overrides).validate()


class Bottleneck:
    """1x1 -> grouped 3x3 -> 1x1 with channel gate and residual add.
    The final batch norm starts at gamma=0 so a fresh block is the
    identity map."""

    def __init__(self, in_ch, width, out_ch, cardinality, stride, use_se,
                 se_reduction, rng, name, dtype):
        self.conv_a = Conv2d(in_ch, width, 1, rng=rng,
                             name=f"{name}.conv_a", dtype=dtype)
        self.bn_a = BatchNorm2d(width, name=f"{name}.bn_a", dtype=dtype)
        self.relu_a = ReLU()
        self.conv_b = Conv2d(width, width, 3, stride=stride, padding=1,
                             groups=cardinality, rng=rng,
                             name=f"{name}.conv_b", dtype=dtype)
        self.bn_b = BatchNorm2d(width, name=f"{name}.bn_b", dtype=dtype)
        self.relu_b = ReLU()
        self.conv_c = Conv2d(width, out_ch, 1, rng=rng,
                             name=f"{name}.conv_c", dtype=dtype)
        self.bn_c = BatchNorm2d(out_ch, name=f"{name}.bn_c", zero_gamma=True,
                                dtype=dtype)
        self.se = (SEBlock(out_ch, se_reduction, rng, f"{name}.se", dtype)
                   if use_se else None)
        if stride != 1 or in_ch != out_ch:
            self.shortcut_conv = Conv2d(in_ch, out_ch, 1, stride=stride,
                                        rng=rng, name=f"{name}.shortcut",
                                        dtype=dtype)
            self.shortcut_bn = BatchNorm2d(out_ch, name=f"{name}.shortcut_bn",
                                           dtype=dtype)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None
        self._out_mask = None

    def sublayers(self):
        layers = [self.conv_a, self.bn_a, self.conv_b, self.bn_b,
                  self.conv_c, self.bn_c]
        if self.se is not None:
            layers.append(self.se)
        if self.shortcut_conv is not None:
            layers.extend([self.shortcut_conv, self.shortcut_bn])
        return layers

    def parameters(self):
        out = []
        for layer in self.sublayers():
            out.extend(layer.parameters())
        return out

    def buffers(self):
        out = []
        for layer in self.sublayers():
            out.extend(layer.buffers())
        return out

    def forward(self, x, training=True):
        h = self.conv_a.forward(x, training)
        h = self.relu_a.forward(self.bn_a.forward(h, training), training)
        h = self.conv_b.forward(h, training)
        h = self.relu_b.forward(self.bn_b.forward(h, training), training)
        h = self.bn_c.forward(self.conv_c.forward(h, training), training)
        if self.se is not None:
            h = self.se.forward(h, training)
        if self.shortcut_conv is None:
            shortcut = x
        else:
            shortcut = self.shortcut_bn.forward(
                self.shortcut_conv.forward(x, training), training)
        out = h + shortcut
        mask = out > 0
        if training:
            self._out_mask = mask
        return out * mask

    def backward(self, dy):
        d = dy * self._out_mask
        self._out_mask = None
        dh = d
        if self.se is not None:
            dh = self.se.backward(dh)
        dh = self.conv_c.backward(self.bn_c.backward(dh))
        dh = self.relu_b.backward(dh)
        dh = self.conv_b.backward(self.bn_b.backward(dh))
        dh = self.relu_a.backward(dh)
        dh = self.conv_a.backward(self.bn_a.backward(dh))
        if self.shortcut_conv is None:
            dh += d
        else:
            dh += self.shortcut_conv.backward(self.shortcut_bn.backward(d))
        return dh


class GseResNeXt:
    """The full classifier.  ``forward`` records per-stage output shapes in
    ``last_shapes`` and keeps the pooled features in ``latent`` so callers
    can export embeddings without a second pass."""

    def __init__(self, config, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        if config.use_gabor:
            bank = init_gabor_bank(n_kernels=config.stem_channels)
            self.stem = GaborConv2d(bank, name="stem", dtype=dtype)
        else:
            self.stem = Conv2d(1, config.stem_channels, 7, stride=2,
                               padding=3, rng=rng, name="stem", dtype=dtype,
                               first_layer=True)
        self.stem_bn = BatchNorm2d(config.stem_channels, name="stem_bn",
                                   dtype=dtype)
        self.stem_relu = ReLU()
        self.pool = MaxPool2d(3, 2, 1)
        self.stages = []
        in_ch = config.stem_channels
        for si, width in enumerate(config.stage_widths):
            out_ch = 2 * width
            blocks = []
            for bi in range(config.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                blocks.append(Bottleneck(
                    in_ch, width, out_ch, config.cardinality, stride,
                    config.use_se, config.se_reduction, rng,
                    f"stage{si + 1}.block{bi}", dtype,
                ))
                in_ch = out_ch
            self.stages.append(blocks)
        self.gap = GlobalAvgPool()
        self.fc = Linear(in_ch, config.num_classes, rng=rng, name="fc",
                         dtype=dtype)
        self.latent = None
        self.last_shapes = {}

    # -- bookkeeping --------------------------------------------------

    def _layers(self):
        layers = [self.stem, self.stem_bn]
        for blocks in self.stages:
            layers.extend(blocks)
        layers.append(self.fc)
        return layers

    def parameters(self):
        out = []
        for layer in self._layers():
            out.extend(layer.parameters())
        return out

    def buffers(self):
        out = []
        for layer in self._layers():
            if hasattr(layer, "buffers"):
                out.extend(layer.buffers())
        return out

    @property
    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def apply_constraints(self):
        if isinstance(self.stem, GaborConv2d):
            self.stem.apply_constraints()

    # -- forward / backward -------------------------------------------

    def forward(self, x, training=True):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input (B, 1, H, W), got {x.shape}")
        shapes = {}
        h = self.stem.forward(x, training)
        shapes["stem"] = h.shape
        h = self.stem_relu.forward(self.stem_bn.forward(h, training), training)
        h = self.pool.forward(h, training)
        shapes["pool"] = h.shape
        for si, blocks in enumerate(self.stages):
            for block in blocks:
                h = block.forward(h, training)
            shapes[f"stage{si + 1}"] = h.shape
        pooled = self.gap.forward(h, training)
        shapes["gap"] = pooled.shape
        self.latent = pooled
        logits = self.fc.forward(pooled, training)
        shapes["logits"] = logits.shape
        self.last_shapes = shapes
        return logits

    def backward(self, dlogits):
        d = self.fc.backward(dlogits)
        d = self.gap.backward(d)
        for blocks in reversed(self.stages):
            for block in reversed(blocks):
                d = block.backward(d)
        d = self.pool.backward(d)
        d = self.stem_bn.backward(self.stem_relu.backward(d))
        return self.stem.backward(d)

    def predict(self, x):
        """Eval-mode class predictions and probabilities."""
        logits = self.forward(x, training=False)
        probs = softmax(logits)
        return probs.argmax(axis=1), probs


def build_model(config, seed=0, dtype=np.float32):
    return GseResNeXt(config, seed=seed, dtype=dtype)


def extract_latent(model, x):
    """Pooled pre-classifier features for a batch, eval mode."""
    model.forward(x, training=False)
    return model.latent.copy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _slug(name):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def save_checkpoint(model, out_dir):
    """One .gset file per parameter and buffer plus a manifest listing
    names in order."""
    os.makedirs(out_dir, exist_ok=True)
    entries = [(p.name, p.value, "param") for p in model.parameters()]
    entries += [(name, arr, "buffer") for name, arr in model.buffers()]
    lines = []
    for name, arr, kind in entries:
        fname = _slug(name) + ".gset"
        save_tensor(os.path.join(out_dir, fname), arr)
        lines.append(f"{kind}\t{name}\t{fname}")
    tmp = os.path.join(out_dir, "manifest.txt.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.txt"))


def load_checkpoint(model, ckpt_dir):
    """Load values saved by :func:`save_checkpoint` into ``model`` in
    place.  Raises DataError on missing files or shape mismatches."""
    manifest = os.path.join(ckpt_dir, "manifest.txt")
    if not os.path.isfile(manifest):
        raise DataError(f"no checkpoint manifest at {manifest}")
    by_name = {p.name: p.value for p in model.parameters()}
    by_name.update({name: arr for name, arr in model.buffers()})
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                _, name, fname = line.split("\t")
            except ValueError:
                raise DataError(f"malformed manifest line: {line!r}")
            if name not in by_name:
                raise DataError(f"checkpoint names unknown tensor {name!r}")
            value = load_tensor(os.path.join(ckpt_dir, fname))
            target = by_name[name]
            if value.shape != target.shape:
                raise DataError(
                    f"checkpoint tensor {name!r} has shape {value.shape}, "
                    f"model expects {target.shape}"
                )
            target[...] = value.astype(target.dtype)
    return model
