"""Training loop, steady-state detection, k-fold aggregation, and latent
export.

A run is deterministic under a fixed (seed, pair label): the validation
carve-out, epoch shuffles, and augmentation draws all derive from one
generator seeded by ``derive_seed``.
"""

from __future__ import annotations

import csv
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .audio import CLASS_LABELS
from .cqt import SpecAugmentPolicy, spec_augment, to_model_input
from .errors import DataError
from .layers import softmax_cross_entropy
from .metrics import confusion, metrics
from .optim import AdamW
from .tensor import load_tensor


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1

    def validate(self):
        if self.lr <= 0:
            raise DataError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 0.5:
            raise DataError(
                f"val_fraction must lie in (0, 0.5), got {self.val_fraction}"
            )
        if self.epochs < 1 or self.batch_size < 2:
            raise DataError("need epochs >= 1 and batch_size >= 2")
        return self


@dataclass
class TrainHistory:
    pair_label: str
    epochs: list = field(default_factory=list)  # dicts: epoch/train_loss/val_mcc/seconds
    test_metrics: dict = field(default_factory=dict)
    steady_state_epoch: int | None = None
    confusion: list = field(default_factory=list)

    @property
    def val_mcc_series(self):
        return [rec["val_mcc"] for rec in self.epochs]

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_mcc", "seconds"])
            for rec in self.epochs:
                writer.writerow([rec["epoch"], f"{rec['train_loss']:.6f}",
                                 f"{rec['val_mcc']:.6f}", f"{rec['seconds']:.3f}"])


def derive_seed(seed, label):
    """Stable per-run stream: base seed mixed with a CRC of the label."""
    return (int(seed) * 1_000_003 + zlib.crc32(str(label).encode())) % 2**32


class SegmentDataset:
    """Maps segment references to cached model inputs.

    Each cached spectrogram is loaded once, resized/standardized to the
    model input size, and memoized, so repeated folds over the same
    segments cost one disk read.
    """

    def __init__(self, cache_dir, input_size, class_labels=CLASS_LABELS):
        self.cache_dir = os.fspath(cache_dir)
        self.input_size = input_size
        self.class_labels = tuple(class_labels)
        self._index = {lab: i for i, lab in enumerate(self.class_labels)}
        self._memo = {}

    @property
    def n_classes(self):
        return len(self.class_labels)

    def label_index(self, seg):
        try:
            return self._index[seg.class_label]
        except KeyError:
            raise DataError(f"unknown class label {seg.class_label!r}")

    def image(self, seg):
        cached = self._memo.get(seg.segment_id)
        if cached is None:
            path = os.path.join(self.cache_dir, f"{seg.segment_id}.gset")
            if not os.path.exists(path):
                raise DataError(
                    f"missing cached spectrogram {path}; run preprocessing first"
                )
            spec = load_tensor(path)
            cached = to_model_input(spec, self.input_size)
            self._memo[seg.segment_id] = cached
        return cached

    def batch(self, segments, augment=None, rng=None):
        imgs = np.empty((len(segments), 1, self.input_size, self.input_size),
                        dtype=np.float32)
        labels = np.empty(len(segments), dtype=np.int64)
        for i, seg in enumerate(segments):
            img = self.image(seg)
            if augment is not None:
                img = spec_augment(img, augment, rng)
            imgs[i] = img
            labels[i] = self.label_index(seg)
        return imgs, labels


def stratified_val_split(segments, labels, val_fraction, rng):
    """Indices (train, val) with ~val_fraction carved out per class; every
    class keeps at least one training sample."""
    labels = np.asarray(labels)
    train_idx, val_idx = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < 2:
            take = 0
        else:
            take = min(len(idx) - 1, max(1, int(round(val_fraction * len(idx)))))
        val_idx.extend(idx[:take])
        train_idx.extend(idx[take:])
    return sorted(train_idx), sorted(val_idx)


def evaluate(model, segments, dataset, batch_size=64):
    """Eval-mode predictions; returns (labels, preds) arrays."""
    labels = np.empty(len(segments), dtype=np.int64)
    preds = np.empty(len(segments), dtype=np.int64)
    for lo in range(0, len(segments), batch_size):
        chunk = segments[lo : lo + batch_size]
        x, y = dataset.batch(chunk)
        p, _ = model.predict(x)
        labels[lo : lo + len(chunk)] = y
        preds[lo : lo + len(chunk)] = p
    return labels, preds


def train(model, train_segments, test_segments, dataset, cfg,
          augment=SpecAugmentPolicy(), pair_label=""):
    """Train one model on one train/test pair and return its history.

    Validation (``cfg.val_fraction`` of the training segments, stratified)
    is scored by MCC after every epoch; test metrics are computed once at
    the end.  Raises DataError if a class is absent from the training
    split or if validation would overlap the test set.
    """
    cfg.validate()
    if not train_segments or not test_segments:
        raise DataError(f"{pair_label}: empty train or test split")
    rng = np.random.default_rng(derive_seed(cfg.seed, pair_label))

    labels = [dataset.label_index(s) for s in train_segments]
    tr_idx, val_idx = stratified_val_split(train_segments, labels,
                                           cfg.val_fraction, rng)
    fit_segments = [train_segments[i] for i in tr_idx]
    val_segments = [train_segments[i] for i in val_idx]

    present = {dataset.label_index(s) for s in fit_segments}
    wanted = {dataset.label_index(s) for s in train_segments + test_segments}
    if present != wanted:
        missing = sorted(wanted - present)
        names = [dataset.class_labels[i] for i in missing]
        raise DataError(f"{pair_label}: no training samples for class(es) {names}")

    test_ids = {s.segment_id for s in test_segments}
    if test_ids & {s.segment_id for s in val_segments}:
        raise DataError(f"{pair_label}: validation segments leak into the test set")
    if test_ids & {s.segment_id for s in fit_segments}:
        raise DataError(f"{pair_label}: training segments leak into the test set")

    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                betas=cfg.betas, eps=cfg.eps)
    history = TrainHistory(pair_label=pair_label)
    n = len(fit_segments)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        order = rng.permutation(n)
        total_loss = 0.0
        total_seen = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs at least two samples
            batch = [fit_segments[i] for i in idx]
            x, y = dataset.batch(batch, augment=augment, rng=rng)
            logits = model.forward(x, training=True)
            loss, dlogits = softmax_cross_entropy(logits, y)
            opt.zero_grad()
            model.backward(dlogits)
            opt.step()
            model.apply_constraints()
            total_loss += loss * len(idx)
            total_seen += len(idx)
        if val_segments:
            vl, vp = evaluate(model, val_segments, dataset, cfg.batch_size)
            val_mcc = metrics(confusion(vl, vp, dataset.n_classes))["mcc"]
        else:
            val_mcc = float("nan")
        history.epochs.append({
            "epoch": epoch,
            "train_loss": total_loss / max(total_seen, 1),
            "val_mcc": val_mcc,
            "seconds": time.time() - t0,
        })

    tl, tp = evaluate(model, test_segments, dataset, cfg.batch_size)
    cm = confusion(tl, tp, dataset.n_classes)
    history.test_metrics = metrics(cm)
    history.confusion = cm.tolist()
    if val_segments:
        history.steady_state_epoch = steady_state_epoch(history.val_mcc_series)
    return history


def steady_state_epoch(series, tol_pp=2.0, window=3, relative=False):
    """First 1-based epoch from which the series stays within the
    tolerance of its final value for ``window`` consecutive epochs.

    The tolerance is absolute percentage points on the MCC scale
    (tol_pp=2 means 0.02); ``relative=True`` reads it as a fraction of
    the final value instead.  Returns None when no window qualifies.
    """
    series = [float(v) for v in series]
    if not series or len(series) < window:
        return None
    final = series[-1]
    if relative:
        threshold = (tol_pp / 100.0) * abs(final)
    else:
        threshold = tol_pp / 100.0
    for e in range(len(series) - window + 1):
        if all(abs(series[i] - final) <= threshold + 1e-12
               for i in range(e, e + window)):
            return e + 1
    return None


def kfold_evaluate(plan, dataset, cfg, model_factory,
                   augment=SpecAugmentPolicy(), pairs=None):
    """Train one fresh model per plan pair and aggregate MCC.

    ``model_factory(seed)`` must return an untrained model.  Returns a
    dict with per-fold records and mean/population-std across folds.
    """
    pairs = list(plan.pairs if pairs is None else pairs)
    if not pairs:
        raise DataError("plan has no train/test pairs")
    per_fold = []
    histories = []
    for pair in pairs:
        train_segments, test_segments = plan.pair_segments(pair)
        model = model_factory(derive_seed(cfg.seed, pair.label))
        try:
            history = train(model, train_segments, test_segments, dataset,
                            cfg, augment=augment, pair_label=pair.label)
        except DataError as exc:
            raise DataError(f"pair {pair.label}: {exc}") from exc
        per_fold.append({
            "label": pair.label,
            "mcc": history.test_metrics["mcc"],
            "accuracy": history.test_metrics["accuracy"],
            "macro_f1": history.test_metrics["macro_f1"],
            "steady_state_epoch": history.steady_state_epoch,
            "confusion": history.confusion,
            "n_train": len(train_segments),
            "n_test": len(test_segments),
        })
        histories.append(history)
    values = np.array([f["mcc"] for f in per_fold])
    return {
        "mean_mcc": float(values.mean()),
        "std_mcc": float(values.std()),  # population std: folds are the design
        "per_fold": per_fold,
        "histories": histories,
        "last_model": model,
    }


def export_latents(model, segments, dataset, path, batch_size=64):
    """CSV of pooled pre-classifier features for each segment."""
    dim = model.config.latent_dim
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment_id", "true_label", "predicted_label"]
                        + [f"f{i}" for i in range(dim)])
        for lo in range(0, len(segments), batch_size):
            chunk = segments[lo : lo + batch_size]
            x, _ = dataset.batch(chunk)
            preds, _ = model.predict(x)
            latent = model.latent
            for seg, pred, feats in zip(chunk, preds, latent):
                writer.writerow(
                    [seg.segment_id, seg.class_label,
                     dataset.class_labels[int(pred)]]
                    + [f"{v:.6g}" for v in feats]
                )
    os.replace(tmp, path)
