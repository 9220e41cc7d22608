"""Shared fixtures: a fabricated spectrogram cache for fast training
tests and a small real corpus (synth + preprocess) for CLI round trips."""

import os

import numpy as np
import pytest

from gsenet.audio import CLASS_LABELS
from gsenet.cli import main as cli_main
from gsenet.protocol import SegmentRef
from gsenet.tensor import save_tensor


def make_fake_cache(root, per_class=3, offsets=(0.0, 15.0, 30.0),
                    frames=64, seed=0):
    """Write class-separable random spectrograms straight into a cache
    directory, bypassing audio synthesis.  Each class gets a bright
    horizontal band at a distinct row so small models can learn quickly."""
    rng = np.random.default_rng(seed)
    segments = []
    os.makedirs(root, exist_ok=True)
    for ci, lab in enumerate(CLASS_LABELS):
        for k in range(per_class):
            rec = f"{lab}_{k:03d}"
            for off in offsets:
                img = rng.normal(0.0, 1.0, size=(255, frames)).astype(np.float32)
                img[ci * 50 : ci * 50 + 35, :] += 4.0
                seg = SegmentRef(rec, lab, float(off))
                save_tensor(os.path.join(root, f"{seg.segment_id}.gset"), img)
                segments.append(seg)
    return segments


@pytest.fixture(scope="session")
def fake_cache(tmp_path_factory):
    root = tmp_path_factory.mktemp("fake_cache")
    segments = make_fake_cache(str(root))
    return str(root), segments


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Small real corpus: 2 recordings per class, 150 s each."""
    out = str(tmp_path_factory.mktemp("corpus") / "corpus")
    rc = cli_main(["synth", "--per-class", "2", "--duration", "150",
                   "--out", out, "--seed", "11"])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def corpus_manifest(corpus_dir):
    return os.path.join(corpus_dir, "manifest.csv")


@pytest.fixture(scope="session")
def seg_cache(corpus_manifest, tmp_path_factory):
    """Cached per-segment spectrograms for the small corpus."""
    cache = str(tmp_path_factory.mktemp("cache"))
    rc = cli_main(["preprocess", "--manifest", corpus_manifest,
                   "--cache", cache])
    assert rc == 0
    return cache
