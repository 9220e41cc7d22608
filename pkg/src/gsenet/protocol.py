"""Cross-validation plans for the three evaluation protocols.

Task 1 shuffles 30 s segments into stratified folds (segment-level,
leakage-prone by design).  Task 2 cuts each recording into five contiguous
temporal fifths; fold i holds every recording's i-th fifth, and only the
two mirrored train-one-fifth pairs are evaluated.  Task 3 assigns whole
recordings to folds so no vessel recording ever straddles the train/test
boundary.

Experiment grids (kinds a, b, c) re-combine Task-2 fifths to probe how
temporal distance and training-set size interact.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .audio import segment_offsets
from .errors import DataError

SEGMENT_SECONDS = 30.0
OVERLAP_SECONDS = 15.0
MIN_DURATION_S = 90.0
N_FOLDS = 5


def format_offset(value):
    """Canonical second-offset string: integral values lose the decimal
    point ("15", not "15.0")."""
    return f"{value:g}"


@dataclass(frozen=True)
class RecordingEntry:
    recording_id: str
    class_label: str
    duration_s: float
    path: str = ""
    vessel_id: str = ""

    @classmethod
    def from_manifest_row(cls, row):
        return cls(
            recording_id=row["recording_id"],
            class_label=row["class_label"],
            duration_s=float(row["duration_s"]),
            path=row.get("path", ""),
            vessel_id=row.get("vessel_id", ""),
        )


@dataclass(frozen=True)
class SegmentRef:
    recording_id: str
    class_label: str
    start: float

    @property
    def segment_id(self):
        return f"{self.recording_id}_{format_offset(self.start)}"

    def to_json(self):
        return {"recording_id": self.recording_id,
                "class_label": self.class_label, "start": self.start}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["recording_id"], obj["class_label"], float(obj["start"]))


@dataclass(frozen=True)
class PlanPair:
    """One train/test combination over 1-based fold indices."""

    train: tuple
    test: tuple
    label: str

    def to_json(self):
        return {"train": list(self.train), "test": list(self.test),
                "label": self.label}


@dataclass
class FoldPlan:
    task: int
    seed: int
    folds: list  # N_FOLDS lists of SegmentRef
    pairs: list  # list of PlanPair

    def pair_segments(self, pair):
        train = [s for i in pair.train for s in self.folds[i - 1]]
        test = [s for i in pair.test for s in self.folds[i - 1]]
        return train, test

    def all_segments(self):
        return [s for fold in self.folds for s in fold]

    def validate(self):
        ids = [s.segment_id for s in self.all_segments()]
        if len(ids) != len(set(ids)):
            raise DataError("plan assigns some segment to more than one fold")
        for pair in self.pairs:
            if set(pair.train) & set(pair.test):
                raise DataError(f"pair {pair.label}: train/test folds overlap")
            for i in pair.train + pair.test:
                if not 1 <= i <= len(self.folds):
                    raise DataError(f"pair {pair.label}: fold index {i} out of range")
        return self

    def to_json(self):
        return {
            "task": self.task,
            "seed": self.seed,
            "folds": [[s.to_json() for s in fold] for fold in self.folds],
            "pairs": [p.to_json() for p in self.pairs],
        }

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
        os.replace(tmp, path)

    @classmethod
    def from_json(cls, obj):
        return cls(
            task=int(obj["task"]),
            seed=int(obj["seed"]),
            folds=[[SegmentRef.from_json(s) for s in fold]
                   for fold in obj["folds"]],
            pairs=[PlanPair(tuple(p["train"]), tuple(p["test"]), p["label"])
                   for p in obj["pairs"]],
        )


def filter_eligible(entries, min_duration=MIN_DURATION_S):
    """Keep recordings strictly longer than ``min_duration`` seconds."""
    return [e for e in entries if e.duration_s > min_duration]


def entries_from_manifest(rows):
    return [RecordingEntry.from_manifest_row(r) for r in rows]


def _leave_one_out_pairs():
    all_folds = tuple(range(1, N_FOLDS + 1))
    return [
        PlanPair(tuple(i for i in all_folds if i != k), (k,), f"fold{k}")
        for k in all_folds
    ]


def recording_segments(entry, seg_seconds=SEGMENT_SECONDS,
                       overlap_seconds=OVERLAP_SECONDS):
    """All overlapped segment references of one recording."""
    offsets = segment_offsets(entry.duration_s, seg_seconds, overlap_seconds)
    return [SegmentRef(entry.recording_id, entry.class_label, o)
            for o in offsets]


def split_task1(entries, seed, seg_seconds=SEGMENT_SECONDS,
                overlap_seconds=OVERLAP_SECONDS):
    """Segment-level stratified folds: per class, segments are shuffled by
    the seed and dealt round-robin, which keeps per-fold class proportions
    within a couple of percentage points of the global mix."""
    entries = list(entries)
    if not entries:
        raise DataError("no eligible recordings for a Task-1 plan")
    segments = []
    for e in entries:
        segments.extend(recording_segments(e, seg_seconds, overlap_seconds))
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(N_FOLDS)]
    labels = sorted({s.class_label for s in segments})
    for label in labels:
        group = [s for s in segments if s.class_label == label]
        order = rng.permutation(len(group))
        for slot, idx in enumerate(order):
            folds[slot % N_FOLDS].append(group[idx])
    plan = FoldPlan(task=1, seed=seed, folds=folds,
                    pairs=_leave_one_out_pairs())
    return plan.validate()


def fifth_starts(duration_s):
    """Start offsets of the five contiguous fifths.  The fifth length is
    the floor of duration/5 in whole seconds; the remainder rides along
    with the final fifth."""
    q = math.floor(duration_s / N_FOLDS)
    return [float(i * q) for i in range(N_FOLDS)], float(q)


def split_task2(entries, seed, seg_seconds=SEGMENT_SECONDS,
                overlap_seconds=OVERLAP_SECONDS):
    """Temporal-fifth folds: fold i holds the i-th fifth of every
    recording; the two evaluated pairs train on one boundary fifth and
    test on the remaining four."""
    entries = list(entries)
    if not entries:
        raise DataError("no eligible recordings for a Task-2 plan")
    folds = [[] for _ in range(N_FOLDS)]
    for e in entries:
        starts, q = fifth_starts(e.duration_s)
        if q < seg_seconds:
            raise DataError(
                f"{e.recording_id}: fifth length {q:g} s is shorter than one "
                f"{seg_seconds:g} s segment"
            )
        for i, fstart in enumerate(starts):
            fend = e.duration_s if i == N_FOLDS - 1 else starts[i] + q
            span = fend - fstart
            for off in segment_offsets(span, seg_seconds, overlap_seconds):
                folds[i].append(
                    SegmentRef(e.recording_id, e.class_label, fstart + off)
                )
    pairs = [
        PlanPair((1,), (2, 3, 4, 5), "first-fifth"),
        PlanPair((5,), (1, 2, 3, 4), "last-fifth"),
    ]
    plan = FoldPlan(task=2, seed=seed, folds=folds, pairs=pairs)
    return plan.validate()


def split_task3(entries, seed, seg_seconds=SEGMENT_SECONDS,
                overlap_seconds=OVERLAP_SECONDS):
    """Recording-level folds: within each class, recordings are shuffled
    by the seed and dealt round-robin, so fold recording counts balance
    and no recording ever crosses folds."""
    entries = list(entries)
    if not entries:
        raise DataError("no eligible recordings for a Task-3 plan")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(N_FOLDS)]
    labels = sorted({e.class_label for e in entries})
    for label in labels:
        group = [e for e in entries if e.class_label == label]
        order = rng.permutation(len(group))
        for slot, idx in enumerate(order):
            folds[slot % N_FOLDS].extend(
                recording_segments(group[idx], seg_seconds, overlap_seconds)
            )
    plan = FoldPlan(task=3, seed=seed, folds=folds,
                    pairs=_leave_one_out_pairs())
    return plan.validate()


def split_task(task, entries, seed, **kwargs):
    try:
        fn = {1: split_task1, 2: split_task2, 3: split_task3}[int(task)]
    except (KeyError, ValueError):
        raise DataError(f"unknown task {task!r}; expected 1, 2, or 3")
    return fn(entries, seed, **kwargs)


def cache_offsets(entry, seg_seconds=SEGMENT_SECONDS,
                  overlap_seconds=OVERLAP_SECONDS):
    """Union of every segment offset any task's plan may request from one
    recording: the plain overlapped grid plus the within-fifth grids."""
    offs = set(segment_offsets(entry.duration_s, seg_seconds, overlap_seconds))
    starts, q = fifth_starts(entry.duration_s)
    if q >= seg_seconds:
        for i, fstart in enumerate(starts):
            fend = entry.duration_s if i == N_FOLDS - 1 else fstart + q
            for off in segment_offsets(fend - fstart, seg_seconds,
                                       overlap_seconds):
                offs.add(fstart + off)
    return sorted(offs)


def check_stratification(plan, tolerance_pp=2.0):
    """Assert per-fold class proportions sit within ``tolerance_pp``
    percentage points of the global proportions."""
    all_segments = plan.all_segments()
    labels = sorted({s.class_label for s in all_segments})
    total = len(all_segments)
    global_prop = {
        lab: sum(s.class_label == lab for s in all_segments) / total
        for lab in labels
    }
    for k, fold in enumerate(plan.folds, start=1):
        if not fold:
            raise DataError(f"fold {k} is empty")
        for lab in labels:
            prop = sum(s.class_label == lab for s in fold) / len(fold)
            if abs(prop - global_prop[lab]) > tolerance_pp / 100.0 + 1e-12:
                raise DataError(
                    f"fold {k} class {lab!r}: proportion {prop:.3f} deviates "
                    f"more than {tolerance_pp}pp from global {global_prop[lab]:.3f}"
                )
    return True


# ---------------------------------------------------------------------------
# Temporal-proximity experiment grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentRun:
    train: tuple
    test: tuple
    label: str
    size: int
    distance: int

    def as_pair(self):
        return PlanPair(self.train, self.test, self.label)


def _distance(train, test_fold):
    return min(abs(i - test_fold) for i in train)


def _runs_for_side(train_sets, test_fold, mirror_tag):
    runs = []
    for train in train_sets:
        train = tuple(sorted(train))
        d = _distance(train, test_fold)
        runs.append(ExperimentRun(
            train=train, test=(test_fold,),
            label=f"size{len(train)}_dist{d}_{mirror_tag}",
            size=len(train), distance=d,
        ))
    return runs


def experiment_plan(kind):
    """Train/test fold-index grids over the Task-2 fifths.

    kind "a": fixed train size 1, temporal distance 1..4, mirrored.
    kind "b": adjacent train sets of size 4..1, mirrored.
    kind "c": the full size x distance cross (adjacent train sets),
    mirrored.  Every run carries (size, distance) so mirrored runs can be
    averaged by group.
    """
    if kind == "a":
        fwd = [(j,) for j in (2, 3, 4, 5)]
        mirror = [(j,) for j in (4, 3, 2, 1)]
    elif kind == "b":
        fwd = [(2, 3, 4, 5), (2, 3, 4), (2, 3), (2,)]
        mirror = [(1, 2, 3, 4), (2, 3, 4), (3, 4), (4,)]
    elif kind == "c":
        fwd = [(2,), (3,), (4,), (5,),
               (2, 3), (3, 4), (4, 5),
               (2, 3, 4), (3, 4, 5)]
        mirror = [(4,), (3,), (2,), (1,),
                  (3, 4), (2, 3), (1, 2),
                  (2, 3, 4), (1, 2, 3)]
    else:
        raise DataError(f"unknown experiment kind {kind!r}; expected a, b, or c")
    return (_runs_for_side(fwd, 1, "fwd")
            + _runs_for_side(mirror, N_FOLDS, "mir"))


def experiment_groups(runs):
    """Group runs by (size, distance) for averaging; returns an ordered
    dict-like list of ((size, distance), [runs])."""
    keys = []
    groups = {}
    for run in runs:
        key = (run.size, run.distance)
        if key not in groups:
            groups[key] = []
            keys.append(key)
        groups[key].append(run)
    return [(k, groups[k]) for k in sorted(keys)]
