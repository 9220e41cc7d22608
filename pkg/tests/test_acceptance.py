"""End-to-end acceptance checks.

Ten checks covering: analytic gradients, the architecture's shape and
parameter budget, the Gabor initialization grid, spectrogram tone
localization, metric identities, evaluation-protocol invariants, the
three-task difficulty ordering, temporal-distance decay, stem convergence
speed, and a memorization sanity run with all component ablations.

Each check prints one [PASS]/[FAIL] line to the real stderr stream so the
verdicts remain visible under pytest output capture.  Checks 7-9 train on a
synthetic corpus generated once per session; they dominate the runtime of
the suite (tens of minutes on one CPU core).
"""

import math
import sys
import time
import zlib
from dataclasses import replace
from statistics import median

import numpy as np
import pytest

from _util import max_rel_err, numeric_grad

from gsenet.audio import CLASS_LABELS, AudioClip
from gsenet.cli import main as cli_main
from gsenet.cqt import CqtParams, cqt
from gsenet.gabor import GaborBank, GaborParams, gabor_backward, gabor_conv_forward, init_gabor_bank
from gsenet.layers import (
    batch_norm_backward,
    batch_norm_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    se_backward,
    se_forward,
    softmax_cross_entropy,
)
from gsenet.metrics import confusion, mcc, mcc_binary, mcc_generalized, metrics
from gsenet.model import GseResNeXt, ModelConfig, desk_config
from gsenet.optim import AdamW
from gsenet.protocol import (
    entries_from_manifest,
    experiment_groups,
    experiment_plan,
    filter_eligible,
    split_task,
)
from gsenet.report import svg_line_chart
from gsenet.synth import generate_corpus, read_manifest
from gsenet.train import SegmentDataset, TrainConfig, kfold_evaluate

SEEDS = (0, 1, 2, 3, 4)
DESK = desk_config(input_size=64, stem_channels=32)
PROTOCOL_TRAIN = TrainConfig(lr=3e-3, epochs=10, batch_size=16)
PROTOCOL_AUG = None  # mask augmentation off for the short desk runs
FULL_PARAM_COUNT = 14_732_228


def _report(capfd, num, ok, detail):
    with capfd.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] check {num}: {detail}",
              file=sys.stderr, flush=True)
    return ok


# ---------------------------------------------------------------------------
# Session fixtures: synthetic corpus, spectrogram cache, trained protocols
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    corpus_dir = root / "corpus"
    cache_dir = root / "cache"
    generate_corpus(corpus_dir, per_class=20, duration=150.0, seed=0)
    rc = cli_main(["preprocess", "--manifest", str(corpus_dir / "manifest.csv"),
                   "--cache", str(cache_dir)])
    assert rc == 0
    entries = filter_eligible(entries_from_manifest(
        read_manifest(corpus_dir / "manifest.csv")))
    return {"root": root, "entries": entries, "cache": str(cache_dir)}


@pytest.fixture(scope="session")
def protocol_results(corpus):
    """Everything checks 7-9 need, trained once: the three-task k-fold
    suite over five seeds (timed), the temporal-distance runs, and a
    plain-stem comparison run per seed."""
    ds = SegmentDataset(corpus["cache"], DESK.input_size)
    entries = corpus["entries"]

    def gabor_factory(s):
        return GseResNeXt(DESK, seed=s)

    plain_model = replace(DESK, use_gabor=False)

    def plain_factory(s):
        return GseResNeXt(plain_model, seed=s)

    t0 = time.monotonic()
    ordering = {}
    for seed in SEEDS:
        cfg = replace(PROTOCOL_TRAIN, seed=seed)
        ordering[seed] = {
            task: kfold_evaluate(split_task(task, entries, seed=seed), ds, cfg,
                                 gabor_factory, augment=PROTOCOL_AUG)
            for task in (1, 2, 3)
        }
    ordering_seconds = time.monotonic() - t0

    distance = {}
    runs = experiment_plan("a")
    for seed in SEEDS:
        cfg = replace(PROTOCOL_TRAIN, seed=seed)
        res = kfold_evaluate(split_task(2, entries, seed=seed), ds, cfg,
                             gabor_factory, augment=PROTOCOL_AUG,
                             pairs=[r.as_pair() for r in runs])
        by_label = {f["label"]: f["mcc"] for f in res["per_fold"]}
        distance[seed] = {
            dist: float(np.mean([by_label[r.label] for r in members]))
            for (_, dist), members in experiment_groups(runs)
        }

    plain_histories = {}
    for seed in SEEDS:
        plan = split_task(1, entries, seed=seed)
        res = kfold_evaluate(plan, ds, replace(PROTOCOL_TRAIN, seed=seed),
                             plain_factory, augment=PROTOCOL_AUG,
                             pairs=[plan.pairs[0]])
        plain_histories[seed] = res["histories"][0]

    return {"ordering": ordering, "ordering_seconds": ordering_seconds,
            "distance": distance, "plain_histories": plain_histories}


# ---------------------------------------------------------------------------
# Check 1: analytic backward passes agree with central finite differences
# ---------------------------------------------------------------------------


def _gabor_grad_err(rng):
    n_k = int(rng.integers(2, 5))
    bank = GaborBank(
        kernels=[GaborParams(sigma=float(rng.uniform(0.8, 3.5)),
                             theta=float(rng.uniform(0.0, np.pi)),
                             f0=float(rng.uniform(0.05, 0.4)),
                             phi=float(rng.uniform(-np.pi, np.pi)),
                             gamma=float(rng.uniform(0.5, 1.5)))
                 for _ in range(n_k)],
        kernel_size=int(rng.choice([5, 7])), stride=int(rng.choice([1, 2])))
    h = int(rng.integers(8, 13))
    x = rng.standard_normal((1, 1, h, h))
    y = gabor_conv_forward(x, bank)
    r = rng.standard_normal(y.shape)
    dx, pgrads = gabor_backward(r, x, bank)

    def loss_with(field, vals):
        probe = GaborBank(
            kernels=[GaborParams(**{**vars(p), field: float(v)})
                     for p, v in zip(bank.kernels, vals)],
            kernel_size=bank.kernel_size, stride=bank.stride)
        return float(np.sum(gabor_conv_forward(x, probe) * r))

    worst = max_rel_err(dx, numeric_grad(
        lambda v: float(np.sum(gabor_conv_forward(v, bank) * r)), x.copy()))
    for field in ("sigma", "theta", "f0", "phi", "gamma"):
        base = np.array([getattr(p, field) for p in bank.kernels])
        num = numeric_grad(lambda v: loss_with(field, v), base.copy())
        worst = max(worst, max_rel_err(pgrads[field], num))
    return worst


def _conv_grad_err(rng):
    groups = int(rng.choice([1, 2, 4]))
    cg = int(rng.integers(1, 4))
    ocg = int(rng.integers(1, 4))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.choice([0, 1]))
    k = int(rng.choice([1, 3]))
    h = int(rng.integers(4, 8))
    x = rng.standard_normal((2, groups * cg, h, h))
    w = rng.standard_normal((groups * ocg, cg, k, k))
    y, cache = conv2d_forward(x, w, stride=stride, padding=padding, groups=groups)
    r = rng.standard_normal(y.shape)
    dx, dw = conv2d_backward(r, cache)
    num_dx = numeric_grad(lambda v: float(np.sum(
        conv2d_forward(v, w, stride=stride, padding=padding, groups=groups)[0] * r)),
        x.copy())
    num_dw = numeric_grad(lambda v: float(np.sum(
        conv2d_forward(x, v, stride=stride, padding=padding, groups=groups)[0] * r)),
        w.copy())
    return max(max_rel_err(dx, num_dx), max_rel_err(dw, num_dw))


def _bn_grad_err(rng):
    c = int(rng.integers(2, 6))
    x = rng.standard_normal((3, c, 4, 4))
    gamma = rng.uniform(0.5, 1.5, c)
    beta = rng.standard_normal(c)

    def fwd(xv, gv, bv):
        return batch_norm_forward(xv, gv, bv, np.zeros(c), np.ones(c),
                                  training=True)

    y, cache = fwd(x, gamma, beta)
    r = rng.standard_normal(y.shape)
    dx, dgamma, dbeta = batch_norm_backward(r, cache)

    def loss(xv, gv, bv):
        return float(np.sum(fwd(xv, gv, bv)[0] * r))

    return max(
        max_rel_err(dx, numeric_grad(lambda v: loss(v, gamma, beta), x.copy())),
        max_rel_err(dgamma, numeric_grad(lambda v: loss(x, v, beta), gamma.copy())),
        max_rel_err(dbeta, numeric_grad(lambda v: loss(x, gamma, v), beta.copy())),
    )


def _se_grad_err(rng):
    c = int(rng.choice([4, 8]))
    red = int(rng.choice([2, 4]))
    x = rng.standard_normal((2, c, 3, 3))
    w1 = rng.standard_normal((c // red, c)) * 0.5
    w2 = rng.standard_normal((c, c // red)) * 0.5
    y, cache = se_forward(x, w1, w2)
    r = rng.standard_normal(y.shape)
    dx, dw1, dw2 = se_backward(r, cache)

    def loss(xv, av, bv):
        return float(np.sum(se_forward(xv, av, bv)[0] * r))

    return max(
        max_rel_err(dx, numeric_grad(lambda v: loss(v, w1, w2), x.copy())),
        max_rel_err(dw1, numeric_grad(lambda v: loss(x, v, w2), w1.copy())),
        max_rel_err(dw2, numeric_grad(lambda v: loss(x, w1, v), w2.copy())),
    )


def _linear_grad_err(rng):
    n_in = int(rng.integers(3, 9))
    n_out = int(rng.integers(2, 6))
    x = rng.standard_normal((4, n_in))
    w = rng.standard_normal((n_out, n_in))
    b = rng.standard_normal(n_out)
    y, cache = linear_forward(x, w, b)
    r = rng.standard_normal(y.shape)
    dx, dw, db = linear_backward(r, cache)

    def loss(xv, wv, bv):
        return float(np.sum(linear_forward(xv, wv, bv)[0] * r))

    return max(
        max_rel_err(dx, numeric_grad(lambda v: loss(v, w, b), x.copy())),
        max_rel_err(dw, numeric_grad(lambda v: loss(x, v, b), w.copy())),
        max_rel_err(db, numeric_grad(lambda v: loss(x, w, v), b.copy())),
    )


def _softmax_ce_grad_err(rng):
    n, c = int(rng.integers(3, 9)), int(rng.integers(2, 6))
    logits = rng.standard_normal((n, c)) * 2.0
    labels = rng.integers(0, c, n)
    _, dlogits = softmax_cross_entropy(logits, labels)
    num = numeric_grad(
        lambda v: softmax_cross_entropy(v, labels)[0], logits.copy())
    return max_rel_err(dlogits, num)


def test_check_1_gradient_suite(capfd):
    families = {
        "gabor": _gabor_grad_err,
        "grouped_conv": _conv_grad_err,
        "batch_norm": _bn_grad_err,
        "se_gate": _se_grad_err,
        "linear": _linear_grad_err,
        "softmax_ce": _softmax_ce_grad_err,
    }
    t0 = time.monotonic()
    worst = {}
    for name, fn in families.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        worst[name] = max(fn(rng) for _ in range(10))
    elapsed = time.monotonic() - t0
    worst_overall = max(worst.values())
    ok = worst_overall <= 1e-4 and elapsed < 120.0
    _report(capfd, 1, ok, f"6 layer families x 10 random configs, worst relative "
                   f"error {worst_overall:.2e} (tol 1e-4), {elapsed:.1f}s (< 120s)")
    assert worst_overall <= 1e-4, worst
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# Check 2: architecture shape ladder and parameter budget
# ---------------------------------------------------------------------------


def test_check_2_architecture_shapes_and_parameter_count(capfd):
    model = GseResNeXt(ModelConfig(), seed=0)
    n_params = model.num_params
    x = np.random.default_rng(0).standard_normal((1, 1, 256, 256)).astype(np.float32)
    model.forward(x, training=False)
    shapes = model.last_shapes
    expected = {
        "stem": (1, 64, 128, 128),
        "pool": (1, 64, 64, 64),
        "stage1": (1, 256, 64, 64),
        "stage2": (1, 512, 32, 32),
        "stage3": (1, 1024, 16, 16),
        "stage4": (1, 2048, 8, 8),
        "gap": (1, 2048),
        "logits": (1, 4),
    }
    shapes_ok = shapes == expected
    count_ok = 13_200_000 <= n_params <= 16_200_000
    ok = shapes_ok and count_ok and n_params == FULL_PARAM_COUNT
    _report(capfd, 2, ok, f"spatial ladder 128/64/64/32/16/8/1 with 4 logits; "
                   f"exact parameter count {n_params:,} in [13.2M, 16.2M] "
                   f"(SE reduction ratio {ModelConfig().se_reduction})")
    assert shapes_ok, shapes
    assert count_ok and n_params == FULL_PARAM_COUNT, n_params


# ---------------------------------------------------------------------------
# Check 3: Gabor initialization grid and first-layer parameter economy
# ---------------------------------------------------------------------------


def test_check_3_gabor_init_grid_and_param_economy(capfd):
    bank = init_gabor_bank(64)
    worst = 0.0
    for k, p in enumerate(bank.kernels):
        m, n = divmod(k % 40, 8)
        m, n = m + 1, n + 1
        omega = (math.pi / 2.0) * math.sqrt(2.0) ** (-m)
        worst = max(
            worst,
            abs(p.sigma - math.pi / omega),
            abs(p.theta - (n - 1) * math.pi / 8.0),
            abs(p.f0 - omega / (2.0 * math.pi)),
            abs(p.phi), abs(p.gamma - 1.0),
        )
    omega_1 = (math.pi / 2.0) / math.sqrt(2.0)
    first = bank.kernels[0]
    grid_ok = worst <= 1e-12 and abs(first.f0 - omega_1 / (2 * math.pi)) <= 1e-12

    gabor_model = GseResNeXt(desk_config(), seed=0)
    plain_model = GseResNeXt(replace(desk_config(), use_gabor=False), seed=0)

    def stem_params(m):
        return sum(p.value.size for p in m.parameters() if p.name.startswith("stem."))

    n_gabor = stem_params(gabor_model)
    n_plain = stem_params(plain_model)
    econ_ok = n_gabor == 320 and n_plain == 3136
    ok = grid_ok and econ_ok
    _report(capfd, 3, ok, f"init grid matches the closed form to {worst:.1e} "
                   f"(tol 1e-12); learnable stem 320 params vs {n_plain} plain")
    assert grid_ok, worst
    assert econ_ok, (n_gabor, n_plain)


# ---------------------------------------------------------------------------
# Check 4: spectrogram tone localization
# ---------------------------------------------------------------------------


def test_check_4_tone_localization(capfd):
    t0 = time.monotonic()
    params = CqtParams()
    rng = np.random.default_rng(4)
    freqs = np.exp(rng.uniform(np.log(30.0), np.log(6000.0), 20))
    dur, sr = 5.0, params.sample_rate
    t = np.arange(int(dur * sr)) / sr

    def peak_bin(f):
        clip = AudioClip((0.5 * np.sin(2 * np.pi * f * t)).astype(np.float32), sr)
        spec = cqt(clip, params)
        return int(np.argmax(spec.values.mean(axis=1)))

    worst_off = 0
    for f in freqs:
        expected = round(24 * math.log2(f / 10.0))
        worst_off = max(worst_off, abs(peak_bin(f) - expected))

    worst_shift_err = 0
    for f in freqs[:8]:
        if f * 2 >= 6500.0:
            continue
        shift = peak_bin(2 * f) - peak_bin(f)
        worst_shift_err = max(worst_shift_err, abs(shift - 24))
    elapsed = time.monotonic() - t0
    ok = worst_off <= 1 and worst_shift_err <= 1 and elapsed < 60.0
    _report(capfd, 4, ok, f"20 tones localize to round(24*log2(f/10)) within "
                   f"{worst_off} bin; octave shift moves the peak by 24±"
                   f"{worst_shift_err}; {elapsed:.1f}s (< 60s)")
    assert worst_off <= 1
    assert worst_shift_err <= 1
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# Check 5: metric identities
# ---------------------------------------------------------------------------


def test_check_5_mcc_identities(capfd):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        cm = rng.integers(0, 50, size=(2, 2)).astype(float)
        worst = max(worst, abs(mcc_generalized(cm) - mcc_binary(cm)))
    labels = np.repeat(np.arange(4), 50)
    cm_const = confusion(labels, np.full(200, 2))
    const_mcc = mcc(cm_const)
    const_acc = metrics(cm_const)["accuracy"]
    perfect_mcc = mcc(confusion(labels, labels))
    ok = (worst <= 1e-10 and const_mcc == 0.0
          and const_acc == 0.25 and perfect_mcc == 1.0)
    _report(capfd, 5, ok, f"generalized vs binary MCC agree to {worst:.1e} over 1000 "
                   f"random 2x2 matrices; constant predictor MCC "
                   f"{const_mcc:g} / accuracy {const_acc:g}; "
                   f"perfect predictor MCC {perfect_mcc:g}")
    assert worst <= 1e-10
    assert const_mcc == 0.0 and const_acc == 0.25
    assert perfect_mcc == 1.0


# ---------------------------------------------------------------------------
# Check 6: evaluation-protocol invariants
# ---------------------------------------------------------------------------


def test_check_6_protocol_invariants(capfd, corpus):
    entries = corpus["entries"]
    durations = {e.recording_id: e.duration_s for e in entries}
    problems = []

    # recording-level folds never split a recording
    plan3 = split_task(3, entries, seed=0)
    for k, fold in enumerate(plan3.folds):
        recs = {s.recording_id for s in fold}
        for other in plan3.folds[k + 1:]:
            shared = recs & {s.recording_id for s in other}
            if shared:
                problems.append(f"task 3 recording split across folds: {shared}")

    # temporal folds: fold i holds exactly the i-th fifth of each recording
    plan2 = split_task(2, entries, seed=0)
    for i, fold in enumerate(plan2.folds):
        for s in fold:
            dur = durations[s.recording_id]
            q = math.floor(dur / 5)
            lo = i * q
            hi = dur if i == 4 else (i + 1) * q
            if not (lo - 1e-9 <= s.start and s.start + 30.0 <= hi + 1e-9):
                problems.append(
                    f"task 2 fold {i + 1}: segment at {s.start}s outside "
                    f"[{lo}, {hi})")

    # every pair trains and tests on disjoint segments
    for task in (1, 2, 3):
        plan = split_task(task, entries, seed=0)
        for pair in plan.pairs:
            train_segs, test_segs = plan.pair_segments(pair)
            overlap = ({s.segment_id for s in train_segs}
                       & {s.segment_id for s in test_segs})
            if overlap:
                problems.append(f"task {task} {pair.label}: train/test overlap")

    # leave-one-out folds partition the segment pool
    for task in (1, 3):
        plan = split_task(task, entries, seed=0)
        all_ids = sorted(s.segment_id for s in plan.all_segments())
        fold_ids = sorted(s.segment_id for fold in plan.folds for s in fold)
        if len(set(all_ids)) != len(all_ids) or fold_ids != all_ids:
            problems.append(f"task {task}: folds do not partition the segments")

    sizes = {kind: len(experiment_plan(kind)) for kind in "abc"}
    grid_c = sorted((r.size, r.distance) for r in experiment_plan("c"))
    expected_c = sorted(2 * [(1, 1), (1, 2), (1, 3), (1, 4),
                             (2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
    if sizes != {"a": 8, "b": 8, "c": 18}:
        problems.append(f"plan sizes {sizes}")
    if grid_c != expected_c:
        problems.append(f"(c) grid {grid_c}")

    ok = not problems
    _report(capfd, 6, ok, "fold plans keep recordings whole (task 3), fifths "
                   "ordered (task 2), folds disjoint/covering; experiment "
                   "plans enumerate 8/8/18 runs"
                   + ("" if ok else f"; problems: {problems[:3]}"))
    assert not problems, problems


# ---------------------------------------------------------------------------
# Check 7: three-task difficulty ordering at desk scale
# ---------------------------------------------------------------------------


def test_check_7_task_ordering(capfd, protocol_results):
    ordering = protocol_results["ordering"]
    elapsed = protocol_results["ordering_seconds"]
    good_seeds = 0
    parts = []
    for seed in SEEDS:
        m = {task: ordering[seed][task]["mean_mcc"] for task in (1, 2, 3)}
        gap12, gap23 = m[1] - m[2], m[2] - m[3]
        if gap12 > 0.05 and gap23 > 0.05:
            good_seeds += 1
        parts.append(f"s{seed} {m[1]:.2f}/{m[2]:.2f}/{m[3]:.2f}")
    ok = good_seeds >= 4 and elapsed < 1800.0
    _report(capfd, 7, ok, f"task-1 > task-2 > task-3 mean MCC with >5pp gaps in "
                   f"{good_seeds}/5 seeds ({'; '.join(parts)}); "
                   f"{elapsed:.0f}s (< 1800s)")
    assert good_seeds >= 4, parts
    assert elapsed < 1800.0


# ---------------------------------------------------------------------------
# Check 8: temporal-distance decay
# ---------------------------------------------------------------------------


def test_check_8_distance_decay(capfd, protocol_results):
    distance = protocol_results["distance"]
    good_seeds = 0
    parts = []
    for seed in SEEDS:
        series = [distance[seed][d] for d in (1, 2, 3, 4)]
        rises = [max(0.0, b - a) for a, b in zip(series, series[1:])]
        inversions = [r for r in rises if r > 1e-12]
        if len(inversions) <= 1 and all(r <= 0.02 + 1e-12 for r in inversions):
            good_seeds += 1
        parts.append("s%d %s" % (seed, "/".join(f"{v:.2f}" for v in series)))
    ok = good_seeds >= 3
    _report(capfd, 8, ok, f"MCC non-increasing over train/test distance 1..4 "
                   f"(one inversion <= 2pp allowed) in {good_seeds}/5 seeds "
                   f"({'; '.join(parts)})")
    assert good_seeds >= 3, parts


# ---------------------------------------------------------------------------
# Check 9: learnable-stem convergence vs plain stem
# ---------------------------------------------------------------------------


def test_check_9_stem_convergence(capfd, protocol_results, corpus):
    n_epochs = PROTOCOL_TRAIN.epochs
    gabor_ss, plain_ss = [], []
    gabor_curves, plain_curves = [], []
    for seed in SEEDS:
        gh = protocol_results["ordering"][seed][1]["histories"][0]
        ph = protocol_results["plain_histories"][seed]
        gabor_ss.append(gh.steady_state_epoch or n_epochs + 1)
        plain_ss.append(ph.steady_state_epoch or n_epochs + 1)
        gabor_curves.append(gh.val_mcc_series)
        plain_curves.append(ph.val_mcc_series)
    med_gabor, med_plain = median(gabor_ss), median(plain_ss)

    mean_curve = lambda curves: np.mean(np.array(curves), axis=0)
    series = {
        "gabor": [(e + 1, v) for e, v in enumerate(mean_curve(gabor_curves))],
        "plain": [(e + 1, v) for e, v in enumerate(mean_curve(plain_curves))],
    }
    out = corpus["root"] / "reports" / "stem_convergence.svg"
    out.parent.mkdir(exist_ok=True)
    svg_line_chart(series, "Validation MCC by epoch (mean of 5 seeds)",
                   "epoch", "val MCC",
                   markers={"gabor": med_gabor, "plain": med_plain},
                   path=out)
    ok = med_gabor <= med_plain and out.exists() and out.stat().st_size > 0
    _report(capfd, 9, ok, f"median steady-state epoch {med_gabor:g} (learnable stem) "
                   f"<= {med_plain:g} (plain stem) over 5 seeds "
                   f"[per-seed {gabor_ss} vs {plain_ss}]; curves at {out}")
    assert med_gabor <= med_plain, (gabor_ss, plain_ss)
    assert out.exists() and out.stat().st_size > 0


# ---------------------------------------------------------------------------
# Check 10: memorization sanity and component ablations
# ---------------------------------------------------------------------------


def test_check_10_overfit_and_ablations(capfd, corpus):
    from gsenet.protocol import SegmentRef

    ds = SegmentDataset(corpus["cache"], 64)
    by_class = {label: [] for label in CLASS_LABELS}
    for e in corpus["entries"]:
        by_class[e.class_label].append(e)
    segs = []
    for label in CLASS_LABELS:
        segs += [SegmentRef(e.recording_id, e.class_label, 0.0)
                 for e in by_class[label][:4]]
    x, labels = ds.batch(segs)

    full = ModelConfig(input_size=64)
    model = GseResNeXt(full, seed=0)
    assert model.num_params == FULL_PARAM_COUNT  # widths untouched
    opt = AdamW(model.parameters(), lr=2e-3, weight_decay=0.0)
    final_loss, steps_used = float("inf"), 0
    for step in range(1, 201):
        logits = model.forward(x, training=True)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        model.backward(dlogits)
        opt.step()
        opt.zero_grad()
        final_loss, steps_used = float(loss), step
        if final_loss < 0.05:
            break
    overfit_ok = final_loss < 0.05

    ablation_losses = {}
    xs = x[:8]
    ys = labels[:8]
    for name, (g, s) in {"full": (True, True), "no_gabor": (False, True),
                         "no_se": (True, False), "plain": (False, False)}.items():
        m = GseResNeXt(ModelConfig(input_size=64, use_gabor=g, use_se=s), seed=1)
        o = AdamW(m.parameters(), lr=1e-3)
        losses = []
        for _ in range(2):
            logits = m.forward(xs, training=True)
            loss, dlogits = softmax_cross_entropy(logits, ys)
            m.backward(dlogits)
            o.step()
            o.zero_grad()
            losses.append(float(loss))
        ablation_losses[name] = losses
    finite_ok = all(np.isfinite(v) for vals in ablation_losses.values() for v in vals)

    ok = overfit_ok and finite_ok
    _report(capfd, 10, ok, f"16 samples memorized to loss {final_loss:.3f} (< 0.05) "
                    f"in {steps_used} steps (<= 200); all 4 ablations train "
                    f"with finite losses")
    assert overfit_ok, (final_loss, steps_used)
    assert finite_ok, ablation_losses
