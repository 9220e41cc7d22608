"""Command-line entry point.

Commands: synth (write a synthetic corpus), preprocess (cache per-segment
spectrograms), run (k-fold evaluation of one task, with ablations),
experiment (temporal-proximity grids a/b/c), report (summaries and
convergence charts), kernels (first-layer tile sheet).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import protocol, synth
from .audio import load_wav
from .config import (CACHE_ENV_VAR, config_hash, load_run_config)
from .cqt import cqt
from .errors import DataError, GseError, NumericError, UsageError
from .layers import GaborConv2d
from .model import build_model, load_checkpoint, save_checkpoint
from .protocol import (FoldPlan, PlanPair, cache_offsets, entries_from_manifest,
                       experiment_groups, experiment_plan, filter_eligible,
                       format_offset, split_task)
from .report import (kernel_sheet, summary_report, svg_bar_chart,
                     svg_line_chart)
from .synth import generate_corpus, read_manifest
from .tensor import load_tensor, save_tensor
from .train import (SegmentDataset, TrainConfig, kfold_evaluate,
                    steady_state_epoch)

ABLATIONS = ("none", "se", "gabor", "both")


class _Parser(argparse.ArgumentParser):
    """Raise UsageError instead of exiting, so main() owns the exit code."""

    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="gsenet",
                     description="Underwater-acoustic vessel classifier "
                                 "(CQT + Gabor front end + SE-ResNeXt).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ship-noise corpus")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--duration", type=float, default=150.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4,
                   help="number of vessel classes (up to 4)")

    p = sub.add_parser("preprocess", help="cache per-segment spectrograms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", default=None,
                   help=f"cache dir (default: ${CACHE_ENV_VAR} or config)")
    p.add_argument("--config", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("run", help="k-fold evaluation of one task")
    p.add_argument("--task", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--config", default=None)
    p.add_argument("--ablate", choices=ABLATIONS, default="none")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("experiment",
                       help="temporal-proximity grids over the fifths")
    p.add_argument("--kind", required=True, choices=("a", "b", "c"))
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("report", help="summarize results and draw curves")
    p.add_argument("--results", required=True)

    p = sub.add_parser("kernels", help="first-layer kernel tile sheet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def cmd_synth(args):
    if not 1 <= args.classes <= len(synth.CLASS_LABELS):
        raise UsageError(
            f"--classes must be 1..{len(synth.CLASS_LABELS)}, got {args.classes}"
        )
    classes = synth.CLASS_LABELS[: args.classes]
    rows = generate_corpus(args.out, per_class=args.per_class,
                           duration=args.duration, seed=args.seed,
                           classes=classes)
    print(f"wrote {len(rows)} recordings + manifest to {args.out}")
    return 0


def _load_cfg(args):
    cfg = load_run_config(getattr(args, "config", None),
                          getattr(args, "overrides", []) or [])
    return cfg


def _resolve_cache(args, cfg):
    return (getattr(args, "cache", None) or os.environ.get(CACHE_ENV_VAR)
            or cfg.data.cache_dir)


def cmd_preprocess(args):
    cfg = _load_cfg(args)
    cache_dir = _resolve_cache(args, cfg)
    os.makedirs(cache_dir, exist_ok=True)
    rows = read_manifest(args.manifest)
    entries = filter_eligible(entries_from_manifest(rows),
                              cfg.protocol.min_duration_s)
    if not entries:
        raise DataError(f"{args.manifest}: no recording exceeds "
                        f"{cfg.protocol.min_duration_s:g} s")
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    params = cfg.cqt
    seg_n = int(round(cfg.protocol.segment_seconds * params.sample_rate))
    n_seg_frames = (seg_n - int(params.kernel_length(0))) // params.hop + 1
    written = skipped = 0
    for entry in entries:
        offsets = cache_offsets(entry, cfg.protocol.segment_seconds,
                                cfg.protocol.effective_overlap())
        todo = []
        for off in offsets:
            dest = os.path.join(cache_dir,
                                f"{entry.recording_id}_{format_offset(off)}.gset")
            try:
                cached = load_tensor(dest)
                if cached.shape == (params.n_bins, n_seg_frames):
                    skipped += 1
                    continue
            except (DataError, FileNotFoundError, OSError):
                pass  # absent or corrupt: re-derive below
            todo.append((off, dest))
        if not todo:
            continue
        wav_path = entry.path
        if wav_path and not os.path.isabs(wav_path) and not os.path.exists(wav_path):
            wav_path = os.path.join(manifest_dir, entry.path)
        clip = load_wav(wav_path, class_label=entry.class_label,
                        recording_id=entry.recording_id)
        spec = cqt(clip, params)
        for off, dest in todo:
            s0 = int(round(off * params.sample_rate))
            if s0 % params.hop == 0:
                f0 = s0 // params.hop
                vals = spec.values[:, f0 : f0 + n_seg_frames]
            else:
                vals = spec.values[:, :0]  # force the direct path
            if vals.shape[1] != n_seg_frames:
                from .audio import AudioClip

                seg_clip = AudioClip(clip.samples[s0 : s0 + seg_n],
                                     clip.sample_rate)
                vals = cqt(seg_clip, params).values
            save_tensor(dest, np.ascontiguousarray(vals, dtype=np.float32))
            written += 1
    print(f"cached {written} spectrograms ({skipped} already valid) in {cache_dir}")
    return 0


def _ablated_model_config(model_cfg, ablate):
    from dataclasses import replace

    if ablate == "se":
        return replace(model_cfg, use_se=False)
    if ablate == "gabor":
        return replace(model_cfg, use_gabor=False)
    if ablate == "both":
        return replace(model_cfg, use_se=False, use_gabor=False)
    return model_cfg


def _prepare(args, cfg):
    manifest = getattr(args, "manifest", None) or cfg.data.manifest
    cache_dir = _resolve_cache(args, cfg)
    out_dir = getattr(args, "out", None) or cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = read_manifest(manifest)
    entries = filter_eligible(entries_from_manifest(rows),
                              cfg.protocol.min_duration_s)
    if not entries:
        raise DataError(f"{manifest}: no eligible recordings")
    dataset = SegmentDataset(cache_dir, cfg.model.input_size)
    return entries, dataset, out_dir


def cmd_run(args):
    cfg = _load_cfg(args)
    model_cfg = _ablated_model_config(cfg.model, args.ablate).validate()
    entries, dataset, out_dir = _prepare(args, cfg)
    dataset.input_size = model_cfg.input_size
    plan = split_task(args.task, entries, cfg.train.seed,
                      seg_seconds=cfg.protocol.segment_seconds,
                      overlap_seconds=cfg.protocol.effective_overlap())
    chash = config_hash(cfg)
    stem = f"task{args.task}_{args.ablate}_{chash}"
    results = kfold_evaluate(plan, dataset, cfg.train,
                             lambda seed: build_model(model_cfg, seed),
                             augment=cfg.augment.policy())
    for history in results["histories"]:
        history.save_csv(os.path.join(
            out_dir, f"{stem}_history_{history.pair_label}.csv"))
    payload = {
        "config_hash": chash,
        "task": args.task,
        "ablation": args.ablate,
        "plan": plan.to_json(),
        "per_fold": results["per_fold"],
        "aggregate": {"mean_mcc": results["mean_mcc"],
                      "std_mcc": results["std_mcc"]},
    }
    result_path = os.path.join(out_dir, f"{stem}.json")
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    svg_bar_chart(
        [f["label"] for f in results["per_fold"]],
        [f["mcc"] for f in results["per_fold"]],
        f"Task {args.task} ({args.ablate}) per-fold MCC", "MCC",
        path=os.path.join(out_dir, f"{stem}.svg"),
        comment=f"config-hash: {chash}",
    )
    ckpt_dir = os.path.join(out_dir, f"{stem}_ckpt")
    save_checkpoint(results["last_model"], ckpt_dir)
    with open(os.path.join(ckpt_dir, "model_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"config_hash": chash, **model_cfg.__dict__}, fh, indent=1)
    print(f"task {args.task} ablate={args.ablate}: "
          f"MCC {results['mean_mcc']:.4f} +/- {results['std_mcc']:.4f} "
          f"over {len(results['per_fold'])} folds -> {result_path}")
    return 0


def cmd_experiment(args):
    cfg = _load_cfg(args)
    model_cfg = cfg.model.validate()
    entries, dataset, out_dir = _prepare(args, cfg)
    plan = split_task(2, entries, cfg.train.seed,
                      seg_seconds=cfg.protocol.segment_seconds,
                      overlap_seconds=cfg.protocol.effective_overlap())
    runs = experiment_plan(args.kind)
    chash = config_hash(cfg)
    stem = f"experiment_{args.kind}_{chash}"
    results = kfold_evaluate(plan, dataset, cfg.train,
                             lambda seed: build_model(model_cfg, seed),
                             augment=cfg.augment.policy(),
                             pairs=[r.as_pair() for r in runs])
    by_label = {f["label"]: f for f in results["per_fold"]}
    groups = experiment_groups(runs)
    rows = []
    for (size, distance), members in groups:
        vals = [by_label[r.label]["mcc"] for r in members]
        rows.append({"size": size, "distance": distance,
                     "mcc": float(np.mean(vals)),
                     "runs": [r.label for r in members]})
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "distance", "mean_mcc", "runs"])
        for row in rows:
            writer.writerow([row["size"], row["distance"],
                             f"{row['mcc']:.6f}", ";".join(row["runs"])])
    if args.kind == "b":
        series = {"train size": [(r["size"], r["mcc"]) for r in rows]}
        xlabel = "train-set size (fifths)"
    elif args.kind == "a":
        series = {"distance": [(r["distance"], r["mcc"]) for r in rows]}
        xlabel = "temporal distance (fifths)"
    else:
        series = {}
        for row in rows:
            series.setdefault(f"size {row['size']}", []).append(
                (row["distance"], row["mcc"]))
        xlabel = "temporal distance (fifths)"
    svg_line_chart(series, f"Experiment ({args.kind}) mean MCC", xlabel,
                   "MCC", path=os.path.join(out_dir, f"{stem}.svg"),
                   comment=f"config-hash: {chash}")
    payload = {
        "config_hash": chash,
        "task": 2,
        "ablation": "none",
        "experiment": args.kind,
        "points": rows,
        "per_fold": results["per_fold"],
        "aggregate": {"mean_mcc": results["mean_mcc"],
                      "std_mcc": results["std_mcc"]},
    }
    with open(os.path.join(out_dir, f"{stem}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    print(f"experiment {args.kind}: {len(results['per_fold'])} runs, "
          f"{len(rows)} averaged points -> {csv_path}")
    return 0


def cmd_report(args):
    text = summary_report(args.results,
                          out_prefix=os.path.join(args.results, "summary"))
    print(text)
    curves = {}
    markers = {}
    for name in sorted(os.listdir(args.results)):
        if "_history_" not in name or not name.endswith(".csv"):
            continue
        label = name[: -len(".csv")]
        with open(os.path.join(args.results, name), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        pts = [(int(r["epoch"]), float(r["val_mcc"])) for r in rows]
        curves[label] = pts
        sse = steady_state_epoch([p[1] for p in pts])
        if sse is not None:
            markers[label] = sse
    if curves:
        svg_line_chart(curves, "Validation MCC by epoch", "epoch", "MCC",
                       markers=markers,
                       path=os.path.join(args.results, "convergence.svg"))
        print(f"convergence chart -> {os.path.join(args.results, 'convergence.svg')}")
    return 0


def cmd_kernels(args):
    cfg_path = os.path.join(args.checkpoint, "model_config.json")
    if not os.path.isfile(cfg_path):
        raise DataError(f"missing {cfg_path}; expected a checkpoint directory "
                        f"written by the run command")
    with open(cfg_path, "r", encoding="utf-8") as fh:
        saved = json.load(fh)
    from .model import ModelConfig

    fields = {k: v for k, v in saved.items() if k != "config_hash"}
    if "stage_widths" in fields:
        fields["stage_widths"] = tuple(fields["stage_widths"])
    model_cfg = ModelConfig(**fields)
    model = build_model(model_cfg, seed=0)
    load_checkpoint(model, args.checkpoint)
    if isinstance(model.stem, GaborConv2d):
        weights = model.stem._weights(np.float64)
    else:
        weights = model.stem.weight.value
    shape = kernel_sheet(weights, args.out)
    print(f"kernel sheet {shape[0]}x{shape[1]} -> {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "run": cmd_run,
    "experiment": cmd_experiment,
    "report": cmd_report,
    "kernels": cmd_kernels,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except GseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
