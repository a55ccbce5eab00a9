"""The ``songlight`` command line.

Subcommands: ``extract`` (highlights from audio), ``curves`` (per-frame CSV
curves), ``train`` (fit a model on a manifest), ``synth`` (write a synthetic
corpus), ``eval`` (score highlights against annotations), ``bench`` (seconds
per training epoch per variant).

Highlight output is JSON lines; curves and reports are CSV.  ``--jobs`` (or
the ``HIGHLIGHTER_JOBS`` environment variable) bounds file-level parallelism
for extraction; results always keep input order.  Output files are written
only after a subcommand has fully succeeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import dsp, evaluation, extraction, models, training

_FRAME_METHODS = {"energy": dsp.energy_curve, "centroid": dsp.centroid_curve,
                  "rolloff": dsp.rolloff_curve}


class CliError(Exception):
    """User-facing command failure: message to stderr, exit status 1."""


def _default_jobs() -> int:
    raw = os.environ.get("HIGHLIGHTER_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise CliError(f"HIGHLIGHTER_JOBS must be an integer, got {raw!r}")
    return max(1, jobs)


def _load_model(path):
    try:
        return models.load_model(path)
    except models.ModelIOError as exc:
        raise CliError(str(exc))


def _guard_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")


def _song_attention(clip: dsp.AudioClip, params, config):
    spec = dsp.log_compress(dsp.mel_spectrogram(clip))
    chunks = dsp.chunk(spec, config.frames_per_chunk, pad_last=True)
    _, att = models.forward(chunks, params, config)
    return att, spec.n_frames


def _extract_one(path: str, args, model) -> tuple[dict, dict[str, dsp.FrameCurve]]:
    clip = dsp.load_audio(path)
    clip_id = Path(path).stem
    duration = clip.duration_sec
    curves: dict[str, dsp.FrameCurve] = {}
    if args.method == "middle":
        hl = extraction.middle_baseline(duration, args.length)
    elif args.method in _FRAME_METHODS:
        curve = _FRAME_METHODS[args.method](clip)
        curves[args.method] = curve
        hl = extraction.extract_from_frame_curve(curve, duration, args.length)
    else:
        params, config = model
        att, n_frames = _song_attention(clip, params, config)
        curves["attention"] = extraction.upsample_attention(att, n_frames, dsp.HOP_SECONDS)
        if args.fusion_weight is None:
            hl = extraction.extract_from_attention(att, duration, args.length)
        else:
            energy = dsp.energy_curve(clip)
            curves["energy"] = energy
            fusion = extraction.FusionConfig(args.fusion_weight)
            if 0.0 < fusion.weight < 1.0:
                curves["fused"] = extraction.fuse_curves(
                    energy, curves["attention"], fusion)
            hl = extraction.extract_fused(att, energy, fusion, duration, args.length)
    row = {"clip_id": clip_id, "start_sec": hl.start_sec, "end_sec": hl.end_sec,
           "source": hl.source}
    if args.fusion_weight is not None and args.method is None:
        row["lambda"] = args.fusion_weight
    return row, curves


def _cmd_extract(args) -> int:
    if (args.model is None) == (args.method is None):
        raise CliError("pass exactly one of --model or --method")
    if args.fusion_weight is not None and args.model is None:
        raise CliError("--lambda needs --model")
    model = _load_model(args.model) if args.model else None
    if args.curves_dir:
        Path(args.curves_dir).mkdir(parents=True, exist_ok=True)

    def worker(path):
        return _extract_one(path, args, model)

    results: list[tuple[dict, dict] | None] = [None] * len(args.audio)
    failures = []
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = [pool.submit(worker, p) for p in args.audio]
        for i, (path, future) in enumerate(zip(args.audio, futures)):
            try:
                results[i] = future.result()
            except dsp.DspError as exc:
                failures.append(path)
                print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    rows = []
    for path, result in zip(args.audio, results):
        if result is None:
            continue
        row, curves = result
        rows.append(row)
        if args.curves_dir:
            for kind, curve in curves.items():
                dsp.write_curve_csv(
                    curve, Path(args.curves_dir) / f"{row['clip_id']}.{kind}.csv")
    if not rows:
        raise CliError("no inputs could be processed")
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def _cmd_curves(args) -> int:
    features = [f.strip() for f in args.features.split(",") if f.strip()]
    unknown = [f for f in features if f not in (*_FRAME_METHODS, "attention")]
    if unknown:
        raise CliError(f"unknown features {unknown}; choose from "
                       f"{sorted((*_FRAME_METHODS, 'attention'))}")
    if "attention" in features and not args.model:
        raise CliError("the attention feature needs --model")
    model = _load_model(args.model) if args.model else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.audio:
        clip = dsp.load_audio(path)
        clip_id = Path(path).stem
        for feature in features:
            if feature == "attention":
                params, config = model
                att, n_frames = _song_attention(clip, params, config)
                curve = extraction.upsample_attention(att, n_frames, dsp.HOP_SECONDS)
            else:
                curve = _FRAME_METHODS[feature](clip)
            dsp.write_curve_csv(curve, out_dir / f"{clip_id}.{feature}.csv")
    return 0


def _cmd_train(args) -> int:
    dataset = training.ingest_dataset(args.manifest)
    if args.loss:
        loss_kind = args.loss
    else:
        single_label = all(int(c.label.sum()) == 1 for c in dataset.clips)
        loss_kind = "cce" if single_label else "bce"
    config = models.ModelConfig(variant=args.variant, n_classes=dataset.n_classes,
                                loss_kind=loss_kind)
    train_config = training.TrainConfig(
        epochs=args.epochs, lr=args.lr, batch_songs=args.batch_songs,
        seed=args.seed, val_fraction=args.val_fraction)
    params, logs = training.train(dataset, config, train_config)
    models.save_model(args.out, params, config)
    log_path = args.log or f"{args.out}.log.csv"
    training.write_training_log(log_path, logs)
    for log in logs:
        print(f"epoch {log.epoch}: loss {log.train_loss:.4f} "
              f"val_acc {log.val_accuracy:.4f} ({log.seconds:.1f}s)")
    print(f"saved model to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    _guard_overwrite(out / "manifest.jsonl", args.force)
    spec = training.SyntheticSpec(n_classes=args.classes,
                                  clips_per_class=args.per_class,
                                  clip_seconds=args.clip_seconds, seed=args.seed)
    training.write_synthetic_dataset(spec, out)
    print(f"wrote {args.classes * args.per_class} clips to {out}")
    return 0


def _cmd_eval(args) -> int:
    out = Path(args.out)
    _guard_overwrite(out, args.force)
    annotations = evaluation.read_annotations(args.annotations)
    by_method: dict[str, list[extraction.Highlight]] = {}
    ids_by_method: dict[str, list[str]] = {}
    with Path(args.highlights).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                hl = extraction.Highlight(start_sec=float(row["start_sec"]),
                                          end_sec=float(row["end_sec"]),
                                          source=row["source"])
                clip_id = row["clip_id"]
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{args.highlights}:{line_no}: bad highlight: {exc}")
            by_method.setdefault(hl.source, []).append(hl)
            ids_by_method.setdefault(hl.source, []).append(clip_id)
    if not by_method:
        raise CliError(f"{args.highlights}: no highlights found")
    try:
        reports = evaluation.evaluate_corpus(by_method, annotations, ids_by_method)
    except evaluation.AnnotationError as exc:
        raise CliError(str(exc))
    evaluation.write_report_csv(out, reports)
    for report in reports:
        print(f"{report.method}: R {report.mean_recall:.4f} "
              f"P {report.mean_precision:.4f} F {report.mean_f:.4f} "
              f"({len(report.per_song)} songs)")
    return 0


def _cmd_bench(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in models.VARIANTS:
            raise CliError(f"unknown variant {v!r}; choose from {models.VARIANTS}")
    dataset = training.ingest_dataset(args.manifest)
    results = training.epoch_timer(variants, dataset, epochs=args.epochs,
                                   warmup=args.warmup, seed=args.seed,
                                   batch_songs=args.batch_songs)
    lines = ["variant,seconds_per_epoch"]
    for v in variants:
        lines.append(f"{v},{results[v]:.3f}")
        print(f"{v}: {results[v]:.3f} s/epoch")
    if args.out:
        out = Path(args.out)
        _guard_overwrite(out, args.force)
        out.write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="songlight",
        description="Extract fixed-length music highlights from attention and energy curves.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract one highlight per input file")
    p.add_argument("--audio", action="append", required=True,
                   help="input WAV; repeat for several files")
    p.add_argument("--model", help="model file for attention-based extraction")
    p.add_argument("--method", choices=("middle", "energy", "centroid", "rolloff"),
                   help="model-free baseline method")
    p.add_argument("--length", type=float, default=30.0, help="highlight seconds")
    p.add_argument("--lambda", dest="fusion_weight", type=float, default=None,
                   help="fusion weight on energy (1 = pure energy, 0 = pure attention)")
    p.add_argument("--out", help="output JSON-lines path (default: stdout)")
    p.add_argument("--curves-dir", help="also dump per-song curve CSVs here")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: HIGHLIGHTER_JOBS or 1)")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("curves", help="dump per-frame curves as CSV")
    p.add_argument("--audio", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--features", default="energy,centroid,rolloff",
                   help="comma list of energy, centroid, rolloff, attention")
    p.add_argument("--model", help="model file (needed for the attention feature)")
    p.set_defaults(func=_cmd_curves)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", required=True, choices=models.VARIANTS)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--loss", choices=("bce", "cce"),
                   help="objective (default: cce for single-label data, else bce)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-songs", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clip-seconds", type=float, default=24.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="score highlights against annotations")
    p.add_argument("--highlights", required=True, help="JSON-lines highlights")
    p.add_argument("--annotations", required=True, help="JSON-lines sections")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="time training epochs per variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variants", default="NAM_LF,RNAM_LF")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--batch-songs", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "extract":
            args.jobs = max(1, args.jobs) if args.jobs is not None else _default_jobs()
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (dsp.DspError, training.DatasetError, training.TrainingError,
            models.ModelIOError, evaluation.AnnotationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
