#!/usr/bin/env python3
"""Desk-scale end-to-end run on synthetic data.

Synthesizes a labeled corpus, trains the positional attention model on it,
extracts 3 s highlights with the attention curve, the energy baseline, the
fused curve, and the middle baseline, scores everything against the known
burst sections, and finishes with a per-variant training-speed benchmark.

Every step goes through the command line interface; the equivalent shell
command is echoed before each call so the output doubles as a usage demo.

    python3 scripts/run_synthetic_experiment.py --out /tmp/songlight_demo

Runtime is a couple of minutes with the defaults; pass --quick to shrink it.
"""

import argparse
import csv
import shlex
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from songlight import cli  # noqa: E402


def run(*argv):
    print(f"\n$ songlight {shlex.join(argv)}")
    status = cli.main(list(argv))
    if status != 0:
        sys.exit(f"step failed with exit status {status}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="experiment_out", help="working directory")
    parser.add_argument("--classes", type=int, default=8)
    parser.add_argument("--per-class", type=int, default=12)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--quick", action="store_true",
                        help="4 classes x 6 clips, 3 epochs")
    args = parser.parse_args()
    if args.quick:
        args.classes, args.per_class, args.epochs = 4, 6, 3

    out = Path(args.out)
    corpus = out / "corpus"
    model = out / "model.pmhl"
    out.mkdir(parents=True, exist_ok=True)

    run("synth", "--classes", str(args.classes), "--per-class", str(args.per_class),
        "--seed", str(args.seed), "--out", str(corpus), "--force")

    run("train", "--manifest", str(corpus / "manifest.jsonl"),
        "--variant", "NAM_LF_POS", "--epochs", str(args.epochs),
        "--lr", "1e-3", "--seed", str(args.seed), "--out", str(model))

    # Score a spread of clips: every fourth one, in corpus order.
    wavs = sorted(corpus.glob("*.wav"))[::4]
    audio_flags = []
    for wav in wavs:
        audio_flags += ["--audio", str(wav)]
    highlight_runs = {
        "attention": ["--model", str(model)],
        "fused": ["--model", str(model), "--lambda", "0.5"],
        "energy": ["--method", "energy"],
        "middle": ["--method", "middle"],
    }
    combined = out / "highlights.jsonl"
    with combined.open("w") as sink:
        for name, flags in highlight_runs.items():
            part = out / f"highlights.{name}.jsonl"
            run("extract", *audio_flags, *flags, "--length", "3",
                "--out", str(part))
            sink.write(part.read_text())

    report = out / "report.csv"
    run("eval", "--highlights", str(combined),
        "--annotations", str(corpus / "annotations.jsonl"),
        "--out", str(report), "--force")

    run("bench", "--manifest", str(corpus / "manifest.jsonl"),
        "--variants", "NAM_LF,RNAM_LF", "--epochs", "2", "--warmup", "1",
        "--out", str(out / "bench.csv"), "--force")

    print(f"\nSummary over {len(wavs)} clips (means from {report}):")
    print(f"{'method':<10} {'R':>7} {'P':>7} {'F':>7}")
    with report.open() as fh:
        for row in csv.DictReader(fh):
            if row["clip_id"] == "mean":
                print(f"{row['method']:<10} {float(row['R']):7.4f} "
                      f"{float(row['P']):7.4f} {float(row['F']):7.4f}")


if __name__ == "__main__":
    main()
