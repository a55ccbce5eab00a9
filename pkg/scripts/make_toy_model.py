#!/usr/bin/env python3
"""Regenerate the pretrained toy model shipped at tests/fixtures/toy_model.pmhl.

Trains a small attention classifier on the 8-class synthetic corpus just long
enough that the attention curve reliably points at the informative chunk, so
`songlight extract --model` is exercisable in tests without a training run.
Deterministic: rerunning writes a byte-identical file.
"""

from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from songlight import models, training  # noqa: E402

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "toy_model.pmhl"


def main() -> None:
    spec = training.SyntheticSpec(n_classes=8, clips_per_class=32, seed=20)
    dataset = training.generate_synthetic(spec)
    config = models.ModelConfig(variant="NAM_LF_POS", n_classes=8, loss_kind="cce")
    train_config = training.TrainConfig(epochs=10, lr=1e-3, batch_songs=16,
                                        seed=20, val_fraction=0.125)
    params, logs = training.train(dataset, config, train_config)
    for log in logs:
        print(f"epoch {log.epoch}: loss {log.train_loss:.4f} "
              f"val_acc {log.val_accuracy:.4f}")
    FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    models.save_model(FIXTURE, params, config)
    print(f"wrote {FIXTURE} ({FIXTURE.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
