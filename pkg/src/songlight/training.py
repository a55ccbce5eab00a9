"""Dataset handling, synthetic clip generation, and the mini-batch trainer.

Synthetic clips make the surrogate classification task label-decodable by
construction: class ``k`` places a band-limited tone burst (class-specific
frequency) into one designated chunk of an otherwise near-silent clip, so a
correct classifier must attend to that chunk.  Chunk boundaries follow the
analysis grid (one chunk = 129 frames = 66048 samples), so the burst sits
exactly inside its chunk's frames.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp
from .models import ModelConfig, ModelParams, forward_batch, init_params
from .nn import AdamState, GradTape, adam_step, ops


class DatasetError(ValueError):
    """Raised for malformed manifests or clips."""


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (bad labels, non-finite loss...)."""


@dataclass
class LabeledClip:
    """One training example: a label vector plus audio or pre-chunked frames."""

    clip_id: str
    label: np.ndarray                 # {0,1}^C multi-hot
    audio_path: str | None = None
    chunks: np.ndarray | None = None  # [chunks, frames, bands] float32

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float32)
        if self.label.ndim != 1:
            raise DatasetError(f"{self.clip_id}: label must be a vector")
        if self.audio_path is None and self.chunks is None:
            raise DatasetError(f"{self.clip_id}: needs audio or pre-chunked frames")


@dataclass
class Dataset:
    clips: list[LabeledClip]
    n_classes: int
    label_names: list[str]

    def __post_init__(self):
        if self.n_classes < 2:
            raise DatasetError("a dataset needs at least two classes")
        if len(self.label_names) != self.n_classes:
            raise DatasetError("label_names must have one entry per class")
        for clip in self.clips:
            if clip.label.size != self.n_classes:
                raise DatasetError(
                    f"{clip.clip_id}: label width {clip.label.size} != {self.n_classes}")


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 1e-4
    batch_songs: int = 16
    seed: int = 0
    loss_kind: str | None = None   # None: use the model config's loss
    val_fraction: float = 0.2


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    seconds: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the synthetic surrogate-task corpus."""

    n_classes: int = 8
    clips_per_class: int = 125
    clip_seconds: float = 24.0
    chunks_per_clip: int = 8
    burst_amp: float = 0.5
    noise_floor: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise DatasetError("n_classes must be at least 2")
        if self.clips_per_class < 1:
            raise DatasetError("clips_per_class must be positive")
        min_seconds = self.chunks_per_clip * dsp.FRAMES_PER_CHUNK * dsp.HOP / dsp.SAMPLE_RATE
        if self.clip_seconds < min_seconds:
            raise DatasetError(f"clips must cover {self.chunks_per_clip} chunks")

    def informative_chunk(self, class_index: int) -> int:
        """1-based chunk position that carries class ``class_index``'s burst."""
        return class_index % self.chunks_per_clip + 1

    def class_frequency(self, class_index: int) -> float:
        freq = 200.0 + 250.0 * class_index
        if freq >= dsp.SAMPLE_RATE / 2:
            raise DatasetError("too many classes for distinct burst frequencies")
        return freq

    def burst_bounds_sec(self, class_index: int) -> tuple[float, float]:
        """Burst extent in seconds, aligned to the chunk frame grid."""
        chunk_samples = dsp.FRAMES_PER_CHUNK * dsp.HOP
        pos = self.informative_chunk(class_index)
        return ((pos - 1) * chunk_samples / dsp.SAMPLE_RATE,
                pos * chunk_samples / dsp.SAMPLE_RATE)


def synth_clip_samples(spec: SyntheticSpec, class_index: int,
                       instance: int) -> np.ndarray:
    """Deterministic samples for one synthetic clip."""
    if not (0 <= class_index < spec.n_classes):
        raise DatasetError("class index out of range")
    rng = np.random.default_rng([spec.seed, class_index, instance])
    n = int(round(spec.clip_seconds * dsp.SAMPLE_RATE))
    if spec.noise_floor > 0.0:
        samples = rng.normal(0.0, spec.noise_floor, size=n)
    else:
        samples = np.zeros(n)
    chunk_samples = dsp.FRAMES_PER_CHUNK * dsp.HOP
    pos = spec.informative_chunk(class_index)
    start = (pos - 1) * chunk_samples
    stop = pos * chunk_samples
    t = np.arange(stop - start) / dsp.SAMPLE_RATE
    phase = rng.uniform(0.0, 2.0 * np.pi)
    burst = spec.burst_amp * np.sin(2.0 * np.pi * spec.class_frequency(class_index) * t + phase)
    ramp = min(100, burst.size // 2)
    envelope = np.ones_like(burst)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    envelope[:ramp] = fade
    envelope[-ramp:] = fade[::-1]
    samples[start:stop] += burst * envelope
    # float32 keeps the in-memory corpus bit-identical to a WAV round trip
    return np.clip(samples, -1.0, 1.0).astype(np.float32)


def _clip_to_chunks(clip_samples: np.ndarray, n_chunks: int,
                    frames_per_chunk: int = dsp.FRAMES_PER_CHUNK) -> np.ndarray:
    audio = dsp.AudioClip(samples=clip_samples, sample_rate=dsp.SAMPLE_RATE)
    spec = dsp.log_compress(dsp.mel_spectrogram(audio))
    chunks = dsp.chunk(spec, frames_per_chunk, pad_last=False)
    if len(chunks) < n_chunks:
        raise DatasetError(f"clip yields {len(chunks)} chunks, expected {n_chunks}")
    return np.stack([c.data for c in chunks[:n_chunks]])


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Materialize the synthetic corpus with pre-chunked log-mel tensors."""
    clips = []
    for k in range(spec.n_classes):
        label = np.zeros(spec.n_classes, dtype=np.float32)
        label[k] = 1.0
        for i in range(spec.clips_per_class):
            samples = synth_clip_samples(spec, k, i)
            clips.append(LabeledClip(
                clip_id=f"synth-{k:03d}-{i:04d}", label=label.copy(),
                chunks=_clip_to_chunks(samples, spec.chunks_per_clip)))
    names = [f"class{k:03d}" for k in range(spec.n_classes)]
    return Dataset(clips=clips, n_classes=spec.n_classes, label_names=names)


def write_synthetic_dataset(spec: SyntheticSpec, out_dir) -> None:
    """Write WAVs plus manifest, descriptor, and burst-section annotations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    annotation_rows = []
    for k in range(spec.n_classes):
        burst = spec.burst_bounds_sec(k)
        for i in range(spec.clips_per_class):
            clip_id = f"synth-{k:03d}-{i:04d}"
            wav_name = f"{clip_id}.wav"
            samples = synth_clip_samples(spec, k, i)
            wavfile.write(out / wav_name, dsp.SAMPLE_RATE, samples.astype(np.float32))
            manifest_rows.append({"clip_id": clip_id, "audio": wav_name, "labels": [k]})
            annotation_rows.append({
                "clip_id": clip_id, "duration_sec": spec.clip_seconds,
                "sections": [[burst[0], burst[1], "burst"]]})
    with (out / "manifest.jsonl").open("w") as fh:
        for row in manifest_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with (out / "descriptor.json").open("w") as fh:
        json.dump({"n_classes": spec.n_classes,
                   "label_names": [f"class{k:03d}" for k in range(spec.n_classes)]},
                  fh, sort_keys=True)
        fh.write("\n")
    with (out / "annotations.jsonl").open("w") as fh:
        for row in annotation_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def ingest_dataset(manifest_path) -> Dataset:
    """Read a JSON-lines manifest plus its sibling ``descriptor.json``."""
    manifest_path = Path(manifest_path)
    descriptor_path = manifest_path.parent / "descriptor.json"
    if not descriptor_path.exists():
        raise DatasetError(f"missing dataset descriptor {descriptor_path}")
    with descriptor_path.open() as fh:
        descriptor = json.load(fh)
    try:
        n_classes = int(descriptor["n_classes"])
        label_names = list(descriptor["label_names"])
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{descriptor_path}: bad descriptor: {exc}") from exc
    clips = []
    seen = set()
    with manifest_path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                clip_id = row["clip_id"]
                audio = row["audio"]
                labels = row["labels"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{manifest_path}:{line_no}: bad row: {exc}") from exc
            if clip_id in seen:
                raise DatasetError(f"{manifest_path}: duplicate clip_id {clip_id!r}")
            seen.add(clip_id)
            if not labels or any(not (0 <= int(l) < n_classes) for l in labels):
                raise DatasetError(
                    f"clip {clip_id!r}: labels {labels} invalid for {n_classes} classes")
            audio_path = manifest_path.parent / audio
            if not audio_path.exists():
                raise DatasetError(f"clip {clip_id!r}: missing audio file {audio_path}")
            vec = np.zeros(n_classes, dtype=np.float32)
            vec[[int(l) for l in labels]] = 1.0
            clips.append(LabeledClip(clip_id=clip_id, label=vec, audio_path=str(audio_path)))
    if not clips:
        raise DatasetError(f"{manifest_path}: empty manifest")
    return Dataset(clips=clips, n_classes=n_classes, label_names=label_names)


def clip_chunk_tensor(clip: LabeledClip, config: ModelConfig) -> np.ndarray:
    """The [chunks, frames, bands] float32 tensor for one clip, cached on it.

    Clips longer than ``chunks_per_clip`` chunks are truncated to the first
    ``chunks_per_clip``; shorter clips are an error.
    """
    t = config.chunks_per_clip
    if clip.chunks is not None:
        chunks = clip.chunks
        if chunks.shape[0] < t:
            raise DatasetError(f"{clip.clip_id}: {chunks.shape[0]} chunks < {t}")
        if chunks.shape[1:] != (config.frames_per_chunk, dsp.N_MELS):
            raise DatasetError(f"{clip.clip_id}: chunk shape {chunks.shape[1:]} unexpected")
        return chunks[:t]
    audio = dsp.load_audio(clip.audio_path)
    spec = dsp.log_compress(dsp.mel_spectrogram(audio))
    blocks = dsp.chunk(spec, config.frames_per_chunk, pad_last=False)
    if len(blocks) < t:
        raise DatasetError(f"{clip.clip_id}: clip yields {len(blocks)} chunks, needs {t}")
    clip.chunks = np.stack([c.data for c in blocks[:t]])
    return clip.chunks


def _validate_labels(dataset: Dataset, loss_kind: str) -> None:
    for clip in dataset.clips:
        positives = int(clip.label.sum())
        if loss_kind == "cce" and positives != 1:
            raise TrainingError(
                f"{clip.clip_id}: categorical loss needs exactly one positive label, got {positives}")
        if positives < 1:
            raise TrainingError(f"{clip.clip_id}: needs at least one positive label")


def _loss_fn(loss_kind: str):
    return (ops.binary_cross_entropy if loss_kind == "bce"
            else ops.categorical_cross_entropy)


def _run_epoch(dataset: Dataset, order: np.ndarray, params: ModelParams,
               config: ModelConfig, state: AdamState, loss_kind: str,
               lr: float, batch_songs: int, seed: int, epoch: int) -> float:
    """One pass of shuffled mini-batches; returns the mean batch loss."""
    loss_op = _loss_fn(loss_kind)
    trainable = params.trainable()
    names = list(trainable.keys())
    sources = list(trainable.values())
    n_batches = len(order) // batch_songs
    total = 0.0
    for b in range(n_batches):
        picked = order[b * batch_songs:(b + 1) * batch_songs]
        batch = np.stack([clip_chunk_tensor(dataset.clips[i], config) for i in picked])
        labels = np.stack([dataset.clips[i].label for i in picked])
        rng = np.random.default_rng([seed, epoch, b])
        with GradTape() as tape:
            song, _, _ = forward_batch(batch, params, config, bn_mode="train",
                                       train=True, rng=rng)
            loss = loss_op(song, labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
        grads = tape.gradient(loss, sources)
        adam_step(trainable, dict(zip(names, grads)), state, lr=lr)
        total += value
    return total / max(n_batches, 1)


def evaluate_classifier(params: ModelParams, config: ModelConfig,
                        clips: list[LabeledClip]) -> float:
    """Top-1 accuracy, each song normalized over its own chunks.

    A prediction counts as correct when the argmax class is among the clip's
    positive labels; with one positive label this is plain top-1 accuracy.
    For a balanced single-label set and a constant uniform predictor this
    degenerates to 1 / n_classes (argmax ties resolve to class 0).
    """
    if not clips:
        raise TrainingError("cannot evaluate on an empty clip list")
    correct = 0
    for clip in clips:
        chunks = clip_chunk_tensor(clip, config)[None, ...]
        song, _, _ = forward_batch(chunks, params, config,
                                   bn_mode="batch_stats_eval", train=False)
        if clip.label[int(np.argmax(song.data[0]))] > 0:
            correct += 1
    return correct / len(clips)


def train(dataset: Dataset, model_config: ModelConfig,
          train_config: TrainConfig) -> tuple[ModelParams, list[EpochLog]]:
    """Mini-batch training; returns the best-validation-epoch parameters.

    A seeded permutation assigns the first ``round(val_fraction * n)`` clips
    to validation and the rest to training.  With no validation clips
    (val_fraction 0) the final parameters win.  ``epochs=0`` returns the
    seeded initialization and an empty log.
    """
    if model_config.n_classes != dataset.n_classes:
        raise TrainingError(
            f"model expects {model_config.n_classes} classes, dataset has {dataset.n_classes}")
    loss_kind = train_config.loss_kind or model_config.loss_kind
    if loss_kind not in ("bce", "cce"):
        raise TrainingError(f"unknown loss kind {loss_kind!r}")
    _validate_labels(dataset, loss_kind)
    rng = np.random.default_rng(train_config.seed)
    order = rng.permutation(len(dataset.clips))
    n_val = int(round(train_config.val_fraction * len(dataset.clips)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_config.epochs > 0 and len(train_idx) < train_config.batch_songs:
        raise TrainingError(
            f"{len(train_idx)} training clips is smaller than one batch "
            f"of {train_config.batch_songs}")
    params = init_params(model_config, train_config.seed)
    state = AdamState()
    val_clips = [dataset.clips[i] for i in val_idx]
    logs: list[EpochLog] = []
    best_params = params.copy()
    best_acc = -1.0
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        epoch_order = rng.permutation(train_idx)
        mean_loss = _run_epoch(dataset, epoch_order, params, model_config, state,
                               loss_kind, train_config.lr, train_config.batch_songs,
                               train_config.seed, epoch)
        val_acc = evaluate_classifier(params, model_config, val_clips) if val_clips else float("nan")
        logs.append(EpochLog(epoch=epoch, train_loss=mean_loss, val_accuracy=val_acc,
                             seconds=time.perf_counter() - t0))
        if val_clips and val_acc > best_acc:
            best_acc = val_acc
            best_params = params.copy()
    if not val_clips or train_config.epochs == 0:
        best_params = params
    return best_params, logs


def epoch_timer(variants: list[str], dataset: Dataset, *, epochs: int = 3,
                warmup: int = 1, seed: int = 0, lr: float = 1e-4,
                batch_songs: int = 16, loss_kind: str = "cce") -> dict[str, float]:
    """Mean wall-clock seconds per training epoch under an identical workload.

    Each variant trains from its own fresh initialization on the same data
    with the same batch schedule; ``warmup`` epochs are run and discarded
    before ``epochs`` timed ones.
    """
    if epochs < 1:
        raise TrainingError("need at least one timed epoch")
    results: dict[str, float] = {}
    for variant in variants:
        config = ModelConfig(variant=variant, n_classes=dataset.n_classes,
                             loss_kind=loss_kind)
        _validate_labels(dataset, loss_kind)
        params = init_params(config, seed)
        state = AdamState()
        rng = np.random.default_rng(seed)
        timed = []
        for epoch in range(1, warmup + epochs + 1):
            order = rng.permutation(len(dataset.clips))
            t0 = time.perf_counter()
            _run_epoch(dataset, order, params, config, state, loss_kind, lr,
                       batch_songs, seed, epoch)
            if epoch > warmup:
                timed.append(time.perf_counter() - t0)
        results[variant] = float(np.mean(timed))
    return results


def write_training_log(path, logs: list[EpochLog]) -> None:
    """CSV log: epoch, train_loss, val_accuracy, seconds."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_accuracy", "seconds"])
        for log in logs:
            writer.writerow([log.epoch, repr(log.train_loss),
                             repr(log.val_accuracy), f"{log.seconds:.3f}"])
