"""Attention architectures over chunk embeddings, plus model file I/O.

All variants share a convolutional chunk embedder: three valid convolutions
(kernel 3x128 stride 2x128, then two 4x1 stride 2x1 blocks of 128 and
``embed_dim`` channels), each followed by batch norm and ReLU, then a max
pool over time.  A 129x128 log-mel chunk becomes one ``embed_dim`` vector
(time lengths 129 -> 64 -> 31 -> 14 -> pooled).

Variants:

- ``NAM_LF``       feed-forward attention head, late fusion of chunk predictions
- ``NAM_LF_POS``   the same with sinusoidal positional encoding added to the
                   embeddings before the attention head
- ``NAM_EF_POS``   positional attention with early fusion: the attention-weighted
                   context vector feeds the predictor stack directly
- ``RNAM_LF``      attention scores from a bi-directional LSTM over the chunk
                   sequence, late fusion

Model files use a small binary container: the 8-byte magic ``PMHL0001``, a
little-endian uint32 header length, a UTF-8 JSON header (format version,
config, tensor table), then all tensors as contiguous little-endian float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .nn import LSTMParams, Tensor, bi_lstm, ops

VARIANTS = ("RNAM_LF", "NAM_LF_POS", "NAM_EF_POS", "NAM_LF")
LOSS_KINDS = ("bce", "cce")
MAGIC = b"PMHL0001"
FORMAT_VERSION = 1

# (out_channels_or_None, kernel, stride); None means embed_dim
_CONV_STACK = ((64, (3, 128), (2, 128)), (128, (4, 1), (2, 1)), (None, (4, 1), (2, 1)))
_LSTM_HIDDEN = 512
_SCORE_DIM = 256
_PRED_HIDDEN = 1024
_DROP_RATE = 0.5


class ModelIOError(Exception):
    """Base class for model file problems."""


class CorruptModelError(ModelIOError):
    pass


class UnsupportedModelVersion(ModelIOError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    n_classes: int
    embed_dim: int = 256
    chunks_per_clip: int = 8
    chunk_seconds: float = 3.0
    loss_kind: str = "bce"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be a positive even number")
        if self.chunks_per_clip < 1:
            raise ValueError("chunks_per_clip must be positive")
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")

    @property
    def frames_per_chunk(self) -> int:
        return int(self.chunk_seconds * dsp.SAMPLE_RATE) // dsp.HOP

    @property
    def uses_position(self) -> bool:
        return self.variant in ("NAM_LF_POS", "NAM_EF_POS")

    @property
    def late_fusion(self) -> bool:
        return self.variant != "NAM_EF_POS"


class ModelParams:
    """Insertion-ordered named tensors; running-stat buffers are frozen."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if t.requires_grad}

    def copy(self) -> "ModelParams":
        return ModelParams({n: Tensor._wrap(t.data.copy(), t.requires_grad)
                            for n, t in self.tensors.items()})


@dataclass
class Prediction:
    song_level: np.ndarray              # [n_classes] class probabilities
    chunk_level: np.ndarray | None      # [n_chunks, n_classes] for late fusion

    def __post_init__(self):
        self.song_level = np.asarray(self.song_level, dtype=np.float64)
        if self.song_level.ndim != 1:
            raise ValueError("song_level must be a probability vector")


@dataclass
class AttentionCurve:
    """Per-chunk attention weights on the simplex."""

    scores: np.ndarray
    chunk_seconds: float

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.size == 0:
            raise ValueError("attention scores must be a non-empty vector")
        if np.any(self.scores < 0):
            raise ValueError("attention scores must be non-negative")
        if abs(float(self.scores.sum()) - 1.0) > 1e-5:
            raise ValueError("attention scores must sum to 1")
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")

    @property
    def n_chunks(self) -> int:
        return self.scores.size


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _glorot(rng, shape, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def _param(data):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


def _buffer(data):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=False)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialization: He for ReLU-facing affines, Glorot elsewhere,
    LSTM forget-gate bias 1, batch-norm buffers at (0, 1)."""
    rng = np.random.default_rng(seed)
    t: dict[str, Tensor] = {}

    def bn_group(prefix, width):
        t[f"{prefix}.gamma"] = _param(np.ones(width))
        t[f"{prefix}.beta"] = _param(np.zeros(width))
        t[f"{prefix}.running_mean"] = _buffer(np.zeros(width))
        t[f"{prefix}.running_var"] = _buffer(np.ones(width))

    c_in = 1
    for i, (c_out, (kh, kw), _) in enumerate(_CONV_STACK, start=1):
        c_out = c_out if c_out is not None else config.embed_dim
        fan_in = kh * kw * c_in
        t[f"feat.conv{i}.kernel"] = _param(_he(rng, (kh, kw, c_in, c_out), fan_in))
        t[f"feat.conv{i}.bias"] = _param(np.zeros(c_out))
        bn_group(f"feat.bn{i}", c_out)
        c_in = c_out
    m = config.embed_dim

    if config.variant == "RNAM_LF":
        for direction in ("fwd", "bwd"):
            t[f"attn.lstm_{direction}.wx"] = _param(
                _glorot(rng, (m, 4 * _LSTM_HIDDEN), m, _LSTM_HIDDEN))
            t[f"attn.lstm_{direction}.wh"] = _param(
                _glorot(rng, (_LSTM_HIDDEN, 4 * _LSTM_HIDDEN), _LSTM_HIDDEN, _LSTM_HIDDEN))
            bias = np.zeros(4 * _LSTM_HIDDEN)
            bias[_LSTM_HIDDEN:2 * _LSTM_HIDDEN] = 1.0  # forget gate open at start
            t[f"attn.lstm_{direction}.bias"] = _param(bias)
        t["attn.score.w_fwd"] = _param(_glorot(rng, (_LSTM_HIDDEN, _SCORE_DIM),
                                               _LSTM_HIDDEN, _SCORE_DIM))
        t["attn.score.w_bwd"] = _param(_glorot(rng, (_LSTM_HIDDEN, _SCORE_DIM),
                                               _LSTM_HIDDEN, _SCORE_DIM))
        t["attn.score.bias"] = _param(np.zeros(_SCORE_DIM))
        t["attn.score.w_out"] = _param(_glorot(rng, (_SCORE_DIM, 1), _SCORE_DIM, 1))
    else:
        widths = [(m, m, "relu"), (m, m, "relu"), (m, m, "tanh"), (m, 1, "linear")]
        for i, (w_in, w_out, act) in enumerate(widths, start=1):
            init = _he(rng, (w_in, w_out), w_in) if act == "relu" \
                else _glorot(rng, (w_in, w_out), w_in, w_out)
            t[f"attn.fc{i}.weight"] = _param(init)
            t[f"attn.fc{i}.bias"] = _param(np.zeros(w_out))
            if i <= 3:
                bn_group(f"attn.bn{i}", w_out)

    t["pred.fc1.weight"] = _param(_he(rng, (m, _PRED_HIDDEN), m))
    t["pred.fc1.bias"] = _param(np.zeros(_PRED_HIDDEN))
    bn_group("pred.bn1", _PRED_HIDDEN)
    t["pred.fc2.weight"] = _param(_glorot(rng, (_PRED_HIDDEN, config.n_classes),
                                          _PRED_HIDDEN, config.n_classes))
    t["pred.fc2.bias"] = _param(np.zeros(config.n_classes))
    return ModelParams(t)


_POS_CACHE: dict[tuple, np.ndarray] = {}


def positional_encoding(n_steps: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal position code for 1-based steps: interleaved sin/cos pairs
    with wavelengths 10000^(2z/dim)."""
    key = (n_steps, dim, np.dtype(dtype).str)
    cached = _POS_CACHE.get(key)
    if cached is None:
        pos = np.arange(1, n_steps + 1, dtype=np.float64)[:, None]
        z = np.arange(dim // 2, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * z / dim)
        pe = np.empty((n_steps, dim))
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle)
        cached = _POS_CACHE[key] = pe.astype(dtype)
    return cached


def _bn_site_mode(requested: str, batch_rows: int) -> str:
    # A batch-statistics mode over a single row has no defined variance; fall
    # back to the stored running statistics for that site.
    if requested != "running_stats_eval" and batch_rows < 2:
        return "running_stats_eval"
    return requested


def _bn(x, params, prefix, mode):
    return ops.batch_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"],
                          params[f"{prefix}.running_mean"], params[f"{prefix}.running_var"],
                          mode=_bn_site_mode(mode, x.data.size // x.shape[-1]))


def _feature_extractor(x: Tensor, params: ModelParams, config: ModelConfig,
                       bn_mode: str) -> Tensor:
    for i, (_, _, stride) in enumerate(_CONV_STACK, start=1):
        x = ops.conv2d(x, params[f"feat.conv{i}.kernel"], stride)
        x = ops.add(x, params[f"feat.conv{i}.bias"])
        x = _bn(x, params, f"feat.bn{i}", bn_mode)
        x = ops.relu(x)
    return ops.time_max_pool(x)


def _nam_scores(flat: Tensor, params: ModelParams, bn_mode: str, train: bool,
                rng) -> Tensor:
    """Feed-forward attention scores for [rows, embed_dim] input -> [rows, 1]."""
    acts = ("relu", "relu", "tanh", "linear")
    x = flat
    for i, act in enumerate(acts, start=1):
        x = ops.fully_connected(x, params[f"attn.fc{i}.weight"], params[f"attn.fc{i}.bias"])
        if i <= 3:
            x = _bn(x, params, f"attn.bn{i}", bn_mode)
        if act == "relu":
            x = ops.relu(x)
        elif act == "tanh":
            x = ops.tanh(x)
        x = ops.dropout(x, _DROP_RATE, train=train, rng=rng)
    return x


def _rnam_scores(emb3: Tensor, params: ModelParams) -> Tensor:
    """Recurrent attention scores for [songs, chunks, embed_dim] -> [songs, chunks]."""
    fwd = LSTMParams(params["attn.lstm_fwd.wx"], params["attn.lstm_fwd.wh"],
                     params["attn.lstm_fwd.bias"])
    bwd = LSTMParams(params["attn.lstm_bwd.wx"], params["attn.lstm_bwd.wh"],
                     params["attn.lstm_bwd.bias"])
    f_states, b_states = bi_lstm(emb3, fwd, bwd)
    per_step = []
    for f_t, b_t in zip(f_states, b_states):
        pre = ops.add(ops.add(ops.matmul(f_t, params["attn.score.w_fwd"]),
                              ops.matmul(b_t, params["attn.score.w_bwd"])),
                      params["attn.score.bias"])
        per_step.append(ops.matmul(ops.tanh(pre), params["attn.score.w_out"]))
    return ops.concat(per_step, axis=1)


def _predictor(flat: Tensor, params: ModelParams, n_classes: int, bn_mode: str,
               train: bool, rng) -> Tensor:
    x = ops.fully_connected(flat, params["pred.fc1.weight"], params["pred.fc1.bias"])
    x = _bn(x, params, "pred.bn1", bn_mode)
    x = ops.relu(x)
    x = ops.dropout(x, _DROP_RATE, train=train, rng=rng)
    x = ops.fully_connected(x, params["pred.fc2.weight"], params["pred.fc2.bias"])
    return ops.softmax(x, axis=1)


def forward_batch(chunks: np.ndarray, params: ModelParams, config: ModelConfig, *,
                  bn_mode: str = "batch_stats_eval", train: bool = False,
                  rng: np.random.Generator | None = None
                  ) -> tuple[Tensor, Tensor | None, Tensor]:
    """Run a [songs, chunks, frames, bands] batch through one variant.

    Returns ``(song_probs [B, C], chunk_probs [B, T, C] or None, alpha [B, T])``.
    Dropout fires only when ``train`` is true, which then requires ``rng``.
    """
    chunks = np.asarray(chunks)
    if chunks.ndim != 4:
        raise ValueError("expected [songs, chunks, frames, bands]")
    b, t_steps, n_frames, n_bands = chunks.shape
    if n_frames != config.frames_per_chunk or n_bands != dsp.N_MELS:
        raise ValueError(
            f"chunk shape {(n_frames, n_bands)} does not match the configured "
            f"{(config.frames_per_chunk, dsp.N_MELS)}")
    if train and rng is None:
        raise ValueError("training mode needs an rng for dropout")

    x = Tensor._wrap(np.ascontiguousarray(
        chunks.reshape(b * t_steps, n_frames, n_bands, 1)), False)
    emb = _feature_extractor(x, params, config, bn_mode)      # [B*T, M]
    emb3 = ops.reshape(emb, (b, t_steps, config.embed_dim))

    if config.variant == "RNAM_LF":
        scores = _rnam_scores(emb3, params)
    else:
        attn_in = emb3
        if config.uses_position:
            pos = Tensor._wrap(positional_encoding(
                t_steps, config.embed_dim, dtype=chunks.dtype), False)
            attn_in = ops.add(emb3, pos)
        flat = ops.reshape(attn_in, (b * t_steps, config.embed_dim))
        scores = ops.reshape(_nam_scores(flat, params, bn_mode, train, rng), (b, t_steps))
    alpha = ops.softmax(scores, axis=1)

    if config.late_fusion:
        probs_flat = _predictor(emb, params, config.n_classes, bn_mode, train, rng)
        chunk_probs = ops.reshape(probs_flat, (b, t_steps, config.n_classes))
        weighted = ops.mul(chunk_probs, ops.reshape(alpha, (b, t_steps, 1)))
        song = ops.sum_axis(weighted, axis=1)
        return song, chunk_probs, alpha
    context = ops.sum_axis(ops.mul(emb3, ops.reshape(alpha, (b, t_steps, 1))), axis=1)
    song = _predictor(context, params, config.n_classes, bn_mode, train, rng)
    return song, None, alpha


def forward(chunks, params: ModelParams, config: ModelConfig, *,
            bn_mode: str = "batch_stats_eval") -> tuple[Prediction, AttentionCurve]:
    """Inference on one song given its :class:`~songlight.dsp.MelChunk` list.

    Batch-norm defaults to batch statistics over the song's chunks.
    """
    if not chunks:
        raise ValueError("need at least one chunk")
    for want, got in zip(range(1, len(chunks) + 1), chunks):
        if got.index != want:
            raise ValueError("chunks must be consecutive starting at index 1")
    stacked = np.stack([c.data for c in chunks])[None, ...]
    song, chunk_probs, alpha = forward_batch(
        stacked, params, config, bn_mode=bn_mode, train=False)
    pred = Prediction(
        song_level=song.data[0],
        chunk_level=None if chunk_probs is None else np.asarray(
            chunk_probs.data[0], dtype=np.float64))
    att = AttentionCurve(scores=alpha.data[0], chunk_seconds=config.chunk_seconds)
    return pred, att


def save_model(path, params: ModelParams, config: ModelConfig) -> None:
    """Write the binary model container described in the module docstring."""
    table = []
    blobs = []
    offset = 0
    for name, tensor in params.tensors.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(tensor.data.shape),
                      "dtype": "f32", "byte_offset": offset, "byte_len": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "config": asdict(config),
              "tensors": table}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def load_model(path) -> tuple[ModelParams, ModelConfig]:
    """Read a model container; rejects corrupt files and foreign versions."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptModelError(f"{path}: not a model file (bad magic)")
    header_len = struct.unpack("<I", raw[8:12])[0]
    header_end = 12 + header_len
    if header_end > len(raw):
        raise CorruptModelError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelError(f"{path}: unparseable header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedModelVersion(
            f"{path}: format version {version!r} is not supported (expected {FORMAT_VERSION})")
    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"{path}: bad config block: {exc}") from exc
    table = header.get("tensors")
    if not isinstance(table, list):
        raise CorruptModelError(f"{path}: missing tensor table")
    blob = raw[header_end:]
    params = init_params(config, seed=0)
    entries = {}
    for entry in table:
        try:
            entries[entry["name"]] = entry
        except (TypeError, KeyError) as exc:
            raise CorruptModelError(f"{path}: malformed tensor entry") from exc
    expected = set(params.tensors)
    if set(entries) != expected:
        missing = expected - set(entries)
        extra = set(entries) - expected
        raise CorruptModelError(
            f"{path}: tensor table mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, tensor in params.tensors.items():
        entry = entries[name]
        if entry.get("dtype") != "f32":
            raise CorruptModelError(f"{path}: tensor {name} has dtype {entry.get('dtype')!r}")
        if tuple(entry["shape"]) != tensor.data.shape:
            raise CorruptModelError(
                f"{path}: tensor {name} shape {entry['shape']} != expected {list(tensor.data.shape)}")
        start, length = entry["byte_offset"], entry["byte_len"]
        if length != tensor.data.size * 4 or start < 0 or start + length > len(blob):
            raise CorruptModelError(f"{path}: tensor {name} byte range is out of bounds")
        data = np.frombuffer(blob[start:start + length], dtype="<f4").reshape(tensor.data.shape)
        tensor.data = data.astype(np.float32)  # copy: frombuffer views are read-only
    return params, config
