"""Highlight selection from attention and frame-level curves.

The selection primitive is the same everywhere: slide a fixed-length window
over a non-negative curve and keep the earliest window with the maximal sum.
Attention curves are searched at chunk resolution; energy-style curves and
fused curves at frame resolution.  Fusing first min-max normalizes each curve
over the song (a constant curve normalizes to zeros), then mixes with weight
``lam`` on the energy side, so ``lam=1`` is purely energy and ``lam=0`` purely
attention; at those endpoints the pure method is used outright so the
equivalence is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import FrameCurve
from .models import AttentionCurve

HIGHLIGHT_SOURCES = ("attention", "energy", "centroid", "rolloff", "fused", "middle")
_CURVE_SOURCE = {"energy": "energy", "centroid": "centroid", "rolloff": "rolloff",
                 "fused": "fused", "attention_upsampled": "attention"}


@dataclass(frozen=True)
class Highlight:
    """A half-open ``[start_sec, end_sec)`` excerpt tagged with its method."""

    start_sec: float
    end_sec: float
    source: str

    def __post_init__(self):
        if self.source not in HIGHLIGHT_SOURCES:
            raise ValueError(f"unknown highlight source {self.source!r}")
        if self.start_sec < 0 or self.end_sec <= self.start_sec:
            raise ValueError("need 0 <= start_sec < end_sec")

    @property
    def length_sec(self) -> float:
        return self.end_sec - self.start_sec


@dataclass(frozen=True)
class FusionConfig:
    """Mixing weight on the energy curve; 1 - weight goes to attention."""

    weight: float

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError("fusion weight must lie in [0, 1]")


def window_argmax(values: np.ndarray, window: int) -> int:
    """Earliest start index of the maximal ``window``-sum.

    Window sums are evaluated per start position (not via a running cumsum),
    so identical windows produce bit-identical sums and ties genuinely break
    to the earliest index.  A window longer than the curve collapses to the
    whole curve.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("window_argmax needs a non-empty 1-D curve")
    if window < 1:
        raise ValueError("window must be at least 1")
    if window >= values.size:
        return 0
    sums = np.lib.stride_tricks.sliding_window_view(values, window).sum(axis=1)
    return int(np.argmax(sums))


def _clamp_start(start: float, duration: float, target: float) -> float:
    # Keep the window inside the song so the highlight keeps its full length.
    return max(0.0, min(start, duration - target))


def extract_from_attention(att: AttentionCurve, duration_sec: float,
                           target_sec: float = 30.0) -> Highlight:
    """Chunk-resolution search: the best run of ceil(target / chunk) chunks."""
    if duration_sec <= 0 or target_sec <= 0:
        raise ValueError("duration and target must be positive")
    if duration_sec <= target_sec:
        return Highlight(0.0, duration_sec, "attention")
    window = math.ceil(target_sec / att.chunk_seconds)
    start_chunk = window_argmax(att.scores, window)
    start = _clamp_start(start_chunk * att.chunk_seconds, duration_sec, target_sec)
    return Highlight(start, start + target_sec, "attention")


def extract_from_frame_curve(curve: FrameCurve, duration_sec: float,
                             target_sec: float = 30.0) -> Highlight:
    """Frame-resolution search over an energy-style or fused curve."""
    if duration_sec <= 0 or target_sec <= 0:
        raise ValueError("duration and target must be positive")
    source = _CURVE_SOURCE.get(curve.kind)
    if source is None:
        raise ValueError(f"cannot extract from curve kind {curve.kind!r}")
    if duration_sec <= target_sec:
        return Highlight(0.0, duration_sec, source)
    window = max(1, int(target_sec / curve.hop_seconds))
    idx = window_argmax(curve.values, window)
    start = _clamp_start(idx * curve.hop_seconds, duration_sec, target_sec)
    return Highlight(start, start + target_sec, source)


def middle_baseline(duration_sec: float, target_sec: float = 30.0) -> Highlight:
    """The centered window (the whole song when shorter than the target)."""
    if duration_sec <= 0 or target_sec <= 0:
        raise ValueError("duration and target must be positive")
    if duration_sec <= target_sec:
        return Highlight(0.0, duration_sec, "middle")
    start = duration_sec / 2.0 - target_sec / 2.0
    return Highlight(start, start + target_sec, "middle")


def upsample_attention(att: AttentionCurve, n_frames: int,
                       hop_seconds: float) -> FrameCurve:
    """Piecewise-constant expansion of chunk scores to frame resolution.

    Frames past the final chunk boundary (at most one chunk of slack, e.g. a
    dropped partial tail) inherit the final chunk's score.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    per_chunk = int(round(att.chunk_seconds / hop_seconds))
    if per_chunk < 1:
        raise ValueError("hop larger than a chunk")
    if abs(n_frames - att.n_chunks * per_chunk) >= per_chunk:
        raise ValueError(
            f"{n_frames} frames is inconsistent with {att.n_chunks} chunks "
            f"of {per_chunk} frames")
    idx = np.minimum(np.arange(n_frames) // per_chunk, att.n_chunks - 1)
    return FrameCurve(values=att.scores[idx], hop_seconds=hop_seconds,
                      kind="attention_upsampled")


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Map to [0, 1] over the song; a constant curve maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def fuse_curves(energy: FrameCurve, attention: FrameCurve,
                fusion: FusionConfig) -> FrameCurve:
    """Normalized blend ``w * energy + (1 - w) * attention`` per frame."""
    if attention.kind != "attention_upsampled":
        raise ValueError("fusion expects an upsampled attention curve")
    if energy.n_frames != attention.n_frames:
        raise ValueError("curves must share frame count")
    if energy.hop_seconds != attention.hop_seconds:
        raise ValueError("curves must share hop")
    mixed = (fusion.weight * minmax_normalize(energy.values)
             + (1.0 - fusion.weight) * minmax_normalize(attention.values))
    return FrameCurve(values=mixed, hop_seconds=energy.hop_seconds, kind="fused")


def extract_fused(att: AttentionCurve, energy: FrameCurve, fusion: FusionConfig,
                  duration_sec: float, target_sec: float = 30.0) -> Highlight:
    """Fusion-weighted extraction whose endpoints are exactly the pure methods."""
    if fusion.weight == 1.0:
        return extract_from_frame_curve(energy, duration_sec, target_sec)
    if fusion.weight == 0.0:
        return extract_from_attention(att, duration_sec, target_sec)
    upsampled = upsample_attention(att, energy.n_frames, energy.hop_seconds)
    fused = fuse_curves(energy, upsampled, fusion)
    return extract_from_frame_curve(fused, duration_sec, target_sec)
