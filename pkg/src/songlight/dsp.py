"""Audio frontend: WAV loading, log-mel spectrograms, chunking, spectral curves.

Every feature in this module shares one STFT configuration: 22050 Hz mono
audio, a 2048-sample periodic Hamming window, a 512-sample hop, and centered
frames (the signal is reflect-padded by 1024 samples on each side), so frame
``k`` is centered at ``k * 512 / 22050`` seconds.  A 3-second chunk therefore
spans ``floor(3 * 22050 / 512) = 129`` frames.

Mel filters are triangular on the mel scale (linear below 1 kHz, logarithmic
above), span 0 Hz to Nyquist, and are area-normalized so that filter response
integrates to a constant across bands.  Magnitude compression is
``g(x) = ln(1 + 10000 x)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
FRAMES_PER_CHUNK = 129
HOP_SECONDS = HOP / SAMPLE_RATE
LOG_SCALE = 10000.0

_WINDOW = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)


class DspError(ValueError):
    """Raised when audio input violates a frontend precondition."""


@dataclass
class AudioClip:
    """Mono audio at a fixed sample rate, amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError("AudioClip requires a 1-D sample array")
        if self.samples.size == 0:
            raise DspError("AudioClip requires at least one sample")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-6:
            raise DspError(f"amplitudes exceed [-1, 1] (peak {peak:.4f})")

    @property
    def duration_sec(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Frame-major mel spectrogram; ``compressed`` marks log-compressed data."""

    frames: np.ndarray  # [n_frames, N_MELS]
    hop_seconds: float
    compressed: bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise DspError(f"expected [n_frames, {N_MELS}] mel frames")
        if self.frames.shape[0] < 1:
            raise DspError("empty spectrogram")
        if not self.compressed and np.any(self.frames < 0):
            raise DspError("uncompressed mel energies must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class MelChunk:
    """One fixed-length block of log-mel frames.

    ``index`` is 1-based within the source clip.  ``valid_frames`` counts the
    frames that carry real signal; the remainder (only ever in a padded final
    chunk) is zero.
    """

    data: np.ndarray  # [frames_per_chunk, N_MELS] float32
    index: int
    valid_frames: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[1] != N_MELS:
            raise DspError(f"chunk data must be [frames, {N_MELS}]")
        if self.index < 1:
            raise DspError("chunk index is 1-based")
        if not (1 <= self.valid_frames <= self.data.shape[0]):
            raise DspError("valid_frames out of range")


CURVE_KINDS = ("energy", "centroid", "rolloff", "attention_upsampled", "fused")


@dataclass
class FrameCurve:
    """A scalar per STFT frame, e.g. energy or an upsampled attention score."""

    values: np.ndarray
    hop_seconds: float
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise DspError("curve must be a non-empty 1-D array")
        if self.kind not in CURVE_KINDS:
            raise DspError(f"unknown curve kind {self.kind!r}")
        if self.kind in ("energy", "centroid", "rolloff") and np.any(self.values < 0):
            raise DspError(f"{self.kind} curve must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.values.size


def load_audio(path, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a PCM WAV file, downmix to mono, and resample to ``target_rate``.

    Accepts 16/24-bit integer and 32/64-bit float encodings with one or two
    channels.  Stereo is downmixed by averaging.  Resampling is band-limited
    (polyphase FIR); small overshoot is clipped back into [-1, 1].
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:  # scipy raises plain ValueError on bad files
        raise DspError(f"unreadable WAV file {path}: {exc}") from exc
    if data.size == 0:
        raise DspError(f"zero-length audio in {path}")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DspError(f"unsupported WAV sample format {data.dtype} in {path}")
    if x.ndim == 2:
        if x.shape[1] > 2:
            raise DspError(f"unsupported channel count {x.shape[1]} in {path}")
        x = x.mean(axis=1)
    if rate != target_rate:
        frac = Fraction(target_rate, int(rate))
        x = resample_poly(x, frac.numerator, frac.denominator)
        if x.size == 0:
            raise DspError(f"resampling produced no samples for {path}")
    x = np.clip(x, -1.0, 1.0)
    return AudioClip(samples=x, sample_rate=target_rate)


def _stft_magnitude(samples: np.ndarray) -> np.ndarray:
    """Centered magnitude STFT shared by the mel and curve features."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < N_FFT:
        raise DspError(f"need at least {N_FFT} samples for analysis, got {x.size}")
    pad = N_FFT // 2
    x = np.pad(x, pad, mode="reflect")
    n_frames = (x.size - N_FFT) // HOP + 1
    idx = HOP * np.arange(n_frames)[:, None] + np.arange(N_FFT)[None, :]
    frames = x[idx] * _WINDOW
    return np.abs(np.fft.rfft(frames, axis=1))


def _hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    mel = freq * 3.0 / 200.0
    log_region = freq >= 1000.0
    safe = np.maximum(freq, 1e-12)
    return np.where(log_region, 15.0 + 27.0 * np.log(safe / 1000.0) / np.log(6.4), mel)


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    freq = mel * 200.0 / 3.0
    log_region = mel >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (mel - 15.0) / 27.0), freq)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   rate: int = SAMPLE_RATE) -> np.ndarray:
    """Area-normalized triangular mel filters, rows [n_mels, n_fft//2 + 1].

    Each row is non-negative and covers one contiguous frequency range.
    """
    nyquist = rate / 2.0
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(nyquist), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    fb = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        lower, center, upper = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lower) / (center - lower)
        down = (upper - bin_freqs) / (upper - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (upper - lower)  # equal-area normalization
    return fb


_FILTERBANK_CACHE: dict[tuple, np.ndarray] = {}


def _cached_filterbank() -> np.ndarray:
    key = (N_MELS, N_FFT, SAMPLE_RATE)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank()
    return _FILTERBANK_CACHE[key]


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    """Uncompressed 128-band mel spectrogram of a whole clip."""
    if clip.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    mag = _stft_magnitude(clip.samples)
    mel = (mag ** 2) @ _cached_filterbank().T
    return MelSpectrogram(frames=mel, hop_seconds=HOP_SECONDS, compressed=False)


def log_compress(spec: MelSpectrogram) -> MelSpectrogram:
    """Apply ``g(x) = ln(1 + 10000 x)`` bandwise; refuses double compression."""
    if spec.compressed:
        raise DspError("spectrogram is already log-compressed")
    return MelSpectrogram(frames=np.log1p(LOG_SCALE * spec.frames),
                          hop_seconds=spec.hop_seconds, compressed=True)


def chunk(spec: MelSpectrogram, frames_per_chunk: int = FRAMES_PER_CHUNK, *,
          pad_last: bool) -> list[MelChunk]:
    """Split a compressed spectrogram into consecutive fixed-length chunks.

    With ``pad_last=False`` a trailing partial chunk is dropped (training
    convention); with ``pad_last=True`` it is zero-padded and its
    ``valid_frames`` records the real extent (inference convention).
    """
    if not spec.compressed:
        raise DspError("chunking expects a log-compressed spectrogram")
    if frames_per_chunk < 1:
        raise DspError("frames_per_chunk must be positive")
    n = spec.n_frames
    n_full = n // frames_per_chunk
    if n_full == 0 and not pad_last:
        raise DspError(f"clip has {n} frames, fewer than one {frames_per_chunk}-frame chunk")
    chunks = []
    for i in range(n_full):
        block = spec.frames[i * frames_per_chunk:(i + 1) * frames_per_chunk]
        chunks.append(MelChunk(data=block, index=i + 1, valid_frames=frames_per_chunk))
    tail = n - n_full * frames_per_chunk
    if pad_last and tail > 0:
        block = np.zeros((frames_per_chunk, N_MELS))
        block[:tail] = spec.frames[n_full * frames_per_chunk:]
        chunks.append(MelChunk(data=block, index=n_full + 1, valid_frames=tail))
    return chunks


def energy_curve(clip: AudioClip) -> FrameCurve:
    """Per-frame RMS of the magnitude spectrum."""
    mag = _stft_magnitude(clip.samples)
    values = np.sqrt(np.mean(mag ** 2, axis=1))
    return FrameCurve(values=values, hop_seconds=HOP_SECONDS, kind="energy")


def centroid_curve(clip: AudioClip) -> FrameCurve:
    """Per-frame magnitude-weighted mean frequency in Hz; silent frames give 0."""
    mag = _stft_magnitude(clip.samples)
    freqs = np.fft.rfftfreq(N_FFT, d=1.0 / SAMPLE_RATE)
    total = mag.sum(axis=1)
    weighted = mag @ freqs
    values = np.where(total > 0.0, weighted / np.where(total > 0.0, total, 1.0), 0.0)
    return FrameCurve(values=values, hop_seconds=HOP_SECONDS, kind="centroid")


def rolloff_curve(clip: AudioClip, percent: float = 0.85) -> FrameCurve:
    """Per-frame frequency below which ``percent`` of spectral power lies.

    Silent frames give 0 (the cumulative threshold is met at the DC bin).
    """
    if not (0.0 < percent <= 1.0):
        raise DspError("rolloff percent must be in (0, 1]")
    mag = _stft_magnitude(clip.samples)
    power = mag ** 2
    cum = np.cumsum(power, axis=1)
    threshold = percent * cum[:, -1:]
    idx = np.argmax(cum >= threshold, axis=1)
    freqs = np.fft.rfftfreq(N_FFT, d=1.0 / SAMPLE_RATE)
    return FrameCurve(values=freqs[idx], hop_seconds=HOP_SECONDS, kind="rolloff")


def write_curve_csv(curve: FrameCurve, path) -> None:
    """Write ``time_sec,value`` rows; times carry six decimal places."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_sec", "value"])
        for i, v in enumerate(curve.values):
            writer.writerow([f"{i * curve.hop_seconds:.6f}", repr(float(v))])


def read_curve_csv(path, kind: str) -> FrameCurve:
    """Inverse of :func:`write_curve_csv`; hop inferred from the time column."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time_sec", "value"]:
        raise DspError(f"{path} is not a curve CSV")
    values = np.array([float(v) for _, v in rows[1:]])
    if len(rows) > 2:
        hop = float(rows[2][0]) - float(rows[1][0])
    else:
        hop = HOP_SECONDS
    return FrameCurve(values=values, hop_seconds=hop, kind=kind)
