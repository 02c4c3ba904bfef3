"""STFT analysis/synthesis, segment bookkeeping and sample covariances.

Spectrograms are laid out as ``(T, F, M)`` (frames, bins, channels). The
signal is zero-padded by one frame at each end, so frame ``t`` covers the
original samples ``[t*shift - L, t*shift)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import DimensionMismatch, EmptyRange, InvalidSchedule, SignalTooShort

__all__ = [
    "StftConfig",
    "SegmentSchedule",
    "analyze",
    "synthesize",
    "sample_covariance",
    "frames_within",
    "schedule_from_samples",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class StftConfig:
    frame_length: int = 3200
    frame_shift: int = 800
    sample_rate: int = 16000
    window: str = "sqrt-hann"

    def __post_init__(self):
        if self.frame_length <= 0 or self.frame_shift <= 0:
            raise ValueError("frame_length and frame_shift must be positive")
        if self.frame_length % self.frame_shift:
            raise ValueError("frame_shift must divide frame_length")
        if self.window not in ("sqrt-hann", "hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self):
        return self.frame_length // 2 + 1

    @property
    def freqs(self):
        return np.fft.rfftfreq(self.frame_length, 1.0 / self.sample_rate)

    def analysis_window(self):
        n = np.arange(self.frame_length)
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_length)
        if self.window == "sqrt-hann":
            return np.sqrt(hann)
        if self.window == "hann":
            return hann
        return np.ones(self.frame_length)

    def synthesis_window(self):
        if self.window == "sqrt-hann":
            return self.analysis_window()
        return np.ones(self.frame_length)

    def n_frames(self, n_samples):
        L, S = self.frame_length, self.frame_shift
        return -(-(n_samples + L) // S) + 1


@dataclass(frozen=True)
class SegmentSchedule:
    """Frame ranges of the noise-only, single- and dual-speaker segments.

    ``samples`` optionally carries the matching sample ranges of the
    time-domain signal.
    """

    noise_only: range
    single_speaker: range
    dual_speaker: range
    samples: tuple = None

    def __post_init__(self):
        segs = (self.noise_only, self.single_speaker, self.dual_speaker)
        for s in segs:
            if len(s) == 0:
                raise InvalidSchedule(f"empty segment {s}")
        for a, b in zip(segs, segs[1:]):
            if a.stop > b.start:
                raise InvalidSchedule(f"segments {a} and {b} overlap or are unordered")

    def segment(self, s):
        """Frame range of segment ``s`` in {1, 2, 3}."""
        return (self.noise_only, self.single_speaker, self.dual_speaker)[s - 1]

    def segment_samples(self, s):
        if self.samples is None:
            raise InvalidSchedule("schedule carries no sample ranges")
        return self.samples[s - 1]


def _as_2d(signal):
    x = np.asarray(signal)
    return (x[:, None], True) if x.ndim == 1 else (x, False)


def analyze(signal, cfg=StftConfig()):
    """One-sided STFT of a ``(N,)`` or ``(N, M)`` signal."""
    x, squeeze = _as_2d(signal)
    L, S = cfg.frame_length, cfg.frame_shift
    N = x.shape[0]
    if N < L:
        raise SignalTooShort(f"signal has {N} samples, frame length is {L}")
    T = cfg.n_frames(N)
    padded = np.zeros(((T - 1) * S + L, x.shape[1]), dtype=x.dtype)
    padded[L : L + N] = x
    idx = np.arange(T)[:, None] * S + np.arange(L)[None, :]
    frames = padded[idx] * cfg.analysis_window()[None, :, None]
    spec = np.fft.rfft(frames, axis=1)
    return spec[..., 0] if squeeze else spec


def synthesize(spec, cfg=StftConfig(), length=None):
    """Weighted overlap-add inverse of :func:`analyze`.

    ``length`` defaults to the longest signal the frame count can hold.
    """
    spec = np.asarray(spec)
    squeeze = spec.ndim == 2
    if squeeze:
        spec = spec[..., None]
    L, S = cfg.frame_length, cfg.frame_shift
    if spec.ndim != 3 or spec.shape[1] != cfg.n_bins:
        raise DimensionMismatch(
            f"spectrogram shape {spec.shape} does not match {cfg.n_bins} bins"
        )
    T = spec.shape[0]
    frames = np.fft.irfft(spec, n=L, axis=1) * cfg.synthesis_window()[None, :, None]
    total = (T - 1) * S + L
    out = np.zeros((total, spec.shape[2]))
    norm = np.zeros(total)
    wprod = cfg.analysis_window() * cfg.synthesis_window()
    for t in range(T):
        out[t * S : t * S + L] += frames[t]
        norm[t * S : t * S + L] += wprod
    out /= np.where(norm > 1e-10, norm, 1.0)[:, None]
    if length is None:
        length = total - 2 * L
    out = out[L : L + length]
    return out[:, 0] if squeeze else out


def frames_within(cfg, start, stop, n_frames):
    """Frames lying entirely inside the sample interval ``[start, stop)``."""
    L, S = cfg.frame_length, cfg.frame_shift
    first = max(0, -(-(start + L) // S))
    last = min(n_frames, (stop // S) + 1)
    return range(first, max(first, last))


def schedule_from_samples(boundaries, cfg, n_frames):
    """Build a schedule from sample boundaries ``(b0, b1, b2, b3)``.

    Segments are ``[b0, b1)``, ``[b1, b2)``, ``[b2, b3)``; a frame belongs
    to a segment only if it lies entirely inside it.
    """
    b = [int(v) for v in boundaries]
    if len(b) != 4 or any(x >= y for x, y in zip(b, b[1:])):
        raise InvalidSchedule(f"boundaries must be 4 increasing values, got {b}")
    frames = [frames_within(cfg, b[i], b[i + 1], n_frames) for i in range(3)]
    samples = tuple(range(b[i], b[i + 1]) for i in range(3))
    return SegmentSchedule(*frames, samples=samples)


def sample_covariance(spec, frames, bin=None):
    """``(1/|frames|) sum_t y_t y_t^H`` over a frame range.

    With ``bin=None`` all bins are processed and an ``(F, M, M)`` stack is
    returned.
    """
    frames = range(*frames) if isinstance(frames, tuple) else frames
    if len(frames) == 0:
        raise EmptyRange("covariance over an empty frame range")
    spec = np.asarray(spec)
    if frames.start < 0 or frames.stop > spec.shape[0]:
        raise EmptyRange(f"frame range {frames} outside spectrogram of {spec.shape[0]} frames")
    Y = spec[frames.start : frames.stop : frames.step]
    if bin is not None:
        Y = Y[:, bin]
        return np.einsum("ti,tj->ij", Y, Y.conj()) / len(frames)
    return np.einsum("tfi,tfj->fij", Y, Y.conj()) / len(frames)


def read_wav(path):
    """Read a PCM16/float WAV file as float64 ``(N, M)`` plus the sample rate."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return data, rate


def write_wav(path, data, rate=16000, subtype="float32"):
    data = np.asarray(data, dtype=float)
    if subtype == "int16":
        out = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
    elif subtype == "float32":
        out = data.astype(np.float32)
    else:
        raise ValueError(f"unsupported WAV subtype {subtype!r}")
    wavfile.write(path, rate, out)
