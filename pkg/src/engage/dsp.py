"""Minimal EEG preprocessing: bandpass, segmentation, z-scoring, resampling.

Offline order follows the acquisition protocol: filter, (ICA), cut into
3-s trials, z-score each trial, downsample to 200 Hz.  Because linear
interpolation weights sum to one, resampling commutes with the per-channel
affine z-score; trials are re-standardized after resampling so every emitted
trial is exactly zero-mean/unit-variance per channel.

The streaming chain (:class:`StreamState`) runs the same arithmetic causally,
chunk by chunk.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .data import Recording, Trial
from .errors import DataError

# Channels filtered per block; bounds the float64 temporaries of sosfiltfilt.
_FILTER_BLOCK = 8


@dataclass
class PipelineConfig:
    low_hz: float = 0.1
    high_hz: float = 40.0
    filter_order: int = 4
    fs_out: float = 200.0
    trial_len_s: float = 3.0
    zero_phase: bool = True
    ica_enabled: bool = False
    ica_k: int = 32
    ica_corr_threshold: float = 0.7
    ica_max_iter: int = 200
    ica_tol: float = 1e-4
    ica_fit_stride: int = 8
    ica_seed: int = 0
    frontal_channel_indices: tuple = (0, 1, 2, 3)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown pipeline-config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "frontal_channel_indices" in doc:
            doc["frontal_channel_indices"] = tuple(int(i) for i in doc["frontal_channel_indices"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["frontal_channel_indices"] = list(self.frontal_channel_indices)
        return doc


@dataclass(frozen=True)
class BandpassFilter:
    """Butterworth bandpass as cascaded second-order sections (scipy ``sos`` layout)."""

    order: int
    low_hz: float
    high_hz: float
    fs_hz: float
    sos: np.ndarray = field(repr=False)

    @property
    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(section[3:]) for section in self.sos])

    def magnitude(self, freqs_hz) -> np.ndarray:
        _, h = sps.sosfreqz(self.sos, worN=np.atleast_1d(np.asarray(freqs_hz, float)), fs=self.fs_hz)
        return np.abs(h)


def design_bandpass(low_hz: float, high_hz: float, fs_hz: float, order: int = 4) -> BandpassFilter:
    """Design an ``order``-pole Butterworth bandpass (``order // 2`` biquads)."""
    if not 0 < low_hz < high_hz < fs_hz / 2:
        raise ValueError(f"need 0 < low < high < fs/2, got low={low_hz}, high={high_hz}, fs={fs_hz}")
    if order < 2 or order % 2:
        raise ValueError(f"bandpass order must be even and >= 2, got {order}")
    sos = sps.butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=fs_hz, output="sos")
    filt = BandpassFilter(order, float(low_hz), float(high_hz), float(fs_hz), sos)
    if np.any(np.abs(filt.poles) >= 1.0):
        raise ValueError("designed filter is unstable; band edges too close to 0 or Nyquist")
    return filt


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite values")


def _out_dtype(x):
    return x.dtype if x.dtype in (np.float32, np.float64) else np.float64


def filter_offline(filt: BandpassFilter, signal, zero_phase: bool = True) -> np.ndarray:
    """Filter a ``(channels, samples)`` matrix.

    ``zero_phase=True`` runs forward-backward (acausal, no phase shift);
    otherwise a single causal pass from rest, identical to :class:`StreamFilter`.
    """
    x = np.asarray(signal)
    _check_finite(x)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    out = np.empty(x2.shape, dtype=_out_dtype(x))
    for start in range(0, x2.shape[0], _FILTER_BLOCK):
        block = x2[start:start + _FILTER_BLOCK].astype(np.float64)
        if zero_phase:
            padlen = min(3 * (2 * len(filt.sos) + 1), block.shape[1] - 1)
            out[start:start + _FILTER_BLOCK] = sps.sosfiltfilt(filt.sos, block, axis=-1, padlen=padlen)
        else:
            out[start:start + _FILTER_BLOCK] = sps.sosfilt(filt.sos, block, axis=-1)
    return out[0] if squeeze else out


class StreamFilter:
    """Causal filter that carries its delay-line state between chunks."""

    def __init__(self, filt: BandpassFilter, n_channels: int):
        self.filt = filt
        self.n_channels = n_channels
        self.zi = np.zeros((len(filt.sos), n_channels, 2))

    def process(self, chunk) -> np.ndarray:
        x = np.asarray(chunk, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n_channels:
            raise ValueError(f"chunk must have {self.n_channels} channels, got shape {x.shape}")
        _check_finite(x)
        y, self.zi = sps.sosfilt(self.filt.sos, x, axis=-1, zi=self.zi)
        return y


def filter_streaming(state: StreamFilter, chunk) -> np.ndarray:
    return state.process(chunk)


def _rate_ratio(fs_in: float, fs_out: float) -> Fraction:
    return Fraction(fs_in).limit_denominator(10**6) / Fraction(fs_out).limit_denominator(10**6)


def resampled_length(n_in: int, fs_in: float, fs_out: float) -> int:
    # round half up, evaluated exactly
    return math.floor(Fraction(n_in) / _rate_ratio(fs_in, fs_out) + Fraction(1, 2))


def _interp_weights(j: np.ndarray, ratio: Fraction):
    scaled = j * ratio.numerator
    idx = scaled // ratio.denominator
    frac = (scaled % ratio.denominator) / ratio.denominator
    return idx, frac


def resample(signal, fs_in: float, fs_out: float) -> np.ndarray:
    """Linear-interpolation downsampling along the last axis.

    Output sample ``j`` sits at time ``j / fs_out``.  The input must already be
    bandlimited below ``fs_out / 2``.
    """
    if fs_out > fs_in:
        raise ValueError("upsampling is not supported")
    x = np.asarray(signal)
    n = x.shape[-1]
    m = resampled_length(n, fs_in, fs_out)
    idx, frac = _interp_weights(np.arange(m, dtype=np.int64), _rate_ratio(fs_in, fs_out))
    idx = np.minimum(idx, n - 1)
    nxt = np.minimum(idx + 1, n - 1)
    return x[..., idx] * (1.0 - frac) + x[..., nxt] * frac


class StreamResampler:
    """Streaming counterpart of :func:`resample` with a rational phase accumulator."""

    def __init__(self, fs_in: float, fs_out: float):
        if fs_out > fs_in:
            raise ValueError("upsampling is not supported")
        self.ratio = _rate_ratio(fs_in, fs_out)
        self.next_out = 0          # index of the next output sample
        self.base = 0              # absolute input index of self._tail[:, 0]
        self._tail = None

    @property
    def phase(self) -> float:
        _, frac = _interp_weights(np.array([self.next_out]), self.ratio)
        return float(frac[0])

    def process(self, chunk) -> np.ndarray:
        x = np.asarray(chunk, dtype=np.float64)
        buf = x if self._tail is None else np.concatenate([self._tail, x], axis=1)
        available = self.base + buf.shape[1]
        # outputs j need input idx(j) + 1 < available
        num, den = self.ratio.numerator, self.ratio.denominator
        last = ((available - 1) * den - 1) // num if available > 1 else -1
        j = np.arange(self.next_out, max(last + 1, self.next_out), dtype=np.int64)
        if j.size:
            idx, frac = _interp_weights(j, self.ratio)
            idx = idx - self.base
            out = buf[:, idx] * (1.0 - frac) + buf[:, idx + 1] * frac
            self.next_out = int(j[-1]) + 1
        else:
            out = np.empty((buf.shape[0], 0))
        # the next output may need inputs that have not arrived yet
        keep_from = min((self.next_out * num) // den, available)
        self._tail = buf[:, keep_from - self.base:]
        self.base = keep_from
        return out


def segment(samples, fs_hz: float, trial_len_s: float = 3.0):
    """Contiguous non-overlapping trials from t=0; the short tail is dropped."""
    length = trial_len_s * fs_hz
    if length <= 0 or abs(length - round(length)) > 1e-9:
        raise ValueError(f"trial length {trial_len_s} s at {fs_hz} Hz is not a whole number of samples")
    length = int(round(length))
    x = np.asarray(samples)
    n_trials = x.shape[-1] // length
    return [(k * trial_len_s, x[..., k * length:(k + 1) * length]) for k in range(n_trials)]


def zscore(trial_data) -> np.ndarray:
    x = np.asarray(trial_data, dtype=np.float64)
    _check_finite(x)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True))
    constant = std < 1e-12
    return np.where(constant, 0.0, centered / np.where(constant, 1.0, std))


def _finish_trial(seg, fs_in, fs_out):
    z = resample(zscore(seg), fs_in, fs_out)
    return zscore(z).astype(np.float32)


def preprocess(recording: Recording, config: PipelineConfig | None = None) -> list[Trial]:
    """Full offline pipeline, returning standardized trials at ``config.fs_out``."""
    config = config or PipelineConfig()
    fs = recording.fs_hz
    if recording.n_samples < config.trial_len_s * fs:
        return []
    filt = design_bandpass(config.low_hz, config.high_hz, fs, config.filter_order)
    clean = filter_offline(filt, recording.samples, zero_phase=config.zero_phase)
    if config.ica_enabled:
        from .ica import clean_ocular

        clean = clean_ocular(clean, config, out=clean)
    return [
        Trial(recording.subject_id, onset, _finish_trial(seg, fs, config.fs_out))
        for onset, seg in segment(clean, fs, config.trial_len_s)
    ]


class StreamState:
    """Causal preprocessing of a live stream into standardized trials.

    Filter state, resampler phase and a partial-trial buffer at the output
    rate are all that is retained between chunks.
    """

    def __init__(self, n_channels: int, fs_hz: float, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.n_channels = n_channels
        self.fs_hz = float(fs_hz)
        self.trial_len = int(round(self.config.trial_len_s * self.config.fs_out))
        self.reset()

    def reset(self):
        filt = design_bandpass(self.config.low_hz, self.config.high_hz, self.fs_hz, self.config.filter_order)
        self.filter = StreamFilter(filt, self.n_channels)
        self.resampler = StreamResampler(self.fs_hz, self.config.fs_out)
        self.buffer = np.empty((self.n_channels, 0))
        self.trials_emitted = 0
        self.onset_offset_s = 0.0

    @property
    def phase(self) -> float:
        return self.resampler.phase

    def push(self, chunk) -> list[tuple[float, np.ndarray]]:
        """Feed raw samples; return ``(onset_s, trial)`` for every completed trial."""
        y = self.resampler.process(self.filter.process(chunk))
        buf = np.concatenate([self.buffer, y], axis=1) if self.buffer.size else y
        done = []
        while buf.shape[1] >= self.trial_len:
            seg, buf = buf[:, :self.trial_len], buf[:, self.trial_len:]
            onset = self.onset_offset_s + self.trials_emitted * self.config.trial_len_s
            done.append((onset, zscore(seg).astype(np.float32)))
            self.trials_emitted += 1
        self.buffer = np.array(buf)
        return done
