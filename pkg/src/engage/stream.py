"""Binary sample stream: wire format, incremental decoder and the real-time classifier loop.

Wire format, little-endian::

    header: b"EEGS" | u32 version | f32 fs_hz | u32 n_channels
    frame:  u64 sample index | n_channels x f32

Every completed 3-s trial produces one JSON line
``{"t", "p_engaged", "label", "window_fraction"}`` where ``t`` is the trial
onset in stream seconds and ``window_fraction`` is the engaged fraction of
the trials in the trailing ``window_s`` seconds.  A sample-index gap produces
a ``{"warning": ...}`` line and restarts preprocessing at the new index.
"""

from __future__ import annotations

import json
import struct
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .dsp import PipelineConfig, StreamState
from .errors import FormatError
from .model import CENet, predict

STREAM_MAGIC = b"EEGS"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sIfI")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class StreamHeader:
    fs_hz: float
    n_channels: int

    @property
    def frame_size(self) -> int:
        return 8 + 4 * self.n_channels

    def frame_dtype(self) -> np.dtype:
        return np.dtype([("index", "<u8"), ("samples", "<f4", (self.n_channels,))])


def encode_header(fs_hz: float, n_channels: int) -> bytes:
    return _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, fs_hz, n_channels)


def encode_frames(samples, start_index: int = 0, indices=None) -> bytes:
    """Frames for a ``(channels, n)`` block; indices default to consecutive from ``start_index``."""
    x = np.asarray(samples, dtype="<f4")
    n_channels, n = x.shape
    frames = np.empty(n, dtype=StreamHeader(0.0, n_channels).frame_dtype())
    frames["index"] = np.arange(start_index, start_index + n) if indices is None else indices
    frames["samples"] = x.T
    return frames.tobytes()


def write_recording_stream(recording, out, chunk_samples: int = 4096) -> None:
    """Serialize a recording to the wire format on a binary file object."""
    out.write(encode_header(recording.fs_hz, recording.n_channels))
    for s in range(0, recording.n_samples, chunk_samples):
        out.write(encode_frames(recording.samples[:, s:s + chunk_samples], s))


class FrameDecoder:
    """Incremental parser: feed arbitrary byte chunks, get whole frames back.

    Raises :class:`FormatError` naming the absolute byte offset of the first
    bad byte (bad header, non-finite sample, or a partial frame at the end).
    """

    def __init__(self):
        self.header: StreamHeader | None = None
        self._pending = b""
        self.offset = 0          # absolute offset of self._pending[0]

    def feed(self, data: bytes) -> tuple[np.ndarray, np.ndarray]:
        """Returns ``(indices, samples)`` with samples shaped ``(channels, n)``."""
        buf = self._pending + data if self._pending else bytes(data)
        pos = 0
        if self.header is None:
            if len(buf) < HEADER_SIZE:
                if buf and not STREAM_MAGIC.startswith(buf[:4]):
                    raise FormatError("bad stream magic", self.offset)
                self._pending = buf
                return self._empty()
            magic, version, fs, n_channels = _HEADER.unpack_from(buf)
            if magic != STREAM_MAGIC:
                raise FormatError(f"bad stream magic {magic!r}", self.offset)
            if version != STREAM_VERSION:
                raise FormatError(f"unsupported stream version {version}", self.offset + 4)
            if not (np.isfinite(fs) and fs > 0):
                raise FormatError(f"invalid sampling rate {fs}", self.offset + 8)
            if n_channels < 1:
                raise FormatError("stream declares zero channels", self.offset + 12)
            self.header = StreamHeader(float(fs), int(n_channels))
            pos = HEADER_SIZE
        size = self.header.frame_size
        n = (len(buf) - pos) // size
        frames = np.frombuffer(buf, dtype=self.header.frame_dtype(), count=n, offset=pos)
        samples = frames["samples"]
        bad = ~np.isfinite(samples).all(axis=1)
        if bad.any():
            k = int(np.argmax(bad))
            raise FormatError("non-finite sample value", self.offset + pos + k * size + 8)
        end = pos + n * size
        self._pending = buf[end:]
        self.offset += end
        return frames["index"].astype(np.int64), samples.T.astype(np.float64)

    def finish(self) -> None:
        if self.header is None:
            if self._pending:
                raise FormatError("truncated stream header", self.offset)
            return
        if self._pending:
            raise FormatError(f"truncated frame ({len(self._pending)} of {self.header.frame_size} bytes)",
                              self.offset)

    def _empty(self):
        return np.empty(0, dtype=np.int64), np.empty((0, 0))


class StreamClassifier:
    """Causal preprocessing, per-trial classification and the rolling engaged fraction."""

    def __init__(self, model: CENet, fs_hz: float, n_channels: int,
                 config: PipelineConfig | None = None, window_s: float = 420.0):
        self.model = model
        self.config = config or PipelineConfig()
        self.fs_hz = fs_hz
        self.state = StreamState(n_channels, fs_hz, self.config)
        self.window_s = window_s
        self.recent: deque = deque()       # (onset_s, label) inside the trailing window
        self.expected_index: int | None = None

    def push(self, indices, samples) -> list[dict]:
        """Consume consecutive frames; returns the output records in order."""
        out = []
        if len(indices) == 0:
            return out
        if self.expected_index is None:
            self._restart(int(indices[0]))
        # split at every discontinuity
        breaks = np.flatnonzero(np.diff(indices) != 1) + 1
        starts = np.concatenate([[0], breaks])
        ends = np.concatenate([breaks, [len(indices)]])
        for s, e in zip(starts, ends):
            first = int(indices[s])
            if first != self.expected_index:
                out.append({"warning": "sample index discontinuity; preprocessing restarted",
                            "expected_index": self.expected_index, "got_index": first})
                self._restart(first)
            for onset, trial in self.state.push(samples[:, s:e]):
                out.append(self._classify(onset, trial))
            self.expected_index = int(indices[e - 1]) + 1
        return out

    def _restart(self, index: int):
        self.state.reset()
        self.state.onset_offset_s = index / self.fs_hz
        self.expected_index = index

    def _classify(self, onset_s: float, trial) -> dict:
        p, label = predict(self.model, trial)
        self.recent.append((onset_s, label))
        while self.recent and self.recent[0][0] <= onset_s - self.window_s:
            self.recent.popleft()
        frac = sum(lab for _, lab in self.recent) / len(self.recent)
        return {"t": round(onset_s, 6), "p_engaged": p, "label": label, "window_fraction": frac}


@dataclass
class StreamStats:
    trials: int = 0
    warnings: int = 0
    bytes_read: int = 0
    latencies_s: deque = None

    def p99_latency_s(self) -> float | None:
        if not self.latencies_s:
            return None
        return float(np.percentile(np.asarray(self.latencies_s), 99))


def run_stream(model: CENet, infile, outfile, config: PipelineConfig | None = None,
               window_s: float = 420.0, read_size: int = 1 << 16, max_latency_samples: int = 100_000) -> StreamStats:
    """Read the binary stream until EOF, writing JSON lines as trials complete.

    Latency is measured from the moment the bytes holding a trial's last
    sample are returned by ``read`` to the moment its line is flushed.
    """
    decoder = FrameDecoder()
    classifier = None
    stats = StreamStats(latencies_s=deque(maxlen=max_latency_samples))
    read = getattr(infile, "read1", infile.read)
    while True:
        data = read(read_size)
        if not data:
            break
        arrived = time.perf_counter()
        stats.bytes_read += len(data)
        indices, samples = decoder.feed(data)
        if classifier is None and decoder.header is not None:
            classifier = StreamClassifier(model, decoder.header.fs_hz, decoder.header.n_channels,
                                          config, window_s)
        if classifier is None or len(indices) == 0:
            continue
        records = classifier.push(indices, samples)
        if not records:
            continue
        for rec in records:
            outfile.write(json.dumps(rec, sort_keys=True) + "\n")
        outfile.flush()
        done = time.perf_counter()
        for rec in records:
            if "warning" in rec:
                stats.warnings += 1
            else:
                stats.trials += 1
                stats.latencies_s.append(done - arrived)
    decoder.finish()
    return stats
