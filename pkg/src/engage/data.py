"""Recordings, trials, labeling and the two train/test split protocols.

Recording file layout (little-endian)::

    b"EEGR" | u32 version (=1) | u32 header length | header JSON | float32 samples

The header JSON carries ``subject_id``, ``fs_hz``, ``n_channels``,
``n_samples``, ``feedback`` (list of ``[time_s, resistance]``) and an optional
``truth`` list of ``[time_s, engagement]``.  Samples are stored channel-major:
all of channel 0, then all of channel 1, and so on.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError

RECORDING_MAGIC = b"EEGR"
RECORDING_VERSION = 1

DISENGAGED = 0
ENGAGED = 1

# Onset windows (seconds) used to label trials.
ENGAGED_WINDOW = (30.0, 240.0)
DISENGAGED_WINDOW = (1800.0, 2100.0)


@dataclass(frozen=True)
class Recording:
    """A multichannel EEG session, samples in microvolts (channels x samples)."""

    subject_id: str
    fs_hz: float
    samples: np.ndarray
    feedback: tuple = ()
    truth: tuple | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be a (channels, samples) matrix, got shape {samples.shape}")
        if not (self.fs_hz > 0 and math.isfinite(self.fs_hz)):
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "fs_hz", float(self.fs_hz))

        feedback = tuple((float(t), int(r)) for t, r in self.feedback)
        duration = samples.shape[1] / self.fs_hz
        last = -math.inf
        for t, r in feedback:
            if not 1 <= r <= 9:
                raise ValueError(f"resistance must be in 1..9, got {r}")
            if t <= last:
                raise ValueError("feedback times must be strictly increasing")
            if not 0.0 <= t <= duration:
                raise ValueError(f"feedback time {t} outside recording [0, {duration}]")
            last = t
        object.__setattr__(self, "feedback", feedback)

        if self.truth is not None:
            truth = tuple((float(t), float(e)) for t, e in self.truth)
            if any(not 0.0 <= e <= 1.0 for _, e in truth):
                raise ValueError("truth engagement values must lie in [0, 1]")
            object.__setattr__(self, "truth", truth)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz


@dataclass(frozen=True)
class Trial:
    subject_id: str
    onset_s: float
    data: np.ndarray


@dataclass(frozen=True)
class LabeledTrial:
    trial: Trial
    label: int

    def __post_init__(self):
        if self.label not in (DISENGAGED, ENGAGED):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class TrialDataset:
    items: list = field(default_factory=list)

    @property
    def subject_ids(self) -> set:
        return {item.trial.subject_id for item in self.items}

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([item.label for item in self.items], dtype=np.int64)

    def counts(self) -> tuple[int, int]:
        """(n_disengaged, n_engaged)."""
        y = self.labels
        return int((y == DISENGAGED).sum()), int((y == ENGAGED).sum())

    def arrays(self, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """Stack into network input ``(N, 1, H, W)`` and label vector ``(N,)``."""
        if not self.items:
            raise ValueError("dataset is empty")
        X = np.stack([np.asarray(item.trial.data, dtype=dtype) for item in self.items])
        return X[:, None], self.labels

    def subset(self, indices: Iterable[int]) -> "TrialDataset":
        return TrialDataset([self.items[i] for i in indices])


# --------------------------------------------------------------------------
# Recording file format
# --------------------------------------------------------------------------

def save_recording(recording: Recording, path) -> None:
    header = {
        "subject_id": recording.subject_id,
        "fs_hz": recording.fs_hz,
        "n_channels": recording.n_channels,
        "n_samples": recording.n_samples,
        "feedback": [[t, r] for t, r in recording.feedback],
    }
    if recording.truth is not None:
        header["truth"] = [[t, e] for t, e in recording.truth]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(RECORDING_MAGIC)
        f.write(struct.pack("<II", RECORDING_VERSION, len(blob)))
        f.write(blob)
        np.ascontiguousarray(recording.samples, dtype="<f4").tofile(f)


def load_recording(path) -> Recording:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RECORDING_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {RECORDING_MAGIC!r}", 0)
        fixed = f.read(8)
        if len(fixed) != 8:
            raise FormatError(f"{path}: truncated header", 4)
        version, header_len = struct.unpack("<II", fixed)
        if version != RECORDING_VERSION:
            raise FormatError(f"{path}: unsupported version {version}", 4)
        raw = f.read(header_len)
        if len(raw) != header_len:
            raise FormatError(f"{path}: header shorter than declared {header_len} bytes", 12 + len(raw))
        try:
            header = json.loads(raw.decode("utf-8"))
            n_channels = int(header["n_channels"])
            n_samples = int(header["n_samples"])
            fs_hz = float(header["fs_hz"])
            subject_id = str(header["subject_id"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed header JSON ({exc})", 12) from exc
        payload_offset = 12 + header_len
        expected = n_channels * n_samples
        data = np.fromfile(f, dtype="<f4", count=expected)
        if data.size != expected:
            raise FormatError(
                f"{path}: payload holds {data.size} samples, header declares "
                f"{n_channels} x {n_samples} = {expected}",
                payload_offset + 4 * data.size,
            )
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload", payload_offset + 4 * expected)

    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise FormatError(f"{path}: non-finite sample value", payload_offset + 4 * bad)
    try:
        return Recording(
            subject_id=subject_id,
            fs_hz=fs_hz,
            samples=data.reshape(n_channels, n_samples).astype(np.float32, copy=False),
            feedback=header.get("feedback", ()),
            truth=header.get("truth"),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: invalid recording header ({exc})", 12) from exc


def write_manifest(entries: Sequence[tuple[str, str]], path) -> None:
    """Write a manifest: JSON list of ``{"subject_id", "path"}`` objects."""
    doc = [{"subject_id": sid, "path": str(p)} for sid, p in entries]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> list[tuple[str, Path]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        entries = [(str(e["subject_id"]), Path(e["path"])) for e in doc]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    # relative paths are resolved against the manifest's directory
    return [(sid, p if p.is_absolute() else path.parent / p) for sid, p in entries]


# --------------------------------------------------------------------------
# Labeling and splits
# --------------------------------------------------------------------------

def assign_labels(trials: Iterable[Trial],
                  engaged_window=ENGAGED_WINDOW,
                  disengaged_window=DISENGAGED_WINDOW) -> TrialDataset:
    """Label trials by onset; trials outside both windows are dropped."""
    e0, e1 = engaged_window
    d0, d1 = disengaged_window
    if e1 <= e0 or d1 <= d0:
        raise ValueError("label windows must have positive length")
    if e0 < d1 and d0 < e1:
        raise ValueError(f"label windows overlap: {engaged_window} and {disengaged_window}")
    items = []
    for trial in trials:
        if e0 <= trial.onset_s < e1:
            items.append(LabeledTrial(trial, ENGAGED))
        elif d0 <= trial.onset_s < d1:
            items.append(LabeledTrial(trial, DISENGAGED))
    return TrialDataset(items)


def split_subject_specific(dataset: TrialDataset, ratio=(4, 1), seed: int = 0):
    """Random train/test partition of a single subject's trials."""
    n_train_part, n_test_part = ratio
    if n_train_part <= 0 or n_test_part <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    if len(dataset.subject_ids) != 1:
        raise ValueError(f"expected one subject, got {sorted(dataset.subject_ids)}")
    n = len(dataset)
    n_train = int(round(n * n_train_part / (n_train_part + n_test_part)))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def split_leave_one_out(datasets: Mapping[str, TrialDataset], held_out: str):
    if held_out not in datasets:
        raise ValueError(f"unknown subject {held_out!r}")
    train_items = []
    for sid in sorted(datasets):
        if sid != held_out:
            train_items.extend(datasets[sid].items)
    if not train_items:
        raise ValueError("leave-one-out needs at least one training subject")
    return TrialDataset(train_items), TrialDataset(list(datasets[held_out].items))
