"""Glue between recordings on disk and the trial datasets the trainers consume."""

from __future__ import annotations

import gc
import logging
from pathlib import Path

import numpy as np

from .data import (DISENGAGED_WINDOW, ENGAGED_WINDOW, Trial, TrialDataset, assign_labels,
                   load_recording, read_manifest)
from .dsp import PipelineConfig, preprocess

log = logging.getLogger(__name__)


def prepare_recording(recording, config: PipelineConfig | None = None,
                      keep_all: bool = False):
    """Preprocess one recording and label its trials.

    Returns the labeled dataset, plus every trial when ``keep_all`` is set
    (the sliding-window trajectory needs the unlabeled middle of the session).
    """
    trials = preprocess(recording, config)
    labeled = assign_labels(trials, ENGAGED_WINDOW, DISENGAGED_WINDOW)
    return (labeled, trials) if keep_all else labeled


def stack_trials(trials) -> tuple[np.ndarray, np.ndarray]:
    """``(onsets, data)`` with data shaped ``(N, H, W)``."""
    onsets = np.array([t.onset_s for t in trials], dtype=np.float64)
    return onsets, np.stack([t.data for t in trials]) if trials else np.empty((0, 0, 0), np.float32)


def trials_from_arrays(subject_id: str, onsets, data) -> list[Trial]:
    return [Trial(subject_id, float(t), d) for t, d in zip(onsets, data)]


def load_manifest_datasets(manifest, config: PipelineConfig | None = None,
                           subjects=None) -> dict[str, TrialDataset]:
    """Labeled datasets for every (or each selected) manifest subject.

    Recordings are loaded one at a time and released before the next, so peak
    memory is one raw recording plus its filtered copy.
    """
    out = {}
    for sid, path in read_manifest(manifest):
        if subjects is not None and sid not in subjects:
            continue
        recording = load_recording(path)
        if recording.subject_id != sid:
            log.warning("manifest subject %s points at a recording of %s", sid, recording.subject_id)
        out[sid] = prepare_recording(recording, config)
        del recording
        gc.collect()
    return out


def manifest_recording(manifest, subject_id: str) -> Path:
    for sid, path in read_manifest(manifest):
        if sid == subject_id:
            return path
    raise KeyError(subject_id)
