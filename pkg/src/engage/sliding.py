"""Continuous engagement estimate: fraction of trials classified engaged per sliding window."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import Recording
from .dsp import PipelineConfig, preprocess
from .model import CENet, predict_batch
from .training import pearson

log = logging.getLogger(__name__)

WINDOW_S = 420.0
OVERLAP = 0.5


@dataclass(frozen=True)
class Window:
    start_s: float
    end_s: float
    truncated: bool = False


@dataclass(frozen=True)
class WindowScore:
    start_s: float
    end_s: float
    n_trials: int
    n_engaged: int
    truncated: bool = False

    @property
    def empty(self) -> bool:
        return self.n_trials == 0

    @property
    def fraction_engaged(self) -> float | None:
        """``None`` marks an empty window."""
        return None if self.n_trials == 0 else self.n_engaged / self.n_trials

    @property
    def center_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fraction_engaged"] = self.fraction_engaged
        return d


def make_windows(session_duration_s: float, window_s: float = WINDOW_S, overlap: float = OVERLAP) -> list[Window]:
    """Windows at ``0, step, 2*step, ...`` with ``step = window * (1 - overlap)``.

    Full windows come first; if they stop short of the session end, one
    truncated window starting at the next step covers the remainder.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if window_s <= 0 or session_duration_s <= 0:
        raise ValueError("window and session duration must be positive")
    if window_s > session_duration_s:
        log.warning("window %.1f s longer than session %.1f s; using one truncated window",
                    window_s, session_duration_s)
        return [Window(0.0, float(session_duration_s), True)]
    step = window_s * (1.0 - overlap)
    n_full = int(math.floor((session_duration_s - window_s) / step + 1e-9)) + 1
    windows = [Window(k * step, k * step + window_s) for k in range(n_full)]
    if windows[-1].end_s < session_duration_s - 1e-9:
        windows.append(Window(n_full * step, float(session_duration_s), True))
    return windows


def _score(onsets, labels, window) -> WindowScore:
    start, end = (window.start_s, window.end_s) if isinstance(window, Window) else window
    member = (onsets >= start) & (onsets < end)
    return WindowScore(float(start), float(end), int(member.sum()), int(labels[member].sum()),
                       bool(getattr(window, "truncated", False)))


def score_window(model: CENet, trials: Sequence, window) -> WindowScore:
    """Classify the trials whose onset lies in ``[start, end)`` and count engaged ones."""
    start, end = (window.start_s, window.end_s) if isinstance(window, Window) else window
    members = [t for t in trials if start <= t.onset_s < end]
    labels = np.array([lab for _, lab in predict_batch(model, members)], dtype=np.int64)
    onsets = np.array([t.onset_s for t in members], dtype=np.float64)
    return _score(onsets, labels, window)


def score_predictions(onsets, labels, windows) -> list[WindowScore]:
    """Window scores from per-trial predictions computed once up front."""
    onsets = np.asarray(onsets, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return [_score(onsets, labels, w) for w in windows]


def trajectory_from_trials(model: CENet, trials: Sequence, duration_s: float,
                           window_s: float = WINDOW_S, overlap: float = OVERLAP) -> list[WindowScore]:
    preds = predict_batch(model, trials)
    onsets = [t.onset_s for t in trials]
    return score_predictions(onsets, [lab for _, lab in preds], make_windows(duration_s, window_s, overlap))


def ce_trajectory(model: CENet, recording: Recording, config: PipelineConfig | None = None,
                  window_s: float = WINDOW_S, overlap: float = OVERLAP) -> list[WindowScore]:
    """Preprocess, classify every trial once, and score all windows."""
    trials = preprocess(recording, config)
    return trajectory_from_trials(model, trials, recording.duration_s, window_s, overlap)


def correlate_with_feedback(trajectory: Sequence[WindowScore], feedback) -> float:
    """Pearson correlation between window fractions and the ``10 - resistance`` proxy.

    The proxy is linearly interpolated to window centers, held constant beyond
    the first and last report.
    """
    scored = [w for w in trajectory if not w.empty]
    if len(scored) < 2:
        raise ValueError("need at least two non-empty windows")
    feedback = list(feedback)
    if len(feedback) < 2:
        raise ValueError("need at least two feedback points")
    t_fb = np.array([t for t, _ in feedback], dtype=np.float64)
    proxy = 10.0 - np.array([r for _, r in feedback], dtype=np.float64)
    centers = np.array([w.center_s for w in scored])
    fractions = np.array([w.fraction_engaged for w in scored])
    return pearson(fractions, np.interp(centers, t_fb, proxy))


def write_jsonl(trajectory: Sequence[WindowScore], path) -> None:
    with open(path, "w") as f:
        for w in trajectory:
            f.write(json.dumps({"start_s": w.start_s, "end_s": w.end_s, "n_trials": w.n_trials,
                                "fraction_engaged": w.fraction_engaged, "truncated": w.truncated}) + "\n")


def write_csv(trajectory: Sequence[WindowScore], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["start_s", "end_s", "n_trials", "n_engaged", "fraction_engaged", "truncated"])
        for w in trajectory:
            frac = "" if w.empty else f"{w.fraction_engaged:.6f}"
            writer.writerow([w.start_s, w.end_s, w.n_trials, w.n_engaged, frac, int(w.truncated)])
