"""Synthetic subjects with ground-truth engagement decay.

Engagement follows a sigmoid decay ``e(t) = e0 / (1 + exp((t - t_mid) / slope))``.
EEG is a sum of topographically weighted latent sources: alpha (8-12 Hz)
whose amplitude grows with fatigue ``1 - e``, beta (13-30 Hz) whose amplitude
grows with engagement, 1/f background, sensor noise and optional blinks on
frontal channels.  Channel ``c`` sits at anterior-posterior coordinate
``c / (n - 1)`` (0 = frontal), so neighbouring indices are neighbouring
electrodes.

All randomness comes from numpy's counter-based Philox generator keyed by
the subject seed, so recordings are reproducible across platforms.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .data import Recording

_CHANNEL_BLOCK = 16


def philox(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class SubjectModel:
    subject_id: str = "S01"
    seed: int = 0
    # engagement
    initial_engagement: float = 1.0
    decay_midpoint_s: float = 17 * 60.0
    decay_slope_s: float = 150.0
    # spectra (amplitudes in microvolts)
    alpha_hz: float = 10.0
    beta_hz: float = 20.0
    alpha_uv: float = 6.0
    beta_uv: float = 4.0
    alpha_fatigue_gain: float = 2.0
    beta_engagement_gain: float = 2.0
    background_uv: float = 8.0
    background_exponent: float = 1.0
    n_background_sources: int = 12
    sensor_noise_uv: float = 1.0
    topography_jitter: float = 0.05
    blink_rate_hz: float = 0.2
    blink_uv: float = 100.0
    # behaviour
    base_rt_s: float = 0.6
    rt_inflation_s: float = 0.6
    rt_difficulty_s: float = 0.3
    rt_noise_sigma: float = 0.5
    base_accuracy: float = 0.95
    accuracy_drop: float = 0.35
    difficulty_penalty: float = 0.25
    report_noise_std: float = 0.5

    def __post_init__(self):
        gains = (self.alpha_uv, self.beta_uv, self.alpha_fatigue_gain, self.beta_engagement_gain,
                 self.background_uv, self.sensor_noise_uv, self.blink_uv)
        if min(gains) < 0:
            raise ValueError("spectral gains must be non-negative")
        if not 0.0 <= self.initial_engagement <= 1.0:
            raise ValueError("initial_engagement must be in [0, 1]")
        if self.decay_slope_s <= 0:
            raise ValueError("decay_slope_s must be positive")

    @classmethod
    def sample(cls, subject_id: str, seed: int, **overrides) -> "SubjectModel":
        """Draw subject-specific parameters around the defaults."""
        rng = philox(seed, 7)
        params = dict(
            subject_id=subject_id,
            seed=seed,
            decay_midpoint_s=17 * 60.0 + rng.uniform(-90, 90),
            decay_slope_s=150.0 * rng.uniform(0.8, 1.2),
            alpha_hz=rng.uniform(9.0, 11.0),
            beta_hz=rng.uniform(18.0, 23.0),
            alpha_uv=6.0 * rng.uniform(0.8, 1.2),
            beta_uv=4.0 * rng.uniform(0.8, 1.2),
            background_uv=8.0 * rng.uniform(0.8, 1.2),
            background_exponent=rng.uniform(0.8, 1.2),
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)


def engagement_at(subject: SubjectModel, t_s):
    """Ground-truth engagement in [0, 1]; accepts scalars or arrays."""
    t = np.asarray(t_s, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    e = subject.initial_engagement / (1.0 + np.exp((t - subject.decay_midpoint_s) / subject.decay_slope_s))
    return float(e) if e.ndim == 0 else e


# --------------------------------------------------------------------------
# EEG
# --------------------------------------------------------------------------

def channel_positions(n_channels: int) -> np.ndarray:
    """Pseudo-montage ``(n, 2)`` of (lateral x in [-1, 1], anterior-posterior y in [0, 1])."""
    c = np.arange(n_channels)
    y = c / max(n_channels - 1, 1)
    x = np.sin(c * 2.399963229728653)   # golden angle spreads laterality
    return np.column_stack([x, y])


def frontal_channels(n_channels: int, count: int = 4) -> list[int]:
    return list(range(min(count, n_channels)))


def _blob(pos, center, width):
    d2 = ((pos - np.asarray(center)) ** 2).sum(axis=1)
    return np.exp(-d2 / (2 * width**2))


def _narrowband(rng, n, fs, center_hz, bandwidth_hz):
    lo = max(center_hz - bandwidth_hz / 2, 0.5)
    hi = min(center_hz + bandwidth_hz / 2, 0.45 * fs)
    sos = sps.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    s = sps.sosfilt(sos, rng.standard_normal(n))
    return s / s.std()


def _pink(rng, n, exponent):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-exponent / 2)
    s = np.fft.irfft(spec * scale, n)
    return s / s.std()


def _blinks(rng, n, fs, rate_hz):
    out = np.zeros(n)
    n_events = rng.poisson(rate_hz * n / fs)
    width = int(0.3 * fs)
    shape = np.hanning(width)
    for onset in np.sort(rng.integers(0, max(n - width, 1), size=n_events)):
        out[onset:onset + width] += shape[:n - onset] * rng.uniform(0.8, 1.2)
    return out


def _sources(subject: SubjectModel, n, fs, n_channels, blinks):
    """Latent source time courses (k, n) and their topographies (n_channels, k)."""
    rng = philox(subject.seed, 1)
    pos = channel_positions(n_channels)
    jit = subject.topography_jitter
    t = np.arange(n) / fs
    fatigue = 1.0 - engagement_at(subject, t)

    alpha_env = subject.alpha_uv * (1.0 + subject.alpha_fatigue_gain * fatigue)
    beta_env = subject.beta_uv * (1.0 + subject.beta_engagement_gain * (1.0 - fatigue))

    srcs, topo = [], []
    for side in (-1, 1):
        center = (side * 0.4 + rng.uniform(-jit, jit), 0.85 + rng.uniform(-jit, jit))
        srcs.append((alpha_env * _narrowband(rng, n, fs, subject.alpha_hz, 2.0)).astype(np.float32))
        topo.append(_blob(pos, center, 0.25))
    for side in (-1, 1):
        center = (side * 0.35 + rng.uniform(-jit, jit), 0.45 + rng.uniform(-jit, jit))
        srcs.append((beta_env * _narrowband(rng, n, fs, subject.beta_hz, 5.0)).astype(np.float32))
        topo.append(_blob(pos, center, 0.25))
    for _ in range(subject.n_background_sources):
        center = (rng.uniform(-1, 1), rng.uniform(0, 1))
        srcs.append((subject.background_uv * _pink(rng, n, subject.background_exponent)).astype(np.float32))
        topo.append(_blob(pos, center, 0.35))
    if blinks and subject.blink_rate_hz > 0:
        srcs.append((subject.blink_uv * _blinks(rng, n, fs, subject.blink_rate_hz)).astype(np.float32))
        topo.append(np.exp(-pos[:, 1] / 0.08) * (1.0 - 0.3 * np.abs(pos[:, 0])))
    return np.stack(srcs), np.column_stack(topo).astype(np.float32)


def feedback_schedule(subject: SubjectModel, duration_s: float, interval_s: float = 300.0):
    """Self-reports every ``interval_s`` (not at t=0): resistance 1..9, rising with fatigue."""
    rng = philox(subject.seed, 3)
    times = np.arange(interval_s, duration_s + 1e-9, interval_s)
    out = []
    for t in times:
        noisy = 1.0 + 8.0 * (1.0 - engagement_at(subject, t)) + rng.normal(0.0, subject.report_noise_std)
        out.append((float(t), int(np.clip(np.round(noisy), 1, 9))))
    return out


def gen_eeg(subject: SubjectModel, duration_s: float = 2100.0, fs_hz: float = 1024.0,
            n_channels: int = 128, blinks: bool = True, truth_step_s: float = 1.0) -> Recording:
    if duration_s < 3.0:
        raise ValueError("duration must be at least 3 s")
    if fs_hz <= 0 or n_channels < 1:
        raise ValueError("fs_hz and n_channels must be positive")
    n = int(round(duration_s * fs_hz))
    sources, topo = _sources(subject, n, fs_hz, n_channels, blinks)
    samples = np.empty((n_channels, n), dtype=np.float32)
    for b, start in enumerate(range(0, n_channels, _CHANNEL_BLOCK)):
        stop = min(start + _CHANNEL_BLOCK, n_channels)
        block = topo[start:stop] @ sources
        noise = philox(subject.seed, 2, b).standard_normal((stop - start, n), dtype=np.float32)
        block += subject.sensor_noise_uv * noise
        samples[start:stop] = block
    t_truth = np.arange(0.0, duration_s + 1e-9, truth_step_s)
    truth = list(zip(t_truth.tolist(), np.atleast_1d(engagement_at(subject, t_truth)).tolist()))
    return Recording(subject.subject_id, fs_hz, samples, feedback_schedule(subject, duration_s), truth)


# --------------------------------------------------------------------------
# Go/No-Go behaviour and task adaptation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskState:
    n_dots: int = 8
    n_targets: int = 3
    speed: float = 2.0
    block: int = 0

    MIN_DOTS = 6
    MAX_DOTS = 20
    MIN_SPEED = 1.0
    MAX_SPEED = 5.0

    def __post_init__(self):
        if not self.MIN_DOTS <= self.n_dots <= self.MAX_DOTS:
            raise ValueError(f"n_dots must be in {self.MIN_DOTS}..{self.MAX_DOTS}")
        if not 2 <= self.n_targets <= 5:
            raise ValueError("n_targets must be in 2..5")
        if not self.MIN_SPEED <= self.speed <= self.MAX_SPEED:
            raise ValueError(f"speed must be in [{self.MIN_SPEED}, {self.MAX_SPEED}]")

    @property
    def difficulty(self) -> float:
        """0 at the easiest setting, 1 at the hardest."""
        dots = (self.n_dots - self.MIN_DOTS) / (self.MAX_DOTS - self.MIN_DOTS)
        speed = (self.speed - self.MIN_SPEED) / (self.MAX_SPEED - self.MIN_SPEED)
        return 0.5 * dots + 0.5 * speed


BLOCK_LEN = 11
SPEED_STEP = 0.5
ACCURACY_THRESHOLD = 0.8
RT_THRESHOLD_S = 0.9


def simulate_behavior(subject: SubjectModel, task: TaskState, t_s: float, seed=0) -> tuple[bool, float]:
    """One Go/No-Go response: (correct, reaction time in seconds)."""
    rng = seed if isinstance(seed, np.random.Generator) else philox(subject.seed, 4, int(seed))
    fatigue = 1.0 - engagement_at(subject, t_s)
    p = np.clip(subject.base_accuracy - subject.accuracy_drop * fatigue
                - subject.difficulty_penalty * task.difficulty, 0.05, 0.99)
    correct = bool(rng.random() < p)
    rt = (subject.base_rt_s + subject.rt_inflation_s * fatigue + subject.rt_difficulty_s * task.difficulty
          + 0.05 * rng.lognormal(0.0, subject.rt_noise_sigma))
    return correct, float(rt)


def adapt_task(state: TaskState, block) -> TaskState:
    """Speed follows accuracy, dot count follows reaction time, one step per block of 11."""
    block = list(block)
    if len(block) != BLOCK_LEN:
        raise ValueError(f"adaptation block must hold {BLOCK_LEN} trials, got {len(block)}")
    accuracy = np.mean([c for c, _ in block])
    median_rt = float(np.median([rt for _, rt in block]))
    speed = state.speed + (SPEED_STEP if accuracy >= ACCURACY_THRESHOLD else -SPEED_STEP)
    dots = state.n_dots + (1 if median_rt <= RT_THRESHOLD_S else -1)
    return replace(state,
                   speed=float(np.clip(speed, TaskState.MIN_SPEED, TaskState.MAX_SPEED)),
                   n_dots=int(np.clip(dots, TaskState.MIN_DOTS, TaskState.MAX_DOTS)),
                   block=state.block + 1)


# Fig. 2 timing: dots shown 1 s, targets 2 s, pause 1 s, tracking 10 s, then the response.
TRIAL_FIXED_S = 1.0 + 2.0 + 1.0 + 10.0
RESPONSE_WINDOW_S = 2.0


@dataclass(frozen=True)
class SessionConfig:
    duration_s: float = 2100.0
    fs_hz: float = 1024.0
    n_channels: int = 128
    blinks: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown session-config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class BehaviorRecord:
    trial: int
    t: float
    correct: bool
    rt: float
    n_dots: int
    speed: float
    n_targets: int


def simulate_session(subject: SubjectModel, config: SessionConfig | None = None):
    """Run a whole session: returns (Recording, behaviour log, task-state history)."""
    config = config or SessionConfig()
    rng = philox(subject.seed, 5)
    state = TaskState()
    history = [state]
    log, block = [], []
    t = 0.0
    while True:
        state = replace(state, n_targets=int(rng.integers(2, 6)))
        correct, rt = simulate_behavior(subject, state, t, rng)
        duration = TRIAL_FIXED_S + min(rt, RESPONSE_WINDOW_S)
        if t + duration > config.duration_s:
            break
        log.append(BehaviorRecord(len(log), t, correct, rt, state.n_dots, state.speed, state.n_targets))
        block.append((correct, rt))
        t += duration
        if len(block) == BLOCK_LEN:
            state = adapt_task(state, block)
            history.append(state)
            block = []
    recording = gen_eeg(subject, config.duration_s, config.fs_hz, config.n_channels, config.blinks)
    return recording, log, history


def write_behavior_csv(log, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial", "t", "correct", "rt", "n_dots", "speed", "n_targets"])
        for r in log:
            writer.writerow([r.trial, f"{r.t:.4f}", int(r.correct), f"{r.rt:.4f}", r.n_dots, r.speed, r.n_targets])


# --------------------------------------------------------------------------
# Cohorts
# --------------------------------------------------------------------------

@dataclass
class CohortConfig:
    seed: int = 2020
    n_subjects: int = 8
    session: SessionConfig = field(default_factory=SessionConfig)
    subject_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "CohortConfig":
        doc = dict(doc)
        session = SessionConfig.from_dict(doc.pop("session", {}))
        known = {f.name for f in fields(cls)} - {"session"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown cohort-config keys: {sorted(unknown)}")
        cfg = cls(session=session, **doc)
        if cfg.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        return cfg

    @classmethod
    def load(cls, path) -> "CohortConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def subjects(self) -> list[SubjectModel]:
        return [SubjectModel.sample(f"S{i + 1:02d}", self.seed * 1000 + i, **self.subject_overrides)
                for i in range(self.n_subjects)]
