"""Brute-force reference classifier: alpha/beta bandpower ratio with an exhaustive threshold search.

It uses the spectral contrast the synthetic subjects are built from, so its
accuracy bounds what the CNN can be expected to reach on the same trials.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .data import TrialDataset

ALPHA_BAND = (8.0, 12.0)
BETA_BAND = (13.0, 30.0)


def log_power_ratio(trials, fs_hz: float = 200.0) -> np.ndarray:
    """log(alpha power) - log(beta power), channel-averaged, one value per trial."""
    X = np.asarray(trials, dtype=np.float64)
    if X.ndim == 4:
        X = X[:, 0]
    spec = np.abs(np.fft.rfft(X, axis=-1)) ** 2
    f = np.fft.rfftfreq(X.shape[-1], 1.0 / fs_hz)
    alpha = spec[..., (f >= ALPHA_BAND[0]) & (f <= ALPHA_BAND[1])].mean(axis=(-1, -2))
    beta = spec[..., (f >= BETA_BAND[0]) & (f <= BETA_BAND[1])].mean(axis=(-1, -2))
    return np.log(alpha) - np.log(beta)


class RatioThreshold:
    """Predicts engaged when the log ratio is below a threshold fitted by exhaustive search."""

    def fit(self, features, labels) -> "RatioThreshold":
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels)
        xs = np.sort(np.unique(x))
        candidates = np.concatenate([[xs[0] - 1.0], (xs[:-1] + xs[1:]) / 2, [xs[-1] + 1.0]])
        best = (-1.0, 0.0)
        for thr in candidates:
            acc = np.mean((x < thr).astype(int) == y)
            if acc > best[0]:
                best = (acc, thr)
        self.train_accuracy, self.threshold = best
        return self

    def predict(self, features) -> np.ndarray:
        return (np.asarray(features) < self.threshold).astype(np.int64)


def loso_accuracy(datasets: Mapping[str, TrialDataset], fs_hz: float = 200.0) -> dict:
    """Held-out accuracy of the ratio classifier for each subject."""
    feats = {sid: (log_power_ratio(ds.arrays()[0], fs_hz), ds.labels) for sid, ds in datasets.items()}
    out = {}
    for sid in sorted(feats):
        x_tr = np.concatenate([feats[s][0] for s in sorted(feats) if s != sid])
        y_tr = np.concatenate([feats[s][1] for s in sorted(feats) if s != sid])
        clf = RatioThreshold().fit(x_tr, y_tr)
        x_te, y_te = feats[sid]
        out[sid] = float(np.mean(clf.predict(x_te) == y_te))
    return out
