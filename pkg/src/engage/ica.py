"""FastICA (tanh contrast, symmetric orthogonalization) for ocular artifact removal.

Blink components are found by their correlation with frontal channels;
no EOG reference exists in the recordings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class FastIcaResult(NamedTuple):
    unmixing: np.ndarray
    converged: bool
    n_iter: int


@dataclass(frozen=True)
class IcaDecomposition:
    mean: np.ndarray            # (channels, 1)
    whitening: np.ndarray       # (k, channels)
    dewhitening: np.ndarray     # (channels, k), pseudo-inverse of whitening
    unmixing: np.ndarray        # (k, k)
    channel_corr: np.ndarray    # (k, channels) source/channel correlation on the fit data
    kurtosis: np.ndarray        # (k,) excess kurtosis of each source
    converged: bool
    n_iter: int

    @property
    def k(self) -> int:
        return self.unmixing.shape[0]

    @property
    def mixing(self) -> np.ndarray:
        return self.dewhitening @ self.unmixing.T

    def sources(self, X) -> np.ndarray:
        return self.unmixing @ (self.whitening @ (np.asarray(X, dtype=np.float64) - self.mean))


def whiten(X, k: int, return_mean: bool = False):
    """PCA whitening onto the top ``k`` components.

    Returns ``(Z, W)`` with ``Z = W (X - mean)`` and ``cov(Z) = I``.  When the
    covariance has rank below ``k``, ``k`` is reduced with a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    n_channels, n_samples = X.shape
    if n_samples <= n_channels:
        raise ValueError(f"need more samples than channels, got {X.shape}")
    if not 1 <= k <= n_channels:
        raise ValueError(f"k must be in 1..{n_channels}, got {k}")
    mean = X.mean(axis=1, keepdims=True)
    Xc = X - mean
    cov = Xc @ Xc.T / n_samples
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    rank = int(np.sum(evals > max(evals[0], 0.0) * 1e-10))
    if k > rank:
        warnings.warn(f"covariance rank {rank} < k={k}; reducing k", RuntimeWarning, stacklevel=2)
        k = rank
    W = evecs[:, :k].T / np.sqrt(evals[:k])[:, None]
    Z = W @ Xc
    if return_mean:
        return Z, W, mean, evecs[:, :k] * np.sqrt(evals[:k])
    return Z, W


def _sym_decorrelate(W):
    # W <- (W W^T)^{-1/2} W
    s, u = np.linalg.eigh(W @ W.T)
    return (u / np.sqrt(s)) @ u.T @ W


def fastica(Z, max_iter: int = 200, tol: float = 1e-4, seed: int = 0) -> FastIcaResult:
    """Symmetric FastICA on whitened data ``Z`` (k x samples).

    Never raises on non-convergence; check ``converged`` instead.
    """
    Z = np.asarray(Z, dtype=np.float64)
    k, n = Z.shape
    W = _sym_decorrelate(np.random.default_rng(seed).standard_normal((k, k)))
    for it in range(1, max_iter + 1):
        Y = np.tanh(W @ Z)
        g_prime = (1.0 - Y * Y).mean(axis=1)
        W_new = _sym_decorrelate(Y @ Z.T / n - g_prime[:, None] * W)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if lim < tol:
            return FastIcaResult(W, True, it)
    return FastIcaResult(W, False, max_iter)


def fit_ica(X, k: int = 32, max_iter: int = 200, tol: float = 1e-4, seed: int = 0,
            stride: int = 1) -> IcaDecomposition:
    """Whiten, unmix, and annotate each component with channel correlations.

    ``stride`` subsamples time for fitting only.
    """
    X = np.asarray(X)
    Xfit = np.asarray(X[:, ::stride] if stride > 1 else X, dtype=np.float64)
    Z, W, mean, dewhite = whiten(Xfit, min(k, X.shape[0]), return_mean=True)
    res = fastica(Z, max_iter=max_iter, tol=tol, seed=seed)
    S = res.unmixing @ Z
    Xc = Xfit - mean
    x_std = Xc.std(axis=1)
    x_std[x_std == 0] = np.inf
    s_std = S.std(axis=1)
    corr = (S @ Xc.T / Xfit.shape[1]) / (s_std[:, None] * x_std[None, :])
    s_c = S - S.mean(axis=1, keepdims=True)
    kurt = np.mean(s_c**4, axis=1) / np.mean(s_c**2, axis=1) ** 2 - 3.0
    return IcaDecomposition(mean, W, dewhite, res.unmixing, corr, kurt, res.converged, res.n_iter)


def identify_ocular(decomp: IcaDecomposition, frontal_channel_indices, corr_threshold: float = 0.7) -> list[int]:
    """Components whose |corr| with any frontal channel reaches the threshold."""
    idx = list(frontal_channel_indices)
    if not idx:
        raise ValueError("frontal_channel_indices must not be empty")
    n_channels = decomp.channel_corr.shape[1]
    if any(not 0 <= i < n_channels for i in idx):
        raise ValueError(f"frontal channel index out of range 0..{n_channels - 1}")
    score = np.abs(decomp.channel_corr[:, idx]).max(axis=1)
    return [int(i) for i in np.flatnonzero(score >= corr_threshold)]


def remove_components(X, decomp: IcaDecomposition, indices) -> np.ndarray:
    """Subtract the back-projection of the selected components from ``X``."""
    indices = list(indices)
    if any(not 0 <= i < decomp.k for i in indices):
        raise ValueError(f"component index out of range 0..{decomp.k - 1}")
    X = np.asarray(X, dtype=np.float64)
    if not indices:
        return X.copy()
    S = decomp.unmixing[indices] @ (decomp.whitening @ (X - decomp.mean))
    return X - decomp.mixing[:, indices] @ S


def clean_ocular(X, config, out=None) -> np.ndarray:
    """Pipeline stage: fit on a time-subsampled copy, remove frontal-correlated components.

    ``out`` may be ``X`` itself to clean in place.
    """
    decomp = fit_ica(X, k=config.ica_k, max_iter=config.ica_max_iter, tol=config.ica_tol,
                     seed=config.ica_seed, stride=config.ica_fit_stride)
    bad = identify_ocular(decomp, config.frontal_channel_indices, config.ica_corr_threshold)
    if out is None:
        out = np.empty(np.shape(X), dtype=np.float32)
    # block over time to bound float64 temporaries
    step = 1 << 18
    for s in range(0, out.shape[1], step):
        out[:, s:s + step] = remove_components(X[:, s:s + step], decomp, bad)
    return out
