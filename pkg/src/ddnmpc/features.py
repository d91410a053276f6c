"""Moment-like features of short signal segments.

``phi_j(s)`` is the average over the segment of the ``j``-th discrete
derivative of a smoothed copy of ``s``. Derivatives are plain first
differences per sample (not divided by the sampling period), and the
signal is smoothed once before differencing.

All functions operate row-wise on 2-D arrays so that a whole dataset, or a
batch of candidate control profiles, is processed in one call. Scalar
helpers route through the same code, which keeps single and batched results
bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

SEGMENTS = ("ypast", "upast", "ufut")


@dataclass(frozen=True)
class FeatureConfig:
    m: int = 3
    smooth_width: int = 5

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}", ("m",))
        if self.smooth_width < 1 or self.smooth_width % 2 == 0:
            raise ConfigError(f"smooth_width must be odd and >= 1, got {self.smooth_width}", ("smooth_width",))

    @property
    def dim(self) -> int:
        return 3 * self.m

    def names(self) -> list[str]:
        return [f"phi{j}_{seg}" for seg in SEGMENTS for j in range(self.m)]


def smooth_rows(S: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average of every row, window shrunk at the edges.

    Computed as ``s[i] + mean(s[window] - s[i])`` so that constant rows come
    back unchanged bit for bit.
    """
    S = np.asarray(S, dtype=float)
    L = S.shape[-1]
    if width < 1 or width % 2 == 0:
        raise ContractError(f"width must be odd and >= 1, got {width}")
    if width > L:
        raise ContractError(f"smoothing width {width} exceeds signal length {L}")
    if width == 1:
        return S.copy()
    acc = np.zeros_like(S)
    count = np.ones(L)
    for d in range(1, width // 2 + 1):
        acc[..., d:] += S[..., :-d] - S[..., d:]
        acc[..., :-d] += S[..., d:] - S[..., :-d]
        count[d:] += 1
        count[:-d] += 1
    return S + acc / count


def smooth(s, width: int):
    """Smooth a single 1-D signal (see :func:`smooth_rows`)."""
    return smooth_rows(np.asarray(s, dtype=float)[None, :], width)[0]


def moments_rows(S: np.ndarray, m: int, width: int) -> np.ndarray:
    """``phi_0 .. phi_{m-1}`` of every row; returns shape ``(n, m)``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] <= m - 1:
        raise ContractError(f"signal of length {S.shape[1]} too short for {m} moments")
    s = smooth_rows(S, width)
    out = np.empty((S.shape[0], m))
    for j in range(m):
        out[:, j] = s.mean(axis=1)
        s = np.diff(s, axis=1)
    return out


def phi(s, j: int, width: int = 1) -> float:
    """Mean of the ``j``-th difference of the smoothed signal ``s``."""
    s = np.asarray(s, dtype=float)
    if j < 0:
        raise ContractError("derivative order must be >= 0")
    if len(s) < j + 1:
        raise ContractError(f"signal of length {len(s)} has no valid samples for derivative order {j}")
    return float(moments_rows(s[None, :], j + 1, width)[0, j])


def feature_rows(y_past: np.ndarray, u_past: np.ndarray, u_future: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Stack the moments of the three segments into ``(n, 3m)`` rows."""
    N = np.shape(y_past)[-1]
    if N <= cfg.m:
        raise ContractError(f"window length {N} must exceed m={cfg.m}")
    return np.hstack(
        [
            moments_rows(y_past, cfg.m, cfg.smooth_width),
            moments_rows(u_past, cfg.m, cfg.smooth_width),
            moments_rows(u_future, cfg.m, cfg.smooth_width),
        ]
    )


def feature_map(sample, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Feature vector of one window sample."""
    return feature_rows(
        np.asarray(sample.y_past, dtype=float)[None, :],
        np.asarray(sample.u_past, dtype=float)[None, :],
        np.asarray(sample.u_future, dtype=float)[None, :],
        cfg,
    )[0]


def feature_matrix(dataset, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return feature_rows(dataset.y_past, dataset.u_past, dataset.u_future, cfg)


def write_feature_csv(path: str | Path, X: np.ndarray, labels: np.ndarray, cfg: FeatureConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cfg.names() + ["label"])
        for row, lab in zip(X, labels):
            w.writerow([f"{v:.17g}" for v in row] + [f"{lab:.17g}"])
