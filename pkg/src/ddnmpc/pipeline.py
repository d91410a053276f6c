"""Rolling-window dataset construction and the economic cost label.

For an anchor instant ``k`` (with ``N <= k <= L - N - 1``) a sample is::

    y_past   = y[k-N+1 .. k]      newest measurement included
    u_past   = u[k-N   .. k-1]    inputs just before the future block
    u_future = u[k     .. k+N-1]
    label    = cost(y[k+1 .. k+N])

A trajectory of length ``L`` therefore yields ``L - 2N`` samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, SchemaError
from .plant import Trajectory


@dataclass(frozen=True)
class CostConfig:
    N: int = 100
    alpha: float = 100.0
    noise_std: float = 0.0  # measurement noise on labels; off in the reference experiment

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be an integer >= 1, got {self.N}", ("N",))
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}", ("alpha",))
        if not self.noise_std >= 0:
            raise ConfigError("noise_std must be >= 0", ("noise_std",))


@dataclass
class WindowSample:
    y_past: np.ndarray
    u_past: np.ndarray
    u_future: np.ndarray
    label: float = math.nan


@dataclass
class Dataset:
    """Column-stacked window samples: each of ``y_past``, ``u_past``,
    ``u_future`` has shape ``(n, N)`` and ``labels`` shape ``(n,)``."""

    y_past: np.ndarray
    u_past: np.ndarray
    u_future: np.ndarray
    labels: np.ndarray
    N: int
    alpha: float

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.y_past[i], self.u_past[i], self.u_future[i], float(self.labels[i]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.y_past[idx], self.u_past[idx], self.u_future[idx], self.labels[idx], self.N, self.alpha)


def compute_cost(y_future, cfg: CostConfig) -> float:
    """Negative of mean production plus ``alpha`` times the final output."""
    y = np.asarray(y_future, dtype=float)
    if y.shape != (cfg.N,):
        raise ContractError(f"expected {cfg.N} future outputs, got shape {y.shape}")
    return -(float(np.mean(y)) + cfg.alpha * float(y[-1]))


def _cost_rows(y_future: np.ndarray, alpha: float) -> np.ndarray:
    return -(np.mean(y_future, axis=1) + alpha * y_future[:, -1])


def build_dataset(traj: Trajectory, cfg: CostConfig, seed: int | None = None) -> Dataset:
    """Slide a window of length ``N`` over ``traj`` (see module docstring).

    ``seed`` only matters when ``cfg.noise_std > 0``.
    """
    N = cfg.N
    L = len(traj)
    if L < 2 * N + 1:
        raise ContractError(f"trajectory of length {L} is too short for N={N}: need at least {2 * N + 1} instants")
    y = traj.y
    if cfg.noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, cfg.noise_std, size=L)
    Y = sliding_window_view(y, N)
    U = sliding_window_view(traj.u, N)
    k = np.arange(N, L - N)
    y_future = Y[k + 1]
    labels = _cost_rows(y_future, cfg.alpha)
    if not np.all(np.isfinite(labels)):
        raise ContractError("non-finite label in dataset")
    return Dataset(
        y_past=np.ascontiguousarray(Y[k - N + 1]),
        u_past=np.ascontiguousarray(U[k - N]),
        u_future=np.ascontiguousarray(U[k]),
        labels=labels,
        N=N,
        alpha=cfg.alpha,
    )


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint train/test partition with ``ceil(f * n)`` training rows."""
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise ContractError("cannot split an empty dataset")
    n_train = math.ceil(train_fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def write_dataset_csv(path: str | Path, ds: Dataset) -> None:
    """One row per sample; the first line records ``N`` and ``alpha``."""
    N = ds.N
    cols = (
        [f"y_past_{i}" for i in range(N)]
        + [f"u_past_{i}" for i in range(N)]
        + [f"u_future_{i}" for i in range(N)]
        + ["label"]
    )
    with open(path, "w", newline="") as fh:
        fh.write(f"# N={N} alpha={ds.alpha!r}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        block = np.hstack([ds.y_past, ds.u_past, ds.u_future, ds.labels[:, None]])
        for row in block:
            w.writerow([f"{v:.17g}" for v in row])


def read_dataset_csv(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        meta = fh.readline().strip()
        try:
            parts = dict(p.split("=", 1) for p in meta.lstrip("# ").split())
            N, alpha = int(parts["N"]), float(parts["alpha"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"{path}: first line must read '# N=<int> alpha=<float>'") from exc
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 3 * N + 1:
            raise SchemaError(f"{path}: expected {3 * N + 1} columns for N={N}")
        rows = [r for r in reader]
    if any(len(r) != 3 * N + 1 for r in rows):
        raise SchemaError(f"{path}: every row must have {3 * N + 1} columns")
    data = np.array(rows, dtype=float).reshape(len(rows), 3 * N + 1)
    return Dataset(
        y_past=data[:, :N].copy(),
        u_past=data[:, N : 2 * N].copy(),
        u_future=data[:, 2 * N : 3 * N].copy(),
        labels=data[:, 3 * N].copy(),
        N=N,
        alpha=alpha,
    )
