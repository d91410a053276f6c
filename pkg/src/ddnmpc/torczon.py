"""Box-constrained multidirectional search (Torczon) with multistart.

Only objective values are used, so piecewise-constant objectives such as a
random-forest prediction are fine. Each iteration reflects every non-best
vertex through the best one; a successful reflection is followed by an
expansion attempt, a failed one by a contraction towards the best vertex.
Trial vertices are clipped to the box before evaluation.

The objective may be given as ``batch_objective`` mapping an ``(k, n)``
array of points to ``k`` values. The trial vertices of one move are then
evaluated in a single call; values are consumed in vertex order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError

REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5


@dataclass(frozen=True)
class SearchConfig:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n_iter: int = 30
    n_guess: int = 1
    init_scale: float = 0.1
    diam_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ConfigError("box bounds must be non-empty and of equal length", ("lo", "hi"))
        if any(not a < b for a, b in zip(self.lo, self.hi)):
            raise ConfigError("every lower bound must be below its upper bound", ("lo", "hi"))
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1", ("n_iter",))
        if self.n_guess < 1:
            raise ConfigError("n_guess must be >= 1", ("n_guess",))
        if not 0 < self.init_scale <= 1:
            raise ConfigError("init_scale must lie in (0, 1]", ("init_scale",))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @classmethod
    def uniform_box(cls, dim: int, lo: float, hi: float, **kw) -> "SearchConfig":
        return cls(lo=(lo,) * dim, hi=(hi,) * dim, **kw)


@dataclass
class SearchState:
    """Current polytope. Row 0 of ``vertices`` is always the best vertex."""

    vertices: np.ndarray
    values: np.ndarray
    iteration: int = 0

    @property
    def best(self) -> tuple[np.ndarray, float]:
        return self.vertices[0].copy(), float(self.values[0])

    def diameter(self) -> float:
        diff = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((diff**2).sum(axis=-1)).max())


@dataclass
class SearchResult:
    x: np.ndarray
    value: float
    n_evals: int
    trace: list[tuple[int, int, float, float, int]] = field(default_factory=list)


class _Counter:
    """Wraps the objective: clips, evaluates in one batch, checks finiteness."""

    def __init__(self, fn, batch: bool, lo: np.ndarray, hi: np.ndarray):
        self.fn = fn
        self.batch = batch
        self.lo = lo
        self.hi = hi
        self.n_evals = 0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.clip(points, self.lo, self.hi)
        if self.batch:
            vals = np.asarray(self.fn(points), dtype=float).reshape(len(points))
        else:
            vals = np.array([float(self.fn(p.copy())) for p in points])
        self.n_evals += len(points)
        bad = ~np.isfinite(vals)
        if bad.any():
            i = int(np.argmax(bad))
            raise ContractError(f"objective returned {vals[i]!r} at point {points[i].tolist()}")
        return vals


def regular_simplex(start: Sequence[float], lo: np.ndarray, hi: np.ndarray, scale: float) -> np.ndarray:
    """Regular simplex with ``start`` as vertex 0 and per-coordinate edge
    ``scale * (hi - lo)``, flipped coordinate-wise to point into the box."""
    x0 = np.asarray(start, dtype=float)
    n = len(x0)
    # Spendley-Hext-Himsworth offsets for unit edge length.
    p = (math.sqrt(n + 1) + n - 1) / (n * math.sqrt(2))
    q = (math.sqrt(n + 1) - 1) / (n * math.sqrt(2))
    width = scale * (hi - lo)
    sign = np.where(x0 + p * width <= hi, 1.0, -1.0)
    offsets = np.full((n, n), q) + np.eye(n) * (p - q)
    return np.vstack([x0, x0 + offsets * width * sign])


def multistart_points(cfg: SearchConfig, warm: Sequence[float] | None = None) -> list[np.ndarray]:
    """Start points: the (clipped) warm point first, the rest uniform in the box."""
    lo, hi = np.array(cfg.lo), np.array(cfg.hi)
    rng = np.random.default_rng(cfg.seed)
    starts = []
    if warm is not None:
        warm = np.asarray(warm, dtype=float)
        if warm.shape != lo.shape:
            raise ContractError(f"warm start has shape {warm.shape}, expected {lo.shape}")
        starts.append(np.clip(warm, lo, hi))
    while len(starts) < cfg.n_guess:
        starts.append(rng.uniform(lo, hi))
    return starts


def _search_from(start, evaluate: _Counter, cfg: SearchConfig, start_index: int, trace: list) -> SearchState:
    lo, hi = evaluate.lo, evaluate.hi
    start = np.clip(start, lo, hi)
    verts = np.clip(regular_simplex(start, lo, hi, cfg.init_scale), lo, hi)
    vals = evaluate(verts)
    state = SearchState(verts, vals)
    _put_best_first(state)
    trace.append((start_index, 0, float(state.values[0]), state.diameter(), evaluate.n_evals))
    for it in range(1, cfg.n_iter + 1):
        if state.diameter() < cfg.diam_tol:
            break
        best = state.vertices[0]
        others = state.vertices[1:]
        refl = np.clip(best + REFLECT * (best - others), lo, hi)
        f_refl = evaluate(refl)
        if f_refl.min() < state.values[0]:
            expd = np.clip(best + EXPAND * (best - others), lo, hi)
            f_expd = evaluate(expd)
            if f_expd.min() < f_refl.min():
                new, f_new = expd, f_expd
            else:
                new, f_new = refl, f_refl
        else:
            new = best + CONTRACT * (others - best)
            f_new = evaluate(new)
        state.vertices = np.vstack([best, new])
        state.values = np.concatenate([[state.values[0]], f_new])
        state.iteration = it
        _put_best_first(state)
        trace.append((start_index, it, float(state.values[0]), state.diameter(), evaluate.n_evals))
    return state


def _put_best_first(state: SearchState) -> None:
    # argmin takes the first minimum, so the incumbent keeps its place on ties
    i = int(np.argmin(state.values))
    if i != 0:
        order = [i] + [j for j in range(len(state.values)) if j != i]
        state.vertices = state.vertices[order]
        state.values = state.values[order]


def minimize(
    objective: Callable | None = None,
    cfg: SearchConfig | None = None,
    starts: Sequence[Sequence[float]] | None = None,
    *,
    batch_objective: Callable[[np.ndarray], np.ndarray] | None = None,
    warm: Sequence[float] | None = None,
) -> SearchResult:
    """Minimize over the box of ``cfg``.

    Exactly one of ``objective`` (point -> float) and ``batch_objective``
    must be given. ``starts`` overrides the multistart points; otherwise they
    come from :func:`multistart_points` with the optional ``warm`` point.
    """
    if cfg is None:
        raise ContractError("a SearchConfig is required")
    if (objective is None) == (batch_objective is None):
        raise ContractError("pass exactly one of objective / batch_objective")
    lo, hi = np.array(cfg.lo), np.array(cfg.hi)
    evaluate = _Counter(batch_objective or objective, batch_objective is not None, lo, hi)
    if starts is None:
        starts = multistart_points(cfg, warm)
    starts = [np.asarray(s, dtype=float) for s in starts]
    if not starts:
        raise ContractError("at least one start point is required")
    trace: list = []
    best_x, best_f = None, math.inf
    for i, s in enumerate(starts):
        if s.shape != lo.shape:
            raise ContractError(f"start point has shape {s.shape}, expected {lo.shape}")
        state = _search_from(s, evaluate, cfg, i, trace)
        x, f = state.best
        if f < best_f:
            best_x, best_f = x, f
    return SearchResult(best_x, best_f, evaluate.n_evals, trace)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "iter", "best_value", "diameter", "evals"])
        for start, it, val, diam, evals in trace:
            w.writerow([start, it, f"{val:.17g}", f"{diam:.17g}", evals])
