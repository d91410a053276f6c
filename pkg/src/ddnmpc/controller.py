"""Receding-horizon controller that minimizes the learned cost surrogate.

At instant ``k`` the buffer holds ``y[k-N+1..k]`` and ``u[k-N..k-1]``. The
future input block is parameterized by its values at a few knot instants
(linear interpolation between knots, constant after the last one), the
surrogate is minimized over those values with the multidirectional search,
and only the first input of the optimal profile is applied.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import plant as plant_mod
from . import torczon
from .errors import ConfigError, ContractError, IntegrationError
from .features import FeatureConfig, moments_rows
from .pipeline import CostConfig


def _check_knots(knots: Sequence[int], N: int) -> np.ndarray:
    k = np.asarray(knots)
    if k.ndim != 1 or len(k) == 0:
        raise ContractError("knots must be a non-empty 1-D sequence")
    if not np.issubdtype(k.dtype, np.integer):
        if not np.all(k == np.round(k)):
            raise ContractError(f"knots must be integers, got {list(knots)}")
        k = k.astype(np.int64)
    if k[0] != 0:
        raise ContractError("the first knot must be at offset 0")
    if np.any(np.diff(k) <= 0):
        raise ContractError(f"knots must be strictly increasing, got {k.tolist()}")
    if k[-1] >= N:
        raise ContractError(f"knot offsets must be < N={N}, got {k.tolist()}")
    return k


class ProfileMap:
    """Precomputed interpolation from knot values to an ``N``-step profile."""

    def __init__(self, knots: Sequence[int], N: int):
        self.knots = _check_knots(knots, N)
        self.N = N
        t = np.arange(N)
        seg = np.searchsorted(self.knots, t, side="right") - 1
        last = len(self.knots) - 1
        self._a = seg
        self._b = np.minimum(seg + 1, last)
        span = np.where(self._b > self._a, self.knots[self._b] - self.knots[self._a], 1)
        self._w = np.where(self._b > self._a, (t - self.knots[self._a]) / span, 0.0)

    @property
    def n_params(self) -> int:
        return len(self.knots)

    def __call__(self, P: np.ndarray) -> np.ndarray:
        """Profiles for a batch ``(B, n_p)`` of knot values (or one vector)."""
        P = np.asarray(P, dtype=float)
        single = P.ndim == 1
        P = np.atleast_2d(P)
        if P.shape[1] != self.n_params:
            raise ContractError(f"expected {self.n_params} knot values, got {P.shape[1]}")
        pa, pb = P[:, self._a], P[:, self._b]
        U = pa + self._w * (pb - pa)
        # keep every sample inside the segment's value range despite rounding
        U = np.clip(U, np.minimum(pa, pb), np.maximum(pa, pb))
        return U[0] if single else U


@dataclass(frozen=True)
class ProfileParam:
    knots: tuple[int, ...]
    values: tuple[float, ...]


def profile(param: ProfileParam, N: int, u_min: float = plant_mod.U_MIN, u_max: float = plant_mod.U_MAX) -> np.ndarray:
    """Piecewise-linear profile of length ``N`` through the knot values."""
    if len(param.values) != len(param.knots):
        raise ContractError("need exactly one value per knot")
    v = np.asarray(param.values, dtype=float)
    if np.any(v < u_min) or np.any(v > u_max):
        raise ContractError(f"knot values must lie in [{u_min}, {u_max}]")
    return ProfileMap(param.knots, N)(v)


@dataclass
class MpcConfig:
    N: int = 100
    cost: CostConfig = field(default_factory=CostConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    knots: tuple[int, ...] = (0, 10)
    n_iter: int = 30
    n_guess: int = 1
    init_scale: float = 0.1
    warm_start: bool = True
    u_min: float = plant_mod.U_MIN
    u_max: float = plant_mod.U_MAX
    seed: int = 0

    def __post_init__(self) -> None:
        self.knots = tuple(int(k) for k in self.knots)
        if self.cost.N != self.N:
            raise ConfigError(f"horizon mismatch: controller N={self.N}, cost N={self.cost.N}", ("N", "cost.N"))
        if self.N <= self.features.m:
            raise ConfigError("N must exceed the number of moments m", ("N", "m"))
        _check_knots(self.knots, self.N)
        if not self.u_min < self.u_max:
            raise ConfigError("u_min must be below u_max", ("u_min", "u_max"))

    def search_config(self, seed: int) -> torczon.SearchConfig:
        n = len(self.knots)
        return torczon.SearchConfig(
            lo=(self.u_min,) * n,
            hi=(self.u_max,) * n,
            n_iter=self.n_iter,
            n_guess=self.n_guess,
            init_scale=self.init_scale,
            seed=seed,
        )


class MeasurementBuffer:
    """Last ``N`` outputs and last ``N`` applied inputs."""

    def __init__(self, N: int):
        self.N = N
        self._y: deque[float] = deque(maxlen=N)
        self._u: deque[float] = deque(maxlen=N)

    def push_output(self, y: float) -> None:
        self._y.append(float(y))

    def push_input(self, u: float) -> None:
        self._u.append(float(u))

    @property
    def full(self) -> bool:
        return len(self._y) == self.N and len(self._u) == self.N

    @property
    def y_past(self) -> np.ndarray:
        return np.array(self._y)

    @property
    def u_past(self) -> np.ndarray:
        return np.array(self._u)


def surrogate_objective(model, y_past, u_past, pmap: ProfileMap, fc: FeatureConfig):
    """Batch objective ``P -> J_hat(y_past, u_past, profile(P))``."""
    past = np.concatenate(
        [
            moments_rows(np.asarray(y_past, dtype=float)[None, :], fc.m, fc.smooth_width)[0],
            moments_rows(np.asarray(u_past, dtype=float)[None, :], fc.m, fc.smooth_width)[0],
        ]
    )

    def objective(P: np.ndarray) -> np.ndarray:
        U = pmap(P)
        fut = moments_rows(U, fc.m, fc.smooth_width)
        X = np.hstack([np.broadcast_to(past, (len(fut), len(past))), fut])
        return np.atleast_1d(model.predict(X))

    return objective


@dataclass
class StepResult:
    u: float
    p: np.ndarray
    predicted_cost: float
    n_evals: int


def mpc_step(
    buffer: MeasurementBuffer,
    model,
    cfg: MpcConfig,
    warm: Sequence[float] | None = None,
    seed: int | None = None,
    pmap: ProfileMap | None = None,
) -> StepResult:
    """Optimize the knot values for the current buffer and return the first input."""
    if not buffer.full:
        raise ContractError("measurement buffer is not full yet")
    if buffer.N != cfg.N:
        raise ContractError(f"buffer length {buffer.N} does not match N={cfg.N}")
    if model.n_features != cfg.features.dim:
        raise ContractError(f"model expects {model.n_features} features, controller builds {cfg.features.dim}")
    pmap = pmap or ProfileMap(cfg.knots, cfg.N)
    objective = surrogate_objective(model, buffer.y_past, buffer.u_past, pmap, cfg.features)
    scfg = cfg.search_config(cfg.seed if seed is None else seed)
    res = torczon.minimize(cfg=scfg, batch_objective=objective, warm=warm if cfg.warm_start else None)
    u0 = float(pmap(res.x)[0])
    return StepResult(u=u0, p=res.x, predicted_cost=res.value, n_evals=res.n_evals)


@dataclass
class StepLog:
    k: int
    u: float
    y: float
    p: tuple[float, ...]
    predicted_cost: float
    n_evals: int
    wall_time: float


@dataclass
class ClosedLoopResult:
    trajectory: plant_mod.Trajectory
    log: list[StepLog]


# box around the steady state that covers typical transients
X0_LO = (0.02, 0.02, 0.08)
X0_HI = (0.12, 0.12, 0.20)
X0_SEED = 9


def initial_states(n: int = 9, seed: int = X0_SEED) -> np.ndarray:
    """``n`` seeded initial states drawn uniformly from the box ``X0_LO..X0_HI``."""
    return np.random.default_rng(seed).uniform(X0_LO, X0_HI, size=(n, 3))


def step_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def run_closed_loop(
    x0: Sequence[float],
    model,
    cfg: MpcConfig,
    T_steps: int,
    plant_cfg: plant_mod.PlantConfig | None = None,
) -> ClosedLoopResult:
    """Simulate ``T_steps`` instants: ``N`` random inputs fill the buffer,
    then one optimized input per instant."""
    N = cfg.N
    if T_steps <= N:
        raise ContractError(f"T_steps={T_steps} must exceed N={N}")
    pcfg = plant_cfg or plant_mod.PlantConfig(u_min=cfg.u_min, u_max=cfg.u_max)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    fill = rng.uniform(cfg.u_min, cfg.u_max, size=N)
    pmap = ProfileMap(cfg.knots, N)
    buf = MeasurementBuffer(N)
    us = np.empty(T_steps)
    states = np.empty((T_steps, 3))
    log: list[StepLog] = []
    x = plant_mod.PlantState(*(float(v) for v in x0))
    warm = None
    for k in range(T_steps):
        states[k] = x
        y = x.x2
        buf.push_output(y)
        t0 = time.perf_counter()
        if k < N:
            u, p, cost, evals = float(fill[k]), (), float("nan"), 0
        else:
            res = mpc_step(buf, model, cfg, warm=warm, seed=step_seed(cfg.seed, k), pmap=pmap)
            u, p, cost, evals = res.u, tuple(float(v) for v in res.p), res.predicted_cost, res.n_evals
            warm = res.p
        wall = time.perf_counter() - t0
        log.append(StepLog(k, u, y, p, cost, evals, wall))
        us[k] = u
        buf.push_input(u)
        try:
            x = plant_mod.step(x, u, pcfg)
        except IntegrationError as exc:
            exc.time_index = k
            raise
    traj = plant_mod.Trajectory(u=us, y=states[:, 1].copy(), tau=pcfg.tau, states=states)
    return ClosedLoopResult(traj, log)
