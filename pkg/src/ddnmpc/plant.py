"""CSTR benchmark with parallel reactions R -> P1, R -> P2.

State ``(x1, x2, x3)``: concentration of R, concentration of P1 and the
mixture temperature, all dimensionless. The control ``u`` is the heat flow
and the only measurement is ``y = x2``.

The learning and control code only ever sees ``(u, y)`` pairs; the state is
kept on the :class:`Trajectory` for diagnostics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, IntegrationError, PlantDomainError, SchemaError

# Best steady operating point of the reactor (3-digit values).
X_ST = (0.0832, 0.0846, 0.149)
U_ST = 0.146
Y_ST = 0.0846

U_MIN = 0.049
U_MAX = 0.449


class PlantState(NamedTuple):
    x1: float
    x2: float
    x3: float


@dataclass(frozen=True)
class PlantConfig:
    """Sampling and actuation settings of the simulated plant."""

    tau: float = 0.02
    n_sub: int = 4
    u_min: float = U_MIN
    u_max: float = U_MAX

    def __post_init__(self) -> None:
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError(f"tau must be positive, got {self.tau}", ("tau",))
        if int(self.n_sub) != self.n_sub or self.n_sub < 1:
            raise ConfigError(f"n_sub must be an integer >= 1, got {self.n_sub}", ("n_sub",))
        if not self.u_min < self.u_max:
            raise ConfigError(
                f"u_min ({self.u_min}) must be below u_max ({self.u_max})", ("u_min", "u_max")
            )

    def admissible(self, u: float) -> bool:
        return self.u_min <= u <= self.u_max


def rhs(state: Sequence[float], u: float) -> tuple[float, float, float]:
    """Vector field of the reactor at ``state`` under input ``u``."""
    x1, x2, x3 = state
    try:
        arr1 = math.exp(-1.0 / x3)
        arr2 = math.exp(-0.55 / x3)
    except (OverflowError, ZeroDivisionError) as exc:
        raise PlantDomainError(f"exponential terms undefined at x3={x3!r}", "x3") from exc
    r1 = 1e4 * x1 * x1 * arr1
    r2 = 400.0 * x1 * arr2
    dx = (1.0 - r1 - r2 - x1, r1 - x2, u - x3)
    for name, value in zip(("x1", "x2", "x3"), dx):
        if not math.isfinite(value):
            raise PlantDomainError(f"d{name}/dt is not finite ({value!r})", name)
    return dx


def step(state: Sequence[float], u: float, cfg: PlantConfig = PlantConfig()) -> PlantState:
    """Advance ``state`` by one sampling period with ``n_sub`` RK4 substeps."""
    if not cfg.admissible(u):
        raise ContractError(f"input {u!r} outside [{cfg.u_min}, {cfg.u_max}]")
    h = cfg.tau / cfg.n_sub
    half = 0.5 * h
    x1, x2, x3 = (float(v) for v in state)
    for sub in range(cfg.n_sub):
        try:
            a1, a2, a3 = rhs((x1, x2, x3), u)
            b1, b2, b3 = rhs((x1 + half * a1, x2 + half * a2, x3 + half * a3), u)
            c1, c2, c3 = rhs((x1 + half * b1, x2 + half * b2, x3 + half * b3), u)
            d1, d2, d3 = rhs((x1 + h * c1, x2 + h * c2, x3 + h * c3), u)
        except PlantDomainError as exc:
            raise IntegrationError(f"integration blew up in substep {sub}: {exc}", substep=sub) from exc
        x1 += h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        x2 += h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        x3 += h / 6.0 * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
        if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(x3)):
            raise IntegrationError(f"non-finite state after substep {sub}", substep=sub)
    return PlantState(x1, x2, x3)


@dataclass
class Trajectory:
    """Input/output record; ``u[k]`` is applied at instant ``k`` and ``y[k]``
    is measured at instant ``k`` (so ``y[k + 1]`` is the first output that
    depends on ``u[k]``). ``states`` is optional diagnostic data."""

    u: np.ndarray
    y: np.ndarray
    tau: float = 0.02
    states: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.shape != self.y.shape or self.u.ndim != 1:
            raise ContractError(f"u and y must be 1-D of equal length, got {self.u.shape} and {self.y.shape}")
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=float)
            if self.states.shape != (len(self.u), 3):
                raise ContractError(f"states must have shape ({len(self.u)}, 3)")

    def __len__(self) -> int:
        return len(self.u)


def simulate(x0: Sequence[float], inputs: Iterable[float], cfg: PlantConfig = PlantConfig()) -> Trajectory:
    """Apply ``inputs`` in sequence starting from ``x0``.

    Row ``k`` holds the state before ``inputs[k]`` is applied, so the
    returned trajectory has exactly one row per input.
    """
    inputs = np.asarray(list(inputs) if not isinstance(inputs, np.ndarray) else inputs, dtype=float)
    n = len(inputs)
    states = np.empty((n, 3))
    x = PlantState(*(float(v) for v in x0))
    for k in range(n):
        states[k] = x
        try:
            x = step(x, float(inputs[k]), cfg)
        except IntegrationError as exc:
            exc.time_index = k
            raise
        except ContractError as exc:
            raise ContractError(f"at time index {k}: {exc}") from exc
    return Trajectory(u=inputs.copy(), y=states[:, 1].copy(), tau=cfg.tau, states=states)


def write_trajectory_csv(path: str | Path, traj: Trajectory, with_state: bool = False) -> None:
    header = ["k", "t", "u", "y"]
    if with_state:
        if traj.states is None:
            raise ContractError("trajectory carries no state to write")
        header += ["x1", "x2", "x3"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj)):
            row = [str(k), f"{k * traj.tau:.17g}", f"{traj.u[k]:.17g}", f"{traj.y[k]:.17g}"]
            if with_state:
                row += [f"{v:.17g}" for v in traj.states[k]]
            w.writerow(row)


def read_trajectory_csv(path: str | Path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"trajectory file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["k", "t", "u", "y"]:
        raise SchemaError(f"{path}: expected header starting with k,t,u,y")
    header, body = rows[0], rows[1:]
    if header not in (["k", "t", "u", "y"], ["k", "t", "u", "y", "x1", "x2", "x3"]):
        raise SchemaError(f"{path}: unexpected columns {header}")
    try:
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed row ({exc})") from exc
    tau = float(data[1, 1] - data[0, 1]) if len(body) > 1 else 0.02
    states = data[:, 4:7] if len(header) == 7 else None
    return Trajectory(u=data[:, 2], y=data[:, 3], tau=tau if tau > 0 else 0.02, states=states)
