"""Random piecewise-constant excitation for collecting learning data.

Random numbers come from numpy's PCG64 bit generator seeded through
``numpy.random.default_rng(seed)``; PCG64 output is specified independently
of platform, so sequences are reproducible across machines.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError
from .plant import U_MAX, U_MIN


@dataclass(frozen=True)
class ExcitationConfig:
    n_segments: int = 1000
    min_len: int = 1
    max_len: int = 100
    amp_min: float = U_MIN
    amp_max: float = U_MAX
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_segments < 1:
            raise ConfigError("n_segments must be >= 1", ("n_segments",))
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(
                f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}", ("min_len", "max_len")
            )
        if not self.amp_min <= self.amp_max:
            raise ConfigError("amp_min must not exceed amp_max", ("amp_min", "amp_max"))

    def check_bounds(self, u_min: float, u_max: float) -> None:
        """Raise unless the amplitude range lies inside ``[u_min, u_max]``."""
        if self.amp_min < u_min or self.amp_max > u_max:
            raise ConfigError(
                f"amplitude range [{self.amp_min}, {self.amp_max}] leaves the admissible set [{u_min}, {u_max}]",
                ("amp_min", "amp_max"),
            )


def generate(cfg: ExcitationConfig) -> np.ndarray:
    """Concatenate ``n_segments`` constant blocks of random length and level.

    Lengths are uniform on the integers ``min_len..max_len``, levels uniform
    on ``[amp_min, amp_max]``.
    """
    cfg.check_bounds(U_MIN, U_MAX)
    rng = np.random.default_rng(cfg.seed)
    lengths = rng.integers(cfg.min_len, cfg.max_len, size=cfg.n_segments, endpoint=True)
    levels = rng.uniform(cfg.amp_min, cfg.amp_max, size=cfg.n_segments)
    return np.repeat(levels, lengths)


def write_inputs_csv(path, u) -> None:
    """Single-column CSV with header ``u``."""
    with open(path, "w", newline="") as fh:
        fh.write("u\n")
        for v in np.asarray(u, dtype=float):
            fh.write(f"{v:.17g}\n")


def read_inputs_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "u":
        raise SchemaError(f"{path}: expected a single 'u' column")
    try:
        return np.array([float(v) for v in lines[1:] if v.strip()])
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed value ({exc})") from exc
