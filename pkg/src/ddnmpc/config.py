"""Experiment configuration: one INI file, one master seed.

Sections and keys mirror the module config types::

    [experiment]  seed, artifact_dir
    [plant]       tau, n_sub, u_min, u_max
    [excitation]  n_segments, min_len, max_len, amp_min, amp_max
    [cost]        N, alpha, noise_std
    [features]    m, smooth_width
    [dataset]     train_fraction
    [forest]      n_trees, max_leaf_nodes, bootstrap, max_features, n_clusters, n_jobs
    [search]      n_iter, n_guess, init_scale, diam_tol
    [mpc]         knots, steps, warm_start, x0, x0_seed

Every stage draws its randomness from ``stage_seed(master, stage)``, so a
stage can be re-run alone and still produce the same bytes.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .controller import X0_SEED, MpcConfig
from .errors import ConfigError
from .excitation import ExcitationConfig
from .features import FeatureConfig
from .pipeline import CostConfig
from .plant import PlantConfig

STAGES = ("excite", "simulate", "build-dataset", "train", "eval-model", "run-mpc", "bench")


def stage_seed(master: int, stage: str) -> int:
    """Seed for ``stage``, derived from the master seed."""
    return int(np.random.SeedSequence([master, STAGES.index(stage)]).generate_state(1)[0])


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_leaf_nodes: int = 1200
    bootstrap: bool = True
    max_features: int | None = None
    n_clusters: int = 1
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1", ("n_trees",))
        if self.max_leaf_nodes < 1:
            raise ConfigError("max_leaf_nodes must be >= 1", ("max_leaf_nodes",))
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1", ("n_clusters",))


@dataclass(frozen=True)
class SearchParams:
    n_iter: int = 30
    n_guess: int = 1
    init_scale: float = 0.1
    diam_tol: float = 1e-9


@dataclass(frozen=True)
class MpcParams:
    knots: tuple[int, ...] = (0, 10)
    steps: int = 1000
    warm_start: bool = True
    x0: tuple[float, float, float] | None = None
    x0_seed: int = X0_SEED


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    artifact_dir: str = "artifacts"
    plant: PlantConfig = field(default_factory=PlantConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train_fraction: float = 0.66
    forest: ForestParams = field(default_factory=ForestParams)
    search: SearchParams = field(default_factory=SearchParams)
    mpc: MpcParams = field(default_factory=MpcParams)

    def validate(self) -> None:
        """Cross-section checks; raises one ConfigError naming every conflict."""
        problems: list[tuple[str, tuple[str, ...]]] = []
        try:
            self.excitation.check_bounds(self.plant.u_min, self.plant.u_max)
        except ConfigError as exc:
            problems.append((str(exc), ("excitation.amp_min", "excitation.amp_max", "plant.u_min", "plant.u_max")))
        if not 0.0 < self.train_fraction < 1.0:
            problems.append(("train_fraction must lie in (0, 1)", ("dataset.train_fraction",)))
        if self.mpc.steps <= self.cost.N:
            problems.append((f"mpc.steps={self.mpc.steps} must exceed N={self.cost.N}", ("mpc.steps", "cost.N")))
        try:
            self.mpc_config()
        except ConfigError as exc:
            problems.append((str(exc), tuple(f"mpc.{f}" for f in exc.fields)))
        except ValueError as exc:
            problems.append((str(exc), ("mpc.knots", "cost.N")))
        if problems:
            raise ConfigError("; ".join(p[0] for p in problems), tuple(f for p in problems for f in p[1]))

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(
            N=self.cost.N,
            cost=self.cost,
            features=self.features,
            knots=self.mpc.knots,
            n_iter=self.search.n_iter,
            n_guess=self.search.n_guess,
            init_scale=self.search.init_scale,
            warm_start=self.mpc.warm_start,
            u_min=self.plant.u_min,
            u_max=self.plant.u_max,
            seed=stage_seed(self.seed, "run-mpc"),
        )

    def excitation_for_run(self) -> ExcitationConfig:
        return replace(self.excitation, seed=stage_seed(self.seed, "excite"))

    def dataset_seeds(self) -> tuple[int, int]:
        """(label-noise seed, split seed) for the build-dataset stage."""
        a, b = np.random.SeedSequence(stage_seed(self.seed, "build-dataset")).generate_state(2)
        return int(a), int(b)

    def to_dict(self) -> dict:
        return asdict(self)

    def section_hash(self, *names: str) -> str:
        """Hash of the named top-level entries (for artifact manifests)."""
        doc = {n: self.to_dict()[n] for n in names}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# INI section -> (attribute on ExperimentConfig, type)
_SECTIONS = {
    "plant": ("plant", PlantConfig),
    "excitation": ("excitation", ExcitationConfig),
    "cost": ("cost", CostConfig),
    "features": ("features", FeatureConfig),
    "forest": ("forest", ForestParams),
    "search": ("search", SearchParams),
    "mpc": ("mpc", MpcParams),
}


def _parse_value(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple) or default is None:
            if text.lower() in ("", "none"):
                return None
            parts = [p for p in text.replace(",", " ").split()]
            if name == "knots":
                return tuple(int(p) for p in parts)
            if name == "max_features":
                return int(text)
            return tuple(float(p) for p in parts)
        return text
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cannot parse {name}={text!r}", (name,)) from exc


def _apply(obj, values: dict[str, str], section: str):
    known = {f.name: f for f in fields(obj)}
    kw = {}
    for key, raw in values.items():
        if key not in known or (section != "experiment" and key == "seed"):
            raise ConfigError(f"unknown key [{section}] {key}", (f"{section}.{key}",))
        kw[key] = _parse_value(raw, getattr(obj, key), key)
    try:
        return replace(obj, **kw)
    except ConfigError as exc:
        raise ConfigError(str(exc), tuple(f"{section}.{f}" for f in exc.fields)) from exc
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}", tuple(f"{section}.{k}" for k in kw)) from exc


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}", ("config",))
        parser.read(path)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}", (key,))
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)

    cfg = ExperimentConfig()
    updates = {}
    for section in parser.sections():
        values = dict(parser.items(section))
        if section == "experiment":
            top = {}
            for key, raw in values.items():
                if key not in ("seed", "artifact_dir"):
                    raise ConfigError(f"unknown key [experiment] {key}", (f"experiment.{key}",))
                top[key] = _parse_value(raw, getattr(cfg, key), key)
            updates.update(top)
        elif section == "dataset":
            for key, raw in values.items():
                if key != "train_fraction":
                    raise ConfigError(f"unknown key [dataset] {key}", (f"dataset.{key}",))
                updates["train_fraction"] = _parse_value(raw, cfg.train_fraction, key)
        elif section in _SECTIONS:
            attr, _ = _SECTIONS[section]
            updates[attr] = _apply(getattr(cfg, attr), values, section)
        else:
            raise ConfigError(f"unknown section [{section}]", (section,))
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`load_config` reads back to ``cfg``."""

    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, (tuple, list)):
            return ", ".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["experiment"] = {"seed": str(cfg.seed), "artifact_dir": cfg.artifact_dir}
    parser["dataset"] = {"train_fraction": repr(cfg.train_fraction)}
    for section, (attr, _) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        parser[section] = {f.name: fmt(getattr(obj, f.name)) for f in fields(obj) if f.name != "seed"}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    return "\n".join(lines)
