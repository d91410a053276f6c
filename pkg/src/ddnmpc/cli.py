"""Command-line driver: one subcommand per stage, file-based artifacts.

Every artifact is written through a temp file and renamed into place, and
gets a ``<name>.manifest.json`` next to it recording the stage, a hash of
the config sections it depends on, the hashes of its inputs, the seed and
the wall-clock time.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, charts
from . import plant as plant_mod
from .config import ExperimentConfig, load_config, stage_seed
from .controller import MeasurementBuffer, ProfileMap, initial_states, mpc_step, run_closed_loop, surrogate_objective
from .errors import ConfigError, ContractError, IntegrationError, PlantDomainError, SchemaError
from .excitation import generate, read_inputs_csv, write_inputs_csv
from .features import feature_matrix
from .forest import fit_clustered, fit_report, load_model, report_from_predictions, save_model
from .pipeline import build_dataset, read_dataset_csv, split, write_dataset_csv

log = logging.getLogger("ddnmpc")

ARTIFACTS = {
    "inputs": "inputs.csv",
    "trajectory": "trajectory.csv",
    "train": "dataset_train.csv",
    "test": "dataset_test.csv",
    "model": "model.json",
    "report": "fit_report.json",
    "scatter": "scatter.csv",
    "summary": "closed_loop_summary.csv",
    "bench": "bench.json",
}

# reference latencies quoted for the original desk-top experiment, seconds
REF_EVAL_S = 1.7e-3
REF_STEP_S = {2: 0.3, 4: 1.53}


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def atomic_path(path: str | Path):
    """Yield a temp path next to ``path``; rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, doc) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_manifest(artifact: Path, stage: str, cfg: ExperimentConfig, sections, inputs, seed, t0, **extra) -> None:
    doc = {
        "stage": stage,
        "artifact": artifact.name,
        "sha256": file_hash(artifact),
        "config_hash": cfg.section_hash(*sections),
        "config": {s: cfg.to_dict()[s] for s in sections},
        "inputs": {Path(p).name: file_hash(p) for p in inputs},
        "seed": seed,
        "master_seed": cfg.seed,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "version": __version__,
        **extra,
    }
    write_json(artifact.with_name(artifact.name + ".manifest.json"), doc)
    log.info("wrote %s", artifact)


def read_manifest(artifact: Path) -> dict | None:
    m = artifact.with_name(artifact.name + ".manifest.json")
    if not m.exists():
        return None
    try:
        return json.loads(m.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{m}: unreadable manifest ({exc})") from exc


class Run:
    """Resolved config plus artifact paths for one invocation."""

    def __init__(self, cfg: ExperimentConfig, args):
        self.cfg = cfg
        self.args = args
        self.dir = Path(cfg.artifact_dir)
        self.chart = getattr(args, "chart", False)

    def path(self, key: str, override: str | None = None) -> Path:
        return Path(override) if override else self.dir / ARTIFACTS[key]


# stages -------------------------------------------------------------------


def stage_excite(run: Run) -> Path:
    t0 = time.perf_counter()
    ecfg = run.cfg.excitation_for_run()
    ecfg.check_bounds(run.cfg.plant.u_min, run.cfg.plant.u_max)
    u = generate(ecfg)
    out = run.path("inputs", getattr(run.args, "out", None))
    with atomic_path(out) as tmp:
        write_inputs_csv(tmp, u)
    write_manifest(out, "excite", run.cfg, ("excitation",), [], ecfg.seed, t0, length=len(u))
    return out


def stage_simulate(run: Run) -> Path:
    t0 = time.perf_counter()
    src = run.path("inputs", getattr(run.args, "inputs", None))
    u = read_inputs_csv(src)
    x0 = getattr(run.args, "sim_x0", None) or plant_mod.X_ST
    traj = plant_mod.simulate(x0, u, run.cfg.plant)
    out = run.path("trajectory", getattr(run.args, "out", None))
    with atomic_path(out) as tmp:
        plant_mod.write_trajectory_csv(tmp, traj, with_state=getattr(run.args, "debug_state", False))
    write_manifest(out, "simulate", run.cfg, ("plant",), [src], None, t0, x0=list(x0))
    if run.chart:
        _chart(lambda p: charts.closed_loop_chart([traj], p, traj.tau), out)
    return out


def stage_build_dataset(run: Run) -> tuple[Path, Path]:
    t0 = time.perf_counter()
    src = run.path("trajectory", getattr(run.args, "trajectory", None))
    traj = plant_mod.read_trajectory_csv(src)
    seed = stage_seed(run.cfg.seed, "build-dataset")
    noise_seed, split_seed = run.cfg.dataset_seeds()
    ds = build_dataset(traj, run.cfg.cost, seed=noise_seed)
    train, test = split(ds, run.cfg.train_fraction, split_seed)
    outs = []
    for key, part in (("train", train), ("test", test)):
        out = run.path(key)
        with atomic_path(out) as tmp:
            write_dataset_csv(tmp, part)
        write_manifest(
            out, "build-dataset", run.cfg, ("cost", "train_fraction"), [src], seed, t0, N=ds.N, n_samples=len(part)
        )
        outs.append(out)
    return tuple(outs)


def stage_train(run: Run) -> Path:
    t0 = time.perf_counter()
    src_train = run.path("train", getattr(run.args, "train", None))
    src_test = run.path("test", getattr(run.args, "test", None))
    train = read_dataset_csv(src_train)
    _check_horizon(run.cfg, train.N, src_train)
    fp, fc = run.cfg.forest, run.cfg.features
    seed = stage_seed(run.cfg.seed, "train")
    X = feature_matrix(train, fc)
    model = fit_clustered(
        X,
        train.labels,
        k=fp.n_clusters,
        n_trees=fp.n_trees,
        max_leaf_nodes=fp.max_leaf_nodes,
        seed=seed,
        feature_config=fc,
        bootstrap=fp.bootstrap,
        max_features=fp.max_features,
        n_jobs=fp.n_jobs,
    )
    out = run.path("model", getattr(run.args, "out", None))
    with atomic_path(out) as tmp:
        save_model(tmp, model)
    inputs = [src_train]
    summary = None
    if src_test.exists():
        test = read_dataset_csv(src_test)
        summary = fit_report(model, feature_matrix(test, fc), test.labels).summary()
        inputs.append(src_test)
    write_manifest(out, "train", run.cfg, ("cost", "features", "forest"), inputs, seed, t0, N=train.N)
    if summary is not None:
        rep = run.path("report")
        write_json(rep, summary)
        write_manifest(rep, "train", run.cfg, ("cost", "features", "forest"), [out, src_test], seed, t0)
        log.info("test R2 = %.4f, error std = %.4g (label range %.4g)", summary["r2"], summary["err_std"], summary["label_range"])
    return out


def stage_eval_model(run: Run) -> Path:
    t0 = time.perf_counter()
    src_model = run.path("model", getattr(run.args, "model", None))
    src_test = run.path("test", getattr(run.args, "test", None))
    model = load_model(src_model)
    test = read_dataset_csv(src_test)
    _check_horizon(run.cfg, test.N, src_test)
    y_pred = model.predict(feature_matrix(test, model.feature_config))
    rep = report_from_predictions(test.labels, y_pred)
    out = run.path("scatter", getattr(run.args, "out", None))
    with atomic_path(out) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true", "predicted"])
        for a, b in zip(test.labels, y_pred):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])
    write_manifest(out, "eval-model", run.cfg, ("features",), [src_model, src_test], None, t0, **rep.summary())
    print(json.dumps(rep.summary(), indent=2, sort_keys=True))
    if run.chart:
        _chart(lambda p: charts.scatter_chart(test.labels, y_pred, p, rep.r2), out)
    return out


def _closed_loop_states(cfg: ExperimentConfig, n_states: int) -> np.ndarray:
    if cfg.mpc.x0 is not None:
        return np.array([cfg.mpc.x0], dtype=float)
    return initial_states(n_states, cfg.mpc.x0_seed)


def stage_run_mpc(run: Run) -> Path:
    t0 = time.perf_counter()
    cfg = run.cfg
    src_model = run.path("model", getattr(run.args, "model", None))
    model = load_model(src_model)
    manifest = read_manifest(src_model)
    if manifest is not None and "N" in manifest:
        _check_horizon(cfg, manifest["N"], src_model)
    mcfg = cfg.mpc_config()
    states = _closed_loop_states(cfg, getattr(run.args, "n_states", 1) or 1)
    tail = min(int(round(5.0 / cfg.plant.tau)), cfg.mpc.steps)
    rows, trajs = [], []
    for i, x0 in enumerate(states):
        res = run_closed_loop(x0, model, mcfg, cfg.mpc.steps, cfg.plant)
        traj = res.trajectory
        trajs.append(traj)
        out = run.dir / f"closed_loop_{i}.csv"
        with atomic_path(out) as tmp:
            plant_mod.write_trajectory_csv(tmp, traj, with_state=getattr(run.args, "debug_state", False))
        log_path = run.dir / f"mpc_log_{i}.csv"
        with atomic_path(log_path) as tmp:
            _write_step_log(tmp, res.log, len(mcfg.knots))
        for p in (out, log_path):
            write_manifest(
                p, "run-mpc", cfg, ("plant", "cost", "features", "search", "mpc"), [src_model], mcfg.seed, t0,
                x0=[float(v) for v in x0],
            )
        y_tail = traj.y[-tail:]
        rows.append((i, *x0, float(y_tail.mean()), float(y_tail.std()), float(traj.u.min()), float(traj.u.max())))
        log.info("state %d: final-window mean y = %.5f, std = %.5f", i, rows[-1][4], rows[-1][5])
    summary = run.path("summary")
    with atomic_path(summary) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "x1", "x2", "x3", "y_tail_mean", "y_tail_std", "u_min", "u_max"])
        for r in rows:
            w.writerow([r[0]] + [f"{v:.17g}" for v in r[1:]])
    write_manifest(summary, "run-mpc", cfg, ("plant", "cost", "features", "search", "mpc"), [src_model], mcfg.seed, t0)
    if run.chart:
        _chart(lambda p: charts.closed_loop_chart(trajs, p, cfg.plant.tau), summary)
    return summary


def _write_step_log(path, rows, n_p: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "u", "y"] + [f"p{j}" for j in range(n_p)] + ["predicted_cost", "n_evals", "wall_time"])
        for r in rows:
            p = list(r.p) if r.p else [float("nan")] * n_p
            w.writerow(
                [r.k, f"{r.u:.17g}", f"{r.y:.17g}"]
                + [f"{v:.17g}" for v in p]
                + [f"{r.predicted_cost:.17g}", r.n_evals, f"{r.wall_time:.6f}"]
            )


def stage_bench(run: Run) -> Path:
    t0 = time.perf_counter()
    cfg = run.cfg
    src_model = run.path("model", getattr(run.args, "model", None))
    model = load_model(src_model)
    mcfg = cfg.mpc_config()
    N = mcfg.N
    buf = MeasurementBuffer(N)
    rng = np.random.default_rng(stage_seed(cfg.seed, "bench"))
    for _ in range(N):
        buf.push_output(plant_mod.Y_ST)
        buf.push_input(rng.uniform(mcfg.u_min, mcfg.u_max))
    pmap = ProfileMap(mcfg.knots, N)
    obj = surrogate_objective(model, buf.y_past, buf.u_past, pmap, mcfg.features)
    n_evals = getattr(run.args, "n_evals", 200)
    P = rng.uniform(mcfg.u_min, mcfg.u_max, size=(n_evals, pmap.n_params))
    times = []
    for p in P:
        s = time.perf_counter()
        obj(p[None, :])
        times.append(time.perf_counter() - s)
    step_times = []
    warm = None
    for j in range(getattr(run.args, "n_steps", 10)):
        s = time.perf_counter()
        res = mpc_step(buf, model, mcfg, warm=warm, seed=j, pmap=pmap)
        step_times.append(time.perf_counter() - s)
        warm = res.p
    ref_step = REF_STEP_S.get(pmap.n_params)
    doc = {
        "eval_mean_ms": 1e3 * float(np.mean(times)),
        "eval_max_ms": 1e3 * float(np.max(times)),
        "eval_reference_ms": 1e3 * REF_EVAL_S,
        "step_mean_s": float(np.mean(step_times)),
        "step_max_s": float(np.max(step_times)),
        "step_reference_s": ref_step,
        "n_params": pmap.n_params,
        "n_iter": mcfg.n_iter,
        "n_guess": mcfg.n_guess,
        "n_trees": sum(len(f.trees) for f in model.forests),
    }
    out = run.path("bench", getattr(run.args, "out", None))
    write_json(out, doc)
    write_manifest(out, "bench", run.cfg, ("features", "search", "mpc"), [src_model], None, t0)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return out


def stage_repro(run: Run) -> None:
    stage_excite(run)
    stage_simulate(run)
    stage_build_dataset(run)
    stage_train(run)
    stage_eval_model(run)
    stage_run_mpc(run)
    stage_bench(run)


def _check_horizon(cfg: ExperimentConfig, N: int, src: Path) -> None:
    if N != cfg.cost.N:
        raise ConfigError(f"{src} was built with N={N} but the config says N={cfg.cost.N}", ("cost.N", str(src)))


def _chart(render, artifact: Path) -> None:
    out = artifact.with_suffix(".svg")
    try:
        with atomic_path(out) as tmp:
            render(tmp)
    except ImportError:
        log.warning("matplotlib is not installed; skipping %s", out)
        return
    log.info("wrote %s", out)


# argument parsing ------------------------------------------------------------


def _override(parser, flag: str, key: str, type_=str, **kw) -> None:
    parser.add_argument(flag, dest=f"set:{key}", type=type_, default=None, metavar=key.split(".")[1].upper(), **kw)


def _floats(n):
    def parse(text):
        parts = text.replace(",", " ").split()
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
        return tuple(float(p) for p in parts)

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config field")
    common.add_argument("--artifacts", help="artifact directory (overrides [experiment] artifact_dir)")
    _override(common, "--seed", "experiment.seed", int, help="master seed")
    common.add_argument("--chart", action="store_true", help="also write an SVG chart")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ddnmpc", description="Learned-surrogate economic MPC experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("excite", parents=[common], help="random piecewise-constant input sequence")
    for flag, key, t in (
        ("--n-segments", "excitation.n_segments", int),
        ("--min-len", "excitation.min_len", int),
        ("--max-len", "excitation.max_len", int),
        ("--amp-min", "excitation.amp_min", float),
        ("--amp-max", "excitation.amp_max", float),
    ):
        _override(p, flag, key, t)
    p.add_argument("--out")

    p = sub.add_parser("simulate", parents=[common], help="open-loop plant response to an input file")
    p.add_argument("--inputs")
    p.add_argument("--x0", dest="sim_x0", type=_floats(3), help="initial state 'x1,x2,x3'")
    _override(p, "--n-sub", "plant.n_sub", int)
    p.add_argument("--debug-state", action="store_true", help="write the full state columns")
    p.add_argument("--out")

    p = sub.add_parser("build-dataset", parents=[common], help="rolling-window dataset and train/test split")
    p.add_argument("--trajectory")
    _override(p, "--N", "cost.N", int)
    _override(p, "--alpha", "cost.alpha", float)
    _override(p, "--noise-std", "cost.noise_std", float)
    _override(p, "--train-fraction", "dataset.train_fraction", float)

    p = sub.add_parser("train", parents=[common], help="fit the surrogate forest")
    p.add_argument("--train")
    p.add_argument("--test")
    _override(p, "--n-trees", "forest.n_trees", int)
    _override(p, "--max-leaf-nodes", "forest.max_leaf_nodes", int)
    _override(p, "--n-clusters", "forest.n_clusters", int)
    _override(p, "--n-jobs", "forest.n_jobs", int)
    p.add_argument("--out")

    p = sub.add_parser("eval-model", parents=[common], help="true vs. predicted cost on the test split")
    p.add_argument("--model")
    p.add_argument("--test")
    p.add_argument("--out")

    def mpc_flags(p):
        p.add_argument("--model")
        _override(p, "--steps", "mpc.steps", int)
        _override(p, "--knots", "mpc.knots", str, help="comma-separated knot offsets, e.g. 0,10")
        _override(p, "--n-iter", "search.n_iter", int)
        _override(p, "--n-guess", "search.n_guess", int)

    p = sub.add_parser("run-mpc", parents=[common], help="closed-loop simulation")
    mpc_flags(p)
    _override(p, "--x0", "mpc.x0", str, help="initial state 'x1,x2,x3'")
    _override(p, "--x0-seed", "mpc.x0_seed", int, help="seed for drawing initial states")
    p.add_argument("--n-states", type=int, default=1, help="number of seeded initial states (ignored with --x0)")
    p.add_argument("--debug-state", action="store_true", help="write the full state columns")

    p = sub.add_parser("bench", parents=[common], help="latency of one surrogate evaluation and one MPC step")
    mpc_flags(p)
    p.add_argument("--n-evals", type=int, default=200)
    p.add_argument("--n-steps", type=int, default=10)
    p.add_argument("--out")

    p = sub.add_parser("repro", parents=[common], help="run every stage in order")
    p.add_argument("--n-states", type=int, default=9)
    p.add_argument("--debug-state", action="store_true")
    return parser


STAGE_FUNCS = {
    "excite": stage_excite,
    "simulate": stage_simulate,
    "build-dataset": stage_build_dataset,
    "train": stage_train,
    "eval-model": stage_eval_model,
    "run-mpc": stage_run_mpc,
    "bench": stage_bench,
    "repro": stage_repro,
}


def resolve_config(args) -> ExperimentConfig:
    overrides = list(args.set)
    for dest, value in sorted(vars(args).items()):
        if dest.startswith("set:") and value is not None:
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            overrides.append(f"{dest[4:]}={value}")
    cfg = load_config(args.config, overrides)
    if args.artifacts:
        cfg = replace(cfg, artifact_dir=args.artifacts)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        STAGE_FUNCS[args.command](Run(cfg, args))
    except (ConfigError, SchemaError, ContractError) as exc:
        fields = getattr(exc, "fields", ())
        extra = f" [fields: {', '.join(fields)}]" if fields else ""
        print(f"error: {exc}{extra}", file=sys.stderr)
        return 2
    except (IntegrationError, PlantDomainError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
