import numpy as np
import pytest

from ddnmpc.errors import ConfigError, ContractError
from ddnmpc.torczon import SearchConfig, minimize, multistart_points, regular_simplex, write_trace_csv
from oracles import grid_argmin


def quad(x):
    return (x[0] - 0.3) ** 2


def step_fn(x):
    v = x[0]
    if 0.4 <= v <= 0.5:
        return 0.0
    return 1.0 if v < 0.4 else 2.0


def per_start_monotone(trace):
    by_start = {}
    for start, _, val, _, _ in trace:
        by_start.setdefault(start, []).append(val)
    return all(np.all(np.diff(v) <= 0) for v in by_start.values())


def test_sphere_from_corner():
    cfg = SearchConfig.uniform_box(4, -1.0, 1.0, n_iter=200)
    res = minimize(lambda x: float(x @ x), cfg, starts=[np.ones(4)])
    assert res.value <= 1e-6
    assert per_start_monotone(res.trace)


def test_quadratic_matches_grid_oracle():
    x_grid, _ = grid_argmin(lambda v: quad([v]), 0.0, 1.0, 1e-4)
    res = minimize(quad, SearchConfig.uniform_box(1, 0.0, 1.0, n_iter=60), starts=[[0.9]])
    assert abs(res.x[0] - x_grid) <= 1e-3


@pytest.mark.parametrize(
    "cfg, starts",
    [
        (SearchConfig.uniform_box(1, 0.0, 1.0, n_iter=60), [[0.35]]),
        (SearchConfig.uniform_box(1, 0.0, 1.0, n_iter=60, n_guess=20, seed=0), None),
    ],
)
def test_step_plateau(cfg, starts):
    _, f_grid = grid_argmin(lambda v: step_fn([v]), 0.0, 1.0, 1e-4)
    res = minimize(step_fn, cfg, starts=starts)
    assert res.value == f_grid
    assert 0.4 <= res.x[0] <= 0.5
    assert per_start_monotone(res.trace)


def test_constant_objective_returns_start():
    res = minimize(lambda x: 3.0, SearchConfig.uniform_box(2, 0.0, 1.0), starts=[[0.2, 0.7]])
    assert res.value == 3.0
    assert res.x.tolist() == [0.2, 0.7]
    assert all(row[2] == 3.0 for row in res.trace)


def test_every_evaluation_inside_box():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sum((x - 2.0) ** 2))  # minimum outside the box

    cfg = SearchConfig(lo=(0.0, -1.0), hi=(1.0, 0.5), n_iter=40, n_guess=3, seed=5)
    res = minimize(f, cfg)
    pts = np.array(seen)
    assert np.all(pts >= [0.0, -1.0]) and np.all(pts <= [1.0, 0.5])
    assert res.x == pytest.approx([1.0, 0.5], abs=1e-6)
    assert res.n_evals == len(seen)


def test_batch_and_scalar_paths_agree():
    cfg = SearchConfig.uniform_box(3, -1.0, 1.0, n_iter=30, n_guess=2, seed=1)
    a = minimize(lambda x: float(np.sum(np.abs(x - 0.1))), cfg)
    b = minimize(batch_objective=lambda P: np.sum(np.abs(P - 0.1), axis=1), cfg=cfg)
    assert np.array_equal(a.x, b.x) and a.value == b.value and a.n_evals == b.n_evals


def test_deterministic_per_seed():
    cfg = SearchConfig.uniform_box(2, 0.0, 1.0, n_iter=25, n_guess=4, seed=9)
    f = lambda x: float(np.sin(7 * x[0]) + np.cos(5 * x[1]))  # noqa: E731
    a, b = minimize(f, cfg), minimize(f, cfg)
    assert np.array_equal(a.x, b.x) and a.n_evals == b.n_evals and a.trace == b.trace


def test_multistart_takes_best_start():
    f = lambda x: float(np.sin(7 * x[0]) + np.cos(5 * x[1]))  # noqa: E731
    cfg = SearchConfig.uniform_box(2, 0.0, 1.0, n_iter=25, n_guess=4, seed=9)
    res = minimize(f, cfg)
    finals = {}
    for start, _, val, _, _ in res.trace:
        finals[start] = val
    assert sorted(finals) == [0, 1, 2, 3]
    assert res.value == min(finals.values())


def test_multistart_points():
    cfg = SearchConfig.uniform_box(2, 0.0, 1.0, n_guess=1)
    assert [p.tolist() for p in multistart_points(cfg, warm=[0.3, 0.4])] == [[0.3, 0.4]]
    cfg3 = SearchConfig.uniform_box(2, 0.0, 1.0, n_guess=3, seed=2)
    pts = multistart_points(cfg3)
    assert len(pts) == 3 and all(np.all((p >= 0) & (p <= 1)) for p in pts)
    assert np.array_equal(np.array(pts), np.array(multistart_points(cfg3)))
    clipped = multistart_points(cfg3, warm=[1.5, -0.2])
    assert clipped[0].tolist() == [1.0, 0.0] and len(clipped) == 3


def test_regular_simplex_edges_equal():
    lo, hi = np.zeros(3), np.ones(3)
    S = regular_simplex([0.9, 0.1, 0.5], lo, hi, 0.1)
    d = np.sqrt(((S[:, None] - S[None]) ** 2).sum(-1))[np.triu_indices(4, 1)]
    assert d == pytest.approx(np.full(6, 0.1), rel=1e-12)
    assert np.all(S >= lo) and np.all(S <= hi)


def test_nonfinite_value_reports_point():
    with pytest.raises(ContractError, match="nan"):
        minimize(lambda x: float("nan") if x[0] > 0.5 else x[0], SearchConfig.uniform_box(1, 0.0, 1.0), starts=[[0.6]])


def test_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(lo=(0.0,), hi=(0.0,))
    with pytest.raises(ConfigError):
        SearchConfig.uniform_box(2, 0.0, 1.0, n_iter=0)
    with pytest.raises(ConfigError):
        SearchConfig.uniform_box(2, 0.0, 1.0, n_guess=0)
    with pytest.raises(ContractError):
        minimize(lambda x: 0.0, SearchConfig.uniform_box(2, 0.0, 1.0), starts=[[0.1]])


def test_trace_csv(tmp_path):
    res = minimize(quad, SearchConfig.uniform_box(1, 0.0, 1.0, n_iter=5), starts=[[0.9]])
    write_trace_csv(tmp_path / "t.csv", res.trace)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "start,iter,best_value,diameter,evals"
    assert len(lines) == len(res.trace) + 1
