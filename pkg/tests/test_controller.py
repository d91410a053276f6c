import numpy as np
import pytest

from ddnmpc import plant
from ddnmpc.controller import (
    MeasurementBuffer,
    MpcConfig,
    ProfileMap,
    ProfileParam,
    mpc_step,
    profile,
    run_closed_loop,
    surrogate_objective,
)
from ddnmpc.errors import ConfigError, ContractError
from ddnmpc.excitation import ExcitationConfig, generate
from ddnmpc.features import FeatureConfig, feature_matrix, moments_rows
from ddnmpc.forest import fit_forest
from ddnmpc.pipeline import CostConfig, build_dataset

N = 20


def small_cfg(**kw):
    return MpcConfig(N=N, cost=CostConfig(N=N), **kw)


@pytest.fixture(scope="module")
def small_model():
    traj = plant.simulate(plant.X_ST, generate(ExcitationConfig(n_segments=60, max_len=30, seed=1)))
    ds = build_dataset(traj, CostConfig(N=N))
    return fit_forest(feature_matrix(ds, FeatureConfig()), ds.labels, n_trees=5, max_leaf_nodes=60, seed=2)


@pytest.fixture(scope="module")
def constant_model():
    rng = np.random.default_rng(0)
    return fit_forest(rng.random((10, 9)), np.full(10, -4.0), n_trees=1, max_leaf_nodes=1)


class PhiTargetModel:
    """Cost is the squared distance of the future-input mean moment to ``target``."""

    n_features = 9

    def __init__(self, target):
        self.target = target

    def predict(self, X):
        X = np.atleast_2d(X)
        return (X[:, 6] - self.target) ** 2


def full_buffer(seed=0):
    rng = np.random.default_rng(seed)
    buf = MeasurementBuffer(N)
    for _ in range(N):
        buf.push_output(rng.uniform(0.0, 0.1))
        buf.push_input(rng.uniform(0.049, 0.449))
    return buf


def test_profile_examples():
    assert profile(ProfileParam((0, 10), (0.2, 0.2)), 30).tolist() == [0.2] * 30
    u = ProfileMap((0, 10), 50)(np.array([0.0, 1.0]))
    assert u[5] == 0.5
    assert np.all(u[10:] == 1.0)
    assert u[:11] == pytest.approx(np.linspace(0, 1, 11), abs=1e-15)


def test_three_knot_profile():
    a, b, c = 0.1, 0.4, 0.25
    u = profile(ProfileParam((0, 10, 30), (a, b, c)), 50)
    assert (u[0], u[10], u[30]) == (a, b, c)
    assert u[20] == pytest.approx((b + c) / 2, abs=1e-15)
    assert np.all(u[30:] == c)
    assert np.allclose(np.diff(u[:11]), (b - a) / 10) and np.allclose(np.diff(u[10:31]), (c - b) / 20)


def test_profile_identity_with_every_knot():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.049, 0.449, 40)
    assert np.array_equal(ProfileMap(range(40), 40)(p), p)


def test_profile_batch_in_range():
    pm = ProfileMap((0, 5, 10, 20), 100)
    P = np.random.default_rng(1).uniform(0.049, 0.449, size=(200, 4))
    U = pm(P)
    assert U.shape == (200, 100)
    assert np.all(U >= 0.049) and np.all(U <= 0.449)


@pytest.mark.parametrize("knots", [(1, 5), (0, 5, 5), (0, 20), ()])
def test_bad_knots(knots):
    with pytest.raises(ContractError):
        ProfileMap(knots, N)


def test_profile_value_out_of_box():
    with pytest.raises(ContractError):
        profile(ProfileParam((0, 10), (0.0, 0.2)), 30)


def test_config_validation():
    with pytest.raises(ConfigError):
        MpcConfig(N=50)  # cost horizon stays at 100
    with pytest.raises(ConfigError):
        small_cfg(u_min=0.3, u_max=0.2)


def test_buffer_windows():
    buf = MeasurementBuffer(3)
    for k in range(5):
        buf.push_output(10 + k)
        if k < 4:
            buf.push_input(k)
    assert buf.full
    assert buf.y_past.tolist() == [12, 13, 14]
    assert buf.u_past.tolist() == [1, 2, 3]


def test_step_needs_full_buffer(constant_model):
    with pytest.raises(ContractError):
        mpc_step(MeasurementBuffer(N), constant_model, small_cfg())


def test_constant_model_step(constant_model):
    res = mpc_step(full_buffer(), constant_model, small_cfg())
    assert res.predicted_cost == -4.0
    assert 0.049 <= res.u <= 0.449


def test_phi_target_against_grid():
    t = 0.3
    model = PhiTargetModel(t)
    cfg = small_cfg(n_iter=60)
    buf = full_buffer(2)
    pmap = ProfileMap(cfg.knots, N)
    g = np.linspace(0.049, 0.449, 401)
    P = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    grid_best = surrogate_objective(model, buf.y_past, buf.u_past, pmap, cfg.features)(P).min()
    res = mpc_step(buf, model, cfg)
    mean = moments_rows(pmap(res.p)[None, :], 3, 5)[0, 0]
    assert res.predicted_cost <= grid_best + 1e-6
    assert abs(mean - t) <= 1e-3


def test_moment_equivalent_profiles_same_cost(small_model):
    buf = full_buffer(3)
    pmap = ProfileMap(range(N), N)
    obj = surrogate_objective(small_model, buf.y_past, buf.u_past, pmap, FeatureConfig())
    u = np.random.default_rng(4).uniform(0.049, 0.449, N)
    v = u.copy()
    v[[8, 12]] = v[[12, 8]]  # interior swap keeps every moment
    f = moments_rows(np.vstack([u, v]), 3, 5)
    assert f[0] == pytest.approx(f[1], abs=1e-15)
    a, b = obj(np.vstack([u, v]))
    assert a == b


def test_one_optimized_step(constant_model):
    res = run_closed_loop(plant.X_ST, constant_model, small_cfg(), N + 1)
    optimized = [r for r in res.log if r.n_evals > 0]
    assert len(optimized) == 1 and optimized[0].k == N
    assert len(res.trajectory) == N + 1


def test_constant_model_matches_open_loop(constant_model):
    res = run_closed_loop((0.05, 0.05, 0.12), constant_model, small_cfg(seed=3), 3 * N)
    replay = plant.simulate((0.05, 0.05, 0.12), res.trajectory.u)
    assert np.array_equal(replay.y, res.trajectory.y)
    assert np.all((res.trajectory.u >= 0.049) & (res.trajectory.u <= 0.449))


def test_closed_loop_controls_admissible_and_deterministic(small_model):
    cfg = small_cfg(seed=5, n_guess=2)
    a = run_closed_loop(plant.X_ST, small_model, cfg, 3 * N)
    b = run_closed_loop(plant.X_ST, small_model, cfg, 3 * N)
    assert np.all((a.trajectory.u >= 0.049) & (a.trajectory.u <= 0.449))
    assert np.array_equal(a.trajectory.u, b.trajectory.u)
    assert [r.p for r in a.log] == [r.p for r in b.log]


def test_log_replay_bit_exact(small_model):
    cfg = small_cfg(seed=7)
    res = run_closed_loop((0.1, 0.06, 0.14), small_model, cfg, 3 * N)
    u, y = res.trajectory.u, res.trajectory.y
    pmap = ProfileMap(cfg.knots, N)
    for row in res.log[N:]:
        k = row.k
        obj = surrogate_objective(small_model, y[k - N + 1 : k + 1], u[k - N : k], pmap, cfg.features)
        assert obj(np.array([row.p]))[0] == row.predicted_cost
        assert pmap(np.array(row.p))[0] == row.u


def test_closed_loop_too_short(constant_model):
    with pytest.raises(ContractError):
        run_closed_loop(plant.X_ST, constant_model, small_cfg(), N)
