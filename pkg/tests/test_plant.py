import math

import numpy as np
import pytest

from ddnmpc import plant
from ddnmpc.errors import ConfigError, ContractError, IntegrationError, PlantDomainError
from ddnmpc.excitation import ExcitationConfig, generate


def test_rhs_at_published_steady_state_is_small():
    dx = plant.rhs(plant.X_ST, plant.U_ST)
    assert max(abs(v) for v in dx) <= 5e-3


def test_rhs_zero_concentration():
    assert plant.rhs((0.0, 0.0, 0.1), 0.2) == pytest.approx((1.0, 0.0, 0.1), abs=1e-15)


def test_rhs_direct_substitution():
    # e^{-1/0.1} = e^{-10}, e^{-0.55/0.1} = e^{-5.5}
    r1 = 1e4 * math.exp(-10.0)
    r2 = 400.0 * math.exp(-5.5)
    expected = (1.0 - r1 - r2 - 1.0, r1, 0.1)
    got = plant.rhs((1.0, 0.0, 0.1), 0.2)
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx((-2.0887, 0.4540, 0.1), abs=1e-4)


@pytest.mark.parametrize("x3", [0.0, -1e-3])
def test_rhs_domain_error(x3):
    with pytest.raises(PlantDomainError) as err:
        plant.rhs((0.5, 0.1, x3), 0.1)
    assert err.value.component == "x3"


def test_config_validation():
    with pytest.raises(ConfigError):
        plant.PlantConfig(tau=0.0)
    with pytest.raises(ConfigError):
        plant.PlantConfig(n_sub=0)
    with pytest.raises(ConfigError):
        plant.PlantConfig(u_min=0.3, u_max=0.2)


def test_step_rejects_inadmissible_input():
    with pytest.raises(ContractError):
        plant.step(plant.X_ST, 0.5)


def test_step_blowup_reports_substep():
    # negative temperature makes exp(-1/x3) overflow in the first stage
    with pytest.raises(IntegrationError) as err:
        plant.step((0.5, 0.1, -1e-3), 0.1)
    assert err.value.substep == 0


def test_steady_state_holds_for_ten_time_units():
    x = plant.X_ST
    for _ in range(500):
        x = plant.step(x, plant.U_ST)
    assert max(abs(a - b) for a, b in zip(x, plant.X_ST)) <= 0.02

    fine = plant.PlantConfig(n_sub=40)
    xf = plant.X_ST
    for _ in range(500):
        xf = plant.step(xf, plant.U_ST, fine)
    assert max(abs(a - b) for a, b in zip(xf, plant.X_ST)) <= 0.02
    assert max(abs(a - b) for a, b in zip(x, xf)) <= 1e-6


def test_substep_self_consistency_on_excitation_states():
    u = generate(ExcitationConfig(n_segments=40, seed=3))
    traj = plant.simulate(plant.X_ST, u)
    coarse, fine = plant.PlantConfig(n_sub=4), plant.PlantConfig(n_sub=40)
    worst = 0.0
    for k in range(0, len(u), 7):
        a = plant.step(traj.states[k], u[k], coarse)
        b = plant.step(traj.states[k], u[k], fine)
        worst = max(worst, max(abs(p - q) for p, q in zip(a, b)))
    assert worst <= 1e-6


def test_halving_substep_changes_outputs_little():
    u = generate(ExcitationConfig(n_segments=30, seed=11))
    a = plant.simulate(plant.X_ST, u, plant.PlantConfig(n_sub=4))
    b = plant.simulate(plant.X_ST, u, plant.PlantConfig(n_sub=8))
    assert np.max(np.abs(np.diff(a.y - b.y))) <= 1e-6


def test_simulate_empty():
    traj = plant.simulate(plant.X_ST, [])
    assert len(traj) == 0


def test_simulate_constant_steady_input():
    traj = plant.simulate(plant.X_ST, np.full(500, plant.U_ST))
    assert np.all(np.abs(traj.y - plant.Y_ST) <= 0.005)


def test_simulate_indexing_and_determinism():
    u = generate(ExcitationConfig(n_segments=10, seed=1))
    t1 = plant.simulate(plant.X_ST, u)
    t2 = plant.simulate(plant.X_ST, t1.u)
    assert len(t1) == len(u)
    assert np.array_equal(t1.y, t2.y)
    assert t1.y[0] == plant.X_ST[1]
    # y[1] is the first output affected by u[0]
    assert t1.y[1] == plant.step(plant.X_ST, u[0]).x2


def test_nonnegative_concentrations_on_excitation():
    u = generate(ExcitationConfig(n_segments=50, seed=7))
    traj = plant.simulate((0.0, 0.0, 0.1), u)
    assert np.all(traj.states[:, :2] >= 0)
    assert np.all(np.isfinite(traj.states))


def test_simulate_reports_time_index():
    with pytest.raises(ContractError, match="time index 2"):
        plant.simulate(plant.X_ST, [0.1, 0.1, 0.9])


def test_trajectory_csv_roundtrip(tmp_path):
    u = generate(ExcitationConfig(n_segments=5, seed=2))
    traj = plant.simulate(plant.X_ST, u)
    plant.write_trajectory_csv(tmp_path / "a.csv", traj)
    back = plant.read_trajectory_csv(tmp_path / "a.csv")
    assert np.array_equal(back.u, traj.u) and np.array_equal(back.y, traj.y)
    assert back.states is None
    plant.write_trajectory_csv(tmp_path / "b.csv", traj, with_state=True)
    back = plant.read_trajectory_csv(tmp_path / "b.csv")
    assert np.array_equal(back.states, traj.states)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "k,t,u,y,x1,x2,x3"
