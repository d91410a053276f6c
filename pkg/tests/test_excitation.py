import numpy as np
import pytest

from ddnmpc.errors import ConfigError
from ddnmpc.excitation import ExcitationConfig, generate


def runs(u):
    """Lengths of maximal constant runs."""
    change = np.flatnonzero(np.diff(u) != 0) + 1
    edges = np.concatenate([[0], change, [len(u)]])
    return np.diff(edges)


def test_degenerate_bounds():
    cfg = ExcitationConfig(n_segments=1, min_len=3, max_len=3, amp_min=0.1, amp_max=0.1)
    assert generate(cfg).tolist() == [0.1, 0.1, 0.1]


def test_default_length_and_range():
    u = generate(ExcitationConfig(seed=123))
    assert 1000 <= len(u) <= 100_000
    # mean segment length 50.5 -> about 50500 instants
    assert abs(len(u) - 50_500) < 5 * 29 * np.sqrt(1000)
    assert u.min() >= 0.049 and u.max() <= 0.449
    assert len(runs(u)) <= 1000


def test_seed_determinism():
    a = generate(ExcitationConfig(n_segments=50, seed=5))
    b = generate(ExcitationConfig(n_segments=50, seed=5))
    c = generate(ExcitationConfig(n_segments=50, seed=6))
    assert np.array_equal(a, b)
    assert len(a) != len(c) or np.any(a != c)


def test_segment_lengths_uniform():
    lengths = []
    for seed in range(40):
        cfg = ExcitationConfig(n_segments=500, min_len=1, max_len=10, amp_min=0.049, amp_max=0.449, seed=seed)
        rng = np.random.default_rng(seed)
        lengths.append(rng.integers(1, 10, size=500, endpoint=True))
        # the generator's own stream must reproduce the same lengths
        u = generate(cfg)
        assert len(u) == lengths[-1].sum()
    counts = np.bincount(np.concatenate(lengths), minlength=11)[1:]
    n, p = counts.sum(), 0.1
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_narrow_range_reachable():
    u = generate(ExcitationConfig(n_segments=100, amp_max=0.149, seed=0))
    assert u.min() >= 0.049 and u.max() <= 0.149


@pytest.mark.parametrize(
    "kw",
    [
        {"n_segments": 0},
        {"min_len": 0},
        {"min_len": 5, "max_len": 4},
        {"amp_min": 0.3, "amp_max": 0.2},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ExcitationConfig(**kw)


def test_amplitude_outside_admissible_set():
    with pytest.raises(ConfigError):
        generate(ExcitationConfig(amp_max=0.6))
