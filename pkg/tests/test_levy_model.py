import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyrisk.levy_model import (
    LevyTriplet,
    PathBatch,
    RngStream,
    empirical_compensator,
    empirical_compensator_se,
    simulate_path,
    simulate_paths,
)


def test_triplet_validation():
    with pytest.raises(ValueError):
        LevyTriplet.from_atoms([(0.0, 1.0)])
    with pytest.raises(ValueError):
        LevyTriplet.from_atoms([(1.0, -1.0)])
    with pytest.raises(ValueError):
        LevyTriplet.from_atoms([(1.0, 1.0), (1.0, 2.0)])
    with pytest.raises(ValueError):
        LevyTriplet.from_atoms([(1.0, np.inf)])


def test_rejects_bad_grid():
    tr = LevyTriplet()
    with pytest.raises(ValueError):
        simulate_paths(tr, 1.0, 10, 5, RngStream(0), time_grid=np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        simulate_paths(tr, -1.0, 10, 5, RngStream(0))


def test_pure_brownian_variance():
    T = 2.0
    b = simulate_paths(LevyTriplet(), T, 4, 100_000, RngStream(1))
    lt = b.level[:, -1]
    var = lt.var(ddof=1)
    # SE of a sample variance of normals: sigma^2 sqrt(2/(n-1))
    assert abs(var - T) <= 3 * T * np.sqrt(2 / (lt.size - 1))


def test_deterministic_drift():
    tr = LevyTriplet(drift=1.0, brownian=False)
    p = simulate_path(tr, 1.0, 10, RngStream(3))
    np.testing.assert_allclose(p.level_values, p.time_grid, atol=1e-15)


def test_jump_count_mean_single_atom():
    lam, T = 2.0, 1.0
    b = simulate_paths(LevyTriplet.from_atoms([(1.0, lam)], brownian=False), T, 5, 100_000, RngStream(4))
    counts = b.jump_counts()
    # Poisson oracle: mean = var = lam T
    se = np.sqrt(lam * T / counts.size)
    assert abs(counts.mean() - lam * T) <= 3 * se


def test_empirical_compensator_rates():
    tr = LevyTriplet.from_atoms([(-0.5, 1.0)])
    b = simulate_paths(tr, 2.0, 4, 100_000, RngStream(5))
    est = empirical_compensator(b, 0)
    assert abs(est - 1.0) <= 3 * np.sqrt(1.0 / (2.0 * b.n_paths))
    tr2 = LevyTriplet.from_atoms([(-0.5, 1.0), (1.5, 0.3), (0.7, 0.0)])
    b2 = simulate_paths(tr2, 1.0, 4, 100_000, RngStream(6))
    for i, a in enumerate(tr2.atoms):
        est = empirical_compensator(b2, i)
        assert abs(est - a.rate) <= 3 * max(empirical_compensator_se(b2, i), 1e-12)
    assert empirical_compensator(b2, 2) == 0.0
    with pytest.raises(IndexError):
        empirical_compensator(b2, 3)


def test_jump_record_invariants():
    tr = LevyTriplet.from_atoms([(-0.5, 3.0), (2.0, 1.0)], drift=0.3)
    p = simulate_path(tr, 1.5, 30, RngStream(8))
    assert np.all(np.diff(p.jump_times) > 0)
    assert set(p.jump_sizes.tolist()) <= {-0.5, 2.0}
    assert p.level_values[0] == 0.0
    # between grid points without jumps: L increment = b dt - comp dt + dW
    comp = tr.small_jump_compensator()
    dt = np.diff(p.time_grid)
    expected = (tr.drift - comp) * dt + np.diff(p.brownian_values)
    jumped = np.zeros(dt.size, bool)
    slots = np.searchsorted(p.time_grid, p.jump_times, side="left")
    jumped[slots - 1] = True
    np.testing.assert_allclose(np.diff(p.level_values)[~jumped], expected[~jumped], atol=1e-12)


def test_mean_of_level_matches_big_jump_drift():
    tr = LevyTriplet.from_atoms([(-0.5, 1.0), (2.0, 0.5)], drift=0.2)
    T = 1.0
    b = simulate_paths(tr, T, 4, 100_000, RngStream(9))
    lt = b.level[:, -1]
    target = tr.mean_per_unit_time() * T      # 0.2 + 2*0.5
    assert abs(lt.mean() - target) <= 3 * lt.std(ddof=1) / np.sqrt(lt.size)


def test_increments_stationary():
    tr = LevyTriplet.from_atoms([(-0.5, 1.0), (1.5, 0.5)], drift=0.1)
    b = simulate_paths(tr, 2.0, 2, 100_000, RngStream(10))
    first = b.level[:, 1] - b.level[:, 0]
    second = b.level[:, 2] - b.level[:, 1]
    se_m = np.sqrt(first.var() / first.size + second.var() / second.size)
    assert abs(first.mean() - second.mean()) <= 4 * se_m
    # variance comparison with a normal-theory SE on each side (conservative for jumps)
    v1, v2 = first.var(ddof=1), second.var(ddof=1)
    k1 = ((first - first.mean()) ** 4).mean()
    k2 = ((second - second.mean()) ** 4).mean()
    se_v = np.sqrt((k1 - v1 ** 2) / first.size + (k2 - v2 ** 2) / second.size)
    assert abs(v1 - v2) <= 4 * se_v


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), index=st.integers(0, 1000))
def test_same_stream_same_path(seed, index):
    tr = LevyTriplet.from_atoms([(-0.5, 1.0), (1.5, 0.5)])
    a = simulate_path(tr, 1.0, 8, RngStream(seed, index))
    b = simulate_path(tr, 1.0, 8, RngStream(seed, index))
    np.testing.assert_array_equal(a.level_values, b.level_values)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)


def test_batch_roundtrip_and_csv(tmp_path):
    tr = LevyTriplet.from_atoms([(1.5, 2.0)])
    b = simulate_paths(tr, 1.0, 6, 5, RngStream(11))
    back = PathBatch.from_paths([b.path(i) for i in range(5)])
    np.testing.assert_array_equal(back.level, b.level)
    np.testing.assert_array_equal(back.jump_time, b.jump_time)
    np.testing.assert_array_equal(back.jump_slot, b.jump_slot)
    p = b.path(0)
    p.to_csv(tmp_path / "p.csv")
    p.jumps_to_csv(tmp_path / "j.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,W,L" and len(lines) == 8
