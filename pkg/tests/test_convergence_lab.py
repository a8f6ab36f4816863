import math
import warnings

import numpy as np
import pytest
from scipy import stats

from levyrisk.convergence_lab import (
    CSV_COLUMNS,
    ConvergenceExperiment,
    TrendWarning,
    run_convergence,
    stopped_variant,
    trend_summary,
    write_table,
)
from levyrisk.density_engine import GirsanovCoefficients
from levyrisk.levy_model import LevyTriplet, RngStream

BM = LevyTriplet()
NS = (1, 2, 4, 8, 16, 32)


def shifted(base, seed, n_paths=4000, eps=0.01):
    return ConvergenceExperiment(
        base_theta=GirsanovCoefficients.constant(base, 0.0),
        sequence_rule=lambda n: GirsanovCoefficients.constant(base + 1.0 / n, 0.0),
        n_values=NS, epsilon=eps, n_paths=n_paths, rng=RngStream(seed))


def test_experiment_validation():
    th = GirsanovCoefficients.constant()
    with pytest.raises(ValueError):
        ConvergenceExperiment(th, lambda n: th, (2, 1), 0.01, 100, RngStream(0))
    with pytest.raises(ValueError):
        ConvergenceExperiment(th, lambda n: th, (1, 2), 0.0, 100, RngStream(0))


def test_constant_sequence_gives_zeros():
    th = GirsanovCoefficients.constant(0.3, 0.2)
    tr = LevyTriplet.from_atoms([(1.0, 0.5)])
    exp = ConvergenceExperiment(th, lambda n: th, NS, 0.01, 500, RngStream(1))
    for rows in (run_convergence(exp, tr, 1.0, 20), stopped_variant(exp, 0.1, tr, 1.0, 20)):
        assert all(r.l1_mean == 0 and r.qv_exceed_prob == 0 and r.l1_se == 0 for r in rows)
        assert trend_summary(rows)["constant"]


def test_l1_matches_lognormal_closed_form():
    # a > b: E|D_a - D_b| = 2 (2 Phi((a - b) sqrt(T) / 2) - 1)
    T = 1.0
    rows = run_convergence(shifted(0.3, 2, n_paths=20_000), BM, T, 50)
    for r in rows:
        oracle = 2 * (2 * stats.norm.cdf((1.0 / r.n) * math.sqrt(T) / 2) - 1)
        assert abs(r.l1_mean - oracle) <= 3 * r.l1_se


def test_jump_only_qv_direct_summation():
    lam, th1, T = 1.0, 0.5, 1.0
    tr = LevyTriplet.from_atoms([(1.0, lam)], brownian=False)
    exp = ConvergenceExperiment(
        GirsanovCoefficients.constant(0.0, th1),
        lambda n: GirsanovCoefficients.constant(0.0, th1 * (1 + 1.0 / n)),
        NS, 0.01, 3000, RngStream(3))
    rows = run_convergence(exp, tr, T, 10)

    # oracle: replay the same paths and sum the jump terms by hand
    from levyrisk.levy_model import simulate_paths
    paths = simulate_paths(tr, T, 10, 3000, RngStream(3))
    for r in rows:
        a = th1 * (1 + 1.0 / r.n)
        qv = np.zeros(paths.n_paths)
        for i in range(paths.n_paths):
            times = paths.jump_time[paths.jump_path == i]
            for k, s in enumerate(times):
                left_a = math.exp(-a * lam * s) * (1 + a) ** k
                left_b = math.exp(-th1 * lam * s) * (1 + th1) ** k
                qv[i] += (left_a * a - left_b * th1) ** 2
        assert r.qv_mean == pytest.approx(qv.mean(), rel=1e-10)
        assert r.qv_exceed_prob == pytest.approx(np.mean(qv > 0.01), abs=1e-12)
    probs = [r.qv_exceed_prob for r in rows]
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    assert probs[-1] < probs[0]


def test_infinite_stopping_level_matches():
    exp = shifted(0.3, 4, n_paths=2000)
    a = run_convergence(exp, BM, 1.0, 40)
    b = stopped_variant(shifted(0.3, 4, n_paths=2000), math.inf, BM, 1.0, 40)
    assert a == b


def test_stopped_qv_not_above_unstopped():
    k = 0.05
    a = run_convergence(shifted(0.3, 5, n_paths=2000), BM, 1.0, 40)
    b = stopped_variant(shifted(0.3, 5, n_paths=2000), k, BM, 1.0, 40)
    for ra, rb in zip(a, b):
        assert rb.qv_mean <= ra.qv_mean
        assert rb.qv_exceed_prob <= ra.qv_exceed_prob
    assert b[-1].qv_exceed_prob <= b[0].qv_exceed_prob
    with pytest.raises(ValueError):
        stopped_variant(shifted(0.3, 5), 0.0, BM, 1.0, 40)


def test_trend_warning_on_misconfigured_rule():
    exp = ConvergenceExperiment(
        GirsanovCoefficients.constant(0.3, 0.0),
        lambda n: GirsanovCoefficients.constant(0.3 + n / 32.0, 0.0),
        NS, 0.01, 500, RngStream(6))
    with pytest.warns(TrendWarning):
        run_convergence(exp, BM, 1.0, 10)


def test_determinism_and_csv(tmp_path):
    a = run_convergence(shifted(0.3, 7, n_paths=1000), BM, 1.0, 20)
    b = run_convergence(shifted(0.3, 7, n_paths=1000), BM, 1.0, 20)
    write_table(a, tmp_path / "a.csv")
    write_table(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)


def test_implication_direction():
    # once E|D^n_T - D_T| < 0.01, exceedance at eps = 0.01 is below 0.05
    exp = ConvergenceExperiment(
        GirsanovCoefficients.constant(0.3, 0.0),
        lambda n: GirsanovCoefficients.constant(0.3 + 1.0 / n, 0.0),
        (1, 2, 4, 8, 16, 32, 64, 128, 256), 0.01, 100_000, RngStream(8))
    with warnings.catch_warnings():
        warnings.simplefilter("error", TrendWarning)
        rows = run_convergence(exp, BM, 1.0, 20)
    small = [r for r in rows if r.l1_mean < 0.01]
    assert small
    assert all(r.qv_exceed_prob < 0.05 for r in small)
