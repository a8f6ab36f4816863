"""L1 convergence of terminal densities versus quadratic variation of differences.

For a sequence of coefficients ``theta^n`` and a limit ``theta`` all density
processes are built on one common batch of paths.  Each row of the output
table holds ``E|D^n_T - D_T|`` and the exceedance frequency
``P([D^n - D]_T > eps)``, both with standard errors.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .density_engine import GirsanovCoefficients, density_process, mc_estimate, qv_difference
from .levy_model import LevyTriplet, RngStream, simulate_paths


class TrendWarning(UserWarning):
    pass


@dataclass
class ConvergenceExperiment:
    base_theta: GirsanovCoefficients
    sequence_rule: Callable[[int], GirsanovCoefficients]
    n_values: Sequence[int]
    epsilon: float
    n_paths: int
    rng: RngStream

    def __post_init__(self):
        n = list(self.n_values)
        if not n or any(b <= a for a, b in zip(n, n[1:])):
            raise ValueError("n_values must be nonempty and strictly increasing")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_paths < 2:
            raise ValueError("need at least two paths")


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    l1_mean: float
    l1_se: float
    qv_exceed_prob: float
    qv_se: float
    qv_mean: float


CSV_COLUMNS = ("n", "L1_mean", "L1_se", "qv_exceed_prob", "qv_se")


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def _run(experiment: ConvergenceExperiment, triplet: LevyTriplet, horizon: float, steps: int,
         stopping_level: float | None) -> list[ConvergenceRow]:
    paths = simulate_paths(triplet, horizon, steps, experiment.n_paths, experiment.rng)
    base = density_process(paths, experiment.base_theta)
    rows = []
    for n in experiment.n_values:
        dn = density_process(paths, experiment.sequence_rule(n))
        l1 = mc_estimate(np.abs(dn.terminal - base.terminal))
        qv = qv_difference(dn, base)
        if stopping_level is None or math.isinf(stopping_level):
            qv_stop = qv[:, -1]
        else:
            hit = np.abs(dn.values - base.values) >= stopping_level
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), qv.shape[1] - 1)
            qv_stop = qv[np.arange(qv.shape[0]), first]
        exceed = float(np.mean(qv_stop > experiment.epsilon))
        rows.append(ConvergenceRow(int(n), l1.value, l1.se, exceed,
                                   _binomial_se(exceed, qv_stop.size), float(qv_stop.mean())))
    if not _strictly_decreasing([r.l1_mean for r in rows]) and \
            any(r.l1_mean > 0 for r in rows):
        warnings.warn("E|D^n_T - D_T| is not decreasing in n; check the sequence rule",
                      TrendWarning, stacklevel=3)
    return rows


def run_convergence(experiment: ConvergenceExperiment, triplet: LevyTriplet, horizon: float,
                    steps: int) -> list[ConvergenceRow]:
    """One row per ``n`` on common random numbers, ordered by ``n``."""
    return _run(experiment, triplet, horizon, steps, None)


def stopped_variant(experiment: ConvergenceExperiment, stopping_level: float,
                    triplet: LevyTriplet, horizon: float, steps: int) -> list[ConvergenceRow]:
    """As :func:`run_convergence`, with the QV stopped at the first grid time ``|D^n - D| >= k``."""
    if not stopping_level > 0:
        raise ValueError("stopping level must be positive")
    return _run(experiment, triplet, horizon, steps, stopping_level)


def write_table(rows: Sequence[ConvergenceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.n, repr(r.l1_mean), repr(r.l1_se), repr(r.qv_exceed_prob), repr(r.qv_se)])


def trend_summary(rows: Sequence[ConvergenceRow], alpha: float = 0.05) -> dict:
    l1 = [r.l1_mean for r in rows]
    pr = [r.qv_exceed_prob for r in rows]
    constant = all(v == 0 for v in l1) and all(v == 0 for v in pr)
    return {
        "constant": constant,
        "l1_decreasing": constant or _strictly_decreasing(l1),
        "qv_decreasing": constant or _strictly_decreasing(pr),
        "final_below_alpha": pr[-1] < alpha,
    }
