"""Penalty family for Girsanov densities and the convex risk measure it induces.

For coefficients ``theta = (theta0, theta1)`` of a measure ``Q << P``::

    penalty(Q) = E_Q[ int_0^T h( h0(theta0(t)) + sum_i delta_i h1(theta1(t, x_i)) lam_i ) dt ]
    rho(X)     = sup_Q { E_Q[-X] - penalty(Q) }

with ``h, h0, h1`` convex, nonnegative and vanishing at 0.  With
``h = id, h0(u) = u^2/2, h1(u) = (1+u) ln(1+u) - u`` and ``delta = 1`` the
penalty is the relative entropy ``H(Q|P)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .density_engine import (
    INF,
    DensityBatch,
    Estimate,
    GirsanovCoefficients,
    cumulative_integral,
    density_process,
    mc_estimate,
    terminal_density,
)
from .levy_model import LevyTriplet, PathBatch, RngStream, simulate_paths

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def entropic_h1(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        # log1p keeps the small-u cancellation from going negative
        out = np.where(u == -1.0, 1.0, (1.0 + u) * np.log1p(u) - u)
    return np.where(u < -1.0, np.inf, np.maximum(out, 0.0))


def _identity(u):
    return np.asarray(u, dtype=float)


def _half_square(u):
    return 0.5 * np.asarray(u, dtype=float) ** 2


def tabulated(points: Sequence[tuple[float, float]]) -> Callable:
    """Piecewise-linear interpolant of ``(u, value)`` pairs, linearly extrapolated."""
    pts = sorted((float(u), float(v)) for u, v in points)
    if len(pts) < 2:
        raise ValueError("a tabulated function needs at least two points")
    us = np.array([p[0] for p in pts])
    vs = np.array([p[1] for p in pts])
    if np.any(np.diff(us) <= 0):
        raise ValueError("tabulated abscissae must be distinct")
    slopes = np.diff(vs) / np.diff(us)
    if np.any(np.diff(slopes) < -1e-12):
        raise ValueError("tabulated function is not convex (slopes decrease)")

    def f(u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, us, vs)
        out = np.where(u < us[0], vs[0] + slopes[0] * (u - us[0]), out)
        return np.where(u > us[-1], vs[-1] + slopes[-1] * (u - us[-1]), out)

    return f


def _convexity_violations(f, lo, hi, gen, n=1000) -> int:
    a, b = gen.uniform(lo, hi, n), gen.uniform(lo, hi, n)
    lam = gen.uniform(0.0, 1.0, n)
    with np.errstate(invalid="ignore", over="ignore"):
        mid = f(lam * a + (1 - lam) * b)
        chord = lam * f(a) + (1 - lam) * f(b)
    ok = mid <= chord + 1e-9 * (1.0 + np.abs(chord))
    return int(np.count_nonzero(~ok))


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Convex building blocks ``h, h0, h1`` and the per-atom weight ``delta``.

    ``delta`` is a scalar (same weight for every atom) or a mapping from jump
    size to weight.  Construction checks normalisation at 0 and spot-checks
    convexity on 1000 random midpoint triples per function.
    """

    h: Callable
    h0: Callable
    h1: Callable
    delta: float | Mapping[float, float] = 1.0
    name: str = "custom"
    check: bool = True

    def __post_init__(self):
        if not self.check:
            return
        for label, fn in (("h", self.h), ("h0", self.h0), ("h1", self.h1)):
            v0 = float(fn(np.array(0.0)))
            if abs(v0) > 1e-12:
                raise ValueError(f"{label}(0) must be 0, got {v0}")
        gen = np.random.default_rng(20240917)
        for label, fn, lo, hi in (("h", self.h, 0.0, 10.0), ("h0", self.h0, -5.0, 5.0),
                                  ("h1", self.h1, -1.0, 5.0)):
            bad = _convexity_violations(fn, lo, hi, gen)
            if bad:
                raise ValueError(f"{label} failed the convexity spot check ({bad} violations)")
            if np.any(np.asarray(fn(np.linspace(lo, hi, 101))) < -1e-12):
                raise ValueError(f"{label} must be nonnegative")
        if isinstance(self.delta, Mapping):
            if any(float(v) < 0 for v in self.delta.values()):
                raise ValueError("delta must be nonnegative")
        elif float(self.delta) < 0:
            raise ValueError("delta must be nonnegative")

    @classmethod
    def entropic(cls, delta=1.0):
        return cls(_identity, _half_square, entropic_h1, delta=delta, name="entropic")

    @classmethod
    def quadratic(cls, delta=1.0):
        return cls(_identity, _half_square, _half_square, delta=delta, name="quadratic")

    @classmethod
    def custom(cls, h_points, h0_points, h1_points, delta=1.0):
        return cls(tabulated(h_points), tabulated(h0_points), tabulated(h1_points),
                   delta=delta, name="custom")

    def weights(self, triplet: LevyTriplet) -> np.ndarray:
        if isinstance(self.delta, Mapping):
            table = {float(k): float(v) for k, v in self.delta.items()}
            return np.array([table.get(a.size, 0.0) for a in triplet.atoms], dtype=float)
        return np.full(len(triplet.atoms), float(self.delta))

    def rate(self, theta0_values, theta1_values, triplet: LevyTriplet) -> np.ndarray:
        """Penalty integrand from coefficient values; ``theta1_values[..., i]`` is atom ``i``."""
        inner = np.asarray(self.h0(theta0_values), dtype=float)
        if triplet.atoms:
            w = self.weights(triplet) * triplet.rates
            h1v = np.asarray(self.h1(theta1_values), dtype=float)
            # zero-weight atoms contribute nothing even where h1 is infinite
            inner = inner + np.where(w > 0, h1v * w, 0.0).sum(axis=-1)
        return np.asarray(self.h(inner), dtype=float)

    def integrand(self, theta: GirsanovCoefficients, triplet: LevyTriplet, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        th1 = theta.theta1_on_atoms(t, triplet) if triplet.atoms else np.zeros(t.shape + (0,))
        return self.rate(theta.theta0_at(t), th1, triplet)


def penalty_quadrature(theta: GirsanovCoefficients, spec: PenaltySpec, triplet: LevyTriplet,
                       horizon: float) -> float:
    """Deterministic route: ``int_0^T`` of the integrand (``E_Q[1] = 1``); ``INF`` if divergent."""
    theta.admissibility(triplet, horizon)
    probe = spec.integrand(theta, triplet, np.linspace(0.0, horizon, 257))
    if not np.all(np.isfinite(probe)):
        return INF
    if theta.constant_in_time:
        return float(probe[0]) * horizon
    value, _ = integrate.quad(lambda t: float(spec.integrand(theta, triplet, t)), 0.0, horizon,
                              epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(value) if math.isfinite(value) else INF


def _cumulative_penalty(theta, spec, triplet, upper: np.ndarray) -> np.ndarray:
    if theta.constant_in_time:
        return upper * float(spec.integrand(theta, triplet, 0.0))
    return cumulative_integral(lambda u: spec.integrand(theta, triplet, u), upper)


def penalty_value(theta: GirsanovCoefficients, spec: PenaltySpec, triplet: LevyTriplet,
                  horizon: float, n_paths: int, rng: RngStream, steps: int = 50) -> Estimate:
    """Monte Carlo route: ``E_P[D_T * int_0^{T ^ tau0} integrand dt]``.

    Returns ``Estimate(INF, 0.0)`` when the integrand is not finite.
    """
    if not math.isfinite(penalty_quadrature(theta, spec, triplet, horizon)):
        return Estimate(INF, 0.0)
    paths = simulate_paths(triplet, horizon, steps, n_paths, rng)
    d = density_process(paths, theta)
    stop = np.minimum(d.tau0, horizon)
    return mc_estimate(d.terminal * _cumulative_penalty(theta, spec, triplet, stop))


def penalty_on_grid(density: DensityBatch, spec: PenaltySpec) -> np.ndarray:
    """Per-path ``sum_k D_{t_k} * integrand(t_k) dt_k`` (tower-property form of the penalty)."""
    paths = density.paths
    grid = paths.time_grid
    f = spec.integrand(density.theta, paths.triplet, grid[:-1])
    return (density.values[:, :-1] * f * np.diff(grid)).sum(axis=1)


# --------------------------------------------------------------------------
# risk measure over a parametric family


@dataclass(frozen=True)
class SearchFamily:
    """Constant coefficients ``(theta0, theta1)`` on a rectangular grid.

    ``theta1`` is shared by every atom.  Models without atoms collapse the
    ``theta1`` axis to ``{0}``.
    """

    theta0: tuple[float, ...]
    theta1: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        for axis in (self.theta0, self.theta1):
            if not axis or any(np.diff(axis) <= 0):
                raise ValueError("family axes must be nonempty and increasing")
        if min(self.theta1) < -1.0:
            raise ValueError("theta1 axis must stay >= -1")

    @classmethod
    def box(cls, theta0=(-1.0, 1.0, 21), theta1=(0.0, 0.0, 1)):
        return cls(tuple(np.linspace(*theta0[:2], int(theta0[2])).tolist()),
                   tuple(np.linspace(*theta1[:2], int(theta1[2])).tolist()))

    def for_model(self, triplet: LevyTriplet) -> "SearchFamily":
        return self if triplet.atoms else SearchFamily(self.theta0, (0.0,))

    @property
    def size(self) -> int:
        return len(self.theta0) * len(self.theta1)


@dataclass
class RiskProblem:
    triplet: LevyTriplet
    horizon: float
    position: Callable[[PathBatch], np.ndarray]
    spec: PenaltySpec
    family: SearchFamily
    clip: float = 8.0
    steps: int = 20

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError("clip bound must be positive")

    def payoff(self, paths: PathBatch, position=None) -> np.ndarray:
        x = np.asarray((position or self.position)(paths), dtype=float)
        return np.clip(x, -self.clip, self.clip)


class RiskResult(NamedTuple):
    value: float
    theta: tuple[float, float]
    se: float
    on_boundary: bool
    evaluations: int
    grid: np.ndarray          # objective on the family grid, shape (n0, n1)
    expectation: np.ndarray   # E_Q[-X] on the grid
    penalty: np.ndarray       # penalty on the grid


def golden_section_max(f, lo: float, hi: float, evals: int):
    """Maximise ``f`` on ``[lo, hi]`` with ``evals`` evaluations; returns (x, f(x))."""
    if evals < 2:
        x = 0.5 * (lo + hi)
        return x, f(x)
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(evals - 2):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


class RiskEvaluator:
    """Risk measure of positions on one fixed batch of paths.

    ``E_Q`` uses self-normalised weights ``D_T / mean(D_T)`` so constants are
    priced exactly; densities are cached per coefficient pair.
    """

    def __init__(self, problem: RiskProblem, paths: PathBatch):
        self.problem = problem
        self.paths = paths
        self.family = problem.family.for_model(problem.triplet)
        self._weights: dict[tuple[float, float], np.ndarray] = {}
        self._penalty: dict[tuple[float, float], float] = {}

    @classmethod
    def simulate(cls, problem: RiskProblem, n_paths: int, rng: RngStream):
        return cls(problem, simulate_paths(problem.triplet, problem.horizon, problem.steps,
                                           n_paths, rng))

    def coefficients(self, th0: float, th1: float) -> GirsanovCoefficients:
        return GirsanovCoefficients.constant(th0, th1 if self.problem.triplet.atoms else 0.0)

    def weights(self, th0: float, th1: float) -> np.ndarray:
        key = (float(th0), float(th1))
        if key not in self._weights:
            d = terminal_density(self.paths, self.coefficients(*key))
            mean = d.mean()
            self._weights[key] = d / mean if mean > 0 else np.zeros_like(d)
        return self._weights[key]

    def penalty(self, th0: float, th1: float) -> float:
        key = (float(th0), float(th1))
        if key not in self._penalty:
            self._penalty[key] = penalty_quadrature(self.coefficients(*key), self.problem.spec,
                                                    self.problem.triplet, self.problem.horizon)
        return self._penalty[key]

    def objective(self, th0: float, th1: float, loss: np.ndarray) -> float:
        pen = self.penalty(th0, th1)
        if not math.isfinite(pen):
            return -INF
        return float(self.weights(th0, th1) @ loss) / loss.size - pen

    def evaluate(self, position=None, budget: int | None = None,
                 payoff: np.ndarray | None = None) -> RiskResult:
        fam = self.family
        budget = fam.size if budget is None else int(budget)
        if budget < fam.size:
            raise ValueError(f"budget {budget} smaller than family grid {fam.size}")
        loss = -(payoff if payoff is not None else self.problem.payoff(self.paths, position))
        n0, n1 = len(fam.theta0), len(fam.theta1)
        expect = np.empty((n0, n1))
        pen = np.empty((n0, n1))
        for i, a in enumerate(fam.theta0):
            for j, b in enumerate(fam.theta1):
                pen[i, j] = self.penalty(a, b)
                expect[i, j] = float(self.weights(a, b) @ loss) / loss.size
        with np.errstate(invalid="ignore"):
            obj = np.where(np.isfinite(pen), expect - np.where(np.isfinite(pen), pen, 0.0), -INF)
        flat = int(np.argmax(obj))
        i, j = divmod(flat, n1)
        best = (fam.theta0[i], fam.theta1[j])
        best_val = float(obj[i, j])
        boundary = (n0 > 1 and i in (0, n0 - 1)) or (n1 > 1 and j in (0, n1 - 1))

        spare = budget - fam.size
        used = fam.size
        axes = [(0, fam.theta0, i)] + ([(1, fam.theta1, j)] if n1 > 1 else [])
        sweeps = 2
        per_axis = spare // (sweeps * len(axes)) if spare > 0 else 0
        if per_axis >= 2:
            for _ in range(sweeps):
                for axis, values, k in axes:
                    lo = values[max(k - 1, 0)]
                    hi = values[min(k + 1, len(values) - 1)]

                    def f(v, axis=axis):
                        pt = (v, best[1]) if axis == 0 else (best[0], v)
                        return self.objective(pt[0], pt[1], loss)

                    x, fx = golden_section_max(f, lo, hi, per_axis)
                    used += per_axis
                    if fx > best_val:
                        best_val = fx
                        best = (x, best[1]) if axis == 0 else (best[0], x)

        samples = self.weights(*best) * loss
        se = float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
        return RiskResult(best_val, (float(best[0]), float(best[1])), se, bool(boundary), used,
                          obj, expect, pen)


def risk_measure(problem: RiskProblem, optimizer_budget: int, n_paths: int,
                 rng: RngStream) -> RiskResult:
    """``rho(X)`` over the search family (grid, then coordinate-wise golden-section)."""
    return RiskEvaluator.simulate(problem, n_paths, rng).evaluate(budget=optimizer_budget)


# --------------------------------------------------------------------------
# convexity and minimality evidence


@dataclass
class ConvexityReport:
    lam: float
    penalty_a: Estimate
    penalty_b: Estimate
    mixture: Estimate
    combination: float
    margin: Estimate          # combination - mixture, per path
    holds: bool
    degenerate_paths: int
    quadrature_a: float
    quadrature_b: float


def convexity_evidence(theta_a: GirsanovCoefficients, theta_b: GirsanovCoefficients, lam: float,
                       spec: PenaltySpec, triplet: LevyTriplet, horizon: float, n_paths: int,
                       rng: RngStream, steps: int = 50, paths: PathBatch | None = None
                       ) -> ConvexityReport:
    """Compare the penalty of ``lam Q_a + (1-lam) Q_b`` with the mixed penalties.

    The mixture's coefficients are recovered per path from the two densities::

        theta^lam = (lam D_a theta_a + (1-lam) D_b theta_b) / (lam D_a + (1-lam) D_b)

    evaluated at grid points (left limits).  All three penalties use the
    ``E_P[int D_t integrand_t dt]`` form on the same paths.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if paths is None:
        paths = simulate_paths(triplet, horizon, steps, n_paths, rng)
    da = density_process(paths, theta_a)
    db = density_process(paths, theta_b)
    grid = paths.time_grid
    t = grid[:-1]
    dt = np.diff(grid)

    pa = penalty_on_grid(da, spec)
    pb = penalty_on_grid(db, spec)
    Da, Db = da.values[:, :-1], db.values[:, :-1]
    Dl = lam * Da + (1.0 - lam) * Db
    live = Dl > 0
    safe = np.where(live, Dl, 1.0)
    wa = np.where(live, lam * Da / safe, 0.0)
    wb = np.where(live, (1.0 - lam) * Db / safe, 0.0)
    th0 = wa * theta_a.theta0_at(t) + wb * theta_b.theta0_at(t)
    if triplet.atoms:
        th1 = (wa[..., None] * theta_a.theta1_on_atoms(t, triplet)
               + wb[..., None] * theta_b.theta1_on_atoms(t, triplet))
    else:
        th1 = np.zeros(th0.shape + (0,))
    rate = spec.rate(th0, th1, triplet)
    pm = np.where(live, Dl * rate, 0.0) @ dt

    combo = lam * pa + (1.0 - lam) * pb
    degenerate = int(np.count_nonzero(~live[:, -1] & (lam * da.terminal + (1 - lam) * db.terminal == 0)))
    margin = mc_estimate(combo - pm)
    mixture = mc_estimate(pm)
    return ConvexityReport(
        lam=float(lam),
        penalty_a=mc_estimate(pa),
        penalty_b=mc_estimate(pb),
        mixture=mixture,
        combination=float(combo.mean()),
        margin=margin,
        holds=bool(mixture.value <= combo.mean() + 3.0 * margin.se
                   + 1e-12 * (1.0 + abs(combo.mean()))),
        degenerate_paths=degenerate,
        quadrature_a=penalty_quadrature(theta_a, spec, triplet, horizon),
        quadrature_b=penalty_quadrature(theta_b, spec, triplet, horizon),
    )


def feature_sampler(features: Mapping[str, Callable[[PathBatch], np.ndarray]], bound: float):
    """Positions ``X = -sum_j a_j phi_j`` with ``a`` on a dyadic grid in ``[-bound, bound]^d``.

    ``sampler(level)`` returns ``(label, functional)`` pairs; grids are nested
    across levels, so a larger level never loses a position.
    """
    names = list(features)

    def sampler(level: int):
        ticks = np.linspace(-bound, bound, 2 ** int(level) + 1)
        mesh = np.stack(np.meshgrid(*([ticks] * len(names)), indexing="ij"), -1).reshape(-1, len(names))
        out = []
        for coef in mesh:
            def functional(paths, coef=coef):
                return -sum(c * np.asarray(features[n](paths), float) for c, n in zip(coef, names))
            label = ",".join(f"{n}={c!r}" for n, c in zip(names, coef.tolist()))
            out.append((label, functional))
        return out

    return sampler


def brownian_terminal(paths: PathBatch) -> np.ndarray:
    return paths.brownian[:, -1]


@dataclass
class MinimalityRow:
    theta: tuple[float, float]
    level: int
    lower_bound: float
    penalty: float
    gap: float
    se: float
    within: bool
    best_position: str


@dataclass
class MinimalityReport:
    rows: list[MinimalityRow] = field(default_factory=list)
    monotone: bool = True

    @property
    def ok(self) -> bool:
        return self.monotone and all(r.within for r in self.rows)


def minimality_evidence(problem: RiskProblem, q_thetas: Sequence[tuple[float, float]],
                        position_sampler, levels: Sequence[int], n_paths: int, rng: RngStream,
                        optimizer_budget: int | None = None, tol: float = 1e-6
                        ) -> MinimalityReport:
    """Biduality lower bound ``sup_X {E_Q[-X] - rho(X)}`` against the penalty, per measure.

    Every measure is a constant coefficient pair; ``rho`` is evaluated on one
    fixed batch of paths.  The gap ``penalty - lower bound`` must not grow
    with the sampling level.
    """
    ev = RiskEvaluator.simulate(problem, n_paths, rng)
    budget = optimizer_budget if optimizer_budget is not None else ev.family.size
    rho_cache: dict[str, float] = {}
    report = MinimalityReport()
    for th in q_thetas:
        th = (float(th[0]), float(th[1]))
        pen = ev.penalty(*th)
        w = ev.weights(*th)
        prev_gap = INF
        for level in levels:
            best, best_label, best_se = -INF, "", 0.0
            for label, functional in position_sampler(level):
                x = problem.payoff(ev.paths, functional)
                if label not in rho_cache:
                    rho_cache[label] = ev.evaluate(payoff=x, budget=budget).value
                samples = w * -x
                lb = float(samples.mean()) - rho_cache[label]
                if lb > best:
                    best, best_label = lb, label
                    best_se = float(samples.std(ddof=1) / math.sqrt(samples.size))
            gap = pen - best
            within = best <= pen + tol + 3.0 * best_se
            if gap > prev_gap + 1e-12:
                report.monotone = False
            prev_gap = gap
            report.rows.append(MinimalityRow(th, int(level), best, pen, gap, best_se, bool(within),
                                             best_label))
    return report
