"""Convex risk measures, minimal penalties and biconjugates on finite spaces.

Measures ``Q << P`` are represented by densities ``Z = dQ/dP``; suprema over
measures run over a barycentric grid of the simplex spanned by the atoms
charged by ``P``, followed by one Nelder-Mead refinement from the best grid
point.  Suprema over positions use a dyadic hypercube grid.  Both exploit
cash invariance by pinning the last coordinate to zero.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

INF = math.inf

AXIOM_TOL = 1e-9
DUALITY_TOL = 1e-6


class GridBoundaryWarning(UserWarning):
    """The maximiser sits on the edge of a bounded search grid."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FiniteSpace:
    atoms: tuple[str, ...]
    reference_weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(str(a) for a in self.atoms)
        w = np.asarray(self.reference_weights, dtype=float)
        if not atoms:
            raise ValueError("a finite space needs at least one atom")
        if len(set(atoms)) != len(atoms):
            raise ValueError("atom labels must be unique")
        if w.shape != (len(atoms),):
            raise ValueError("one reference weight per atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("reference weights must be finite and >= 0")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"reference weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "reference_weights", w)

    @classmethod
    def uniform(cls, n: int) -> "FiniteSpace":
        return cls(tuple(f"w{i}" for i in range(n)), np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.reference_weights > 0)[0]

    def densities_from_probabilities(self, q: np.ndarray) -> np.ndarray:
        """Rows of measures on the support -> rows of full-length densities."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        sup = self.support
        z = np.zeros((q.shape[0], self.size))
        z[:, sup] = q / self.reference_weights[sup]
        return z


@dataclass(frozen=True)
class DensityVector:
    """``Z = dQ/dP``; entries on P-null atoms are forced to 0."""

    space: FiniteSpace
    values: np.ndarray

    def __post_init__(self):
        z = np.array(self.values, dtype=float)
        if z.shape != (self.space.size,):
            raise ValueError("dimension mismatch between density and space")
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError("density values must be finite and >= 0")
        z[self.space.reference_weights == 0] = 0.0
        mass = float(z @ self.space.reference_weights)
        if abs(mass - 1.0) > 1e-10:
            raise ValueError(f"density integrates to {mass!r}, not 1")
        z.setflags(write=False)
        object.__setattr__(self, "values", z)

    @classmethod
    def from_probabilities(cls, space: FiniteSpace, q) -> "DensityVector":
        q = np.asarray(q, dtype=float)
        if q.shape != (space.size,):
            raise ValueError("dimension mismatch between measure and space")
        if np.any(q[space.reference_weights == 0] > 0):
            raise ValueError("measure charges a P-null atom (not absolutely continuous)")
        return cls(space, space.densities_from_probabilities(q[space.support])[0])

    @property
    def probabilities(self) -> np.ndarray:
        return self.values * self.space.reference_weights


@dataclass(frozen=True)
class Position:
    payoffs: np.ndarray

    def __post_init__(self):
        x = np.array(self.payoffs, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("positions must be a finite vector")
        x.setflags(write=False)
        object.__setattr__(self, "payoffs", x)


@dataclass(frozen=True, eq=False)
class FinitePenalty:
    """Extended-real penalty on densities.

    ``batch`` maps an ``(n, |Omega|)`` array of densities to ``n`` values in
    ``R u {INF}``.  ``risk`` optionally gives the induced risk measure in
    closed form, vectorised over rows of positions.
    """

    name: str
    batch: Callable[[np.ndarray], np.ndarray]
    space: FiniteSpace
    risk: Callable[[np.ndarray], np.ndarray] | None = None
    domain_description: str = "simplex of Q << P"

    def evaluate(self, z: DensityVector | np.ndarray) -> float:
        values = z.values if isinstance(z, DensityVector) else np.asarray(z, dtype=float)
        return float(self.batch(values[None, :])[0])

    def __call__(self, z) -> float:
        return self.evaluate(z)


def zero_penalty(space: FiniteSpace) -> FinitePenalty:
    return FinitePenalty("zero", lambda z: np.zeros(z.shape[0]), space,
                         risk=worst_case_risk(space))


def worst_case_penalty(space: FiniteSpace) -> FinitePenalty:
    # every density handled here already satisfies Q << P, so the +INF branch is structural
    return FinitePenalty("worst_case", lambda z: np.zeros(z.shape[0]), space,
                         risk=worst_case_risk(space),
                         domain_description="0 on Q << P, +inf elsewhere")


def entropic_penalty(space: FiniteSpace, gamma: float = 1.0) -> FinitePenalty:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    p = space.reference_weights

    def batch(z):
        return special.xlogy(z, z) @ p / gamma

    return FinitePenalty(f"entropic:{gamma!r}", batch, space, risk=entropic_risk(space, gamma))


def linear_penalty(space: FiniteSpace, costs: Sequence[float]) -> FinitePenalty:
    c = np.asarray(costs, dtype=float)
    if c.shape != (space.size,):
        raise ValueError("one cost per atom")
    p = space.reference_weights
    sup = space.support

    def risk(x):
        x = np.atleast_2d(x)
        return np.max(-x[:, sup] - c[sup], axis=1)

    return FinitePenalty("linear:" + ",".join(repr(float(v)) for v in c),
                         lambda z: z @ (p * c), space, risk=risk)


def penalty_from_preset(space: FiniteSpace, preset: str) -> FinitePenalty:
    """``"zero"``, ``"worst_case"``, ``"entropic:<gamma>"`` or ``"linear:<c1>,...,<cn>"``."""
    kind, _, arg = preset.partition(":")
    if kind == "zero":
        return zero_penalty(space)
    if kind == "worst_case":
        return worst_case_penalty(space)
    if kind == "entropic":
        return entropic_penalty(space, float(arg) if arg else 1.0)
    if kind == "linear":
        return linear_penalty(space, [float(v) for v in arg.split(",")])
    raise ValueError(f"unknown finite penalty preset {preset!r}")


def entropic_risk(space: FiniteSpace, gamma: float = 1.0):
    p = space.reference_weights
    sup = space.support

    def rho(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return special.logsumexp(-gamma * x[:, sup], b=p[sup], axis=1) / gamma

    return rho


def worst_case_risk(space: FiniteSpace):
    sup = space.support

    def rho(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -np.min(x[:, sup], axis=1)

    return rho


# --------------------------------------------------------------------------
# simplex grids


@lru_cache(maxsize=64)
def simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """All points of the ``dim``-simplex with coordinates in ``{0, 1/n, ..., 1}``."""
    if dim == 1:
        return np.ones((1, 1))
    n = int(resolution)
    rows = []
    for bars in itertools.combinations(range(n + dim - 1), dim - 1):
        b = np.array((-1,) + bars + (n + dim - 1,))
        rows.append(np.diff(b) - 1)
    out = np.array(rows, dtype=float) / n
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def nested_simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """Union of the grids of every resolution ``1..n`` (finer grids never lose points)."""
    if dim == 1:
        return np.ones((1, 1))
    out = np.concatenate([simplex_grid(dim, m) for m in range(1, int(resolution) + 1)])
    out.setflags(write=False)
    return out


def _simplex_point(y: np.ndarray) -> np.ndarray | None:
    last = 1.0 - y.sum()
    if np.any(y < 0) or last < 0:
        return None
    return np.append(y, last)


def _nelder_mead_max(f, x0, xatol=1e-11, fatol=1e-13, maxiter=4000):
    res = optimize.minimize(lambda v: -f(v), x0, method="Nelder-Mead",
                            options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter,
                                     "maxfev": maxiter * 2, "adaptive": len(x0) > 3})
    return res.x, -res.fun


def _sup_over_measures(space: FiniteSpace, penalty: FinitePenalty, linear: np.ndarray,
                       grid: np.ndarray, refine: bool = True, xatol: float = 1e-11
                       ) -> tuple[float, np.ndarray]:
    """``sup_q { q . linear - psi(q) }`` over measures on the support."""
    sup = space.support
    z = space.densities_from_probabilities(grid)
    pen = np.asarray(penalty.batch(z), dtype=float)
    finite = np.isfinite(pen)
    if not np.any(finite):
        raise ValueError(f"penalty {penalty.name} is infinite on the whole grid")
    obj = np.where(finite, grid @ linear[sup] - np.where(finite, pen, 0.0), -INF)
    k = int(np.argmax(obj))
    best, q_best = float(obj[k]), grid[k]
    if refine and sup.size > 1:
        p_sup, lin = space.reference_weights[sup], linear[sup]
        z = np.zeros((1, space.size))

        def f(y):
            last = 1.0 - y.sum()
            if last < 0 or (y < 0).any():
                return -INF
            q = np.append(y, last)
            z[0, sup] = q / p_sup
            val = float(penalty.batch(z)[0])
            return -INF if not math.isfinite(val) else float(q @ lin) - val
        y, val = _nelder_mead_max(f, q_best[:-1].copy(), xatol=xatol)
        if val > best:
            best, q_best = val, _simplex_point(y)
    return best, q_best


def risk_from_penalty(space: FiniteSpace, penalty: FinitePenalty, x: Position | np.ndarray,
                      grid_resolution: int, refine: bool = True) -> float:
    """``rho(X) = sup_Q { E_Q[-X] - psi(Q) }`` on the nested simplex grid plus refinement."""
    payoff = x.payoffs if isinstance(x, Position) else np.asarray(x, dtype=float)
    if payoff.shape != (space.size,):
        raise ValueError("dimension mismatch between position and space")
    if not np.all(np.isfinite(payoff)):
        raise ValueError("position has non-finite entries")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    grid = nested_simplex_grid(space.support.size, int(grid_resolution))
    value, _ = _sup_over_measures(space, penalty, -payoff, grid, refine)
    return value


def penalty_risk(space: FiniteSpace, penalty: FinitePenalty, grid_resolution: int = 24):
    """Row-wise risk evaluator backed by :func:`risk_from_penalty`."""

    def rho(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array([risk_from_penalty(space, penalty, row, grid_resolution) for row in x])

    return rho


# --------------------------------------------------------------------------
# positions and biduality


@dataclass(frozen=True)
class PositionGrid:
    """Hypercube ``[-bound, bound]`` per free coordinate, refined dyadically.

    Level ``L`` puts ``2^L + 1`` points on each axis, so every level contains
    the previous ones (and ``X = 0``).
    """

    bound: float = 4.0
    levels: tuple[int, ...] = (2, 3, 4)
    tol: float | None = None
    refine: bool = True

    @classmethod
    def for_scale(cls, scale: float, **kw) -> "PositionGrid":
        return cls(bound=4.0 * max(float(scale), 1e-12), **kw)

    def points(self, dim: int, level: int) -> np.ndarray:
        ticks = np.linspace(-self.bound, self.bound, 2 ** int(level) + 1)
        if dim == 0:
            return np.zeros((1, 0))
        return np.stack(np.meshgrid(*([ticks] * dim), indexing="ij"), -1).reshape(-1, dim)


def _embed_positions(space: FiniteSpace, free: np.ndarray) -> np.ndarray:
    """Free coordinates on all support atoms but the last; last support atom and null atoms at 0."""
    sup = space.support
    x = np.zeros((free.shape[0], space.size))
    x[:, sup[:-1]] = free
    return x


@dataclass
class MinimalPenaltyResult:
    value: float
    levels: list[float] = field(default_factory=list)
    argmax: np.ndarray | None = None


def minimal_penalty(space: FiniteSpace, rho, q: DensityVector,
                    position_grid: PositionGrid = PositionGrid(),
                    detail: bool = False):
    """Biduality lower bound ``sup_X { E_Q[-X] - rho(X) }`` over sampled positions.

    ``rho`` maps rows of positions to risk values and must be cash invariant
    (checked by :func:`check_axioms`).  The result never falls below
    ``-rho(0)`` since ``X = 0`` is on every level.  If ``position_grid.tol``
    is set, a jump larger than ``tol`` between the last two levels raises
    :class:`ConvergenceError`.
    """
    if q.space is not space and q.space != space:
        raise ValueError("density lives on a different space")
    qp = q.probabilities
    dim = space.support.size - 1
    history = []
    best_val, best_x = -INF, np.zeros(space.size)
    for level in position_grid.levels:
        x = _embed_positions(space, position_grid.points(dim, level))
        vals = -(x @ qp) - np.asarray(rho(x), dtype=float)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_x = float(vals[k]), x[k]
        history.append(best_val)
    if position_grid.refine and dim > 0:
        sup = space.support

        def f(free):
            xx = _embed_positions(space, free[None, :])
            return float(-(xx[0] @ qp) - rho(xx)[0])

        free, val = _nelder_mead_max(f, best_x[sup[:-1]].copy())
        if val > best_val:
            best_val, best_x = val, _embed_positions(space, free[None, :])[0]
        history.append(best_val)
    if position_grid.tol is not None and len(history) > 1:
        if abs(history[-1] - history[-2]) > position_grid.tol:
            raise ConvergenceError(
                f"minimal penalty moved by {history[-1] - history[-2]:.3g} at the last refinement")
    if detail:
        return MinimalPenaltyResult(best_val, history, best_x)
    return best_val


def fenchel_conjugate(space: FiniteSpace, penalty: FinitePenalty, u: np.ndarray,
                      inner_resolution: int = 20, refine: bool = True, xatol: float = 1e-11
                      ) -> float:
    """``Psi*(U) = sup_Z { E_P[Z U] - Psi(Z) }`` over densities of measures ``Q << P``."""
    grid = simplex_grid(space.support.size, int(inner_resolution))
    value, _ = _sup_over_measures(space, penalty, np.asarray(u, dtype=float), grid, refine,
                                  xatol)
    return value


def fenchel_biconjugate(space: FiniteSpace, penalty: FinitePenalty, q: DensityVector,
                        u_bound: float = 8.0, u_level: int = 3, inner_resolution: int = 20
                        ) -> float:
    """``Psi**(Z) = sup_U { E_P[Z U] - Psi*(U) }``.

    The outer supremum runs over a coarse hypercube of ``U`` (last support
    coordinate pinned to 0) using grid-only inner suprema, then Nelder-Mead
    over ``U`` with refined inner suprema.  Emits
    :class:`GridBoundaryWarning` if the best ``U`` touches the hypercube.
    """
    sup = space.support
    qp = q.probabilities[sup]
    dim = sup.size - 1
    inner = simplex_grid(sup.size, int(inner_resolution))
    pen = np.asarray(penalty.batch(space.densities_from_probabilities(inner)), dtype=float)
    finite = np.isfinite(pen)
    if not np.any(finite):
        raise ValueError(f"penalty {penalty.name} is infinite on the whole grid")
    inner, pen = inner[finite], pen[finite]

    ticks = np.linspace(-u_bound, u_bound, 2 ** int(u_level) + 1)
    if dim == 0:
        return float(-fenchel_conjugate(space, penalty, np.zeros(space.size), inner_resolution))
    free = np.stack(np.meshgrid(*([ticks] * dim), indexing="ij"), -1).reshape(-1, dim)
    us = np.concatenate([free, np.zeros((free.shape[0], 1))], axis=1)
    conj = np.max(us @ inner.T - pen, axis=1)
    outer = us @ qp - conj
    k = int(np.argmax(outer))

    def full_u(v):
        u = np.zeros(space.size)
        u[sup[:-1]] = v
        return u

    def g(v):
        return float(v @ qp[:-1]) - fenchel_conjugate(space, penalty, full_u(v), inner_resolution,
                                                      xatol=1e-7)

    v, val = _nelder_mead_max(g, free[k].copy(), xatol=1e-7, fatol=1e-12)
    if np.any(np.abs(v) >= u_bound):
        warnings.warn(f"biconjugate maximiser reached the U bound {u_bound}",
                      GridBoundaryWarning, stacklevel=2)
    return max(val, g(free[k]))


# --------------------------------------------------------------------------
# axioms and distances


@dataclass
class AxiomReport:
    trials: int
    violations: list[tuple[str, int, float]] = field(default_factory=list)

    def count(self, axiom: str | None = None) -> int:
        return sum(1 for v in self.violations if axiom is None or v[0] == axiom)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_axioms(space: FiniteSpace, rho, trials: int, seed: int, tol: float = AXIOM_TOL,
                 scale: float = 5.0) -> AxiomReport:
    """Random monotonicity, cash-invariance and convexity checks; report only."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gen = np.random.default_rng(seed)
    n = space.size
    x = gen.uniform(-scale, scale, (trials, n))
    y = x + gen.uniform(0.0, scale / 2, (trials, n))
    a = gen.uniform(-scale, scale, trials)
    lam = gen.uniform(0.0, 1.0, trials)
    z = gen.uniform(-scale, scale, (trials, n))
    rx, ry = np.asarray(rho(x), float), np.asarray(rho(y), float)
    rxa = np.asarray(rho(x + a[:, None]), float)
    rmix = np.asarray(rho(lam[:, None] * x + (1 - lam[:, None]) * z), float)
    rz = np.asarray(rho(z), float)

    report = AxiomReport(trials)
    mono = ry - rx                      # Y >= X  =>  rho(Y) <= rho(X)
    cash = np.abs(rxa - (rx - a))
    conv = rmix - (lam * rx + (1 - lam) * rz)
    for i in np.nonzero(mono > tol)[0]:
        report.violations.append(("monotonicity", int(i), float(mono[i])))
    for i in np.nonzero(cash > tol)[0]:
        report.violations.append(("translation", int(i), float(cash[i])))
    for i in np.nonzero(conv > tol)[0]:
        report.violations.append(("convexity", int(i), float(conv[i])))
    return report


def total_variation_distance(q1: DensityVector, q2: DensityVector, space: FiniteSpace) -> float:
    """``sup_A |Q1(A) - Q2(A)|`` = half the weighted L1 distance of the densities."""
    if q1.values.shape != q2.values.shape or q1.values.shape != (space.size,):
        raise ValueError("dimension mismatch")
    return 0.5 * float(np.abs(q1.values - q2.values) @ space.reference_weights)


def l1_distance(q1: DensityVector, q2: DensityVector, space: FiniteSpace) -> float:
    return float(np.abs(q1.values - q2.values) @ space.reference_weights)
