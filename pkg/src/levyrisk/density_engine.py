"""Density processes D = E(Z^theta) built from Girsanov coefficients.

For deterministic coefficients ``theta0(t)`` and ``theta1(t, x)`` the density
on a simulated path is::

    ln D_t = int theta0 dW - 1/2 int theta0^2 ds - int sum_i theta1(s, x_i) lam_i ds
             + sum_{jumps s <= t} ln(1 + theta1(s, dL_s))

until the first jump with ``theta1 = -1`` (the time tau0), after which D is 0.
The Brownian integral and the ``theta0^2`` term are left-point sums on the
grid, which keeps every discretised step an exact martingale increment.  The
continuous part of ``ln D`` is therefore updated at grid points only; the
compensator is integrated exactly in continuous time so that jump-time
values ``D_{s-}`` are consistent with the jump record.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy import integrate

from .levy_model import LevyPath, LevyTriplet, PathBatch, RngStream, simulate_paths

INF = math.inf

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


class Estimate(NamedTuple):
    value: float
    se: float


def mc_estimate(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise ValueError("no samples")
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(samples.mean()), se)


def cumulative_integral(f: Callable[[np.ndarray], np.ndarray], upper) -> np.ndarray:
    """``int_0^s f(u) du`` for every entry ``s`` of ``upper`` (32-point Gauss-Legendre)."""
    s = np.asarray(upper, dtype=float)
    u = 0.5 * s[..., None] * (_GL_NODES + 1.0)
    vals = np.asarray(f(u), dtype=float)
    vals = np.broadcast_to(vals, u.shape)
    return 0.5 * s * (vals * _GL_WEIGHTS).sum(axis=-1)


class Admissibility(NamedTuple):
    brownian_energy: float
    jump_energy: float


@dataclass(frozen=True, eq=False)
class GirsanovCoefficients:
    """Deterministic Brownian coefficient ``theta0(t)`` and jump coefficient ``theta1(t, x)``.

    Both callables must accept numpy arrays and broadcast.  Passing
    ``triplet`` and ``horizon`` validates ``theta1 >= -1`` on the atoms and
    the two energy integrals immediately.
    """

    theta0: Callable
    theta1: Callable
    label: str = ""
    constant_in_time: bool = False
    triplet: LevyTriplet | None = None
    horizon: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.triplet is not None and self.horizon is not None:
            self.admissibility(self.triplet, self.horizon)

    # construction helpers ------------------------------------------------
    @classmethod
    def constant(cls, theta0: float = 0.0, theta1: float | Mapping[float, float] = 0.0, **kw):
        c0 = float(theta0)
        if isinstance(theta1, Mapping):
            return cls.per_atom(c0, theta1, **kw)
        c1 = float(theta1)
        label = kw.pop("label", f"const:{c0!r},{c1!r}")
        return cls(lambda t: np.full(np.shape(t), c0),
                   lambda t, x: np.full(np.broadcast(t, x).shape, c1),
                   label=label, constant_in_time=True, **kw)

    @classmethod
    def per_atom(cls, theta0: float, table: Mapping[float, float], default: float = 0.0, **kw):
        """Time-constant ``theta1`` looked up per jump size; sizes missing from the table get ``default``."""
        c0 = float(theta0)
        keys = np.array(sorted(float(k) for k in table), dtype=float)
        vals = np.array([float(table[k]) for k in sorted(table, key=float)], dtype=float)

        def theta1(t, x):
            t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
            out = np.full(x.shape, float(default))
            if keys.size:
                idx = np.clip(np.searchsorted(keys, x), 0, keys.size - 1)
                hit = keys[idx] == x
                out[hit] = vals[idx[hit]]
            return out

        label = kw.pop("label", f"per-atom:{c0!r}")
        return cls(lambda t: np.full(np.shape(t), c0), theta1, label=label,
                   constant_in_time=True, **kw)

    @classmethod
    def linear_in_t(cls, a0: float, b0: float, a1: float, b1: float, **kw):
        """``theta0 = a0 + b0 t`` and ``theta1 = a1 + b1 t`` (same for every size)."""
        label = kw.pop("label", f"linear:{a0!r},{b0!r},{a1!r},{b1!r}")
        return cls(lambda t: a0 + b0 * np.asarray(t, float),
                   lambda t, x: np.broadcast_to(a1 + b1 * np.asarray(t, float),
                                                np.broadcast(t, x).shape).copy(),
                   label=label, constant_in_time=(b0 == 0 and b1 == 0), **kw)

    # evaluation -----------------------------------------------------------
    def theta0_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.theta0(t), dtype=float), t.shape).astype(float)

    def theta1_at(self, t, x) -> np.ndarray:
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        return np.broadcast_to(np.asarray(self.theta1(t, x), dtype=float), t.shape).astype(float)

    def theta1_on_atoms(self, t, triplet: LevyTriplet) -> np.ndarray:
        """Shape ``t.shape + (n_atoms,)``."""
        t = np.asarray(t, dtype=float)
        sizes = triplet.sizes
        return self.theta1_at(t[..., None], np.broadcast_to(sizes, t.shape + sizes.shape))

    def compensator_rate(self, t, triplet: LevyTriplet) -> np.ndarray:
        """``sum_i theta1(t, x_i) lam_i``."""
        if not triplet.atoms:
            return np.zeros(np.shape(t))
        return self.theta1_on_atoms(t, triplet) @ triplet.rates

    def cumulative_compensator(self, s, triplet: LevyTriplet) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not triplet.atoms:
            return np.zeros(s.shape)
        if self.constant_in_time:
            return s * float(self.compensator_rate(0.0, triplet))
        return cumulative_integral(lambda u: self.compensator_rate(u, triplet), s)

    def admissibility(self, triplet: LevyTriplet, horizon: float) -> Admissibility:
        """Energy integrals over [0, T]; raises if ``theta1 < -1`` on some atom."""
        key = (triplet, float(horizon))
        if key in self._cache:
            return self._cache[key]
        probe = np.linspace(0.0, horizon, 257)
        if triplet.atoms:
            th1 = self.theta1_on_atoms(probe, triplet)
            if np.any(th1 < -1.0) or not np.all(np.isfinite(th1)):
                raise ValueError(f"theta1 must be finite and >= -1 on every atom ({self.label})")
        b_energy, _ = integrate.quad(lambda t: float(self.theta0_at(t)) ** 2, 0.0, horizon,
                                     epsabs=1e-10, limit=200)
        j_energy = 0.0
        if triplet.atoms:
            j_energy, _ = integrate.quad(
                lambda t: float((self.theta1_on_atoms(t, triplet) ** 2) @ triplet.rates),
                0.0, horizon, epsabs=1e-10, limit=200)
        if not (math.isfinite(b_energy) and math.isfinite(j_energy)):
            raise ValueError(f"coefficients not admissible on [0, {horizon}] ({self.label})")
        out = Admissibility(b_energy, j_energy)
        self._cache[key] = out
        return out


@dataclass(frozen=True)
class DensityBatch:
    """Density values for every path of a batch.

    Grid arrays have shape ``(n_paths, M+1)``.  Per-jump arrays follow the
    batch's flat jump order: ``left`` is ``D_{s-}`` and ``right`` is ``D_s``.
    """

    paths: PathBatch
    theta: GirsanovCoefficients
    values: np.ndarray
    tau0: np.ndarray
    log_brownian: np.ndarray
    log_drift: np.ndarray
    log_compensator: np.ndarray
    log_jump: np.ndarray
    left: np.ndarray
    right: np.ndarray
    theta1_at_jump: np.ndarray
    theta0_grid: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def killed(self) -> np.ndarray:
        return np.isfinite(self.tau0)

    def log_sum(self) -> np.ndarray:
        return self.log_brownian + self.log_drift[None, :] + self.log_compensator[None, :] + self.log_jump


@dataclass(frozen=True)
class DensityPath:
    """Density along one path: grid values, jump-time values and tau0."""

    time_grid: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_left: np.ndarray
    jump_values: np.ndarray
    tau0: float
    log_parts: dict

    def at_time(self, t: float) -> float:
        """Value at ``t``: grid continuous part plus every jump with ``s <= t``."""
        k = int(np.searchsorted(self.time_grid, t, side="right")) - 1
        if t >= self.tau0:
            return 0.0
        cont = self.values[k]
        jumps = (self.jump_times > self.time_grid[k]) & (self.jump_times <= t)
        if not np.any(jumps):
            return float(cont)
        return float(self.jump_values[np.nonzero(jumps)[0][-1]])


def _group_start(jump_path: np.ndarray) -> np.ndarray:
    return np.searchsorted(jump_path, jump_path, side="left")


def density_process(paths: PathBatch, theta: GirsanovCoefficients) -> DensityBatch:
    """Build ``D = E(Z^theta)`` on every path of ``paths``."""
    triplet, grid = paths.triplet, paths.time_grid
    theta.admissibility(triplet, paths.horizon)
    n, m1 = paths.brownian.shape
    dt = np.diff(grid)

    th0 = theta.theta0_at(grid[:-1])
    dW = np.diff(paths.brownian, axis=1)
    log_b = np.zeros((n, m1))
    np.cumsum(dW * th0, axis=1, out=log_b[:, 1:])
    log_d = np.zeros(m1)
    log_d[1:] = -0.5 * np.cumsum(th0 ** 2 * dt)
    log_c = -theta.cumulative_compensator(grid, triplet)

    k = paths.jump_time.size
    th1_j = theta.theta1_at(paths.jump_time, paths.jump_size) if k else np.zeros(0)
    if np.any(th1_j < -1.0):
        raise ValueError("theta1 < -1 at a recorded jump")
    kill = th1_j == -1.0
    jlog = np.where(kill, 0.0, np.log1p(np.where(kill, 0.0, th1_j)))

    tau0 = np.full(n, INF)
    if np.any(kill):
        # jumps are time-sorted within each path, so the first hit per path wins
        kp, kt = paths.jump_path[kill], paths.jump_time[kill]
        np.minimum.at(tau0, kp, kt)

    log_j = np.zeros((n, m1))
    if k:
        inc = np.zeros((n, m1))
        np.add.at(inc, (paths.jump_path, paths.jump_slot), jlog)
        log_j = np.cumsum(inc, axis=1)

    log_sum = log_b + log_d[None, :] + log_c[None, :] + log_j
    alive = grid[None, :] < tau0[:, None]
    values = np.where(alive, np.exp(log_sum), 0.0)

    if k:
        cs = np.concatenate([[0.0], np.cumsum(jlog)])
        idx = np.arange(k)
        before = cs[idx] - cs[_group_start(paths.jump_path)]
        prev = paths.jump_slot - 1
        cont = (log_b[paths.jump_path, prev] + log_d[prev]
                - theta.cumulative_compensator(paths.jump_time, triplet))
        left_log = cont + before
        tau_j = tau0[paths.jump_path]
        left = np.where(paths.jump_time <= tau_j, np.exp(left_log), 0.0)
        right = np.where(paths.jump_time < tau_j, np.exp(left_log + jlog), 0.0)
    else:
        left = right = np.zeros(0)

    return DensityBatch(paths, theta, values, tau0, log_b, log_d, log_c, log_j,
                        left, right, th1_j, th0)


def terminal_density(paths: PathBatch, theta: GirsanovCoefficients) -> np.ndarray:
    """``D_T`` only; same discretisation as :func:`density_process`, cheaper."""
    triplet, grid = paths.triplet, paths.time_grid
    theta.admissibility(triplet, paths.horizon)
    th0 = theta.theta0_at(grid[:-1])
    W = paths.brownian
    log = W[:, 1:] @ th0 - W[:, :-1] @ th0
    log = log - 0.5 * float(np.sum(th0 ** 2 * np.diff(grid)))
    log = log - float(theta.cumulative_compensator(paths.horizon, triplet))
    n = paths.n_paths
    if paths.jump_time.size:
        th1 = theta.theta1_at(paths.jump_time, paths.jump_size)
        if np.any(th1 < -1.0):
            raise ValueError("theta1 < -1 at a recorded jump")
        kill = th1 == -1.0
        jlog = np.log1p(np.where(kill, 0.0, th1))
        log = log + np.bincount(paths.jump_path, weights=jlog, minlength=n)
        dead = np.bincount(paths.jump_path, weights=kill.astype(float), minlength=n) > 0
        return np.where(dead, 0.0, np.exp(log))
    return np.exp(log)


def stochastic_exponential(path: LevyPath, theta: GirsanovCoefficients) -> DensityPath:
    """Density process of ``theta`` along a single path."""
    batch = PathBatch.from_paths([path])
    d = density_process(batch, theta)
    return DensityPath(
        time_grid=path.time_grid,
        values=d.values[0].copy(),
        jump_times=path.jump_times.copy(),
        jump_left=d.left.copy(),
        jump_values=d.right.copy(),
        tau0=float(d.tau0[0]),
        log_parts={
            "brownian": d.log_brownian[0].copy(),
            "drift": d.log_drift.copy(),
            "compensator": d.log_compensator.copy(),
            "jump": d.log_jump[0].copy(),
        },
    )


def martingale_check(triplet: LevyTriplet, theta: GirsanovCoefficients, t: float,
                     n_paths: int, rng: RngStream, steps: int = 50) -> Estimate:
    """Monte Carlo mean of ``D_t`` and its standard error."""
    if n_paths < 100:
        raise ValueError("martingale_check needs n_paths >= 100")
    paths = simulate_paths(triplet, t, steps, n_paths, rng)
    return mc_estimate(terminal_density(paths, theta))


def reweighted_expectation(paths: PathBatch, densities: DensityBatch | np.ndarray,
                           functional) -> Estimate:
    """``E_Q[F] = E_P[D_T F]``; ``functional`` is an array or a callable on the batch."""
    d_T = densities.terminal if isinstance(densities, DensityBatch) else np.asarray(densities)
    if isinstance(densities, DensityBatch) and densities.paths is not paths:
        raise ValueError("densities were built on a different batch")
    values = functional(paths) if callable(functional) else functional
    values = np.broadcast_to(np.asarray(values, dtype=float), (paths.n_paths,)) \
        if np.ndim(values) == 0 else np.asarray(values, dtype=float)
    if values.shape != d_T.shape:
        raise ValueError(f"length mismatch: {values.shape} vs {d_T.shape}")
    return mc_estimate(d_T * values)


class CompensatorCheck(NamedTuple):
    empirical: Estimate
    target: float


def compensator_check(triplet: LevyTriplet, theta: GirsanovCoefficients, atom_index: int,
                      n_paths: int, rng: RngStream, horizon: float = 1.0,
                      steps: int = 20) -> CompensatorCheck:
    """Q-intensity of one atom: reweighted jump count per unit time vs ``(1 + theta1) lam``."""
    if not 0 <= atom_index < len(triplet.atoms):
        raise IndexError(f"unknown atom index {atom_index}")
    atom = triplet.atoms[atom_index]
    probe = theta.theta1_at(np.linspace(0.0, horizon, 65), atom.size)
    if np.ptp(probe) > 0:
        raise ValueError("compensator_check needs theta1 constant in time on the chosen atom")
    paths = simulate_paths(triplet, horizon, steps, n_paths, rng)
    d_T = terminal_density(paths, theta)
    counts = paths.jump_counts(atom_index) / horizon
    return CompensatorCheck(mc_estimate(d_T * counts), (1.0 + float(probe[0])) * atom.rate)


def qv_difference(da: DensityBatch, db: DensityBatch) -> np.ndarray:
    """Running ``[D^a - D^b]`` on the grid, shape ``(n_paths, M+1)``.

    Continuous part: left-point sum of ``(D^a theta0^a - D^b theta0^b)^2 dt``.
    Jump part: ``(D^a_{s-} theta1^a - D^b_{s-} theta1^b)^2`` at each recorded
    jump, booked at the first grid point at or after the jump.
    """
    if da.paths is not db.paths:
        raise ValueError("densities must be built on the same paths")
    paths = da.paths
    dt = np.diff(paths.time_grid)
    cont = (da.values[:, :-1] * da.theta0_grid - db.values[:, :-1] * db.theta0_grid) ** 2 * dt
    inc = np.zeros_like(da.values)
    inc[:, 1:] = cont
    if paths.jump_time.size:
        jump = (da.left * da.theta1_at_jump - db.left * db.theta1_at_jump) ** 2
        np.add.at(inc, (paths.jump_path, paths.jump_slot), jump)
    return np.cumsum(inc, axis=1)


def quadratic_variation_diff(d1: DensityPath, d2: DensityPath, theta_a: GirsanovCoefficients,
                             theta_b: GirsanovCoefficients, path: LevyPath) -> float:
    """``[D^a - D^b]_T`` on one path (same discretisation as :func:`qv_difference`)."""
    if not (np.array_equal(d1.time_grid, path.time_grid)
            and np.array_equal(d2.time_grid, path.time_grid)
            and np.array_equal(d1.jump_times, path.jump_times)
            and np.array_equal(d2.jump_times, path.jump_times)):
        raise ValueError("densities were not built on this path")
    grid = path.time_grid
    cont = (d1.values[:-1] * theta_a.theta0_at(grid[:-1])
            - d2.values[:-1] * theta_b.theta0_at(grid[:-1])) ** 2
    total = float(np.sum(cont * np.diff(grid)))
    if path.jump_times.size:
        ja = theta_a.theta1_at(path.jump_times, path.jump_sizes)
        jb = theta_b.theta1_at(path.jump_times, path.jump_sizes)
        total += float(np.sum((d1.jump_left * ja - d2.jump_left * jb) ** 2))
    return total


def brownian_coefficient_gap(paths: PathBatch, theta_a: GirsanovCoefficients,
                             theta_b: GirsanovCoefficients, density: DensityBatch) -> np.ndarray:
    """Per path ``int (theta0^a - theta0^b)^2 D_{s-}^2 ds`` on the grid."""
    grid = paths.time_grid
    diff = theta_a.theta0_at(grid[:-1]) - theta_b.theta0_at(grid[:-1])
    return (density.values[:, :-1] ** 2 * diff ** 2 * np.diff(grid)).sum(axis=1)
