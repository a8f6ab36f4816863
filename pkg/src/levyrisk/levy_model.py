"""Finite-activity Lévy models and seeded path simulation.

A model is a drift, an optional unit-variance Brownian part and an atomic
Lévy measure (finitely many jump sizes with finite rates).  Paths are
simulated exactly: Brownian increments on the time grid, jump times drawn
from the compound Poisson law and recorded off-grid.

The level process is assembled from the Lévy-Itô split::

    L_t = b t + W_t + sum_{s<=t, |x|<=1} x  -  t * sum_{|x_i|<=1} x_i lam_i
                    + sum_{s<=t, |x|>1} x
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class JumpAtom:
    size: float
    rate: float


@dataclass(frozen=True)
class LevyTriplet:
    """Drift, Brownian switch and atomic Lévy measure ``nu = sum rate_i * delta_{size_i}``."""

    drift: float = 0.0
    brownian: bool = True
    atoms: tuple[JumpAtom, ...] = ()

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, JumpAtom) else JumpAtom(float(a[0]), float(a[1]))
                      for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        sizes = [a.size for a in atoms]
        for a in atoms:
            if a.size == 0.0 or not np.isfinite(a.size):
                raise ValueError(f"jump size must be finite and nonzero, got {a.size}")
            if not a.rate >= 0.0:
                raise ValueError(f"jump rate must be >= 0, got {a.rate}")
        if len(set(sizes)) != len(sizes):
            raise ValueError("jump atoms must have distinct sizes")
        if not np.isfinite(self.total_rate):
            raise ValueError("total jump rate must be finite")
        if not np.isfinite(self.drift):
            raise ValueError("drift must be finite")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]], drift=0.0, brownian=True):
        return cls(drift=float(drift), brownian=bool(brownian),
                   atoms=tuple(JumpAtom(float(x), float(r)) for x, r in atoms))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.atoms], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([a.rate for a in self.atoms], dtype=float)

    @property
    def total_rate(self) -> float:
        return float(sum(a.rate for a in self.atoms))

    def mean_per_unit_time(self) -> float:
        """E[L_1]: drift plus the uncompensated big-jump mean."""
        big = [a.size * a.rate for a in self.atoms if abs(a.size) > 1.0]
        return self.drift + float(sum(big))

    def small_jump_compensator(self) -> float:
        return float(sum(a.size * a.rate for a in self.atoms if abs(a.size) <= 1.0))


@dataclass(frozen=True)
class RngStream:
    """Seed plus stream index; identical pairs reproduce identical draws."""

    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng([int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(self.index)])

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, index)


def uniform_grid(horizon: float, steps: int) -> np.ndarray:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return np.linspace(0.0, float(horizon), int(steps) + 1)


def _check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("time grid needs at least two points")
    if grid[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return grid


@dataclass(frozen=True)
class LevyPath:
    """One trajectory: grid values of W and L plus the exact jump record."""

    time_grid: np.ndarray
    brownian_values: np.ndarray
    level_values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    jump_atoms: np.ndarray
    triplet: LevyTriplet

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @property
    def jump_record(self) -> list[tuple[float, float, int]]:
        return [(float(s), float(x), int(i))
                for s, x, i in zip(self.jump_times, self.jump_sizes, self.jump_atoms)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "W", "L"])
            for row in zip(self.time_grid, self.brownian_values, self.level_values):
                w.writerow([repr(float(v)) for v in row])

    def jumps_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "size", "atom"])
            for s, x, i in self.jump_record:
                w.writerow([repr(s), repr(x), i])


@dataclass(frozen=True)
class PathBatch:
    """Many independent paths on a shared grid.

    Jumps are stored flat, sorted by (path, time); ``jump_path[k]`` is the
    owning path of jump ``k``.  ``jump_slot[k]`` is the index of the first
    grid point at or after the jump time, i.e. the grid value that first
    includes the jump.
    """

    time_grid: np.ndarray
    brownian: np.ndarray
    level: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_atom: np.ndarray
    triplet: LevyTriplet
    jump_slot: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.jump_slot is None:
            slot = np.searchsorted(self.time_grid, self.jump_time, side="left")
            object.__setattr__(self, "jump_slot", slot)

    @property
    def n_paths(self) -> int:
        return self.brownian.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @property
    def jump_size(self) -> np.ndarray:
        return self.triplet.sizes[self.jump_atom] if self.jump_atom.size else np.zeros(0)

    def jump_counts(self, atom_index: int | None = None) -> np.ndarray:
        """Per-path number of jumps on [0, T], optionally for one atom."""
        mask = np.ones(self.jump_path.size, dtype=bool)
        if atom_index is not None:
            mask = self.jump_atom == atom_index
        return np.bincount(self.jump_path[mask], minlength=self.n_paths)

    def path(self, i: int) -> LevyPath:
        sel = self.jump_path == i
        return LevyPath(
            time_grid=self.time_grid,
            brownian_values=self.brownian[i].copy(),
            level_values=self.level[i].copy(),
            jump_times=self.jump_time[sel].copy(),
            jump_sizes=self.jump_size[sel].copy(),
            jump_atoms=self.jump_atom[sel].copy(),
            triplet=self.triplet,
        )

    @classmethod
    def from_paths(cls, paths: Sequence[LevyPath]) -> "PathBatch":
        if not paths:
            raise ValueError("need at least one path")
        grid = paths[0].time_grid
        triplet = paths[0].triplet
        for p in paths:
            if p.triplet != triplet or not np.array_equal(p.time_grid, grid):
                raise ValueError("paths must share model and time grid")
        jp = np.concatenate([np.full(p.jump_times.size, i, dtype=np.int64)
                             for i, p in enumerate(paths)])
        return cls(
            time_grid=grid,
            brownian=np.stack([p.brownian_values for p in paths]),
            level=np.stack([p.level_values for p in paths]),
            jump_path=jp,
            jump_time=np.concatenate([p.jump_times for p in paths]),
            jump_atom=np.concatenate([p.jump_atoms for p in paths]).astype(np.int64),
            triplet=triplet,
        )


def simulate_paths(triplet: LevyTriplet, horizon: float, steps: int, n_paths: int,
                   rng: RngStream, time_grid: np.ndarray | None = None) -> PathBatch:
    """Simulate ``n_paths`` independent paths of the model.

    Draw order is fixed (Brownian increments, jump counts, jump times, atom
    labels) so a given ``RngStream`` always yields the same batch.
    """
    if not np.isfinite(triplet.total_rate):
        raise ValueError("infinite total jump rate")
    grid = _check_grid(time_grid) if time_grid is not None else uniform_grid(horizon, steps)
    horizon = float(grid[-1])
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    gen = rng.generator()
    dt = np.diff(grid)

    dW = gen.standard_normal((n_paths, dt.size)) * np.sqrt(dt)
    W = np.zeros((n_paths, grid.size))
    np.cumsum(dW, axis=1, out=W[:, 1:])

    lam = triplet.total_rate
    counts = gen.poisson(lam * horizon, size=n_paths) if lam > 0 else np.zeros(n_paths, np.int64)
    total = int(counts.sum())
    jump_path = np.repeat(np.arange(n_paths, dtype=np.int64), counts)
    jump_time = gen.uniform(0.0, horizon, size=total)
    # sampled times are a.s. positive; (0, T] convention
    if triplet.atoms and total:
        jump_atom = gen.choice(len(triplet.atoms), size=total, p=triplet.rates / lam)
    else:
        jump_atom = np.zeros(total, dtype=np.int64)
    order = np.lexsort((jump_time, jump_path))
    jump_path, jump_time = jump_path[order], jump_time[order]
    jump_atom = np.asarray(jump_atom, dtype=np.int64)[order]

    level = triplet.drift * grid[None, :] + np.zeros((n_paths, 1))
    if triplet.brownian:
        level = level + W
    level = level - triplet.small_jump_compensator() * grid[None, :]
    slot = np.searchsorted(grid, jump_time, side="left")
    if total:
        inc = np.zeros((n_paths, grid.size))
        np.add.at(inc, (jump_path, slot), triplet.sizes[jump_atom])
        level = level + np.cumsum(inc, axis=1)

    return PathBatch(grid, W, level, jump_path, jump_time, jump_atom, triplet, slot)


def simulate_path(triplet: LevyTriplet, horizon: float, steps: int, rng: RngStream) -> LevyPath:
    return simulate_paths(triplet, horizon, steps, 1, rng).path(0)


def empirical_compensator(paths: PathBatch | Sequence[LevyPath], atom_index: int) -> float:
    """Jumps of one atom per path per unit time; estimates that atom's rate."""
    if not isinstance(paths, PathBatch):
        paths = PathBatch.from_paths(list(paths))
    if not 0 <= atom_index < len(paths.triplet.atoms):
        raise IndexError(f"unknown atom index {atom_index}")
    hits = int(np.count_nonzero(paths.jump_atom == atom_index))
    return hits / (paths.n_paths * paths.horizon)


def empirical_compensator_se(paths: PathBatch, atom_index: int) -> float:
    counts = paths.jump_counts(atom_index) / paths.horizon
    return float(counts.std(ddof=1) / np.sqrt(counts.size)) if counts.size > 1 else 0.0
