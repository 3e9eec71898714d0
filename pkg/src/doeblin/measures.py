"""Finite signed measures and bounded functions on a uniform real grid.

Every model in this package trades in two currencies:

* :class:`HybridMeasure` - a signed measure represented as weighted atoms
  plus a piecewise-constant density on a uniform grid (weights store the
  mass of each cell, i.e. density times spacing),
* :class:`GridFunction` - a bounded function sampled at cell midpoints,
  with one extra sample at the left endpoint because renewal boundary
  terms evaluate f(0).

The metric everywhere is the total variation norm, normalised so that two
mutually singular probability measures are at distance 2 (not 1).  All
values are immutable after construction; operations return new objects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "HybridMeasure",
    "GridMismatchError",
    "tv_norm",
    "pair",
    "jordan",
    "measure_to_csv",
    "measure_from_csv",
    "function_to_csv",
    "function_from_csv",
]


class GridMismatchError(ValueError):
    """Raised when a measure and a function live on different grids."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid of half-open cells [lower + j*h, lower + (j+1)*h)."""

    lower: float
    upper: float
    n_cells: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("grid needs lower < upper")
        if self.n_cells <= 0:
            raise ValueError("grid needs a positive number of cells")

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / self.n_cells

    def midpoints(self) -> np.ndarray:
        h = self.spacing
        return self.lower + h * (np.arange(self.n_cells) + 0.5)

    def edges(self) -> np.ndarray:
        return self.lower + self.spacing * np.arange(self.n_cells + 1)

    def cell_of(self, x) -> np.ndarray:
        """Index of the half-open cell containing x (clipped to the grid)."""
        idx = np.floor((np.asarray(x, dtype=float) - self.lower) / self.spacing)
        return np.clip(idx, 0, self.n_cells - 1).astype(int)

    def contains(self, x: float) -> bool:
        return self.lower <= x < self.upper


@dataclass(frozen=True)
class GridFunction:
    """Bounded function: midpoint samples plus a sample at the left endpoint."""

    grid: Grid
    values: np.ndarray
    boundary0: float = None  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError("values must have one sample per cell")
        if not np.all(np.isfinite(values)):
            raise ValueError("function samples must be finite")
        object.__setattr__(self, "values", values)
        if self.boundary0 is None:
            object.__setattr__(self, "boundary0", float(values[0]))
        else:
            object.__setattr__(self, "boundary0", float(self.boundary0))

    @classmethod
    def from_callable(cls, grid: Grid, f: Callable) -> "GridFunction":
        vals = np.asarray(f(grid.midpoints()), dtype=float)
        return cls(grid, vals, boundary0=float(f(grid.lower)))

    @classmethod
    def ones(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.ones(grid.n_cells), boundary0=1.0)

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(self.values))), abs(self.boundary0))

    def value_at(self, x: float) -> float:
        """Nearest-sample rule: the containing cell's midpoint sample.

        The left endpoint is special-cased to the boundary sample.
        """
        if x == self.grid.lower:
            return self.boundary0
        if not (self.grid.lower <= x < self.grid.upper):
            return 0.0
        return float(self.values[self.grid.cell_of(x)])

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * c, self.boundary0 * c)


def _merged_atoms(atoms: Sequence[tuple]) -> list[tuple]:
    merged: dict[float, float] = {}
    for loc, w in atoms:
        merged[loc] = merged.get(loc, 0.0) + w
    return sorted(merged.items())


@dataclass(frozen=True)
class HybridMeasure:
    """Signed measure: cell masses (density * spacing) plus point atoms."""

    grid: Grid
    weights: np.ndarray
    atoms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (self.grid.n_cells,):
            raise ValueError("weights must have one entry per cell")
        object.__setattr__(self, "weights", weights)
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        for loc, _ in atoms:
            if not self.grid.lower <= loc < self.grid.upper:
                raise ValueError(f"atom location {loc} outside the grid")
        object.__setattr__(self, "atoms", atoms)

    # ------------------------------------------------------------ builders
    @classmethod
    def zero(cls, grid: Grid) -> "HybridMeasure":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def dirac(cls, grid: Grid, location: float, weight: float = 1.0) -> "HybridMeasure":
        return cls(grid, np.zeros(grid.n_cells), ((location, weight),))

    @classmethod
    def from_density(cls, grid: Grid, density: Callable, normalize: bool = False) -> "HybridMeasure":
        w = np.asarray(density(grid.midpoints()), dtype=float) * grid.spacing
        if normalize:
            w = w / w.sum()
        return cls(grid, w)

    @classmethod
    def uniform(cls, grid: Grid) -> "HybridMeasure":
        return cls(grid, np.full(grid.n_cells, 1.0 / grid.n_cells))

    @classmethod
    def from_weights(cls, grid: Grid, weights) -> "HybridMeasure":
        return cls(grid, np.asarray(weights, dtype=float))

    # ---------------------------------------------------------- operations
    def mass(self) -> float:
        return float(self.weights.sum() + sum(w for _, w in self.atoms))

    def tv_norm(self) -> float:
        atom_part = sum(abs(w) for _, w in _merged_atoms(self.atoms))
        return float(np.abs(self.weights).sum() + atom_part)

    def pair(self, f: GridFunction) -> float:
        """Integral of f against the measure.

        Atoms read the sample of their containing cell; an atom exactly at
        the left endpoint reads the boundary sample.
        """
        if f.grid != self.grid:
            raise GridMismatchError("measure and function grids differ")
        total = float(self.weights @ f.values)
        for loc, w in self.atoms:
            total += w * f.value_at(loc)
        return total

    def jordan(self) -> tuple["HybridMeasure", "HybridMeasure"]:
        """Componentwise positive and negative parts (exact for this representation)."""
        plus_atoms = tuple((a, w) for a, w in _merged_atoms(self.atoms) if w > 0)
        minus_atoms = tuple((a, -w) for a, w in _merged_atoms(self.atoms) if w < 0)
        plus = HybridMeasure(self.grid, np.maximum(self.weights, 0.0), plus_atoms)
        minus = HybridMeasure(self.grid, np.maximum(-self.weights, 0.0), minus_atoms)
        return plus, minus

    def project_atoms(self) -> "HybridMeasure":
        """Fold atoms into the cells that contain them."""
        if not self.atoms:
            return self
        w = self.weights.copy()
        for loc, wt in self.atoms:
            w[self.grid.cell_of(loc)] += wt
        return HybridMeasure(self.grid, w)

    def is_probability(self, tol: float = 1e-9) -> bool:
        nonneg = np.all(self.weights >= -tol) and all(w >= -tol for _, w in self.atoms)
        return bool(nonneg and abs(self.mass() - 1.0) <= tol)

    # ------------------------------------------------------------- algebra
    def _check(self, other: "HybridMeasure"):
        if other.grid != self.grid:
            raise GridMismatchError("measure grids differ")

    def __add__(self, other: "HybridMeasure") -> "HybridMeasure":
        self._check(other)
        return HybridMeasure(self.grid, self.weights + other.weights, self.atoms + other.atoms)

    def __sub__(self, other: "HybridMeasure") -> "HybridMeasure":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "HybridMeasure":
        return HybridMeasure(self.grid, self.weights * c, tuple((a, c * w) for a, w in self.atoms))


# Thin functional aliases matching the operation names used elsewhere.
def tv_norm(mu: HybridMeasure) -> float:
    return mu.tv_norm()


def pair(mu: HybridMeasure, f: GridFunction) -> float:
    return mu.pair(f)


def jordan(mu: HybridMeasure) -> tuple[HybridMeasure, HybridMeasure]:
    return mu.jordan()


# ------------------------------------------------------------------- CSV io
def measure_to_csv(mu: HybridMeasure, path) -> None:
    """Rows: kind, location, weight. Cells first (location = midpoint), then atoms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "location", "weight"])
        for x, w in zip(mu.grid.midpoints(), mu.weights):
            writer.writerow(["cell", repr(float(x)), repr(float(w))])
        for loc, w in mu.atoms:
            writer.writerow(["atom", repr(loc), repr(w)])


def measure_from_csv(grid: Grid, path) -> HybridMeasure:
    weights = np.zeros(grid.n_cells)
    atoms = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["kind", "location", "weight"]:
            raise ValueError("unexpected measure CSV header")
        cell_idx = 0
        for kind, loc, w in reader:
            if kind == "cell":
                weights[cell_idx] = float(w)
                cell_idx += 1
            elif kind == "atom":
                atoms.append((float(loc), float(w)))
            else:
                raise ValueError(f"unknown row kind {kind!r}")
    return HybridMeasure(grid, weights, tuple(atoms))


def function_to_csv(f: GridFunction, path) -> None:
    """Rows: location, value. The first row is the left-endpoint sample."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["location", "value"])
        writer.writerow([repr(float(f.grid.lower)), repr(float(f.boundary0))])
        for x, v in zip(f.grid.midpoints(), f.values):
            writer.writerow([repr(float(x)), repr(float(v))])


def function_from_csv(grid: Grid, path) -> GridFunction:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(float(a), float(b)) for a, b in reader]
    boundary0 = rows[0][1]
    values = np.array([v for _, v in rows[1:]])
    return GridFunction(grid, values, boundary0=boundary0)
