"""One-dimensional Dirichlet grid on (0, L) with the discrete L2 structure.

States are values at the ``n`` interior nodes ``i * h`` (``h = L / (n + 1)``);
boundary values are zero and never stored.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import fft


class GridMismatchError(ValueError):
    """A state was used with a grid it is not bound to."""


@dataclass(frozen=True)
class Grid:
    """Uniform interior grid of ``(0, L)``.

    Parameters
    ----------
    L : float
        Domain length, > 0.
    n : int
        Number of interior nodes, >= 1.
    """

    L: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"domain length must be positive, got {self.L}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"interior node count must be >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return self.L / (self.n + 1)

    @property
    def quadrature_weight(self) -> float:
        return self.h

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)

    def state(self, values) -> "StateVector":
        return StateVector(self, values)

    def zeros(self) -> "StateVector":
        return StateVector(self, np.zeros(self.n))

    def mode(self, j: int = 1, normalized: bool = True) -> "StateVector":
        """Sampled Dirichlet eigenfunction ``sin(j pi x / L)``."""
        v = np.sin(j * np.pi * self.nodes / self.L)
        if normalized:
            v = v / np.sqrt(self.h * np.dot(v, v))
        return StateVector(self, v)

    # spectral coordinates: orthonormal w.r.t. the discrete L2 inner product
    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        return np.sqrt(self.h) * fft.dst(values, type=1, norm="ortho", axis=-1)

    def from_spectral(self, coeffs: np.ndarray) -> np.ndarray:
        return fft.idst(coeffs, type=1, norm="ortho", axis=-1) / np.sqrt(self.h)

    def norm(self, values) -> np.ndarray:
        """Discrete L2 norm along the last axis of a raw array."""
        values = np.asarray(values, dtype=float)
        return np.sqrt(self.h * np.einsum("...i,...i->...", values, values))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Element of the discrete L2 space bound to one grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.n,):
            raise GridMismatchError(
                f"state has shape {v.shape}, grid expects ({self.grid.n},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("state entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def _check(self, other: "StateVector"):
        if other.grid != self.grid:
            raise GridMismatchError("states are bound to different grids")

    def __add__(self, other):
        self._check(other)
        return StateVector(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return StateVector(self.grid, self.values - other.values)

    def __mul__(self, c):
        return StateVector(self.grid, float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return StateVector(self.grid, -self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def build_grid(L: float, n: int) -> Grid:
    return Grid(float(L), n)


def _bound(g: Grid, y) -> np.ndarray:
    if isinstance(y, StateVector):
        if y.grid != g:
            raise GridMismatchError("state is bound to a different grid")
        return y.values
    v = np.asarray(y, dtype=float)
    if v.shape[-1] != g.n:
        raise GridMismatchError(f"expected trailing length {g.n}, got {v.shape[-1]}")
    return v


def laplacian_values(g: Grid, v: np.ndarray) -> np.ndarray:
    """Central second difference with zero Dirichlet data, any leading axes."""
    padded = np.zeros(v.shape[:-1] + (g.n + 2,))
    padded[..., 1:-1] = v
    return (padded[..., :-2] - 2.0 * padded[..., 1:-1] + padded[..., 2:]) / g.h**2


def apply_laplacian(g: Grid, y: StateVector) -> StateVector:
    return StateVector(g, laplacian_values(g, _bound(g, y)))


def inner(g: Grid, x, y) -> float:
    return float(g.h * np.dot(_bound(g, x), _bound(g, y)))


def l2_norm(g: Grid, y) -> float:
    v = _bound(g, y)
    return float(np.sqrt(g.h * np.dot(v, v)))


def smallest_eigenvalue(g: Grid) -> tuple[float, float]:
    """Discrete and continuum first Dirichlet eigenvalue of ``-d^2/dx^2``.

    The discrete value is written with a sine square, which equals
    ``(2/h^2)(1 - cos(pi h / L))`` without the cancellation at large ``n``.
    """
    s = np.sin(np.pi * g.h / (2.0 * g.L))
    omega_h = 4.0 * s * s / g.h**2
    return float(omega_h), float((np.pi / g.L) ** 2)


def eigenvalue(g: Grid, j: int) -> float:
    s = np.sin(j * np.pi * g.h / (2.0 * g.L))
    return float(4.0 * s * s / g.h**2)


def random_field(g: Grid, rng: np.random.Generator, decay: float = 1.0) -> np.ndarray:
    """Random unit-norm state with sine coefficients ``N(0, 1) / j**decay``."""
    j = np.arange(1, g.n + 1)
    c = rng.standard_normal(g.n) / j**decay
    c /= np.sqrt(np.dot(c, c))
    return g.from_spectral(c)
