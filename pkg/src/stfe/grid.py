"""Periodic grid, discrete calculus and cyclic banded solves.

All index arithmetic wraps modulo ``M``.  Values live at the nodes
``x_i = i*dx``; interface quantities (fluxes, one-sided gradients) are
stored at index ``i`` for the point ``x_{i+1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dgbtrf, dgbtrs

from .errors import GridMismatchError, SolverFailure

__all__ = [
    "Grid",
    "GridFunction",
    "PeriodicOperator",
    "PeriodicBandedLU",
    "derivative",
    "quadrature",
    "inner_l2",
    "solve_banded_periodic",
    "forward_diff",
    "backward_diff",
    "third_diff_interface",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the torus ``[0, L)`` with ``M`` nodes."""

    L: float
    M: int

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"domain length must be positive, got L={self.L}")
        if int(self.M) != self.M or self.M < 8:
            raise ValueError(f"node count must be an integer >= 8, got M={self.M}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "L", float(self.L))

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.M) * self.dx

    @property
    def x_half(self) -> np.ndarray:
        """Interface positions ``x_{i+1/2}``."""
        return (np.arange(self.M) + 0.5) * self.dx

    def sample(self, fn) -> "GridFunction":
        return GridFunction(self, fn(self.x))


class GridFunction:
    """Real samples of a periodic function on a :class:`Grid`.

    Arithmetic with scalars and other grid functions on the same grid is
    supported; the underlying array is available as ``values``.
    """

    __slots__ = ("grid", "values")
    __array_priority__ = 100

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.M,):
            raise ValueError(f"expected {grid.M} samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"GridFunction(M={self.grid.M}, L={self.grid.L:g}, min={self.values.min():.6g}, max={self.values.max():.6g})"

    def __len__(self):
        return self.grid.M

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _other(self, other):
        if isinstance(other, GridFunction):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.grid, self.values / self._other(other))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def shift(self, n: int) -> "GridFunction":
        """Cyclic shift by ``n`` nodes: ``result[i] = self[i - n]``."""
        return GridFunction(self.grid, np.roll(self.values, n))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def _check_same_grid(f: GridFunction, g: GridFunction):
    if f.grid != g.grid:
        raise GridMismatchError(
            f"incompatible discretizations: {f.grid} vs {g.grid}"
        )


# -- array-level stencils (hot paths use these directly) ---------------------

_CENTRAL = {
    # order -> accuracy -> {offset: weight}, weights are per dx**order
    1: {
        2: {-1: -0.5, 1: 0.5},
        4: {-2: 1 / 12, -1: -2 / 3, 1: 2 / 3, 2: -1 / 12},
    },
    2: {
        2: {-1: 1.0, 0: -2.0, 1: 1.0},
        4: {-2: -1 / 12, -1: 4 / 3, 0: -5 / 2, 1: 4 / 3, 2: -1 / 12},
    },
    3: {
        2: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
        4: {-3: 1 / 8, -2: -1.0, -1: 13 / 8, 1: -13 / 8, 2: 1.0, 3: -1 / 8},
    },
    4: {
        2: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
        4: {-3: -1 / 6, -2: 2.0, -1: -13 / 2, 0: 28 / 3, 1: -13 / 2, 2: 2.0, 3: -1 / 6},
    },
}


def _apply_stencil(values: np.ndarray, stencil: dict, scale: float) -> np.ndarray:
    out = np.zeros_like(values)
    for offset, weight in stencil.items():
        out += weight * np.roll(values, -offset)
    return out * scale


def forward_diff(values: np.ndarray, dx: float) -> np.ndarray:
    """``(f_{i+1} - f_i)/dx``, located at ``x_{i+1/2}``."""
    return (np.roll(values, -1) - values) / dx


def backward_diff(values: np.ndarray, dx: float) -> np.ndarray:
    """``(g_i - g_{i-1})/dx``; maps interface data back to nodes."""
    return (values - np.roll(values, 1)) / dx


def third_diff_interface(values: np.ndarray, dx: float) -> np.ndarray:
    """Compact third difference at ``x_{i+1/2}`` (offsets -1..2)."""
    return (
        np.roll(values, -2) - 3.0 * np.roll(values, -1) + 3.0 * values - np.roll(values, 1)
    ) / dx**3


def derivative(f: GridFunction, order: int, accuracy: int = 2) -> GridFunction:
    """Central finite-difference derivative of ``f`` with periodic wrap.

    Parameters
    ----------
    f : GridFunction
    order : int
        Derivative order, one of 1, 2, 3, 4.
    accuracy : int
        Stencil order of accuracy, 2 (default) or 4.
    """
    if order not in _CENTRAL:
        raise ValueError(f"derivative order must be in 1..4, got {order}")
    if accuracy not in (2, 4):
        raise ValueError(f"stencil accuracy must be 2 or 4, got {accuracy}")
    dx = f.grid.dx
    return GridFunction(
        f.grid, _apply_stencil(f.values, _CENTRAL[order][accuracy], dx**-order)
    )


def quadrature(f: GridFunction) -> float:
    """Rectangle rule ``dx * sum(f)`` on the periodic grid."""
    return float(f.grid.dx * np.sum(f.values))


def inner_l2(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(f.grid.dx * np.dot(f.values, g.values))


# -- cyclic banded operators --------------------------------------------------


class PeriodicOperator:
    """Cyclic banded matrix stored by diagonals.

    ``bands[i, p + d]`` is the entry in row ``i`` and column ``(i + d) % M``
    for ``d`` in ``-p..p`` where ``p`` is the bandwidth.
    """

    def __init__(self, bands: np.ndarray):
        bands = np.asarray(bands, dtype=float)
        if bands.ndim != 2 or bands.shape[1] % 2 != 1:
            raise ValueError("bands must have shape (M, 2*bandwidth + 1)")
        self.bands = bands
        self.M = bands.shape[0]
        self.bandwidth = bands.shape[1] // 2
        if 2 * self.bandwidth >= self.M:
            raise ValueError("bandwidth too large for the grid")

    @classmethod
    def identity(cls, M: int, bandwidth: int = 0) -> "PeriodicOperator":
        bands = np.zeros((M, 2 * bandwidth + 1))
        bands[:, bandwidth] = 1.0
        return cls(bands)

    @classmethod
    def from_stencil(cls, M: int, stencil: dict, scale: float = 1.0) -> "PeriodicOperator":
        p = max(abs(d) for d in stencil)
        bands = np.zeros((M, 2 * p + 1))
        for d, w in stencil.items():
            bands[:, p + d] = w * scale
        return cls(bands)

    def _padded(self, p: int) -> np.ndarray:
        if p == self.bandwidth:
            return self.bands
        out = np.zeros((self.M, 2 * p + 1))
        out[:, p - self.bandwidth : p + self.bandwidth + 1] = self.bands
        return out

    def __add__(self, other: "PeriodicOperator") -> "PeriodicOperator":
        p = max(self.bandwidth, other.bandwidth)
        return PeriodicOperator(self._padded(p) + other._padded(p))

    def __sub__(self, other: "PeriodicOperator") -> "PeriodicOperator":
        return self + other * -1.0

    def __mul__(self, scalar: float) -> "PeriodicOperator":
        return PeriodicOperator(self.bands * scalar)

    __rmul__ = __mul__

    def apply(self, values: np.ndarray) -> np.ndarray:
        p = self.bandwidth
        out = self.bands[:, p] * values
        for d in range(1, p + 1):
            out = out + self.bands[:, p + d] * np.roll(values, -d)
            out = out + self.bands[:, p - d] * np.roll(values, d)
        return out

    def __matmul__(self, f):
        if isinstance(f, GridFunction):
            if f.grid.M != self.M:
                raise GridMismatchError("operator and grid function sizes differ")
            return GridFunction(f.grid, self.apply(f.values))
        return self.apply(np.asarray(f, dtype=float))

    def column_sums(self) -> np.ndarray:
        p = self.bandwidth
        sums = np.zeros(self.M)
        for d in range(-p, p + 1):
            # entry (i, i+d) contributes to column (i+d) % M
            sums += np.roll(self.bands[:, p + d], d)
        return sums

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.M, self.M))
        rows = np.arange(self.M)
        p = self.bandwidth
        for d in range(-p, p + 1):
            A[rows, (rows + d) % self.M] += self.bands[:, p + d]
        return A

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.bands)))


class PeriodicBandedLU:
    """Factorization of a cyclic banded matrix for repeated solves.

    The wrap-around corners are split off as a rank-``2p`` update and handled
    with the Woodbury identity on top of a LAPACK banded LU (``dgbtrf``).
    """

    def __init__(self, op: PeriodicOperator):
        self.op = op
        M, p = op.M, op.bandwidth
        self.M, self.p = M, p
        # LAPACK band storage: ab[kl + ku + i - j, j] = A[i, j]
        ab = np.zeros((3 * p + 1, M))
        rows = np.arange(M)
        corner_rows = []
        for d in range(-p, p + 1):
            cols = rows + d
            inside = (cols >= 0) & (cols < M)
            ab[2 * p - d, cols[inside]] = op.bands[inside, p + d]
        if p:
            corner_rows = list(range(p)) + list(range(M - p, M))
        self._corner_rows = np.array(corner_rows, dtype=int)
        lu, piv, info = dgbtrf(ab, p, p)
        if info != 0:
            raise SolverFailure(f"banded LU failed (info={info})", residual=np.inf)
        self._lu, self._piv = lu, piv
        if p:
            # V^T: one row per corner row holding only its wrapped entries
            Vt = np.zeros((2 * p, M))
            for c, i in enumerate(corner_rows):
                for d in range(-p, p + 1):
                    j = i + d
                    if j < 0 or j >= M:
                        Vt[c, j % M] += op.bands[i, p + d]
            U = np.zeros((M, 2 * p))
            U[self._corner_rows, np.arange(2 * p)] = 1.0
            Z = self._banded_solve(U)
            cap = np.eye(2 * p) + Vt @ Z
            self._Vt, self._Z = Vt, Z
            try:
                self._cap_inv = np.linalg.inv(cap)
            except np.linalg.LinAlgError:
                raise SolverFailure("cyclic correction is singular", residual=np.inf) from None

    def _banded_solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = dgbtrs(self._lu, self.p, self.p, rhs, self._piv)
        if info != 0:
            raise SolverFailure(f"banded back-substitution failed (info={info})", residual=np.inf)
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = self._banded_solve(np.asarray(rhs, dtype=float))
        if self.p:
            y = y - self._Z @ (self._cap_inv @ (self._Vt @ y))
        return y


def solve_banded_periodic(
    op: PeriodicOperator, rhs, rtol: float = 1e-10
):
    """Solve ``op @ y = rhs`` for a cyclic banded ``op``.

    Raises :class:`SolverFailure` carrying the achieved relative residual when
    ``||op y - rhs||_inf > rtol * ||rhs||_inf`` even after one step of
    iterative refinement.
    """
    grid = rhs.grid if isinstance(rhs, GridFunction) else None
    b = rhs.values if grid is not None else np.asarray(rhs, dtype=float)
    y = _solve_checked(PeriodicBandedLU(op), op, b, rtol)
    return GridFunction(grid, y) if grid is not None else y


def _solve_checked(lu: PeriodicBandedLU, op: PeriodicOperator, b: np.ndarray, rtol: float):
    y = lu.solve(b)
    scale = max(float(np.max(np.abs(b))), np.finfo(float).tiny)
    res = float(np.max(np.abs(op.apply(y) - b))) / scale
    if not res <= rtol:
        y = y + lu.solve(b - op.apply(y))
        res = float(np.max(np.abs(op.apply(y) - b))) / scale
        if not res <= rtol:
            raise SolverFailure(
                f"cyclic banded solve residual {res:.3e} exceeds {rtol:.1e}",
                residual=res,
            )
    return y
