"""Monitored functionals: mass, surface energy, entropies, weak-form residual."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfiniteEntropyError, ParameterError, SamplingError
from .grid import GridFunction, forward_diff, quadrature

__all__ = [
    "EntropyParams",
    "TestFunctionSet",
    "DiagnosticsSeries",
    "surface_energy",
    "entropy_G",
    "entropy_G_density",
    "entropy_log",
    "martingale_residual",
    "bandlimited_min",
    "SERIES_COLUMNS",
]

SERIES_COLUMNS = ("mass", "energy", "entropy_signed", "entropy_abs", "min_u")


@dataclass(frozen=True)
class EntropyParams:
    """Reference level ``A`` and regularization ``eps_ent`` of ``G_eps``.

    ``A=None`` is resolved per run to ``2 max(u0) + 1``.
    """

    A: float | None = None
    eps_ent: float = 0.0

    def __post_init__(self):
        if self.A is not None and not self.A > 0:
            raise ValueError("A must be positive")
        if self.eps_ent < 0:
            raise ValueError("eps_ent must be >= 0")

    def resolved(self, u0: GridFunction) -> "EntropyParams":
        if self.A is not None:
            return self
        return EntropyParams(2.0 * float(np.max(u0.values)) + 1.0, self.eps_ent)


@dataclass(frozen=True)
class TestFunctionSet:
    """Smooth periodic test functions given as truncated Fourier series.

    Each entry is a tuple of ``(mode, coefficient)`` pairs; mode ``m >= 0``
    stands for ``cos(2 pi m x / L)`` and ``m < 0`` for ``sin(2 pi |m| x / L)``.
    """

    __test__ = False  # not a pytest class

    terms: tuple = (((0, 1.0),), ((1, 1.0),), ((-1, 1.0),), ((2, 1.0),))

    def __len__(self):
        return len(self.terms)

    @property
    def names(self):
        return [f"phi{i}" for i in range(len(self.terms))]

    def values(self, grid) -> np.ndarray:
        out = np.zeros((len(self.terms), grid.M))
        x = grid.x
        for i, series in enumerate(self.terms):
            for mode, coef in series:
                a = 2.0 * np.pi * abs(mode) / grid.L
                out[i] += coef * (np.cos(a * x) if mode >= 0 else np.sin(a * x))
        return out

    def interface_gradients(self, grid) -> np.ndarray:
        vals = self.values(grid)
        return (np.roll(vals, -1, axis=1) - vals) / grid.dx


def surface_energy(u: GridFunction) -> float:
    """``int (d_x u)^2 dx`` with the interface gradient ``D_+ u``."""
    g = forward_diff(u.values, u.grid.dx)
    return float(u.grid.dx * np.dot(g, g))


def entropy_G_density(s, A: float, eps: float = 0.0):
    """Pointwise ``G_eps(s) = int_s^A int_{s1}^A ds2 ds1 / (s2^2 + eps)``.

    Closed forms:
    ``G_0(s) = ln(A/s) + s/A - 1`` and, with ``c = sqrt(eps) > 0``,
    ``G_eps(s) = (s/c) atan(c (s - A) / (c^2 + s A)) + 1/2 ln((A^2 + c^2)/(s^2 + c^2))``.
    """
    s = np.asarray(s, dtype=float)
    if eps == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(A / s) + s / A - 1.0
    c = math.sqrt(eps)
    # atan(s/c) - atan(A/c) written without cancellation
    diff = np.arctan(c * (s - A) / (c * c + s * A))
    wrap = np.where(c * c + s * A < 0, -np.pi, 0.0)  # branch when s A < -c^2
    return (s / c) * (diff + wrap) + 0.5 * np.log((A * A + c * c) / (s * s + c * c))


def entropy_G(u: GridFunction, params: EntropyParams) -> float:
    """``int G_eps(u) dx`` with reference level ``params.A``."""
    if params.A is None:
        raise ParameterError("resolve the reference level A first (EntropyParams.resolved)")
    umax = float(np.max(u.values))
    if not params.A > umax:
        raise ParameterError(f"reference level A={params.A} must exceed max u={umax}")
    if params.eps_ent == 0.0 and np.any(u.values <= 0):
        raise InfiniteEntropyError("G_0 is infinite at a nonpositive node")
    return quadrature(GridFunction(u.grid, entropy_G_density(u.values, params.A, params.eps_ent)))


def entropy_log(u: GridFunction, signed: bool = True) -> float:
    """``-int ln u`` (signed) or ``int |ln u|`` (absolute)."""
    if np.any(u.values <= 0):
        raise InfiniteEntropyError("logarithmic entropy is infinite at a nonpositive node")
    ln = np.log(u.values)
    return float(u.grid.dx * (-np.sum(ln) if signed else np.sum(np.abs(ln))))


def _entropy_or_inf(u: GridFunction, signed: bool) -> float:
    try:
        return entropy_log(u, signed)
    except InfiniteEntropyError:
        return math.inf


def bandlimited_min(values: np.ndarray, upsample: int = 64) -> float:
    """Minimum of the trigonometric interpolant of periodic samples."""
    M = values.size
    spec = np.fft.rfft(values)
    fine = np.fft.irfft(spec, n=M * upsample) * upsample
    return float(np.min(fine))


@dataclass
class DiagnosticsSeries:
    """Per-record diagnostics of one path.

    ``columns`` maps each name of :data:`SERIES_COLUMNS` plus ``dissipation``
    to an array over ``times``; ``resid`` and ``qvar`` have shape
    ``(n_times, n_phi)``.  Entropies are ``inf`` where a node was nonpositive.
    """

    times: np.ndarray
    columns: dict
    resid: np.ndarray
    qvar: np.ndarray
    phi_names: list = field(default_factory=list)

    @property
    def n_phi(self):
        return self.resid.shape[1]

    def __len__(self):
        return len(self.times)

    @classmethod
    def empty(cls, n_phi: int = 0):
        return cls(
            times=np.zeros(0),
            columns={c: np.zeros(0) for c in SERIES_COLUMNS + ("dissipation",)},
            resid=np.zeros((0, n_phi)),
            qvar=np.zeros((0, n_phi)),
            phi_names=[f"phi{i}" for i in range(n_phi)],
        )

    def as_matrix(self) -> np.ndarray:
        """Columns in CSV order: time, diagnostics, then resid/qvar per phi."""
        parts = [self.times[:, None]] + [self.columns[c][:, None] for c in SERIES_COLUMNS]
        for p in range(self.n_phi):
            parts += [self.resid[:, p : p + 1], self.qvar[:, p : p + 1]]
        return np.hstack(parts) if len(self.times) else np.zeros((0, 1 + len(SERIES_COLUMNS) + 2 * self.n_phi))


def series_row(u: GridFunction, u0_pairing: np.ndarray, phis_values: np.ndarray, acc) -> dict:
    """Diagnostics of one recorded state; ``acc`` holds the time integrals.

    ``acc.det_flux`` is ``int (J, D_+ phi)`` and ``acc.sto_drift`` is
    ``int (C w, phi)``; by summation by parts the latter equals
    ``-1/2 sum lambda_k^2 int (psi_k d_x(psi_k w), d_x phi)``.
    """
    dx = u.grid.dx
    pairing = dx * (phis_values @ u.values)
    return {
        "mass": quadrature(u),
        "energy": surface_energy(u),
        "entropy_signed": _entropy_or_inf(u, True),
        "entropy_abs": _entropy_or_inf(u, False),
        "min_u": float(np.min(u.values)),
        "dissipation": acc.dissipation,
        "resid": pairing - u0_pairing - acc.det_flux - acc.sto_drift,
        "qvar": acc.qvar.copy(),
    }


def martingale_residual(path, model, phis: TestFunctionSet, t: float):
    """Weak-form residual ``M_phi(t)`` and its quadratic variation.

    ``M_phi(t) = (u(t), phi) - (u0, phi) - int (J, d_x phi) + 1/2 sum lambda_k^2 int (psi_k d_x(psi_k w), d_x phi)``
    assembled from the recorded state at ``t`` and the time integrals
    accumulated on the inner-step lattice of the run.

    Returns
    -------
    (resid, qvar) : arrays of length ``len(phis)``
    """
    if model != path.model:
        raise ValueError("noise model differs from the one that generated the path")
    if phis != path.phis:
        raise ValueError("test functions differ from the ones tracked during the run")
    rec = path.record_at(t)
    grid = path.u0.grid
    vals = phis.values(grid)
    dx = grid.dx
    resid = dx * (vals @ rec.state) - dx * (vals @ path.u0.values) - rec.acc.det_flux - rec.acc.sto_drift
    return resid, rec.acc.qvar.copy()


def find_record(records, t: float, tol: float = 1e-12):
    for rec in records:
        if abs(rec.time - t) <= tol * max(1.0, abs(t)):
            return rec
    raise SamplingError(f"no state recorded at t={t!r}")
