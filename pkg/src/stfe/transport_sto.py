"""Stochastic transport substep.

Itô form of the Stratonovich transport ``dw = d_x(w o dW)``:

    dw = (C w + eps d_x^2 w) dt - sum_k lambda_k d_x(psi_k w) dbeta^k,

with the correction drift ``C`` from :func:`stfe.noise.correction_operator`.
The default integrator is semi-implicit Euler-Maruyama (drift implicit, noise
explicit).  ``integrator="strat_heun"`` integrates the Stratonovich form
directly with a predictor-corrector on the noise term, as an independent
discretization for cross-checks.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, NumericalBlowup, SolverFailure, StepFailure
from .grid import (
    Grid,
    GridFunction,
    PeriodicBandedLU,
    PeriodicOperator,
    _solve_checked,
    forward_diff,
)
from .noise import (
    NoiseModel,
    _node_and_half_psi,
    _noise_apply_values,
    correction_operator,
    noise_field,
)

__all__ = [
    "StoStepConfig",
    "StoStepReport",
    "sto_step",
    "auto_substeps",
    "pathwise_l2_drift",
    "drift_operator",
    "mean_field_reference",
]

INTEGRATORS = ("ito_em", "strat_heun")


@dataclass(frozen=True)
class StoStepConfig:
    """Settings for :func:`sto_step`.

    ``n_substeps = 0`` selects :func:`auto_substeps`.  ``drift_scale``
    multiplies the correction drift inside the integrator only; values other
    than 1 solve a different equation and exist for mutation testing.
    """

    eps_visc: float = 0.0
    n_substeps: int = 0
    implicit_drift: bool = True
    integrator: str = "ito_em"
    drift_scale: float = 1.0

    def __post_init__(self):
        if self.eps_visc < 0:
            raise ValueError("eps_visc must be >= 0")
        if self.n_substeps < 0:
            raise ValueError("n_substeps must be >= 0 (0 = automatic)")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")


@dataclass
class StoStepReport:
    substeps: int
    mass_drift: float
    l2_before: float
    l2_after: float
    h1_before: float
    h1_after: float
    min_value: float
    drift_integral: np.ndarray | None = None
    qvar: np.ndarray | None = None
    martingale: np.ndarray | None = None
    snapshots: list = field(default_factory=list)


def auto_substeps(model: NoiseModel, grid: Grid, duration: float) -> int:
    """``max(16, ceil(4 duration sum_k lambda_k^2 ||psi_k||_inf^2 M^2 / L^2))``."""
    strength = float(np.sum(model.lam**2 * model.sup_norms() ** 2))
    return max(16, math.ceil(4.0 * duration * strength * grid.M**2 / grid.L**2))


def drift_operator(model: NoiseModel, grid: Grid, eps_visc: float = 0.0, drift_scale: float = 1.0) -> PeriodicOperator:
    """``drift_scale * C + eps_visc * D2`` as a cyclic tridiagonal operator."""
    return _drift_operator(model, grid, float(eps_visc), float(drift_scale))


@functools.lru_cache(maxsize=32)
def _drift_operator(model, grid, eps_visc, drift_scale):
    op = correction_operator(model, grid) * drift_scale
    if eps_visc:
        op = op + PeriodicOperator.from_stencil(grid.M, {-1: 1.0, 0: -2.0, 1: 1.0}, eps_visc / grid.dx**2)
    return op


@functools.lru_cache(maxsize=32)
def _implicit_system(model, grid, dt, eps_visc, drift_scale):
    op = PeriodicOperator.identity(grid.M, 1) - _drift_operator(model, grid, eps_visc, drift_scale) * dt
    return op, PeriodicBandedLU(op)


def _l2(w, dx):
    return math.sqrt(dx * float(np.dot(w, w)))


def _h1(w, dx):
    g = forward_diff(w, dx)
    return math.sqrt(dx * float(np.dot(g, g)))


def sto_step(
    w0: GridFunction,
    duration: float,
    model: NoiseModel,
    increments,
    cfg: StoStepConfig = StoStepConfig(),
    *,
    test_functions: np.ndarray | None = None,
    record_after=(),
):
    """Advance the transport equation over ``duration``.

    Parameters
    ----------
    w0 : GridFunction
    duration : float
    model : NoiseModel
    increments : array (n_substeps, n_modes)
        Brownian increments with variance ``duration / n_substeps``; the row
        count fixes the number of substeps.
    cfg : StoStepConfig
    test_functions : array (n_phi, M), optional
        Nodal values of test functions.  The report then carries, per test
        function, the drift integral ``sum dt (C w_*, phi)`` (with the true,
        unscaled ``C`` evaluated where the integrator evaluates its drift),
        the discrete quadratic variation and the martingale increments.
    record_after : iterable of int
        Substep counts after which the state is stored in ``report.snapshots``.
    """
    grid = w0.grid
    dx = grid.dx
    model.check_resolvable(grid)
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    n_sub, n_modes = increments.shape
    if n_modes != model.n_modes:
        raise ValueError(f"increments have {n_modes} modes, model has {model.n_modes}")
    if cfg.n_substeps and cfg.n_substeps != n_sub:
        raise ValueError(f"config asks for {cfg.n_substeps} substeps, got {n_sub} increment rows")
    dt = duration / n_sub
    record_after = set(int(r) for r in record_after)

    w = w0.values.copy()
    mass0 = dx * float(np.sum(w))
    l2_0, h1_0 = _l2(w, dx), _h1(w, dx)
    vmin = float(np.min(w))

    implicit = cfg.integrator == "strat_heun" or cfg.implicit_drift
    scale = 0.0 if cfg.integrator == "strat_heun" else cfg.drift_scale
    need_drift = bool(cfg.eps_visc) or (scale != 0.0 and not model.is_silent)
    if implicit and need_drift:
        op, lu = _implicit_system(model, grid, dt, cfg.eps_visc, scale)
    elif need_drift:
        explicit_op = drift_operator(model, grid, cfg.eps_visc, scale)

    tracking = test_functions is not None
    if tracking:
        phis = np.atleast_2d(np.asarray(test_functions, dtype=float))
        C_true = correction_operator(model, grid)
        Ct_phi = _adjoint_rows(C_true, phis)
        grad_phi = (np.roll(phis, -1, axis=1) - phis) / dx
        P, _ = _node_and_half_psi(model, grid)
        lam = model.lam
        drift_int = np.zeros(len(phis))
        qvar = np.zeros(len(phis))
        mart = np.zeros(len(phis))
    snapshots = []

    noisy = not model.is_silent
    for n in range(n_sub):
        dB = increments[n]
        if noisy:
            dW = noise_field(model, grid, dB)
            kick = _noise_apply_values(dW, w, dx)
        else:
            kick = 0.0
        if tracking and noisy:
            Q = P * w
            F = 0.5 * (Q + np.roll(Q, -1, axis=1))
            pair = dx * (F @ grad_phi.T)  # (n_modes, n_phi)
            mart += (lam * dB) @ pair
            qvar += dt * ((lam**2) @ (pair * pair))
        if cfg.integrator == "strat_heun":
            if noisy:
                w_pred = w + kick
                kick = 0.5 * (kick + _noise_apply_values(dW, w_pred, dx))
            rhs = w + kick
            w_drift_point = w
            w_new = _implicit_solve(lu, op, rhs, w, n) if need_drift else rhs
        elif implicit:
            rhs = w + kick
            w_new = _implicit_solve(lu, op, rhs, w, n) if need_drift else rhs
            w_drift_point = w_new
        else:
            w_new = w + kick + (dt * explicit_op.apply(w) if need_drift else 0.0)
            w_drift_point = w
        if tracking:
            drift_int += dt * dx * (Ct_phi @ w_drift_point)
        if not np.all(np.isfinite(w_new)):
            raise NumericalBlowup(
                "non-finite state in stochastic substep", state=w.copy(), substep=n
            )
        w = np.asarray(w_new, dtype=float)
        vmin = min(vmin, float(np.min(w)))
        if n + 1 in record_after:
            if tracking:
                snapshots.append((n + 1, w.copy(), drift_int.copy(), qvar.copy(), mart.copy()))
            else:
                snapshots.append((n + 1, w.copy(), None, None, None))

    report = StoStepReport(
        substeps=n_sub,
        mass_drift=dx * float(np.sum(w)) - mass0,
        l2_before=l2_0,
        l2_after=_l2(w, dx),
        h1_before=h1_0,
        h1_after=_h1(w, dx),
        min_value=vmin,
        drift_integral=drift_int if tracking else None,
        qvar=qvar if tracking else None,
        martingale=mart if tracking else None,
        snapshots=snapshots,
    )
    return GridFunction(grid, w), report


def _implicit_solve(lu, op, rhs, w, n):
    if not np.all(np.isfinite(rhs)):
        raise NumericalBlowup("non-finite state in stochastic substep", state=w.copy(), substep=n)
    try:
        return _solve_checked(lu, op, rhs, 1e-10)
    except SolverFailure as exc:
        raise StepFailure(f"drift solve failed: {exc}", state=w.copy(), substep=n, residual=exc.residual) from exc


def _adjoint_rows(op: PeriodicOperator, phis: np.ndarray) -> np.ndarray:
    """Rows ``op^T phi`` so that ``(op w, phi) = (w, op^T phi)``."""
    p = op.bandwidth
    out = np.zeros_like(phis)
    for d in range(-p, p + 1):
        # (op w)_i contains b[i, d] w_{i+d}; collect by column j = i + d
        out += np.roll(op.bands[:, p + d] * phis, d, axis=1)
    return out


def pathwise_l2_drift(w_before: GridFunction, w_after: GridFunction) -> float:
    """``||w_after||_2^2 - ||w_before||_2^2``."""
    if w_before.grid != w_after.grid:
        raise GridMismatchError("states live on different grids")
    dx = w_before.grid.dx
    return dx * float(np.dot(w_after.values, w_after.values) - np.dot(w_before.values, w_before.values))


def mean_field_reference(w0: GridFunction, duration: float, model: NoiseModel, eps_visc: float = 0.0) -> GridFunction:
    """Exact solution of the mean equation ``m' = (C + eps D2) m`` (matrix exponential)."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.linalg import expm_multiply

    A = csr_matrix(drift_operator(model, w0.grid, eps_visc).to_dense())
    return GridFunction(w0.grid, expm_multiply(A * duration, w0.values))
