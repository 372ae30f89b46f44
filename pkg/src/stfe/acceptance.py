"""Acceptance checks at the reference configuration.

Reference run: L = 2 pi, M = 256, T = 0.1, N = 32, spectrum
``lambda_k = 0.5 (1 + |k|)^-2`` for ``|k| <= 8``, ``eps_mob = 1e-8`` and
``u0 = 1 + 0.5 sin(2 pi x / L)``.

Every ``check_*`` function returns a :class:`CriterionResult`; ``scale``
selects the path counts (``"full"`` for the acceptance gate, ``"desk"`` for
the quicker ``selftest`` command).  Criteria 1, 6, 7 and 10 share the
reference ensemble, produced once by :func:`reference_ensemble`.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, reference_config
from .diagnostics import bandlimited_min
from .ensemble import mean_field_test
from .grid import Grid, GridFunction, derivative
from .noise import NoiseModel, WienerIncrements, basis_h2_gram, sample_increments
from .runner import EnsembleResult, ensemble
from .splitter import refine_study, run_path
from .transport_sto import StoStepConfig, auto_substeps, sto_step

__all__ = ["CriterionResult", "SCALES", "run_all", "reference_ensemble"] + [f"check_{i}" for i in range(1, 11)]

SCALES = {
    "full": {"paths": 512, "mean_field_paths": 512, "refine_paths": 8},
    "desk": {"paths": 128, "mean_field_paths": 256, "refine_paths": 2},
}

# stochastic substep length for the mean-field test; at the reference
# delta = T / 33 the O(lambda^2 t) bias of a wrong drift is far below the
# O(sqrt(t / n)) sampling error and the test cannot tell the two apart
MEAN_FIELD_DURATION = 0.5
MEAN_FIELD_SEED = 20240611
ENSEMBLE_SEED = 12345
REFINE_SEED = 777


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    elapsed: float
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.elapsed:.1f} s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.elapsed = time.perf_counter() - t0 + res.elapsed
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _cfg(scale: str, **kw) -> RunConfig:
    cfg = reference_config()
    ens = replace(cfg.ensemble, n_paths=SCALES[scale]["paths"], seed=ENSEMBLE_SEED)
    return replace(cfg, ensemble=ens, **kw)


def reference_ensemble(scale: str = "full", workers: int = 1, out_dir=None) -> EnsembleResult:
    """The shared Monte Carlo run of the reference configuration."""
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="stfe_ens_"))
    t0 = time.perf_counter()
    res = ensemble(_cfg(scale), out, workers=workers)
    res.elapsed = time.perf_counter() - t0
    return res


# -- 1 ------------------------------------------------------------------------


@_timed
def check_1(ens: EnsembleResult) -> CriterionResult:
    """Mass conserved to 1e-11 relative at every sample time on every path."""
    st = ens.stats
    m0 = st.columns["mass"].mean[0]
    dev = max(np.max(np.abs(st.columns["mass"].max - m0)), np.max(np.abs(st.columns["mass"].min - m0))) / m0
    per_path = ens.elapsed / st.n_paths
    ok = dev <= 1e-11 and per_path < 10.0 and not st.failures
    return CriterionResult(
        1, "mass conservation", ok,
        f"max rel. mass drift {dev:.2e} (tol 1e-11) over {st.n_paths} paths x {len(st.times)} times, "
        f"{per_path:.2f} s/path",
        0.0, {"rel_drift": dev, "seconds_per_path": per_path},
    )


# -- 2, 3 ---------------------------------------------------------------------


def _deterministic_run():
    cfg = reference_config()
    u0 = cfg.u0()
    silent = NoiseModel.silent(cfg.L, K=cfg.model.K)
    inc = sample_increments(silent, cfg.schedule, 0, 1, grid=u0.grid)
    return run_path(u0, cfg.schedule, silent, inc, 0)


@_timed
def check_2(path=None) -> CriterionResult:
    """Energy non-increasing across all inner steps and the dissipation budget."""
    t0 = time.perf_counter()
    path = path or _deterministic_run()
    reps = path.det_reports
    E = np.concatenate([r.energies for r in reps])
    offsets = np.cumsum([0.0] + [r.dissipation for r in reps[:-1]])
    D = np.concatenate([r.dissipations + off for r, off in zip(reps, offsets)])
    # the silent transport substep is the identity: glued reports chain exactly
    glued = all(np.array_equal(path.w_start(j), path.w_end(j)) for j in range(1, len(reps) + 1))
    rise = float(np.max(np.diff(E)))
    budget = float(np.max(E + D - E[0]))
    ok = glued and rise <= 1e-10 and budget <= 1e-8 and time.perf_counter() - t0 < 30.0
    return CriterionResult(
        2, "energy dissipation (no noise)", ok,
        f"max energy rise {rise:.2e} (tol 1e-10), max budget excess {budget:.2e} (tol 1e-8), "
        f"{len(E) - len(reps)} inner steps",
        0.0, {"max_rise": rise, "budget": budget, "path": path},
    )


@_timed
def check_3(path=None) -> CriterionResult:
    """Signed entropy non-increasing within 1e-8 M."""
    path = path or _deterministic_run()
    S = np.concatenate([r.entropies for r in path.det_reports])
    M = path.u0.grid.M
    rise = float(np.max(np.diff(S)))
    ok = bool(np.all(np.isfinite(S))) and rise <= 1e-8 * M
    return CriterionResult(
        3, "entropy monotonicity (no noise)", ok,
        f"max entropy rise {rise:.2e} (tol {1e-8 * M:.2e})", 0.0, {"max_rise": rise},
    )


# -- 4 ------------------------------------------------------------------------


def _shift(values: np.ndarray, s: float, L: float) -> np.ndarray:
    """Exact periodic translation ``f(x - s)`` of the trigonometric interpolant."""
    M = values.size
    k = np.fft.rfftfreq(M, d=L / M) * 2.0 * np.pi
    return np.fft.irfft(np.fft.rfft(values) * np.exp(-1j * k * s), n=M)


@_timed
def check_4(duration: float = 0.01, n_substeps: int = 64, seed: int = 7, n_paths: int = 4) -> CriterionResult:
    """Constant-mode noise translates the profile rigidly.

    The oracle error is checked for both integrators.  The pathwise
    invariants are checked with the Stratonovich (Heun) integrator: the
    Euler-Maruyama default conserves the L2 norm only in expectation, with
    per-path fluctuations of order ``sqrt(dt)``, which is reported.
    """
    cfg = reference_config()
    grid = Grid(cfg.L, cfg.M)
    w0 = cfg.u0()
    model = NoiseModel.zero_mode_only(cfg.L, 1.0, K=0)
    psi0 = model.amplitudes()[0]
    inc = WienerIncrements(seed, 1, n_substeps, duration / n_substeps, n_paths)
    dx = grid.dx
    l2 = lambda v: math.sqrt(dx * float(v @ v))  # noqa: E731
    mass0, l20, min0 = dx * w0.values.sum(), l2(w0.values), bandlimited_min(w0.values)
    worst = {"oracle_ito": 0.0, "oracle_heun": 0.0, "mass": 0.0, "l2": 0.0, "min": 0.0, "l2_ito": 0.0}
    for p in range(n_paths):
        dB = inc.path(p)
        exact = _shift(w0.values, psi0 * float(dB.sum()), grid.L)
        w_ito, _ = sto_step(w0, duration, model, dB, StoStepConfig())
        w_h, _ = sto_step(w0, duration, model, dB, StoStepConfig(integrator="strat_heun"))
        worst["oracle_ito"] = max(worst["oracle_ito"], l2(w_ito.values - exact))
        worst["oracle_heun"] = max(worst["oracle_heun"], l2(w_h.values - exact))
        worst["mass"] = max(worst["mass"], abs(dx * w_h.values.sum() - mass0) / mass0)
        worst["l2"] = max(worst["l2"], abs(l2(w_h.values) - l20) / l20)
        worst["min"] = max(worst["min"], abs(bandlimited_min(w_h.values) - min0) / abs(min0))
        worst["l2_ito"] = max(worst["l2_ito"], abs(l2(w_ito.values) - l20) / l20)
    ok = (
        worst["oracle_ito"] <= 5e-3
        and worst["oracle_heun"] <= 5e-3
        and max(worst["mass"], worst["l2"], worst["min"]) <= 1e-6
    )
    return CriterionResult(
        4, "translation-noise exactness", ok,
        f"oracle L2 error {worst['oracle_ito']:.1e} (Ito-EM) / {worst['oracle_heun']:.1e} (Heun), tol 5e-3; "
        f"Heun rel. drift mass {worst['mass']:.1e}, L2 {worst['l2']:.1e}, min {worst['min']:.1e} (tol 1e-6); "
        f"Ito-EM L2 drift {worst['l2_ito']:.1e} (informational)",
        0.0, worst,
    )


# -- 5 ------------------------------------------------------------------------


@_timed
def check_5(scale: str = "full") -> CriterionResult:
    """Ensemble mean of the transport substep follows the drift-only flow."""
    cfg = reference_config()
    w0 = cfg.u0()
    n = SCALES[scale]["mean_field_paths"]
    n_sub = auto_substeps(cfg.model, w0.grid, MEAN_FIELD_DURATION)
    good = mean_field_test(w0, MEAN_FIELD_DURATION, cfg.model, n, MEAN_FIELD_SEED, n_substeps=n_sub)
    bad = mean_field_test(
        w0, MEAN_FIELD_DURATION, cfg.model, n, MEAN_FIELD_SEED, StoStepConfig(drift_scale=2.0), n_substeps=n_sub
    )
    fg, fb = good.fraction_within(3.0), bad.fraction_within(3.0)
    ok = fg >= 0.99 and fb < 0.99
    return CriterionResult(
        5, "Stratonovich correction (mean field)", ok,
        f"{n} paths, t={MEAN_FIELD_DURATION}: {100 * fg:.1f}% of nodes within 3 SE (need >= 99%); "
        f"mutation (factor 1/2 dropped): {100 * fb:.1f}% (must fail)",
        0.0, {"fraction": fg, "mutant_fraction": fb, "max_z": float(np.max(np.abs(good.z)))},
    )


# -- 6, 7 ---------------------------------------------------------------------


@_timed
def check_6(ens: EnsembleResult) -> CriterionResult:
    """Martingale mean and compensated-square tests for every phi and sample time."""
    st = ens.stats
    bad = [(v.phi, f) for v in st.verdicts for f in v.failures]
    zs = ", ".join(f"{v.phi}: {v.worst_mean_z:.2f}/{v.worst_square_z:.2f}" for v in st.verdicts[1:])
    detail = f"{st.n_paths} paths, times {list(map(float, st.test_times))}; worst z (mean/square) {zs}"
    if bad:
        detail += f"; failures {bad[:4]}"
    return CriterionResult(6, "martingale residual", ens.passed and st.n_paths >= 64, detail, 0.0, {"failures": bad})


@_timed
def check_7(ens: EnsembleResult) -> CriterionResult:
    """Minimum over nodes, inner steps and paths stays above -1e-8 ||u0||_inf."""
    st = ens.stats
    u0max = float(np.max(np.abs(reference_config().u0().values)))
    bound = -1e-8 * u0max
    return CriterionResult(
        7, "nonnegativity", st.global_min >= bound,
        f"global min {st.global_min:.4f} (bound {bound:.1e}) over {st.n_paths} paths", 0.0,
        {"global_min": st.global_min},
    )


# -- 8 ------------------------------------------------------------------------


@_timed
def check_8(scale: str = "full", N_list=(4, 8, 16, 32)) -> CriterionResult:
    """Coupled refinement differences strictly decrease on every path."""
    cfg = reference_config()
    n_paths = SCALES[scale]["refine_paths"]
    table = refine_study(
        cfg.u0(), cfg.model, cfg.schedule.T, N_list, REFINE_SEED, schedule=cfg.schedule, path_ids=tuple(range(n_paths))
    )
    dec = table.decreasing(strict=True)
    ratios = table.final_diff[:-1] / table.final_diff[1:]
    return CriterionResult(
        8, "splitting self-convergence", bool(np.all(dec)),
        f"{n_paths} coupled paths, N={list(N_list)}: mean differences "
        f"{', '.join(f'{d:.2e}' for d in table.final_diff.mean(axis=1))}; "
        f"min successive ratio {float(np.min(ratios)):.2f}",
        0.0, {"table": table},
    )


# -- 9 ------------------------------------------------------------------------


@_timed
def check_9() -> CriterionResult:
    """H2 orthonormality of the sampled basis and the derivative identity."""
    L, M, K = 2 * math.pi, 256, 8
    grid = Grid(L, M)
    model = NoiseModel.from_spectrum(L, K=K)
    G = basis_h2_gram(model, grid)
    diag = float(np.max(np.abs(np.diag(G) - 1.0)))
    off = float(np.max(np.abs(G - np.diag(np.diag(G)))))
    P = model.psi(grid.x)
    a = model.wavenumbers()
    der = 0.0
    for i, k in enumerate(model.modes):
        d = derivative(GridFunction(grid, P[i]), 1).values
        der = max(der, float(np.max(np.abs(d - a[i] * P[model.K - k]))))
    ok = diag <= 5e-3 and off <= 1e-10 and der <= 1e-3
    return CriterionResult(
        9, "basis fidelity", ok,
        f"Gram diagonal error {diag:.1e} (tol 5e-3), off-diagonal {off:.1e} (tol 1e-10), "
        f"derivative identity {der:.1e} (tol 1e-3)",
        0.0, {"diag": diag, "off": off, "der": der},
    )


# -- 10 -----------------------------------------------------------------------


@_timed
def check_10(ens: EnsembleResult, scale: str = "full", workers: int = 2, out_dir=None) -> CriterionResult:
    """A second run with another worker count reproduces the CSVs byte for byte."""
    other = reference_ensemble(scale, workers=workers, out_dir=out_dir)
    same = {}
    for name in ("ensemble.csv", "verdicts.json", "manifest.json"):
        same[name] = (ens.out_dir / name).read_bytes() == (other.out_dir / name).read_bytes()
    ok = all(same.values()) and ens.manifest.checksums == other.manifest.checksums
    return CriterionResult(
        10, "determinism", ok,
        f"workers 1 vs {workers}: " + ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()),
        0.0, {"other": other},
    )


def run_all(scale: str = "full", report=print) -> list:
    """Run every criterion, reporting one line each; returns the results."""
    results = []

    def emit(r):
        results.append(r)
        if report is not None:
            report(r.line())

    emit(check_9())
    emit(check_4())
    c2 = check_2()
    emit(c2)
    emit(check_3(c2.data["path"]))
    emit(check_5(scale))
    emit(check_8(scale))
    ens = reference_ensemble(scale)
    emit(check_1(ens))
    emit(check_6(ens))
    emit(check_7(ens))
    emit(check_10(ens, scale))
    results.sort(key=lambda r: r.number)
    return results
