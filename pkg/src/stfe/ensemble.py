"""Monte Carlo driver and the statistical tests built on it."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import SERIES_COLUMNS, EntropyParams, TestFunctionSet
from .errors import EnsembleFailure, StfeError
from .grid import GridFunction
from .noise import NoiseModel, sample_increments
from .splitter import SplitSchedule, run_path
from .transport_sto import StoStepConfig, mean_field_reference, sto_step

__all__ = [
    "EnsembleConfig",
    "EnsembleStats",
    "MartingaleVerdict",
    "run_ensemble",
    "martingale_test",
    "mean_field_test",
    "resolve_workers",
]

SUCCESS_FRACTION = 0.9
MEAN_SIGMAS = 3.0
SQUARE_SIGMAS = 5.0
# residuals that are identically zero (phi = 1, silent noise) have SE = 0;
# rounding in the pairings needs an absolute floor
ATOL = 1e-11


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    seed: int = 0
    workers: int = 1
    run_martingale_test: bool = True

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must fit in 64 bits")


def resolve_workers(cfg: EnsembleConfig) -> int:
    """Worker count, overridden by the ``STFE_THREADS`` environment variable."""
    env = os.environ.get("STFE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"STFE_THREADS={env!r} is not an integer") from None
        if n < 1:
            raise ValueError("STFE_THREADS must be >= 1")
        return n
    return cfg.workers


@dataclass
class _Moments:
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def of(cls, stack: np.ndarray) -> "_Moments":
        # stack: (n_paths, ...) reduced over axis 0 in path_id order
        n = stack.shape[0]
        with np.errstate(invalid="ignore"):
            mean = np.mean(stack, axis=0)
            var = np.var(stack, axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
        return cls(mean, var, np.sqrt(var / n), np.min(stack, axis=0), np.max(stack, axis=0))


@dataclass
class MartingaleVerdict:
    """Outcome of the finite-sample martingale checks for one test function."""

    phi: str
    passed: bool
    worst_mean_z: float
    worst_square_z: float
    failures: list = field(default_factory=list)  # (time, kind, statistic, bound)


@dataclass
class EnsembleStats:
    """Per-time, per-diagnostic moments over the successful paths.

    ``columns[name]`` holds moments for every :data:`SERIES_COLUMNS` entry and
    ``dissipation``; ``resid`` and ``qvar`` moments have shape
    ``(n_times, n_phi)``.  ``square_gap`` is the per-path
    ``M_phi^2 - <M_phi>``, whose mean the compensated-square test bounds.
    """

    times: np.ndarray
    test_times: np.ndarray
    columns: dict
    resid: _Moments
    qvar: _Moments
    square_gap: _Moments
    phi_names: list
    n_paths: int
    path_ids: list
    failures: dict
    global_min: float
    finals: np.ndarray
    verdicts: list = field(default_factory=list)

    @property
    def n_phi(self):
        return len(self.phi_names)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def _one_path(args):
    u0, schedule, model, inc, path_id, phis, entropy = args
    try:
        p = run_path(u0, schedule, model, inc, path_id, phis=phis, entropy=entropy)
    except StfeError as exc:
        return path_id, None, f"{type(exc).__name__}: {exc} (interval={getattr(exc, 'interval', '?')}, substep={getattr(exc, 'substep', '?')})"
    s = p.series
    inner_min = min(
        [r.min_value for r in p.det_reports] + [r.min_value for r in p.sto_reports] + [float(np.min(s.columns["min_u"]))]
    )
    payload = {
        "times": s.times,
        "columns": s.columns,
        "resid": s.resid,
        "qvar": s.qvar,
        "global_min": inner_min,
        "final": p.states[-1],
    }
    return path_id, payload, None


def run_ensemble(
    u0: GridFunction,
    schedule: SplitSchedule,
    model: NoiseModel,
    cfg: EnsembleConfig,
    *,
    phis: TestFunctionSet = TestFunctionSet(),
    entropy: EntropyParams = EntropyParams(),
) -> EnsembleStats:
    """Run ``cfg.n_paths`` independent paths and reduce their diagnostics.

    Path ``p`` draws its increments from ``(cfg.seed, p)`` only, and the
    reduction runs in ``path_id`` order, so the result does not depend on
    the worker count.

    Raises
    ------
    EnsembleFailure
        When fewer than 90% of the paths finish; ``.failures`` maps path ids
        to the error each one raised.
    """
    inc = sample_increments(model, schedule, cfg.seed, cfg.n_paths, grid=u0.grid)
    jobs = [(u0, schedule, model, inc, p, phis, entropy) for p in range(cfg.n_paths)]
    workers = min(resolve_workers(cfg), cfg.n_paths)
    if workers == 1:
        results = [_one_path(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_path, jobs, chunksize=max(1, cfg.n_paths // (4 * workers))))
    results.sort(key=lambda r: r[0])
    failures = {pid: msg for pid, _, msg in results if msg is not None}
    ok = [(pid, pl) for pid, pl, _ in results if pl is not None]
    if len(ok) < math.ceil(SUCCESS_FRACTION * cfg.n_paths):
        raise EnsembleFailure(
            f"{len(failures)} of {cfg.n_paths} paths failed", failures=failures
        )
    times = ok[0][1]["times"]
    cols = {
        c: _Moments.of(np.stack([pl["columns"][c] for _, pl in ok]))
        for c in SERIES_COLUMNS + ("dissipation",)
    }
    R = np.stack([pl["resid"] for _, pl in ok])
    Qv = np.stack([pl["qvar"] for _, pl in ok])
    stats = EnsembleStats(
        times=times,
        test_times=_test_times(schedule, times),
        columns=cols,
        resid=_Moments.of(R),
        qvar=_Moments.of(Qv),
        square_gap=_Moments.of(R * R - Qv),
        phi_names=phis.names,
        n_paths=len(ok),
        path_ids=[pid for pid, _ in ok],
        failures=failures,
        global_min=min(pl["global_min"] for _, pl in ok),
        finals=np.stack([pl["final"] for _, pl in ok]),
    )
    if cfg.run_martingale_test:
        stats.verdicts = martingale_test(stats)
    return stats


def _test_times(schedule: SplitSchedule, times: np.ndarray) -> np.ndarray:
    """User sample times plus ``T-``; all recorded times if none were requested."""
    if not schedule.sample_times:
        return times[1:]
    return np.array(list(schedule.sample_times) + [schedule.T])


def martingale_test(stats: EnsembleStats, atol: float = ATOL) -> list:
    """Finite-sample checks that ``M_phi`` is a martingale with bracket ``<M_phi>``.

    At every test time and for every test function:
    ``|mean M| <= 3 SE(M) + atol`` and
    ``|mean(M^2) - mean <M>| <= 5 SE(M^2 - <M>) + atol``.
    """
    idx = [int(np.argmin(np.abs(stats.times - t))) for t in stats.test_times]
    verdicts = []
    for p, name in enumerate(stats.phi_names):
        fails = []
        zm = zs = 0.0
        for i in idx:
            t = float(stats.times[i])
            m, se = stats.resid.mean[i, p], stats.resid.se[i, p]
            g, gse = stats.square_gap.mean[i, p], stats.square_gap.se[i, p]
            # ratios of rounding-level numbers say nothing: skip values under the floor
            if se > 0 and abs(m) > atol:
                zm = max(zm, abs(m) / se)
            if gse > 0 and abs(g) > atol:
                zs = max(zs, abs(g) / gse)
            if not abs(m) <= MEAN_SIGMAS * se + atol:
                fails.append((t, "mean", float(m), float(MEAN_SIGMAS * se + atol)))
            if not abs(g) <= SQUARE_SIGMAS * gse + atol:
                fails.append((t, "square", float(g), float(SQUARE_SIGMAS * gse + atol)))
        verdicts.append(MartingaleVerdict(name, not fails, zm, zs, fails))
    return verdicts


@dataclass
class MeanFieldResult:
    mean: np.ndarray
    se: np.ndarray
    reference: np.ndarray
    z: np.ndarray

    def fraction_within(self, sigmas: float = 3.0) -> float:
        return float(np.mean(np.abs(self.z) <= sigmas))


def mean_field_test(
    w0: GridFunction,
    duration: float,
    model: NoiseModel,
    n_paths: int,
    seed: int,
    cfg: StoStepConfig = StoStepConfig(),
    n_substeps: int = 64,
) -> MeanFieldResult:
    """Compare the ensemble mean of one transport substep with ``exp(t C) w0``.

    The Itô expectation of the transport flow solves the drift-only equation,
    so a wrong correction drift shows up as a bias in the mean.
    """
    from .noise import WienerIncrements

    inc = WienerIncrements(seed, model.n_modes, n_substeps, duration / n_substeps, n_paths)
    acc = np.zeros(w0.grid.M)
    acc2 = np.zeros(w0.grid.M)
    for p in range(n_paths):
        w, _ = sto_step(w0, duration, model, inc.path(p), cfg)
        acc += w.values
        acc2 += w.values**2
    mean = acc / n_paths
    var = (acc2 - n_paths * mean**2) / (n_paths - 1)
    se = np.sqrt(np.maximum(var, 0.0) / n_paths)
    ref = mean_field_reference(w0, duration, model, cfg.eps_visc).values
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - ref) / se, np.where(mean == ref, 0.0, np.inf))
    return MeanFieldResult(mean, se, ref, z)
