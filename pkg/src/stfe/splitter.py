"""Trotter-Kato splitting: alternate the thin-film and transport substeps.

On each interval ``[(j-1) delta, j delta)``, ``delta = T / (N + 1)``, the
deterministic flow runs for ``delta`` from the current state, then the
transport flow runs for ``delta`` from the deterministic result, and its end
state starts the next interval.  The concatenated path ``u_N`` runs both
flows at double speed, so that ``t in [(j-1) delta, (j-1/2) delta)`` shows the
deterministic stage and ``[(j-1/2) delta, j delta)`` the stochastic one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import (
    SERIES_COLUMNS,
    DiagnosticsSeries,
    EntropyParams,
    TestFunctionSet,
    find_record,
    series_row,
)
from .errors import StfeError
from .grid import Grid, GridFunction
from .noise import NoiseModel, WienerIncrements
from .tfe_det import DetStepConfig, det_step
from .transport_sto import StoStepConfig, auto_substeps, sto_step

__all__ = [
    "SplitSchedule",
    "SplitPath",
    "Record",
    "run_path",
    "concat_clock",
    "concat_time",
    "refine_study",
    "RefineTable",
    "DETERMINISTIC",
    "STOCHASTIC",
    "check_initial",
]

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class SplitSchedule:
    T: float
    N: int
    det: DetStepConfig = DetStepConfig()
    sto: StoStepConfig = StoStepConfig()
    sample_times: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("refinement index N must be a nonnegative integer")
        st = tuple(float(t) for t in self.sample_times)
        if any(b <= a for a, b in zip(st, st[1:])):
            raise ValueError("sample_times must be strictly increasing")
        if st and (st[0] < 0 or st[-1] >= self.T):
            raise ValueError("sample_times must lie in [0, T)")
        object.__setattr__(self, "sample_times", st)
        object.__setattr__(self, "N", int(self.N))

    @property
    def delta(self) -> float:
        return self.T / (self.N + 1)

    @property
    def n_intervals(self) -> int:
        return self.N + 1

    def sto_substeps(self, model: NoiseModel, grid: Grid | None = None) -> int:
        if self.sto.n_substeps:
            return self.sto.n_substeps
        if grid is None:
            raise ValueError("automatic substep count needs the grid")
        return auto_substeps(model, grid, self.delta)

    def boundary_times(self) -> np.ndarray:
        """``0, delta/2, delta, ..., (2N+1) delta/2`` on the concatenated clock."""
        return 0.5 * self.delta * np.arange(2 * self.n_intervals)


def concat_clock(schedule: SplitSchedule, t: float):
    """Map concatenated time ``t`` to ``(segment, j, internal_time)``."""
    if not 0 <= t < schedule.T:
        raise ValueError(f"t={t!r} outside [0, T={schedule.T})")
    d = schedule.delta
    j = min(int(t // d) + 1, schedule.n_intervals)
    if t < (j - 0.5) * d:
        return DETERMINISTIC, j, 2.0 * t - (j - 1) * d
    return STOCHASTIC, j, 2.0 * t - j * d


def concat_time(schedule: SplitSchedule, segment: str, j: int, internal_time: float) -> float:
    """Inverse of :func:`concat_clock`."""
    d = schedule.delta
    if segment == DETERMINISTIC:
        return 0.5 * (internal_time + (j - 1) * d)
    if segment == STOCHASTIC:
        return 0.5 * (internal_time + j * d)
    raise ValueError(f"unknown segment {segment!r}")


@dataclass
class _Acc:
    det_flux: np.ndarray
    sto_drift: np.ndarray
    qvar: np.ndarray
    mart: np.ndarray
    dissipation: float = 0.0

    def copy(self):
        return _Acc(self.det_flux.copy(), self.sto_drift.copy(), self.qvar.copy(), self.mart.copy(), self.dissipation)


@dataclass
class Record:
    """State of ``u_N`` at one concatenated time plus the running integrals."""

    time: float
    segment: str
    j: int
    internal_time: float
    snap: float
    state: np.ndarray
    acc: _Acc


@dataclass
class SplitPath:
    """One realization of the scheme.

    ``states[0]`` is ``u0``; ``states[2j-1]`` is ``v_N(j delta - 0)`` which is
    also ``w_N((j-1) delta)``; ``states[2j]`` is ``w_N(j delta - 0)`` which is
    also ``v_N(j delta)``.  The shared entries are the same array objects.
    """

    u0: GridFunction
    schedule: SplitSchedule
    model: NoiseModel
    path_id: int
    phis: TestFunctionSet
    states: list
    records: list
    series: DiagnosticsSeries
    det_reports: list = field(default_factory=list)
    sto_reports: list = field(default_factory=list)
    entropy: EntropyParams | None = None

    @property
    def final(self) -> GridFunction:
        return GridFunction(self.u0.grid, self.states[-1])

    def v_start(self, j):
        return self.states[2 * j - 2]

    def v_end(self, j):
        return self.states[2 * j - 1]

    def w_start(self, j):
        return self.states[2 * j - 1]

    def w_end(self, j):
        return self.states[2 * j]

    def record_at(self, t: float) -> Record:
        return find_record(self.records, t)

    def state_at(self, t: float) -> GridFunction:
        return GridFunction(self.u0.grid, self.record_at(t).state)


def check_initial(u0: GridFunction, cfg: DetStepConfig):
    """Reject initial states the thin-film substep cannot start from."""
    if cfg.eps_mob == 0:
        if np.any(u0.values <= 0):
            raise ValueError("u0 must be strictly positive at every node when eps_mob = 0")
    elif np.any(u0.values < 0):
        raise ValueError("u0 must be nonnegative")


def _interval_increments(increments: WienerIncrements, path_id: int, schedule: SplitSchedule, n_sub: int):
    target = schedule.n_intervals * n_sub
    if increments.n_steps % target:
        raise ValueError(
            f"increment lattice ({increments.n_steps} steps) does not refine "
            f"the substep lattice ({target} steps)"
        )
    group = increments.n_steps // target
    expected = schedule.delta / n_sub
    if not math.isclose(increments.dt * group, expected, rel_tol=1e-9):
        raise ValueError(
            f"increment step {increments.dt * group:g} does not match substep {expected:g}"
        )
    table = increments.path(path_id) if group == 1 else increments.aggregated(path_id, group)
    return table.reshape(schedule.n_intervals, n_sub, increments.n_modes)


def run_path(
    u0: GridFunction,
    schedule: SplitSchedule,
    model: NoiseModel,
    increments: WienerIncrements,
    path_id: int = 0,
    *,
    phis: TestFunctionSet = TestFunctionSet(),
    entropy: EntropyParams = EntropyParams(),
    carry_dt: bool = True,
) -> SplitPath:
    """Run the splitting scheme for one sample path.

    Parameters
    ----------
    u0 : GridFunction
    schedule : SplitSchedule
    model : NoiseModel
    increments : WienerIncrements
        Its lattice must equal or refine the stochastic substep lattice; finer
        tables are summed in groups (Brownian coupling across refinements).
    path_id : int
    phis : TestFunctionSet
        Test functions whose weak-form residual is tracked.
    entropy : EntropyParams
    carry_dt : bool
        Start each deterministic substep with the inner step the previous one
        ended with.

    Raises
    ------
    StfeError
        Substep failures, with ``interval`` and ``substep`` attributes set.
    """
    grid = u0.grid
    model.check_resolvable(grid)
    check_initial(u0, schedule.det)
    n_sub = schedule.sto_substeps(model, grid)
    table = _interval_increments(increments, path_id, schedule, n_sub)
    d = schedule.delta
    h = d / n_sub

    phi_vals = phis.values(grid)
    phi_grads = phis.interface_gradients(grid)
    n_phi = len(phis)
    acc = _Acc(np.zeros(n_phi), np.zeros(n_phi), np.zeros(n_phi), np.zeros(n_phi))

    # user sample times -> per-interval requests
    det_requests = {}
    sto_requests = {}
    for t in schedule.sample_times:
        seg, j, tau = concat_clock(schedule, t)
        off = tau - (j - 1) * d
        if seg == DETERMINISTIC:
            if off > 0:
                det_requests.setdefault(j, []).append((t, off))
        else:
            k = int(round(off / h))
            if 0 < k:
                sto_requests.setdefault(j, []).append((t, k, abs(off - k * h)))

    state = u0.values.copy()
    states = [state]
    records = [Record(0.0, DETERMINISTIC, 1, 0.0, 0.0, state, acc.copy())]
    det_reports, sto_reports = [], []
    dt_hint = None
    for j in range(1, schedule.n_intervals + 1):
        t0 = (j - 1) * d
        reqs = det_requests.get(j, [])
        try:
            v_out, rep = det_step(
                GridFunction(grid, state),
                d,
                schedule.det,
                checkpoints=[off for _, off in reqs],
                test_gradients=phi_grads,
                dt_hint=dt_hint,
            )
        except StfeError as exc:
            exc.interval, exc.substep = j, DETERMINISTIC
            raise
        for (t, off), (_, snap, diss, flux) in zip(reqs, rep.snapshots):
            a = acc.copy()
            a.det_flux += flux
            a.dissipation += diss
            records.append(Record(t, DETERMINISTIC, j, t0 + off, 0.0, snap, a))
        acc.det_flux += rep.flux_integral
        acc.dissipation += rep.dissipation
        if carry_dt:
            dt_hint = rep.final_dt
        det_reports.append(rep)
        state = v_out.values
        states.append(state)
        records.append(Record((j - 0.5) * d, STOCHASTIC, j, t0, 0.0, state, acc.copy()))

        reqs = [r for r in sto_requests.get(j, []) if r[1] < n_sub]
        try:
            w_out, srep = sto_step(
                GridFunction(grid, state),
                d,
                model,
                table[j - 1],
                schedule.sto,
                test_functions=phi_vals,
                record_after=[k for _, k, _ in reqs],
            )
        except StfeError as exc:
            exc.interval, exc.substep = j, STOCHASTIC
            raise
        snaps = {s[0]: s for s in srep.snapshots}
        for t, k, dist in reqs:
            _, snap, drift, qv, mart = snaps[k]
            a = acc.copy()
            a.sto_drift += drift
            a.qvar += qv
            a.mart += mart
            records.append(Record(t, STOCHASTIC, j, t0 + k * h, dist, snap, a))
        acc.sto_drift += srep.drift_integral
        acc.qvar += srep.qvar
        acc.mart += srep.martingale
        sto_reports.append(srep)
        state = w_out.values
        states.append(state)
        if j < schedule.n_intervals:
            records.append(Record(j * d, DETERMINISTIC, j + 1, j * d, 0.0, state, acc.copy()))
    # left limit at T, tagged with time T
    records.append(Record(schedule.T, STOCHASTIC, schedule.n_intervals, schedule.T, 0.0, state, acc.copy()))
    records.sort(key=lambda r: r.time)
    records = _dedupe(records)

    entropy = entropy.resolved(u0)
    series = _build_series(u0, records, phi_vals, phis)
    return SplitPath(
        u0=u0,
        schedule=schedule,
        model=model,
        path_id=path_id,
        phis=phis,
        states=states,
        records=records,
        series=series,
        det_reports=det_reports,
        sto_reports=sto_reports,
        entropy=entropy,
    )


def _dedupe(records):
    out = []
    for r in records:
        if out and r.time == out[-1].time:
            continue
        out.append(r)
    return out


def _build_series(u0, records, phi_vals, phis) -> DiagnosticsSeries:
    grid = u0.grid
    u0_pair = grid.dx * (phi_vals @ u0.values)
    rows = [series_row(GridFunction(grid, r.state), u0_pair, phi_vals, r.acc) for r in records]
    return DiagnosticsSeries(
        times=np.array([r.time for r in records]),
        columns={c: np.array([row[c] for row in rows]) for c in SERIES_COLUMNS + ("dissipation",)},
        resid=np.array([row["resid"] for row in rows]).reshape(len(rows), len(phis)),
        qvar=np.array([row["qvar"] for row in rows]).reshape(len(rows), len(phis)),
        phi_names=phis.names,
    )


# -- self-convergence under Brownian coupling ---------------------------------


@dataclass
class RefineTable:
    """Pairwise differences between consecutive refinements.

    ``final_diff[i, p]`` is ``||u_{N_i}(T-) - u_{N_{i+1}}(T-)||_2`` on path ``p``;
    ``max_diff`` the same maximized over the common sample times (NaN when
    the schedule has none).
    """

    N_list: tuple
    path_ids: tuple
    final_diff: np.ndarray
    max_diff: np.ndarray
    finals: dict

    def decreasing(self, strict: bool = True) -> np.ndarray:
        """Per path: are the final differences (strictly) decreasing in N?"""
        d = self.final_diff
        steps = d[1:] < d[:-1] if strict else d[1:] <= d[:-1]
        return np.all(steps, axis=0)

    def rows(self):
        for i, N in enumerate(self.N_list):
            if i + 1 < len(self.N_list):
                yield N, self.N_list[i + 1], self.final_diff[i], self.max_diff[i]


def coupled_lattice(N_list, model, grid, schedule: SplitSchedule) -> tuple[int, dict]:
    """Finest common increment lattice for all ``N`` and substeps per ``N``."""
    subs = {}
    lcm = 1
    for N in N_list:
        s = replace(schedule, N=N)
        subs[N] = s.sto_substeps(model, grid)
        lcm = math.lcm(lcm, (N + 1) * subs[N])
    return lcm, subs


def refine_study(
    u0: GridFunction,
    model: NoiseModel,
    T: float,
    N_list,
    seed: int,
    *,
    schedule: SplitSchedule | None = None,
    path_ids=(0,),
    phis: TestFunctionSet = TestFunctionSet(),
) -> RefineTable:
    """Coupled self-convergence study over increasing ``N``.

    All runs of a path consume the same Brownian path: increments are drawn
    on the least common multiple of the substep lattices and summed.  When
    ``schedule`` uses automatic substeps, each ``N`` fixes its own count from
    the auto rule.
    """
    N_list = tuple(int(n) for n in N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    base = schedule if schedule is not None else SplitSchedule(T, N_list[0])
    base = replace(base, T=T)
    grid = u0.grid
    Q, subs = coupled_lattice(N_list, model, grid, base)
    inc = WienerIncrements(seed=seed, n_modes=model.n_modes, n_steps=Q, dt=T / Q, n_paths=max(path_ids) + 1)
    finals = {}
    samples = {}
    for N in N_list:
        sched = replace(base, N=N, sto=replace(base.sto, n_substeps=subs[N]))
        for p in path_ids:
            path = run_path(u0, sched, model, inc, p, phis=phis)
            finals[N, p] = path.states[-1]
            samples[N, p] = [path.record_at(t).state for t in base.sample_times]
    n_pairs = len(N_list) - 1
    final_diff = np.zeros((n_pairs, len(path_ids)))
    max_diff = np.full((n_pairs, len(path_ids)), np.nan)
    dx = grid.dx
    for i in range(n_pairs):
        a, b = N_list[i], N_list[i + 1]
        for c, p in enumerate(path_ids):
            final_diff[i, c] = math.sqrt(dx * np.sum((finals[a, p] - finals[b, p]) ** 2))
            if base.sample_times:
                max_diff[i, c] = max(
                    math.sqrt(dx * np.sum((x - y) ** 2)) for x, y in zip(samples[a, p], samples[b, p])
                )
    return RefineTable(N_list, tuple(path_ids), final_diff, max_diff, finals)
