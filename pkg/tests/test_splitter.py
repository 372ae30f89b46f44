import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stfe import (
    DetStepConfig,
    Grid,
    GridFunction,
    NoiseModel,
    SplitSchedule,
    StoStepConfig,
    TestFunctionSet,
    WienerIncrements,
    concat_clock,
    det_step,
    refine_study,
    run_path,
    sample_increments,
    sto_step,
)
from stfe.diagnostics import martingale_residual
from stfe.errors import SamplingError, StepFailure
from stfe.splitter import DETERMINISTIC, STOCHASTIC, concat_time

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def g():
    return Grid(TWO_PI, 64)


@pytest.fixture(scope="module")
def u0s(g):
    return GridFunction(g, 1 + 0.5 * np.sin(g.x))


@pytest.fixture(scope="module")
def small_model():
    return NoiseModel.from_spectrum(TWO_PI, K=4)


def _sched(T=0.04, N=3, n_sub=8, sample_times=()):
    return SplitSchedule(T, N, sto=StoStepConfig(n_substeps=n_sub), sample_times=sample_times)


@pytest.fixture(scope="module")
def path(u0s, small_model):
    s = _sched(sample_times=(0.004, 0.012, 0.017))
    inc = sample_increments(small_model, s, seed=5)
    return run_path(u0s, s, small_model, inc)


def test_schedule_validation():
    with pytest.raises(ValueError):
        SplitSchedule(0.0, 1)
    with pytest.raises(ValueError):
        SplitSchedule(1.0, -1)
    with pytest.raises(ValueError):
        SplitSchedule(1.0, 1, sample_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        SplitSchedule(1.0, 1, sample_times=(1.0,))
    s = SplitSchedule(1.0, 3)
    assert s.delta == 0.25 and s.n_intervals == 4
    np.testing.assert_allclose(s.boundary_times(), np.arange(8) * 0.125)


@pytest.mark.parametrize(
    "t, expected",
    [
        (0.0, (DETERMINISTIC, 1, 0.0)),
        (0.10, (DETERMINISTIC, 1, 0.20)),
        (0.125, (STOCHASTIC, 1, 0.0)),
        (0.30, (DETERMINISTIC, 2, 0.35)),
        (0.375, (STOCHASTIC, 2, 0.25)),
        (0.99, (STOCHASTIC, 4, 0.98)),
    ],
)
def test_concat_clock_examples(t, expected):
    seg, j, tau = concat_clock(SplitSchedule(1.0, 3), t)
    assert (seg, j) == expected[:2]
    assert tau == pytest.approx(expected[2], abs=1e-14)


def test_concat_clock_range():
    s = SplitSchedule(1.0, 3)
    for t in (-1e-9, 1.0, 2.0):
        with pytest.raises(ValueError):
            concat_clock(s, t)
    with pytest.raises(ValueError):
        concat_time(s, "neither", 1, 0.0)


@given(st.floats(0.1, 10.0), st.integers(0, 50), st.floats(0.0, 0.999999))
def test_concat_clock_round_trip(T, N, frac):
    s = SplitSchedule(T, N)
    t = frac * T
    seg, j, tau = concat_clock(s, t)
    assert 1 <= j <= N + 1
    # internal time stays inside the current interval
    assert (j - 1) * s.delta - 1e-12 * T <= tau <= j * s.delta + 1e-12 * T
    assert concat_time(s, seg, j, tau) == pytest.approx(t, rel=1e-12, abs=1e-12 * T)


def test_glueing(path):
    s = path.schedule
    assert len(path.states) == 2 * s.n_intervals + 1
    for j in range(1, s.n_intervals + 1):
        assert path.w_start(j) is path.v_end(j)
        if j > 1:
            assert path.v_start(j) is path.w_end(j - 1)
    # boundary records share the substep states
    assert np.array_equal(path.record_at(0.5 * s.delta).state, path.v_end(1))
    assert np.array_equal(path.record_at(s.delta).state, path.w_end(1))
    assert np.array_equal(path.record_at(s.T).state, path.final.values)


def test_glueing_reproduces_substeps(path, small_model):
    # rerunning interval 2 by hand from the stored start gives the stored end
    s = path.schedule
    v, _ = det_step(
        GridFunction(path.u0.grid, path.v_start(2)), s.delta, s.det, checkpoints=[0.004], dt_hint=path.det_reports[0].final_dt
    )
    inc = sample_increments(small_model, s, seed=5)
    dB = inc.path(0).reshape(s.n_intervals, 8, -1)[1]
    w, _ = sto_step(GridFunction(path.u0.grid, path.w_start(2)), s.delta, small_model, dB, s.sto)
    np.testing.assert_array_equal(w.values, path.w_end(2))
    np.testing.assert_array_equal(v.values, path.v_end(2))


def test_records_cover_requested_times(path):
    s = path.schedule
    times = set(path.series.times.tolist())
    assert {0.0, s.T, *s.sample_times} <= times
    assert set(s.boundary_times().tolist()) <= {round(t, 15) for t in times} | set(times)
    assert np.all(np.diff(path.series.times) > 0)
    det_rec = path.record_at(0.004)
    assert det_rec.segment == DETERMINISTIC and det_rec.snap == 0.0
    sto_rec = path.record_at(0.017)
    assert sto_rec.segment == STOCHASTIC and sto_rec.snap <= 0.5 * s.delta / 8


def test_mass_preserved_along_path(path):
    mass = path.series.columns["mass"]
    assert np.max(np.abs(mass - mass[0])) <= 1e-11 * abs(mass[0])


def test_residual_equals_tracked_martingale(path):
    for rec in path.records:
        resid, qvar = martingale_residual(path, path.model, path.phis, rec.time)
        np.testing.assert_allclose(resid, rec.acc.mart, atol=1e-11)
        assert np.all(qvar >= 0)
    np.testing.assert_allclose(path.series.resid[-1], path.records[-1].acc.mart, atol=1e-11)


def test_martingale_residual_checks(path):
    with pytest.raises(SamplingError):
        martingale_residual(path, path.model, path.phis, 0.0123456)
    with pytest.raises(ValueError):
        martingale_residual(path, NoiseModel.silent(TWO_PI, 2), path.phis, 0.0)
    with pytest.raises(ValueError):
        martingale_residual(path, path.model, TestFunctionSet((((0, 1.0),),)), 0.0)


def test_silent_noise_matches_deterministic_flow(u0s):
    silent = NoiseModel.silent(TWO_PI, K=2)
    s = SplitSchedule(0.02, 0, sto=StoStepConfig(n_substeps=4))
    p = run_path(u0s, s, silent, sample_increments(silent, s, 1))
    v, _ = det_step(u0s, 0.02, s.det)
    np.testing.assert_array_equal(p.final.values, v.values)
    # zero residual for every test function without noise
    assert np.max(np.abs(p.series.resid)) < 1e-11


def test_constant_state_fixed_under_translation_noise(g):
    model = NoiseModel.zero_mode_only(TWO_PI, 1.0)
    c = GridFunction(g, np.full(g.M, 0.7))
    s = _sched(N=2)
    p = run_path(c, s, model, sample_increments(model, s, 3))
    np.testing.assert_allclose(p.final.values, 0.7, atol=1e-12)


def test_noise_alignment(u0s, small_model):
    # a finer increment table summed in groups gives the same path
    s = _sched(N=1, n_sub=8)
    coarse = WienerIncrements(9, small_model.n_modes, 16, s.delta / 8)
    fine = WienerIncrements(9, small_model.n_modes, 48, s.delta / 24)
    a = run_path(u0s, s, small_model, fine)
    table = fine.aggregated(0, 3)
    b = sto_step(GridFunction(u0s.grid, a.w_start(1)), s.delta, small_model, table[:8], s.sto)[0]
    np.testing.assert_allclose(a.w_end(1), b.values, atol=1e-15)
    with pytest.raises(ValueError):
        run_path(u0s, s, small_model, WienerIncrements(9, small_model.n_modes, 20, s.delta / 10))
    with pytest.raises(ValueError):
        run_path(u0s, s, small_model, WienerIncrements(9, small_model.n_modes, 16, 1.0))
    run_path(u0s, s, small_model, coarse)


def test_initial_state_checks(g, small_model):
    s = _sched(N=0)
    inc = sample_increments(small_model, s, 0)
    zero_spot = GridFunction(g, np.where(np.arange(g.M) == 3, 0.0, 1.0))
    with pytest.raises(ValueError):
        run_path(zero_spot, SplitSchedule(0.04, 0, det=DetStepConfig(eps_mob=0.0), sto=s.sto), small_model, inc)
    with pytest.raises(ValueError):
        run_path(GridFunction(g, -np.ones(g.M)), s, small_model, inc)


def test_failure_is_annotated(grid, small_model):
    box = GridFunction(grid, 1e-3 + 1.0 * (np.abs(grid.x - math.pi) < 1))
    det = DetStepConfig(dt_init=1e-2, dt_min=6e-3, neg_tol=0.0)
    s = SplitSchedule(0.1, 0, det=det, sto=StoStepConfig(n_substeps=4))
    with pytest.raises(StepFailure) as info:
        run_path(box, s, small_model, sample_increments(small_model, s, 0))
    assert info.value.interval == 1 and info.value.substep == DETERMINISTIC


def test_refine_study_coupled(u0s, small_model):
    base = SplitSchedule(0.04, 0, sto=StoStepConfig(n_substeps=0), sample_times=(0.01,))
    table = refine_study(u0s, small_model, 0.04, (1, 3, 7), seed=2, schedule=base, path_ids=(0, 1))
    assert table.final_diff.shape == (2, 2)
    assert np.all(table.final_diff > 0) and np.all(np.isfinite(table.max_diff))
    assert list(table.rows())[0][:2] == (1, 3)
    with pytest.raises(ValueError):
        refine_study(u0s, small_model, 0.04, (3, 1), seed=2)
    # same seed, same numbers
    again = refine_study(u0s, small_model, 0.04, (1, 3, 7), seed=2, schedule=base, path_ids=(0, 1))
    np.testing.assert_array_equal(again.final_diff, table.final_diff)


def test_silent_splitting_residual_below_time_error(u0s):
    # without noise the residual is the weak-form defect of the thin-film
    # substep; bound it by the time-discretization error against a fine run
    silent = NoiseModel.silent(TWO_PI, K=2)
    s = SplitSchedule(0.02, 4, sto=StoStepConfig(n_substeps=2))
    p = run_path(u0s, s, silent, sample_increments(silent, s, 0))
    fine, _ = det_step(u0s, 0.02, s.det, checkpoints=np.linspace(0, 0.02, 2001)[1:-1])
    vals = p.phis.values(u0s.grid)
    err = np.max(np.abs(u0s.grid.dx * vals @ (p.final.values - fine.values)))
    assert err > 0
    assert np.max(np.abs(p.series.resid[-1])) <= 10 * err


def test_silent_splitting_matches_one_deterministic_step(u0s):
    silent = NoiseModel.silent(TWO_PI, K=2)
    s = SplitSchedule(0.02, 4, sto=StoStepConfig(n_substeps=2))
    p = run_path(u0s, s, silent, sample_increments(silent, s, 0))
    v, rep = det_step(u0s, 0.02, s.det)
    # the runs differ only in where inner steps land
    fine, _ = det_step(u0s, 0.02, s.det, checkpoints=np.linspace(0, 0.02, 2001)[1:-1])
    inner_err = max(np.max(np.abs(v.values - fine.values)), np.max(np.abs(p.final.values - fine.values)))
    assert np.max(np.abs(p.final.values - v.values)) <= 2 * inner_err
    assert np.max(np.abs(p.final.values - v.values)) < 1e-4


def test_noiseless_splitting_error_is_first_order(u0s):
    # lambda = 0 with viscosity: differences are pure splitting error; the
    # inner step is capped so that its own error stays far below them
    silent = NoiseModel.silent(TWO_PI, K=0)
    base = SplitSchedule(0.1, 0, det=DetStepConfig(dt_max=1e-4), sto=StoStepConfig(n_substeps=4, eps_visc=0.5))
    table = refine_study(u0s, silent, 0.1, (8, 16, 32, 64), seed=0, schedule=base)
    d = table.final_diff[:, 0]
    assert np.all(d[:-1] / d[1:] >= 1.8)


def test_dt_max_caps_inner_steps(u0s):
    _, rep = det_step(u0s, 0.01, DetStepConfig(dt_max=1e-4))
    assert np.max(np.diff(rep.times)) <= 1e-4 * (1 + 1e-12)
    with pytest.raises(ValueError):
        DetStepConfig(dt_init=1e-3, dt_max=1e-4)
