import math

import numpy as np
import pytest

from stfe import GridFunction, NoiseModel, SplitSchedule, StoStepConfig
from stfe.diagnostics import SERIES_COLUMNS
from stfe.ensemble import (
    EnsembleConfig,
    EnsembleStats,
    _Moments,
    martingale_test,
    mean_field_test,
    resolve_workers,
    run_ensemble,
)
from stfe.errors import EnsembleFailure
from stfe.grid import Grid
from stfe.tfe_det import DetStepConfig

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def setup():
    g = Grid(TWO_PI, 64)
    u0 = GridFunction(g, 1 + 0.5 * np.sin(g.x))
    model = NoiseModel.from_spectrum(TWO_PI, K=4)
    sched = SplitSchedule(0.02, 1, sto=StoStepConfig(n_substeps=8), sample_times=(0.004, 0.013))
    return u0, model, sched


@pytest.fixture(scope="module")
def stats(setup):
    u0, model, sched = setup
    return run_ensemble(u0, sched, model, EnsembleConfig(24, seed=3))


def test_config_validation():
    for bad in (dict(n_paths=0), dict(n_paths=2, workers=0), dict(n_paths=2, seed=-1), dict(n_paths=2, seed=1 << 64)):
        with pytest.raises(ValueError):
            EnsembleConfig(**bad)


def test_thread_override(monkeypatch):
    cfg = EnsembleConfig(4, workers=3)
    monkeypatch.delenv("STFE_THREADS", raising=False)
    assert resolve_workers(cfg) == 3
    monkeypatch.setenv("STFE_THREADS", "2")
    assert resolve_workers(cfg) == 2
    for bad in ("zero", "0"):
        monkeypatch.setenv("STFE_THREADS", bad)
        with pytest.raises(ValueError):
            resolve_workers(cfg)


def test_stats_shapes(stats, setup):
    _, _, sched = setup
    n_t = len(stats.times)
    assert stats.n_paths == 24 and stats.path_ids == list(range(24))
    assert stats.resid.mean.shape == (n_t, 4)
    assert set(stats.columns) == set(SERIES_COLUMNS) | {"dissipation"}
    np.testing.assert_allclose(stats.test_times, [0.004, 0.013, 0.02])
    assert stats.finals.shape == (24, 64)
    assert len(stats.verdicts) == 4
    assert stats.global_min <= float(np.min(stats.columns["min_u"].min))


def test_moments_single_path(setup):
    u0, model, sched = setup
    s = run_ensemble(u0, sched, model, EnsembleConfig(1, seed=3))
    assert np.all(s.columns["mass"].se == 0)
    assert np.all(s.resid.var == 0)


def test_silent_noise_has_zero_variance(setup):
    u0, _, sched = setup
    s = run_ensemble(u0, sched, NoiseModel.silent(TWO_PI, 2), EnsembleConfig(4, seed=3))
    assert np.all(s.columns["energy"].var == 0)
    assert s.passed  # residual is zero up to the absolute floor


@pytest.mark.parametrize("workers", [2, 8])
def test_worker_count_does_not_change_results(setup, stats, workers):
    u0, model, sched = setup
    par = run_ensemble(u0, sched, model, EnsembleConfig(24, seed=3, workers=workers))
    for c in stats.columns:
        np.testing.assert_array_equal(par.columns[c].mean, stats.columns[c].mean)
    np.testing.assert_array_equal(par.resid.se, stats.resid.se)
    np.testing.assert_array_equal(par.finals, stats.finals)


def test_seed_changes_results(setup, stats):
    u0, model, sched = setup
    other = run_ensemble(u0, sched, model, EnsembleConfig(24, seed=4))
    assert not np.array_equal(other.finals, stats.finals)


def test_failure_policy(setup):
    _, model, _ = setup
    g = Grid(TWO_PI, 256)
    box = GridFunction(g, 1e-3 + 1.0 * (np.abs(g.x - math.pi) < 1))
    det = DetStepConfig(dt_init=1e-2, dt_min=6e-3, neg_tol=0.0)
    sched = SplitSchedule(0.1, 0, det=det, sto=StoStepConfig(n_substeps=4))
    with pytest.raises(EnsembleFailure) as info:
        run_ensemble(box, sched, model, EnsembleConfig(3))
    assert sorted(info.value.failures) == [0, 1, 2]
    assert "StepFailure" in info.value.failures[0]


def _synthetic(resid, qvar, times):
    return EnsembleStats(
        times=times,
        test_times=times[1:],
        columns={},
        resid=_Moments.of(resid),
        qvar=_Moments.of(qvar),
        square_gap=_Moments.of(resid**2 - qvar),
        phi_names=["phi0"],
        n_paths=resid.shape[0],
        path_ids=list(range(resid.shape[0])),
        failures={},
        global_min=1.0,
        finals=np.zeros((resid.shape[0], 1)),
    )


def test_martingale_test_detects_bias_and_wrong_bracket():
    rng = np.random.default_rng(0)
    n, times = 4000, np.array([0.0, 0.5, 1.0])
    qv = np.broadcast_to(times[None, :, None], (n, 3, 1)).copy()
    M = rng.standard_normal((n, 3, 1)) * np.sqrt(qv)  # Brownian motion: <M>_t = t
    assert all(v.passed for v in martingale_test(_synthetic(M, qv, times)))
    biased = martingale_test(_synthetic(M + 0.2 * times[None, :, None], qv, times))[0]
    assert not biased.passed and biased.failures[0][1] == "mean"
    wrong = martingale_test(_synthetic(M, 2 * qv, times))[0]
    assert not wrong.passed and {f[1] for f in wrong.failures} == {"square"}


def test_martingale_test_absolute_floor():
    times = np.array([0.0, 1.0])
    M = np.full((8, 2, 1), 1e-13)
    assert martingale_test(_synthetic(M, np.zeros_like(M), times))[0].passed
    assert not martingale_test(_synthetic(M * 1e3, np.zeros_like(M), times))[0].passed


def test_mean_field_detects_wrong_drift():
    # small ensemble, so the mutation is a large one; the acceptance suite
    # uses 512 paths to catch a factor of two
    g = Grid(TWO_PI, 64)
    w0 = GridFunction(g, 1 + 0.5 * np.sin(g.x))
    model = NoiseModel.from_spectrum(TWO_PI)
    good = mean_field_test(w0, 0.5, model, 128, seed=1, n_substeps=64)
    bad = mean_field_test(w0, 0.5, model, 128, seed=1, cfg=StoStepConfig(drift_scale=4.0), n_substeps=64)
    assert good.fraction_within(3) >= 0.95
    assert bad.fraction_within(3) < 0.8


@pytest.mark.slow
@pytest.mark.parametrize("drift_scale, should_pass", [(1.0, True), (2.0, False)])
def test_martingale_test_catches_wrong_correction(drift_scale, should_pass):
    # at the reference noise level the O(lambda^2 T) bias of a wrong drift is
    # about 0.2 standard errors at 512 paths; stronger noise and a longer
    # horizon give the test power (z ~ 9 for the mutation)
    g = Grid(TWO_PI, 64)
    u0 = GridFunction(g, 1 + 0.5 * np.sin(g.x))
    model = NoiseModel.from_spectrum(TWO_PI, lambda0=4.0)
    sched = SplitSchedule(0.2, 8, sto=StoStepConfig(drift_scale=drift_scale), sample_times=(0.05, 0.1, 0.15))
    stats = run_ensemble(u0, sched, model, EnsembleConfig(256, seed=4242))
    assert not stats.failures
    assert stats.passed is should_pass
