"""Run orchestration shared by the command line and the acceptance suite.

Each function writes its outputs plus ``manifest.json`` into ``out_dir``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, format_config
from .ensemble import EnsembleStats, run_ensemble
from .noise import sample_increments
from .output import RunManifest, write_series, write_snapshot, write_stats
from .splitter import RefineTable, SplitPath, refine_study, run_path

__all__ = ["simulate", "ensemble", "converge", "SimulateResult", "EnsembleResult", "ConvergeResult"]


@dataclass
class SimulateResult:
    path: SplitPath
    manifest: RunManifest
    out_dir: Path


@dataclass
class EnsembleResult:
    stats: EnsembleStats
    manifest: RunManifest
    out_dir: Path

    @property
    def passed(self):
        return self.stats.passed


@dataclass
class ConvergeResult:
    table: RefineTable
    manifest: RunManifest
    out_dir: Path
    substeps: dict

    @property
    def passed(self):
        return bool(np.all(self.table.decreasing(strict=False)))


def _echo(cfg: RunConfig) -> str:
    # neither the worker count nor the output location changes the results;
    # "." stands for the directory holding the manifest
    return format_config(replace(cfg, out_dir=".", ensemble=replace(cfg.ensemble, workers=1)))


def _snapshot_name(t: float) -> str:
    return f"u_t{t!r}.csv"


def simulate(cfg: RunConfig, out_dir, path_id: int = 0) -> SimulateResult:
    """One path with full diagnostics: ``series.csv``, ``snapshots/``, manifest."""
    out = Path(out_dir)
    u0 = cfg.u0()
    inc = sample_increments(cfg.model, cfg.schedule, cfg.seed, path_id + 1, grid=u0.grid)
    path = run_path(u0, cfg.schedule, cfg.model, inc, path_id, entropy=cfg.entropy)
    man = RunManifest.create("simulate", _echo(cfg), cfg.seed)
    man.add_output(write_series(path.series, out / "series.csv"), out)
    if cfg.snapshots:
        x = u0.grid.x
        for t in (*cfg.schedule.sample_times, cfg.schedule.T):
            man.add_output(write_snapshot(x, path.record_at(t).state, out / "snapshots" / _snapshot_name(t)), out)
    man.write(out / "manifest.json")
    return SimulateResult(path, man, out)


def ensemble(cfg: RunConfig, out_dir, workers: int | None = None) -> EnsembleResult:
    """Monte Carlo run: ``ensemble.csv``, ``verdicts.json``, manifest."""
    out = Path(out_dir)
    ecfg = cfg.ensemble if workers is None else replace(cfg.ensemble, workers=workers)
    stats = run_ensemble(cfg.u0(), cfg.schedule, cfg.model, ecfg, entropy=cfg.entropy)
    verdicts = {
        v.phi: {
            "passed": v.passed,
            "worst_mean_z": v.worst_mean_z,
            "worst_square_z": v.worst_square_z,
            "failures": [list(f) for f in v.failures],
        }
        for v in stats.verdicts
    }
    verdicts["_summary"] = {
        "passed": stats.passed,
        "n_paths": stats.n_paths,
        "failed_paths": {str(k): v for k, v in stats.failures.items()},
        "global_min": stats.global_min,
    }
    man = RunManifest.create("ensemble", _echo(cfg), cfg.seed)
    man.add_output(write_stats(stats, out / "ensemble.csv"), out)
    vpath = out / "verdicts.json"
    vpath.write_text(json.dumps(verdicts, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    man.add_output(vpath, out)
    man.verdicts = {k: v["passed"] for k, v in verdicts.items()}
    man.write(out / "manifest.json")
    return EnsembleResult(stats, man, out)


def converge(cfg: RunConfig, N_list, out_dir, n_paths: int | None = None) -> ConvergeResult:
    """Coupled self-convergence study: ``converge.csv`` and manifest."""
    out = Path(out_dir)
    n_paths = cfg.ensemble.n_paths if n_paths is None else n_paths
    u0 = cfg.u0()
    table = refine_study(
        u0, cfg.model, cfg.schedule.T, N_list, cfg.seed, schedule=cfg.schedule, path_ids=tuple(range(n_paths))
    )
    from .splitter import coupled_lattice

    _, subs = coupled_lattice(table.N_list, cfg.model, u0.grid, cfg.schedule)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["N,N_next,path,diff_final,diff_max"]
    for i, (a, b, fd, md) in enumerate(table.rows()):
        for p, pid in enumerate(table.path_ids):
            lines.append(f"{a},{b},{pid},{float(fd[p])!r},{float(md[p])!r}")
    cpath = out / "converge.csv"
    cpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
    man = RunManifest.create("converge", _echo(cfg), cfg.seed)
    man.add_output(cpath, out)
    man.write(out / "manifest.json")
    return ConvergeResult(table, man, out, subs)
