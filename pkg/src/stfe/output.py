"""CSV serialization of diagnostics and the reproducibility manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import SERIES_COLUMNS, DiagnosticsSeries
from .ensemble import EnsembleStats
from .noise import INCREMENT_SCHEME

__all__ = [
    "series_header",
    "stats_header",
    "write_series",
    "write_stats",
    "write_snapshot",
    "read_csv",
    "sha256_file",
    "RunManifest",
]


def series_header(phi_names) -> list:
    cols = ["time", *SERIES_COLUMNS]
    for i in range(len(phi_names)):
        cols += [f"resid_phi{i}", f"qvar_phi{i}"]
    return cols


def stats_header(phi_names) -> list:
    base = series_header(phi_names)
    return base + [f"{c}{suf}" for c in base[1:] for suf in ("_mean", "_se")]


def _fmt(v) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(v))


def _write_rows(path, header, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_series(series: DiagnosticsSeries, path) -> Path:
    """One row per recorded time; header ``time,mass,...,resid_phi0,qvar_phi0,...``."""
    return _write_rows(path, series_header(series.phi_names), series.as_matrix())


def _stats_matrix(stats: EnsembleStats, which: str) -> np.ndarray:
    parts = [stats.times[:, None]]
    for c in SERIES_COLUMNS:
        parts.append(getattr(stats.columns[c], which)[:, None])
    for p in range(stats.n_phi):
        parts += [getattr(stats.resid, which)[:, p : p + 1], getattr(stats.qvar, which)[:, p : p + 1]]
    return np.hstack(parts)


def write_stats(stats: EnsembleStats, path) -> Path:
    """Ensemble CSV: the series columns hold the mean, followed by a
    ``_mean,_se`` pair for every diagnostic."""
    mean = _stats_matrix(stats, "mean")
    se = _stats_matrix(stats, "se")
    n_diag = mean.shape[1] - 1
    extra = np.empty((mean.shape[0], 2 * n_diag))
    extra[:, 0::2] = mean[:, 1:]
    extra[:, 1::2] = se[:, 1:]
    return _write_rows(path, stats_header(stats.phi_names), np.hstack([mean, extra]))


def write_snapshot(x: np.ndarray, u: np.ndarray, path) -> Path:
    return _write_rows(path, ["x", "u"], np.column_stack([x, u]))


def read_csv(path) -> tuple[list, np.ndarray]:
    """Header and float matrix of a file written by this module."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, data


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce the outputs of one run.

    ``checksums`` maps output file names (relative to the output directory)
    to their SHA-256.
    """

    command: str
    config: str
    seed: int
    code_version: str
    increment_scheme: str = INCREMENT_SCHEME
    environment: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    @classmethod
    def create(cls, command, config_text, seed):
        import scipy

        from . import __version__

        env = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
        return cls(command, config_text, int(seed), __version__, environment=env)

    def add_output(self, path, root):
        path, root = Path(path), Path(root)
        self.checksums[str(path.relative_to(root))] = sha256_file(path)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
