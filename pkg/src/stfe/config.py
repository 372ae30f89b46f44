"""Run configuration: a sectioned key-value text format.

Example::

    [grid]
    L = 6.283185307179586
    M = 256

    [noise]
    lambda = (lambda0=0.5, gamma=2, K=8)

    [schedule]
    T = 0.1
    N = 32
    sample_times = 0.025, 0.05, 0.075

Only ``L``, ``M``, ``T`` and ``N`` are required; every other key has the
default listed in :data:`DEFAULTS`.  :func:`format_config` writes the fully
resolved configuration back in the same format.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import EntropyParams
from .ensemble import EnsembleConfig
from .errors import ConfigError
from .grid import Grid, GridFunction
from .noise import NoiseModel
from .splitter import SplitSchedule
from .tfe_det import MOBILITY_MEANS, DetStepConfig
from .transport_sto import INTEGRATORS, StoStepConfig

__all__ = [
    "RunConfig",
    "InitialCondition",
    "parse_config",
    "load_config",
    "format_config",
    "reference_config",
    "DEFAULTS",
]

REQUIRED = {("grid", "L"), ("grid", "M"), ("schedule", "T"), ("schedule", "N")}

# section -> key -> default (as text); None means "no value"
DEFAULTS = {
    "grid": {"L": None, "M": None},
    "noise": {"lambda": "(lambda0=0.5, gamma=2, K=8)", "K": None, "normalize_zero_mode": "true"},
    "schedule": {"T": None, "N": None, "sample_times": "", "seed": "0"},
    "det": {
        "eps_mob": "1e-08",
        "dt_init": None,
        "dt_min": "1e-14",
        "dt_max": None,
        "newton_tol": None,
        "neg_tol": None,
        "mobility_mean": "arithmetic",
    },
    "sto": {"eps_visc": "0.0", "n_substeps": "0", "implicit_drift": "true", "integrator": "ito_em"},
    "entropy": {"A": None, "eps_ent": "0.0"},
    "ensemble": {"n_paths": "1", "workers": "1"},
    "initial": {"type": "sine", "c": "1.0", "a": "0.5", "m": "1", "h": "0.01", "b": "1.0", "r": None, "path": None},
    "output": {"dir": "out", "snapshots": "true"},
}

INITIAL_TYPES = ("constant", "sine", "droplet", "csv")

_SPEC_RE = re.compile(r"^\(\s*(.*)\s*\)$")


@dataclass(frozen=True)
class InitialCondition:
    """Built-in initial profiles.

    ``constant``: ``c``; ``sine``: ``c + a sin(2 pi m x / L)``;
    ``droplet``: ``max(h, b (1 - ((x - L/2) / r)^2))``; ``csv``: nodal values
    read from ``path`` (a file with header ``x,u`` or a single column).
    """

    type: str = "sine"
    c: float = 1.0
    a: float = 0.5
    m: int = 1
    h: float = 0.01
    b: float = 1.0
    r: float | None = None
    path: str | None = None

    def __post_init__(self):
        if self.type not in INITIAL_TYPES:
            raise ValueError(f"initial type must be one of {INITIAL_TYPES}")
        if self.type == "csv" and not self.path:
            raise ValueError("csv initial condition needs a path")

    def build(self, grid: Grid, base: Path | None = None) -> GridFunction:
        x = grid.x
        if self.type == "constant":
            vals = np.full(grid.M, self.c)
        elif self.type == "sine":
            vals = self.c + self.a * np.sin(2.0 * np.pi * self.m * x / grid.L)
        elif self.type == "droplet":
            r = self.r if self.r is not None else grid.L / 4
            vals = np.maximum(self.h, self.b * (1.0 - ((x - grid.L / 2) / r) ** 2))
        else:
            p = Path(self.path)
            if base is not None and not p.is_absolute():
                p = base / p
            vals = _read_profile(p)
            if vals.size != grid.M:
                raise ValueError(f"{p}: {vals.size} values for a grid of {grid.M} nodes")
        return GridFunction(grid, vals)


def _read_profile(path: Path) -> np.ndarray:
    try:
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise OSError(f"cannot read initial profile {path}: {exc}") from exc
    if lines and lines[0].replace(" ", "") == "x,u":
        lines = lines[1:]
    return np.array([float(ln.split(",")[-1]) for ln in lines])


@dataclass(frozen=True)
class RunConfig:
    L: float
    M: int
    model: NoiseModel
    schedule: SplitSchedule
    entropy: EntropyParams = EntropyParams()
    ensemble: EnsembleConfig = EnsembleConfig(1)
    initial: InitialCondition = InitialCondition()
    out_dir: str = "out"
    snapshots: bool = True
    lambda_text: str = field(default=DEFAULTS["noise"]["lambda"], compare=False)
    base_dir: str | None = field(default=None, compare=False)

    @property
    def grid(self) -> Grid:
        return Grid(self.L, self.M)

    @property
    def seed(self) -> int:
        return self.ensemble.seed

    def u0(self) -> GridFunction:
        return self.initial.build(self.grid, Path(self.base_dir) if self.base_dir else None)


def reference_config(**overrides) -> RunConfig:
    """The desk-scale reference run: L = 2 pi, M = 256, T = 0.1, N = 32."""
    text = f"[grid]\nL = {2 * math.pi!r}\nM = 256\n[schedule]\nT = 0.1\nN = 32\nsample_times = 0.025, 0.05, 0.075\n"
    cfg = parse_config(text)
    return _replace(cfg, **overrides) if overrides else cfg


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return n
    return None


class _Reader:
    """Typed access to one parsed section with key/line context on errors."""

    def __init__(self, text, parser):
        self.text = text
        self.parser = parser

    def raw(self, section, key):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return DEFAULTS[section][key]

    def err(self, section, key, msg):
        return ConfigError(f"[{section}] {key}: {msg}", key=key, line=_line_of(self.text, section, key))

    def get(self, section, key, conv, check=None, what=""):
        raw = self.raw(section, key)
        if raw is None or raw == "":
            return None
        try:
            val = conv(raw)
        except (TypeError, ValueError):
            raise self.err(section, key, f"cannot parse {raw!r} as {conv.__name__}") from None
        if check is not None and not check(val):
            raise self.err(section, key, f"{raw!r} violates constraint {what}")
        return val


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _int(s: str) -> int:
    try:
        return int(s.strip())
    except ValueError:
        pass
    f = float(s)  # accept "1e3"; large seeds take the exact branch above
    if f != int(f):
        raise ValueError(s)
    return int(f)


_int.__name__ = "int"
_bool.__name__ = "bool"


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())


_floats.__name__ = "list of floats"


def _lambdas(text: str, L: float, K_override, normalize: bool) -> NoiseModel:
    m = _SPEC_RE.match(text.strip())
    if m:
        params = {"lambda0": 0.5, "gamma": 2.0, "K": 8}
        for item in filter(None, (p.strip() for p in m.group(1).split(","))):
            name, _, val = item.partition("=")
            name = name.strip()
            if name not in params or not val.strip():
                raise ValueError(f"bad spectrum entry {item!r}")
            params[name] = _int(val) if name == "K" else float(val)
        if K_override is not None:
            params["K"] = K_override
        if params["K"] < 0 or params["lambda0"] < 0:
            raise ValueError("K and lambda0 must be >= 0")
        return NoiseModel.from_spectrum(L, params["lambda0"], params["gamma"], params["K"], normalize)
    vals = _floats(text)
    if K_override is not None and len(vals) != 2 * K_override + 1:
        raise ValueError(f"explicit list has {len(vals)} entries, K={K_override} needs {2 * K_override + 1}")
    return NoiseModel(L, vals, normalize)


def parse_config(text: str, base_dir: str | None = None) -> RunConfig:
    """Parse and validate a configuration.

    Raises
    ------
    ConfigError
        Unknown or duplicate keys or sections, unparsable values and
        constraint violations; ``.key`` and ``.line`` locate the problem.
    """
    parser = configparser.ConfigParser(strict=True, interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case sensitive (L, M, T, N)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", key=exc.option, line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", key=exc.section, line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", key=None, line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"unparsable line {line}", key=None, line=line) from None

    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]", key=section, line=_section_line(text, section))
        for key in parser.options(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key=key, line=_line_of(text, section, key))
    for section, key in sorted(REQUIRED):
        if not parser.has_option(section, key):
            raise ConfigError(f"missing required key [{section}] {key}", key=key, line=None)

    r = _Reader(text, parser)
    pos = lambda v: v > 0  # noqa: E731
    nonneg = lambda v: v >= 0  # noqa: E731
    L = r.get("grid", "L", float, lambda v: v > 0 and math.isfinite(v), "L > 0")
    M = r.get("grid", "M", _int, lambda v: v >= 8, "M >= 8")
    normalize = r.get("noise", "normalize_zero_mode", _bool)
    K = r.get("noise", "K", _int, nonneg, "K >= 0")
    lam_text = r.raw("noise", "lambda")
    try:
        model = _lambdas(lam_text, L, K, normalize)
    except ValueError as exc:
        raise r.err("noise", "lambda", str(exc)) from None
    try:
        model.check_resolvable(Grid(L, M))
    except Exception as exc:
        raise r.err("noise", "lambda", str(exc)) from None

    det = dict(
        eps_mob=r.get("det", "eps_mob", float, nonneg, "eps_mob >= 0"),
        dt_init=r.get("det", "dt_init", float, pos, "dt_init > 0"),
        dt_min=r.get("det", "dt_min", float, pos, "dt_min > 0"),
        dt_max=r.get("det", "dt_max", float, pos, "dt_max > 0"),
        newton_tol=r.get("det", "newton_tol", float, pos, "newton_tol > 0"),
        neg_tol=r.get("det", "neg_tol", float, nonneg, "neg_tol >= 0"),
        mobility_mean=r.get("det", "mobility_mean", str, lambda v: v in MOBILITY_MEANS, f"in {MOBILITY_MEANS}"),
    )
    sto = dict(
        eps_visc=r.get("sto", "eps_visc", float, nonneg, "eps_visc >= 0"),
        n_substeps=r.get("sto", "n_substeps", _int, nonneg, "n_substeps >= 0"),
        implicit_drift=r.get("sto", "implicit_drift", _bool),
        integrator=r.get("sto", "integrator", str, lambda v: v in INTEGRATORS, f"in {INTEGRATORS}"),
    )
    T = r.get("schedule", "T", float, lambda v: v > 0 and math.isfinite(v), "T > 0")
    N = r.get("schedule", "N", _int, nonneg, "N >= 0")
    times = r.get("schedule", "sample_times", _floats) or ()
    if any(b <= a for a, b in zip(times, times[1:])) or any(not 0 <= t < T for t in times):
        raise r.err("schedule", "sample_times", "must be strictly increasing and inside [0, T)")
    seed = r.get("schedule", "seed", _int, lambda v: 0 <= v < 1 << 64, "0 <= seed < 2^64")
    try:
        schedule = SplitSchedule(T, N, DetStepConfig(**det), StoStepConfig(**sto), times)
    except ValueError as exc:
        raise ConfigError(str(exc), key=None, line=None) from None

    entropy = EntropyParams(
        r.get("entropy", "A", float, pos, "A > 0"),
        r.get("entropy", "eps_ent", float, nonneg, "eps_ent >= 0"),
    )
    ens = EnsembleConfig(
        n_paths=r.get("ensemble", "n_paths", _int, lambda v: v >= 1, "n_paths >= 1"),
        seed=seed,
        workers=r.get("ensemble", "workers", _int, lambda v: v >= 1, "workers >= 1"),
    )
    itype = r.get("initial", "type", str, lambda v: v in INITIAL_TYPES, f"in {INITIAL_TYPES}")
    try:
        initial = InitialCondition(
            type=itype,
            c=r.get("initial", "c", float),
            a=r.get("initial", "a", float),
            m=r.get("initial", "m", _int),
            h=r.get("initial", "h", float, nonneg, "h >= 0"),
            b=r.get("initial", "b", float, nonneg, "b >= 0"),
            r=r.get("initial", "r", float, pos, "r > 0"),
            path=r.get("initial", "path", str),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="type", line=_line_of(text, "initial", "type")) from None
    return RunConfig(
        L=L,
        M=M,
        model=model,
        schedule=schedule,
        entropy=entropy,
        ensemble=ens,
        initial=initial,
        out_dir=r.get("output", "dir", str),
        snapshots=r.get("output", "snapshots", _bool),
        lambda_text=lam_text,
        base_dir=base_dir,
    )


def _section_line(text, section):
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return n
    return None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_config(text, base_dir=str(p.parent))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    """Fully resolved configuration text; ``parse_config`` of it is ``cfg``."""
    s, det, sto = cfg.schedule, cfg.schedule.det, cfg.schedule.sto
    lam = ", ".join(repr(v) for v in cfg.model.lambdas)
    sections = {
        "grid": {"L": cfg.L, "M": cfg.M},
        "noise": {"lambda": lam, "K": cfg.model.K, "normalize_zero_mode": cfg.model.normalize_zero_mode},
        "schedule": {
            "T": s.T,
            "N": s.N,
            "sample_times": ", ".join(repr(t) for t in s.sample_times),
            "seed": cfg.ensemble.seed,
        },
        "det": {
            "eps_mob": det.eps_mob,
            "dt_init": det.dt_init,
            "dt_min": det.dt_min,
            "dt_max": det.dt_max,
            "newton_tol": det.newton_tol,
            "neg_tol": det.neg_tol,
            "mobility_mean": det.mobility_mean,
        },
        "sto": {
            "eps_visc": sto.eps_visc,
            "n_substeps": sto.n_substeps,
            "implicit_drift": sto.implicit_drift,
            "integrator": sto.integrator,
        },
        "entropy": {"A": cfg.entropy.A, "eps_ent": cfg.entropy.eps_ent},
        "ensemble": {"n_paths": cfg.ensemble.n_paths, "workers": cfg.ensemble.workers},
        "initial": {k: getattr(cfg.initial, k) for k in DEFAULTS["initial"]},
        "output": {"dir": cfg.out_dir, "snapshots": cfg.snapshots},
    }
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        for k, v in kv.items():
            if v is None:
                continue
            out.append(f"{k} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)
