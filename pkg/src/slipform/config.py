"""Run configuration: a TOML file whose tables mirror the dotted keys.

Example::

    experiment = "simple_shear"
    time_integration = "expmap"

    [orientation]
    a = 0.5235987755982988
    b = 0.7853981633974483

    [solver]
    algorithm = "min_ncp_variational"
    w_scale = 1.0

    [loading]
    increment = 2e-3

Unknown keys are rejected. ``material.c2`` is given in MPa*m (set
``material.c2_unit = "GPa*um^2"`` to pass the internal unit directly).
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .material import C2_MPA_M_TO_GPA_UM2, MaterialParams
from .slip_geometry import catalogue_names
from .solvers import ALGORITHMS, SolverParams
from .kinematics import INTEGRATORS

EXPERIMENTS = ("simple_shear", "tensile", "custom_path")
C2_UNITS = {"MPa*m": C2_MPA_M_TO_GPA_UM2, "GPa*um^2": 1.0}
_COMPONENTS = {f"F{i + 1}{j + 1}": (i, j) for i in range(3) for j in range(3)}


class ConfigError(ValueError):
    pass


class UnitError(ConfigError):
    pass


@dataclass(frozen=True)
class Loading:
    """A component of F swept from ``start`` to ``stop`` in equal increments,
    or an explicit list of deformation gradients (custom paths)."""

    component: str = "F12"
    start: float = 0.0
    stop: float = 4.0
    increment: float = 2e-2
    path: tuple | None = None

    @property
    def n_steps(self) -> int:
        if self.path is not None:
            return len(self.path)
        return int(round((self.stop - self.start) / self.increment))

    def deformation(self, k: int):
        """Deformation gradient after step ``k`` (1-based)."""
        import numpy as np

        if self.path is not None:
            return np.array(self.path[k - 1], dtype=float)
        F = np.eye(3)
        i, j = _COMPONENTS[self.component]
        F[i, j] += self.start + k * self.increment
        return F

    def value(self, k: int) -> float:
        return self.start + k * self.increment


@dataclass(frozen=True)
class SweepSettings:
    w_scales: tuple = (0.1, 1.0, 10.0, 100.0)
    snapshots: tuple = (4e-2, 8e-2)


@dataclass(frozen=True)
class TensileSettings:
    length: float = 84.0
    width: float = 10.0
    center_width: float = 6.0
    gauge_length: float = 28.0
    nx: int = 40
    ny: int = 4
    refinement: int = 1
    elongation: float = 0.02
    n_steps: int = 100
    quadrature: int = 3
    max_newton: int = 25
    max_halvings: int = 4
    vtk_every: int = 1


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "slipform-out"
    formats: tuple = ("csv",)


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    catalogue: str
    time_integration: str
    orientation: tuple
    material: MaterialParams
    solver: SolverParams
    loading: Loading
    sweep: SweepSettings
    tensile: TensileSettings
    output: OutputSettings
    c2_factor: float = C2_MPA_M_TO_GPA_UM2
    source_hash: str = field(default="", compare=False)
    explicit: frozenset = field(default=frozenset(), compare=False)

    def given(self, key: str) -> bool:
        """Whether the dotted ``key`` was set in the file rather than defaulted."""
        return key in self.explicit

    def manifest(self) -> dict:
        """Every resolved value, the library version and the config hash."""
        solver = asdict(self.solver.resolve(self.material.mu))
        return {
            "library": "slipform",
            "version": __version__,
            "config_sha256": self.source_hash,
            "experiment": self.experiment,
            "catalogue": self.catalogue,
            "time_integration": self.time_integration,
            "orientation": list(self.orientation),
            "material": asdict(self.material),
            "material_units": {"kappa": "GPa", "mu": "GPa", "Q0": "GPa", "Qinf": "GPa", "H": "1",
                               "c1": "GPa", "c2": "GPa*um^2"},
            "c2_conversion_MPa_m_to_GPa_um2": self.c2_factor,
            "solver": solver,
            "loading": _plain(asdict(self.loading)),
            "sweep": _plain(asdict(self.sweep)),
            "tensile": asdict(self.tensile),
            "output": _plain(asdict(self.output)),
        }


def _plain(d):
    return json.loads(json.dumps(d, default=list))


# experiment-specific defaults, applied before user values
_EXPERIMENT_DEFAULTS = {
    "simple_shear": {"orientation": (0.0, 0.0, 0.0), "c1": 0.0},
    "custom_path": {"orientation": (0.0, 0.0, 0.0), "c1": 0.0},
    "tensile": {"orientation": (math.pi / 6, math.pi / 4, 0.0), "c1": 0.1},
}

_TOP = {"experiment", "catalogue", "time_integration", "orientation", "material", "solver", "loading",
        "sweep", "tensile", "output"}
_TABLES = {
    "orientation": {"a", "b", "c"},
    "material": {"kappa", "mu", "Q0", "Qinf", "H", "c1", "c2", "c2_unit"},
    "solver": {"algorithm", "w_scale", "delta", "penalty_hat", "penalty_growth", "penalty_cap",
               "max_newton", "max_outer", "globalize", "tolerances"},
    "solver.tolerances": {"newton", "outer"},
    "loading": {"component", "start", "stop", "increment", "path"},
    "sweep": {"w_scales", "snapshots"},
    "tensile": set(TensileSettings.__dataclass_fields__),
    "output": {"directory", "formats"},
}


def _dotted(data: dict, prefix: str = "") -> set:
    keys = set()
    for k, v in data.items():
        name = prefix + k
        keys.add(name)
        if isinstance(v, dict):
            keys |= _dotted(v, name + ".")
    return keys


def _check_keys(data: dict, allowed: set, where: str):
    for key in data:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown configuration key {name!r}")


def _table(data: dict, name: str) -> dict:
    t = data.get(name, {})
    if not isinstance(t, dict):
        raise ConfigError(f"{name!r} must be a table")
    _check_keys(t, _TABLES[name], name)
    return t


def _number(t: dict, key: str, default, where: str, kind=float):
    v = t.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a fully resolved :class:`RunConfig`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    _check_keys(data, _TOP, "")

    experiment = data.get("experiment", "simple_shear")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    defaults = _EXPERIMENT_DEFAULTS[experiment]
    catalogue = data.get("catalogue", "fcc24")
    if catalogue not in catalogue_names():
        raise ConfigError(f"unknown catalogue {catalogue!r}; choose from {catalogue_names()}")
    integ = data.get("time_integration", "expmap")
    if integ not in INTEGRATORS:
        raise ConfigError(f"time_integration must be one of {INTEGRATORS}, got {integ!r}")

    o = _table(data, "orientation")
    orientation = tuple(_number(o, k, d, "orientation") for k, d in zip("abc", defaults["orientation"]))

    m = _table(data, "material")
    unit = m.get("c2_unit", "MPa*m")
    if unit not in C2_UNITS:
        raise UnitError(f"material.c2_unit must be one of {sorted(C2_UNITS)}, got {unit!r}")
    base = MaterialParams()
    c2 = _number(m, "c2", 0.0, "material")
    if c2 < 0:
        raise UnitError("material.c2 must be nonnegative")
    try:
        material = MaterialParams(
            kappa=_number(m, "kappa", base.kappa, "material"),
            mu=_number(m, "mu", base.mu, "material"),
            Q0=_number(m, "Q0", base.Q0, "material"),
            Qinf=_number(m, "Qinf", m.get("Q0", base.Qinf), "material"),
            H=_number(m, "H", base.H, "material"),
            c1=_number(m, "c1", defaults["c1"], "material"),
            c2=c2 * C2_UNITS[unit],
        )
    except ValueError as exc:
        raise ConfigError(f"material: {exc}") from exc

    s = _table(data, "solver")
    tol = s.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("'solver.tolerances' must be a table")
    _check_keys(tol, _TABLES["solver.tolerances"], "solver.tolerances")
    alg = s.get("algorithm", "fb_variational")
    if alg not in ALGORITHMS:
        raise ConfigError(f"solver.algorithm must be one of {ALGORITHMS}, got {alg!r}")
    w_scale = _number(s, "w_scale", 1.0, "solver")
    d = SolverParams(alg)
    globalize = s.get("globalize", d.globalize)
    if not isinstance(globalize, bool):
        raise ConfigError("solver.globalize must be true or false")
    try:
        solver = SolverParams(
            algorithm=alg,
            w=w_scale * material.mu,
            delta=_number(s, "delta", d.delta, "solver"),
            penalty_hat=_number(s, "penalty_hat", d.penalty_hat, "solver"),
            penalty_growth=_number(s, "penalty_growth", d.penalty_growth, "solver"),
            penalty_cap=_number(s, "penalty_cap", d.penalty_cap, "solver"),
            newton_tol=_number(tol, "newton", 1e-10 * material.mu, "solver.tolerances"),
            max_newton=_number(s, "max_newton", d.max_newton, "solver", int),
            max_outer_al=_number(s, "max_outer", d.max_outer_al, "solver", int),
            outer_tol=_number(tol, "outer", d.outer_tol, "solver.tolerances"),
            globalize=globalize,
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc

    ld = _table(data, "loading")
    comp = ld.get("component", "F12")
    if comp not in _COMPONENTS:
        raise ConfigError(f"loading.component must be one of {sorted(_COMPONENTS)}, got {comp!r}")
    path = ld.get("path")
    if path is not None:
        if experiment != "custom_path":
            raise ConfigError("loading.path is only valid for experiment = 'custom_path'")
        try:
            path = tuple(tuple(tuple(float(v) for v in row) for row in F) for F in path)
        except (TypeError, ValueError) as exc:
            raise ConfigError("loading.path must be a list of 3x3 matrices") from exc
        if not path or any(len(F) != 3 or any(len(r) != 3 for r in F) for F in path):
            raise ConfigError("loading.path must be a non-empty list of 3x3 matrices")
    loading = Loading(comp, _number(ld, "start", 0.0, "loading"), _number(ld, "stop", 4.0, "loading"),
                      _number(ld, "increment", 2e-2, "loading"), path)
    if path is None:
        if loading.increment <= 0 or loading.stop <= loading.start:
            raise ConfigError("loading needs stop > start and a positive increment")
        steps = (loading.stop - loading.start) / loading.increment
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("loading.increment must divide the loading range evenly")

    sw = _table(data, "sweep")
    sweep = SweepSettings(tuple(float(v) for v in sw.get("w_scales", SweepSettings.w_scales)),
                          tuple(float(v) for v in sw.get("snapshots", SweepSettings.snapshots)))
    if any(v <= 0 for v in sweep.w_scales):
        raise ConfigError("sweep.w_scales must be positive")

    te = _table(data, "tensile")
    tdef = TensileSettings()
    kw = {}
    for key, default in asdict(tdef).items():
        kw[key] = _number(te, key, default, "tensile", type(default))
    tensile = TensileSettings(**kw)

    out = _table(data, "output")
    formats = tuple(out.get("formats", OutputSettings.formats))
    bad = set(formats) - {"csv", "vtk"}
    if bad:
        raise ConfigError(f"unknown output formats {sorted(bad)}")
    output = OutputSettings(str(out.get("directory", OutputSettings.directory)), formats)

    return RunConfig(experiment, catalogue, integ, orientation, material, solver, loading, sweep, tensile,
                     output, source_hash=hashlib.sha256(text.encode()).hexdigest(),
                     explicit=frozenset(_dotted(data)))


def load_config(path) -> RunConfig:
    """Read and resolve a configuration file; see :func:`parse_config`."""
    text = Path(path).read_text()
    return parse_config(text)


def write_manifest(cfg: RunConfig, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = d / "manifest.json"
    p.write_text(json.dumps(cfg.manifest(), indent=2, sort_keys=True) + "\n")
    return p
