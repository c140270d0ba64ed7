"""Run configuration: an INI file with fixed sections and strict key checking.

Schema (every key optional unless marked)::

    [geometry]    m = 1 | 2, b (required), n (required), backend = spectral | fd
    [flow]        epsilon (required), p, tau, Lambda0, t_end (required), quasi_newton, gtol, elastic_refresh
    [anisotropy]  family = isotropic | elliptic | cubic, params = comma separated numbers
    [elasticity]  enabled = yes | no, mu, lambda, e0, ny, potential = none | uniform, potential_density
    [initial]     d (required unless file), modes = "k:amp:phase; ..." (k may be "k1,k2" for m = 2),
                  noise (amplitude of a seeded random perturbation), file (profile CSV)
    [output]      directory, trace, profiles, snapshot_stride, plot_script
    [run]         seed
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anisotropy import Anisotropy
from .elasticity import LameParams
from .energy import POTENTIALS, FilmElasticity, FlowParams, uniform_potential
from .errors import FilmError, InvalidInputError
from .geometry import Profile, max_slope, read_profile_csv

SCHEMA = {
    "geometry": {"m", "b", "n", "backend"},
    "flow": {"epsilon", "p", "tau", "Lambda0", "t_end", "quasi_newton", "gtol", "elastic_refresh"},
    "anisotropy": {"family", "params"},
    "elasticity": {"enabled", "mu", "lambda", "e0", "ny", "potential", "potential_density"},
    "initial": {"d", "modes", "noise", "file"},
    "output": {"directory", "trace", "profiles", "snapshot_stride", "plot_script"},
    "run": {"seed"},
}
REQUIRED = {("geometry", "b"), ("geometry", "n"), ("flow", "epsilon"), ("flow", "t_end")}


class ConfigError(InvalidInputError):
    """Invalid configuration; ``field`` names the offending section.key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"[{field}] {message}")
        self.field = field


@dataclass
class RunConfig:
    m: int
    b: float
    n: int
    flow: FlowParams
    t_end: float
    psi: Anisotropy
    backend: str = "spectral"
    lame: LameParams | None = None
    ny: int = 16
    potential: str = "none"
    potential_density: float = 0.0
    d: float | None = None
    modes: tuple = ()
    noise: float = 0.0
    initial_file: str | None = None
    output_dir: str = "."
    trace_name: str = "trace.csv"
    profiles_name: str = "profiles.csv"
    plot_name: str = "plot.gp"
    snapshot_stride: int = 1
    seed: int = 0
    step_options: dict = field(default_factory=dict)

    # -- derived objects -----------------------------------------------------------
    def initial_profile(self) -> Profile:
        if self.initial_file is not None:
            prof = read_profile_csv(self.initial_file, backend=self.backend)
            if (prof.m, prof.n) != (self.m, self.n) or not math.isclose(prof.b, self.b):
                raise ConfigError("initial.file", "profile file grid does not match [geometry]")
            return prof
        base = Profile.flat(self.d, self.n, self.b, self.m, self.backend)
        nodes = base.nodes()
        grids = nodes if isinstance(nodes, tuple) else (nodes,)
        vals = base.values.copy()
        for k, amp, phase in self.modes:
            arg = sum(2.0 * np.pi * kk * g / self.b for kk, g in zip(k, grids))
            vals += amp * np.cos(arg + phase)
        if self.noise:
            from .probes import function_from_coefficients, random_coefficients

            rng = np.random.default_rng(self.seed)
            f = function_from_coefficients(random_coefficients(rng, self.n, self.m, 2.0, degree=max(1, self.n // 8)))
            vals += self.noise * f / np.max(np.abs(f))
        vals += self.d - np.mean(vals)  # exact prescribed volume
        try:
            return base.with_values(vals)
        except FilmError as exc:
            raise ConfigError("initial", f"initial profile is invalid: {exc}") from exc

    def elastic_model(self):
        if self.lame is not None:
            return FilmElasticity(self.lame, ny=self.ny)
        if self.potential == "uniform":
            return uniform_potential(self.potential_density)
        return None

    @property
    def trace_path(self) -> Path:
        return Path(self.output_dir) / self.trace_name

    @property
    def profiles_path(self) -> Path:
        return Path(self.output_dir) / self.profiles_name

    @property
    def plot_path(self) -> Path:
        return Path(self.output_dir) / self.plot_name


def _get(cp, section, key, conv, default=None):
    if not cp.has_option(section, key):
        if (section, key) in REQUIRED:
            raise ConfigError(f"{section}.{key}", "is required")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r}: {exc}") from exc


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected yes/no")


def _floats(raw: str) -> list:
    return [float(t) for t in raw.replace(";", ",").split(",") if t.strip()]


def _parse_modes(raw: str, m: int) -> tuple:
    out = []
    for item in raw.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"mode {item!r} is not k:amplitude[:phase]")
        k = tuple(int(t) for t in parts[0].split(","))
        if len(k) != m:
            raise ValueError(f"mode {item!r} needs {m} wave numbers")
        if all(kk == 0 for kk in k):
            raise ValueError("the zero mode would change the volume")
        out.append((k, float(parts[1]), float(parts[2]) if len(parts) == 3 else 0.0))
    return tuple(out)


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (Lambda0)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from exc
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section; valid sections: {', '.join(SCHEMA)}")
        for key in cp.options(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", f"unknown key; valid keys: {', '.join(sorted(SCHEMA[section]))}")
    for section, key in REQUIRED:
        if not cp.has_section(section):
            raise ConfigError(f"{section}.{key}", "is required")

    m = _get(cp, "geometry", "m", int, 1)
    if m not in (1, 2):
        raise ConfigError("geometry.m", "must be 1 or 2")
    b = _get(cp, "geometry", "b", float)
    n = _get(cp, "geometry", "n", int)
    backend = _get(cp, "geometry", "backend", str, "spectral")
    if not b > 0:
        raise ConfigError("geometry.b", "must be positive")
    if n < 4 or n & (n - 1):
        raise ConfigError("geometry.n", "must be a power of two >= 4")
    if backend not in ("spectral", "fd"):
        raise ConfigError("geometry.backend", "must be spectral or fd")

    eps = _get(cp, "flow", "epsilon", float)
    if not eps > 0:
        raise ConfigError("flow.epsilon", "must be positive")
    p = _get(cp, "flow", "p", float, 2.0 if m == 1 else 3.0)
    if not p >= 2:
        raise ConfigError("flow.p", "must be >= 2")
    tau = _get(cp, "flow", "tau", float)
    if tau is not None and not tau > 0:
        raise ConfigError("flow.tau", "must be positive")
    Lambda0 = _get(cp, "flow", "Lambda0", float)
    t_end = _get(cp, "flow", "t_end", float)
    if not t_end >= 0:
        raise ConfigError("flow.t_end", "must be non-negative")
    step_options = {}
    if cp.has_option("flow", "quasi_newton"):
        step_options["quasi_newton"] = _get(cp, "flow", "quasi_newton", _bool)
    if cp.has_option("flow", "gtol"):
        step_options["gtol"] = _get(cp, "flow", "gtol", float)
    if cp.has_option("flow", "elastic_refresh"):
        step_options["elastic_refresh"] = _get(cp, "flow", "elastic_refresh", int)
    try:
        flow = FlowParams(epsilon=eps, p=p, tau=tau, Lambda0=Lambda0)
    except FilmError as exc:
        raise ConfigError("flow", str(exc)) from exc

    family = _get(cp, "anisotropy", "family", str, "isotropic")
    aparams = _get(cp, "anisotropy", "params", _floats, [])
    try:
        psi = Anisotropy.from_spec(family, aparams, m + 1)
    except FilmError as exc:
        raise ConfigError("anisotropy", str(exc)) from exc

    enabled = _get(cp, "elasticity", "enabled", _bool, False)
    potential = _get(cp, "elasticity", "potential", str, "none")
    if potential not in POTENTIALS:
        raise ConfigError("elasticity.potential", f"must be one of {', '.join(POTENTIALS)}")
    if enabled and potential != "none":
        raise ConfigError("elasticity.potential", "cannot combine a surface potential with elasticity")
    lame = None
    if enabled:
        if m != 1:
            raise ConfigError("elasticity.enabled", "elasticity is only available for m = 1")
        try:
            lame = LameParams(
                _get(cp, "elasticity", "mu", float, 1.0),
                _get(cp, "elasticity", "lambda", float, 1.0),
                _get(cp, "elasticity", "e0", float, 0.0),
            )
        except FilmError as exc:
            raise ConfigError("elasticity", str(exc)) from exc
    ny = _get(cp, "elasticity", "ny", int, 16)

    initial_file = _get(cp, "initial", "file", str)
    d = _get(cp, "initial", "d", float)
    if initial_file is None:
        if d is None:
            raise ConfigError("initial.d", "is required unless initial.file is given")
        if not d > 0:
            raise ConfigError("initial.d", "must be positive")
    else:
        initial_file = str(Path(base_dir) / initial_file)
    modes = _get(cp, "initial", "modes", lambda r: _parse_modes(r, m), ())

    out_dir = _get(cp, "output", "directory", str, ".")
    stride = _get(cp, "output", "snapshot_stride", int, 1)
    if stride < 1:
        raise ConfigError("output.snapshot_stride", "must be >= 1")

    cfg = RunConfig(
        m=m,
        b=b,
        n=n,
        flow=flow,
        t_end=t_end,
        psi=psi,
        backend=backend,
        lame=lame,
        ny=ny,
        potential=potential,
        potential_density=_get(cp, "elasticity", "potential_density", float, 0.0),
        d=d,
        modes=modes,
        noise=_get(cp, "initial", "noise", float, 0.0),
        initial_file=initial_file,
        output_dir=str(Path(base_dir) / out_dir),
        trace_name=_get(cp, "output", "trace", str, "trace.csv"),
        profiles_name=_get(cp, "output", "profiles", str, "profiles.csv"),
        plot_name=_get(cp, "output", "plot_script", str, "plot.gp"),
        snapshot_stride=stride,
        seed=_get(cp, "run", "seed", int, 0),
        step_options=step_options,
    )
    h0 = cfg.initial_profile()
    slope = max_slope(h0)
    if flow.Lambda0 is not None and not flow.Lambda0 > slope:
        raise ConfigError(
            "flow.Lambda0",
            f"Lambda0 = {flow.Lambda0} must be strictly greater than the initial max slope {slope:.6g}",
        )
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)
