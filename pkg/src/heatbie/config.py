"""TOML run configuration: parsing, validation and serialization.

Every section is optional and falls back to the desk-scale defaults (unit
circle with a concentric cavity of radius 0.4, T = 0.5). Unknown keys are
rejected with their line number.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from .geometry import BoundaryCurve, GeometryError, curve_from_dict, validate_annulus


class ConfigError(ValueError):
    pass


def _circle(radius):
    return {"kind": "circle", "center": [0.0, 0.0], "radius": radius}


@dataclass
class GeometryConfig:
    outer: dict = field(default_factory=lambda: _circle(1.0))
    inner: dict = field(default_factory=lambda: _circle(0.4))


@dataclass
class GridConfig:
    T: float = 0.5
    Nt: int = 32
    Nx: int = 64


@dataclass
class DataConfig:
    f: str = "manufactured"
    G: str = "sin-perturbed"
    G_param: float = 0.1
    G_manufactured: bool = False
    beta: object = 1.0
    source: list | None = None
    C_G: float | None = None
    delta: float | None = None


@dataclass
class SolverConfig:
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    anderson: int = 0
    growth: str = "warn"


@dataclass
class OutputConfig:
    dir: str = "heatbie-out"
    formats: list = field(default_factory=lambda: ["csv", "json", "png"])


@dataclass
class ProbeConfig:
    times: list | None = None
    points: list | None = None


@dataclass
class VerifyConfig:
    seeds: int = 2
    problem: str = "ext-neumann"
    levels: list = field(default_factory=lambda: [[64, 16], [128, 32], [256, 64]])
    jump_tol: float = 5e-2
    green_tol: float = 1e-2
    manufactured_tol: float = 1e-2


@dataclass
class KernelsConfig:
    n: list = field(default_factory=lambda: [2, 3])
    t: list = field(default_factory=lambda: [0.07957747154594767, 0.1, 0.25, 0.5, 1.0])
    r: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    data: DataConfig = field(default_factory=DataConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    kernels: KernelsConfig = field(default_factory=KernelsConfig)

    def curves(self) -> tuple[BoundaryCurve, BoundaryCurve]:
        return (curve_from_dict(self.geometry.outer, "outer"),
                curve_from_dict(self.geometry.inner, "inner"))


_CURVE_KEYS = {"kind", "center", "radius", "amplitude", "wobbles"}
_FORMATS = {"csv", "json", "png"}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header itself)."""
    current = ""
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\[\]]+)\]\s*(#.*)?$", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"\s*\"?{re.escape(key)}\"?\s*=", line):
            return no
    return None


def _where(text, section, key=None):
    no = _line_of(text, section, key)
    name = f"{section}.{key}" if key else f"[{section}]"
    return f"{name} (line {no})" if no else name


def _fill(cls, raw: dict, section: str, text: str):
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {_where(text, section, key)}; allowed: {sorted(known)}")
    return cls(**raw)


def _require(cond, text, section, key, message):
    if not cond:
        raise ConfigError(f"{_where(text, section, key)}: {message}")


def _number(value, text, section, key, integer=False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    _require(ok and not isinstance(value, bool), text, section, key,
             f"expected {'an integer' if integer else 'a number'}, got {value!r}")


def validate(cfg: RunConfig, text: str = "") -> RunConfig:
    for name in ("outer", "inner"):
        spec = getattr(cfg.geometry, name)
        section = f"geometry.{name}"
        _require(isinstance(spec, dict), text, "geometry", name, "expected a table")
        for key in spec:
            if key not in _CURVE_KEYS:
                raise ConfigError(f"unknown key {_where(text, section, key)}; allowed: {sorted(_CURVE_KEYS)}")
        _require("radius" in spec, text, section, None, "radius is required")
        try:
            curve_from_dict(spec, name)
        except (GeometryError, TypeError, KeyError) as exc:
            raise ConfigError(f"{_where(text, section)}: {exc}") from None
    try:
        validate_annulus(*cfg.curves())
    except GeometryError as exc:
        raise ConfigError(f"[geometry]: {exc}") from None
    g = cfg.grid
    _number(g.T, text, "grid", "T")
    _require(g.T > 0, text, "grid", "T", f"out of range: {g.T} (must be > 0)")
    _number(g.Nt, text, "grid", "Nt", integer=True)
    _require(g.Nt >= 1, text, "grid", "Nt", f"out of range: {g.Nt} (must be >= 1)")
    _number(g.Nx, text, "grid", "Nx", integer=True)
    _require(g.Nx >= 8, text, "grid", "Nx", f"out of range: {g.Nx} (must be >= 8)")
    s = cfg.solver
    _number(s.theta, text, "solver", "theta")
    _require(0 < s.theta <= 1, text, "solver", "theta", f"out of range: {s.theta} (must be in (0, 1])")
    _number(s.tol, text, "solver", "tol")
    _require(s.tol > 0, text, "solver", "tol", f"out of range: {s.tol} (must be > 0)")
    _number(s.max_iter, text, "solver", "max_iter", integer=True)
    _require(s.max_iter >= 0, text, "solver", "max_iter", "must be >= 0")
    _number(s.anderson, text, "solver", "anderson", integer=True)
    _require(s.anderson >= 0, text, "solver", "anderson", "must be >= 0")
    _require(s.growth in ("warn", "strict", "skip"), text, "solver", "growth",
             f"must be 'warn', 'strict' or 'skip', got {s.growth!r}")
    d = cfg.data
    _require(isinstance(d.beta, (int, float)) and not isinstance(d.beta, bool) or d.beta == "derivative",
             text, "data", "beta", f"expected a number or 'derivative', got {d.beta!r}")
    _number(d.G_param, text, "data", "G_param")
    _require(isinstance(d.G, str) and d.G.strip() != "", text, "data", "G", "expected a family name or expression")
    _require(isinstance(d.f, str) and d.f.strip() != "", text, "data", "f", "expected 'manufactured', 'zero' or an expression")
    _require(isinstance(d.G_manufactured, bool), text, "data", "G_manufactured", "expected true or false")
    if d.source is not None:
        _require(isinstance(d.source, list) and len(d.source) == 2, text, "data", "source", "expected [x, y]")
    _require((d.C_G is None) == (d.delta is None), text, "data", "delta", "declare both C_G and delta, or neither")
    out = cfg.output
    bad = set(out.formats) - _FORMATS
    _require(not bad, text, "output", "formats", f"unknown formats {sorted(bad)}; allowed {sorted(_FORMATS)}")
    p = cfg.probes
    _require((p.times is None) == (p.points is None), text, "probes", "points", "give both times and points")
    if p.times is not None:
        _require(len(p.times) == len(p.points) and all(len(x) == 2 for x in p.points), text, "probes",
                 "points", "need one [x, y] per time")
    v = cfg.verify
    _require(isinstance(v.seeds, int) and v.seeds >= 1, text, "verify", "seeds", "must be an integer >= 1")
    _require(len(v.levels) >= 3 and all(len(lv) == 2 and lv[0] >= 8 and lv[1] >= 1 for lv in v.levels),
             text, "verify", "levels", "need at least three [Nx, Nt] levels with Nx >= 8, Nt >= 1")
    k = cfg.kernels
    _require(set(k.n) <= {2, 3} and k.n, text, "kernels", "n", "dimensions must be 2 or 3")
    _require(all(r >= 0 for r in k.r), text, "kernels", "r", "radii must be >= 0")
    return cfg


_CLASSES = {"geometry": GeometryConfig, "grid": GridConfig, "data": DataConfig, "solver": SolverConfig,
            "output": OutputConfig, "probes": ProbeConfig, "verify": VerifyConfig, "kernels": KernelsConfig}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    parts = {}
    for name, value in raw.items():
        if name not in _CLASSES:
            raise ConfigError(f"unknown section {_where(text, name)}; allowed: {sorted(_CLASSES)}")
        if not isinstance(value, dict):
            raise ConfigError(f"{_where(text, name)} must be a table")
        parts[name] = _fill(_CLASSES[name], value, name, text)
    return validate(RunConfig(**parts), text)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    return obj


def serialize_config(cfg: RunConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    return tomli_w.dumps(_strip_none(asdict(cfg)))
