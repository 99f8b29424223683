"""Run configuration: a flat ``key = value`` text format with ``#`` comments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError
from .flows import scheme_names
from .linalg import POISSON_METHODS
from .assembly import STIFFNESS_RULES
from .quadrature import MAX_DEGREE


class ConfigParseError(ConfigurationError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; defaults are the Gaussian test problem."""

    domain: tuple[float, float, float, float] = (0.0, 5.0, 0.0, 5.0)
    nx: int = 25
    ny: int = 25
    p: int = 2
    scheme: str = "strang"
    tau: float = 5e-4
    T: float = 0.1
    adaptive: bool = False
    adaptive_tol: float = 1e-6
    expv_tol: float = 1e-12
    cg_tol: float = 1e-12
    poisson_method: str = "auto"
    stiffness_rule: str = "auto"
    initial: str = "gaussian"
    amplitude: float = 10.0
    width: float = 10.0
    center: tuple[float, float] = (2.5, 2.5)
    initial_expr: str = ""
    snapshot_times: tuple[float, ...] = (0.1,)
    # convergence studies
    schemes: tuple[str, ...] = ("lie", "strang", "ruth3", "blanes_moan4")
    tau_list: tuple[float, ...] = (4e-3, 2e-3, 1e-3, 5e-4)
    ref_scheme: str = "blanes_moan4"
    ref_tau: float = 3.125e-5
    p_list: tuple[int, ...] = (1, 2)
    h_list: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625)
    spatial_tau: float = 0.002
    spatial_scheme: str = "strang"
    order_tol: float = 0.25
    space_order_tol: float = 0.3

    def validate(self) -> "RunConfig":
        ax, bx, ay, by = self.domain
        _require(all(map(math.isfinite, self.domain)) and bx > ax and by > ay, "domain", "degenerate rectangle")
        for name in ("nx", "ny"):
            _require(getattr(self, name) >= 1, name, "must be >= 1")
        _require(1 <= self.p <= MAX_DEGREE, "p", f"must lie in [1, {MAX_DEGREE}]")
        for name in ("tau", "T", "adaptive_tol", "expv_tol", "cg_tol", "ref_tau", "spatial_tau",
                     "order_tol", "space_order_tol"):
            v = getattr(self, name)
            _require(math.isfinite(v) and v > 0, name, "must be finite and positive")
        _require(self.width > 0 and math.isfinite(self.amplitude), "width", "must be positive")
        for name in ("scheme", "ref_scheme", "spatial_scheme"):
            _require(getattr(self, name) in scheme_names(), name, f"unknown scheme {getattr(self, name)!r}")
        for s in self.schemes:
            _require(s in scheme_names(), "schemes", f"unknown scheme {s!r}")
        _require(self.poisson_method in POISSON_METHODS, "poisson_method", "unknown method")
        _require(self.stiffness_rule in STIFFNESS_RULES, "stiffness_rule", "unknown rule")
        _require(self.initial in ("gaussian", "expr"), "initial", "must be 'gaussian' or 'expr'")
        _require(self.initial != "expr" or bool(self.initial_expr), "initial_expr", "required when initial = expr")
        _require(all(t >= 0 for t in self.snapshot_times), "snapshot_times", "must be >= 0")
        _require(len(self.tau_list) >= 2 and all(t > 0 for t in self.tau_list), "tau_list", "needs >= 2 positive values")
        _require(len(self.h_list) >= 2 and all(h > 0 for h in self.h_list), "h_list", "needs >= 2 positive values")
        _require(all(1 <= q <= MAX_DEGREE for q in self.p_list), "p_list", "degrees out of range")
        return self

    def initial_function(self):
        if self.initial == "gaussian":
            a, w, (x0, y0) = self.amplitude, self.width, self.center
            return lambda x, y: a * np.exp(-w * ((x - x0) ** 2 + (y - y0) ** 2))
        code = compile(self.initial_expr, "<initial_expr>", "eval")
        namespace = {"np": np, "pi": np.pi, "exp": np.exp, "sin": np.sin, "cos": np.cos,
                     "sqrt": np.sqrt, "__builtins__": {}}
        return lambda x, y: eval(code, namespace, {"x": x, "y": y})

    def to_lines(self) -> list[str]:
        return [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]


def _require(ok: bool, name: str, why: str) -> None:
    if not ok:
        raise ConfigurationError(f"invalid {name}: {why}")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _converter(name: str):
    default = getattr(RunConfig, name, None)
    if name in ("initial_expr",):
        return str
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, str):
        return str
    # tuples: infer element type from the default
    elem = type(default[0]) if default else float
    def conv(s: str):
        items = [x.strip() for x in s.split(",") if x.strip()]
        return tuple(elem(x) for x in items)
    return conv


_FIXED_LEN = {"domain": 4, "center": 2}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; unknown keys and malformed lines are errors."""
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigParseError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r}", lineno)
        try:
            parsed = _converter(key)(value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key}: {exc}", lineno) from None
        if key in _FIXED_LEN and len(parsed) != _FIXED_LEN[key]:
            raise ConfigParseError(f"{key} needs {_FIXED_LEN[key]} values", lineno)
        values[key] = parsed
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
