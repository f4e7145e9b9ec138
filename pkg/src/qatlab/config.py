"""Scenario files: a flat sectioned ``key = value`` format.

Example::

    # damped particle, Gaussian packet
    [system]
    preset = damped_particle
    gamma = 1.0

    [grid]
    x_min = -20
    x_max = 20
    n = 512

    [time]
    t_max = 2.0
    samples = 11

    [initial_state]
    kind = gaussian
    x0 = 1.0
    sigma = 1.0

    [outputs]
    list = expectations, residuals

Instead of ``preset`` the ``[system]`` section may give raw coefficients
``f``, ``omega_sq`` and ``forcing`` as one of

* ``const c``
* ``poly c0 c1 c2 ...``                  (c0 + c1 t + c2 t^2 + ...)
* ``cos A w`` / ``sin A w`` / ``exp A k`` (A cos(w t), A sin(w t), A exp(k t))
* ``piecewise t0: c0 c1 ... | t1: c0 c1 ...``  (polynomials in t - t_i, active from t_i on)

Comments start with ``#`` or ``;`` at the beginning of a line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import PRESETS, LsodeSpec, preset
from .errors import ConfigParse

OUTPUT_KINDS = ("expectations", "residuals", "algebra_table", "spectrum", "wavefunction_dump")
PROPAGATORS = ("qat_exact", "crank_nicolson")
STATE_KINDS = ("gaussian", "plane_wave", "eigen")

# section -> allowed keys
SCHEMA = {
    "scenario": {"name"},
    "system": {"preset", "gamma", "omega", "amplitude", "drive", "f", "omega_sq", "forcing"},
    "grid": {"x_min", "x_max", "n"},
    "time": {"t_max", "samples", "cn_dt", "propagator", "residual_dt"},
    "initial_state": {"kind", "x0", "p0", "sigma", "k", "n", "omega_tilde", "gamma_tilde"},
    "outputs": {"list", "algebra_n"},
    "units": {"m", "hbar"},
    "spectrum": {"omega_tilde", "gamma_tilde", "n_max"},
    "checks": {"norm_tol", "constancy_tol", "residual_tol", "algebra_tol", "spectrum_tol"},
}
REQUIRED = {"system": (), "grid": ("x_min", "x_max", "n"), "time": ("t_max",)}


@dataclass(frozen=True)
class Entry:
    value: str
    line: int
    column: int        # column of the value


@dataclass
class RawConfig:
    path: str
    sections: dict = field(default_factory=dict)     # section -> key -> Entry
    headers: dict = field(default_factory=dict)      # section -> line

    def error(self, message, section=None, key=None):
        if section is not None and key is not None and key in self.sections.get(section, {}):
            e = self.sections[section][key]
            return ConfigParse(message, e.line, e.column, self.path)
        if section is not None and section in self.headers:
            return ConfigParse(message, self.headers[section], 1, self.path)
        return ConfigParse(message, None, None, self.path)


def parse_text(text: str, path: str = "<config>") -> RawConfig:
    """Tokenize into sections; reports the line and column of the first problem."""
    raw = RawConfig(path)
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        indent = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            close = stripped.find("]")
            if close < 0:
                raise ConfigParse("unterminated section header", lineno, indent + len(stripped) + 1, path)
            trailing = stripped[close + 1:].strip()
            if trailing and trailing[0] not in "#;":
                raise ConfigParse("unexpected text after section header", lineno,
                                  indent + close + 2 + stripped[close + 1:].find(trailing), path)
            name = stripped[1:close].strip()
            if name not in SCHEMA:
                raise ConfigParse(f"unknown section [{name}]", lineno, indent + 2, path)
            if name in raw.sections:
                raise ConfigParse(f"duplicate section [{name}]", lineno, indent + 1, path)
            raw.sections[name] = {}
            raw.headers[name] = lineno
            current = name
            continue
        eq = line.find("=")
        if eq < 0:
            raise ConfigParse("expected 'key = value'", lineno, indent + 1, path)
        key = line[:eq].strip()
        if not key:
            raise ConfigParse("missing key before '='", lineno, eq + 1, path)
        if current is None:
            raise ConfigParse(f"key {key!r} outside any section", lineno, indent + 1, path)
        if key not in SCHEMA[current]:
            raise ConfigParse(f"unknown key {key!r} in [{current}]", lineno, indent + 1, path)
        if key in raw.sections[current]:
            raise ConfigParse(f"duplicate key {key!r}", lineno, indent + 1, path)
        rest = line[eq + 1:]
        value = rest.strip()
        if not value:
            raise ConfigParse(f"empty value for {key!r}", lineno, eq + 2, path)
        column = eq + 2 + (len(rest) - len(rest.lstrip()))
        raw.sections[current][key] = Entry(value, lineno, column)
    return raw


# ---------------------------------------------------------------- typed values

def _number(raw: RawConfig, section: str, key: str, default=None, kind=float):
    entry = raw.sections.get(section, {}).get(key)
    if entry is None:
        if default is None:
            raise raw.error(f"missing required key {key!r} in [{section}]", section)
        return default
    try:
        val = kind(entry.value)
    except ValueError:
        what = "an integer" if kind is int else "a number"
        raise ConfigParse(f"{key} must be {what}, got {entry.value!r}", entry.line,
                          entry.column, raw.path) from None
    if kind is float and not math.isfinite(val):
        raise ConfigParse(f"{key} must be finite", entry.line, entry.column, raw.path)
    return val


def _word(raw: RawConfig, section: str, key: str, choices, default=None):
    entry = raw.sections.get(section, {}).get(key)
    if entry is None:
        if default is None:
            raise raw.error(f"missing required key {key!r} in [{section}]", section)
        return default
    if entry.value not in choices:
        raise ConfigParse(f"{key} must be one of {', '.join(choices)}; got {entry.value!r}",
                          entry.line, entry.column, raw.path)
    return entry.value


def _coefficient(entry: Entry, path: str):
    """Turn a coefficient expression into (fn, derivative fn or None)."""
    def fail(msg):
        return ConfigParse(msg, entry.line, entry.column, path)

    head, _, tail = entry.value.partition(" ")
    try:
        if head == "piecewise":
            pieces = []
            for chunk in tail.split("|"):
                start, sep, coeffs = chunk.partition(":")
                if not sep:
                    raise fail("piecewise segments look like 't0: c0 c1 ...'")
                pieces.append((float(start), [float(c) for c in coeffs.split()]))
            knots = [p[0] for p in pieces]
            if knots != sorted(knots) or not pieces:
                raise fail("piecewise knots must be increasing")
            return _piecewise(pieces)
        args = [float(a) for a in tail.split()]
    except ValueError:
        raise fail(f"bad number in coefficient {entry.value!r}") from None
    if head == "const" and len(args) == 1:
        return _piecewise([(-math.inf, args)])
    if head == "poly" and args:
        return _piecewise([(-math.inf, args)])
    if head in ("cos", "sin", "exp") and len(args) == 2:
        a, w = args
        fn = {"cos": (lambda t: a * np.cos(w * t), lambda t: -a * w * np.sin(w * t)),
              "sin": (lambda t: a * np.sin(w * t), lambda t: a * w * np.cos(w * t)),
              "exp": (lambda t: a * np.exp(w * t), lambda t: a * w * np.exp(w * t))}[head]
        return (lambda t: fn[0](np.asarray(t, dtype=float)),
                lambda t: fn[1](np.asarray(t, dtype=float)))
    raise fail(f"cannot read coefficient {entry.value!r}; use const, poly, cos, sin, exp or piecewise")


def _piecewise(pieces):
    knots = np.array([p[0] for p in pieces])
    polys = [np.polynomial.Polynomial(c) for _, c in pieces]
    derivs = [p.deriv() for p in polys]

    def pick(t, family):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 1)
        out = np.empty_like(t)
        for j, poly in enumerate(family):
            sel = idx == j
            origin = knots[j] if math.isfinite(knots[j]) else 0.0
            out[sel] = poly(t[sel] - origin)
        return out

    return (lambda t: pick(t, polys)), (lambda t: pick(t, derivs))


# ---------------------------------------------------------------- scenario

@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    path: str
    spec: LsodeSpec
    x_min: float
    x_max: float
    n: int
    t_max: float
    samples: int
    cn_dt: float
    propagator: str
    residual_dt: float
    state: dict
    outputs: tuple
    algebra_n: int
    spectrum: dict | None
    checks: dict
    raw: RawConfig = field(repr=False, compare=False, default=None)


def _build_system(raw: RawConfig, m: float, hbar: float) -> LsodeSpec:
    sec = raw.sections.get("system", {})
    has_raw = any(k in sec for k in ("f", "omega_sq", "forcing"))
    if "preset" in sec:
        if has_raw:
            raise raw.error("give either a preset or raw coefficients, not both", "system", "preset")
        name = _word(raw, "system", "preset", PRESETS)
        kwargs = {k: _number(raw, "system", k) for k in ("gamma", "omega", "amplitude", "drive") if k in sec}
        return preset(name, mass=m, hbar=hbar, **kwargs)
    if not has_raw:
        raise raw.error("[system] needs a preset or raw coefficients f / omega_sq / forcing", "system")
    for k in ("gamma", "omega", "amplitude", "drive"):
        if k in sec:
            raise raw.error(f"{k} only applies to presets", "system", k)
    zero = _piecewise([(-math.inf, [0.0])])
    f, fd = _coefficient(sec["f"], raw.path) if "f" in sec else zero
    w2, _ = _coefficient(sec["omega_sq"], raw.path) if "omega_sq" in sec else zero
    lam = _coefficient(sec["forcing"], raw.path)[0] if "forcing" in sec else None
    return LsodeSpec(f, w2, lam, m, hbar, fd, "custom", {})


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc.strerror}", path=str(path)) from None
    return parse_config(text, str(path))


def parse_config(text: str, path: str = "<config>") -> ScenarioConfig:
    raw = parse_text(text, path)
    for sec, keys in REQUIRED.items():
        if sec not in raw.sections:
            raise ConfigParse(f"missing section [{sec}]", None, None, path)
        for key in keys:
            if key not in raw.sections[sec]:
                raise raw.error(f"missing required key {key!r} in [{sec}]", sec)

    m = _number(raw, "units", "m", 1.0)
    hbar = _number(raw, "units", "hbar", 1.0)
    for key, val in (("m", m), ("hbar", hbar)):
        if val <= 0:
            raise raw.error(f"{key} must be positive", "units", key)
    spec = _build_system(raw, m, hbar)

    x_min = _number(raw, "grid", "x_min")
    x_max = _number(raw, "grid", "x_max")
    n = _number(raw, "grid", "n", kind=int)
    if n < 8 or n & (n - 1):
        raise raw.error("n must be a power of two (at least 8)", "grid", "n")
    if not x_max > x_min:
        raise raw.error("x_max must exceed x_min", "grid", "x_max")

    t_max = _number(raw, "time", "t_max")
    if t_max <= 0:
        raise raw.error("t_max must be positive", "time", "t_max")
    samples = _number(raw, "time", "samples", 11, int)
    if samples < 2:
        raise raw.error("samples must be at least 2", "time", "samples")
    cn_dt = _number(raw, "time", "cn_dt", 1e-4)
    residual_dt = _number(raw, "time", "residual_dt", 1e-3)
    for key, val in (("cn_dt", cn_dt), ("residual_dt", residual_dt)):
        if val <= 0:
            raise raw.error(f"{key} must be positive", "time", key)
    propagator = _word(raw, "time", "propagator", PROPAGATORS, "qat_exact")

    kind = _word(raw, "initial_state", "kind", STATE_KINDS, "gaussian")
    state = {"kind": kind}
    if kind == "gaussian":
        state.update(x0=_number(raw, "initial_state", "x0", 0.0),
                     p0=_number(raw, "initial_state", "p0", 0.0),
                     sigma=_number(raw, "initial_state", "sigma", 1.0))
        if state["sigma"] <= 0:
            raise raw.error("sigma must be positive", "initial_state", "sigma")
    elif kind == "plane_wave":
        state["k"] = _number(raw, "initial_state", "k")
    else:
        state["n"] = _number(raw, "initial_state", "n", kind=int)
        if state["n"] < 0:
            raise raw.error("n must be non-negative", "initial_state", "n")
        state["omega_tilde"] = _number(raw, "initial_state", "omega_tilde",
                                       spec.params.get("omega", 1.0))
        state["gamma_tilde"] = _number(raw, "initial_state", "gamma_tilde",
                                       spec.params.get("gamma", 0.0))

    outputs = ("expectations",)
    entry = raw.sections.get("outputs", {}).get("list")
    if entry is not None:
        items = [s.strip() for s in entry.value.split(",")]
        for item in items:
            if item not in OUTPUT_KINDS:
                raise ConfigParse(f"unknown output {item!r}; choose from {', '.join(OUTPUT_KINDS)}",
                                  entry.line, entry.column + entry.value.find(item), path)
        outputs = tuple(dict.fromkeys(items))
    algebra_n = _number(raw, "outputs", "algebra_n", 256, int)
    if algebra_n < 8 or algebra_n & (algebra_n - 1):
        raise raw.error("algebra_n must be a power of two (at least 8)", "outputs", "algebra_n")

    spectrum = None
    if "spectrum" in outputs:
        spectrum = {"omega_tilde": _number(raw, "spectrum", "omega_tilde", spec.params.get("omega", 1.0)),
                    "gamma_tilde": _number(raw, "spectrum", "gamma_tilde", spec.params.get("gamma", 0.0)),
                    "n_max": _number(raw, "spectrum", "n_max", 5, int)}
    elif "spectrum" in raw.sections:
        raise raw.error("[spectrum] given but 'spectrum' is not in [outputs] list", "spectrum")

    checks = {"norm_tol": _number(raw, "checks", "norm_tol", 1e-8),
              "constancy_tol": _number(raw, "checks", "constancy_tol", 1e-5),
              "residual_tol": _number(raw, "checks", "residual_tol", 1e-5),
              "algebra_tol": _number(raw, "checks", "algebra_tol", 1e-6),
              "spectrum_tol": _number(raw, "checks", "spectrum_tol", 1e-5)}

    name = raw.sections.get("scenario", {}).get("name")
    name = name.value if name else Path(path).stem
    return ScenarioConfig(name, path, spec, x_min, x_max, n, t_max, samples, cn_dt, propagator,
                          residual_dt, state, outputs, algebra_n, spectrum, checks, raw)
