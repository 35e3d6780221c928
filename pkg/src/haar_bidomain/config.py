"""Run configuration: a line-oriented ``key = value`` format with ``[problem]``,
``[numerics]`` and ``[outputs]`` sections, plus construction of the problem and
stepping objects it describes.

Example::

    [problem]
    dim = 1
    T = 0.5

    [numerics]
    J = 5
    dt = 1e-3

Lists are comma-separated.  ``#`` starts a comment.  Booleans are
``true``/``false``.
"""
from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, field, fields
from typing import Any, Callable

from .bidomain_model import (
    DEFAULT_D,
    EXAMPLE3_DIAGONAL,
    BidomainProblem,
    ConductivityField,
    ConstantField,
    CosineField,
    IonicModel,
    PolynomialField,
    box_stimulus,
    constant_stimulus,
    unit_domain,
    zero_stimulus,
)
from .errors import ConfigError
from .harness import DEFAULT_PROBES_1D
from .krylov import GmresConfig
from .stepper import ANCHORS, PRECONDITIONERS, SteppingConfig

MODES = ("simulate", "error-table", "grid-validation", "temporal-order", "coeff-decay")
CONDUCTIVITY_PRESETS = ("constant", "example3-conductivity", "degenerate-quadratic")
IONIC_PRESETS = ("fhn-cubic",)
STIMULUS_PRESETS = ("zero", "constant", "box")
INITIAL_PRESETS = ("constant", "cosine")
DECAY_FUNCTIONS = ("abs-diff", "sum", "constant")
J_LIMITS = {1: 7, 2: 5, 3: 3}

_REQUIRED = object()


# --------------------------------------------------------------------------- value kinds


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t == "true":
        return True
    if t == "false":
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _parse_float(s: str) -> float:
    x = float(s)
    if not math.isfinite(x):
        raise ValueError(f"expected a finite number, got {s!r}")
    return x


def _parse_int(s: str) -> int:
    t = s.strip()
    try:
        return int(t)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None


def _list_of(parse):
    def p(s: str):
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("expected a non-empty list")
        return tuple(parse(x) for x in items)
    return p


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


KINDS: dict[str, Callable[[str], Any]] = {
    "float": _parse_float,
    "int": _parse_int,
    "bool": _parse_bool,
    "str": str.strip,
    "floats": _list_of(_parse_float),
    "ints": _list_of(_parse_int),
}


def _opt(default, kind: str, check: Callable[[Any], str | None] | None = None):
    kw = {"default": default} if default is not _REQUIRED else {}
    return field(metadata={"kind": kind, "check": check}, **kw)


def _positive(x):
    return None if x > 0 else "must be positive"


def _nonneg(x):
    return None if x >= 0 else "must be >= 0"


def _one_of(options):
    return lambda x: None if x in options else f"must be one of {', '.join(options)}"


def _all_nonneg(xs):
    return None if all(x >= 0 for x in xs) else "entries must be >= 0"


def _all_positive(xs):
    return None if all(x > 0 for x in xs) else "entries must be positive"


# --------------------------------------------------------------------------- sections


@dataclass(frozen=True)
class ProblemSpec:
    dim: int = _opt(_REQUIRED, "int", lambda d: None if d in (1, 2, 3) else "must be 1, 2 or 3")
    T: float = _opt(0.5, "float", _nonneg)
    C_m: float = _opt(1.0, "float", _positive)
    conductivity: str = _opt("constant", "str", _one_of(CONDUCTIVITY_PRESETS))
    D_i: float = _opt(DEFAULT_D, "float", _nonneg)
    D_e: float = _opt(DEFAULT_D, "float", _nonneg)
    d11: float = _opt(EXAMPLE3_DIAGONAL[0], "float", _nonneg)
    d22: float = _opt(EXAMPLE3_DIAGONAL[1], "float", _nonneg)
    d33: float = _opt(EXAMPLE3_DIAGONAL[2], "float", _nonneg)
    ionic: str = _opt("fhn-cubic", "str", _one_of(IONIC_PRESETS))
    a: float = _opt(0.1, "float")
    k_w: float = _opt(1.0, "float")
    c1: float = _opt(1.0, "float")
    c2: float = _opt(2.0, "float")
    stimulus: str = _opt("zero", "str", _one_of(STIMULUS_PRESETS))
    I1: float = _opt(0.0, "float")
    I2: float = _opt(0.0, "float")
    box_amplitude: float = _opt(1.0, "float")
    box_lo: tuple = _opt((0.0,), "floats")
    box_hi: tuple = _opt((0.1,), "floats")
    box_t_on: float = _opt(0.0, "float")
    box_t_off: float = _opt(0.01, "float")
    box_target: str = _opt("intra", "str", _one_of(("intra", "extra")))
    v0: str = _opt("constant", "str", _one_of(INITIAL_PRESETS))
    v0_value: float = _opt(0.2, "float")
    v0_amplitude: float = _opt(0.1, "float")
    v0_wavenumbers: tuple = _opt((1,), "ints", _all_nonneg)
    w0: float = _opt(0.2, "float")


@dataclass(frozen=True)
class NumericsSpec:
    J: tuple = _opt(_REQUIRED, "ints", _all_nonneg)
    dt: float = _opt(_REQUIRED, "float", _positive)
    gmres_tol: float = _opt(1e-10, "float", _positive)
    gmres_restart: int = _opt(50, "int", _positive)
    gmres_max_iters: int = _opt(500, "int", _positive)
    anchor: str = _opt("point", "str", _one_of(ANCHORS))
    anchor_index: int = _opt(0, "int", _nonneg)
    preconditioner: str = _opt("fast-diag", "str", _one_of(PRECONDITIONERS))
    warm_start: bool = _opt(True, "bool")
    allow_large: bool = _opt(False, "bool")


@dataclass(frozen=True)
class OutputSpec:
    mode: str = _opt("simulate", "str", _one_of(MODES))
    snapshot_every: int = _opt(0, "int", _nonneg)
    probes: tuple = _opt(DEFAULT_PROBES_1D, "floats")
    probe_layout: str = _opt("diagonal", "str", _one_of(("diagonal", "points")))
    dts: tuple = _opt((1e-2, 1e-3, 1e-4), "floats", _all_positive)
    dt_ref: float = _opt(1e-5, "float", _positive)
    J_ref: int = _opt(-1, "int")
    Js: tuple = _opt((2, 3, 4, 5), "ints", _all_nonneg)
    coeff_function: str = _opt("abs-diff", "str", _one_of(DECAY_FUNCTIONS))
    coeff_J_max: int = _opt(6, "int", lambda j: None if 2 <= j <= 10 else "must be in 2..10")
    out_dir: str = _opt("", "str")


SECTIONS = {"problem": ProblemSpec, "numerics": NumericsSpec, "outputs": OutputSpec}


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    numerics: NumericsSpec
    outputs: OutputSpec = field(default_factory=OutputSpec)

    @property
    def mode(self) -> str:
        return self.outputs.mode

    def probe_points(self) -> list[tuple[float, ...]]:
        """Probe coordinates: ``diagonal`` repeats each value on every axis,
        ``points`` groups consecutive values into points."""
        d, pr = self.problem.dim, self.outputs.probes
        if self.outputs.probe_layout == "diagonal":
            return [(x,) * d for x in pr]
        return [tuple(pr[k:k + d]) for k in range(0, len(pr), d)]

    def levels(self) -> tuple[int, ...]:
        J = self.numerics.J
        return J * self.problem.dim if len(J) == 1 else J


# --------------------------------------------------------------------------- parse / emit


def parse_config(text: str) -> RunConfig:
    """Parse and validate; every error names the offending line and key."""
    raw: dict[str, dict[str, tuple[int, str]]] = {name: {} for name in SECTIONS}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", line=lineno)
            section = s[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", line=lineno)
        key, value = (p.strip() for p in s.split("=", 1))
        if section is None:
            raise ConfigError("key outside of any section", line=lineno, key=key)
        known = {f.name for f in fields(SECTIONS[section])}
        if key not in known:
            raise ConfigError(f"unknown key in [{section}]", line=lineno, key=key)
        if key in raw[section]:
            raise ConfigError("duplicate key", line=lineno, key=key)
        raw[section][key] = (lineno, value)

    built = {}
    for name, cls in SECTIONS.items():
        kwargs = {}
        for f in fields(cls):
            if f.name in raw[name]:
                lineno, value = raw[name][f.name]
                try:
                    v = KINDS[f.metadata["kind"]](value)
                except ValueError as exc:
                    raise ConfigError(str(exc), line=lineno, key=f.name) from None
                check = f.metadata["check"]
                msg = check(v) if check else None
                if msg:
                    raise ConfigError(f"{msg} (got {value})", line=lineno, key=f.name)
                kwargs[f.name] = v
            elif f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"missing required key in [{name}]", key=f.name)
        built[name] = cls(**kwargs)
    cfg = RunConfig(**built)
    _cross_validate(cfg, raw)
    return cfg


def _line(raw, section, key):
    return raw.get(section, {}).get(key, (None,))[0]


def _cross_validate(cfg: RunConfig, raw=None):
    raw = raw or {}
    p, n, o = cfg.problem, cfg.numerics, cfg.outputs
    if len(n.J) not in (1, p.dim):
        raise ConfigError(f"J needs 1 or {p.dim} entries", line=_line(raw, "numerics", "J"), key="J")
    limit = J_LIMITS[p.dim]
    if not n.allow_large:
        if max(n.J) > limit:
            raise ConfigError(f"J <= {limit} in {p.dim}D (set allow_large = true to override)",
                              line=_line(raw, "numerics", "J"), key="J")
        if o.mode == "grid-validation" and max(o.Js) > limit:
            raise ConfigError(f"Js must stay <= {limit} in {p.dim}D",
                              line=_line(raw, "outputs", "Js"), key="Js")
        if o.J_ref > limit:
            raise ConfigError(f"J_ref must stay <= {limit} in {p.dim}D",
                              line=_line(raw, "outputs", "J_ref"), key="J_ref")
    if p.v0 == "cosine" and len(p.v0_wavenumbers) not in (1, p.dim):
        raise ConfigError(f"v0_wavenumbers needs 1 or {p.dim} entries",
                          line=_line(raw, "problem", "v0_wavenumbers"), key="v0_wavenumbers")
    if p.stimulus == "box" and (len(p.box_lo) != p.dim or len(p.box_hi) != p.dim):
        raise ConfigError(f"box_lo and box_hi need {p.dim} entries",
                          line=_line(raw, "problem", "box_lo"), key="box_lo")
    if o.probe_layout == "points" and len(o.probes) % p.dim:
        raise ConfigError(f"probes must hold a multiple of {p.dim} coordinates",
                          line=_line(raw, "outputs", "probes"), key="probes")
    if any(not 0 <= x <= 1 for x in o.probes):
        raise ConfigError("probes must lie in [0, 1]", line=_line(raw, "outputs", "probes"),
                          key="probes")


def emit(cfg: RunConfig) -> str:
    """Render a config that :func:`parse_config` reads back to an equal object."""
    out = []
    for name, obj in (("problem", cfg.problem), ("numerics", cfg.numerics),
                      ("outputs", cfg.outputs)):
        out.append(f"[{name}]")
        for f in fields(obj):
            out.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


# --------------------------------------------------------------------------- builders


def build_problem(spec: ProblemSpec) -> BidomainProblem:
    dim = spec.dim
    dom = unit_domain(dim)
    if spec.conductivity == "constant":
        cond = ConductivityField.isotropic(spec.D_i, spec.D_e, dom)
    elif spec.conductivity == "example3-conductivity":
        cond = ConductivityField.diagonal((spec.d11, spec.d22, spec.d33)[:dim], dom)
    else:
        # intracellular conductivity 4 D_i x(1 - x) along each axis vanishes on the faces
        intra = tuple(
            PolynomialField(tuple((0.0, 4 * spec.D_i, -4 * spec.D_i) if b == a else (1.0,)
                                  for b in range(dim)))
            for a in range(dim)
        )
        cond = ConductivityField(intra, tuple(ConstantField(spec.D_e) for _ in range(dim)), dom)
    ionic = IonicModel(a=spec.a, k_w=spec.k_w, c1=spec.c1, c2=spec.c2)
    if spec.stimulus == "zero":
        stim = zero_stimulus()
    elif spec.stimulus == "constant":
        stim = constant_stimulus(spec.I1, spec.I2)
    else:
        stim = box_stimulus(spec.box_amplitude, list(zip(spec.box_lo, spec.box_hi)),
                            spec.box_t_on, spec.box_t_off, spec.box_target)
    if spec.v0 == "constant":
        v0 = ConstantField(spec.v0_value)
    else:
        k = spec.v0_wavenumbers
        v0 = CosineField(spec.v0_value, spec.v0_amplitude, k * dim if len(k) == 1 else k, dom)
    return BidomainProblem(dom, cond, ionic=ionic, stimulus=stim, v0=v0,
                           w0=(ConstantField(spec.w0),), C_m=spec.C_m, T=spec.T)


def stepping_options(n: NumericsSpec) -> dict:
    """Keyword arguments for :class:`SteppingConfig` other than ``dt``."""
    return dict(
        gmres=GmresConfig(n.gmres_tol, n.gmres_restart, n.gmres_max_iters),
        ue_anchor=n.anchor, anchor_index=n.anchor_index,
        warm_start=n.warm_start, preconditioner=n.preconditioner,
    )


def build_stepping(cfg: RunConfig) -> SteppingConfig:
    return SteppingConfig(dt=cfg.numerics.dt, snapshot_every=cfg.outputs.snapshot_every,
                          **stepping_options(cfg.numerics))


def describe_presets() -> str:
    d = ProblemSpec.__dataclass_fields__
    dflt = lambda k: _fmt(d[k].default)
    lines = [
        "conductivity presets:",
        f"  constant               D_i={dflt('D_i')} D_e={dflt('D_e')} (isotropic, both media)",
        f"  example3-conductivity  d11={dflt('d11')} d22={dflt('d22')} d33={dflt('d33')}"
        " (diagonal, both media)",
        f"  degenerate-quadratic   D_i={dflt('D_i')} scaled by 4x(1-x) per axis, D_e={dflt('D_e')}",
        "ionic presets:",
        f"  fhn-cubic              a={dflt('a')} k_w={dflt('k_w')} c1={dflt('c1')} c2={dflt('c2')}"
        "  f = v(v-a)(1-v) - k_w w, g = c1 v - c2 w",
        "stimulus presets:",
        "  zero",
        f"  constant               I1={dflt('I1')} I2={dflt('I2')}",
        f"  box                    box_amplitude={dflt('box_amplitude')} box_lo={dflt('box_lo')}"
        f" box_hi={dflt('box_hi')} box_t_on={dflt('box_t_on')} box_t_off={dflt('box_t_off')}"
        f" box_target={dflt('box_target')}",
        "initial data:",
        f"  constant               v0_value={dflt('v0_value')} w0={dflt('w0')}",
        f"  cosine                 v0_value={dflt('v0_value')} v0_amplitude={dflt('v0_amplitude')}"
        f" v0_wavenumbers={dflt('v0_wavenumbers')}",
        "u_e anchor modes:",
        "  point                  u_e = 0 at collocation point anchor_index",
        "  zero-mean              u_e has zero collocation mean",
        "preconditioners:",
        "  fast-diag              modal inverse for mean conductivities (default)",
        "  none",
        f"resolution limits: J <= {J_LIMITS[1]} (1D), {J_LIMITS[2]} (2D), {J_LIMITS[3]} (3D)",
    ]
    return "\n".join(lines) + "\n"
