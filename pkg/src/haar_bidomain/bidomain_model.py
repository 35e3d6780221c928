"""Problem definition for the degenerate bidomain system.

Convention used throughout::

    C_m v_t - div(D_i grad v) - div(D_i grad u_e) + f(v, w) = I1
    -div((D_i + D_e) grad u_e) - div(D_i grad v)          = I1 - I2
    w_t = g(v, w)

with homogeneous Neumann conditions, ``f(v, w) = v (v - a)(1 - v) - k_w w`` and
``g(v, w) = c1 v - c2 w``.  Conductivities are diagonal (one scalar field per
axis) and may vanish on parts of the domain.

Spatial fields take an ``(npts, dim)`` array of points and return ``(npts,)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

Domain = tuple[tuple[float, float], ...]


def _points(p, dim: int) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.ndim == 1 and dim == 1:
        a = a[:, None]
    elif a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {np.shape(p)}")
    return a


# --------------------------------------------------------------------------- fields


@dataclass(frozen=True)
class ConstantField:
    value: float

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.full(len(pts), float(self.value))

    def derivative(self, pts: np.ndarray, axis: int, h: float | None = None) -> np.ndarray:
        return np.zeros(len(pts))

    def second_derivative(self, pts: np.ndarray, axis: int) -> np.ndarray:
        return np.zeros(len(pts))


@dataclass(frozen=True)
class PolynomialField:
    """Separable product ``prod_a p_a(x_a)``; each ``p_a`` is given by its
    coefficients in increasing powers.  ``((0, 1, -1),)`` is ``x (1 - x)``."""

    coeffs: tuple[tuple[float, ...], ...]

    def _polys(self):
        return [np.polynomial.Polynomial(c) for c in self.coeffs]

    def _check(self, pts):
        if pts.shape[1] != len(self.coeffs):
            raise DomainError(
                f"polynomial field has {len(self.coeffs)} factors, points have dim {pts.shape[1]}"
            )

    def _product(self, pts, axis=None, order=0):
        self._check(pts)
        out = np.ones(len(pts))
        for a, p in enumerate(self._polys()):
            q = p.deriv(order) if a == axis else p
            out *= q(pts[:, a])
        return out

    def __call__(self, pts):
        return self._product(pts)

    def derivative(self, pts, axis, h=None):
        return self._product(pts, axis, 1)

    def second_derivative(self, pts, axis):
        return self._product(pts, axis, 2)


@dataclass(frozen=True)
class TabulatedField:
    """A user-supplied vectorized function with derivatives from centered
    differences.

    ``step`` is the difference spacing; callers that know the collocation
    spacing pass it as ``h``.  Near the boundary the stencil shrinks so that it
    never leaves ``domain``; at the boundary itself a one-sided second-order
    stencil is used.
    """

    func: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    step: float = 1e-4

    def __call__(self, pts):
        return np.asarray(self.func(pts), dtype=float).reshape(len(pts))

    def derivative(self, pts, axis, h=None):
        h = float(h or self.step)
        lo, hi = self.domain[axis]
        x = pts[:, axis]
        hl = np.minimum(h, x - lo)
        hr = np.minimum(h, hi - x)
        hc = np.minimum(hl, hr)
        out = np.empty(len(pts))
        inner = hc > 0
        if np.any(inner):
            e = np.zeros_like(pts[inner])
            e[:, axis] = hc[inner]
            out[inner] = (self(pts[inner] + e) - self(pts[inner] - e)) / (2 * hc[inner])
        edge = ~inner
        if np.any(edge):
            sgn = np.where(x[edge] - lo <= 0, 1.0, -1.0)
            e = np.zeros_like(pts[edge])
            e[:, axis] = sgn * h
            f0, f1, f2 = self(pts[edge]), self(pts[edge] + e), self(pts[edge] + 2 * e)
            out[edge] = sgn * (-3 * f0 + 4 * f1 - f2) / (2 * h)
        return out

    def second_derivative(self, pts, axis):
        h = float(self.step)
        lo, hi = self.domain[axis]
        x = np.clip(pts[:, axis], lo + h, hi - h)
        q = pts.copy()
        q[:, axis] = x
        e = np.zeros_like(q)
        e[:, axis] = h
        return (self(q + e) - 2 * self(q) + self(q - e)) / h**2


@dataclass(frozen=True)
class CosineField:
    """``mean + amplitude * prod_a cos(n_a pi (x_a - A_a) / (B_a - A_a))``.

    Integer wavenumbers give zero normal derivative on every face, so the
    field is compatible with homogeneous Neumann data.
    """

    mean: float
    amplitude: float
    wavenumbers: tuple[int, ...]
    domain: Domain

    def _phases(self, pts):
        return [
            n * math.pi / (b - a) for n, (a, b) in zip(self.wavenumbers, self.domain)
        ], [pts[:, ax] - self.domain[ax][0] for ax in range(pts.shape[1])]

    def _terms(self, pts, axis=None, order=0):
        ks, xs = self._phases(pts)
        out = np.full(len(pts), float(self.amplitude))
        for a, (k, x) in enumerate(zip(ks, xs)):
            if a != axis:
                out *= np.cos(k * x)
            elif order == 1:
                out *= -k * np.sin(k * x)
            else:
                out *= -k * k * np.cos(k * x)
        return out

    def __call__(self, pts):
        return self.mean + self._terms(pts)

    def derivative(self, pts, axis, h=None):
        return self._terms(pts, axis, 1)

    def second_derivative(self, pts, axis):
        return self._terms(pts, axis, 2)


Field = ConstantField | PolynomialField | TabulatedField | CosineField


# --------------------------------------------------------------------------- conductivity


@dataclass(frozen=True)
class ConductivityField:
    """Per-axis intracellular and extracellular conductivities on ``domain``."""

    intra: tuple[Field, ...]
    extra: tuple[Field, ...]
    domain: Domain

    def __post_init__(self):
        dim = len(self.domain)
        if dim not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {dim}")
        if len(self.intra) != dim or len(self.extra) != dim:
            raise DomainError("need one intra and one extra conductivity per axis")

    @property
    def dim(self) -> int:
        return len(self.domain)

    @classmethod
    def isotropic(cls, D_i: float, D_e: float, domain: Domain) -> "ConductivityField":
        d = len(domain)
        return cls(tuple(ConstantField(D_i) for _ in range(d)),
                   tuple(ConstantField(D_e) for _ in range(d)), tuple(domain))

    @classmethod
    def diagonal(cls, diag: Sequence[float], domain: Domain) -> "ConductivityField":
        """Same diagonal tensor for both media."""
        fields = tuple(ConstantField(d) for d in diag)
        return cls(fields, fields, tuple(domain))

    def fields(self, which: str) -> tuple[Field, ...]:
        if which == "intra":
            return self.intra
        if which == "extra":
            return self.extra
        raise DomainError(f"which must be 'intra' or 'extra', got {which!r}")


def _check_in_domain(pts: np.ndarray, domain: Domain):
    for a, (lo, hi) in enumerate(domain):
        x = pts[:, a]
        if np.any(~np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
            raise DomainError(f"point outside the domain along axis {a}")


def conductivity_at(c: ConductivityField, axis: int, which: str, point,
                    h: float | None = None):
    """Axis conductivity and its derivative along that axis.

    A single point returns a pair of floats; an ``(npts, dim)`` array returns
    a pair of arrays.
    """
    if not 0 <= axis < c.dim:
        raise DomainError(f"axis must be in 0..{c.dim - 1}, got {axis}")
    single = np.ndim(point) == 0 or (np.ndim(point) == 1 and c.dim > 1)
    pts = _points(np.atleast_1d(point), c.dim)
    _check_in_domain(pts, c.domain)
    fld = c.fields(which)[axis]
    val, der = fld(pts), fld.derivative(pts, axis, h)
    if single:
        return float(val[0]), float(der[0])
    return val, der


# --------------------------------------------------------------------------- kinetics


@dataclass(frozen=True)
class IonicModel:
    """Cubic excitable kinetics with ``d`` linear gating components.

    ``k_w``, ``c1`` and ``c2`` are scalars (used for every component) or
    length-``d`` tuples.
    """

    a: float = 0.1
    k_w: float | tuple[float, ...] = 1.0
    c1: float | tuple[float, ...] = 1.0
    c2: float | tuple[float, ...] = 2.0
    d: int = 1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"number of gating components must be >= 1, got {self.d}")
        for name in ("k_w", "c1", "c2"):
            v = getattr(self, name)
            if np.ndim(v) and len(v) != self.d:
                raise DomainError(f"{name} needs {self.d} entries")

    def _vec(self, name) -> np.ndarray:
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.d,))


def _stack_w(m: IonicModel, w):
    w = np.asarray(w, dtype=float)
    if m.d == 1 and (w.ndim == 0 or w.shape[0] != 1):
        return w[None, ...], True
    if w.shape[0] != m.d:
        raise DomainError(f"expected {m.d} gating components, got leading axis {w.shape[0]}")
    return w, False


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def ionic_current(m: IonicModel, v, w):
    """``f(v, w) = v (v - a)(1 - v) - sum_c k_w[c] w[c]``."""
    v = np.asarray(v, dtype=float)
    W, _ = _stack_w(m, w)
    kw = m._vec("k_w").reshape((m.d,) + (1,) * (W.ndim - 1))
    return _out(v * (v - m.a) * (1.0 - v) - np.sum(kw * W, axis=0))


def gating_rate(m: IonicModel, v, w):
    """``g_c(v, w) = c1[c] v - c2[c] w[c]``, shaped like ``w``."""
    v = np.asarray(v, dtype=float)
    W, squeezed = _stack_w(m, w)
    shp = (m.d,) + (1,) * (W.ndim - 1)
    out = m._vec("c1").reshape(shp) * v - m._vec("c2").reshape(shp) * W
    return _out(out[0] if squeezed else out)


# --------------------------------------------------------------------------- stimulus


SpaceTime = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Stimulus:
    """Applied currents ``I1(t, pts)`` (intracellular) and ``I2(t, pts)``."""

    I1: SpaceTime
    I2: SpaceTime
    name: str = "custom"
    is_zero: bool = False


def zero_stimulus() -> Stimulus:
    z = lambda t, pts: np.zeros(len(pts))
    return Stimulus(z, z, "zero", True)


def constant_stimulus(i1: float = 0.0, i2: float = 0.0) -> Stimulus:
    return Stimulus(lambda t, pts: np.full(len(pts), float(i1)),
                    lambda t, pts: np.full(len(pts), float(i2)),
                    "constant", i1 == 0 and i2 == 0)


def box_stimulus(amplitude: float, box: Sequence[tuple[float, float]],
                 t_on: float, t_off: float, target: str = "intra") -> Stimulus:
    """``amplitude`` inside the axis-aligned ``box`` for ``t_on <= t < t_off``."""
    if target not in ("intra", "extra"):
        raise DomainError(f"target must be 'intra' or 'extra', got {target!r}")
    box = tuple((float(lo), float(hi)) for lo, hi in box)

    def pulse(t, pts):
        if not t_on <= t < t_off:
            return np.zeros(len(pts))
        inside = np.ones(len(pts), dtype=bool)
        for a, (lo, hi) in enumerate(box):
            inside &= (pts[:, a] >= lo) & (pts[:, a] <= hi)
        return np.where(inside, float(amplitude), 0.0)

    zero = lambda t, pts: np.zeros(len(pts))
    if target == "intra":
        return Stimulus(pulse, zero, "box")
    return Stimulus(zero, pulse, "box")


# --------------------------------------------------------------------------- problem


@dataclass(frozen=True)
class BidomainProblem:
    domain: Domain
    conductivity: ConductivityField
    ionic: IonicModel = field(default_factory=IonicModel)
    stimulus: Stimulus = field(default_factory=zero_stimulus)
    v0: Field = ConstantField(0.2)
    w0: tuple[Field, ...] = (ConstantField(0.2),)
    C_m: float = 1.0
    T: float = 0.5

    def __post_init__(self):
        dim = len(self.domain)
        if dim not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {dim}")
        for lo, hi in self.domain:
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise DomainError(f"bad interval [{lo}, {hi}]")
        if tuple(self.conductivity.domain) != tuple(self.domain):
            raise DomainError("conductivity domain differs from problem domain")
        if not self.C_m > 0:
            raise DomainError(f"C_m must be positive, got {self.C_m}")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise DomainError(f"final time must be finite and >= 0, got {self.T}")
        if len(self.w0) != self.ionic.d:
            raise DomainError(f"need {self.ionic.d} initial gating fields, got {len(self.w0)}")
        probe = probe_grid(self.domain, 9)
        for which in ("intra", "extra"):
            for a, fld in enumerate(self.conductivity.fields(which)):
                vals = fld(probe)
                if not np.all(np.isfinite(vals)):
                    raise DomainError(f"{which} conductivity on axis {a} is not finite")
                if np.any(vals < 0):
                    raise DomainError(f"{which} conductivity on axis {a} is negative somewhere")
        for name, fld in [("v0", self.v0)] + [(f"w0[{c}]", f) for c, f in enumerate(self.w0)]:
            if not np.all(np.isfinite(fld(probe))):
                raise DomainError(f"initial field {name} is not finite")

    @property
    def dim(self) -> int:
        return len(self.domain)


def probe_grid(domain: Domain, n: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, n) for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


DEFAULT_D = 1.2e-3
EXAMPLE3_DIAGONAL = (1.2e-3, 2.5562e-4, 2.5562e-4)


def unit_domain(dim: int) -> Domain:
    return tuple((0.0, 1.0) for _ in range(dim))


def default_problem(dim: int = 1, T: float = 0.5, **overrides) -> BidomainProblem:
    """Cubic kinetics (a = 0.1, k_w = 1, g = v - 2w), constant isotropic
    conductivity 1.2e-3 in both media, no applied current, v0 = w0 = 0.2."""
    dom = unit_domain(dim)
    kw = dict(domain=dom, conductivity=ConductivityField.isotropic(DEFAULT_D, DEFAULT_D, dom), T=T)
    kw.update(overrides)
    return BidomainProblem(**kw)


def example3_problem(T: float = 0.5, **overrides) -> BidomainProblem:
    dom = unit_domain(3)
    kw = dict(domain=dom, conductivity=ConductivityField.diagonal(EXAMPLE3_DIAGONAL, dom), T=T)
    kw.update(overrides)
    return BidomainProblem(**kw)
