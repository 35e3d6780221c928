"""Haar wavelets on [A, B]: breakpoints, iterated integrals, collocation grid and
operational matrices H, P1, P2, plus projection onto (and reconstruction from) a
truncated Haar series.

Wavelets are numbered ``i = 1 .. 2M`` with ``M = 2**J``.  ``i = 1`` is the scaling
function (1 on [A, B)), every other ``i = m + k + 1`` with ``m = 2**j`` lives on
``[beta1, beta3)`` and flips sign at ``beta2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureError


@dataclass(frozen=True)
class HaarBasis:
    A: float = 0.0
    B: float = 1.0
    J: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.A) and np.isfinite(self.B)) or not self.B > self.A:
            raise DomainError(f"need finite A < B, got [{self.A}, {self.B}]")
        if int(self.J) != self.J or self.J < 0:
            raise DomainError(f"resolution level J must be a nonnegative integer, got {self.J}")

    @property
    def M(self) -> int:
        return 2 ** int(self.J)

    @property
    def n_wavelets(self) -> int:
        return 2 * self.M

    @property
    def dx(self) -> float:
        return (self.B - self.A) / (2 * self.M)

    @cached_property
    def breakpoints(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(beta1, beta2, beta3)`` indexed by ``i - 1``."""
        n = self.n_wavelets
        b1, b2, b3 = np.empty(n), np.empty(n), np.empty(n)
        for i in range(1, n + 1):
            w = wavelet_index(i, self)
            b1[i - 1], b2[i - 1], b3[i - 1] = w.beta1, w.beta2, w.beta3
        for b in (b1, b2, b3):
            b.flags.writeable = False
        return b1, b2, b3

    @cached_property
    def levels(self) -> np.ndarray:
        """Dilation level ``j`` of every wavelet (0 for i = 1 and i = 2)."""
        out = np.zeros(self.n_wavelets, dtype=int)
        for i in range(2, self.n_wavelets + 1):
            out[i - 1] = (i - 1).bit_length() - 1
        return out

    @property
    def norms_squared(self) -> np.ndarray:
        """``int_A^B h_i^2 dx = 2**-j (B - A)``."""
        return (self.B - self.A) * 2.0 ** (-self.levels)


@dataclass(frozen=True)
class WaveletIndex:
    i: int
    j: int
    k: int
    m: int
    zeta: float
    beta1: float
    beta2: float
    beta3: float


@dataclass(frozen=True)
class CollocationGrid:
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class OperatorMatrices:
    H: np.ndarray
    P1: np.ndarray
    P2: np.ndarray


@dataclass(frozen=True)
class HaarCoefficients:
    coeffs: np.ndarray
    basis: HaarBasis

    def __post_init__(self):
        if len(self.coeffs) != self.basis.n_wavelets:
            raise DomainError(
                f"expected {self.basis.n_wavelets} coefficients, got {len(self.coeffs)}"
            )


def wavelet_index(i: int, basis: HaarBasis) -> WaveletIndex:
    """Decompose wavelet number ``i`` into level, translation and breakpoints.

    For ``i = 1`` a sentinel is returned with ``beta1 = A`` and
    ``beta2 = beta3 = B`` so the generic piecewise formulas give the scaling
    function on [A, B).
    """
    n = basis.n_wavelets
    if int(i) != i or not 1 <= i <= n:
        raise DomainError(f"wavelet number must be in 1..{n}, got {i}")
    i = int(i)
    A, B, M, dx = basis.A, basis.B, basis.M, basis.dx
    if i == 1:
        return WaveletIndex(1, 0, 0, 1, float(M), A, B, B)
    j = (i - 1).bit_length() - 1
    m = 2**j
    k = i - m - 1
    zeta = M / m
    return WaveletIndex(
        i, j, k, m, zeta,
        A + 2 * k * zeta * dx,
        A + (2 * k + 1) * zeta * dx,
        A + 2 * (k + 1) * zeta * dx,
    )


def _check_x(x, basis: HaarBasis) -> np.ndarray:
    xa = np.asarray(x, dtype=float)
    if np.any(xa < basis.A) or np.any(xa > basis.B) or np.any(~np.isfinite(xa)):
        raise DomainError(f"x outside [{basis.A}, {basis.B}]")
    return xa


def _scalar_or_array(out: np.ndarray, x):
    return float(out) if np.ndim(x) == 0 else out


def eval_haar(i: int, x, basis: HaarBasis):
    """``h_i(x)``; the scaling function evaluates to 1 on the closed interval."""
    w = wavelet_index(i, basis)
    xa = _check_x(x, basis)
    if w.i == 1:
        return _scalar_or_array(np.ones_like(xa), x)
    out = np.where((xa >= w.beta1) & (xa < w.beta2), 1.0, 0.0)
    out -= np.where((xa >= w.beta2) & (xa < w.beta3), 1.0, 0.0)
    return _scalar_or_array(out, x)


def _ramp(x: np.ndarray, b, alpha: int) -> np.ndarray:
    d = x - b
    return np.where(d > 0, np.abs(d) ** alpha, 0.0)


def eval_integral(alpha: int, i: int, x, basis: HaarBasis):
    """``alpha``-fold integral of ``h_i`` from A, in closed form."""
    if int(alpha) != alpha or alpha < 0:
        raise DomainError(f"integration order must be a nonnegative integer, got {alpha}")
    if alpha == 0:
        return eval_haar(i, x, basis)
    alpha = int(alpha)
    w = wavelet_index(i, basis)
    xa = _check_x(x, basis)
    if w.i == 1:
        out = (xa - basis.A) ** alpha / math.factorial(alpha)
        return _scalar_or_array(out, x)
    out = (
        _ramp(xa, w.beta1, alpha) - 2.0 * _ramp(xa, w.beta2, alpha) + _ramp(xa, w.beta3, alpha)
    ) / math.factorial(alpha)
    return _scalar_or_array(out, x)


def integral_table(alpha: int, x, basis: HaarBasis) -> np.ndarray:
    """All ``p_{alpha,i}(x)`` at once, shape ``(2M, len(x))`` (row ``i - 1``)."""
    xa = np.atleast_1d(_check_x(x, basis))
    b1, b2, b3 = (b[:, None] for b in basis.breakpoints)
    X = xa[None, :]
    if alpha == 0:
        out = np.where((X >= b1) & (X < b2), 1.0, 0.0) - np.where((X >= b2) & (X < b3), 1.0, 0.0)
        out[0] = 1.0
        return out
    if int(alpha) != alpha or alpha < 0:
        raise DomainError(f"integration order must be a nonnegative integer, got {alpha}")
    fact = math.factorial(int(alpha))
    out = (_ramp(X, b1, alpha) - 2.0 * _ramp(X, b2, alpha) + _ramp(X, b3, alpha)) / fact
    out[0] = (xa - basis.A) ** alpha / fact
    return out


def collocation_grid(basis: HaarBasis) -> CollocationGrid:
    k = np.arange(basis.n_wavelets + 1)
    x = basis.A + k * basis.dx
    x[-1] = basis.B
    y = 0.5 * (x[:-1] + x[1:])
    return CollocationGrid(x=x, y=y)


def assemble_matrices(basis: HaarBasis) -> OperatorMatrices:
    """``H(i,k) = h_i(y_k)``, ``P1(i,k) = p_{1,i}(y_k)``, ``P2(i,k) = p_{2,i}(y_k)``."""
    y = collocation_grid(basis).y
    H = integral_table(0, y, basis)
    P1 = integral_table(1, y, basis)
    P2 = integral_table(2, y, basis)
    return OperatorMatrices(H=H, P1=P1, P2=P2)


def project(f: Callable[[float], float], basis: HaarBasis, tol: float = 1e-12) -> HaarCoefficients:
    """Haar series coefficients ``a_i = int f h_i / int h_i^2``.

    Every ``h_i`` is constant on the 2M fine cells of the grid, so the integrals
    are assembled exactly from per-cell adaptive quadratures.
    """
    grid = collocation_grid(basis)
    n = basis.n_wavelets
    cell = np.empty(n)
    for k in range(n):
        lo, hi = grid.x[k], grid.x[k + 1]
        out = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=200, full_output=1)
        val, err = out[0], out[1]
        if len(out) > 3:
            # quadpack flagged the integral (ier > 0); out[3] explains why
            raise QuadratureError(
                f"quadrature on [{lo}, {hi}] did not converge (error estimate {err:.3e}): "
                f"{out[3].splitlines()[0]}", achieved=err,
            )
        scale = max(abs(val), hi - lo)
        if err > 1e3 * tol * scale:
            raise QuadratureError(
                f"quadrature on [{lo}, {hi}] reached only {err:.3e}", achieved=err
            )
        cell[k] = val
    H = integral_table(0, grid.y, basis)
    coeffs = (H @ cell) / basis.norms_squared
    return HaarCoefficients(coeffs=coeffs, basis=basis)


def reconstruct(c: HaarCoefficients, x):
    table = integral_table(0, np.atleast_1d(x), c.basis)
    out = c.coeffs @ table
    return _scalar_or_array(out.reshape(np.shape(x)), x)
